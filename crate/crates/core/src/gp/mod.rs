//! Multi-output GP regression with independent Matérn 3/2 outputs, an exact
//! posterior for small datasets and a FITC inducing-point approximation for
//! large ones.

mod dataset;
mod inducing;
mod kernel;
mod likelihood;
mod points;

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use dataset::{Dataset, Normalization, META_PREFIX, TARGET_PREFIX};
pub use kernel::{matern32, matern32_r};
pub use likelihood::log_marginal_likelihood;

use crate::error::{Error, Result};
use kernel::matern32_r as kr;
use likelihood::{maximize_single, AscentSettings};
use points::Points;

/// Diagonal jitter, relative to the signal variance.
pub const JITTER: f64 = 1e-8;
/// Model file format tag.
pub const FORMAT_TAG: &str = "overtake-gp/1";
/// Variances below this (in normalized units) are an error, not round-off.
const NEGATIVE_VARIANCE_TOL: f64 = 1e-9;

/// Hyperparameters of one output dimension.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelHyper {
    pub length_scale: f64,
    pub noise_std: f64,
    pub signal_var: f64,
}

impl KernelHyper {
    pub fn new(length_scale: f64, noise_std: f64, signal_var: f64) -> Self {
        Self { length_scale, noise_std, signal_var }
    }

    /// `[ln l, ln σ, ln s²]`
    pub fn to_log(&self) -> [f64; 3] {
        [self.length_scale.ln(), self.noise_std.ln(), self.signal_var.ln()]
    }

    pub fn from_log(t: [f64; 3]) -> Self {
        Self::new(t[0].exp(), t[1].exp(), t[2].exp())
    }

    fn validate(&self) -> Result<()> {
        if [self.length_scale, self.noise_std, self.signal_var].iter().all(|v| *v > 0.0 && v.is_finite()) {
            Ok(())
        } else {
            Err(Error::Config(format!("hyperparameters must be positive: {self:?}")))
        }
    }
}

impl Default for KernelHyper {
    fn default() -> Self {
        Self::new(1.0, 0.1, 1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpHyperparams {
    pub outputs: Vec<KernelHyper>,
}

impl GpHyperparams {
    pub fn uniform(h: KernelHyper, outputs: usize) -> Self {
        Self { outputs: vec![h; outputs] }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GpMode {
    Exact,
    Inducing { count: usize },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub init: KernelHyper,
    pub mode: GpMode,
    pub seed: u64,
    /// Normalize inputs and targets per column before fitting.
    pub normalize: bool,
    pub max_iters: usize,
    pub rel_tol: f64,
    /// In inducing mode, hyperparameters are fitted on the exact evidence of
    /// a seeded random subset of at most this many rows.
    pub hyper_subset: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            init: KernelHyper::default(),
            mode: GpMode::Inducing { count: 200 },
            seed: 0,
            normalize: true,
            max_iters: 500,
            rel_tol: 1e-6,
            hyper_subset: 300,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ExactCache {
    chol: DMatrix<f64>,
    alpha: DVector<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct FitcCache {
    /// Cholesky factor of `K_uu`.
    luu: DMatrix<f64>,
    /// Cholesky factor of `I + V Λ⁻¹ Vᵀ`, `V = L_uu⁻¹ K_uf`.
    la: DMatrix<f64>,
    /// `(I + V Λ⁻¹ Vᵀ)⁻¹ V Λ⁻¹ y`
    c: DVector<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
enum Posterior {
    Exact { points: Points, caches: Vec<ExactCache> },
    Inducing { points: Points, caches: Vec<FitcCache> },
}

/// Fitted GP. Immutable; queries may run concurrently.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GpModel {
    format: String,
    hyper: GpHyperparams,
    input_norm: Normalization,
    output_norm: Normalization,
    input_names: Vec<String>,
    target_names: Vec<String>,
    posterior: Posterior,
}

impl GpModel {
    /// Optimizes hyperparameters from `config.init` and builds the caches.
    pub fn fit(data: &Dataset, config: &FitConfig) -> Result<Self> {
        if data.len() < 2 {
            return Err(Error::Config(format!("need at least 2 observations, got {}", data.len())));
        }
        config.init.validate()?;
        let (input_norm, output_norm) = norms(data, config.normalize);
        let x = input_norm.apply(data.inputs());
        let y = output_norm.apply(data.targets());
        let pts = Points::from_rows(&x);

        let hyper_rows: Vec<usize> = match config.mode {
            GpMode::Exact => (0..data.len()).collect(),
            GpMode::Inducing { .. } => {
                let mut idx: Vec<usize> = (0..data.len()).collect();
                if idx.len() > config.hyper_subset {
                    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_0f_5b5e7));
                    idx.truncate(config.hyper_subset.max(2));
                    idx.sort_unstable();
                }
                idx
            }
        };
        let sub = pts.select(&hyper_rows);
        let r = sub.cross_distances(&sub);
        let settings = AscentSettings { max_iters: config.max_iters, rel_tol: config.rel_tol };
        let outputs = (0..data.output_dim())
            .into_par_iter()
            .map(|j| {
                let yj = DVector::from_iterator(hyper_rows.len(), hyper_rows.iter().map(|&i| y[(i, j)]));
                maximize_single(&r, &yj, &config.init, settings)
            })
            .collect::<Result<Vec<_>>>()?;
        let hyper = GpHyperparams { outputs };
        log::debug!("fitted GP hyperparameters: {hyper:?}");
        Self::build(data, hyper, config.mode, config.seed, input_norm, output_norm, &pts, &y)
    }

    /// Builds the caches for fixed hyperparameters (no optimization).
    pub fn from_hyperparams(
        data: &Dataset,
        hyper: GpHyperparams,
        mode: GpMode,
        seed: u64,
        normalize: bool,
    ) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::EmptyInput);
        }
        if hyper.outputs.len() != data.output_dim() {
            return Err(Error::DimensionMismatch { expected: data.output_dim(), got: hyper.outputs.len() });
        }
        for h in &hyper.outputs {
            h.validate()?;
        }
        let (input_norm, output_norm) = norms(data, normalize);
        let x = input_norm.apply(data.inputs());
        let y = output_norm.apply(data.targets());
        let pts = Points::from_rows(&x);
        Self::build(data, hyper, mode, seed, input_norm, output_norm, &pts, &y)
    }

    #[allow(clippy::too_many_arguments)]
    fn build(
        data: &Dataset,
        hyper: GpHyperparams,
        mode: GpMode,
        seed: u64,
        input_norm: Normalization,
        output_norm: Normalization,
        pts: &Points,
        y: &DMatrix<f64>,
    ) -> Result<Self> {
        let posterior = match mode {
            GpMode::Exact => {
                let r = pts.cross_distances(pts);
                let caches = hyper
                    .outputs
                    .par_iter()
                    .enumerate()
                    .map(|(j, h)| {
                        let k = likelihood::kernel_matrix(&r, h);
                        let chol = k.cholesky().ok_or(Error::Factorization)?;
                        let alpha = chol.solve(&y.column(j).into_owned());
                        Ok(ExactCache { chol: chol.unpack(), alpha })
                    })
                    .collect::<Result<Vec<_>>>()?;
                Posterior::Exact { points: pts.clone(), caches }
            }
            GpMode::Inducing { count } => {
                if count == 0 || count > data.len() {
                    return Err(Error::Config(format!(
                        "inducing count must be in 1..={}, got {count}",
                        data.len()
                    )));
                }
                let z = inducing::select_inducing(pts, count, seed);
                let ruu = z.cross_distances(&z);
                let ruf = z.cross_distances(pts);
                let caches = hyper
                    .outputs
                    .par_iter()
                    .enumerate()
                    .map(|(j, h)| fitc_cache(&ruu, &ruf, &y.column(j).into_owned(), h))
                    .collect::<Result<Vec<_>>>()?;
                Posterior::Inducing { points: z, caches }
            }
        };
        Ok(Self {
            format: FORMAT_TAG.to_string(),
            hyper,
            input_norm,
            output_norm,
            input_names: data.input_names().to_vec(),
            target_names: data.target_names().to_vec(),
            posterior,
        })
    }

    pub fn hyperparams(&self) -> &GpHyperparams {
        &self.hyper
    }

    pub fn mode(&self) -> GpMode {
        match &self.posterior {
            Posterior::Exact { .. } => GpMode::Exact,
            Posterior::Inducing { points, .. } => GpMode::Inducing { count: points.len() },
        }
    }

    pub fn input_dim(&self) -> usize {
        self.input_norm.dim()
    }

    pub fn output_dim(&self) -> usize {
        self.hyper.outputs.len()
    }

    pub fn input_names(&self) -> &[String] {
        &self.input_names
    }

    pub fn target_names(&self) -> &[String] {
        &self.target_names
    }

    /// Number of points the posterior is conditioned on (training rows in
    /// exact mode, inducing inputs otherwise).
    pub fn support_size(&self) -> usize {
        match &self.posterior {
            Posterior::Exact { points, .. } | Posterior::Inducing { points, .. } => points.len(),
        }
    }

    /// Posterior mean and latent variance of every output at `x`, in data
    /// units.
    pub fn posterior(&self, x: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch { expected: self.input_dim(), got: x.len() });
        }
        let xn = self.input_norm.apply_row(x);
        let m = self.output_dim();
        let mut mean = Vec::with_capacity(m);
        let mut var = Vec::with_capacity(m);
        match &self.posterior {
            Posterior::Exact { points, caches } => {
                let r = points.distances_to(&xn);
                for (h, c) in self.hyper.outputs.iter().zip(caches) {
                    let k = DVector::from_iterator(r.len(), r.iter().map(|&d| kr(d, h.length_scale, h.signal_var)));
                    let mu = k.dot(&c.alpha);
                    let v = c.chol.solve_lower_triangular(&k).ok_or(Error::Factorization)?;
                    mean.push(mu);
                    var.push(h.signal_var - v.norm_squared());
                }
            }
            Posterior::Inducing { points, caches } => {
                let r = points.distances_to(&xn);
                for (h, c) in self.hyper.outputs.iter().zip(caches) {
                    let k = DVector::from_iterator(r.len(), r.iter().map(|&d| kr(d, h.length_scale, h.signal_var)));
                    let w = c.luu.solve_lower_triangular(&k).ok_or(Error::Factorization)?;
                    let v = c.la.solve_lower_triangular(&w).ok_or(Error::Factorization)?;
                    mean.push(w.dot(&c.c));
                    var.push(h.signal_var - w.norm_squared() + v.norm_squared());
                }
            }
        }
        for j in 0..m {
            let v = var[j];
            if v < -NEGATIVE_VARIANCE_TOL * self.hyper.outputs[j].signal_var.max(1.0) || !v.is_finite() {
                return Err(Error::Numerical(format!("posterior variance {v:e} for output {j}")));
            }
            let s = self.output_norm.scale[j];
            mean[j] = mean[j] * s + self.output_norm.mean[j];
            var[j] = v.max(0.0) * s * s;
        }
        Ok((mean, var))
    }

    /// Row-wise posterior for a matrix of queries.
    pub fn posterior_batch(&self, x: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let rows: Vec<Vec<f64>> = x.row_iter().map(|r| r.iter().copied().collect()).collect();
        let out = rows.par_iter().map(|r| self.posterior(r)).collect::<Result<Vec<_>>>()?;
        let m = self.output_dim();
        let mean = DMatrix::from_fn(out.len(), m, |i, j| out[i].0[j]);
        let var = DMatrix::from_fn(out.len(), m, |i, j| out[i].1[j]);
        Ok((mean, var))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let v: serde_json::Value = serde_json::from_str(text)?;
        match v.get("format").and_then(|f| f.as_str()) {
            Some(FORMAT_TAG) => Ok(serde_json::from_value(v)?),
            other => Err(Error::Format(other.unwrap_or("<missing>").to_string())),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

fn norms(data: &Dataset, normalize: bool) -> (Normalization, Normalization) {
    if normalize {
        (Normalization::from_columns(data.inputs()), Normalization::from_columns(data.targets()))
    } else {
        (Normalization::identity(data.input_dim()), Normalization::identity(data.output_dim()))
    }
}

fn fitc_cache(ruu: &DMatrix<f64>, ruf: &DMatrix<f64>, y: &DVector<f64>, h: &KernelHyper) -> Result<FitcCache> {
    let kuu = likelihood::kernel_matrix(ruu, &KernelHyper { noise_std: 0.0, ..*h });
    let luu = kuu.cholesky().ok_or(Error::Factorization)?.unpack();
    let kuf = ruf.map(|d| kr(d, h.length_scale, h.signal_var));
    let v = luu.solve_lower_triangular(&kuf).ok_or(Error::Factorization)?;
    let s2n = h.noise_std * h.noise_std;
    let kff = h.signal_var * (1.0 + JITTER);
    let lambda: Vec<f64> = v
        .column_iter()
        .map(|col| (kff - col.norm_squared()).max(0.0) + s2n)
        .collect();
    if lambda.iter().any(|l| *l <= 0.0) {
        return Err(Error::Factorization);
    }
    let mut vs = v.clone();
    for (j, mut col) in vs.column_iter_mut().enumerate() {
        col /= lambda[j].sqrt();
    }
    let a = DMatrix::identity(v.nrows(), v.nrows()) + &vs * vs.transpose();
    let chol_a = a.cholesky().ok_or(Error::Factorization)?;
    let y_scaled = DVector::from_iterator(y.len(), y.iter().zip(&lambda).map(|(yi, l)| yi / l));
    let c = chol_a.solve(&(&v * y_scaled));
    Ok(FitcCache { luu, la: chol_a.unpack(), c })
}

#[cfg(test)]
mod tests;
