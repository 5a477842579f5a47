//! Log marginal likelihood of a zero-mean GP with Matérn 3/2 kernel and its
//! gradient in log-hyperparameter space, plus the Armijo gradient-ascent
//! optimizer.

use nalgebra::{DMatrix, DVector};

use super::kernel::{matern32_dlog_length, matern32_r};
use super::points::Points;
use super::{GpHyperparams, KernelHyper, JITTER};
use crate::error::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_3;
/// Box on every log-hyperparameter.
pub(crate) const LOG_BOUND: f64 = 12.0;

/// Kernel matrix with jitter and noise on the diagonal:
/// `s²(C + jitter·I) + σ²I`.
pub(crate) fn kernel_matrix(r: &DMatrix<f64>, h: &KernelHyper) -> DMatrix<f64> {
    let n = r.nrows();
    let mut k = r.map(|d| matern32_r(d, h.length_scale, h.signal_var));
    for i in 0..n {
        k[(i, i)] += h.signal_var * JITTER + h.noise_std * h.noise_std;
    }
    k
}

/// Log evidence of one output column and its gradient with respect to
/// `(ln l, ln σ, ln s²)`.
pub(crate) fn lml_single(r: &DMatrix<f64>, y: &DVector<f64>, h: &KernelHyper, want_grad: bool) -> Result<(f64, [f64; 3])> {
    let n = y.len();
    let k = kernel_matrix(r, h);
    let chol = k.clone().cholesky().ok_or(Error::Factorization)?;
    let alpha = chol.solve(y);
    let log_det: f64 = 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let value = -0.5 * y.dot(&alpha) - 0.5 * log_det - 0.5 * n as f64 * LN_2PI;
    if !value.is_finite() {
        return Err(Error::Factorization);
    }
    if !want_grad {
        return Ok((value, [0.0; 3]));
    }
    // ∂L/∂θ = ½ tr((ααᵀ − K⁻¹) ∂K/∂θ)
    let k_inv = chol.inverse();
    let s2n = h.noise_std * h.noise_std;
    let (mut gl, mut gs, mut tr) = (0.0, 0.0, 0.0);
    for j in 0..n {
        for i in 0..n {
            let w = alpha[i] * alpha[j] - k_inv[(i, j)];
            gl += w * matern32_dlog_length(r[(i, j)], h.length_scale, h.signal_var);
            let ks = if i == j { k[(i, j)] - s2n } else { k[(i, j)] };
            gs += w * ks;
        }
        tr += alpha[j] * alpha[j] - k_inv[(j, j)];
    }
    Ok((value, [0.5 * gl, s2n * tr, 0.5 * gs]))
}

/// Summed log evidence over output columns and per-output gradients with
/// respect to `(ln l, ln σ, ln s²)`. Inputs and targets are used as given
/// (normalize beforehand if desired); rows are observations.
pub fn log_marginal_likelihood(
    hyper: &GpHyperparams,
    inputs: &DMatrix<f64>,
    targets: &DMatrix<f64>,
) -> Result<(f64, Vec<[f64; 3]>)> {
    if inputs.nrows() != targets.nrows() {
        return Err(Error::DimensionMismatch { expected: inputs.nrows(), got: targets.nrows() });
    }
    if hyper.outputs.len() != targets.ncols() {
        return Err(Error::DimensionMismatch { expected: targets.ncols(), got: hyper.outputs.len() });
    }
    let pts = Points::from_rows(inputs);
    let r = pts.cross_distances(&pts);
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(targets.ncols());
    for (j, h) in hyper.outputs.iter().enumerate() {
        let y = targets.column(j).into_owned();
        let (v, g) = lml_single(&r, &y, h, true)?;
        total += v;
        grads.push(g);
    }
    Ok((total, grads))
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct AscentSettings {
    pub max_iters: usize,
    pub rel_tol: f64,
}

/// Projected gradient ascent with Armijo backtracking on one output column.
pub(crate) fn maximize_single(
    r: &DMatrix<f64>,
    y: &DVector<f64>,
    init: &KernelHyper,
    settings: AscentSettings,
) -> Result<KernelHyper> {
    const ARMIJO_C: f64 = 1e-4;
    const MAX_BACKTRACK: usize = 40;
    const DIVERGENCE_RUN: usize = 20;

    let mut theta = clamp(init.to_log());
    let (mut f, mut g) = lml_single(r, y, &KernelHyper::from_log(theta), true)?;
    let gnorm = norm(&g);
    let mut step = if gnorm > 0.0 { 0.5 / gnorm } else { 1.0 };
    let mut decreases = 0;

    for _ in 0..settings.max_iters {
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACK {
            let trial = clamp([theta[0] + step * g[0], theta[1] + step * g[1], theta[2] + step * g[2]]);
            let moved: f64 = (0..3).map(|i| g[i] * (trial[i] - theta[i])).sum();
            if moved <= 0.0 {
                break;
            }
            match lml_single(r, y, &KernelHyper::from_log(trial), true) {
                Ok((ft, gt)) if ft >= f + ARMIJO_C * moved => {
                    accepted = Some((trial, ft, gt));
                    break;
                }
                _ => step *= 0.5,
            }
        }
        let Some((trial, ft, gt)) = accepted else { break };
        decreases = if ft < f { decreases + 1 } else { 0 };
        if decreases >= DIVERGENCE_RUN {
            return Err(Error::OptimizationDiverged);
        }
        let change = (ft - f).abs() / f.abs().max(1.0);
        theta = trial;
        f = ft;
        g = gt;
        step *= 2.0;
        if change < settings.rel_tol {
            break;
        }
    }
    Ok(KernelHyper::from_log(theta))
}

fn clamp(t: [f64; 3]) -> [f64; 3] {
    t.map(|v| v.clamp(-LOG_BOUND, LOG_BOUND))
}

fn norm(g: &[f64; 3]) -> f64 {
    g.iter().map(|v| v * v).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_problem(n: usize, dim: usize, seed: u64) -> (DMatrix<f64>, DMatrix<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(n, dim, |_, _| rng.random_range(-2.0..2.0));
        let y = DMatrix::from_fn(n, 2, |i, j| (x[(i, 0)] * (j as f64 + 1.0)).sin() + 0.1 * rng.random_range(-1.0..1.0));
        (x, y)
    }

    #[test]
    fn gradient_matches_central_differences() {
        let (x, y) = random_problem(30, 3, 5);
        let hyper = GpHyperparams {
            outputs: vec![KernelHyper::new(0.8, 0.2, 1.3), KernelHyper::new(1.7, 0.05, 0.6)],
        };
        let (_, grads) = log_marginal_likelihood(&hyper, &x, &y).unwrap();
        let h = 1e-5;
        for (j, g) in grads.iter().enumerate() {
            for p in 0..3 {
                let eval = |delta: f64| {
                    let mut hp = hyper.clone();
                    let mut t = hp.outputs[j].to_log();
                    t[p] += delta;
                    hp.outputs[j] = KernelHyper::from_log(t);
                    log_marginal_likelihood(&hp, &x, &y).unwrap().0
                };
                let fd = (eval(h) - eval(-h)) / (2.0 * h);
                let rel = (fd - g[p]).abs() / fd.abs().max(1e-3);
                assert!(rel < 1e-4, "output {j} param {p}: fd {fd} analytic {}", g[p]);
            }
        }
    }

    #[test]
    fn large_noise_tends_to_pure_noise_likelihood() {
        let (x, y) = random_problem(20, 2, 9);
        let sigma = 1e4;
        let hyper = GpHyperparams { outputs: vec![KernelHyper::new(1.0, sigma, 1.0); 2] };
        let (v, _) = log_marginal_likelihood(&hyper, &x, &y).unwrap();
        let mut expected = 0.0;
        for j in 0..2 {
            for i in 0..20 {
                let yi: f64 = y[(i, j)];
                expected += -0.5 * yi * yi / (sigma * sigma) - sigma.ln() - 0.5 * LN_2PI;
            }
        }
        assert!((v - expected).abs() / expected.abs() < 1e-6, "{v} vs {expected}");
    }

    #[test]
    fn duplicated_data_still_converges_to_finite_hyperparameters() {
        let (x, y) = random_problem(25, 2, 3);
        let x2 = DMatrix::from_fn(50, 2, |i, j| x[(i % 25, j)]);
        let y2 = DMatrix::from_fn(50, 2, |i, j| y[(i % 25, j)]);
        let hyper = GpHyperparams { outputs: vec![KernelHyper::new(1.0, 0.1, 1.0); 2] };
        let v1 = log_marginal_likelihood(&hyper, &x, &y).unwrap().0;
        let v2 = log_marginal_likelihood(&hyper, &x2, &y2).unwrap().0;
        assert!((v1 - v2).abs() > 1e-6);
        let pts = Points::from_rows(&x2);
        let r = pts.cross_distances(&pts);
        for j in 0..2 {
            let fit = maximize_single(
                &r,
                &y2.column(j).into_owned(),
                &KernelHyper::new(1.0, 0.1, 1.0),
                AscentSettings { max_iters: 500, rel_tol: 1e-6 },
            )
            .unwrap();
            assert!(fit.to_log().iter().all(|t| t.is_finite() && t.abs() < LOG_BOUND + 1e-12));
        }
    }

    #[test]
    fn kernel_matrix_is_symmetric_positive_definite() {
        let (x, _) = random_problem(40, 4, 1);
        let pts = Points::from_rows(&x);
        let r = pts.cross_distances(&pts);
        for l in [0.01, 0.3, 1.0, 10.0, 1e3] {
            let k = kernel_matrix(&r, &KernelHyper::new(l, 1e-6, 1.0));
            assert_eq!(k, k.transpose());
            assert!(k.cholesky().is_some(), "l = {l}");
        }
    }
}
