//! Sampling-based GP rollout and constant-velocity extrapolation.

use nalgebra::{Matrix6, Vector6};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use super::features::{apply_difference, build_features, FeatureConfig};
use super::{PredictionResult, PredictorSource};
use crate::error::{Error, Result};
use crate::gp::GpModel;
use crate::track::{CurvilinearState, TrackModel};
use crate::vehicle::VehicleState;

/// Samples leaving `|e_y| > CORRIDOR_WIDTHS/2 · W` are redrawn once.
pub const CORRIDOR_WIDTHS: f64 = 3.0;

#[derive(Debug, Clone, Copy)]
pub struct OneStep {
    pub next: CurvilinearState,
    pub mean: [f64; 6],
    pub variance: [f64; 6],
}

fn check_model(gp: &GpModel, cfg: &FeatureConfig) -> Result<()> {
    if gp.input_dim() != cfg.dim() {
        return Err(Error::DimensionMismatch { expected: cfg.dim(), got: gp.input_dim() });
    }
    if gp.output_dim() != 6 {
        return Err(Error::DimensionMismatch { expected: 6, got: gp.output_dim() });
    }
    Ok(())
}

/// Mean one-step prediction of the TV and the posterior variance of the
/// increment.
pub fn one_step_predict(
    gp: &GpModel,
    track: &TrackModel,
    tv: &CurvilinearState,
    ev: &CurvilinearState,
    cfg: &FeatureConfig,
) -> Result<OneStep> {
    check_model(gp, cfg)?;
    let x = build_features(track, tv, ev, cfg);
    let (mu, var) = gp.posterior(&x)?;
    let mut mean = [0.0; 6];
    let mut variance = [0.0; 6];
    mean.copy_from_slice(&mu);
    variance.copy_from_slice(&var);
    Ok(OneStep { next: apply_difference(tv, &mean), mean, variance })
}

/// Monte Carlo propagation of the one-step GP over `ev_plan.len() − 1`
/// steps with `samples` paths. Path `i` draws from ChaCha stream `i` of
/// `seed`, and paths are reduced in index order, so the result does not
/// depend on the rayon pool size.
pub fn rollout_gp(
    gp: &GpModel,
    track: &TrackModel,
    tv: &CurvilinearState,
    ev_plan: &[CurvilinearState],
    cfg: &FeatureConfig,
    samples: usize,
    seed: u64,
) -> Result<PredictionResult> {
    check_model(gp, cfg)?;
    if samples < 2 {
        return Err(Error::Config("GP rollout needs at least 2 sample paths".into()));
    }
    if ev_plan.is_empty() {
        return Err(Error::EmptyInput);
    }
    let n = ev_plan.len() - 1;
    let corridor = 0.5 * CORRIDOR_WIDTHS * track.width();

    let paths: Vec<Vec<Vector6<f64>>> = (0..samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let mut path = Vec::with_capacity(n + 1);
            let mut z = *tv;
            path.push(Vector6::from(z.to_array()));
            for t in 0..n {
                let x = build_features(track, &z, &ev_plan[t], cfg);
                let (mu, var) = gp.posterior(&x)?;
                let mut accepted = None;
                for _ in 0..2 {
                    let inc: Vec<f64> = (0..6)
                        .map(|j| {
                            let xi: f64 = StandardNormal.sample(&mut rng);
                            mu[j] + var[j].sqrt() * xi
                        })
                        .collect();
                    let cand = apply_difference(&z, &inc);
                    if cand.e_y.abs() <= corridor && cand.to_array().iter().all(|v| v.is_finite()) {
                        accepted = Some(cand);
                        break;
                    }
                }
                z = accepted.ok_or(Error::SampleDiverged(t + 1))?;
                path.push(Vector6::from(z.to_array()));
            }
            Ok(path)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut nominal = Vec::with_capacity(n + 1);
    let mut covariances = Vec::with_capacity(n + 1);
    for t in 0..=n {
        // Offsets from path 0 keep identical paths exactly degenerate.
        let base = paths[0][t];
        let mut offset = Vector6::zeros();
        for p in &paths {
            offset += p[t] - base;
        }
        let mean = base + offset / samples as f64;
        let mut cov = Matrix6::zeros();
        for p in &paths {
            let d = p[t] - mean;
            cov += d * d.transpose();
        }
        cov /= (samples - 1) as f64;
        nominal.push(CurvilinearState::from_array(mean.into()));
        covariances.push(cov);
    }
    covariances[0] = Matrix6::zeros();
    let states = nominal.iter().map(|c| track.curvilinear_to_state(c)).collect();
    Ok(PredictionResult { source: PredictorSource::Gp, states, curvilinear: nominal, covariances, fallback: false })
}

/// Constant body-frame velocity extrapolation along the exact arc.
pub fn cv_states(z: &VehicleState, n: usize, ts: f64) -> Vec<VehicleState> {
    (0..=n)
        .map(|t| {
            let tau = t as f64 * ts;
            let phi0 = z.phi;
            let (s_int, c_int) = if z.omega.abs() < 1e-6 {
                (tau * phi0.cos(), tau * phi0.sin())
            } else {
                let phi = phi0 + z.omega * tau;
                ((phi.sin() - phi0.sin()) / z.omega, (phi0.cos() - phi.cos()) / z.omega)
            };
            VehicleState {
                p_x: z.p_x + z.v_x * s_int - z.v_y * c_int,
                p_y: z.p_y + z.v_x * c_int + z.v_y * s_int,
                phi: phi0 + z.omega * tau,
                ..*z
            }
        })
        .collect()
}

pub fn rollout_cv(track: &TrackModel, z: &VehicleState, s_hint: f64, n: usize, ts: f64) -> PredictionResult {
    PredictionResult::deterministic(track, PredictorSource::Cv, cv_states(z, n, ts), s_hint)
}
