//! Fixtures shared by the criterion benchmarks of `overtake-core`.

use nalgebra::DMatrix;
use overtake_core::gp::{Dataset, GpHyperparams, GpMode, GpModel, KernelHyper};
use overtake_core::predict::FeatureConfig;
use overtake_core::track::{CurvilinearState, FrenetPose};
use overtake_core::{TrackModel, VehicleState};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Smooth synthetic one-step data with the feature layout of the predictor.
pub fn synthetic_dataset(rows: usize, seed: u64) -> Dataset {
    let dim = FeatureConfig::default().dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x: DMatrix<f64> = DMatrix::from_fn(rows, dim, |_, _| rng.random_range(-1.0..1.0));
    let y = DMatrix::from_fn(rows, 6, |i, j| 0.05 * (x[(i, j)] + 0.5 * x[(i, j + 1)]).sin() + if j == 0 { 0.15 } else { 0.0 });
    Dataset::new(x, y).unwrap()
}

/// GP with fixed hyperparameters over `rows` synthetic rows.
pub fn synthetic_gp(rows: usize, mode: GpMode) -> GpModel {
    let h = GpHyperparams::uniform(KernelHyper::new(1.5, 0.01, 0.01), 6);
    GpModel::from_hyperparams(&synthetic_dataset(rows, 1), h, mode, 0, true).unwrap()
}

pub fn oval() -> TrackModel {
    TrackModel::oval(10.0, 2.0, 1.1).unwrap()
}

pub fn curvilinear(s: f64, e_y: f64, v_x: f64) -> CurvilinearState {
    CurvilinearState { s, e_y, e_phi: 0.0, v_x, v_y: 0.0, omega: 0.0 }
}

pub fn state_at(track: &TrackModel, s: f64, e_y: f64, v_x: f64) -> VehicleState {
    let (p, phi) = track.frenet_to_global(&FrenetPose { s, e_y, e_phi: 0.0 });
    VehicleState { p_x: p.x, p_y: p.y, phi, v_x, ..Default::default() }
}
