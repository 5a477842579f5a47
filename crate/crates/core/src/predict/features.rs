//! Regression features and curvilinear state differences.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::track::{wrap_angle, CurvilinearState, TrackModel};

/// Column names of the six one-step targets, in order.
pub const TARGET_NAMES: [&str; 6] = ["ds", "de_y", "de_phi", "dv_x", "dv_y", "domega"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    /// Number of look-ahead curvature samples V.
    pub lookahead: usize,
    /// Spacing of the look-ahead samples [m].
    pub spacing: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self { lookahead: 5, spacing: 0.5 }
    }
}

impl FeatureConfig {
    pub fn dim(&self) -> usize {
        8 + self.lookahead
    }

    pub fn validate(&self) -> Result<()> {
        if self.lookahead == 0 || !(self.spacing > 0.0) {
            return Err(Error::Config(format!("invalid feature config {self:?}")));
        }
        Ok(())
    }

    pub fn input_names(&self) -> Vec<String> {
        let mut names: Vec<String> = ["ds", "de_y", "e_y_tv", "e_phi_tv", "v_x_tv", "omega_tv", "e_phi_ev", "v_x_ev"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        names.extend((1..=self.lookahead).map(|i| format!("kappa_{i}")));
        names
    }
}

/// `[Δs, Δe_y, e_y, e_φ, v_x, ω (TV), e_φ, v_x (EV), κ_1..κ_V]` with
/// `Δs = s_EV − s_TV` and `Δe_y = e_y,EV − e_y,TV`, curvatures ahead of the TV.
pub fn build_features(track: &TrackModel, tv: &CurvilinearState, ev: &CurvilinearState, cfg: &FeatureConfig) -> Vec<f64> {
    let mut f = Vec::with_capacity(cfg.dim());
    f.extend([
        track.signed_ds(ev.s, tv.s),
        ev.e_y - tv.e_y,
        tv.e_y,
        tv.e_phi,
        tv.v_x,
        tv.omega,
        ev.e_phi,
        ev.v_x,
    ]);
    f.extend(track.lookahead_curvatures(tv.s, cfg.lookahead, cfg.spacing));
    f
}

/// `C(to) − C(from)` with the progress and heading differences wrapped.
pub fn state_difference(track: &TrackModel, from: &CurvilinearState, to: &CurvilinearState) -> [f64; 6] {
    let (a, b) = (from.to_array(), to.to_array());
    let mut d = [0.0; 6];
    for i in 0..6 {
        d[i] = b[i] - a[i];
    }
    d[0] = track.signed_ds(to.s, from.s);
    d[2] = wrap_angle(d[2]);
    d
}

/// `C(z) + d`; progress is left unwrapped.
pub fn apply_difference(from: &CurvilinearState, d: &[f64]) -> CurvilinearState {
    let a = from.to_array();
    let mut out = [0.0; 6];
    for i in 0..6 {
        out[i] = a[i] + d[i];
    }
    CurvilinearState::from_array(out)
}
