//! Collision, off-track and overtake detectors.

use nalgebra::Vector2;

use crate::vehicle::{VehicleParams, VehicleState};

fn corners(z: &VehicleState, p: &VehicleParams) -> [Vector2<f64>; 4] {
    let (s, c) = z.phi.sin_cos();
    let fwd = Vector2::new(c, s) * (0.5 * p.length);
    let left = Vector2::new(-s, c) * (0.5 * p.width);
    let o = z.position();
    [o + fwd + left, o + fwd - left, o - fwd - left, o - fwd + left]
}

/// Separating-axis test on the two oriented footprints (touching counts as
/// overlap).
pub fn detect_collision(a: &VehicleState, b: &VehicleState, pa: &VehicleParams, pb: &VehicleParams) -> bool {
    let ca = corners(a, pa);
    let cb = corners(b, pb);
    let axes = [
        Vector2::new(a.phi.cos(), a.phi.sin()),
        Vector2::new(-a.phi.sin(), a.phi.cos()),
        Vector2::new(b.phi.cos(), b.phi.sin()),
        Vector2::new(-b.phi.sin(), b.phi.cos()),
    ];
    axes.iter().all(|axis| {
        let range = |pts: &[Vector2<f64>; 4]| {
            pts.iter()
                .map(|p| p.dot(axis))
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
        };
        let (alo, ahi) = range(&ca);
        let (blo, bhi) = range(&cb);
        ahi >= blo && bhi >= alo
    })
}

/// Overtake trigger with hysteresis: the EV must lead by more than
/// `margin` metres of progress for `hold_steps` consecutive steps.
#[derive(Debug, Clone)]
pub struct OvertakeDetector {
    margin: f64,
    hold_steps: usize,
    count: usize,
}

impl OvertakeDetector {
    pub fn new(margin: f64, hold_time: f64, ts: f64) -> Self {
        Self { margin, hold_steps: ((hold_time / ts) - 1e-9).ceil().max(1.0) as usize, count: 0 }
    }

    /// Feeds one step of unwrapped progress; true once the overtake is
    /// confirmed.
    pub fn update(&mut self, ev_progress: f64, tv_progress: f64) -> bool {
        if ev_progress - tv_progress > self.margin {
            self.count += 1;
        } else {
            self.count = 0;
        }
        self.count >= self.hold_steps
    }
}
