//! EV disc cover, TV covering ellipse and the ellipse avoidance constraint.

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::vehicle::{VehicleParams, VehicleState};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CollisionGeometry {
    /// Radius of each EV disc [m].
    pub disc_radius: f64,
    /// Disc centers along the EV body axis, relative to the CoG [m].
    pub disc_offsets: [f64; 4],
    /// Semi-axes of the minimum-area ellipse covering the TV footprint [m].
    pub ellipse_a: f64,
    pub ellipse_b: f64,
}

impl CollisionGeometry {
    /// Four equal discs splitting the EV footprint lengthwise, and the
    /// `√2`-scaled ellipse through the TV corners.
    pub fn from_vehicles(ev: &VehicleParams, tv: &VehicleParams) -> Self {
        let quarter = ev.length / 4.0;
        let disc_radius = (0.25 * quarter * quarter + 0.25 * ev.width * ev.width).sqrt();
        let disc_offsets = [-1.5 * quarter, -0.5 * quarter, 0.5 * quarter, 1.5 * quarter];
        Self {
            disc_radius,
            disc_offsets,
            ellipse_a: std::f64::consts::SQRT_2 * tv.length / 2.0,
            ellipse_b: std::f64::consts::SQRT_2 * tv.width / 2.0,
        }
    }

    /// Semi-axes the disc centers must stay outside of: the covering ellipse
    /// grown by the disc radius.
    pub fn nominal_axes(&self) -> (f64, f64) {
        (self.ellipse_a + self.disc_radius, self.ellipse_b + self.disc_radius)
    }

    /// Every corner and edge midpoint of the EV rectangle lies in some disc,
    /// and every TV corner lies in the ellipse.
    pub fn covers(&self, ev: &VehicleParams, tv: &VehicleParams) -> bool {
        let (hl, hw) = (ev.length / 2.0, ev.width / 2.0);
        let probes = [
            (hl, hw), (hl, -hw), (-hl, hw), (-hl, -hw),
            (0.0, hw), (0.0, -hw), (hl, 0.0), (-hl, 0.0),
        ];
        let discs_ok = probes.iter().all(|&(x, y)| {
            self.disc_offsets
                .iter()
                .any(|&r| ((x - r).powi(2) + y * y).sqrt() <= self.disc_radius + 1e-12)
        });
        let (tl, tw) = (tv.length / 2.0, tv.width / 2.0);
        let ellipse_ok = (tl / self.ellipse_a).powi(2) + (tw / self.ellipse_b).powi(2) <= 1.0 + 1e-12;
        discs_ok && ellipse_ok
    }

    pub fn disc_center(&self, ev: &VehicleState, j: usize) -> Vector2<f64> {
        let r = self.disc_offsets[j];
        Vector2::new(ev.p_x + r * ev.phi.cos(), ev.p_y + r * ev.phi.sin())
    }
}

/// Offset of `c` from the TV position, in the TV body frame
/// `(longitudinal, lateral)`.
pub fn body_frame_offset(c: &Vector2<f64>, tv: &VehicleState) -> (f64, f64) {
    let (dx, dy) = (c.x - tv.p_x, c.y - tv.p_y);
    let (s, co) = tv.phi.sin_cos();
    (dx * co + dy * s, -dx * s + dy * co)
}

/// `h_j = 1 − lon²/a'² − lat²/b'²` for disc `j`; the pair is collision free
/// (for that disc) iff `h_j ≤ 0`.
pub fn ellipse_constraint(
    ev: &VehicleState,
    tv: &VehicleState,
    axes: (f64, f64),
    geometry: &CollisionGeometry,
    j: usize,
) -> f64 {
    let c = geometry.disc_center(ev, j);
    let (lon, lat) = body_frame_offset(&c, tv);
    1.0 - (lon / axes.0).powi(2) - (lat / axes.1).powi(2)
}

/// Uncertainty-expanded semi-axes. `var_s`, `var_ey` are the curvilinear
/// prediction variances, rotated into the TV body frame with `e_phi`.
pub fn expanded_semi_axes(var_s: f64, var_ey: f64, e_phi: f64, gamma: f64, eps: f64, a: f64, b: f64) -> (f64, f64) {
    let (growth_a, growth_b) = variance_growth(var_s, var_ey, e_phi, gamma);
    (a + growth_a * (1.0 - eps), b + growth_b * (1.0 - eps))
}

/// `γ·(√Var(a), √Var(b))`, the expansion at zero slack.
pub fn variance_growth(var_s: f64, var_ey: f64, e_phi: f64, gamma: f64) -> (f64, f64) {
    let (s, c) = e_phi.sin_cos();
    let var_a = c * c * var_s + s * s * var_ey;
    let var_b = s * s * var_s + c * c * var_ey;
    (gamma * var_a.max(0.0).sqrt(), gamma * var_b.max(0.0).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn geom() -> CollisionGeometry {
        CollisionGeometry::from_vehicles(&VehicleParams::default(), &VehicleParams::default())
    }

    #[test]
    fn default_cover_is_valid() {
        let g = geom();
        assert!(g.covers(&VehicleParams::default(), &VehicleParams::default()));
        assert_abs_diff_eq!(g.disc_offsets[3], 0.15, epsilon = 1e-15);
        assert_abs_diff_eq!(g.disc_radius, 0.05f64.hypot(0.1), epsilon = 1e-15);
    }

    #[test]
    fn h_at_center_boundary_and_far() {
        let g = geom();
        let tv = VehicleState { p_x: 1.0, p_y: 2.0, phi: 0.7, ..Default::default() };
        let axes = (0.5, 0.25);
        // Disc 0 sits at offset −0.15 behind the EV CoG.
        let back = g.disc_offsets[0];
        let ev_at = |c: Vector2<f64>, phi: f64| VehicleState {
            p_x: c.x - back * phi.cos(),
            p_y: c.y - back * phi.sin(),
            phi,
            ..Default::default()
        };
        let center = Vector2::new(tv.p_x, tv.p_y);
        assert_abs_diff_eq!(ellipse_constraint(&ev_at(center, 0.3), &tv, axes, &g, 0), 1.0, epsilon = 1e-12);
        let along = center + axes.0 * Vector2::new(tv.phi.cos(), tv.phi.sin());
        assert_abs_diff_eq!(ellipse_constraint(&ev_at(along, -1.0), &tv, axes, &g, 0), 0.0, epsilon = 1e-12);
        let across = center + axes.1 * Vector2::new(-tv.phi.sin(), tv.phi.cos());
        assert_abs_diff_eq!(ellipse_constraint(&ev_at(across, 2.0), &tv, axes, &g, 0), 0.0, epsilon = 1e-12);
        let far = center + Vector2::new(10.0, -5.0);
        assert!(ellipse_constraint(&ev_at(far, 0.0), &tv, axes, &g, 0) < 0.0);
    }

    #[test]
    fn expanded_axes_examples() {
        assert_eq!(expanded_semi_axes(0.0, 0.0, 0.4, 3.0, 0.2, 0.3, 0.15), (0.3, 0.15));
        assert_eq!(expanded_semi_axes(0.5, 0.2, 0.4, 3.0, 1.0, 0.3, 0.15), (0.3, 0.15));
        let (a, b) = expanded_semi_axes(0.01, 0.0025, 0.0, 2.0, 0.0, 0.3, 0.15);
        assert_abs_diff_eq!(a, 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(b, 0.25, epsilon = 1e-15);
    }

    #[test]
    fn rotation_by_quarter_turn_swaps_variances() {
        let (ga, gb) = variance_growth(0.04, 0.01, std::f64::consts::FRAC_PI_2, 1.0);
        assert_abs_diff_eq!(ga, 0.1, epsilon = 1e-12);
        assert_abs_diff_eq!(gb, 0.2, epsilon = 1e-12);
    }
}
