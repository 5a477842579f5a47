//! Closed race tracks with a piecewise-constant curvature centerline.
//!
//! The centerline `τ(s)` is stored as a sequence of straight and circular arc
//! segments. Each segment has a closed-form position and heading, so `τ` is
//! C¹ and the curvature is exact inside every segment. Global poses are mapped
//! to the curvilinear (Frenet) frame by projecting onto the centerline: a
//! coarse search over a cached sampling of `τ` followed by a safeguarded 1-D
//! Newton iteration on `½‖τ(s) − p‖²`.

use std::f64::consts::{PI, TAU};

use nalgebra::Vector2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vehicle::VehicleState;

/// Spacing of the cached centerline samples used to seed projections.
pub const CACHE_RESOLUTION: f64 = 0.1;
/// Closure tolerance for position [m] and heading [rad].
pub const CLOSURE_TOL: f64 = 1e-6;

const NEWTON_TOL: f64 = 1e-10;
const STRAIGHT_EPS: f64 = 1e-12;

/// Wraps an angle into `(−π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut w = a.rem_euclid(TAU);
    if w > PI {
        w -= TAU;
    }
    w
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub length: f64,
    pub curvature: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose2 {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

impl Pose2 {
    pub fn new(x: f64, y: f64, heading: f64) -> Self {
        Self { x, y, heading }
    }

    pub fn position(&self) -> Vector2<f64> {
        Vector2::new(self.x, self.y)
    }

    /// Pose reached after driving `d` metres along an arc of curvature `kappa`.
    fn advance(&self, d: f64, kappa: f64) -> Pose2 {
        let th = self.heading + kappa * d;
        if kappa.abs() < STRAIGHT_EPS {
            Pose2::new(
                self.x + d * self.heading.cos(),
                self.y + d * self.heading.sin(),
                th,
            )
        } else {
            Pose2::new(
                self.x + (th.sin() - self.heading.sin()) / kappa,
                self.y - (th.cos() - self.heading.cos()) / kappa,
                th,
            )
        }
    }
}

/// Serialized track description: `{segments: [[length, curvature]...], width, start_pose: [x, y, heading]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackSpec {
    pub segments: Vec<[f64; 2]>,
    pub width: f64,
    pub start_pose: [f64; 3],
}

/// Point on the centerline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CenterlinePoint {
    pub position: Vector2<f64>,
    /// Tangent angle of `τ′(s)`.
    pub heading: f64,
    /// Signed curvature, positive for left turns.
    pub curvature: f64,
}

impl CenterlinePoint {
    pub fn tangent(&self) -> Vector2<f64> {
        Vector2::new(self.heading.cos(), self.heading.sin())
    }

    /// Left-pointing unit normal.
    pub fn normal(&self) -> Vector2<f64> {
        Vector2::new(-self.heading.sin(), self.heading.cos())
    }
}

/// Pose in the curvilinear frame of a track.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FrenetPose {
    /// Progress along the centerline in `[0, L)`.
    pub s: f64,
    /// Lateral deviation, positive to the left of the tangent.
    pub e_y: f64,
    /// Heading deviation from the tangent in `(−π, π]`.
    pub e_phi: f64,
}

/// Vehicle state expressed in the curvilinear frame. Velocities are copied
/// verbatim from the global state.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CurvilinearState {
    pub s: f64,
    pub e_y: f64,
    pub e_phi: f64,
    pub v_x: f64,
    pub v_y: f64,
    pub omega: f64,
}

impl CurvilinearState {
    pub fn pose(&self) -> FrenetPose {
        FrenetPose {
            s: self.s,
            e_y: self.e_y,
            e_phi: self.e_phi,
        }
    }

    pub fn to_array(&self) -> [f64; 6] {
        [self.s, self.e_y, self.e_phi, self.v_x, self.v_y, self.omega]
    }

    pub fn from_array(a: [f64; 6]) -> Self {
        Self {
            s: a[0],
            e_y: a[1],
            e_phi: a[2],
            v_x: a[3],
            v_y: a[4],
            omega: a[5],
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrackModel {
    segments: Vec<Segment>,
    seg_start_s: Vec<f64>,
    seg_start_pose: Vec<Pose2>,
    length: f64,
    width: f64,
    kappa_max: f64,
    start_pose: Pose2,
    cache: Vec<Vector2<f64>>,
    cache_ds: f64,
}

impl TrackModel {
    /// Builds a track from its segments, checking closure and that the inner
    /// boundary cannot fold over itself (`W·κ_max < 2`).
    pub fn new(segments: Vec<Segment>, width: f64, start_pose: Pose2) -> Result<Self> {
        if segments.is_empty() {
            return Err(Error::Geometry("track needs at least one segment".into()));
        }
        if !(width > 0.0) || !width.is_finite() {
            return Err(Error::Geometry(format!("width must be positive, got {width}")));
        }
        if let Some(bad) = segments
            .iter()
            .find(|seg| !(seg.length > 0.0) || !seg.length.is_finite() || !seg.curvature.is_finite())
        {
            return Err(Error::Geometry(format!("invalid segment {bad:?}")));
        }
        let kappa_max = segments.iter().map(|s| s.curvature.abs()).fold(0.0, f64::max);
        if width * kappa_max >= 2.0 {
            return Err(Error::Geometry(format!(
                "width {width} m with curvature {kappa_max} 1/m folds the inner boundary"
            )));
        }

        let mut seg_start_s = Vec::with_capacity(segments.len());
        let mut seg_start_pose = Vec::with_capacity(segments.len());
        let mut s = 0.0;
        let mut pose = start_pose;
        for seg in &segments {
            seg_start_s.push(s);
            seg_start_pose.push(pose);
            pose = pose.advance(seg.length, seg.curvature);
            s += seg.length;
        }
        let position_gap = (pose.position() - start_pose.position()).norm();
        let heading_gap = wrap_angle(pose.heading - start_pose.heading).abs();
        if position_gap > CLOSURE_TOL || heading_gap > CLOSURE_TOL {
            return Err(Error::ClosureViolation {
                position_gap,
                heading_gap,
            });
        }

        let mut track = Self {
            segments,
            seg_start_s,
            seg_start_pose,
            length: s,
            width,
            kappa_max,
            start_pose,
            cache: Vec::new(),
            cache_ds: 0.0,
        };
        let n = (track.length / CACHE_RESOLUTION).ceil().max(8.0) as usize;
        track.cache_ds = track.length / n as f64;
        track.cache = (0..n)
            .map(|i| track.centerline(i as f64 * track.cache_ds).position)
            .collect();
        Ok(track)
    }

    pub fn from_spec(spec: &TrackSpec) -> Result<Self> {
        let segments = spec
            .segments
            .iter()
            .map(|&[length, curvature]| Segment { length, curvature })
            .collect();
        let [x, y, heading] = spec.start_pose;
        Self::new(segments, spec.width, Pose2::new(x, y, heading))
    }

    pub fn to_spec(&self) -> TrackSpec {
        TrackSpec {
            segments: self.segments.iter().map(|s| [s.length, s.curvature]).collect(),
            width: self.width,
            start_pose: [self.start_pose.x, self.start_pose.y, self.start_pose.heading],
        }
    }

    /// Circle of radius `radius`, driven counter-clockwise from the origin.
    pub fn circle(radius: f64, width: f64) -> Result<Self> {
        Self::new(
            vec![Segment {
                length: TAU * radius,
                curvature: 1.0 / radius,
            }],
            width,
            Pose2::default(),
        )
    }

    /// Stadium oval: two straights of length `straight` joined by half circles.
    pub fn oval(straight: f64, radius: f64, width: f64) -> Result<Self> {
        let arc = Segment {
            length: PI * radius,
            curvature: 1.0 / radius,
        };
        let line = Segment {
            length: straight,
            curvature: 0.0,
        };
        Self::new(vec![line, arc, line, arc], width, Pose2::default())
    }

    /// L-shaped circuit with rounded 90° corners, driven counter-clockwise.
    pub fn l_shaped() -> Self {
        let r = 0.75;
        let corner = |sign: f64| Segment {
            length: 0.5 * PI * r,
            curvature: sign / r,
        };
        let line = |len: f64| Segment {
            length: len - 2.0 * r,
            curvature: 0.0,
        };
        // Polygon (0,0) → (9,0) → (9,3) → (3,3) → (3,7.5) → (0,7.5) with the
        // corner at (3,3) turning right.
        let segments = vec![
            line(9.0),
            corner(1.0),
            line(3.0),
            corner(1.0),
            line(6.0),
            corner(-1.0),
            line(4.5),
            corner(1.0),
            line(3.0),
            corner(1.0),
            line(7.5),
            corner(1.0),
        ];
        Self::new(segments, 1.1, Pose2::new(r, 0.0, 0.0)).expect("L-shaped template closes")
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn width(&self) -> f64 {
        self.width
    }

    pub fn kappa_max(&self) -> f64 {
        self.kappa_max
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn start_pose(&self) -> Pose2 {
        self.start_pose
    }

    /// Wraps progress into `[0, L)`.
    pub fn wrap_s(&self, s: f64) -> f64 {
        let w = s.rem_euclid(self.length);
        if w >= self.length {
            0.0
        } else {
            w
        }
    }

    /// Shortest signed progress difference `a − b`, wrapped into `(−L/2, L/2]`.
    pub fn signed_ds(&self, a: f64, b: f64) -> f64 {
        let half = 0.5 * self.length;
        let mut d = (a - b).rem_euclid(self.length);
        if d > half {
            d -= self.length;
        }
        d
    }

    fn segment_index(&self, s: f64) -> usize {
        self.seg_start_s.partition_point(|&start| start <= s).saturating_sub(1)
    }

    pub fn centerline(&self, s: f64) -> CenterlinePoint {
        let s = self.wrap_s(s);
        let i = self.segment_index(s);
        let seg = self.segments[i];
        let pose = self.seg_start_pose[i].advance(s - self.seg_start_s[i], seg.curvature);
        CenterlinePoint {
            position: pose.position(),
            heading: pose.heading,
            curvature: seg.curvature,
        }
    }

    pub fn curvature(&self, s: f64) -> f64 {
        self.segments[self.segment_index(self.wrap_s(s))].curvature
    }

    /// Curvatures at `s + iδ`, `i = 1..=count`.
    pub fn lookahead_curvatures(&self, s: f64, count: usize, spacing: f64) -> Vec<f64> {
        (1..=count)
            .map(|i| self.curvature(s + i as f64 * spacing))
            .collect()
    }

    pub fn frenet_to_global(&self, pose: &FrenetPose) -> (Vector2<f64>, f64) {
        let c = self.centerline(pose.s);
        (c.position + pose.e_y * c.normal(), c.heading + pose.e_phi)
    }

    /// Projects a global pose onto the centerline using a search over the
    /// whole cached centerline. Fails if two far-apart candidates are nearly
    /// equidistant.
    pub fn global_to_frenet(&self, position: &Vector2<f64>, heading: f64) -> Result<FrenetPose> {
        let n = self.cache.len();
        let d2: Vec<f64> = self.cache.iter().map(|c| (c - position).norm_squared()).collect();
        let mut minima: Vec<(usize, f64)> = (0..n)
            .filter(|&i| d2[i] <= d2[(i + n - 1) % n] && d2[i] <= d2[(i + 1) % n])
            .map(|i| (i, d2[i].sqrt()))
            .collect();
        minima.sort_by(|a, b| a.1.total_cmp(&b.1));
        let (best, best_d) = minima[0];
        let s_best = best as f64 * self.cache_ds;
        for &(i, d) in &minima[1..] {
            if d > 1.1 * best_d + 1e-12 {
                break;
            }
            let s_other = i as f64 * self.cache_ds;
            if self.signed_ds(s_other, s_best).abs() > 2.0 {
                return Err(Error::ProjectionAmbiguous {
                    s1: s_best,
                    s2: s_other,
                });
            }
        }
        Ok(self.refine(position, heading, s_best))
    }

    /// Projection restricted to a window of `±window` metres around `s_hint`.
    /// Used where a good progress estimate is known (closed-loop tracking).
    pub fn project_near(
        &self,
        position: &Vector2<f64>,
        heading: f64,
        s_hint: f64,
        window: f64,
    ) -> FrenetPose {
        let n = self.cache.len() as isize;
        let center = (self.wrap_s(s_hint) / self.cache_ds).round() as isize;
        let half = ((window / self.cache_ds).ceil() as isize).min(n / 2);
        let best = (-half..=half)
            .map(|k| (center + k).rem_euclid(n) as usize)
            .min_by(|&a, &b| {
                (self.cache[a] - position)
                    .norm_squared()
                    .total_cmp(&(self.cache[b] - position).norm_squared())
            })
            .unwrap_or(0);
        self.refine(position, heading, best as f64 * self.cache_ds)
    }

    fn refine(&self, p: &Vector2<f64>, heading: f64, seed: f64) -> FrenetPose {
        let s = self.refine_progress(p, seed);
        let c = self.centerline(s);
        let diff = p - c.position;
        FrenetPose {
            s: self.wrap_s(s),
            e_y: c.normal().dot(&diff),
            e_phi: wrap_angle(heading - c.heading),
        }
    }

    /// Derivative of `½‖τ(s) − p‖²` with respect to `s`.
    fn dist_grad(&self, p: &Vector2<f64>, s: f64) -> (f64, f64) {
        let c = self.centerline(s);
        let diff = c.position - p;
        let g = c.tangent().dot(&diff);
        // τ″ = κ n, so the second derivative is 1 + κ n·(τ − p).
        let h = 1.0 + c.curvature * c.normal().dot(&diff);
        (g, h)
    }

    /// Safeguarded Newton iteration (bisection fallback) for the stationary
    /// point of the squared distance near `seed`.
    fn refine_progress(&self, p: &Vector2<f64>, seed: f64) -> f64 {
        let h0 = 1.5 * self.cache_ds;
        let (mut lo, mut hi) = (seed - h0, seed + h0);
        let mut g_lo = self.dist_grad(p, lo).0;
        let mut g_hi = self.dist_grad(p, hi).0;
        let mut expand = 0;
        while !(g_lo <= 0.0 && g_hi >= 0.0) && expand < 20 {
            if g_lo > 0.0 {
                lo -= h0;
                g_lo = self.dist_grad(p, lo).0;
            }
            if g_hi < 0.0 {
                hi += h0;
                g_hi = self.dist_grad(p, hi).0;
            }
            expand += 1;
        }
        if !(g_lo <= 0.0 && g_hi >= 0.0) {
            return seed;
        }
        let mut s = 0.5 * (lo + hi);
        for _ in 0..100 {
            let (g, h) = self.dist_grad(p, s);
            if g.abs() < NEWTON_TOL {
                break;
            }
            if g < 0.0 {
                lo = s;
            } else {
                hi = s;
            }
            let newton = s - g / h.max(1e-3);
            s = if h > 1e-3 && newton > lo && newton < hi {
                newton
            } else {
                0.5 * (lo + hi)
            };
            if hi - lo < 1e-15 * self.length.max(1.0) {
                break;
            }
        }
        s
    }

    pub fn state_to_curvilinear(&self, z: &VehicleState) -> Result<CurvilinearState> {
        let f = self.global_to_frenet(&Vector2::new(z.p_x, z.p_y), z.phi)?;
        Ok(CurvilinearState {
            s: f.s,
            e_y: f.e_y,
            e_phi: f.e_phi,
            v_x: z.v_x,
            v_y: z.v_y,
            omega: z.omega,
        })
    }

    /// Projection with a progress hint; never ambiguous.
    pub fn state_to_curvilinear_near(&self, z: &VehicleState, s_hint: f64) -> CurvilinearState {
        let f = self.project_near(&Vector2::new(z.p_x, z.p_y), z.phi, s_hint, 2.0);
        CurvilinearState {
            s: f.s,
            e_y: f.e_y,
            e_phi: f.e_phi,
            v_x: z.v_x,
            v_y: z.v_y,
            omega: z.omega,
        }
    }

    pub fn curvilinear_to_state(&self, c: &CurvilinearState) -> VehicleState {
        let (p, phi) = self.frenet_to_global(&c.pose());
        VehicleState {
            p_x: p.x,
            p_y: p.y,
            phi,
            v_x: c.v_x,
            v_y: c.v_y,
            omega: c.omega,
        }
    }

    /// Centerline and both boundaries sampled every `spacing` metres:
    /// `(s, center, left, right)`.
    pub fn sample_boundaries(&self, spacing: f64) -> Vec<(f64, Vector2<f64>, Vector2<f64>, Vector2<f64>)> {
        let n = (self.length / spacing).ceil() as usize;
        (0..=n)
            .map(|i| {
                let s = (i as f64 * spacing).min(self.length);
                let c = self.centerline(s);
                let off = 0.5 * self.width * c.normal();
                (s, c.position, c.position + off, c.position - off)
            })
            .collect()
    }

    /// True when strips of the track that are far apart along the centerline
    /// come closer than `width + clearance` in the plane.
    fn self_overlaps(&self, clearance: f64, min_arc: f64) -> bool {
        let n = self.cache.len();
        let limit = (self.width + clearance).powi(2);
        for i in 0..n {
            for j in (i + 1)..n {
                let arc = (j - i) as f64 * self.cache_ds;
                let arc = arc.min(self.length - arc);
                if arc > min_arc && (self.cache[i] - self.cache[j]).norm_squared() < limit {
                    return true;
                }
            }
        }
        false
    }
}

/// Parameter ranges for random track generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RandomTrackParams {
    pub min_segments: usize,
    pub max_segments: usize,
    pub straight_length: [f64; 2],
    pub curvature: [f64; 2],
    pub width: f64,
    pub max_attempts: usize,
}

impl Default for RandomTrackParams {
    fn default() -> Self {
        Self {
            min_segments: 8,
            max_segments: 16,
            straight_length: [1.0, 6.0],
            curvature: [0.3, 1.5],
            width: 1.1,
            max_attempts: 500,
        }
    }
}

/// Generates a random closed track. Random straights and arcs are followed by
/// a left-straight-left correction that returns exactly to the start pose;
/// candidates whose total turning is not one full loop, or whose strips
/// overlap, are rejected and redrawn.
pub fn random_track(seed: u64, params: &RandomTrackParams) -> Result<TrackModel> {
    let [kmin, kmax] = params.curvature;
    let [lmin, lmax] = params.straight_length;
    if params.width * kmax >= 2.0 {
        return Err(Error::Geometry(format!(
            "width {} m with curvature {kmax} 1/m folds the inner boundary",
            params.width
        )));
    }
    if !(kmin > 0.0 && kmin <= kmax && lmin > 0.0 && lmin <= lmax)
        || params.min_segments < 4
        || params.min_segments > params.max_segments
    {
        return Err(Error::Config(format!("invalid random track params {params:?}")));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start = Pose2::default();
    for _ in 0..params.max_attempts {
        let total = rng.random_range(params.min_segments..=params.max_segments);
        let mut segments = Vec::with_capacity(total);
        let mut pose = start;
        for i in 0..total - 3 {
            let seg = if i % 2 == 0 {
                Segment {
                    length: rng.random_range(lmin..=lmax),
                    curvature: 0.0,
                }
            } else {
                let k = rng.random_range(kmin..=kmax);
                let sign = if rng.random_bool(0.8) { 1.0 } else { -1.0 };
                let angle = rng.random_range(PI / 6.0..=PI / 2.0);
                Segment {
                    length: angle / k,
                    curvature: sign * k,
                }
            };
            pose = pose.advance(seg.length, seg.curvature);
            segments.push(seg);
        }

        // Left-straight-left path of radius 1/k back to the start pose.
        let k = rng.random_range(kmin..=kmax);
        let r = 1.0 / k;
        let left_center = |p: &Pose2| Vector2::new(p.x - r * p.heading.sin(), p.y + r * p.heading.cos());
        let ca = left_center(&pose);
        let cb = left_center(&start);
        let gap = cb - ca;
        let straight = gap.norm();
        let psi = gap.y.atan2(gap.x);
        let turn1 = (psi - pose.heading).rem_euclid(TAU);
        let turn2 = (start.heading - psi).rem_euclid(TAU);
        for seg in [
            Segment {
                length: turn1 * r,
                curvature: k,
            },
            Segment {
                length: straight,
                curvature: 0.0,
            },
            Segment {
                length: turn2 * r,
                curvature: k,
            },
        ] {
            if seg.length > 1e-9 {
                segments.push(seg);
            }
        }

        let turning: f64 = segments.iter().map(|s| s.length * s.curvature).sum();
        if (turning - TAU).abs() > 1e-6 {
            continue;
        }
        let track = match TrackModel::new(segments, params.width, start) {
            Ok(t) => t,
            Err(Error::ClosureViolation { .. }) => continue,
            Err(e) => return Err(e),
        };
        if track.self_overlaps(0.2, 3.0) {
            continue;
        }
        return Ok(track);
    }
    Err(Error::GenerationFailed(params.max_attempts))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn circle_closes_and_has_constant_curvature() {
        let t = TrackModel::circle(2.0, 1.0).unwrap();
        assert_abs_diff_eq!(t.length(), TAU * 2.0, epsilon = 1e-12);
        let c0 = t.centerline(0.0);
        assert_abs_diff_eq!(c0.position.norm(), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(c0.curvature, 0.5);
        let half = t.centerline(PI * 2.0);
        assert_abs_diff_eq!(half.position.x, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(half.position.y, 4.0, epsilon = 1e-12);
        assert_abs_diff_eq!(half.heading, PI, epsilon = 1e-12);
    }

    #[test]
    fn oval_length() {
        let t = TrackModel::oval(3.0, 1.5, 1.0).unwrap();
        assert_abs_diff_eq!(t.length(), 6.0 + 3.0 * PI, epsilon = 1e-12);
    }

    #[test]
    fn open_segments_are_rejected() {
        let segs = vec![
            Segment { length: 2.0, curvature: 0.0 },
            Segment { length: 1.0, curvature: 1.0 },
        ];
        assert!(matches!(
            TrackModel::new(segs, 1.0, Pose2::default()),
            Err(Error::ClosureViolation { .. })
        ));
    }

    #[test]
    fn too_wide_for_curvature_is_geometry_error() {
        assert!(matches!(TrackModel::circle(0.5, 1.0), Err(Error::Geometry(_))));
        let params = RandomTrackParams {
            width: 2.0,
            ..Default::default()
        };
        assert!(matches!(random_track(1, &params), Err(Error::Geometry(_))));
    }

    #[test]
    fn centerline_is_periodic() {
        let t = TrackModel::l_shaped();
        let a = t.centerline(0.5);
        let b = t.centerline(t.length() + 0.5);
        assert_abs_diff_eq!((a.position - b.position).norm(), 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!(a.curvature, b.curvature);
    }

    #[test]
    fn frenet_examples() {
        let t = TrackModel::circle(2.0, 1.0).unwrap();
        let (p, h) = t.frenet_to_global(&FrenetPose { s: 1.0, e_y: 0.0, e_phi: 0.0 });
        let c = t.centerline(1.0);
        assert_abs_diff_eq!((p - c.position).norm(), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(h, c.heading);
        // Right of a left-curving track is outward.
        let (p, _) = t.frenet_to_global(&FrenetPose { s: 0.0, e_y: -0.1, e_phi: 0.0 });
        assert_abs_diff_eq!((p - Vector2::new(0.0, 2.0)).norm(), 2.1, epsilon = 1e-12);

        let s0 = 2.3;
        let c = t.centerline(s0);
        let f = t.global_to_frenet(&c.position, c.heading).unwrap();
        assert_abs_diff_eq!(f.s, s0, epsilon = 1e-9);
        assert_abs_diff_eq!(f.e_y, 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!(f.e_phi, 0.0, epsilon = 1e-9);
        let f = t.global_to_frenet(&(c.position + 0.1 * c.normal()), 0.0).unwrap();
        assert_abs_diff_eq!(f.s, s0, epsilon = 1e-9);
        assert_abs_diff_eq!(f.e_y, 0.1, epsilon = 1e-9);
    }

    #[test]
    fn circle_center_is_ambiguous() {
        let t = TrackModel::circle(2.0, 1.0).unwrap();
        let r = t.global_to_frenet(&Vector2::new(0.0, 2.0), 0.0);
        assert!(matches!(r, Err(Error::ProjectionAmbiguous { .. })));
    }

    #[test]
    fn lookahead_wraps_the_seam() {
        let t = TrackModel::circle(2.0, 1.0).unwrap();
        assert!(t.lookahead_curvatures(3.0, 4, 0.5).iter().all(|&k| (k - 0.5).abs() < 1e-15));
        let oval = TrackModel::oval(4.0, 1.0, 1.0).unwrap();
        assert_eq!(oval.lookahead_curvatures(0.2, 3, 0.5), vec![0.0; 3]);
        // Last arc ends at L; just past the seam we are back on the first straight.
        let k = oval.lookahead_curvatures(oval.length() - 0.6, 2, 0.5);
        assert_eq!(k, vec![1.0, 0.0]);
    }

    #[test]
    fn signed_ds_wraps() {
        let t = TrackModel::circle(2.0, 1.0).unwrap();
        let l = t.length();
        assert_abs_diff_eq!(t.signed_ds(l - 0.1, 0.1), -0.2, epsilon = 1e-12);
        assert_abs_diff_eq!(t.signed_ds(0.1, l - 0.1), 0.2, epsilon = 1e-12);
    }

    #[test]
    fn arc_length_and_curvature_consistency() {
        let t = random_track(7, &RandomTrackParams::default()).unwrap();
        let h = 1e-3;
        let n = (t.length() / h).round() as usize;
        let ds = t.length() / n as f64;
        let mut len = 0.0;
        let mut prev = t.centerline(0.0).position;
        for i in 1..=n {
            let p = t.centerline(i as f64 * ds).position;
            len += (p - prev).norm();
            prev = p;
        }
        assert!((len - t.length()).abs() < 1e-4 * t.length());

        // Central differences of τ away from joints reproduce κ.
        let joints: Vec<f64> = {
            let mut acc = 0.0;
            t.segments().iter().map(|s| { acc += s.length; acc }).collect()
        };
        let step = 1e-3;
        let mut s = 0.05;
        while s < t.length() {
            if joints.iter().all(|&j| (s - j).abs() > 3.0 * step) && s > 3.0 * step {
                let a = t.centerline(s - step).position;
                let b = t.centerline(s).position;
                let c = t.centerline(s + step).position;
                let d1 = (c - a) / (2.0 * step);
                let d2 = (c - 2.0 * b + a) / (step * step);
                let k = d1.x * d2.y - d1.y * d2.x;
                assert!((k - t.curvature(s)).abs() < 1e-3, "s={s} k={k}");
            }
            s += 0.37;
        }
    }

    #[test]
    fn progress_is_monotone_along_the_centerline() {
        let t = TrackModel::l_shaped();
        let mut prev = t.global_to_frenet(&t.centerline(0.0).position, 0.0).unwrap().s;
        let mut travelled = 0.0;
        let mut s = 0.07;
        while s < t.length() {
            let f = t.global_to_frenet(&t.centerline(s).position, 0.0).unwrap();
            let d = t.signed_ds(f.s, prev);
            assert!(d > 0.0);
            travelled += d;
            prev = f.s;
            s += 0.07;
        }
        assert!((travelled - (s - 0.07)).abs() < 1e-6);
    }

    #[test]
    fn random_tracks_are_deterministic_and_closed() {
        let p = RandomTrackParams::default();
        let a = random_track(42, &p).unwrap();
        let b = random_track(42, &p).unwrap();
        assert_eq!(a.to_spec(), b.to_spec());
        for seed in 0..100 {
            let t = random_track(seed, &p).unwrap();
            // Rebuilding re-runs the closure check.
            TrackModel::from_spec(&t.to_spec()).unwrap();
            assert!(t.segments().len() >= p.min_segments - 1 && t.segments().len() <= p.max_segments);
            assert!(t.kappa_max() <= p.curvature[1] + 1e-12);
        }
    }

    #[test]
    fn spec_round_trips_through_json() {
        let t = TrackModel::l_shaped();
        let json = serde_json::to_string(&t.to_spec()).unwrap();
        let back: TrackSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(back, t.to_spec());
    }
}
