//! Model predictive contouring control for head-to-head racing.
//!
//! The optimal control problem maximizes approximate progress `s̄_N` while
//! penalizing contouring error, input magnitude and input rate, subject to
//! the vehicle dynamics, track and speed limits, input bounds and (for the
//! EV) uncertainty-expanded ellipse avoidance constraints with slack. The TV
//! variant adds a blocking cost on its lateral offset from the EV. Problems
//! are solved by Gauss–Newton SQP over the inputs (single shooting), with
//! the dense QP subproblems handled by [`crate::qp`].

mod geometry;
mod sqp;

use std::time::Instant;

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

pub use geometry::{body_frame_offset, ellipse_constraint, expanded_semi_axes, variance_growth, CollisionGeometry};

use crate::error::{Error, Result};
use crate::track::TrackModel;
use crate::vehicle::{step_rk4, VehicleInput, VehicleParams, VehicleState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MpccConfig {
    /// Horizon length N.
    pub horizon: usize,
    /// Sample time [s].
    pub ts: f64,
    pub q_c: f64,
    pub q_s: f64,
    pub r: [[f64; 2]; 2],
    pub r_d: [[f64; 2]; 2],
    /// Blocking weight (TV only).
    pub q_y: f64,
    /// Diagonal of the quadratic slack weight.
    pub q_eps_quad: f64,
    /// Linear slack weight.
    pub q_eps_lin: f64,
    pub u_min: [f64; 2],
    pub u_max: [f64; 2],
    pub use_collision_constraints: bool,
    pub use_blocking_cost: bool,
    /// Standard deviations covered by the GP safety bound.
    pub gamma: f64,
    /// Circular safety radius for predictors without uncertainty [m].
    pub safety_radius: f64,
    /// Longitudinal speed limit [m/s].
    pub v_max: f64,
    /// The CoG is kept within `W/2 − track_margin` of the centerline [m].
    pub track_margin: f64,
    pub max_sqp_iterations: usize,
    /// Exact-penalty weight on the relaxation used when the nominal problem
    /// has an infeasible subproblem.
    pub relaxation_penalty: f64,
    /// SQP iterations per control step once warm started (real-time mode).
    /// `0` runs every solve to convergence.
    pub real_time_iterations: usize,
    pub tolerance: f64,
}

impl Default for MpccConfig {
    fn default() -> Self {
        Self {
            horizon: 10,
            ts: 0.1,
            q_c: 50.0,
            q_s: 20.0,
            r: [[0.1, 0.0], [0.0, 10.0]],
            r_d: [[0.5, 0.0], [0.0, 50.0]],
            q_y: 0.0,
            q_eps_quad: 100.0,
            q_eps_lin: 10.0,
            u_min: [-2.0, -0.35],
            u_max: [4.0, 0.35],
            use_collision_constraints: true,
            use_blocking_cost: false,
            gamma: 1.0,
            safety_radius: 0.0,
            v_max: 2.8,
            track_margin: 0.1,
            max_sqp_iterations: 25,
            relaxation_penalty: 1000.0,
            real_time_iterations: 1,
            tolerance: 1e-6,
        }
    }
}

impl MpccConfig {
    /// Default TV blocking policy with aggressiveness `q_y`.
    pub fn target_vehicle(q_y: f64) -> Self {
        Self {
            q_y,
            use_blocking_cost: q_y > 0.0,
            use_collision_constraints: false,
            v_max: 2.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let psd = |m: &[[f64; 2]; 2]| {
            m[0][1] == m[1][0] && m[0][0] > 0.0 && m[0][0] * m[1][1] - m[0][1] * m[1][0] > 0.0
        };
        let checks = [
            (self.horizon >= 1, "horizon must be at least 1"),
            (self.ts > 0.0, "sample time must be positive"),
            (self.q_c > 0.0 && self.q_s > 0.0, "q_c and q_s must be positive"),
            (psd(&self.r) && psd(&self.r_d), "R and R_d must be symmetric positive definite"),
            (self.q_eps_quad >= 0.0 && self.q_eps_lin >= 0.0, "slack weights must be nonnegative"),
            (self.q_y >= 0.0, "q_y must be nonnegative"),
            (self.u_min[0] < self.u_max[0] && self.u_min[1] < self.u_max[1], "input bounds are empty"),
            (self.gamma >= 0.0 && self.safety_radius >= 0.0, "safety bounds must be nonnegative"),
            (self.v_max > 0.0, "v_max must be positive"),
            (self.track_margin >= 0.0, "track margin must be nonnegative"),
            (self.max_sqp_iterations >= 1, "at least one SQP iteration is required"),
            (self.relaxation_penalty > 0.0, "relaxation penalty must be positive"),
        ];
        for (ok, msg) in checks {
            if !ok {
                return Err(Error::Config(msg.into()));
            }
        }
        Ok(())
    }
}

/// Predicted opponent trajectory as seen by the avoidance constraints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObstacleForecast {
    /// `N + 1` states starting at the current time.
    pub states: Vec<VehicleState>,
    /// Semi-axis growth `(Δa, Δb)` at zero slack, per step.
    pub growth: Vec<(f64, f64)>,
}

/// Data for the TV blocking cost.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlockingTarget {
    /// Current lateral offset of the EV [m].
    pub ev_e_y: f64,
    /// Current progress difference `s_TV − s_EV` [m].
    pub ds: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverStatus {
    Optimal,
    MaxIterations,
    /// Solved with track, speed and avoidance constraints relaxed by a
    /// penalized slack after the nominal subproblem was infeasible.
    Relaxed,
    InfeasibleQp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MpccSolution {
    pub inputs: Vec<VehicleInput>,
    pub states: Vec<VehicleState>,
    /// Unwrapped approximate progress `s̄_0..s̄_N`.
    pub progress: Vec<f64>,
    /// `ε_0..ε_N`; `ε_0` is fixed at zero since the current state cannot move.
    pub slacks: Vec<f64>,
    pub status: SolverStatus,
    pub iterations: usize,
    pub kkt_residual: f64,
    pub cost: f64,
    /// Wall-clock solve time [s].
    pub solve_time: f64,
}

impl MpccSolution {
    pub fn first_input(&self) -> VehicleInput {
        self.inputs[0]
    }

    /// Largest `‖z_{t+1} − f(z_t, u_t)‖∞` along the solution.
    pub fn dynamics_residual(&self, ts: f64, params: &VehicleParams) -> f64 {
        self.inputs
            .iter()
            .enumerate()
            .map(|(t, u)| match step_rk4(&self.states[t], u, ts, params) {
                Ok(next) => (next.to_vector() - self.states[t + 1].to_vector()).amax(),
                Err(_) => f64::INFINITY,
            })
            .fold(0.0, f64::max)
    }
}

/// Lateral projection of `p` onto the normal at the approximate progress `s̄`:
/// `e_c = sin Φ (p_x − τ_x) − cos Φ (p_y − τ_y)`.
pub fn contouring_error(track: &TrackModel, p: &Vector2<f64>, s_bar: f64) -> f64 {
    let c = track.centerline(s_bar);
    let (s, co) = c.heading.sin_cos();
    s * (p.x - c.position.x) - co * (p.y - c.position.y)
}

pub fn progress_dynamics(s_bar: f64, v_x: f64, ts: f64) -> f64 {
    s_bar + ts * v_x
}

/// `Σ_t q_y (e_y(p_t) − e_y(EV))² / (1 + (s_TV − s_EV)²)` with the
/// denominator taken at the current time (`tv_positions[0]`).
pub fn blocking_cost(track: &TrackModel, tv_positions: &[Vector2<f64>], ev: &VehicleState, q_y: f64) -> Result<f64> {
    let Some(first) = tv_positions.first() else { return Ok(0.0) };
    let ev_f = track.global_to_frenet(&ev.position(), ev.phi)?;
    let tv_f = track.global_to_frenet(first, 0.0)?;
    let ds = track.signed_ds(tv_f.s, ev_f.s);
    let mut sum = 0.0;
    let mut hint = tv_f.s;
    for p in tv_positions {
        let f = track.project_near(p, 0.0, hint, 2.0);
        hint = f.s;
        sum += (f.e_y - ev_f.e_y).powi(2);
    }
    Ok(q_y * sum / (1.0 + ds * ds))
}

/// One converged MPCC solve (no warm-start state kept).
#[allow(clippy::too_many_arguments)]
pub fn solve_mpcc(
    track: &TrackModel,
    current: &VehicleState,
    obstacle: Option<&ObstacleForecast>,
    blocking: Option<BlockingTarget>,
    prev_input: VehicleInput,
    config: &MpccConfig,
    vehicle: &VehicleParams,
    geometry: &CollisionGeometry,
    warm_start: Option<&[VehicleInput]>,
) -> Result<MpccSolution> {
    config.validate()?;
    let s0 = track.state_to_curvilinear(current)?.s;
    let problem = sqp::Problem::new(track, vehicle, config, geometry, *current, s0, prev_input, obstacle, blocking)?;
    let init = match warm_start {
        Some(u) if u.len() == config.horizon => sqp::Iterate::from_inputs(u, config.horizon, problem.has_slacks()),
        _ => sqp::Iterate::constant(prev_input, config, problem.has_slacks()),
    };
    let start = Instant::now();
    let mut sol = sqp::solve(&problem, init, config.max_sqp_iterations)?;
    sol.solve_time = start.elapsed().as_secs_f64();
    Ok(sol)
}

/// Receding-horizon MPCC policy with warm starting and failure fallback.
#[derive(Debug, Clone)]
pub struct MpccController {
    config: MpccConfig,
    vehicle: VehicleParams,
    geometry: CollisionGeometry,
    previous: Option<MpccSolution>,
    failures: usize,
    last_s: Option<f64>,
}

impl MpccController {
    pub fn new(config: MpccConfig, vehicle: VehicleParams, geometry: CollisionGeometry) -> Result<Self> {
        config.validate()?;
        vehicle.validate()?;
        Ok(Self { config, vehicle, geometry, previous: None, failures: 0, last_s: None })
    }

    pub fn config(&self) -> &MpccConfig {
        &self.config
    }

    pub fn vehicle(&self) -> &VehicleParams {
        &self.vehicle
    }

    pub fn geometry(&self) -> &CollisionGeometry {
        &self.geometry
    }

    pub fn reset(&mut self) {
        self.previous = None;
        self.failures = 0;
        self.last_s = None;
    }

    /// Most recent plan (after fallback handling).
    pub fn last_solution(&self) -> Option<&MpccSolution> {
        self.previous.as_ref()
    }

    /// Progress of `z` near the last known progress.
    pub fn locate(&self, track: &TrackModel, z: &VehicleState) -> Result<f64> {
        match self.last_s {
            Some(s) => Ok(track.project_near(&z.position(), z.phi, s + self.config.ts * z.v_x, 1.5).s),
            None => Ok(track.state_to_curvilinear(z)?.s),
        }
    }

    /// Computes the plan for the current step. An infeasible subproblem is
    /// retried with penalized constraint relaxation; if that fails too the
    /// fallback applies (shifted previous plan, then braking). Only
    /// non-finite iterates are returned as errors.
    pub fn step(
        &mut self,
        track: &TrackModel,
        current: &VehicleState,
        prev_input: VehicleInput,
        obstacle: Option<&ObstacleForecast>,
        blocking: Option<BlockingTarget>,
    ) -> Result<MpccSolution> {
        let start = Instant::now();
        let s0 = self.locate(track, current)?;
        self.last_s = Some(s0);
        let problem = sqp::Problem::new(
            track,
            &self.vehicle,
            &self.config,
            &self.geometry,
            *current,
            s0,
            prev_input,
            obstacle,
            blocking,
        )?;
        let slacks = problem.has_slacks();
        // Real-time iterations only once a converged plan is being tracked.
        let (init, iterations) = match &self.previous {
            Some(prev) if self.config.real_time_iterations > 0 && self.failures == 0 => {
                (sqp::Iterate::shifted(prev, slacks), self.config.real_time_iterations)
            }
            Some(prev) => (sqp::Iterate::shifted(prev, slacks), self.config.max_sqp_iterations),
            None => (sqp::Iterate::constant(prev_input, &self.config, slacks), self.config.max_sqp_iterations),
        };
        let mut sol = sqp::solve(&problem, init.clone(), iterations)?;
        if sol.status == SolverStatus::InfeasibleQp {
            self.failures += 1;
            let relaxed = problem.relaxed();
            sol = sqp::solve(&relaxed, init.with_relaxation(&relaxed), self.config.max_sqp_iterations)?;
            if sol.status == SolverStatus::InfeasibleQp {
                sol = self.fallback(&problem, current);
            } else {
                sol.status = SolverStatus::Relaxed;
            }
        } else {
            self.failures = 0;
        }
        sol.solve_time = start.elapsed().as_secs_f64();
        self.previous = Some(sol.clone());
        Ok(sol)
    }

    fn fallback(&self, problem: &sqp::Problem, current: &VehicleState) -> MpccSolution {
        let n = self.config.horizon;
        let inputs: Vec<VehicleInput> = if self.failures >= 2 || self.previous.is_none() {
            vec![VehicleInput::new(self.config.u_min[0], 0.0); n]
        } else {
            let prev = &self.previous.as_ref().expect("checked").inputs;
            (0..n).map(|t| prev[(t + 1).min(n - 1)]).collect()
        };
        let mut sol = problem.evaluate_inputs(current, &inputs);
        sol.status = SolverStatus::InfeasibleQp;
        sol
    }
}

#[cfg(test)]
mod tests;
