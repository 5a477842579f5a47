//! Condensed Gauss–Newton SQP for the MPCC problem.
//!
//! Decision vector: `δ = [δu_0 .. δu_{N−1}, δε_1 .. δε_N, δσ_1 .. δσ_N]`; the
//! `ε` block is present only when avoidance constraints are active and the
//! `σ` block only in the relaxed problem, where `σ_t ≥ 0` loosens every
//! track, speed and avoidance row of step `t` at an exact-penalty cost.
//! States are eliminated through the RK4 sensitivities
//! `S_{t+1} = A_t S_t + B_t E_t`.

use nalgebra::{DMatrix, DVector, Matrix2, Matrix6, Matrix6xX, Vector2};

use super::{BlockingTarget, CollisionGeometry, MpccConfig, MpccSolution, ObstacleForecast, SolverStatus};
use crate::error::{Error, Result};
use crate::qp::{solve_qp, QpSettings};
use crate::track::{FrenetPose, TrackModel};
use crate::vehicle::{step_rk4, step_rk4_jacobian, Matrix6x2, VehicleInput, VehicleParams, VehicleState};

const MIN_STEP: f64 = 1.0 / 64.0;
const ARMIJO: f64 = 1e-4;
const REGULARIZATION: f64 = 1e-9;
const PROJECTION_WINDOW: f64 = 1.0;

#[derive(Clone)]
pub(crate) struct Problem<'a> {
    track: &'a TrackModel,
    vehicle: &'a VehicleParams,
    config: &'a MpccConfig,
    geometry: &'a CollisionGeometry,
    z0: VehicleState,
    s0: f64,
    u_prev: Vector2<f64>,
    obstacle: Option<&'a ObstacleForecast>,
    blocking: Option<BlockingTarget>,
    r: Matrix2<f64>,
    r_d: Matrix2<f64>,
    half_width: f64,
    /// Penalty weight of the relaxation, when relaxed.
    relax: Option<f64>,
}

#[derive(Debug, Clone)]
pub(crate) struct Iterate {
    u: Vec<Vector2<f64>>,
    /// `ε_1..ε_N`, empty without avoidance constraints.
    eps: Vec<f64>,
    /// `σ_1..σ_N`, empty unless relaxed.
    sigma: Vec<f64>,
}

impl Iterate {
    pub(crate) fn constant(u: VehicleInput, config: &MpccConfig, slacks: bool) -> Self {
        let u = u.to_vector();
        let n = config.horizon;
        Self { u: vec![u; n], eps: if slacks { vec![0.0; n] } else { Vec::new() }, sigma: Vec::new() }
    }

    pub(crate) fn from_inputs(u: &[VehicleInput], n: usize, slacks: bool) -> Self {
        Self {
            u: u.iter().map(VehicleInput::to_vector).collect(),
            eps: if slacks { vec![0.0; n] } else { Vec::new() },
            sigma: Vec::new(),
        }
    }

    /// Previous plan advanced by one step, last input repeated.
    pub(crate) fn shifted(prev: &MpccSolution, slacks: bool) -> Self {
        let n = prev.inputs.len();
        let u = (0..n).map(|t| prev.inputs[(t + 1).min(n - 1)].to_vector()).collect();
        let eps = if !slacks {
            Vec::new()
        } else if prev.slacks.len() == n + 1 {
            (1..=n).map(|t| prev.slacks[(t + 1).min(n)]).collect()
        } else {
            vec![0.0; n]
        };
        Self { u, eps, sigma: Vec::new() }
    }

    /// Same inputs and slacks with the relaxation block sized for `p`.
    pub(crate) fn with_relaxation(&self, p: &Problem) -> Self {
        let sigma = if p.relax.is_some() { vec![0.0; self.u.len()] } else { Vec::new() };
        Self { sigma, ..self.clone() }
    }

    fn clamp(&mut self, c: &MpccConfig) {
        for u in &mut self.u {
            for k in 0..2 {
                u[k] = u[k].clamp(c.u_min[k], c.u_max[k]);
            }
        }
        for e in &mut self.eps {
            *e = e.clamp(0.0, 1.0);
        }
        for s in &mut self.sigma {
            *s = s.max(0.0);
        }
    }

    fn to_vector(&self) -> DVector<f64> {
        DVector::from_iterator(
            2 * self.u.len() + self.eps.len() + self.sigma.len(),
            self.u.iter().flat_map(|u| [u.x, u.y]).chain(self.eps.iter().copied()).chain(self.sigma.iter().copied()),
        )
    }

    fn stepped(&self, d: &DVector<f64>, alpha: f64) -> Self {
        let nu = 2 * self.u.len();
        let ne = nu + self.eps.len();
        Self {
            u: self.u.iter().enumerate().map(|(t, u)| u + alpha * Vector2::new(d[2 * t], d[2 * t + 1])).collect(),
            eps: self.eps.iter().enumerate().map(|(i, e)| e + alpha * d[nu + i]).collect(),
            sigma: self.sigma.iter().enumerate().map(|(i, s)| s + alpha * d[ne + i]).collect(),
        }
    }
}

struct Trajectory {
    z: Vec<VehicleState>,
    /// Approximate progress `s̄_t`, unwrapped.
    s_bar: Vec<f64>,
    /// Projection of each state onto the centerline.
    frenet: Vec<FrenetPose>,
    jac: Option<(Vec<Matrix6<f64>>, Vec<Matrix6x2>)>,
}

struct Linearization {
    h: DMatrix<f64>,
    g: DVector<f64>,
    c: DMatrix<f64>,
    b: DVector<f64>,
}

impl<'a> Problem<'a> {
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn new(
        track: &'a TrackModel,
        vehicle: &'a VehicleParams,
        config: &'a MpccConfig,
        geometry: &'a CollisionGeometry,
        z0: VehicleState,
        s0: f64,
        u_prev: VehicleInput,
        obstacle: Option<&'a ObstacleForecast>,
        blocking: Option<BlockingTarget>,
    ) -> Result<Self> {
        if !z0.is_finite() {
            return Err(Error::NonFiniteState);
        }
        let n = config.horizon;
        if let Some(o) = obstacle {
            let got = o.states.len().min(o.growth.len());
            if got < n + 1 {
                return Err(Error::DimensionMismatch { expected: n + 1, got });
            }
        }
        let m2 = |m: &[[f64; 2]; 2]| Matrix2::new(m[0][0], m[0][1], m[1][0], m[1][1]);
        Ok(Self {
            track,
            vehicle,
            config,
            geometry,
            z0,
            s0,
            u_prev: u_prev.to_vector(),
            obstacle: if config.use_collision_constraints { obstacle } else { None },
            blocking: if config.use_blocking_cost && config.q_y > 0.0 { blocking } else { None },
            r: m2(&config.r),
            r_d: m2(&config.r_d),
            half_width: 0.5 * track.width() - config.track_margin,
            relax: None,
        })
    }

    /// The same problem with penalized constraint relaxation.
    pub(crate) fn relaxed(&self) -> Self {
        Self { relax: Some(self.config.relaxation_penalty), ..self.clone() }
    }

    pub(crate) fn has_slacks(&self) -> bool {
        self.obstacle.is_some()
    }

    fn horizon(&self) -> usize {
        self.config.horizon
    }

    fn rollout(&self, u: &[Vector2<f64>], with_jac: bool) -> Result<Trajectory> {
        let n = self.horizon();
        let ts = self.config.ts;
        let mut z = Vec::with_capacity(n + 1);
        let mut s_bar = Vec::with_capacity(n + 1);
        let (mut a, mut b) = (Vec::new(), Vec::new());
        z.push(self.z0);
        s_bar.push(self.s0);
        for t in 0..n {
            let input = VehicleInput::from_vector(&u[t]);
            let next = if with_jac {
                let (next, at, bt) = step_rk4_jacobian(&z[t], &input, ts, self.vehicle)?;
                a.push(at);
                b.push(bt);
                next
            } else {
                step_rk4(&z[t], &input, ts, self.vehicle)?
            };
            s_bar.push(s_bar[t] + ts * z[t].v_x);
            z.push(next);
        }
        let mut frenet: Vec<FrenetPose> = Vec::with_capacity(n + 1);
        for t in 0..=n {
            let hint = match t {
                0 => self.s0,
                _ => frenet[t - 1].s + ts * z[t - 1].v_x,
            };
            frenet.push(self.track.project_near(&z[t].position(), z[t].phi, hint, PROJECTION_WINDOW));
        }
        Ok(Trajectory { z, s_bar, frenet, jac: with_jac.then_some((a, b)) })
    }

    fn blocking_weight(&self) -> Option<(f64, f64)> {
        self.blocking.map(|b| (self.config.q_y / (1.0 + b.ds * b.ds), b.ev_e_y))
    }

    /// Semi-axes for step `t` at slack `eps`, and their growth at zero slack.
    fn axes(&self, o: &ObstacleForecast, t: usize, eps: f64) -> ((f64, f64), (f64, f64)) {
        let (a0, b0) = self.geometry.nominal_axes();
        let (ga, gb) = o.growth[t];
        ((a0 + ga * (1.0 - eps), b0 + gb * (1.0 - eps)), (ga, gb))
    }

    /// Objective and total constraint violation (excluding the linear
    /// input and slack bounds, which every iterate satisfies).
    fn evaluate(&self, it: &Iterate, tr: &Trajectory) -> (f64, f64) {
        let c = self.config;
        let n = self.horizon();
        let mut f = -c.q_s * tr.s_bar[n];
        for t in 0..n {
            let ec = super::contouring_error(self.track, &tr.z[t].position(), tr.s_bar[t]);
            f += c.q_c * ec * ec;
            let u = it.u[t];
            f += u.dot(&(self.r * u));
            let du = u - if t == 0 { self.u_prev } else { it.u[t - 1] };
            f += du.dot(&(self.r_d * du));
        }
        for e in &it.eps {
            f += 0.5 * c.q_eps_quad * e * e + c.q_eps_lin * e;
        }
        if let Some(rho) = self.relax {
            f += it.sigma.iter().map(|s| rho * (s + 0.5 * s * s)).sum::<f64>();
        }
        if let Some((w, ev)) = self.blocking_weight() {
            for t in 0..=n {
                f += w * (tr.frenet[t].e_y - ev).powi(2);
            }
        }

        let mut viol = 0.0;
        for t in 1..=n {
            let sigma = it.sigma.get(t - 1).copied().unwrap_or(0.0);
            viol += (tr.frenet[t].e_y.abs() - self.half_width - sigma).max(0.0);
            viol += (tr.z[t].v_x - c.v_max - sigma).max(0.0);
            if let Some(o) = self.obstacle {
                let (axes, _) = self.axes(o, t, it.eps[t - 1]);
                for j in 0..4 {
                    viol += (super::ellipse_constraint(&tr.z[t], &o.states[t], axes, self.geometry, j) - sigma).max(0.0);
                }
            }
        }
        (f, viol)
    }

    fn linearize(&self, it: &Iterate, tr: &Trajectory) -> Linearization {
        let c = self.config;
        let n = self.horizon();
        let nu = 2 * n;
        let ne = it.eps.len();
        let ns = it.sigma.len();
        let nv = nu + ne + ns;
        // Column of σ_t, if relaxed.
        let sig = |t: usize| (ns > 0).then(|| nu + ne + t - 1);
        let ts = c.ts;
        let (a_mats, b_mats) = tr.jac.as_ref().expect("linearization needs Jacobians");

        // Sensitivities of states and approximate progress.
        let mut sens: Vec<Matrix6xX<f64>> = Vec::with_capacity(n + 1);
        let mut prog: Vec<DVector<f64>> = Vec::with_capacity(n + 1);
        sens.push(Matrix6xX::zeros(nu));
        prog.push(DVector::zeros(nu));
        for t in 0..n {
            let mut next = a_mats[t] * &sens[t];
            next.columns_mut(2 * t, 2).copy_from(&b_mats[t]);
            let mut g = prog[t].clone();
            g.axpy(ts, &sens[t].row(3).transpose(), 1.0);
            sens.push(next);
            prog.push(g);
        }

        let mut h = DMatrix::<f64>::zeros(nv, nv);
        let mut g = DVector::<f64>::zeros(nv);
        let pad = |v: DVector<f64>| {
            let mut out = DVector::zeros(nv);
            out.rows_mut(0, nu).copy_from(&v);
            out
        };

        // Contouring error, Gauss–Newton.
        for t in 0..n {
            let cp = self.track.centerline(tr.s_bar[t]);
            let p = tr.z[t].position();
            let diff = p - cp.position;
            let (sp, cph) = cp.heading.sin_cos();
            let ec = sp * diff.x - cph * diff.y;
            let lag = cph * diff.x + sp * diff.y;
            let s = &sens[t];
            let j = sp * s.row(0).transpose() - cph * s.row(1).transpose() + cp.curvature * lag * &prog[t];
            h.view_mut((0, 0), (nu, nu)).ger(2.0 * c.q_c, &j, &j, 1.0);
            g.rows_mut(0, nu).axpy(2.0 * c.q_c * ec, &j, 1.0);
        }

        // Input magnitude and rate.
        for t in 0..n {
            let i = 2 * t;
            let u = it.u[t];
            let mut hb = h.fixed_view_mut::<2, 2>(i, i);
            hb += 2.0 * (self.r + self.r_d);
            let du = u - if t == 0 { self.u_prev } else { it.u[t - 1] };
            let gr = 2.0 * (self.r * u + self.r_d * du);
            g[i] += gr.x;
            g[i + 1] += gr.y;
            if t > 0 {
                let rd2 = 2.0 * self.r_d;
                let mut prev = h.fixed_view_mut::<2, 2>(i - 2, i - 2);
                prev += rd2;
                let mut off = h.fixed_view_mut::<2, 2>(i, i - 2);
                off -= rd2;
                let mut off_t = h.fixed_view_mut::<2, 2>(i - 2, i);
                off_t -= rd2;
                let gd = rd2 * du;
                g[i - 2] -= gd.x;
                g[i - 1] -= gd.y;
            }
        }

        // Progress reward.
        g.rows_mut(0, nu).axpy(-c.q_s, &prog[n], 1.0);

        // Slack cost.
        for (k, e) in it.eps.iter().enumerate() {
            h[(nu + k, nu + k)] += c.q_eps_quad;
            g[nu + k] += c.q_eps_quad * e + c.q_eps_lin;
        }
        if let Some(rho) = self.relax {
            for (k, s) in it.sigma.iter().enumerate() {
                h[(nu + ne + k, nu + ne + k)] += rho;
                g[nu + ne + k] += rho * (1.0 + s);
            }
        }

        // Lateral offset rows, reused by the blocking cost and track limits.
        let lateral: Vec<DVector<f64>> = (0..=n)
            .map(|t| {
                let nrm = self.track.centerline(tr.frenet[t].s).normal();
                nrm.x * sens[t].row(0).transpose() + nrm.y * sens[t].row(1).transpose()
            })
            .collect();

        if let Some((w, ev)) = self.blocking_weight() {
            for t in 1..=n {
                let j = &lateral[t];
                h.view_mut((0, 0), (nu, nu)).ger(2.0 * w, j, j, 1.0);
                g.rows_mut(0, nu).axpy(2.0 * w * (tr.frenet[t].e_y - ev), j, 1.0);
            }
        }

        for i in 0..nv {
            h[(i, i)] += REGULARIZATION;
        }

        // Constraints as rows of C δ ≥ b.
        let mut rows: Vec<(DVector<f64>, f64)> = Vec::new();
        let unit = |i: usize, s: f64| {
            let mut r = DVector::zeros(nv);
            r[i] = s;
            r
        };
        for t in 0..n {
            for k in 0..2 {
                let i = 2 * t + k;
                let u = it.u[t][k];
                rows.push((unit(i, 1.0), c.u_min[k] - u));
                rows.push((unit(i, -1.0), u - c.u_max[k]));
            }
        }
        for (k, e) in it.eps.iter().enumerate() {
            rows.push((unit(nu + k, 1.0), -e));
            rows.push((unit(nu + k, -1.0), e - 1.0));
        }
        for (k, s) in it.sigma.iter().enumerate() {
            rows.push((unit(nu + ne + k, 1.0), -s));
        }
        // Relaxed rows read `row·δ + δσ_t ≥ b − σ_t`.
        let relax_row = |mut row: DVector<f64>, b: f64, t: usize| match sig(t) {
            Some(i) => {
                row[i] = 1.0;
                (row, b - it.sigma[t - 1])
            }
            None => (row, b),
        };
        for t in 1..=n {
            let ey = tr.frenet[t].e_y;
            rows.push(relax_row(pad(lateral[t].clone()), -self.half_width - ey, t));
            rows.push(relax_row(pad(-lateral[t].clone()), ey - self.half_width, t));
            rows.push(relax_row(pad(-sens[t].row(3).transpose()), tr.z[t].v_x - c.v_max, t));
        }
        if let Some(o) = self.obstacle {
            for t in 1..=n {
                let ev = &tr.z[t];
                let tv = &o.states[t];
                let eps = it.eps[t - 1];
                let ((a, b), (ga, gb)) = self.axes(o, t, eps);
                let (sp, cp) = tv.phi.sin_cos();
                let (se, ce) = ev.phi.sin_cos();
                for j in 0..4 {
                    let r = self.geometry.disc_offsets[j];
                    let center = self.geometry.disc_center(ev, j);
                    let (lon, lat) = super::body_frame_offset(&center, tv);
                    let hbar = 1.0 - (lon / a).powi(2) - (lat / b).powi(2);
                    let kl = -2.0 * lon / (a * a);
                    let kt = -2.0 * lat / (b * b);
                    let dh_dx = kl * cp - kt * sp;
                    let dh_dy = kl * sp + kt * cp;
                    let dh_dphi = r * (-dh_dx * se + dh_dy * ce);
                    let dh_deps = -2.0 * lon * lon * ga / (a * a * a) - 2.0 * lat * lat * gb / (b * b * b);
                    let s = &sens[t];
                    let grad = dh_dx * s.row(0).transpose() + dh_dy * s.row(1).transpose() + dh_dphi * s.row(2).transpose();
                    let mut row = pad(-grad);
                    row[nu + t - 1] = -dh_deps;
                    rows.push(relax_row(row, hbar, t));
                }
            }
        }
        let mut cm = DMatrix::zeros(rows.len(), nv);
        let mut bv = DVector::zeros(rows.len());
        for (i, (row, bi)) in rows.into_iter().enumerate() {
            cm.row_mut(i).copy_from(&row.transpose());
            bv[i] = bi;
        }
        Linearization { h, g, c: cm, b: bv }
    }

    fn solution(&self, it: &Iterate, tr: &Trajectory, status: SolverStatus, iterations: usize, kkt: f64) -> MpccSolution {
        let (cost, _) = self.evaluate(it, tr);
        let mut slacks = vec![0.0];
        if it.eps.is_empty() {
            slacks.extend(std::iter::repeat_n(0.0, self.horizon()));
        } else {
            slacks.extend(&it.eps);
        }
        MpccSolution {
            inputs: it.u.iter().map(VehicleInput::from_vector).collect(),
            states: tr.z.clone(),
            progress: tr.s_bar.clone(),
            slacks,
            status,
            iterations,
            kkt_residual: kkt,
            cost,
            solve_time: 0.0,
        }
    }

    /// Open-loop evaluation of a fixed input sequence (used by the fallback).
    pub(crate) fn evaluate_inputs(&self, z0: &VehicleState, inputs: &[VehicleInput]) -> MpccSolution {
        let it = Iterate::from_inputs(inputs, self.horizon(), self.has_slacks());
        match self.rollout(&it.u, false) {
            Ok(tr) => self.solution(&it, &tr, SolverStatus::InfeasibleQp, 0, f64::INFINITY),
            Err(_) => {
                let n = self.horizon();
                MpccSolution {
                    inputs: inputs.to_vec(),
                    states: vec![*z0; n + 1],
                    progress: vec![self.s0; n + 1],
                    slacks: vec![0.0; n + 1],
                    status: SolverStatus::InfeasibleQp,
                    iterations: 0,
                    kkt_residual: f64::INFINITY,
                    cost: f64::INFINITY,
                    solve_time: 0.0,
                }
            }
        }
    }
}

fn non_finite(e: Error) -> Error {
    match e {
        Error::NonFiniteState => Error::NonFiniteIterate,
        other => other,
    }
}

/// Runs at most `max_iterations` SQP iterations from `init`.
pub(crate) fn solve(p: &Problem, mut it: Iterate, max_iterations: usize) -> Result<MpccSolution> {
    it.clamp(p.config);
    let tol = p.config.tolerance;
    let mut tr = p.rollout(&it.u, true).map_err(non_finite)?;
    let mut mu: f64 = 10.0;
    let mut status = SolverStatus::MaxIterations;
    let mut kkt = f64::INFINITY;
    let mut iterations = 0;
    let settings = QpSettings::default();

    for k in 0..max_iterations {
        iterations = k + 1;
        let lin = p.linearize(&it, &tr);
        let qp = match solve_qp(&lin.h, &lin.g, &lin.c, &lin.b, &settings) {
            Ok(q) => q,
            Err(Error::SolverFailed(_)) => {
                if k == 0 {
                    status = SolverStatus::InfeasibleQp;
                }
                break;
            }
            Err(e) => return Err(e),
        };
        let d = qp.x;
        if !d.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFiniteIterate);
        }
        let (f0, v0) = p.evaluate(&it, &tr);
        let step = d.amax();
        kkt = (&lin.h * &d).amax().max(v0);
        if step < tol || kkt < tol {
            status = SolverStatus::Optimal;
            break;
        }

        let lam_max = qp.multipliers.amax();
        mu = mu.max(2.0 * lam_max);
        let phi0 = f0 + mu * v0;
        let slope = lin.g.dot(&d) - mu * v0;
        let mut alpha = 1.0;
        let mut accepted = None;
        while alpha >= MIN_STEP {
            let trial = it.stepped(&d, alpha);
            if let Ok(trial_tr) = p.rollout(&trial.u, false) {
                let (f, v) = p.evaluate(&trial, &trial_tr);
                if f.is_finite() && f + mu * v <= phi0 + ARMIJO * alpha * slope.min(0.0) {
                    accepted = Some(trial);
                    break;
                }
            }
            alpha *= 0.5;
        }
        match accepted {
            Some(next) => {
                it = next;
                it.clamp(p.config);
                tr = p.rollout(&it.u, true).map_err(non_finite)?;
                if !it.to_vector().iter().all(|v| v.is_finite()) {
                    return Err(Error::NonFiniteIterate);
                }
            }
            None => break,
        }
    }
    Ok(p.solution(&it, &tr, status, iterations, kkt))
}
