use approx::assert_abs_diff_eq;
use nalgebra::Vector2;

use super::*;
use crate::track::FrenetPose;

fn oval() -> TrackModel {
    TrackModel::oval(20.0, 2.0, 1.1).unwrap()
}

fn geometry() -> CollisionGeometry {
    CollisionGeometry::from_vehicles(&VehicleParams::default(), &VehicleParams::default())
}

fn at(track: &TrackModel, s: f64, e_y: f64, v_x: f64) -> VehicleState {
    let (p, phi) = track.frenet_to_global(&FrenetPose { s, e_y, e_phi: 0.0 });
    VehicleState { p_x: p.x, p_y: p.y, phi, v_x, ..Default::default() }
}

fn ev_config() -> MpccConfig {
    MpccConfig { real_time_iterations: 0, ..MpccConfig::default() }
}

#[test]
fn contouring_error_sign_and_zero() {
    let track = oval();
    for &s in &[1.0, 22.5, 30.0] {
        let c = track.centerline(s);
        assert_abs_diff_eq!(contouring_error(&track, &c.position, s), 0.0, epsilon = 1e-12);
        let p = c.position + 0.3 * c.normal();
        assert_abs_diff_eq!(contouring_error(&track, &p, s), -0.3, epsilon = 1e-12);
    }
}

#[test]
fn contouring_error_converges_to_projection() {
    let track = oval();
    let s_p = 23.0;
    let c = track.centerline(s_p);
    let p = c.position + 0.25 * c.normal();
    let exact = track.global_to_frenet(&p, 0.0).unwrap();
    let mut prev = f64::INFINITY;
    for d in [0.3, 0.1, 0.01, 0.001] {
        let gap = (contouring_error(&track, &p, s_p + d) + exact.e_y).abs();
        assert!(gap < prev);
        prev = gap;
    }
    assert!(prev < 1e-5);
}

#[test]
fn progress_examples() {
    assert_abs_diff_eq!(progress_dynamics(0.0, 2.0, 0.1), 0.2, epsilon = 1e-15);
    assert_eq!(progress_dynamics(3.7, 0.0, 0.1), 3.7);
    let v = [1.0, 1.5, 2.0, 0.5];
    let end = v.iter().fold(0.4, |s, &vx| progress_dynamics(s, vx, 0.1));
    assert_abs_diff_eq!(end, 0.4 + 0.1 * v.iter().sum::<f64>(), epsilon = 1e-12);
}

#[test]
fn blocking_cost_examples() {
    let track = oval();
    let ev = at(&track, 5.0, 0.1, 1.0);
    let tv = |ds: f64, e_y: f64| -> Vec<Vector2<f64>> {
        (0..=10).map(|t| at(&track, 5.0 + ds + 0.1 * t as f64, e_y, 1.0).position()).collect()
    };
    assert_abs_diff_eq!(blocking_cost(&track, &tv(0.0, 0.1), &ev, 200.0).unwrap(), 0.0, epsilon = 1e-12);
    let base = blocking_cost(&track, &tv(0.0, -0.2), &ev, 200.0).unwrap();
    assert_abs_diff_eq!(base, 11.0 * 200.0 * 0.09, epsilon = 1e-9);
    let far = blocking_cost(&track, &tv(3.0, -0.2), &ev, 200.0).unwrap();
    assert_abs_diff_eq!(far, base / 10.0, epsilon = 1e-9);
}

#[test]
fn eps_one_recovers_nominal_constraint() {
    let g = geometry();
    let (a, b) = g.nominal_axes();
    let ev = VehicleState { p_x: 0.3, p_y: 0.1, phi: 0.2, ..Default::default() };
    let tv = VehicleState { p_x: 0.0, p_y: 0.0, phi: -0.1, ..Default::default() };
    let axes = expanded_semi_axes(0.04, 0.01, 0.3, 2.0, 1.0, a, b);
    assert_eq!(axes, (a, b));
    for j in 0..4 {
        let h1 = ellipse_constraint(&ev, &tv, axes, &g, j);
        let h0 = ellipse_constraint(&ev, &tv, (a, b), &g, j);
        assert_eq!(h1 > 0.0, h0 > 0.0);
        assert_eq!(h1, h0);
    }
}

fn straight_solve(warm: Option<&[VehicleInput]>) -> MpccSolution {
    let track = oval();
    let z0 = at(&track, 1.0, 0.0, 1.0);
    let cfg = MpccConfig { use_collision_constraints: false, ..ev_config() };
    let p = VehicleParams::default();
    solve_mpcc(&track, &z0, None, None, VehicleInput::default(), &cfg, &p, &geometry(), warm).unwrap()
}

#[test]
fn straight_track_progress_and_acceleration() {
    let sol = straight_solve(None);
    assert_eq!(sol.status, SolverStatus::Optimal, "{sol:?}");
    assert!(sol.progress[10] - sol.progress[0] > 0.0);
    // u_{N−1} only moves z_N, which no longer contributes progress.
    for t in 0..9 {
        let (v0, v1) = (sol.states[t].v_x, sol.states[t + 1].v_x);
        assert!(v1 >= v0 - 1e-6 || v0 >= 2.8 - 1e-3, "t={t}: {v0} -> {v1}");
    }
    assert!(sol.dynamics_residual(0.1, &VehicleParams::default()) < 1e-5);
    for u in &sol.inputs {
        assert!((-2.0..=4.0).contains(&u.force) && (-0.35..=0.35).contains(&u.steer));
    }
}

#[test]
fn warm_starts_agree() {
    let a = straight_solve(None);
    let warm = vec![VehicleInput::new(1.0, 0.05); 10];
    let b = straight_solve(Some(&warm));
    assert_eq!(b.status, SolverStatus::Optimal);
    assert!((a.cost - b.cost).abs() < 1e-4, "{} vs {}", a.cost, b.cost);
}

fn blocker_scenario(q_scale: f64, growth: (f64, f64), gap: f64, tv_speed: f64) -> (MpccSolution, ObstacleForecast) {
    let track = TrackModel::oval(20.0, 2.0, 0.8).unwrap();
    let z0 = at(&track, 1.0, 0.0, 1.5);
    let states = (0..=10).map(|t| at(&track, 1.0 + gap + 0.1 * t as f64 * tv_speed, 0.0, tv_speed)).collect();
    let forecast = ObstacleForecast { states, growth: vec![growth; 11] };
    let cfg = MpccConfig {
        q_eps_quad: 100.0 * q_scale,
        q_eps_lin: 10.0 * q_scale,
        ..ev_config()
    };
    let p = VehicleParams::default();
    let sol = solve_mpcc(&track, &z0, Some(&forecast), None, VehicleInput::default(), &cfg, &p, &geometry(), None)
        .unwrap();
    (sol, forecast)
}

#[test]
fn parked_blocker_is_avoided() {
    let g = geometry();
    let (sol, forecast) = blocker_scenario(1e4, (0.1, 0.1), 1.9, 0.0);
    assert_ne!(sol.status, SolverStatus::InfeasibleQp);
    for t in 1..=10 {
        let (a, b) = g.nominal_axes();
        let eps = sol.slacks[t];
        let axes = (a + 0.1 * (1.0 - eps), b + 0.1 * (1.0 - eps));
        for j in 0..4 {
            let h = ellipse_constraint(&sol.states[t], &forecast.states[t], axes, &g, j);
            assert!(h <= 1e-6, "t={t} j={j} h={h}");
        }
    }
    assert!(sol.states[10].v_x < sol.states[0].v_x);
}

#[test]
fn larger_slack_weights_never_increase_slack() {
    let total = |s: &MpccSolution| s.slacks.iter().sum::<f64>();
    let (lo, _) = blocker_scenario(0.01, (0.5, 0.5), 1.2, 1.2);
    let (hi, _) = blocker_scenario(0.1, (0.5, 0.5), 1.2, 1.2);
    assert!(total(&lo) > 1e-3, "scenario does not use slack: {lo:?}");
    assert!(total(&hi) <= total(&lo) + 1e-6, "{} > {}", total(&hi), total(&lo));
}

#[test]
fn closed_loop_laps_stay_on_track() {
    let track = oval();
    let p = VehicleParams::default();
    let cfg = MpccConfig { use_collision_constraints: false, ..MpccConfig::default() };
    let mut ctl = MpccController::new(cfg, p.clone(), geometry()).unwrap();
    let mut z = at(&track, 0.5, 0.0, 0.5);
    let mut u = VehicleInput::default();
    let mut travelled = 0.0;
    let mut s_prev = 0.5;
    for _ in 0..300 {
        let sol = ctl.step(&track, &z, u, None, None).unwrap();
        u = sol.first_input();
        z = crate::vehicle::step_rk4(&z, &u, 0.1, &p).unwrap();
        let f = track.project_near(&z.position(), z.phi, s_prev, 1.5);
        assert!(f.e_y.abs() < 0.55, "off track: {f:?}");
        travelled += track.signed_ds(f.s, s_prev);
        s_prev = f.s;
    }
    assert!(travelled > 30.0, "travelled {travelled}");
}
