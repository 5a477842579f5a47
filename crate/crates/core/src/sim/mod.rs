//! Closed-loop two-vehicle race engine and training data generation.
//!
//! Each step: the TV solves its blocking MPCC given the EV's current state,
//! the EV's predictor runs (GT reads the TV plan from this same step), the
//! EV solves its MPCC, both vehicles advance by one RK4 step and the
//! detectors run on the new states.

mod dataset;
mod detect;
mod log;

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use dataset::{generate_dataset, rows_from_log, DataGenConfig, TrainingDataset};
pub use detect::{detect_collision, OvertakeDetector};
pub use log::{RaceLog, RaceSummary, SolverTelemetry, StepRecord};

use crate::error::{Error, Result};
use crate::gp::GpModel;
use crate::mpcc::{BlockingTarget, CollisionGeometry, MpccConfig, MpccController, MpccSolution};
use crate::predict::{cv_states, project_sequence, PredictContext, Predictor, PredictorKind, PredictorSettings};
use crate::track::{CurvilinearState, TrackModel};
use crate::vehicle::{step_rk4, VehicleInput, VehicleParams, VehicleState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    EvWin,
    SafeLoss,
    Crash,
    EvOffTrack,
}

/// Initial curvilinear pose and speed of one vehicle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StartPose {
    pub s: f64,
    pub e_y: f64,
    pub v_x: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StartState {
    pub track_seed: u64,
    pub ev: StartPose,
    pub tv: StartPose,
}

/// Race parameters shared by every race of a study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RaceSettings {
    pub ev_mpcc: MpccConfig,
    /// TV controller; `q_y` is set per race.
    pub tv_mpcc: MpccConfig,
    pub ev_vehicle: VehicleParams,
    pub tv_vehicle: VehicleParams,
    pub predictor: PredictorSettings,
    pub laps: f64,
    pub max_time: f64,
    /// Required lead for an overtake, in EV car lengths.
    pub overtake_lengths: f64,
    /// Time the lead must be held [s].
    pub overtake_hold: f64,
    pub stop_on_overtake: bool,
    pub record_predictions: bool,
    /// Wall-clock solve times make logs non-reproducible, so they are opt-in.
    pub record_timing: bool,
}

impl Default for RaceSettings {
    fn default() -> Self {
        Self {
            ev_mpcc: MpccConfig { q_c: 30.0, ..MpccConfig::default() },
            tv_mpcc: MpccConfig::target_vehicle(0.0),
            ev_vehicle: VehicleParams::default(),
            tv_vehicle: VehicleParams::default(),
            predictor: PredictorSettings::default(),
            laps: 3.0,
            max_time: 60.0,
            overtake_lengths: 1.0,
            overtake_hold: 1.0,
            stop_on_overtake: true,
            record_predictions: true,
            record_timing: false,
        }
    }
}

impl RaceSettings {
    pub fn ts(&self) -> f64 {
        self.ev_mpcc.ts
    }

    pub fn validate(&self) -> Result<()> {
        self.ev_mpcc.validate()?;
        self.tv_mpcc.validate()?;
        self.ev_vehicle.validate()?;
        self.tv_vehicle.validate()?;
        if self.ev_mpcc.ts != self.tv_mpcc.ts {
            return Err(Error::Config("EV and TV sample times differ".into()));
        }
        if !(self.laps > 0.0 && self.max_time > 0.0 && self.overtake_hold >= 0.0 && self.overtake_lengths >= 0.0) {
            return Err(Error::Config("race length and overtake settings must be positive".into()));
        }
        Ok(())
    }

    /// TV controller configuration with blocking weight `q_y`.
    pub fn tv_config(&self, q_y: f64) -> MpccConfig {
        MpccConfig { q_y, use_blocking_cost: q_y > 0.0, use_collision_constraints: false, ..self.tv_mpcc.clone() }
    }
}

#[derive(Debug, Clone)]
pub struct RaceConfig {
    pub track: Arc<TrackModel>,
    pub start: StartState,
    pub predictor: PredictorKind,
    pub q_y: f64,
    pub settings: RaceSettings,
    pub seed: u64,
    pub gp: Option<Arc<GpModel>>,
    /// Open-loop EV inputs replacing the EV controller (held at the last
    /// entry once exhausted).
    pub ev_script: Option<Vec<VehicleInput>>,
}

/// SplitMix64 mix of a master seed and an index.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = master ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn pose_state(track: &TrackModel, p: &StartPose) -> VehicleState {
    track.curvilinear_to_state(&CurvilinearState { s: p.s, e_y: p.e_y, e_phi: 0.0, v_x: p.v_x, v_y: 0.0, omega: 0.0 })
}

impl RaceConfig {
    pub fn validate(&self) -> Result<()> {
        self.settings.validate()?;
        self.predictor.validate()?;
        if self.q_y < 0.0 {
            return Err(Error::Config("q_y must be nonnegative".into()));
        }
        let track = &self.track;
        let half = 0.5 * track.width();
        for (name, p, params) in [
            ("EV", &self.start.ev, &self.settings.ev_vehicle),
            ("TV", &self.start.tv, &self.settings.tv_vehicle),
        ] {
            if p.e_y.abs() + 0.5 * params.width > half || p.v_x < 0.0 {
                return Err(Error::Config(format!("{name} start pose is off the track")));
            }
        }
        if track.signed_ds(self.start.tv.s, self.start.ev.s) <= 0.0 {
            return Err(Error::Config("the TV must start ahead of the EV".into()));
        }
        let ev = pose_state(track, &self.start.ev);
        let tv = pose_state(track, &self.start.tv);
        if detect_collision(&ev, &tv, &self.settings.ev_vehicle, &self.settings.tv_vehicle) {
            return Err(Error::Config("initial poses overlap".into()));
        }
        Ok(())
    }
}

/// Random start: TV anywhere on the track, EV 0.6–1.5 m behind, both
/// within ±0.2 m of the centerline.
pub fn sample_start(track: &TrackModel, track_seed: u64, rng: &mut ChaCha8Rng) -> StartState {
    let s_tv = rng.random_range(0.0..track.length());
    let gap = rng.random_range(0.6..1.5);
    let tv = StartPose { s: s_tv, e_y: rng.random_range(-0.2..0.2), v_x: rng.random_range(0.8..1.5) };
    let ev = StartPose {
        s: track.wrap_s(s_tv - gap),
        e_y: rng.random_range(-0.2..0.2),
        v_x: rng.random_range(0.8..1.5),
    };
    StartState { track_seed, ev, tv }
}

/// Progress tracker with unwrapped progress.
#[derive(Debug, Clone, Copy)]
struct Tracker {
    s: f64,
}

impl Tracker {
    fn locate(&mut self, track: &TrackModel, z: &VehicleState) -> CurvilinearState {
        let f = track.project_near(&z.position(), z.phi, self.s, 1.5);
        self.s += track.signed_ds(f.s, self.s);
        CurvilinearState { s: self.s, e_y: f.e_y, e_phi: f.e_phi, v_x: z.v_x, v_y: z.v_y, omega: z.omega }
    }
}

fn telemetry(sol: &MpccSolution, timing: bool) -> SolverTelemetry {
    SolverTelemetry {
        status: sol.status,
        iterations: sol.iterations,
        kkt_residual: sol.kkt_residual.is_finite().then_some(sol.kkt_residual),
        solve_time: timing.then_some(sol.solve_time),
    }
}

/// EV states over the horizon used to condition the GP: the previous plan
/// shifted by one step, or constant-velocity extrapolation.
fn ev_conditioning(prev: Option<&MpccSolution>, z: &VehicleState, n: usize, ts: f64) -> Vec<VehicleState> {
    match prev {
        Some(sol) if sol.states.len() == n + 1 => {
            let mut s: Vec<VehicleState> = (0..=n).map(|t| sol.states[(t + 1).min(n)]).collect();
            s[0] = *z;
            s
        }
        _ => cv_states(z, n, ts),
    }
}

enum StepEnd {
    Continue,
    Done(Outcome),
}

pub fn run_race(cfg: &RaceConfig) -> Result<RaceLog> {
    cfg.validate()?;
    let track = cfg.track.as_ref();
    let st = &cfg.settings;
    let ts = st.ts();
    let n = st.ev_mpcc.horizon;
    let ev_geom = CollisionGeometry::from_vehicles(&st.ev_vehicle, &st.tv_vehicle);
    let tv_geom = CollisionGeometry::from_vehicles(&st.tv_vehicle, &st.ev_vehicle);
    let tv_cfg = st.tv_config(cfg.q_y);
    let mut tv_ctl = MpccController::new(tv_cfg.clone(), st.tv_vehicle.clone(), tv_geom)?;
    let mut ev_ctl = MpccController::new(st.ev_mpcc.clone(), st.ev_vehicle.clone(), ev_geom)?;
    let mut predictor = Predictor::new(cfg.predictor, cfg.gp.clone(), st.predictor, &tv_cfg, &st.tv_vehicle, ev_geom)?;

    let mut z_ev = pose_state(track, &cfg.start.ev);
    let mut z_tv = pose_state(track, &cfg.start.tv);
    let mut ev_track = Tracker { s: cfg.start.ev.s };
    let mut tv_track = Tracker { s: cfg.start.ev.s + track.signed_ds(cfg.start.tv.s, cfg.start.ev.s) };
    let mut ev_c = ev_track.locate(track, &z_ev);
    let mut tv_c = tv_track.locate(track, &z_tv);
    let (ev_s0, tv_s0) = (ev_c.s, tv_c.s);
    let lap_goal = st.laps * track.length();
    let mut overtake = OvertakeDetector::new(st.overtake_lengths * st.ev_vehicle.length, st.overtake_hold, ts);
    let max_steps = (st.max_time / ts).round() as usize;

    let mut u_ev = VehicleInput::default();
    let mut u_tv = VehicleInput::default();
    let mut records = Vec::with_capacity(max_steps + 1);
    let mut summary = RaceSummary::new(cfg, track);
    let mut end = StepEnd::Continue;

    for k in 0..max_steps {
        let blocking = BlockingTarget { ev_e_y: ev_c.e_y, ds: tv_c.s - ev_c.s };
        let tv_sol = match tv_ctl.step(track, &z_tv, u_tv, None, Some(blocking)) {
            Ok(s) => s,
            Err(e) => {
                summary.abort(k, format!("TV solver: {e}"));
                break;
            }
        };

        let ev_plan_states = ev_conditioning(ev_ctl.last_solution(), &z_ev, n, ts);
        let ev_plan = project_sequence(track, &ev_plan_states, ev_c.s);
        let ctx = PredictContext {
            track,
            tv: &z_tv,
            tv_curvilinear: &tv_c,
            ev_plan: &ev_plan,
            tv_plan: Some(&tv_sol),
            horizon: n,
            ts,
            seed: derive_seed(cfg.seed, k as u64),
        };
        let prediction = match predictor.predict(&ctx) {
            Ok(p) => p,
            Err(e) => {
                summary.abort(k, format!("predictor: {e}"));
                break;
            }
        };

        let (ev_input, ev_tel) = match &cfg.ev_script {
            Some(script) => (script.get(k).or(script.last()).copied().unwrap_or_default(), None),
            None => {
                let forecast = prediction.forecast(&cfg.predictor);
                match ev_ctl.step(track, &z_ev, u_ev, Some(&forecast), None) {
                    Ok(sol) => (sol.first_input(), Some(telemetry(&sol, st.record_timing))),
                    Err(e) => {
                        summary.abort(k, format!("EV solver: {e}"));
                        break;
                    }
                }
            }
        };
        u_ev = ev_input;
        u_tv = tv_sol.first_input();

        records.push(StepRecord {
            step: k,
            time: k as f64 * ts,
            ev: z_ev,
            tv: z_tv,
            ev_curvilinear: ev_c,
            tv_curvilinear: tv_c,
            ev_input: Some(u_ev),
            tv_input: Some(u_tv),
            prediction: st.record_predictions.then_some(prediction),
            ev_solver: ev_tel,
            tv_solver: Some(telemetry(&tv_sol, st.record_timing)),
        });

        let next = step_rk4(&z_ev, &u_ev, ts, &st.ev_vehicle).and_then(|e| Ok((e, step_rk4(&z_tv, &u_tv, ts, &st.tv_vehicle)?)));
        match next {
            Ok((e, t)) => {
                z_ev = e;
                z_tv = t;
            }
            Err(e) => {
                summary.abort(k, format!("integration: {e}"));
                break;
            }
        }
        ev_c = ev_track.locate(track, &z_ev);
        tv_c = tv_track.locate(track, &z_tv);

        let step = k + 1;
        let won = overtake.update(ev_c.s, tv_c.s);
        if detect_collision(&z_ev, &z_tv, &st.ev_vehicle, &st.tv_vehicle) {
            summary.crash_step = Some(step);
            end = StepEnd::Done(Outcome::Crash);
        } else if ev_c.e_y.abs() > 0.5 * track.width() {
            summary.off_track_step = Some(step);
            end = StepEnd::Done(Outcome::EvOffTrack);
        } else if won && summary.overtake_step.is_none() {
            summary.overtake_step = Some(step);
            if st.stop_on_overtake {
                end = StepEnd::Done(Outcome::EvWin);
            }
        }
        if matches!(end, StepEnd::Continue) && (ev_c.s - ev_s0 >= lap_goal || tv_c.s - tv_s0 >= lap_goal) {
            end = StepEnd::Done(if summary.overtake_step.is_some() { Outcome::EvWin } else { Outcome::SafeLoss });
        }
        if let StepEnd::Done(_) = end {
            break;
        }
    }

    records.push(StepRecord {
        step: records.len(),
        time: records.len() as f64 * ts,
        ev: z_ev,
        tv: z_tv,
        ev_curvilinear: ev_c,
        tv_curvilinear: tv_c,
        ev_input: None,
        tv_input: None,
        prediction: None,
        ev_solver: None,
        tv_solver: None,
    });
    summary.outcome = if summary.solver_abort {
        Outcome::Crash
    } else {
        match end {
            StepEnd::Done(o) => o,
            StepEnd::Continue if summary.overtake_step.is_some() => Outcome::EvWin,
            StepEnd::Continue => Outcome::SafeLoss,
        }
    };
    summary.steps = records.len();
    Ok(RaceLog { summary, steps: records })
}

/// Replays the detectors over a log and returns the outcome they imply
/// (solver aborts are taken from the summary flag).
pub fn replay_outcome(log: &RaceLog) -> Outcome {
    let s = &log.summary;
    if s.solver_abort {
        return Outcome::Crash;
    }
    let st = &s.settings;
    let ts = st.ts();
    let width = s.track.width;
    let mut overtake = OvertakeDetector::new(st.overtake_lengths * st.ev_vehicle.length, st.overtake_hold, ts);
    let mut won = false;
    for r in log.steps.iter().skip(1) {
        let o = overtake.update(r.ev_curvilinear.s, r.tv_curvilinear.s);
        if detect_collision(&r.ev, &r.tv, &st.ev_vehicle, &st.tv_vehicle) {
            return Outcome::Crash;
        }
        if r.ev_curvilinear.e_y.abs() > 0.5 * width {
            return Outcome::EvOffTrack;
        }
        if o && st.stop_on_overtake {
            return Outcome::EvWin;
        }
        won |= o;
    }
    if won {
        Outcome::EvWin
    } else {
        Outcome::SafeLoss
    }
}

/// Builds a single race configuration with a random start on `track`.
pub fn random_race(
    track: Arc<TrackModel>,
    track_seed: u64,
    predictor: PredictorKind,
    q_y: f64,
    settings: RaceSettings,
    seed: u64,
    gp: Option<Arc<GpModel>>,
) -> RaceConfig {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, u64::MAX));
    let start = sample_start(&track, track_seed, &mut rng);
    RaceConfig { track, start, predictor, q_y, settings, seed, gp, ev_script: None }
}
