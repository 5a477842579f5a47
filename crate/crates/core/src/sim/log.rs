//! Race log records and their NDJSON representation: one summary line
//! followed by one line per step.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::{Outcome, RaceConfig, RaceSettings, StartState};
use crate::error::{Error, Result};
use crate::mpcc::SolverStatus;
use crate::predict::{PredictionResult, PredictorKind};
use crate::track::{CurvilinearState, TrackModel, TrackSpec};
use crate::vehicle::{VehicleInput, VehicleState};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverTelemetry {
    pub status: SolverStatus,
    pub iterations: usize,
    /// `None` when the solver did not produce a finite residual.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub kkt_residual: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub solve_time: Option<f64>,
}

/// States at `time` and the inputs applied from `time` on. The final record
/// holds the terminal states only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub time: f64,
    pub ev: VehicleState,
    pub tv: VehicleState,
    /// Curvilinear states with unwrapped progress.
    pub ev_curvilinear: CurvilinearState,
    pub tv_curvilinear: CurvilinearState,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub ev_input: Option<VehicleInput>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub tv_input: Option<VehicleInput>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub prediction: Option<PredictionResult>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub ev_solver: Option<SolverTelemetry>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub tv_solver: Option<SolverTelemetry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RaceSummary {
    pub outcome: Outcome,
    /// A solver or integrator failure ended the race; counted as a crash.
    pub solver_abort: bool,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub abort_reason: Option<String>,
    pub overtake_step: Option<usize>,
    pub crash_step: Option<usize>,
    pub off_track_step: Option<usize>,
    /// Number of step records (states), including the terminal one.
    pub steps: usize,
    pub predictor: PredictorKind,
    pub q_y: f64,
    pub seed: u64,
    pub start: StartState,
    pub track: TrackSpec,
    pub settings: RaceSettings,
}

impl RaceSummary {
    pub(crate) fn new(cfg: &RaceConfig, track: &TrackModel) -> Self {
        Self {
            outcome: Outcome::SafeLoss,
            solver_abort: false,
            abort_reason: None,
            overtake_step: None,
            crash_step: None,
            off_track_step: None,
            steps: 0,
            predictor: cfg.predictor,
            q_y: cfg.q_y,
            seed: cfg.seed,
            start: cfg.start,
            track: track.to_spec(),
            settings: cfg.settings.clone(),
        }
    }

    pub(crate) fn abort(&mut self, step: usize, reason: String) {
        log::warn!("race aborted at step {step}: {reason}");
        self.solver_abort = true;
        self.crash_step = Some(step);
        self.abort_reason = Some(reason);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RaceLog {
    pub summary: RaceSummary,
    pub steps: Vec<StepRecord>,
}

#[derive(Serialize, Deserialize)]
struct SummaryLine {
    summary: RaceSummary,
}

impl RaceLog {
    pub fn outcome(&self) -> Outcome {
        self.summary.outcome
    }

    /// EV longitudinal speeds, one per record.
    pub fn ev_speeds(&self) -> Vec<f64> {
        self.steps.iter().map(|r| r.ev.v_x).collect()
    }

    pub fn write_ndjson<W: Write>(&self, mut w: W) -> Result<()> {
        serde_json::to_writer(&mut w, &SummaryLine { summary: self.summary.clone() })?;
        writeln!(w)?;
        for r in &self.steps {
            serde_json::to_writer(&mut w, r)?;
            writeln!(w)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_ndjson<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let first = lines.next().ok_or_else(|| Error::Format("empty race log".into()))??;
        let summary = serde_json::from_str::<SummaryLine>(&first)?.summary;
        let mut steps = Vec::with_capacity(summary.steps);
        for line in lines {
            let line = line?;
            if !line.trim().is_empty() {
                steps.push(serde_json::from_str(&line)?);
            }
        }
        Ok(Self { summary, steps })
    }
}
