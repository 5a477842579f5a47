//! Monte Carlo race studies over predictor and blocking-weight sweeps,
//! outcome and prediction-error metrics, and report files.

mod report;

use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use report::{emit_reports, render_svg};

use crate::error::{Error, Result};
use crate::gp::GpModel;
use crate::predict::PredictorKind;
use crate::sim::{derive_seed, run_race, sample_start, Outcome, RaceConfig, RaceLog, RaceSettings, StartState};
use crate::track::{random_track, RandomTrackParams, TrackModel, TrackSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub predictors: Vec<PredictorKind>,
    pub q_y: Vec<f64>,
    /// Races per cell; every cell uses the same starts.
    pub races: usize,
    pub seed: u64,
    /// Random track per start unless a fixed track is given.
    pub tracks: RandomTrackParams,
    pub track: Option<TrackSpec>,
    pub settings: RaceSettings,
    pub gp_model: Option<PathBuf>,
    /// Horizon steps evaluated for prediction errors; empty means `{2, N}`.
    pub error_steps: Vec<usize>,
    /// Interaction filter: `|Δs|` at most this many car lengths.
    pub interaction_lengths: f64,
    pub histogram_bins: usize,
    /// Histogram half-ranges [m] for longitudinal and lateral errors;
    /// samples beyond them land in the outer bins.
    pub histogram_range: [f64; 2],
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let mut predictors: Vec<PredictorKind> = [0.5, 1.0, 2.0].map(|gamma| PredictorKind::Gp { gamma }).into();
        predictors.extend([0.0, 0.025, 0.1].map(|radius| PredictorKind::Cv { radius }));
        predictors.extend([0.0, 0.025, 0.1].map(|radius| PredictorKind::Nl { radius }));
        predictors.push(PredictorKind::Gt);
        Self {
            predictors,
            q_y: vec![0.0, 50.0, 100.0, 200.0, 300.0],
            races: 20,
            seed: 0,
            tracks: RandomTrackParams::default(),
            track: None,
            settings: RaceSettings::default(),
            gp_model: None,
            error_steps: Vec::new(),
            interaction_lengths: 2.0,
            histogram_bins: 40,
            histogram_range: [1.0, 0.5],
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.predictors.is_empty() || self.q_y.is_empty() {
            return Err(Error::Config("the sweep needs at least one predictor and one q_y".into()));
        }
        if self.races == 0 {
            return Err(Error::Config("race count must be at least 1".into()));
        }
        if self.histogram_bins == 0 || !self.histogram_range.iter().all(|r| *r > 0.0) {
            return Err(Error::Config("histograms need bins and positive ranges".into()));
        }
        if self.q_y.iter().any(|q| !(*q >= 0.0)) {
            return Err(Error::Config("q_y values must be nonnegative".into()));
        }
        let n = self.settings.ev_mpcc.horizon;
        if self.horizon_steps().iter().any(|&t| t == 0 || t > n) {
            return Err(Error::Config(format!("error steps must lie in 1..={n}")));
        }
        for p in &self.predictors {
            p.validate()?;
        }
        self.settings.validate()
    }

    pub fn horizon_steps(&self) -> Vec<usize> {
        if self.error_steps.is_empty() {
            let n = self.settings.ev_mpcc.horizon;
            let mut s = vec![2.min(n), n];
            s.dedup();
            s
        } else {
            self.error_steps.clone()
        }
    }

    pub fn needs_gp(&self) -> bool {
        self.predictors.iter().any(|p| matches!(p, PredictorKind::Gp { .. }))
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

/// One paired start shared by every cell.
#[derive(Debug, Clone)]
pub struct StartSlot {
    pub index: usize,
    pub track: Arc<TrackModel>,
    pub start: StartState,
    /// Seed of every race run from this start.
    pub race_seed: u64,
}

pub fn paired_starts(cfg: &ExperimentConfig) -> Result<Vec<StartSlot>> {
    let fixed = cfg.track.as_ref().map(TrackModel::from_spec).transpose()?.map(Arc::new);
    (0..cfg.races)
        .map(|i| {
            let (track_seed, track) = match &fixed {
                Some(t) => (0, t.clone()),
                None => {
                    let seed = derive_seed(cfg.seed, 2 * i as u64);
                    (seed, Arc::new(random_track(seed, &cfg.tracks)?))
                }
            };
            let race_seed = derive_seed(cfg.seed, 2 * i as u64 + 1);
            let start = sample_start(&track, track_seed, &mut ChaCha8Rng::seed_from_u64(race_seed));
            Ok(StartSlot { index: i, track, start, race_seed })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeMetrics {
    pub races: usize,
    pub wins: usize,
    pub safe_losses: usize,
    pub crashes: usize,
    pub off_track: usize,
    /// Crashes caused by solver or integrator aborts (included in `crashes`).
    pub solver_aborts: usize,
    pub win_rate: f64,
    pub crash_rate: f64,
    /// `wins / crashes`; `+∞` without crashes.
    pub wins_per_crash: f64,
    /// Mean over races of the EV's most negative longitudinal acceleration.
    pub mean_min_ax: f64,
}

impl OutcomeMetrics {
    fn from_digests<'a>(races: impl IntoIterator<Item = &'a RaceDigest>) -> Result<Self> {
        let mut m = Self {
            races: 0,
            wins: 0,
            safe_losses: 0,
            crashes: 0,
            off_track: 0,
            solver_aborts: 0,
            win_rate: 0.0,
            crash_rate: 0.0,
            wins_per_crash: 0.0,
            mean_min_ax: 0.0,
        };
        let mut ax_sum = 0.0;
        for d in races {
            m.races += 1;
            match d.outcome {
                Outcome::EvWin => m.wins += 1,
                Outcome::SafeLoss => m.safe_losses += 1,
                Outcome::Crash => m.crashes += 1,
                Outcome::EvOffTrack => m.off_track += 1,
            }
            m.solver_aborts += d.solver_abort as usize;
            ax_sum += d.min_ax;
        }
        if m.races == 0 {
            return Err(Error::EmptyInput);
        }
        let n = m.races as f64;
        m.win_rate = m.wins as f64 / n;
        m.crash_rate = m.crashes as f64 / n;
        m.wins_per_crash = if m.crashes == 0 { f64::INFINITY } else { m.wins as f64 / m.crashes as f64 };
        m.mean_min_ax = ax_sum / n;
        Ok(m)
    }
}

/// Most negative first-difference acceleration of a speed trace; zero for
/// traces shorter than two samples.
pub fn min_longitudinal_acceleration(v_x: &[f64], ts: f64) -> f64 {
    v_x.windows(2).map(|w| (w[1] - w[0]) / ts).reduce(f64::min).unwrap_or(0.0)
}

pub fn compute_outcome_metrics(logs: &[RaceLog]) -> Result<OutcomeMetrics> {
    let digests: Vec<RaceDigest> = logs.iter().map(|l| RaceDigest::outcome_only(0, l)).collect();
    OutcomeMetrics::from_digests(&digests)
}

/// Signed errors `actual − predicted` at one horizon step.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ErrorSamples {
    pub step: usize,
    pub longitudinal: Vec<f64>,
    pub lateral: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorStats {
    pub count: usize,
    pub mean: f64,
    /// Sample standard deviation (zero below two samples).
    pub std: f64,
    pub mean_abs: f64,
}

impl ErrorStats {
    pub fn of(x: &[f64]) -> Self {
        let n = x.len();
        if n == 0 {
            return Self { count: 0, mean: f64::NAN, std: f64::NAN, mean_abs: f64::NAN };
        }
        let mean = x.iter().sum::<f64>() / n as f64;
        let var = if n > 1 { x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64 } else { 0.0 };
        Self { count: n, mean, std: var.sqrt(), mean_abs: x.iter().map(|v| v.abs()).sum::<f64>() / n as f64 }
    }
}

impl ErrorSamples {
    pub fn longitudinal_stats(&self) -> ErrorStats {
        ErrorStats::of(&self.longitudinal)
    }

    pub fn lateral_stats(&self) -> ErrorStats {
        ErrorStats::of(&self.lateral)
    }

    fn extend(&mut self, other: &ErrorSamples) {
        self.longitudinal.extend(&other.longitudinal);
        self.lateral.extend(&other.lateral);
    }
}

fn wrap_to(d: f64, length: f64) -> f64 {
    d - length * (d / length).round()
}

fn log_errors(log: &RaceLog, steps: &[usize], interaction_lengths: f64) -> Vec<ErrorSamples> {
    let settings = &log.summary.settings;
    let reach = interaction_lengths * settings.ev_vehicle.length;
    let length: f64 = log.summary.track.segments.iter().map(|s| s[0]).sum();
    let mut out: Vec<ErrorSamples> = steps.iter().map(|&step| ErrorSamples { step, ..Default::default() }).collect();
    for (k, rec) in log.steps.iter().enumerate() {
        let Some(pred) = &rec.prediction else { continue };
        if wrap_to(rec.tv_curvilinear.s - rec.ev_curvilinear.s, length).abs() > reach {
            continue;
        }
        for e in &mut out {
            let (Some(actual), Some(p)) = (log.steps.get(k + e.step), pred.curvilinear.get(e.step)) else { continue };
            e.longitudinal.push(wrap_to(actual.tv_curvilinear.s - p.s, length));
            e.lateral.push(actual.tv_curvilinear.e_y - p.e_y);
        }
    }
    out
}

/// Interaction-filtered prediction errors pooled over `logs`, one entry per
/// horizon step in `steps`.
pub fn prediction_error_eval(logs: &[RaceLog], steps: &[usize], interaction_lengths: f64) -> Result<Vec<ErrorSamples>> {
    let mut out: Vec<ErrorSamples> = steps.iter().map(|&step| ErrorSamples { step, ..Default::default() }).collect();
    for log in logs {
        for (acc, e) in out.iter_mut().zip(log_errors(log, steps, interaction_lengths)) {
            acc.extend(&e);
        }
    }
    if out.iter().all(|e| e.longitudinal.is_empty()) {
        return Err(Error::NoInteractionSamples);
    }
    Ok(out)
}

/// Everything the report needs from one race.
#[derive(Debug, Clone, PartialEq)]
pub struct RaceDigest {
    pub index: usize,
    pub start: StartState,
    pub outcome: Outcome,
    pub solver_abort: bool,
    pub min_ax: f64,
    pub steps: usize,
    pub errors: Vec<ErrorSamples>,
}

impl RaceDigest {
    pub fn from_log(index: usize, log: &RaceLog, steps: &[usize], interaction_lengths: f64) -> Self {
        Self { errors: log_errors(log, steps, interaction_lengths), ..Self::outcome_only(index, log) }
    }

    fn outcome_only(index: usize, log: &RaceLog) -> Self {
        Self {
            index,
            start: log.summary.start,
            outcome: log.outcome(),
            solver_abort: log.summary.solver_abort,
            min_ax: min_longitudinal_acceleration(&log.ev_speeds(), log.summary.settings.ts()),
            steps: log.steps.len(),
            errors: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedRace {
    pub index: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellReport {
    pub predictor: PredictorKind,
    pub q_y: f64,
    /// Start of every race in the cell, by start index.
    pub starts: Vec<StartState>,
    /// `None` when every race of the cell failed.
    pub outcomes: Option<OutcomeMetrics>,
    pub errors: Vec<ErrorSamples>,
    /// Races that could not be run; they are excluded from the metrics.
    pub failed: Vec<FailedRace>,
}

impl CellReport {
    pub fn label(&self) -> String {
        self.predictor.label()
    }

    /// Directory-safe cell name.
    pub fn key(&self) -> String {
        cell_key(&self.predictor, self.q_y)
    }

    fn build(predictor: PredictorKind, q_y: f64, steps: &[usize], mut races: Vec<RaceDigest>, failed: Vec<FailedRace>) -> Self {
        races.sort_by_key(|d| d.index);
        let mut errors: Vec<ErrorSamples> = steps.iter().map(|&step| ErrorSamples { step, ..Default::default() }).collect();
        for d in &races {
            for (acc, e) in errors.iter_mut().zip(&d.errors) {
                acc.extend(e);
            }
        }
        Self {
            predictor,
            q_y,
            starts: races.iter().map(|d| d.start).collect(),
            outcomes: OutcomeMetrics::from_digests(&races).ok(),
            errors,
            failed,
        }
    }
}

pub fn cell_key(predictor: &PredictorKind, q_y: f64) -> String {
    format!("{}_qy{}", predictor.label(), q_y)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub config: ExperimentConfig,
    pub cells: Vec<CellReport>,
    /// Content hash of the GP model used, if any.
    pub gp_hash: Option<String>,
}

impl MetricsReport {
    pub fn cell(&self, predictor: &PredictorKind, q_y: f64) -> Option<&CellReport> {
        self.cells.iter().find(|c| c.predictor == *predictor && c.q_y == q_y)
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Worker threads; 0 uses all cores.
    pub workers: usize,
    /// Each race log is written to `<dir>/<cell>/race_<i>.ndjson`.
    pub log_dir: Option<PathBuf>,
}

pub fn model_hash(gp: &GpModel) -> Result<String> {
    Ok(hex::encode(Sha256::digest(gp.to_json()?.as_bytes())))
}

fn log_path(dir: &Path, key: &str, index: usize) -> PathBuf {
    dir.join(key).join(format!("race_{index:04}.ndjson"))
}

/// Runs every (predictor, q_y) cell from the same paired starts.
pub fn monte_carlo(cfg: &ExperimentConfig, gp: Option<Arc<GpModel>>, opts: &RunOptions) -> Result<MetricsReport> {
    cfg.validate()?;
    if cfg.needs_gp() && gp.is_none() {
        return Err(Error::Config("GP cells need a trained model".into()));
    }
    let slots = paired_starts(cfg)?;
    let cells: Vec<(PredictorKind, f64)> =
        cfg.q_y.iter().flat_map(|&q| cfg.predictors.iter().map(move |&p| (p, q))).collect();
    if let Some(dir) = &opts.log_dir {
        for (p, q) in &cells {
            std::fs::create_dir_all(dir.join(cell_key(p, *q)))?;
        }
        std::fs::write(dir.join("config.json"), serde_json::to_string_pretty(cfg)?)?;
    }
    let steps = cfg.horizon_steps();
    let jobs: Vec<(usize, &StartSlot)> = (0..cells.len()).flat_map(|c| slots.iter().map(move |s| (c, s))).collect();

    let run = |&(c, slot): &(usize, &StartSlot)| -> Result<std::result::Result<RaceDigest, FailedRace>> {
        let (predictor, q_y) = cells[c];
        let race = RaceConfig {
            track: slot.track.clone(),
            start: slot.start,
            predictor,
            q_y,
            settings: cfg.settings.clone(),
            seed: slot.race_seed,
            gp: gp.clone(),
            ev_script: None,
        };
        let log = match run_race(&race) {
            Ok(l) => l,
            Err(e) => {
                log::warn!("{} race {}: {e}", cell_key(&predictor, q_y), slot.index);
                return Ok(Err(FailedRace { index: slot.index, reason: e.to_string() }));
            }
        };
        if let Some(dir) = &opts.log_dir {
            let f = std::fs::File::create(log_path(dir, &cell_key(&predictor, q_y), slot.index))?;
            log.write_ndjson(std::io::BufWriter::new(f))?;
        }
        Ok(Ok(RaceDigest::from_log(slot.index, &log, &steps, cfg.interaction_lengths)))
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.workers)
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    let results: Vec<_> = pool.install(|| jobs.par_iter().map(run).collect::<Result<Vec<_>>>())?;

    let mut per_cell: Vec<(Vec<RaceDigest>, Vec<FailedRace>)> = cells.iter().map(|_| Default::default()).collect();
    for ((c, _), r) in jobs.iter().zip(results) {
        match r {
            Ok(d) => per_cell[*c].0.push(d),
            Err(f) => per_cell[*c].1.push(f),
        }
    }
    if let Some(dir) = &opts.log_dir {
        for ((p, q), (_, failed)) in cells.iter().zip(&per_cell) {
            if !failed.is_empty() {
                std::fs::write(dir.join(cell_key(p, *q)).join("failed.json"), serde_json::to_string(failed)?)?;
            }
        }
    }
    Ok(MetricsReport {
        config: cfg.clone(),
        cells: cells
            .into_iter()
            .zip(per_cell)
            .map(|((p, q), (races, failed))| CellReport::build(p, q, &steps, races, failed))
            .collect(),
        gp_hash: gp.as_deref().map(model_hash).transpose()?,
    })
}

/// Rebuilds the report of a `monte_carlo` run from the logs it wrote.
pub fn report_from_logs(dir: &Path, gp_hash: Option<String>) -> Result<MetricsReport> {
    let cfg: ExperimentConfig = serde_json::from_str(&std::fs::read_to_string(dir.join("config.json"))?)?;
    cfg.validate()?;
    let steps = cfg.horizon_steps();
    let mut cells = Vec::new();
    for &q_y in &cfg.q_y {
        for &predictor in &cfg.predictors {
            let cdir = dir.join(cell_key(&predictor, q_y));
            let mut races = Vec::new();
            for index in 0..cfg.races {
                let path = log_path(dir, &cell_key(&predictor, q_y), index);
                if path.exists() {
                    let log = RaceLog::read_ndjson(std::io::BufReader::new(std::fs::File::open(&path)?))?;
                    races.push(RaceDigest::from_log(index, &log, &steps, cfg.interaction_lengths));
                }
            }
            let failed_path = cdir.join("failed.json");
            let failed = if failed_path.exists() {
                serde_json::from_str(&std::fs::read_to_string(failed_path)?)?
            } else {
                Vec::new()
            };
            cells.push(CellReport::build(predictor, q_y, &steps, races, failed));
        }
    }
    Ok(MetricsReport { config: cfg, cells, gp_hash })
}

#[cfg(test)]
mod tests;
