//! One-step TV training data from closed-loop rollouts with the GT predictor.

use std::io::{Read, Write};
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{derive_seed, run_race, sample_start, RaceConfig, RaceLog, RaceSettings};
use crate::error::{Error, Result};
use crate::gp::{Dataset, META_PREFIX, TARGET_PREFIX};
use crate::predict::{build_features, state_difference, FeatureConfig, PredictorKind, TARGET_NAMES};
use crate::track::{random_track, RandomTrackParams, TrackModel};

/// Rollouts are dispatched in fixed-size batches so the stopping point does
/// not depend on the worker count.
const BATCH: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataGenConfig {
    /// Rows kept after shuffling.
    pub target_rows: usize,
    pub max_rollouts: usize,
    pub q_y: f64,
    pub features: FeatureConfig,
    pub tracks: RandomTrackParams,
    pub settings: RaceSettings,
}

impl Default for DataGenConfig {
    fn default() -> Self {
        Self {
            target_rows: 5000,
            max_rollouts: 200,
            q_y: 200.0,
            features: FeatureConfig::default(),
            tracks: RandomTrackParams::default(),
            settings: RaceSettings { stop_on_overtake: false, record_predictions: false, ..RaceSettings::default() },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingDataset {
    pub data: Dataset,
    /// Rollout index of each row.
    pub race: Vec<usize>,
    /// Step `k` of each row (target is the change from `k` to `k + 1`).
    pub step: Vec<usize>,
}

impl TrainingDataset {
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Column order: `meta_race, meta_step`, the features, then the
    /// `y_`-prefixed targets.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let header: Vec<String> = [format!("{META_PREFIX}race"), format!("{META_PREFIX}step")]
            .into_iter()
            .chain(self.data.input_names().iter().cloned())
            .chain(self.data.target_names().iter().map(|n| format!("{TARGET_PREFIX}{n}")))
            .collect();
        w.write_record(&header)?;
        for i in 0..self.len() {
            let row: Vec<String> = [self.race[i].to_string(), self.step[i].to_string()]
                .into_iter()
                .chain(self.data.inputs().row(i).iter().map(|v| format!("{v:e}")))
                .chain(self.data.targets().row(i).iter().map(|v| format!("{v:e}")))
                .collect();
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let (data, names, meta) = Dataset::read_csv_with_meta(reader)?;
        let col = |name: &str| -> Result<Vec<usize>> {
            let j = names
                .iter()
                .position(|n| n == name)
                .ok_or_else(|| Error::Format(format!("dataset is missing the {META_PREFIX}{name} column")))?;
            Ok(meta.iter().map(|m| m[j] as usize).collect())
        };
        Ok(Self { race: col("race")?, step: col("step")?, data })
    }
}

/// Feature rows and one-step TV targets for every consecutive pair of
/// records in `log`.
pub fn rows_from_log(log: &RaceLog, track: &TrackModel, cfg: &FeatureConfig) -> (Vec<Vec<f64>>, Vec<[f64; 6]>) {
    let pairs = log.steps.windows(2);
    let mut x = Vec::with_capacity(log.steps.len());
    let mut y = Vec::with_capacity(log.steps.len());
    for w in pairs {
        x.push(build_features(track, &w[0].tv_curvilinear, &w[0].ev_curvilinear, cfg));
        y.push(state_difference(track, &w[0].tv_curvilinear, &w[1].tv_curvilinear));
    }
    (x, y)
}

fn rollout(cfg: &DataGenConfig, seed: u64, i: usize) -> Result<(Arc<TrackModel>, RaceLog)> {
    let track_seed = derive_seed(seed, 2 * i as u64);
    let track = Arc::new(random_track(track_seed, &cfg.tracks)?);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 2 * i as u64 + 1));
    let start = sample_start(&track, track_seed, &mut rng);
    let race = RaceConfig {
        track: track.clone(),
        start,
        predictor: PredictorKind::Gt,
        q_y: cfg.q_y,
        settings: cfg.settings.clone(),
        seed: derive_seed(seed, 2 * i as u64 + 1),
        gp: None,
        ev_script: None,
    };
    Ok((track, run_race(&race)?))
}

/// Runs GT-predictor races on fresh random tracks until at least
/// `target_rows` rows exist, shuffles deterministically and truncates.
/// Returns the dataset and the logs it was extracted from.
pub fn generate_dataset(cfg: &DataGenConfig, seed: u64) -> Result<(TrainingDataset, Vec<RaceLog>)> {
    cfg.features.validate()?;
    if cfg.target_rows == 0 || cfg.max_rollouts == 0 {
        return Err(Error::Config("dataset generation needs positive row and rollout counts".into()));
    }
    let mut x: Vec<Vec<f64>> = Vec::new();
    let mut y: Vec<[f64; 6]> = Vec::new();
    let mut race = Vec::new();
    let mut step = Vec::new();
    let mut logs = Vec::new();
    let mut next = 0;
    while x.len() < cfg.target_rows && next < cfg.max_rollouts {
        let ids: Vec<usize> = (next..(next + BATCH).min(cfg.max_rollouts)).collect();
        next += ids.len();
        let batch = ids.par_iter().map(|&i| rollout(cfg, seed, i)).collect::<Result<Vec<_>>>()?;
        for (i, (track, log)) in ids.into_iter().zip(batch) {
            let (xi, yi) = rows_from_log(&log, &track, &cfg.features);
            race.extend(std::iter::repeat_n(i, xi.len()));
            step.extend(0..xi.len());
            x.extend(xi);
            y.extend(yi);
            logs.push(log);
        }
    }
    if x.len() < cfg.target_rows {
        log::warn!("dataset generation produced {} of {} rows", x.len(), cfg.target_rows);
    }

    let mut order: Vec<usize> = (0..x.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, 0xDA7A)));
    order.truncate(cfg.target_rows);
    let d = cfg.features.dim();
    let inputs = DMatrix::from_fn(order.len(), d, |i, j| x[order[i]][j]);
    let targets = DMatrix::from_fn(order.len(), 6, |i, j| y[order[i]][j]);
    let data = Dataset::with_names(
        inputs,
        targets,
        cfg.features.input_names(),
        TARGET_NAMES.iter().map(|s| s.to_string()).collect(),
    )?;
    Ok((
        TrainingDataset {
            data,
            race: order.iter().map(|&i| race[i]).collect(),
            step: order.iter().map(|&i| step[i]).collect(),
        },
        logs,
    ))
}
