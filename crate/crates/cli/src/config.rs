use std::path::{Path, PathBuf};

use overtake_core::experiment::ExperimentConfig;
use overtake_core::gp::FitConfig;
use overtake_core::sim::{derive_seed, DataGenConfig, RaceSettings};
use overtake_core::track::RandomTrackParams;
use overtake_core::{Error, VehicleParams};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy)]
pub enum Stream {
    Data = 1,
    Fit = 2,
    Experiment = 3,
    Race = 4,
}

/// Settings for `race run`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RaceSection {
    /// Predictor label such as `GP_1`, `CV_0.025`, `NL_0` or `GT`.
    pub predictor: String,
    pub q_y: f64,
    pub settings: RaceSettings,
}

impl Default for RaceSection {
    fn default() -> Self {
        Self { predictor: "CV_0.025".into(), q_y: 200.0, settings: RaceSettings::default() }
    }
}

/// Top-level configuration file. Every section is optional.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppConfig {
    pub seed: u64,
    /// Vehicle parameter file applied to both cars in every section.
    pub params: Option<PathBuf>,
    /// Used by `track gen` and by `race run` without `--track`.
    pub tracks: RandomTrackParams,
    pub data: DataGenConfig,
    pub fit: FitConfig,
    pub race: RaceSection,
    pub experiment: ExperimentConfig,
}

fn apply_vehicle(settings: &mut RaceSettings, p: &VehicleParams) {
    settings.ev_vehicle = p.clone();
    settings.tv_vehicle = p.clone();
}

impl AppConfig {
    /// Reads `path` (defaults when `None`), applies the vehicle file and
    /// propagates the single seed to every section.
    pub fn load(path: Option<&Path>, seed: Option<u64>) -> Result<Self, Error> {
        let mut cfg: AppConfig = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| Error::Config(format!("cannot read config {}: {e}", p.display())))?;
                serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
            }
            None => AppConfig::default(),
        };
        if let Some(s) = seed {
            cfg.seed = s;
        }
        if let Some(pp) = cfg.params.clone() {
            let p = resolve(path, &pp);
            let text = std::fs::read_to_string(&p)
                .map_err(|e| Error::Config(format!("cannot read vehicle params {}: {e}", p.display())))?;
            let vehicle: VehicleParams =
                serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
            vehicle.validate()?;
            apply_vehicle(&mut cfg.data.settings, &vehicle);
            apply_vehicle(&mut cfg.race.settings, &vehicle);
            apply_vehicle(&mut cfg.experiment.settings, &vehicle);
        }
        if let Some(m) = cfg.experiment.gp_model.take() {
            cfg.experiment.gp_model = Some(resolve(path, &m));
        }
        cfg.fit.seed = cfg.stream(Stream::Fit);
        cfg.experiment.seed = cfg.stream(Stream::Experiment);
        Ok(cfg)
    }

    /// Independent seed for one command, so that training data never shares
    /// tracks or starts with evaluation races.
    pub fn stream(&self, s: Stream) -> u64 {
        derive_seed(self.seed, s as u64)
    }
}

/// Relative paths inside a config file are taken relative to that file.
fn resolve(config: Option<&Path>, p: &Path) -> PathBuf {
    match config.and_then(Path::parent) {
        Some(dir) if p.is_relative() && !p.exists() => dir.join(p),
        _ => p.to_path_buf(),
    }
}
