//! Opponent (TV) trajectory predictors behind a common interface: the GP
//! sampling rollout, constant velocity (CV), the nonlinear MPC model of the
//! TV without its blocking cost (NL), and the TV's own plan (GT).

mod features;
mod rollout;

use std::sync::Arc;

use nalgebra::Matrix6;
use serde::{Deserialize, Serialize};

pub use features::{apply_difference, build_features, state_difference, FeatureConfig, TARGET_NAMES};
pub use rollout::{cv_states, one_step_predict, rollout_cv, rollout_gp, OneStep, CORRIDOR_WIDTHS};

use crate::error::{Error, Result};
use crate::gp::GpModel;
use crate::mpcc::{variance_growth, CollisionGeometry, MpccConfig, MpccController, MpccSolution, ObstacleForecast, SolverStatus};
use crate::track::{CurvilinearState, TrackModel};
use crate::vehicle::{VehicleParams, VehicleState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictorSource {
    Gp,
    Cv,
    Nl,
    Gt,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionResult {
    pub source: PredictorSource,
    /// Nominal TV states `ẑ_k..ẑ_{k+N}` in the global frame.
    pub states: Vec<VehicleState>,
    /// The same states in curvilinear coordinates, progress unwrapped.
    pub curvilinear: Vec<CurvilinearState>,
    /// Curvilinear-state covariances; all zero except for the GP.
    pub covariances: Vec<Matrix6<f64>>,
    /// Set when the requested predictor failed and CV was used instead.
    pub fallback: bool,
}

impl PredictionResult {
    /// Wraps a deterministic state sequence with zero covariance.
    pub fn deterministic(track: &TrackModel, source: PredictorSource, states: Vec<VehicleState>, s_hint: f64) -> Self {
        let curvilinear = project_sequence(track, &states, s_hint);
        let covariances = vec![Matrix6::zeros(); states.len()];
        Self { source, states, curvilinear, covariances, fallback: false }
    }

    pub fn horizon(&self) -> usize {
        self.states.len().saturating_sub(1)
    }

    /// Obstacle description for the EV controller under `kind`'s safety bound.
    pub fn forecast(&self, kind: &PredictorKind) -> ObstacleForecast {
        let growth = self
            .covariances
            .iter()
            .zip(&self.curvilinear)
            .map(|(cov, c)| match *kind {
                PredictorKind::Gp { gamma } => variance_growth(cov[(0, 0)], cov[(1, 1)], c.e_phi, gamma),
                PredictorKind::Cv { radius } | PredictorKind::Nl { radius } => (radius, radius),
                PredictorKind::Gt => (0.0, 0.0),
            })
            .collect();
        ObstacleForecast { states: self.states.clone(), growth }
    }
}

/// Curvilinear coordinates of a short state sequence, tracked from `s_hint`
/// so that progress stays continuous (unwrapped).
pub fn project_sequence(track: &TrackModel, states: &[VehicleState], s_hint: f64) -> Vec<CurvilinearState> {
    let mut out: Vec<CurvilinearState> = Vec::with_capacity(states.len());
    for (t, z) in states.iter().enumerate() {
        let reference = match t {
            0 => s_hint,
            _ => out[t - 1].s + (z.position() - states[t - 1].position()).norm(),
        };
        let f = track.project_near(&z.position(), z.phi, reference, 1.5);
        let s = reference + track.signed_ds(f.s, reference);
        out.push(CurvilinearState { s, e_y: f.e_y, e_phi: f.e_phi, v_x: z.v_x, v_y: z.v_y, omega: z.omega });
    }
    out
}

/// Predictor choice with its safety bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PredictorKind {
    /// GP rollout with ellipses grown by `gamma` standard deviations.
    Gp { gamma: f64 },
    /// Constant velocity with a circular bound of `radius` metres.
    Cv { radius: f64 },
    /// TV model predictive controller without blocking, circular bound.
    Nl { radius: f64 },
    /// The TV's own open-loop plan.
    Gt,
}

impl PredictorKind {
    pub fn label(&self) -> String {
        match self {
            Self::Gp { gamma } => format!("GP_{gamma}"),
            Self::Cv { radius } => format!("CV_{radius}"),
            Self::Nl { radius } => format!("NL_{radius}"),
            Self::Gt => "GT".into(),
        }
    }

    /// Inverse of [`label`](Self::label): `GP_1`, `CV_0.025`, `NL_0`, `GT`.
    pub fn parse_label(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("unknown predictor {s:?}; expected GP_<gamma>, CV_<r>, NL_<r> or GT"));
        if s.eq_ignore_ascii_case("gt") {
            return Ok(Self::Gt);
        }
        let (kind, value) = s.split_once('_').ok_or_else(bad)?;
        let v: f64 = value.parse().map_err(|_| bad())?;
        let p = match kind.to_ascii_uppercase().as_str() {
            "GP" => Self::Gp { gamma: v },
            "CV" => Self::Cv { radius: v },
            "NL" => Self::Nl { radius: v },
            _ => return Err(bad()),
        };
        p.validate()?;
        Ok(p)
    }

    pub fn source(&self) -> PredictorSource {
        match self {
            Self::Gp { .. } => PredictorSource::Gp,
            Self::Cv { .. } => PredictorSource::Cv,
            Self::Nl { .. } => PredictorSource::Nl,
            Self::Gt => PredictorSource::Gt,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Self::Gp { gamma } => gamma >= 0.0 && gamma.is_finite(),
            Self::Cv { radius } | Self::Nl { radius } => radius >= 0.0 && radius.is_finite(),
            Self::Gt => true,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid predictor {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PredictorSettings {
    pub features: FeatureConfig,
    /// GP sample paths M.
    pub samples: usize,
}

impl Default for PredictorSettings {
    fn default() -> Self {
        Self { features: FeatureConfig::default(), samples: 10 }
    }
}

/// Open-loop MPC model of the TV: its racing controller without the blocking
/// cost and without avoidance constraints.
#[derive(Debug, Clone)]
pub struct NlPredictor {
    controller: MpccController,
}

impl NlPredictor {
    pub fn new(tv_config: &MpccConfig, vehicle: VehicleParams, geometry: CollisionGeometry) -> Result<Self> {
        let config = MpccConfig { use_blocking_cost: false, use_collision_constraints: false, ..tv_config.clone() };
        Ok(Self { controller: MpccController::new(config, vehicle, geometry)? })
    }

    pub fn reset(&mut self) {
        self.controller.reset();
    }

    /// `None` when the solver failed this step.
    pub fn predict(&mut self, track: &TrackModel, tv: &VehicleState, s_hint: f64) -> Result<Option<PredictionResult>> {
        let prev = self.controller.last_solution().map(MpccSolution::first_input).unwrap_or_default();
        let sol = self.controller.step(track, tv, prev, None, None)?;
        if sol.status == SolverStatus::InfeasibleQp {
            return Ok(None);
        }
        Ok(Some(PredictionResult::deterministic(track, PredictorSource::Nl, sol.states, s_hint)))
    }
}

pub fn gt_prediction(track: &TrackModel, tv_plan: &MpccSolution, s_hint: f64) -> PredictionResult {
    PredictionResult::deterministic(track, PredictorSource::Gt, tv_plan.states.clone(), s_hint)
}

/// Everything a predictor may look at during one control step.
#[derive(Debug, Clone, Copy)]
pub struct PredictContext<'a> {
    pub track: &'a TrackModel,
    pub tv: &'a VehicleState,
    /// TV curvilinear state with unwrapped progress.
    pub tv_curvilinear: &'a CurvilinearState,
    /// EV states over the horizon (curvilinear), used as GP conditioning.
    pub ev_plan: &'a [CurvilinearState],
    /// The TV plan computed earlier in the same step.
    pub tv_plan: Option<&'a MpccSolution>,
    pub horizon: usize,
    pub ts: f64,
    pub seed: u64,
}

/// Stateful predictor instance for one race.
#[derive(Debug, Clone)]
pub struct Predictor {
    kind: PredictorKind,
    gp: Option<Arc<GpModel>>,
    settings: PredictorSettings,
    nl: Option<NlPredictor>,
}

impl Predictor {
    pub fn new(
        kind: PredictorKind,
        gp: Option<Arc<GpModel>>,
        settings: PredictorSettings,
        tv_config: &MpccConfig,
        tv_vehicle: &VehicleParams,
        geometry: CollisionGeometry,
    ) -> Result<Self> {
        kind.validate()?;
        settings.features.validate()?;
        let nl = match kind {
            PredictorKind::Nl { .. } => Some(NlPredictor::new(tv_config, tv_vehicle.clone(), geometry)?),
            _ => None,
        };
        if let PredictorKind::Gp { .. } = kind {
            let Some(model) = &gp else {
                return Err(Error::Config("GP predictor requires a trained model".into()));
            };
            if model.input_dim() != settings.features.dim() || model.output_dim() != 6 {
                return Err(Error::DimensionMismatch { expected: settings.features.dim(), got: model.input_dim() });
            }
        }
        Ok(Self { kind, gp, settings, nl })
    }

    pub fn kind(&self) -> &PredictorKind {
        &self.kind
    }

    pub fn reset(&mut self) {
        if let Some(nl) = &mut self.nl {
            nl.reset();
        }
    }

    /// Runs the predictor. GP sample divergence, GP numerical trouble and NL
    /// solver failures fall back to CV with `fallback` set.
    pub fn predict(&mut self, ctx: &PredictContext) -> Result<PredictionResult> {
        let s_hint = ctx.tv_curvilinear.s;
        let cv = || {
            let mut p = rollout_cv(ctx.track, ctx.tv, s_hint, ctx.horizon, ctx.ts);
            p.fallback = true;
            p
        };
        match self.kind {
            PredictorKind::Cv { .. } => Ok(rollout_cv(ctx.track, ctx.tv, s_hint, ctx.horizon, ctx.ts)),
            PredictorKind::Gt => match ctx.tv_plan {
                Some(plan) => Ok(gt_prediction(ctx.track, plan, s_hint)),
                None => Ok(cv()),
            },
            PredictorKind::Nl { .. } => {
                let nl = self.nl.as_mut().expect("NL predictor constructed");
                Ok(nl.predict(ctx.track, ctx.tv, s_hint)?.unwrap_or_else(cv))
            }
            PredictorKind::Gp { .. } => {
                let gp = self.gp.as_ref().expect("GP model checked at construction");
                let result = rollout_gp(
                    gp,
                    ctx.track,
                    ctx.tv_curvilinear,
                    &ctx.ev_plan[..=ctx.horizon.min(ctx.ev_plan.len() - 1)],
                    &self.settings.features,
                    self.settings.samples,
                    ctx.seed,
                );
                match result {
                    Ok(p) => Ok(p),
                    Err(Error::SampleDiverged(_)) | Err(Error::Numerical(_)) => Ok(cv()),
                    Err(e) => Err(e),
                }
            }
        }
    }
}
