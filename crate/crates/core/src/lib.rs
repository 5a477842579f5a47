//! Head-to-head autonomous racing: Gaussian-process opponent prediction,
//! model predictive contouring control with uncertainty-expanded collision
//! constraints, and a closed-loop race simulator with Monte Carlo studies.

pub mod error;
pub mod experiment;
pub mod gp;
pub mod mpcc;
pub mod predict;
pub mod qp;
pub mod sim;
pub mod track;
pub mod vehicle;

pub use error::{Error, Result};
pub use gp::{Dataset, GpHyperparams, GpMode, GpModel, KernelHyper};
pub use mpcc::{CollisionGeometry, MpccConfig, MpccController, MpccSolution, ObstacleForecast};
pub use track::{CurvilinearState, FrenetPose, TrackModel};
pub use vehicle::{VehicleInput, VehicleParams, VehicleState};
