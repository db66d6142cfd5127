//! Online calibration of a single-track vehicle model inside a sliding-window
//! odometry back end.

pub mod calib;
pub mod cli;
pub mod config;
pub mod data;
pub mod dual;
pub mod dynamics;
pub mod error;
pub mod estimator;
pub mod eval;
pub mod factors;
pub mod geometry;
pub mod graph;
pub mod sim;
pub mod integrate;
pub mod io;

pub use dynamics::{
    ControlSample, DynamicsParams, LongitudinalHyperParams, SingleTrack, TireModel, VehicleGeometry,
    VehicleState2D,
};
pub use error::{Error, Result};
pub use integrate::{compose_planar, predict, rollout, ControlTimeline, IntegratorConfig, RolloutResult};
