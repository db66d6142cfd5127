//! Experiment configuration read from TOML. Every section is optional and
//! falls back to the defaults; unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::calib::CalibConfig;
use crate::dynamics::{DynamicsParams, N_PARAMS};
use crate::error::{Error, Result};
use crate::estimator::EstimatorConfig;
use crate::eval::{DEFAULT_FRACTIONS, DEFAULT_HORIZONS};
use crate::sim::{SimConfig, SCRIPT_NAMES};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    /// Control scripts simulated by default.
    pub scripts: Vec<String>,
    /// Seconds per sequence.
    pub duration: f64,
    pub control_rate: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self { scripts: vec!["full-throttle-slalom".into()], duration: 60.0, control_rate: 20.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationConfig {
    /// Sub-trajectory lengths as fractions of the sequence length.
    pub fractions: Vec<f64>,
    /// Prediction horizons, s.
    pub horizons: Vec<f64>,
    /// Speed below which the final segment counts as standing still, m/s.
    pub trim_threshold: f64,
    pub trim_window: f64,
    /// Predictions starting earlier are ignored, s.
    pub prediction_start: f64,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self {
            fractions: DEFAULT_FRACTIONS.to_vec(),
            horizons: DEFAULT_HORIZONS.to_vec(),
            trim_threshold: 0.02,
            trim_window: 0.5,
            prediction_start: 0.0,
        }
    }
}

/// Error applied to the true values to obtain the initial guess of a
/// simulated run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerturbationConfig {
    /// Multiplies each coefficient.
    pub factors: [f64; N_PARAMS],
    /// Tangent offset `[dp, dphi]` of the nominal extrinsics, m and rad.
    pub extrinsics: [f64; 6],
}

impl Default for PerturbationConfig {
    fn default() -> Self {
        Self { factors: [1.3, 0.7, 1.3, 0.7, 1.3], extrinsics: [0.01, -0.01, 0.005, 0.01, -0.01, 0.02] }
    }
}

impl PerturbationConfig {
    pub fn apply(&self, p: &DynamicsParams) -> DynamicsParams {
        let a = p.to_array();
        DynamicsParams::from_array(std::array::from_fn(|i| a[i] * self.factors[i]))
    }
}

/// Simulated keyframe co-observations fed to the estimator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnchorConfig {
    pub enabled: bool,
    pub seed: u64,
}

impl Default for AnchorConfig {
    fn default() -> Self {
        Self { enabled: true, seed: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub sim: SimConfig,
    pub scenario: ScenarioConfig,
    pub estimator: EstimatorConfig,
    pub calibration: CalibConfig,
    pub evaluation: EvaluationConfig,
    pub perturbation: PerturbationConfig,
    pub anchors: AnchorConfig,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Schema(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::File(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Schema(m) => Error::Schema(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Schema(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let schema = |e: Error| Error::Schema(e.to_string());
        self.sim.validate().map_err(schema)?;
        self.estimator.validate().map_err(schema)?;
        if let Some(s) = self.scenario.scripts.iter().find(|s| !SCRIPT_NAMES.contains(&s.as_str())) {
            return Err(Error::Schema(format!("unknown script {s:?}; available: {SCRIPT_NAMES:?}")));
        }
        if !(self.scenario.duration > 0.0 && self.scenario.control_rate > 0.0) {
            return Err(Error::Schema("scenario duration and control rate must be positive".into()));
        }
        let e = &self.evaluation;
        if e.fractions.iter().any(|f| !(*f > 0.0 && *f <= 1.0)) {
            return Err(Error::Schema("evaluation fractions must lie in (0, 1]".into()));
        }
        if e.horizons.iter().any(|h| !(h.is_finite() && *h >= 0.0)) {
            return Err(Error::Schema("prediction horizons must be non-negative".into()));
        }
        if self.perturbation.factors.iter().any(|f| !(f.is_finite() && *f > 0.0)) {
            return Err(Error::Schema("perturbation factors must be positive".into()));
        }
        if self.perturbation.extrinsics.iter().any(|v| !v.is_finite()) {
            return Err(Error::Schema("extrinsics perturbation must be finite".into()));
        }
        let c = &self.calibration;
        if !(c.segment_length > 0.0 && c.segment_stride > 0.0 && c.max_wheel_angle > 0.0) {
            return Err(Error::Schema("calibration segments and wheel angle must be positive".into()));
        }
        Ok(())
    }
}
