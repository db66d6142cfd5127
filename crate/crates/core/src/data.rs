//! Measurement streams shared by the simulator, the estimator and the
//! dataset files.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::dynamics::{ControlSample, DynamicsParams, LongitudinalHyperParams, TireModel, VehicleGeometry};
use crate::geometry::{Extrinsics, Pose3};

/// Raw angular-rate sample in the sensor frame, rad/s.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GyroSample {
    pub t: f64,
    pub omega: Vector3<f64>,
}

/// Per-frame output of the odometry front end.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OdomRecord {
    pub t: f64,
    pub frame: u64,
    /// Sensor pose of this frame relative to the previous one; identity for
    /// the first frame.
    pub rel_pose: Pose3,
    /// Sensor velocity expressed in the sensor frame, m/s.
    pub velocity: Vector3<f64>,
    /// Integrated raw gyro rotation since the previous frame, rad.
    pub rot_increment: Vector3<f64>,
}

/// True sensor state at a frame timestamp.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundTruthRecord {
    pub t: f64,
    /// Sensor pose in the world frame.
    pub pose: Pose3,
    /// Sensor velocity in the world frame, m/s.
    pub velocity: Vector3<f64>,
    pub gyro_bias: Vector3<f64>,
    /// Body-frame `(v_x, v_y, yaw_rate)`.
    pub body_velocity: Vector3<f64>,
}

/// The true coefficients take effect at `t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsTruthRecord {
    pub t: f64,
    pub params: DynamicsParams,
}

/// Static description of a recorded or simulated sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetHeader {
    pub version: u32,
    pub name: String,
    pub seed: u64,
    pub frame_rate: f64,
    pub gyro_rate: f64,
    pub control_rate: f64,
    pub geometry: VehicleGeometry,
    pub hyper: LongitudinalHyperParams,
    pub tire: TireModel,
    /// True sensor-in-body pose.
    pub extrinsics: Extrinsics,
    /// Sensor pose at the first frame, fixing the world frame.
    pub initial_pose: Pose3,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub header: Option<DatasetHeader>,
    pub controls: Vec<ControlSample>,
    pub gyro: Vec<GyroSample>,
    pub odom: Vec<OdomRecord>,
    pub groundtruth: Vec<GroundTruthRecord>,
    pub params_truth: Vec<ParamsTruthRecord>,
}

impl Dataset {
    pub fn frame_dt(&self) -> f64 {
        match &self.header {
            Some(h) => 1.0 / h.frame_rate,
            None => match self.odom.as_slice() {
                [a, b, ..] => b.t - a.t,
                _ => 1.0 / 30.0,
            },
        }
    }

    /// True coefficients in effect at `t`.
    pub fn params_at(&self, t: f64) -> Option<DynamicsParams> {
        let idx = self.params_truth.partition_point(|r| r.t <= t + 1e-9);
        idx.checked_sub(1).map(|i| self.params_truth[i].params)
    }

    /// Gyro sample closest in time to `t`.
    pub fn nearest_gyro(&self, t: f64) -> Option<&GyroSample> {
        nearest_by_time(&self.gyro, t, |g| g.t)
    }
}

/// Element of a time-sorted slice closest to `t`.
pub fn nearest_by_time<T>(items: &[T], t: f64, time: impl Fn(&T) -> f64) -> Option<&T> {
    if items.is_empty() {
        return None;
    }
    let idx = items.partition_point(|x| time(x) < t);
    let candidates = [idx.checked_sub(1), (idx < items.len()).then_some(idx)];
    candidates
        .into_iter()
        .flatten()
        .min_by(|&a, &b| (time(&items[a]) - t).abs().total_cmp(&(time(&items[b]) - t).abs()))
        .map(|i| &items[i])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nearest_by_time_picks_closest_neighbor() {
        let ts = [0.0, 0.1, 0.2, 0.35];
        let near = |t| *nearest_by_time(&ts, t, |x| *x).unwrap();
        assert_eq!(near(-1.0), 0.0);
        assert_eq!(near(0.14), 0.1);
        assert_eq!(near(0.16), 0.2);
        assert_eq!(near(0.3), 0.35);
        assert_eq!(near(9.0), 0.35);
        assert!(nearest_by_time(&[] as &[f64], 0.0, |x| *x).is_none());
    }
}
