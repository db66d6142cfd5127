//! Tracking and prediction accuracy.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::data::{nearest_by_time, Dataset};
use crate::dynamics::{DynamicsParams, SingleTrack};
use crate::error::{Error, Result};
use crate::estimator::StateRecord;
use crate::geometry::{project_planar, relative_body_pose, Pose3};
use crate::integrate::{rollout, ControlTimeline, IntegratorConfig};

pub const DEFAULT_FRACTIONS: [f64; 5] = [0.1, 0.2, 0.3, 0.4, 0.5];
pub const DEFAULT_HORIZONS: [f64; 5] = [0.33, 0.66, 1.66, 3.33, 10.0];

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub poses: Vec<Pose3>,
    /// Body-frame `(v_x, v_y, yaw_rate)` per sample.
    pub body_velocities: Option<Vec<Vector3<f64>>>,
}

impl Trajectory {
    pub fn new(times: Vec<f64>, poses: Vec<Pose3>, body_velocities: Option<Vec<Vector3<f64>>>) -> Result<Self> {
        if times.len() != poses.len() || body_velocities.as_ref().is_some_and(|v| v.len() != times.len()) {
            return Err(Error::InvalidInput("trajectory columns differ in length".into()));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidInput("trajectory timestamps must be strictly increasing".into()));
        }
        Ok(Self { times, poses, body_velocities })
    }

    pub fn from_groundtruth(data: &Dataset) -> Result<Self> {
        let g = &data.groundtruth;
        Self::new(
            g.iter().map(|r| r.t).collect(),
            g.iter().map(|r| r.pose).collect(),
            Some(g.iter().map(|r| r.body_velocity).collect()),
        )
    }

    pub fn from_records(records: &[StateRecord]) -> Result<Self> {
        Self::new(
            records.iter().map(|r| r.t).collect(),
            records.iter().map(|r| r.pose).collect(),
            Some(records.iter().map(|r| r.body_velocity).collect()),
        )
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    fn truncate(&mut self, n: usize) {
        self.times.truncate(n);
        self.poses.truncate(n);
        if let Some(v) = self.body_velocities.as_mut() {
            v.truncate(n);
        }
    }

    /// Cumulative path length at each sample.
    pub fn arc_length(&self) -> Vec<f64> {
        let mut s = Vec::with_capacity(self.len());
        let mut acc = 0.0;
        for (i, p) in self.poses.iter().enumerate() {
            if i > 0 {
                acc += (p.translation - self.poses[i - 1].translation).norm();
            }
            s.push(acc);
        }
        s
    }
}

/// Drops the final stretch where the vehicle stands still, provided it lasts
/// at least `window` seconds.
pub fn trim_standing_tail(traj: &Trajectory, threshold: f64, window: f64) -> Result<Trajectory> {
    let vel = traj
        .body_velocities
        .as_ref()
        .ok_or_else(|| Error::InvalidInput("trimming needs body velocities".into()))?;
    let resting = |v: &Vector3<f64>| v.x.hypot(v.y) < threshold;
    let keep = vel.iter().rposition(|v| !resting(v)).map_or(0, |i| i + 1);
    let mut out = traj.clone();
    if keep < traj.len() {
        let rest = traj.times[traj.len() - 1] - traj.times[keep];
        if rest >= window || keep == 0 {
            out.truncate(keep);
        }
    }
    if out.is_empty() {
        return Err(Error::EmptyAfterTrim);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RpeBreakdown {
    /// Sequence fraction or prediction horizon in seconds.
    pub label: f64,
    pub translation_rmse: f64,
    pub rotation_rmse_deg: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RpeReport {
    pub translation_rmse: f64,
    pub rotation_rmse_deg: f64,
    pub breakdown: Vec<RpeBreakdown>,
    pub count: usize,
}

#[derive(Default)]
struct Pool {
    trans: f64,
    rot: f64,
    count: usize,
}

impl Pool {
    fn add(&mut self, trans: f64, rot_deg: f64) {
        self.trans += trans * trans;
        self.rot += rot_deg * rot_deg;
        self.count += 1;
    }

    fn rmse(&self) -> (f64, f64) {
        if self.count == 0 {
            return (0.0, 0.0);
        }
        let n = self.count as f64;
        ((self.trans / n).sqrt(), (self.rot / n).sqrt())
    }
}

fn finish(parts: Vec<(f64, Pool)>) -> Result<RpeReport> {
    let mut total = Pool::default();
    let breakdown = parts
        .into_iter()
        .map(|(label, p)| {
            total.trans += p.trans;
            total.rot += p.rot;
            total.count += p.count;
            let (t, r) = p.rmse();
            RpeBreakdown { label, translation_rmse: t, rotation_rmse_deg: r, count: p.count }
        })
        .collect();
    if total.count == 0 {
        return Err(Error::AlignmentFailure("no sub-trajectory fits the requested lengths".into()));
    }
    let (t, r) = total.rmse();
    Ok(RpeReport { translation_rmse: t, rotation_rmse_deg: r, breakdown, count: total.count })
}

fn median_interval(times: &[f64]) -> f64 {
    let mut d: Vec<f64> = times.windows(2).map(|w| w[1] - w[0]).collect();
    if d.is_empty() {
        return f64::INFINITY;
    }
    d.sort_by(f64::total_cmp);
    d[d.len() / 2]
}

/// Index into `est` for every sample of `gt`, matched by nearest timestamp
/// within half a frame.
fn align(est: &[f64], gt: &[f64]) -> Result<Vec<usize>> {
    let tol = 0.5 * median_interval(gt).min(median_interval(est)) + 1e-9;
    let idx: Vec<usize> = (0..est.len()).collect();
    gt.iter()
        .map(|&t| {
            let i = *nearest_by_time(&idx, t, |&i| est[i])
                .ok_or_else(|| Error::AlignmentFailure("estimate is empty".into()))?;
            if (est[i] - t).abs() > tol {
                return Err(Error::AlignmentFailure(format!("no estimate within {tol:.4} s of t = {t:.6}")));
            }
            Ok(i)
        })
        .collect()
}

/// Translation norm and rotation angle in degrees of `a⁻¹ b`.
fn pose_error(a: &Pose3, b: &Pose3) -> (f64, f64) {
    let e = a.inverse().compose(b);
    (e.translation.norm(), e.angle().to_degrees())
}

/// Relative pose error over sub-trajectories whose ground-truth path length
/// is each fraction of the total, one sub-trajectory per start sample.
pub fn tracking_rpe(est: &Trajectory, gt: &Trajectory, fractions: &[f64]) -> Result<RpeReport> {
    let map = align(&est.times, &gt.times)?;
    let s = gt.arc_length();
    let total = *s.last().unwrap_or(&0.0);
    let parts = fractions
        .iter()
        .map(|&f| {
            let len = f * total;
            let mut pool = Pool::default();
            let mut j = 0;
            for i in 0..gt.len() {
                j = j.max(i + 1);
                while j < gt.len() && s[j] - s[i] < len {
                    j += 1;
                }
                if j >= gt.len() || len <= 0.0 {
                    break;
                }
                let g = gt.poses[i].inverse().compose(&gt.poses[j]);
                let e = est.poses[map[i]].inverse().compose(&est.poses[map[j]]);
                let (t, r) = pose_error(&g, &e);
                pool.add(t, r);
            }
            (f, pool)
        })
        .collect();
    finish(parts)
}

fn wrap_angle(a: f64) -> f64 {
    let tau = std::f64::consts::TAU;
    (a + std::f64::consts::PI).rem_euclid(tau) - std::f64::consts::PI
}

/// Planar error between a predicted and a true relative body pose.
fn planar_error(gt: [f64; 3], pred: [f64; 3]) -> (f64, f64) {
    let (c, s) = (gt[2].cos(), gt[2].sin());
    let (dx, dy) = (pred[0] - gt[0], pred[1] - gt[1]);
    let ex = c * dx + s * dy;
    let ey = -s * dx + c * dy;
    (ex.hypot(ey), wrap_angle(pred[2] - gt[2]).abs().to_degrees())
}

/// Settings of a prediction evaluation.
#[derive(Debug, Clone)]
pub struct PredictionSetup<'a> {
    pub model: &'a SingleTrack,
    pub controls: &'a ControlTimeline,
    pub integrator: IntegratorConfig,
    /// Replaces the per-frame parameter estimates when set.
    pub params: Option<DynamicsParams>,
    pub horizons: &'a [f64],
    /// Prediction starts before this time are skipped.
    pub start_after: f64,
    pub trim_threshold: f64,
    pub trim_window: f64,
}

impl<'a> PredictionSetup<'a> {
    pub fn new(model: &'a SingleTrack, controls: &'a ControlTimeline, horizons: &'a [f64]) -> Self {
        Self {
            model,
            controls,
            integrator: IntegratorConfig::default(),
            params: None,
            horizons,
            start_after: f64::NEG_INFINITY,
            trim_threshold: 0.02,
            trim_window: 0.5,
        }
    }
}

/// Open-loop prediction error from every frame with an open gate, against
/// the true body motion seen through that frame's extrinsics estimate.
/// Horizons are rounded to whole frames.
pub fn prediction_rpe(records: &[StateRecord], data: &Dataset, setup: &PredictionSetup) -> Result<RpeReport> {
    let gt_full = Trajectory::from_groundtruth(data)?;
    let gt = trim_standing_tail(&gt_full, setup.trim_threshold, setup.trim_window)?;
    let est_times: Vec<f64> = records.iter().map(|r| r.t).collect();
    let covered = est_times.last().map_or(0, |&end| gt.times.partition_point(|&t| t <= end + 1e-9));
    let map = align(&est_times, &gt.times[..covered])?;
    let dt = median_interval(&gt.times);
    let steps: Vec<usize> = setup.horizons.iter().map(|h| (h / dt).round() as usize).collect();
    let max_steps = steps.iter().copied().max().unwrap_or(0);
    let mut pools: Vec<Pool> = setup.horizons.iter().map(|_| Pool::default()).collect();

    for (i, &ri) in map.iter().enumerate() {
        let rec = &records[ri];
        if !rec.gate || rec.t < setup.start_after {
            continue;
        }
        let last = (i + max_steps).min(gt.len() - 1);
        let p = setup.params.unwrap_or(rec.params);
        let v0 = [rec.body_velocity.x, rec.body_velocity.y, rec.body_velocity.z];
        let roll = if last > i {
            Some(rollout(setup.model, &gt.times[i..=last], v0, setup.controls, &p, false, &setup.integrator)?)
        } else {
            None
        };
        for (k, &n) in steps.iter().enumerate() {
            if i + n > last {
                continue;
            }
            let pred = if n == 0 { [0.0; 3] } else { roll.as_ref().expect("rolled out").poses[n] };
            let truth = project_planar(&relative_body_pose(&gt.poses[i], &rec.extrinsics, &gt.poses[i + n], &rec.extrinsics))?;
            let (t, r) = planar_error(truth, pred);
            pools[k].add(t, r);
        }
    }
    finish(setup.horizons.iter().copied().zip(pools).collect())
}
