//! Offline two-stage estimation of starting values for the vehicle model.
//!
//! Stage 1 fits the longitudinal coefficients on straight driving. Stage 2
//! fits every model coefficient, the longitudinal shape and one static
//! extrinsics on mixed driving. Both minimize model-rollout residuals over
//! overlapping segments of the reference trajectory.

use std::ops::Range;

use nalgebra::{DMatrix, DVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::dynamics::{DynamicsParams, LongitudinalHyperParams, SingleTrack, VehicleGeometry, N_HYPER, N_PARAMS};
use crate::error::{Error, Result};
use crate::geometry::{body_velocity_jacobians, geometry_residual, planar_relative_pose, Extrinsics, MountingPrior, Pose3};
use crate::integrate::{rollout, ControlTimeline, IntegratorConfig, SENS_HYPER, SENS_PARAMS};

/// Tangent layout: parameters, hyper-parameters, extrinsics.
const DIM: usize = N_PARAMS + N_HYPER + 6;
const HYPER_AT: usize = N_PARAMS;
const EXT_AT: usize = N_PARAMS + N_HYPER;

/// Largest steering input accepted by the controls.
const STEERING_LIMIT: f64 = 1.0;

pub const HYPER_LOWER: [f64; N_HYPER] = [0.0, 1.0, 1.0];
pub const HYPER_UPPER: [f64; N_HYPER] = [2.0, 10.0, 100.0];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibConfig {
    /// Rollout segment length, s.
    pub segment_length: f64,
    pub segment_stride: f64,
    pub max_iterations: usize,
    /// Largest |steering| accepted as straight driving in stage 1.
    pub steering_bound: f64,
    /// Front wheel angle at full steering input, rad; sets the initial
    /// steering ratio.
    pub max_wheel_angle: f64,
    pub pose_weight: f64,
    pub velocity_weight: f64,
    pub geometry_weight: f64,
    pub initial_damping: f64,
    pub step_tolerance: f64,
    pub relative_cost_tolerance: f64,
    pub integrator: IntegratorConfig,
}

impl Default for CalibConfig {
    fn default() -> Self {
        Self {
            segment_length: 2.0,
            segment_stride: 1.0,
            max_iterations: 50,
            steering_bound: 0.05,
            max_wheel_angle: 0.35,
            pose_weight: 1e3,
            velocity_weight: 1e3,
            geometry_weight: 1e4,
            initial_damping: 1e-4,
            step_tolerance: 1e-9,
            relative_cost_tolerance: 1e-10,
            integrator: IntegratorConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibResult {
    pub params: DynamicsParams,
    pub hyper: LongitudinalHyperParams,
    pub extrinsics: Extrinsics,
    pub cost: f64,
    pub iterations: usize,
}

/// Vehicle description the calibration does not touch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibSetup {
    pub geometry: VehicleGeometry,
    pub mounting: MountingPrior,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Theta {
    params: DynamicsParams,
    hyper: LongitudinalHyperParams,
    ext: Extrinsics,
}

impl Theta {
    fn retract(&self, d: &[f64; DIM]) -> Self {
        let mut p = self.params.to_array();
        for (i, v) in p.iter_mut().enumerate() {
            *v += d[i];
        }
        let mut h = self.hyper.to_array();
        for (i, v) in h.iter_mut().enumerate() {
            *v = (*v + d[HYPER_AT + i]).clamp(HYPER_LOWER[i], HYPER_UPPER[i]);
        }
        let e = nalgebra::Vector6::from_column_slice(&d[EXT_AT..]);
        Self {
            params: DynamicsParams::from_array(p).clamped(),
            hyper: LongitudinalHyperParams::from_array(h),
            ext: self.ext.retract(&e),
        }
    }

    fn norm(&self) -> f64 {
        let p = self.params.to_array();
        let h = self.hyper.to_array();
        p.iter().chain(&h).map(|v| v * v).sum::<f64>().sqrt() + self.ext.translation.norm()
    }
}

/// Reference states at one frame.
#[derive(Debug, Clone, Copy)]
struct FrameState {
    t: f64,
    pose: Pose3,
    velocity: Vector3<f64>,
    bias: Vector3<f64>,
    gyro: Vector3<f64>,
}

struct Problem<'a> {
    frames: Vec<FrameState>,
    segments: Vec<Range<usize>>,
    controls: &'a ControlTimeline,
    setup: CalibSetup,
    cfg: &'a CalibConfig,
    /// Tangent indices being estimated.
    free: Vec<usize>,
    /// Residual rows kept within each frame's six dynamics components.
    rows: Vec<usize>,
    geometry: bool,
}

struct Normal {
    h: DMatrix<f64>,
    g: DVector<f64>,
    cost: f64,
}

impl Normal {
    fn zeros(n: usize) -> Self {
        Self { h: DMatrix::zeros(n, n), g: DVector::zeros(n), cost: 0.0 }
    }

    fn add_row(&mut self, r: f64, j: &[f64], w: f64) {
        self.cost += w * r * r;
        for a in 0..j.len() {
            if j[a] == 0.0 {
                continue;
            }
            self.g[a] += w * j[a] * r;
            for b in 0..j.len() {
                self.h[(a, b)] += w * j[a] * j[b];
            }
        }
    }

    fn add(&mut self, o: &Normal) {
        self.h += &o.h;
        self.g += &o.g;
        self.cost += o.cost;
    }
}

impl Problem<'_> {
    fn segment(&self, seg: &Range<usize>, th: &Theta, jac: bool) -> Result<Normal> {
        let n = self.free.len();
        let mut out = Normal::zeros(n);
        let frames = &self.frames[seg.clone()];
        let model = SingleTrack::new(self.setup.geometry, th.hyper);
        let f0 = &frames[0];
        let bv0 = body_velocity_jacobians(&f0.pose, &f0.velocity, &f0.gyro, &f0.bias, &th.ext);
        let times: Vec<f64> = frames.iter().map(|f| f.t).collect();
        let roll = rollout(
            &model,
            &times,
            [bv0.value.x, bv0.value.y, bv0.value.z],
            self.controls,
            &th.params,
            jac,
            &self.cfg.integrator,
        )?;
        let mut full = [0.0; DIM];
        for (i, f) in frames.iter().enumerate().skip(1) {
            let (planar, pb) = planar_relative_pose(&f0.pose, &th.ext, &f.pose, &th.ext)?;
            let bv = body_velocity_jacobians(&f.pose, &f.velocity, &f.gyro, &f.bias, &th.ext);
            for &r in &self.rows {
                let (res, w) = if r < 3 {
                    (roll.poses[i][r] - planar[r], self.cfg.pose_weight)
                } else {
                    (roll.velocities[i][r - 3] - bv.value[r - 3], self.cfg.velocity_weight)
                };
                if !jac {
                    out.cost += w * res * res;
                    continue;
                }
                let s = &roll.sensitivities.as_ref().expect("requested")[i];
                for k in 0..N_PARAMS {
                    full[k] = s[(r, SENS_PARAMS + k)];
                }
                for k in 0..N_HYPER {
                    full[HYPER_AT + k] = s[(r, SENS_HYPER + k)];
                }
                for k in 0..6 {
                    let through_v0: f64 = (0..3).map(|c| s[(r, c)] * bv0.wrt_extrinsics[(c, k)]).sum();
                    full[EXT_AT + k] = through_v0
                        - if r < 3 { pb[1][(r, k)] + pb[3][(r, k)] } else { bv.wrt_extrinsics[(r - 3, k)] };
                }
                let j: Vec<f64> = self.free.iter().map(|&c| full[c]).collect();
                out.add_row(res, &j, w);
            }
        }
        Ok(out)
    }

    fn geometry_terms(&self, th: &Theta, jac: bool) -> Normal {
        let mut out = Normal::zeros(self.free.len());
        if !self.geometry {
            return out;
        }
        let w = self.cfg.geometry_weight;
        for f in &self.frames {
            let g = geometry_residual(&f.pose, &th.ext, &self.setup.mounting);
            for r in 0..6 {
                if !jac {
                    out.cost += w * g.value[r] * g.value[r];
                    continue;
                }
                let j: Vec<f64> = self
                    .free
                    .iter()
                    .map(|&c| if c >= EXT_AT { g.wrt_extrinsics[(r, c - EXT_AT)] } else { 0.0 })
                    .collect();
                out.add_row(g.value[r], &j, w);
            }
        }
        out
    }

    /// Sum over segments, evaluated on worker threads and added in order.
    fn evaluate(&self, th: &Theta, jac: bool) -> Result<Normal> {
        let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(self.segments.len().max(1));
        let chunk = self.segments.len().div_ceil(workers).max(1);
        let parts: Vec<Result<Normal>> = std::thread::scope(|scope| {
            let handles: Vec<_> = self
                .segments
                .chunks(chunk)
                .map(|segs| {
                    scope.spawn(move || {
                        let mut acc = Normal::zeros(self.free.len());
                        for s in segs {
                            acc.add(&self.segment(s, th, jac)?);
                        }
                        Ok(acc)
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("segment worker panicked")).collect()
        });
        let mut total = self.geometry_terms(th, jac);
        for p in parts {
            total.add(&p?);
        }
        if !total.cost.is_finite() {
            return Err(Error::NonFiniteState { t: self.frames[0].t });
        }
        Ok(total)
    }

    fn cost(&self, th: &Theta) -> f64 {
        self.evaluate(th, false).map_or(f64::INFINITY, |n| n.cost)
    }

    fn step(&self, th: &Theta, delta: &DVector<f64>) -> Theta {
        let mut full = [0.0; DIM];
        for (i, &c) in self.free.iter().enumerate() {
            full[c] = delta[i];
        }
        th.retract(&full)
    }

    fn solve(&self, start: Theta) -> Result<CalibResult> {
        let cfg = self.cfg;
        let mut th = start;
        let mut normal = self.evaluate(&th, true)?;
        let mut lambda = cfg.initial_damping;
        let mut iterations = 0;
        'outer: while iterations < cfg.max_iterations {
            loop {
                let mut damped = normal.h.clone();
                for i in 0..damped.nrows() {
                    damped[(i, i)] += lambda * normal.h[(i, i)].max(1e-12);
                }
                let Some(ch) = damped.cholesky() else {
                    lambda *= 10.0;
                    if lambda > 1e12 {
                        return Err(Error::SolverFailure("calibration system not positive definite".into()));
                    }
                    continue;
                };
                let delta = -ch.solve(&normal.g);
                if delta.norm() <= cfg.step_tolerance * (th.norm() + cfg.step_tolerance) {
                    break 'outer;
                }
                let trial = self.step(&th, &delta);
                let trial_cost = self.cost(&trial);
                if trial_cost <= normal.cost {
                    let decrease = normal.cost - trial_cost;
                    let old = normal.cost;
                    th = trial;
                    iterations += 1;
                    lambda = (lambda / 3.0).max(1e-12);
                    normal = self.evaluate(&th, true)?;
                    if decrease <= cfg.relative_cost_tolerance * old {
                        break 'outer;
                    }
                    break;
                }
                lambda *= 10.0;
                if lambda > 1e12 {
                    if iterations > 0 {
                        break 'outer;
                    }
                    return Err(Error::SolverFailure(format!("calibration cost {:.6e} does not decrease", normal.cost)));
                }
            }
        }
        Ok(CalibResult { params: th.params, hyper: th.hyper, extrinsics: th.ext, cost: normal.cost, iterations })
    }
}

fn reference_frames(data: &Dataset) -> Result<Vec<FrameState>> {
    if data.groundtruth.len() < 2 {
        return Err(Error::InvalidInput("calibration needs a reference trajectory".into()));
    }
    data.groundtruth
        .iter()
        .map(|g| {
            let gyro = data
                .nearest_gyro(g.t)
                .ok_or_else(|| Error::InvalidInput("calibration needs gyro samples".into()))?
                .omega;
            Ok(FrameState { t: g.t, pose: g.pose, velocity: g.velocity, bias: g.gyro_bias, gyro })
        })
        .collect()
}

/// Frame ranges of overlapping segments.
fn segments(frames: &[FrameState], length: f64, stride: f64) -> Result<Vec<Range<usize>>> {
    if !(length > 0.0 && stride > 0.0) {
        return Err(Error::InvalidInput("segment length and stride must be positive".into()));
    }
    let (t0, t1) = (frames[0].t, frames[frames.len() - 1].t);
    let mut out = Vec::new();
    let mut s = t0;
    while s < t1 - 1e-9 {
        let a = frames.partition_point(|f| f.t < s - 1e-9);
        let b = frames.partition_point(|f| f.t <= s + length + 1e-9);
        if b - a >= 2 {
            out.push(a..b);
        }
        if s + length >= t1 {
            break;
        }
        s += stride;
    }
    Ok(out)
}

fn controls(data: &Dataset) -> Result<ControlTimeline> {
    ControlTimeline::new(data.controls.clone())
}

/// Fits `C_thr1`, `C_thr2` and `C_res` on straight driving, using only the
/// longitudinal components of the residual.
pub fn calibrate_stage1(
    data: &Dataset,
    setup: &CalibSetup,
    hyper: &LongitudinalHyperParams,
    init: &DynamicsParams,
    extrinsics: &Extrinsics,
    cfg: &CalibConfig,
) -> Result<CalibResult> {
    if let Some(c) = data.controls.iter().find(|c| c.steering.abs() >= cfg.steering_bound) {
        return Err(Error::NotForwardMotion { t: c.t, steering: c.steering });
    }
    let ctrl = controls(data)?;
    let frames = reference_frames(data)?;
    let problem = Problem {
        segments: segments(&frames, cfg.segment_length, cfg.segment_stride)?,
        frames,
        controls: &ctrl,
        setup: *setup,
        cfg,
        free: vec![1, 2, 3],
        rows: vec![0, 3],
        geometry: false,
    };
    problem.solve(Theta { params: *init, hyper: *hyper, ext: *extrinsics })
}

/// Fits all model coefficients, the longitudinal shape and the extrinsics.
/// The steering ratio restarts from the wheel-angle ratio.
pub fn calibrate_stage2(
    data: &Dataset,
    setup: &CalibSetup,
    stage1: &CalibResult,
    extrinsics: &Extrinsics,
    cfg: &CalibConfig,
) -> Result<CalibResult> {
    let ctrl = controls(data)?;
    let max_steering = data.controls.iter().map(|c| c.steering.abs()).fold(0.0, f64::max);
    if max_steering < cfg.steering_bound {
        return Err(Error::InvalidInput("stage 2 needs steering excitation".into()));
    }
    let mut params = stage1.params;
    params.steering_ratio = cfg.max_wheel_angle / STEERING_LIMIT;
    let frames = reference_frames(data)?;
    let problem = Problem {
        segments: segments(&frames, cfg.segment_length, cfg.segment_stride)?,
        frames,
        controls: &ctrl,
        setup: *setup,
        cfg,
        free: (0..DIM).collect(),
        rows: (0..6).collect(),
        geometry: true,
    };
    let h = stage1.hyper.to_array();
    let hyper = LongitudinalHyperParams::from_array(std::array::from_fn(|i| h[i].clamp(HYPER_LOWER[i], HYPER_UPPER[i])));
    problem.solve(Theta { params, hyper, ext: *extrinsics })
}
