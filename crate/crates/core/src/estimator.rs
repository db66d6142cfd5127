//! Sliding-window estimator with online calibration of the vehicle model.
//!
//! The window holds a few full-state recent frames and a set of pose-only
//! keyframes. The oldest recent frame leaves the window on every new frame:
//! it is either promoted to a keyframe (keeping only its pose) or eliminated
//! completely. Eliminated variables are folded into a quadratic prior.

use std::collections::VecDeque;
use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::data::OdomRecord;
use crate::dynamics::{DynamicsParams, SingleTrack, VehicleGeometry, N_PARAMS};
use crate::error::{Error, Result};
use crate::factors::{
    AnchorFactor, DynamicsFactor, ExtrinsicsWalkFactor, FactorWeights, GeometryFactor, OdometryFactor,
    OdometryNoise, ParamAbsoluteFactor, ParamRelativeFactor,
};
use crate::geometry::{body_velocity, so3, Extrinsics, MountingPrior, Pose3};
use crate::graph::{marginalize, optimize, Factor, LinearFactor, MarginalPrior, SolverConfig, Values, VarKey, VarKind};
use crate::integrate::{predict, ControlTimeline, IntegratorConfig, RolloutResult};
use crate::sim::KeyframeAnchors;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorConfig {
    pub recent_frames: usize,
    pub keyframes: usize,
    pub weights: FactorWeights,
    /// Enables dynamics factors once the gate opens.
    pub use_dynamics: bool,
    /// Gyro-bias variance below which dynamics factors are enabled, (rad/s)².
    pub gate_threshold: f64,
    /// Frames processed before the gate may open.
    pub warmup_frames: usize,
    pub keyframe_translation: f64,
    /// Degrees.
    pub keyframe_rotation: f64,
    pub solver: SolverConfig,
    pub integrator: IntegratorConfig,
    pub odometry_noise: OdometryNoise,
    pub anchor_translation: f64,
    /// Radians.
    pub anchor_rotation: f64,
    pub initial_pose_weight: f64,
    /// Radians per second.
    pub initial_bias_sigma: f64,
    /// Per-component normalization of the parameter priors; the initial
    /// parameters when absent.
    pub param_scale: Option<[f64; N_PARAMS]>,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            recent_frames: 3,
            keyframes: 7,
            weights: FactorWeights::default(),
            use_dynamics: true,
            gate_threshold: 4.5e-4,
            warmup_frames: 15,
            keyframe_translation: 0.3,
            keyframe_rotation: 10.0,
            solver: SolverConfig::default(),
            integrator: IntegratorConfig::default(),
            odometry_noise: OdometryNoise {
                translation: 0.005,
                rotation: 0.1f64.to_radians(),
                velocity: 0.01,
                gyro: 0.005,
                gyro_rate: 200.0,
                bias_walk: 1e-4,
            },
            anchor_translation: 0.01,
            anchor_rotation: 0.2f64.to_radians(),
            initial_pose_weight: 1e8,
            initial_bias_sigma: 0.02,
            param_scale: None,
        }
    }
}

impl EstimatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.recent_frames < 2 {
            return Err(Error::InvalidInput("at least two recent frames are required".into()));
        }
        let positive = [
            self.gate_threshold,
            self.keyframe_translation,
            self.keyframe_rotation,
            self.anchor_translation,
            self.anchor_rotation,
            self.initial_pose_weight,
            self.initial_bias_sigma,
        ];
        if !positive.iter().all(|v| v.is_finite() && *v > 0.0) {
            return Err(Error::InvalidInput("estimator thresholds and noise levels must be positive".into()));
        }
        if self.param_scale.is_some_and(|s| !s.iter().all(|v| v.is_finite() && *v > 0.0)) {
            return Err(Error::InvalidInput("parameter scale must be positive".into()));
        }
        Ok(())
    }
}

/// Mounting priors implied by a nominal sensor placement.
pub fn mounting_prior(ext: &Extrinsics, geometry: &VehicleGeometry) -> MountingPrior {
    let forward = ext.rotation.inverse() * Vector3::x();
    MountingPrior {
        plane_offset: ext.translation.z,
        lateral_offset: ext.translation.y,
        front_axle: geometry.front_axle,
        front_offset: ext.translation.x - geometry.front_axle,
        forward_axis: [forward.x, forward.y, forward.z],
    }
}

/// Starting point of an estimator run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitialState {
    /// Sensor pose of the first frame; fixes the world frame.
    pub pose: Pose3,
    pub extrinsics: Extrinsics,
    pub params: DynamicsParams,
    pub gyro_bias: Vector3<f64>,
}

/// Relative-pose observations between a keyframe and a later frame.
pub trait AnchorSource {
    fn measure(&self, keyframe: u64, frame: u64) -> Option<Pose3>;
}

impl AnchorSource for KeyframeAnchors {
    fn measure(&self, keyframe: u64, frame: u64) -> Option<Pose3> {
        KeyframeAnchors::measure(self, keyframe, frame)
    }
}

/// No co-observations at all.
pub struct NoAnchors;

impl AnchorSource for NoAnchors {
    fn measure(&self, _: u64, _: u64) -> Option<Pose3> {
        None
    }
}

/// Measurements of one frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameInput {
    pub odom: OdomRecord,
    /// Raw gyro sample nearest to the frame.
    pub gyro: Vector3<f64>,
}

/// Estimate of the newest frame right after it was processed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateRecord {
    pub frame: u64,
    pub t: f64,
    pub pose: Pose3,
    pub velocity: Vector3<f64>,
    pub gyro_bias: Vector3<f64>,
    pub extrinsics: Extrinsics,
    /// Body-frame `(v_x, v_y, yaw_rate)`.
    pub body_velocity: Vector3<f64>,
    /// Parameters of the first recent frame.
    pub params: DynamicsParams,
    pub gate: bool,
    /// Infinite until the bias is observable; written as `null`.
    #[serde(with = "unbounded")]
    pub bias_variance: f64,
    pub iterations: usize,
    pub cost: f64,
    #[serde(default)]
    pub solver_failure: Option<String>,
    #[serde(default)]
    pub regularized: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct RecentFrame {
    id: u64,
    t: f64,
    gyro: Vector3<f64>,
}

#[derive(Debug)]
pub struct Estimator {
    cfg: EstimatorConfig,
    model: SingleTrack,
    controls: Arc<ControlTimeline>,
    mounting: MountingPrior,
    param_scale: [f64; N_PARAMS],
    recent: VecDeque<RecentFrame>,
    keyframes: VecDeque<u64>,
    values: Values,
    factors: Vec<Box<dyn Factor>>,
    dynamics: Option<DynamicsFactor>,
    prior: Option<MarginalPrior>,
    /// Parameters of the most recently eliminated frame.
    param_reference: DynamicsParams,
    initial: InitialState,
    gate: bool,
    bias_variance: f64,
    frames_seen: usize,
}

impl Estimator {
    pub fn new(
        cfg: EstimatorConfig,
        model: SingleTrack,
        controls: Arc<ControlTimeline>,
        mounting: MountingPrior,
        initial: InitialState,
    ) -> Result<Self> {
        cfg.validate()?;
        if !initial.params.is_valid() {
            return Err(Error::InvalidInput("initial parameters must be finite and positive".into()));
        }
        Ok(Self {
            param_scale: cfg.param_scale.unwrap_or(initial.params.to_array()),
            cfg,
            model,
            controls,
            mounting,
            recent: VecDeque::new(),
            keyframes: VecDeque::new(),
            values: Values::new(),
            factors: Vec::new(),
            dynamics: None,
            prior: None,
            param_reference: initial.params,
            initial,
            gate: false,
            bias_variance: f64::INFINITY,
            frames_seen: 0,
        })
    }

    pub fn config(&self) -> &EstimatorConfig {
        &self.cfg
    }

    pub fn values(&self) -> &Values {
        &self.values
    }

    pub fn prior(&self) -> Option<&MarginalPrior> {
        self.prior.as_ref()
    }

    pub fn recent_frames(&self) -> Vec<u64> {
        self.recent.iter().map(|f| f.id).collect()
    }

    pub fn keyframes(&self) -> Vec<u64> {
        self.keyframes.iter().copied().collect()
    }

    /// Number of factors in the window, the dynamics factor included.
    pub fn factor_count(&self) -> usize {
        self.factors.len() + usize::from(self.dynamics.is_some())
    }

    pub fn gate(&self) -> bool {
        self.gate
    }

    pub fn bias_variance(&self) -> f64 {
        self.bias_variance
    }

    /// Parameters stored at the first recent frame.
    pub fn params(&self) -> Option<DynamicsParams> {
        let first = self.recent.front()?;
        self.values.params(&VarKey::params(first.id)).ok().copied()
    }

    fn newest(&self) -> Option<&RecentFrame> {
        self.recent.back()
    }

    /// Body velocity of a recent frame at its current estimate.
    fn frame_body_velocity(&self, f: &RecentFrame) -> Result<Vector3<f64>> {
        let v = &self.values;
        Ok(body_velocity(
            v.pose(&VarKey::pose(f.id))?,
            v.vector(&VarKey::velocity(f.id))?,
            &f.gyro,
            v.vector(&VarKey::bias(f.id))?,
            v.pose(&VarKey::extrinsics(f.id))?,
        ))
    }

    /// Adds a frame, optimizes the window and returns the estimate of the
    /// new frame. Solver failures leave the window at its last accepted
    /// estimate and are reported in the record.
    pub fn add_frame(&mut self, input: &FrameInput, anchors: &dyn AnchorSource) -> Result<StateRecord> {
        let odom = &input.odom;
        if let Some(newest) = self.newest() {
            if !(odom.t > newest.t) || odom.frame <= newest.id {
                return Err(Error::OutOfOrderFrame { t: odom.t, newest: newest.t });
            }
        }
        let frame = RecentFrame { id: odom.frame, t: odom.t, gyro: input.gyro };
        self.frames_seen += 1;
        let mut regularized = false;
        match self.newest().copied() {
            None => self.start(&frame, odom),
            Some(prev) => {
                self.append(&prev, &frame, odom, anchors)?;
                if self.recent.len() > self.cfg.recent_frames {
                    regularized = self.slide()?;
                }
            }
        }
        self.rebuild_dynamics();
        let first = self.recent[0].id;
        let absolute = ParamAbsoluteFactor {
            frame: first,
            reference: self.param_reference,
            scale: self.param_scale,
            weight: self.cfg.weights.param_prior,
        };

        let mut refs: Vec<&dyn Factor> = self.factors.iter().map(|f| f.as_ref()).collect();
        refs.push(&absolute);
        if let Some(d) = &self.dynamics {
            refs.push(d);
        }
        let mut iterations = 0;
        let mut cost = 0.0;
        let mut failure = None;
        match optimize(&refs, self.prior.as_ref(), &mut self.values, &self.cfg.solver) {
            Ok(report) => {
                iterations = report.accepted_iterations;
                cost = report.final_cost;
                self.bias_variance = bias_variance(&report.hessian, report.ordering.offset(&VarKey::bias(first)));
            }
            Err(e @ Error::SolverFailure(_)) => failure = Some(e.to_string()),
            Err(e) => return Err(e),
        }
        if self.cfg.use_dynamics
            && !self.gate
            && self.frames_seen >= self.cfg.warmup_frames
            && self.bias_variance < self.cfg.gate_threshold
        {
            self.gate = true;
        }
        self.clamp_params();

        let v = &self.values;
        Ok(StateRecord {
            frame: frame.id,
            t: frame.t,
            pose: *v.pose(&VarKey::pose(frame.id))?,
            velocity: *v.vector(&VarKey::velocity(frame.id))?,
            gyro_bias: *v.vector(&VarKey::bias(frame.id))?,
            extrinsics: *v.pose(&VarKey::extrinsics(frame.id))?,
            body_velocity: self.frame_body_velocity(&frame)?,
            params: *v.params(&VarKey::params(first))?,
            gate: self.gate,
            bias_variance: self.bias_variance,
            iterations,
            cost,
            solver_failure: failure,
            regularized,
        })
    }

    fn clamp_params(&mut self) {
        for f in self.recent.iter().take(2) {
            let k = VarKey::params(f.id);
            if let Ok(p) = self.values.params(&k) {
                let c = p.clamped();
                self.values.insert_params(k, c);
            }
        }
    }

    /// First frame: all knowledge enters through the initial prior.
    fn start(&mut self, frame: &RecentFrame, odom: &OdomRecord) {
        let init = self.initial;
        let id = frame.id;
        let velocity = init.pose.rotation * odom.velocity;
        self.values.insert_pose(VarKey::pose(id), init.pose);
        self.values.insert_vector(VarKey::velocity(id), velocity);
        self.values.insert_vector(VarKey::bias(id), init.gyro_bias);
        self.values.insert_pose(VarKey::extrinsics(id), init.extrinsics);
        self.values.insert_params(VarKey::params(id), init.params);

        let velocity_weight = self.cfg.odometry_noise.weights(1.0)[2];
        let parts = [
            (VarKey::pose(id), self.cfg.initial_pose_weight),
            (VarKey::velocity(id), velocity_weight),
            (VarKey::bias(id), self.cfg.initial_bias_sigma.powi(-2)),
            (VarKey::extrinsics(id), self.cfg.weights.extrinsics_prior),
        ];
        let keys: Vec<VarKey> = parts.iter().map(|p| p.0).collect();
        let diag: Vec<f64> = parts.iter().flat_map(|&(k, w)| std::iter::repeat_n(w, k.dim())).collect();
        let mut linearization = Values::new();
        for k in &keys {
            linearization.insert(*k, *self.values.get(k).expect("inserted above"));
        }
        let n = diag.len();
        self.prior = Some(MarginalPrior {
            keys,
            linearization,
            h: DMatrix::from_diagonal(&DVector::from_vec(diag)),
            b: DVector::zeros(n),
            c: 0.0,
        });
        self.recent.push_back(*frame);
    }

    fn append(&mut self, prev: &RecentFrame, frame: &RecentFrame, odom: &OdomRecord, anchors: &dyn AnchorSource) -> Result<()> {
        let (i, j) = (prev.id, frame.id);
        let dt = frame.t - prev.t;
        let (pose, velocity) = self.initial_guess(prev, frame, odom)?;
        let bias = *self.values.vector(&VarKey::bias(i))?;
        let ext = *self.values.pose(&VarKey::extrinsics(i))?;
        self.values.insert_pose(VarKey::pose(j), pose);
        self.values.insert_vector(VarKey::velocity(j), velocity);
        self.values.insert_vector(VarKey::bias(j), bias);
        self.values.insert_pose(VarKey::extrinsics(j), ext);

        let w = &self.cfg.weights;
        self.factors.push(Box::new(OdometryFactor {
            from: i,
            to: j,
            rel_pose: odom.rel_pose,
            velocity: odom.velocity,
            rot_increment: odom.rot_increment,
            dt,
            weights: self.cfg.odometry_noise.weights(dt),
        }));
        self.factors.push(Box::new(ExtrinsicsWalkFactor { from: i, to: j, weight: w.extrinsics_walk * 30.0 * dt }));
        self.factors.push(Box::new(GeometryFactor { frame: j, prior: self.mounting, weight: w.geometry }));
        for &k in &self.keyframes {
            if let Some(rel_pose) = anchors.measure(k, j) {
                self.factors.push(Box::new(AnchorFactor {
                    keyframe: k,
                    frame: j,
                    rel_pose,
                    translation_weight: self.cfg.anchor_translation.powi(-2),
                    rotation_weight: self.cfg.anchor_rotation.powi(-2),
                }));
            }
        }
        self.recent.push_back(*frame);
        if self.recent.len() == 2 {
            self.add_second_params()?;
        }
        Ok(())
    }

    /// Parameter slot on the second recent frame, tied to the first.
    fn add_second_params(&mut self) -> Result<()> {
        let (a, b) = (self.recent[0], self.recent[1]);
        let p = *self.values.params(&VarKey::params(a.id))?;
        self.values.insert_params(VarKey::params(b.id), p);
        self.factors.push(Box::new(ParamRelativeFactor {
            from: a.id,
            to: b.id,
            scale: self.param_scale,
            weight: self.cfg.weights.param_walk * 30.0 * (b.t - a.t),
        }));
        Ok(())
    }

    /// Constant-velocity propagation, or a one-frame model rollout once
    /// dynamics factors are active.
    fn initial_guess(&self, prev: &RecentFrame, frame: &RecentFrame, odom: &OdomRecord) -> Result<(Pose3, Vector3<f64>)> {
        let v = &self.values;
        let pose = *v.pose(&VarKey::pose(prev.id))?;
        let vel = *v.vector(&VarKey::velocity(prev.id))?;
        let bias = *v.vector(&VarKey::bias(prev.id))?;
        let ext = *v.pose(&VarKey::extrinsics(prev.id))?;
        let dt = frame.t - prev.t;
        if self.gate && self.cfg.use_dynamics {
            let p = self.params().ok_or_else(|| Error::InvalidInput("window has no parameters".into()))?;
            let v0 = self.frame_body_velocity(prev)?;
            if let Ok(roll) = predict(&self.model, prev.t, dt, [v0.x, v0.y, v0.z], &self.controls, &p, dt, &self.cfg.integrator) {
                let [x, y, yaw] = roll.last_pose();
                let body = Pose3::from_planar(x, y, yaw);
                let next = pose.compose(&ext.inverse()).compose(&body).compose(&ext);
                let [vx, vy, wz] = *roll.velocities.last().expect("rollout has frames");
                let w_o = Vector3::new(0.0, 0.0, wz);
                let v_o = Vector3::new(vx, vy, 0.0);
                let u = ext.rotation.inverse() * (v_o - ext.translation.cross(&w_o));
                if next.is_finite() && u.iter().all(|x| x.is_finite()) {
                    return Ok((next, next.rotation * u));
                }
            }
        }
        let rotation = pose.rotation * so3::exp(&(odom.rot_increment - bias * dt));
        Ok((Pose3::new(rotation, pose.translation + vel * dt), vel))
    }

    /// Removes the oldest recent frame, promoting it to a keyframe when it
    /// moved far enough from the last one.
    fn slide(&mut self) -> Result<bool> {
        let old = self.recent.pop_front().expect("window over capacity");
        let id = old.id;
        let promote = match self.keyframes.back() {
            None => true,
            Some(&k) => {
                let a = self.values.pose(&VarKey::pose(k))?;
                let b = self.values.pose(&VarKey::pose(id))?;
                let rel = a.inverse().compose(b);
                rel.translation.norm() > self.cfg.keyframe_translation
                    || rel.angle() > self.cfg.keyframe_rotation.to_radians()
            }
        };
        self.param_reference = *self.values.params(&VarKey::params(id))?;
        let mut remove = vec![VarKey::velocity(id), VarKey::bias(id), VarKey::extrinsics(id), VarKey::params(id)];
        if !promote {
            remove.push(VarKey::pose(id));
        }
        let mut regularized = self.eliminate(&remove)?;
        if self.recent.len() >= 2 {
            self.add_second_params()?;
        }
        if promote {
            self.keyframes.push_back(id);
            if self.keyframes.len() > self.cfg.keyframes {
                let k = self.keyframes.pop_front().expect("nonempty");
                regularized |= self.eliminate(&[VarKey::pose(k)])?;
            }
        }
        Ok(regularized)
    }

    /// Folds every factor touching `remove` into the prior and drops the
    /// variables.
    fn eliminate(&mut self, remove: &[VarKey]) -> Result<bool> {
        let touches = |f: &dyn Factor| f.keys().iter().any(|k| remove.contains(k));
        let (gone, kept): (Vec<_>, Vec<_>) = std::mem::take(&mut self.factors).into_iter().partition(|f| touches(f.as_ref()));
        self.factors = kept;
        let dynamics = self.dynamics.take_if(|d| touches(&*d)).and_then(|d| self.condition_on_states(&d));
        let mut refs: Vec<&dyn Factor> = gone.iter().map(|f| f.as_ref()).collect();
        if let Some(d) = &dynamics {
            refs.push(d);
        }
        let (prior, report) = marginalize(&refs, self.prior.as_ref(), &self.values, remove)?;
        self.prior = prior;
        for k in remove {
            self.values.remove(k);
        }
        Ok(report.regularized || report.pseudo_inverse)
    }

    /// Linearization of a dynamics factor in its parameters alone, with the
    /// states held at their current estimate. The states stay constrained
    /// by the factors of the following windows, so only the parameter
    /// information is carried into the prior.
    fn condition_on_states(&self, d: &DynamicsFactor) -> Option<LinearFactor> {
        let key = VarKey::params(d.frames[0]);
        let p0 = DVector::from_column_slice(&self.values.params(&key).ok()?.to_array());
        let res = d.evaluate(&self.values).ok()?;
        let jp = res.jacobians.into_iter().next()?;
        Some(LinearFactor { keys: vec![key], offset: &res.value - &jp * p0, blocks: vec![jp], weights: res.weights })
    }

    fn rebuild_dynamics(&mut self) {
        if !(self.gate && self.cfg.use_dynamics && self.recent.len() >= 2) || self.dynamics.is_some() {
            return;
        }
        let frames: Vec<u64> = self.recent.iter().map(|f| f.id).collect();
        self.dynamics = Some(DynamicsFactor {
            frames,
            times: self.recent.iter().map(|f| f.t).collect(),
            gyro: self.recent.iter().map(|f| f.gyro).collect(),
            controls: Arc::clone(&self.controls),
            model: self.model,
            integrator: self.cfg.integrator,
            pose_weight: self.cfg.weights.dynamics_pose,
            velocity_weight: self.cfg.weights.dynamics_velocity,
        });
    }

    /// Model prediction from the newest frame with the parameters of the
    /// first recent frame.
    pub fn current_prediction(&self, horizon: f64) -> Result<RolloutResult> {
        if !self.gate {
            return Err(Error::InvalidInput("dynamics gate is not open yet".into()));
        }
        let newest = self.newest().ok_or_else(|| Error::InvalidInput("empty window".into()))?;
        let p = self.params().ok_or_else(|| Error::InvalidInput("window has no parameters".into()))?;
        let v0 = self.frame_body_velocity(newest)?;
        let dt = if self.recent.len() >= 2 {
            newest.t - self.recent[self.recent.len() - 2].t
        } else {
            1.0 / 30.0
        };
        predict(&self.model, newest.t, horizon, [v0.x, v0.y, v0.z], &self.controls, &p, dt, &self.cfg.integrator)
    }

    /// Every variable currently in the window.
    pub fn variable_count(&self) -> usize {
        self.values.len()
    }

    /// Number of variables of a kind in the window.
    pub fn count(&self, kind: VarKind) -> usize {
        self.values.keys().filter(|k| k.kind == kind).count()
    }
}

/// Largest marginal variance of the bias block; infinite when the Hessian
/// is singular or the block is absent.
fn bias_variance(h: &DMatrix<f64>, at: Option<usize>) -> f64 {
    let Some(at) = at else { return f64::INFINITY };
    let Some(ch) = Cholesky::new(h.clone()) else { return f64::INFINITY };
    let n = h.nrows();
    let mut rhs = DMatrix::zeros(n, 3);
    for c in 0..3 {
        rhs[(at + c, c)] = 1.0;
    }
    let x = ch.solve(&rhs);
    (0..3).map(|c| x[(at + c, c)]).fold(0.0, f64::max)
}

mod unbounded {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        v.is_finite().then_some(*v).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

/// Feeds a whole dataset through an estimator.
pub fn run(
    estimator: &mut Estimator,
    data: &crate::data::Dataset,
    anchors: &dyn AnchorSource,
) -> Result<Vec<StateRecord>> {
    data.odom
        .iter()
        .map(|odom| {
            let gyro = data.nearest_gyro(odom.t).map(|g| g.omega).unwrap_or_else(Vector3::zeros);
            estimator.add_frame(&FrameInput { odom: *odom, gyro }, anchors)
        })
        .collect()
}
