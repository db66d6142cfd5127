//! Ground-truth vehicle simulation and synthetic odometry / gyro streams.

use std::f64::consts::{PI, TAU};

use nalgebra::{UnitQuaternion, Vector3, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, DatasetHeader, GroundTruthRecord, GyroSample, OdomRecord, ParamsTruthRecord};
use crate::dynamics::{
    ControlSample, DynamicsParams, LongitudinalHyperParams, SingleTrack, TireModel, VehicleGeometry,
    VehicleState2D,
};
use crate::error::{Error, Result};
use crate::geometry::{camera_mount_rotation, Extrinsics, Pose3};
use crate::integrate::{compose_planar, integrate_interval, ControlTimeline, IntegratorConfig, TIME_EPS};

pub const DATASET_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensorNoise {
    /// Relative pose translation, m.
    pub translation: f64,
    /// Relative pose rotation, rad.
    pub rotation: f64,
    /// Sensor-frame velocity, m/s.
    pub velocity: f64,
    /// Gyro white noise per sample, rad/s.
    pub gyro: f64,
    /// Gyro bias random walk, rad/s/√s.
    pub bias_walk: f64,
    /// Keyframe co-observation translation, m.
    pub anchor_translation: f64,
    /// Keyframe co-observation rotation, rad.
    pub anchor_rotation: f64,
}

impl Default for SensorNoise {
    fn default() -> Self {
        Self {
            translation: 0.005,
            rotation: 0.1f64.to_radians(),
            velocity: 0.01,
            gyro: 0.005,
            bias_walk: 1e-4,
            anchor_translation: 0.01,
            anchor_rotation: 0.2f64.to_radians(),
        }
    }
}

impl SensorNoise {
    pub fn zero() -> Self {
        Self {
            translation: 0.0,
            rotation: 0.0,
            velocity: 0.0,
            gyro: 0.0,
            bias_walk: 0.0,
            anchor_translation: 0.0,
            anchor_rotation: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let v = [
            self.translation,
            self.rotation,
            self.velocity,
            self.gyro,
            self.bias_walk,
            self.anchor_translation,
            self.anchor_rotation,
        ];
        if v.iter().all(|x| x.is_finite() && *x >= 0.0) {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!("noise levels must be non-negative: {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensorRates {
    pub frame: f64,
    pub gyro: f64,
    pub control: f64,
}

impl Default for SensorRates {
    fn default() -> Self {
        Self { frame: 30.0, gyro: 200.0, control: 20.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub geometry: VehicleGeometry,
    pub params: DynamicsParams,
    /// Later changes of the true coefficients, by increasing time.
    #[serde(default)]
    pub schedule: Vec<ParamsTruthRecord>,
    pub hyper: LongitudinalHyperParams,
    pub extrinsics: Extrinsics,
    #[serde(default)]
    pub tire: TireModel,
    pub noise: SensorNoise,
    pub rates: SensorRates,
    pub initial_bias: Vector3<f64>,
    /// Upper bound on the truth integration step, s.
    pub max_step: f64,
    pub seed: u64,
}

/// Sensor mounted 17 cm ahead of the center of mass and 8 cm above the
/// ground, looking forward.
pub fn default_extrinsics() -> Extrinsics {
    Pose3::new(camera_mount_rotation(), Vector3::new(0.17, 0.0, 0.08))
}

pub fn default_geometry() -> VehicleGeometry {
    VehicleGeometry { mass: 3.0, yaw_inertia: 0.06, front_axle: 0.12, rear_axle: 0.14 }
}

pub fn default_params() -> DynamicsParams {
    DynamicsParams {
        steering_ratio: 0.35,
        throttle_gain: 16.0,
        throttle_damping: 3.5,
        resistance: 6.0,
        tire_stiffness: 60.0,
    }
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            geometry: default_geometry(),
            params: default_params(),
            schedule: Vec::new(),
            hyper: LongitudinalHyperParams::default(),
            extrinsics: default_extrinsics(),
            tire: TireModel::Linear,
            noise: SensorNoise::default(),
            rates: SensorRates::default(),
            initial_bias: Vector3::new(0.01, -0.008, 0.005),
            max_step: 1e-3,
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        self.geometry.validate()?;
        self.hyper.validate()?;
        self.noise.validate()?;
        let r = &self.rates;
        if !(r.frame > 0.0 && r.gyro > 0.0 && r.control > 0.0 && self.max_step > 0.0) {
            return Err(Error::InvalidInput("rates and step size must be positive".into()));
        }
        if !self.params.is_valid() || !self.schedule.iter().all(|e| e.params.is_valid()) {
            return Err(Error::InvalidInput("true parameters must be finite and positive".into()));
        }
        if self.schedule.windows(2).any(|w| w[1].t <= w[0].t) || self.schedule.first().is_some_and(|e| e.t <= 0.0) {
            return Err(Error::InvalidInput("parameter schedule must be increasing and after t = 0".into()));
        }
        Ok(())
    }

    pub fn params_timeline(&self) -> Vec<ParamsTruthRecord> {
        let mut v = vec![ParamsTruthRecord { t: 0.0, params: self.params }];
        v.extend(self.schedule.iter().copied());
        v
    }
}

fn gaussian3(rng: &mut ChaCha8Rng, sigma: f64) -> Vector3<f64> {
    Vector3::from_fn(|_, _| sigma * rng.sample::<f64, _>(StandardNormal))
}

fn perturb(pose: &Pose3, rng: &mut ChaCha8Rng, sigma_t: f64, sigma_r: f64) -> Pose3 {
    let t = gaussian3(rng, sigma_t);
    let r = gaussian3(rng, sigma_r);
    pose.retract(&Vector6::new(t.x, t.y, t.z, r.x, r.y, r.z))
}

/// Sorted union of time grids with near-duplicates merged.
fn merge_times(mut ts: Vec<f64>) -> Vec<f64> {
    ts.sort_by(f64::total_cmp);
    ts.dedup_by(|b, a| (*b - *a).abs() < TIME_EPS);
    ts
}

fn grid(rate: f64, duration: f64) -> Vec<f64> {
    let n = (duration * rate + 1e-9).floor() as usize;
    (0..=n).map(|k| k as f64 / rate).collect()
}

/// Simulates `duration` seconds of driving under `script`.
pub fn simulate(cfg: &SimConfig, script: &ControlTimeline, duration: f64, name: &str) -> Result<Dataset> {
    cfg.validate()?;
    if !(duration > 0.0) {
        return Err(Error::InvalidInput(format!("duration must be positive, got {duration}")));
    }
    if script.start() > TIME_EPS {
        return Err(Error::ControlUnavailable { t: 0.0 });
    }
    let frames = grid(cfg.rates.frame, duration);
    let gyro_grid = grid(cfg.rates.gyro, duration);
    let gyro_times = merge_times(gyro_grid.iter().chain(&frames).copied().collect());
    let schedule = cfg.params_timeline();
    let mut events: Vec<f64> = gyro_times.clone();
    events.extend(script.samples().iter().map(|c| c.t).filter(|&t| t < duration));
    events.extend(schedule.iter().map(|e| e.t).filter(|&t| t < duration));
    let events = merge_times(events);

    let model = SingleTrack::new(cfg.geometry, cfg.hyper).with_tire(cfg.tire);
    let integ = IntegratorConfig { max_step: cfg.max_step };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let ext = cfg.extrinsics;
    let r_oi = ext.rotation;
    let yaw_axis = r_oi.inverse() * Vector3::z();
    let params_at = |t: f64| {
        let idx = schedule.partition_point(|e| e.t <= t + TIME_EPS);
        schedule[idx.max(1) - 1].params
    };

    let start_body = Pose3::new(UnitQuaternion::identity(), -ext.translation);
    let initial_pose = start_body.compose(&ext);

    let mut out = Dataset {
        header: Some(DatasetHeader {
            version: DATASET_VERSION,
            name: name.to_string(),
            seed: cfg.seed,
            frame_rate: cfg.rates.frame,
            gyro_rate: cfg.rates.gyro,
            control_rate: cfg.rates.control,
            geometry: cfg.geometry,
            hyper: cfg.hyper,
            tire: cfg.tire,
            extrinsics: ext,
            initial_pose,
        }),
        controls: script.samples().iter().copied().filter(|c| c.t <= duration + TIME_EPS).collect(),
        params_truth: schedule.iter().copied().filter(|e| e.t <= duration).collect(),
        ..Dataset::default()
    };

    // Body pose of the last frame, state relative to it, bias and its integral.
    let mut frame_body = [0.0; 3];
    let mut s = VehicleState2D::default();
    let mut bias = cfg.initial_bias;
    let mut bias_integral = Vector3::zeros();
    let mut frame_idx = 0usize;
    let mut gyro_idx = 0usize;
    let mut prev_pose = initial_pose;
    let mut t = 0.0;

    let sensor_velocity = |s: &VehicleState2D| {
        let w = Vector3::new(0.0, 0.0, s.yaw_rate);
        Vector3::new(s.vx, s.vy, 0.0) + w.cross(&ext.translation)
    };

    for (k, &te) in events.iter().enumerate() {
        if k > 0 {
            let p = params_at(t);
            s = integrate_interval(&model, &s, script, &p, t, te, &integ)?;
            bias_integral += bias * (te - t);
            t = te;
        }
        let at_gyro = gyro_idx < gyro_times.len() && (gyro_times[gyro_idx] - te).abs() < TIME_EPS;
        let at_frame = frame_idx < frames.len() && (frames[frame_idx] - te).abs() < TIME_EPS;
        if at_frame {
            let body_rel = s.pose();
            let world = compose_planar(frame_body, body_rel);
            let body = start_body.compose(&Pose3::from_planar(world[0], world[1], world[2]));
            let pose = body.compose(&ext);
            let v_o = sensor_velocity(&s);
            let velocity_w = body.rotation * v_o;
            let meas_velocity = r_oi.inverse() * v_o + gaussian3(&mut rng, cfg.noise.velocity);
            let (rel_pose, rot_increment) = if frame_idx == 0 {
                (Pose3::identity(), Vector3::zeros())
            } else {
                let dt = frames[frame_idx] - frames[frame_idx - 1];
                let rel = perturb(&prev_pose.inverse().compose(&pose), &mut rng, cfg.noise.translation, cfg.noise.rotation);
                let sigma = cfg.noise.gyro * (dt / cfg.rates.gyro).sqrt();
                (rel, yaw_axis * body_rel[2] + bias_integral + gaussian3(&mut rng, sigma))
            };
            out.odom.push(OdomRecord { t: te, frame: frame_idx as u64, rel_pose, velocity: meas_velocity, rot_increment });
            out.groundtruth.push(GroundTruthRecord {
                t: te,
                pose,
                velocity: velocity_w,
                gyro_bias: bias,
                body_velocity: Vector3::new(s.vx, s.vy, s.yaw_rate),
            });
            frame_body = world;
            s = VehicleState2D { x: 0.0, y: 0.0, yaw: 0.0, ..s };
            bias_integral = Vector3::zeros();
            prev_pose = pose;
            frame_idx += 1;
        }
        if at_gyro {
            let omega = yaw_axis * s.yaw_rate + bias + gaussian3(&mut rng, cfg.noise.gyro);
            out.gyro.push(GyroSample { t: te, omega });
            gyro_idx += 1;
            let next = gyro_times.get(gyro_idx).copied();
            if let Some(tn) = next {
                bias += gaussian3(&mut rng, cfg.noise.bias_walk * (tn - te).sqrt());
            }
        }
    }
    Ok(out)
}

/// Noisy relative poses between keyframes and recent frames, standing in
/// for visual co-observations. Deterministic in `(seed, keyframe, frame)`.
#[derive(Debug, Clone, PartialEq)]
pub struct KeyframeAnchors {
    poses: Vec<Pose3>,
    pub sigma_translation: f64,
    pub sigma_rotation: f64,
    pub seed: u64,
}

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl KeyframeAnchors {
    pub fn from_dataset(data: &Dataset, noise: &SensorNoise, seed: u64) -> Self {
        Self {
            poses: data.groundtruth.iter().map(|g| g.pose).collect(),
            sigma_translation: noise.anchor_translation,
            sigma_rotation: noise.anchor_rotation,
            seed,
        }
    }

    pub fn measure(&self, keyframe: u64, frame: u64) -> Option<Pose3> {
        let a = self.poses.get(keyframe as usize)?;
        let b = self.poses.get(frame as usize)?;
        let mut rng = ChaCha8Rng::seed_from_u64(mix(mix(self.seed ^ keyframe) ^ frame.rotate_left(32)));
        Some(perturb(&a.inverse().compose(b), &mut rng, self.sigma_translation, self.sigma_rotation))
    }
}

pub const SCRIPT_NAMES: [&str; 4] = ["full-throttle-slalom", "varying-throttle-slalom", "stop-and-go", "straight-accel"];

/// Seconds at rest at the start and at the end of every script.
pub const SCRIPT_LEAD_IN: f64 = 0.5;
pub const SCRIPT_TAIL: f64 = 3.0;

fn multisine(t: f64, terms: &[(f64, f64, f64)]) -> f64 {
    terms.iter().map(|&(a, period, phase)| a * (TAU * t / period + phase).sin()).sum()
}

/// Ramps in smoothly over one second after the lead-in.
fn envelope(t: f64) -> f64 {
    let x = ((t - SCRIPT_LEAD_IN) / 1.0).clamp(0.0, 1.0);
    0.5 - 0.5 * (PI * x).cos()
}

/// Control script by name, sampled at `rate` for `duration` seconds.
pub fn builtin_script(name: &str, duration: f64, rate: f64) -> Result<ControlTimeline> {
    if !(duration > SCRIPT_LEAD_IN + SCRIPT_TAIL) {
        return Err(Error::InvalidInput(format!("script duration {duration} s is too short")));
    }
    let drive_end = duration - SCRIPT_TAIL;
    let law: Box<dyn Fn(f64) -> (f64, f64)> = match name {
        "full-throttle-slalom" => Box::new(|t| {
            (1.0, multisine(t, &[(0.45, 3.3, 0.0), (0.25, 1.9, 1.1), (0.15, 7.1, 2.3)]))
        }),
        "varying-throttle-slalom" => Box::new(|t| {
            let thr = 0.5 + multisine(t, &[(0.25, 6.7, 0.0), (0.15, 2.3, 0.7), (0.08, 1.3, 2.0)]);
            (thr, multisine(t, &[(0.45, 3.1, 0.0), (0.25, 1.7, 1.0), (0.15, 5.3, 0.4)]))
        }),
        "stop-and-go" => Box::new(|t| {
            let cycle = 6.5;
            let phase = (t - SCRIPT_LEAD_IN).rem_euclid(cycle);
            let thr = if phase < 4.0 { 0.45 + multisine(t, &[(0.2, 2.9, 0.3), (0.1, 1.1, 0.0)]) } else { 0.0 };
            (thr, multisine(t, &[(0.5, 3.7, 0.5), (0.25, 1.5, 0.0)]))
        }),
        "straight-accel" => Box::new(|t| {
            let levels = [0.3, 0.7, 1.0, 0.5, 0.15, 0.85, 0.0];
            let idx = (((t - SCRIPT_LEAD_IN) / 2.5).floor().max(0.0) as usize) % levels.len();
            (levels[idx], 0.0)
        }),
        other => return Err(Error::InvalidInput(format!("unknown script {other:?}; available: {SCRIPT_NAMES:?}"))),
    };
    let n = (duration * rate + 1e-9).floor() as usize;
    let samples = (0..=n)
        .map(|k| {
            let t = k as f64 / rate;
            let (thr, st) = if t < SCRIPT_LEAD_IN || t >= drive_end {
                (0.0, 0.0)
            } else if name == "straight-accel" {
                law(t)
            } else {
                let (thr, st) = law(t);
                (thr * envelope(t), st * envelope(t))
            };
            ControlSample::new(t, thr.clamp(0.0, 1.0), st.clamp(-1.0, 1.0))
        })
        .collect::<Result<Vec<_>>>()?;
    ControlTimeline::new(samples)
}

pub fn builtin_scripts(duration: f64, rate: f64) -> Result<Vec<(&'static str, ControlTimeline)>> {
    SCRIPT_NAMES.iter().map(|&n| Ok((n, builtin_script(n, duration, rate)?))).collect()
}
