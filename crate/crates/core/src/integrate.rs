//! Fixed-step RK4 integration of the single-track model, multistep rollouts
//! and forward sensitivities.
//!
//! Every frame interval restarts from a zero pose with the velocity carried
//! over from the previous interval; per-interval poses are chained with
//! [`compose_planar`]. Sensitivities are the exact derivative of the discrete
//! RK4 map with respect to the initial body velocity, the calibrated
//! coefficients and the longitudinal hyper-parameters.

use nalgebra::{Matrix3, SMatrix};
use serde::{Deserialize, Serialize};

use crate::dynamics::{ControlSample, DynamicsParams, SingleTrack, N_HYPER, N_PARAMS};
use crate::error::{Error, Result};

/// Columns of a sensitivity block: initial `(v_x, v_y, yaw_rate)`, the five
/// coefficients, then the three hyper-parameters.
pub const N_SENS: usize = 3 + N_PARAMS + N_HYPER;
pub const SENS_PARAMS: usize = 3;
pub const SENS_HYPER: usize = 3 + N_PARAMS;

pub type Sensitivity = SMatrix<f64, 6, N_SENS>;

/// Control timestamps closer than this to an interval boundary are treated
/// as lying on it.
pub const TIME_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntegratorConfig {
    /// Upper bound on the RK4 step, s.
    pub max_step: f64,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self { max_step: 5e-3 }
    }
}

/// Zero-order-hold control log.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlTimeline {
    samples: Vec<ControlSample>,
}

impl ControlTimeline {
    pub fn new(samples: Vec<ControlSample>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InvalidInput("control timeline is empty".into()));
        }
        for w in samples.windows(2) {
            if w[1].t <= w[0].t {
                return Err(Error::ControlOrder { t: w[1].t });
            }
        }
        for s in &samples {
            ControlSample::new(s.t, s.throttle, s.steering)?;
        }
        Ok(Self { samples })
    }

    pub fn samples(&self) -> &[ControlSample] {
        &self.samples
    }

    pub fn start(&self) -> f64 {
        self.samples[0].t
    }

    pub fn end(&self) -> f64 {
        self.samples[self.samples.len() - 1].t
    }

    /// Most recent sample at or before `t`.
    pub fn lookup(&self, t: f64) -> Result<&ControlSample> {
        let idx = self.samples.partition_point(|s| s.t <= t + TIME_EPS);
        if idx == 0 {
            return Err(Error::ControlUnavailable { t });
        }
        Ok(&self.samples[idx - 1])
    }

    /// Control timestamps strictly inside `(t_a, t_b)`.
    pub fn switches_within(&self, t_a: f64, t_b: f64) -> impl Iterator<Item = f64> + '_ {
        let lo = self.samples.partition_point(|s| s.t <= t_a + TIME_EPS);
        self.samples[lo..].iter().map(|s| s.t).take_while(move |&t| t < t_b - TIME_EPS)
    }
}

fn check_finite(s: &[f64; 6], t: f64) -> Result<()> {
    if s.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFiniteState { t })
    }
}

fn axpy(s: &[f64; 6], k: &[f64; 6], h: f64) -> [f64; 6] {
    std::array::from_fn(|i| s[i] + h * k[i])
}

fn rk4_step(model: &SingleTrack, s: &mut [f64; 6], u: &ControlSample, p: &[f64; N_PARAMS], h: f64) {
    let k1 = model.derivative_array(s, u, p);
    let k2 = model.derivative_array(&axpy(s, &k1, 0.5 * h), u, p);
    let k3 = model.derivative_array(&axpy(s, &k2, 0.5 * h), u, p);
    let k4 = model.derivative_array(&axpy(s, &k3, h), u, p);
    for i in 0..6 {
        s[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
}

fn stage_sensitivity(
    model: &SingleTrack,
    s: &[f64; 6],
    ds: &Sensitivity,
    u: &ControlSample,
    p: &[f64; N_PARAMS],
) -> ([f64; 6], Sensitivity) {
    let jac = model.jacobian(s, u, p);
    let mut dk = jac.wrt_state * ds;
    for r in 0..6 {
        for c in 0..N_PARAMS {
            dk[(r, SENS_PARAMS + c)] += jac.wrt_params[(r, c)];
        }
        for c in 0..N_HYPER {
            dk[(r, SENS_HYPER + c)] += jac.wrt_hyper[(r, c)];
        }
    }
    (jac.rate, dk)
}

fn rk4_step_sens(
    model: &SingleTrack,
    s: &mut [f64; 6],
    sens: &mut Sensitivity,
    u: &ControlSample,
    p: &[f64; N_PARAMS],
    h: f64,
) {
    let (k1, d1) = stage_sensitivity(model, s, sens, u, p);
    let (k2, d2) = stage_sensitivity(model, &axpy(s, &k1, 0.5 * h), &(*sens + d1 * (0.5 * h)), u, p);
    let (k3, d3) = stage_sensitivity(model, &axpy(s, &k2, 0.5 * h), &(*sens + d2 * (0.5 * h)), u, p);
    let (k4, d4) = stage_sensitivity(model, &axpy(s, &k3, h), &(*sens + d3 * h), u, p);
    for i in 0..6 {
        s[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    *sens += (d1 + d2 * 2.0 + d3 * 2.0 + d4) * (h / 6.0);
}

/// Integrates over `[t_a, t_b]`, splitting at every control switch inside the
/// interval and holding each control constant over its segment.
fn integrate_segments(
    model: &SingleTrack,
    s: &mut [f64; 6],
    mut sens: Option<&mut Sensitivity>,
    ctrl: &ControlTimeline,
    p: &DynamicsParams,
    t_a: f64,
    t_b: f64,
    cfg: &IntegratorConfig,
) -> Result<()> {
    if !(t_b > t_a) {
        return Err(Error::InvalidInput(format!("empty integration interval [{t_a}, {t_b}]")));
    }
    let pa = p.to_array();
    let mut bounds = Vec::with_capacity(4);
    bounds.push(t_a);
    bounds.extend(ctrl.switches_within(t_a, t_b));
    bounds.push(t_b);
    for seg in bounds.windows(2) {
        let (start, end) = (seg[0], seg[1]);
        let u = *ctrl.lookup(start)?;
        let len = end - start;
        let n = (len / cfg.max_step - 1e-9).ceil().max(1.0) as usize;
        let h = len / n as f64;
        for k in 0..n {
            match sens.as_deref_mut() {
                Some(ds) => rk4_step_sens(model, s, ds, &u, &pa, h),
                None => rk4_step(model, s, &u, &pa, h),
            }
            check_finite(s, start + (k + 1) as f64 * h)?;
        }
    }
    Ok(())
}

/// Integrates the state from `t_a` to `t_b`.
pub fn integrate_interval(
    model: &SingleTrack,
    s0: &crate::dynamics::VehicleState2D,
    ctrl: &ControlTimeline,
    p: &DynamicsParams,
    t_a: f64,
    t_b: f64,
    cfg: &IntegratorConfig,
) -> Result<crate::dynamics::VehicleState2D> {
    let mut s = s0.to_array();
    integrate_segments(model, &mut s, None, ctrl, p, t_a, t_b, cfg)?;
    Ok(crate::dynamics::VehicleState2D::from_array(s))
}

/// Chains a relative planar pose onto `prev`.
pub fn compose_planar(prev: [f64; 3], delta: [f64; 3]) -> [f64; 3] {
    let (s, c) = prev[2].sin_cos();
    [
        c * delta[0] - s * delta[1] + prev[0],
        s * delta[0] + c * delta[1] + prev[1],
        prev[2] + delta[2],
    ]
}

/// Jacobians of [`compose_planar`] with respect to `prev` and `delta`.
pub fn compose_planar_jacobians(prev: [f64; 3], delta: [f64; 3]) -> (Matrix3<f64>, Matrix3<f64>) {
    let (s, c) = prev[2].sin_cos();
    let d_prev = Matrix3::new(
        1.0, 0.0, -s * delta[0] - c * delta[1],
        0.0, 1.0, c * delta[0] - s * delta[1],
        0.0, 0.0, 1.0,
    );
    let d_delta = Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0);
    (d_prev, d_delta)
}

/// Multistep prediction sampled at frame timestamps.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutResult {
    pub times: Vec<f64>,
    /// Pose relative to the first frame; `poses[0]` is the identity.
    pub poses: Vec<[f64; 3]>,
    /// Body velocity `(v_x, v_y, yaw_rate)` at each frame.
    pub velocities: Vec<[f64; 3]>,
    /// Rows `(x, y, yaw, v_x, v_y, yaw_rate)`, columns as in [`N_SENS`].
    pub sensitivities: Option<Vec<Sensitivity>>,
}

impl RolloutResult {
    pub fn last_pose(&self) -> [f64; 3] {
        self.poses[self.poses.len() - 1]
    }
}

/// Rolls the model through the frame timestamps starting from body velocity
/// `v0` at `frames[0]`.
pub fn rollout(
    model: &SingleTrack,
    frames: &[f64],
    v0: [f64; 3],
    ctrl: &ControlTimeline,
    p: &DynamicsParams,
    with_sensitivities: bool,
    cfg: &IntegratorConfig,
) -> Result<RolloutResult> {
    if frames.len() < 2 {
        return Err(Error::InvalidInput("rollout needs at least two frame timestamps".into()));
    }
    if frames.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidInput("rollout frame timestamps must increase".into()));
    }
    let n = frames.len();
    let mut out = RolloutResult {
        times: frames.to_vec(),
        poses: Vec::with_capacity(n),
        velocities: Vec::with_capacity(n),
        sensitivities: with_sensitivities.then(|| Vec::with_capacity(n)),
    };
    let mut pose = [0.0; 3];
    let mut vel = v0;
    let mut sens = Sensitivity::zeros();
    for i in 0..3 {
        sens[(3 + i, i)] = 1.0;
    }
    out.poses.push(pose);
    out.velocities.push(vel);
    if let Some(v) = out.sensitivities.as_mut() {
        v.push(sens);
    }

    for w in frames.windows(2) {
        let mut s = [0.0, 0.0, 0.0, vel[0], vel[1], vel[2]];
        if with_sensitivities {
            let mut ds = sens;
            for r in 0..3 {
                for c in 0..N_SENS {
                    ds[(r, c)] = 0.0;
                }
            }
            integrate_segments(model, &mut s, Some(&mut ds), ctrl, p, w[0], w[1], cfg)?;
            let delta = [s[0], s[1], s[2]];
            let (jp, jd) = compose_planar_jacobians(pose, delta);
            let pose_rows = jp * sens.fixed_rows::<3>(0) + jd * ds.fixed_rows::<3>(0);
            sens.fixed_rows_mut::<3>(0).copy_from(&pose_rows);
            let vel_rows = ds.fixed_rows::<3>(3).into_owned();
            sens.fixed_rows_mut::<3>(3).copy_from(&vel_rows);
            pose = compose_planar(pose, delta);
        } else {
            integrate_segments(model, &mut s, None, ctrl, p, w[0], w[1], cfg)?;
            pose = compose_planar(pose, [s[0], s[1], s[2]]);
        }
        vel = [s[3], s[4], s[5]];
        out.poses.push(pose);
        out.velocities.push(vel);
        if let Some(v) = out.sensitivities.as_mut() {
            v.push(sens);
        }
    }
    Ok(out)
}

/// Open-loop prediction from `t_start`, sampled every `frame_dt` up to
/// `horizon` seconds (rounded to whole frames).
pub fn predict(
    model: &SingleTrack,
    t_start: f64,
    horizon: f64,
    v0: [f64; 3],
    plan: &ControlTimeline,
    p: &DynamicsParams,
    frame_dt: f64,
    cfg: &IntegratorConfig,
) -> Result<RolloutResult> {
    if !(horizon >= 0.0) || !(frame_dt > 0.0) {
        return Err(Error::InvalidInput(format!("invalid prediction horizon {horizon} / step {frame_dt}")));
    }
    let steps = (horizon / frame_dt).round() as usize;
    if steps == 0 {
        return Ok(RolloutResult {
            times: vec![t_start],
            poses: vec![[0.0; 3]],
            velocities: vec![v0],
            sensitivities: None,
        });
    }
    let frames: Vec<f64> = (0..=steps).map(|k| t_start + k as f64 * frame_dt).collect();
    rollout(model, &frames, v0, plan, p, false, cfg)
}
