//! Continuous-time single-track vehicle model.
//!
//! The state lives in the vehicle body frame: planar position and yaw
//! relative to the start of an integration interval, plus longitudinal,
//! lateral and yaw velocity. Two modifications keep the model usable inside
//! a least-squares problem:
//!
//! * slip-angle denominators pass through [`soft_threshold`], so the model is
//!   defined and differentiable at zero longitudinal speed;
//! * the resistance force is shaped by `tanh(sigma * v_x)` so it vanishes at
//!   standstill.
//!
//! Everything is written once over [`Scalar`] and evaluated either on `f64`
//! or on dual numbers to obtain exact partial derivatives.

use nalgebra::SMatrix;
use serde::{Deserialize, Serialize};

use crate::dual::{Dual, Scalar};
use crate::error::{Error, Result};

pub use crate::dual::soft_threshold;

/// Lower clamp applied to every calibrated coefficient after each update.
pub const PARAM_FLOOR: f64 = 1e-6;

/// Number of online-calibrated coefficients.
pub const N_PARAMS: usize = 5;
/// Number of longitudinal shape hyper-parameters.
pub const N_HYPER: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct VehicleState2D {
    pub x: f64,
    pub y: f64,
    /// Unwrapped yaw, rad.
    pub yaw: f64,
    /// Longitudinal body velocity, m/s.
    pub vx: f64,
    /// Lateral body velocity, m/s.
    pub vy: f64,
    /// Yaw rate, rad/s.
    pub yaw_rate: f64,
}

impl VehicleState2D {
    pub fn from_velocity(v: [f64; 3]) -> Self {
        Self { vx: v[0], vy: v[1], yaw_rate: v[2], ..Default::default() }
    }

    pub fn to_array(&self) -> [f64; 6] {
        [self.x, self.y, self.yaw, self.vx, self.vy, self.yaw_rate]
    }

    pub fn from_array(a: [f64; 6]) -> Self {
        Self { x: a[0], y: a[1], yaw: a[2], vx: a[3], vy: a[4], yaw_rate: a[5] }
    }

    pub fn pose(&self) -> [f64; 3] {
        [self.x, self.y, self.yaw]
    }

    pub fn velocity(&self) -> [f64; 3] {
        [self.vx, self.vy, self.yaw_rate]
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

/// Timestamped throttle/steering command.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlSample {
    pub t: f64,
    /// In `[0, 1]`.
    pub throttle: f64,
    /// In `[-1, 1]`.
    pub steering: f64,
}

impl ControlSample {
    pub fn new(t: f64, throttle: f64, steering: f64) -> Result<Self> {
        let ok = t.is_finite()
            && (0.0..=1.0).contains(&throttle)
            && (-1.0..=1.0).contains(&steering);
        if !ok {
            return Err(Error::ControlOutOfBounds { t, throttle, steering });
        }
        Ok(Self { t, throttle, steering })
    }
}

/// Coefficients calibrated online.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DynamicsParams {
    /// Front wheel angle per unit steering input, rad.
    pub steering_ratio: f64,
    /// Throttle-to-force gain, N.
    pub throttle_gain: f64,
    /// Speed-dependent power-train damping, N·s/m.
    pub throttle_damping: f64,
    /// Rolling resistance, N.
    pub resistance: f64,
    /// Linear tire cornering stiffness, N/rad.
    pub tire_stiffness: f64,
}

impl DynamicsParams {
    pub const NAMES: [&'static str; N_PARAMS] =
        ["steering_ratio", "throttle_gain", "throttle_damping", "resistance", "tire_stiffness"];

    pub fn to_array(&self) -> [f64; N_PARAMS] {
        [
            self.steering_ratio,
            self.throttle_gain,
            self.throttle_damping,
            self.resistance,
            self.tire_stiffness,
        ]
    }

    pub fn from_array(a: [f64; N_PARAMS]) -> Self {
        Self {
            steering_ratio: a[0],
            throttle_gain: a[1],
            throttle_damping: a[2],
            resistance: a[3],
            tire_stiffness: a[4],
        }
    }

    pub fn clamped(&self) -> Self {
        Self::from_array(self.to_array().map(|v| v.max(PARAM_FLOOR)))
    }

    pub fn is_valid(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite() && *v >= PARAM_FLOOR)
    }

    /// Multiplies each coefficient by the matching factor.
    pub fn scaled(&self, factors: [f64; N_PARAMS]) -> Self {
        let a = self.to_array();
        Self::from_array(std::array::from_fn(|i| a[i] * factors[i]))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VehicleGeometry {
    /// kg
    pub mass: f64,
    /// kg·m²
    pub yaw_inertia: f64,
    /// Center of mass to front axle, m.
    pub front_axle: f64,
    /// Center of mass to rear axle, m.
    pub rear_axle: f64,
}

impl VehicleGeometry {
    pub fn validate(&self) -> Result<()> {
        let v = [self.mass, self.yaw_inertia, self.front_axle, self.rear_axle];
        if v.iter().all(|x| x.is_finite() && *x > 0.0) {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!("vehicle geometry must be positive: {self:?}")))
        }
    }
}

/// Shape of the longitudinal force; fixed while running online.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LongitudinalHyperParams {
    /// Linear slope of the power-train map.
    pub linear_slope: f64,
    /// Softplus gain of the power-train map, >= 1.
    pub softplus_gain: f64,
    /// Steepness of the resistance `tanh` around zero speed, s/m.
    pub resistance_steepness: f64,
}

impl Default for LongitudinalHyperParams {
    fn default() -> Self {
        Self { linear_slope: 0.202, softplus_gain: 2.335, resistance_steepness: 10.0 }
    }
}

impl LongitudinalHyperParams {
    pub fn to_array(&self) -> [f64; N_HYPER] {
        [self.linear_slope, self.softplus_gain, self.resistance_steepness]
    }

    pub fn from_array(a: [f64; N_HYPER]) -> Self {
        Self { linear_slope: a[0], softplus_gain: a[1], resistance_steepness: a[2] }
    }

    pub fn validate(&self) -> Result<()> {
        if self.softplus_gain >= 1.0 && self.resistance_steepness > 0.0 && self.linear_slope.is_finite() {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!("invalid longitudinal hyper-parameters: {self:?}")))
        }
    }
}

/// Lateral tire force law. Estimation always uses the linear law; the
/// saturating one exists so the simulator can inject model mismatch.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TireModel {
    #[default]
    Linear,
    /// `F = C * s_max * tanh(s / s_max)`.
    Saturating { max_slip: f64 },
}

impl TireModel {
    fn force<T: Scalar>(&self, stiffness: T, slip: T) -> T {
        match *self {
            TireModel::Linear => stiffness * slip,
            TireModel::Saturating { max_slip } => {
                stiffness.scale(max_slip) * slip.scale(1.0 / max_slip).tanh()
            }
        }
    }
}

/// `f(x) = psi * x + tau * log(1 + exp(x)) - log 2`.
pub fn powertrain_map(h: &LongitudinalHyperParams, x: f64) -> f64 {
    powertrain_map_generic(&h.to_array(), x)
}

fn powertrain_map_generic<T: Scalar>(h: &[T; N_HYPER], x: T) -> T {
    h[0] * x + h[1] * x.softplus() - T::cst(std::f64::consts::LN_2)
}

fn longitudinal_force_generic<T: Scalar>(p: &[T; N_PARAMS], h: &[T; N_HYPER], throttle: f64, vx: T) -> T {
    let arg = p[1].scale(throttle) - p[2] * vx;
    powertrain_map_generic(h, arg) - (h[2] * vx).tanh() * p[3]
}

/// Longitudinal force at the center of mass, N.
pub fn longitudinal_force(p: &DynamicsParams, h: &LongitudinalHyperParams, throttle: f64, vx: f64) -> f64 {
    longitudinal_force_generic(&p.to_array(), &h.to_array(), throttle, vx)
}

fn slip_angles_generic<T: Scalar>(vx: T, vy: T, yaw_rate: T, alpha: T, geom: &VehicleGeometry) -> (T, T) {
    let (sa, ca) = (alpha.sin(), alpha.cos());
    let lateral = vy + yaw_rate.scale(geom.front_axle);
    let num_f = vx * sa - lateral * ca;
    let den_f = (vx * ca + lateral * sa).soft_threshold();
    let num_r = yaw_rate.scale(geom.rear_axle) - vy;
    ((num_f / den_f).atan(), (num_r / vx.soft_threshold()).atan())
}

/// Front and rear slip angles for front wheel angle `alpha`.
pub fn slip_angles(s: &VehicleState2D, alpha: f64, geom: &VehicleGeometry) -> (f64, f64) {
    slip_angles_generic(s.vx, s.vy, s.yaw_rate, alpha, geom)
}

/// Linear tire model.
pub fn lateral_forces(slip_front: f64, slip_rear: f64, tire_stiffness: f64) -> (f64, f64) {
    (tire_stiffness * slip_front, tire_stiffness * slip_rear)
}

fn derivative_generic<T: Scalar>(
    geom: &VehicleGeometry,
    tire: TireModel,
    s: &[T; 6],
    u: &ControlSample,
    p: &[T; N_PARAMS],
    h: &[T; N_HYPER],
) -> [T; 6] {
    let [x, y, _, vx, vy, w] = *s;
    let alpha = p[0].scale(u.steering);
    let (sa, ca) = (alpha.sin(), alpha.cos());
    let (slip_f, slip_r) = slip_angles_generic(vx, vy, w, alpha, geom);
    let f_front = tire.force(p[4], slip_f);
    let f_rear = tire.force(p[4], slip_r);
    let f_long = longitudinal_force_generic(p, h, u.throttle, vx);
    let inv_m = 1.0 / geom.mass;
    [
        vx - w * y,
        vy + w * x,
        w,
        (f_long - f_front * sa).scale(inv_m) + vy * w,
        (f_front * ca + f_rear).scale(inv_m) - vx * w,
        (f_front.scale(geom.front_axle) * ca - f_rear.scale(geom.rear_axle)).scale(1.0 / geom.yaw_inertia),
    ]
}

/// Time derivative of the state under control `u` (linear tire model).
pub fn state_derivative(
    s: &VehicleState2D,
    u: &ControlSample,
    p: &DynamicsParams,
    geom: &VehicleGeometry,
    h: &LongitudinalHyperParams,
) -> VehicleState2D {
    SingleTrack::new(*geom, *h).derivative(s, u, p)
}

/// Partial derivatives of the state derivative.
#[derive(Debug, Clone, Copy)]
pub struct DerivativeJacobian {
    pub rate: [f64; 6],
    pub wrt_state: SMatrix<f64, 6, 6>,
    pub wrt_params: SMatrix<f64, 6, N_PARAMS>,
    pub wrt_hyper: SMatrix<f64, 6, N_HYPER>,
}

/// Geometry, longitudinal shape and tire law: the parts of the model that are
/// not calibrated online.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SingleTrack {
    pub geometry: VehicleGeometry,
    pub hyper: LongitudinalHyperParams,
    pub tire: TireModel,
}

impl SingleTrack {
    pub fn new(geometry: VehicleGeometry, hyper: LongitudinalHyperParams) -> Self {
        Self { geometry, hyper, tire: TireModel::Linear }
    }

    pub fn with_tire(mut self, tire: TireModel) -> Self {
        self.tire = tire;
        self
    }

    pub fn derivative_array(&self, s: &[f64; 6], u: &ControlSample, p: &[f64; N_PARAMS]) -> [f64; 6] {
        derivative_generic(&self.geometry, self.tire, s, u, p, &self.hyper.to_array())
    }

    pub fn derivative(&self, s: &VehicleState2D, u: &ControlSample, p: &DynamicsParams) -> VehicleState2D {
        VehicleState2D::from_array(self.derivative_array(&s.to_array(), u, &p.to_array()))
    }

    /// Derivative plus its Jacobians with respect to state, coefficients and
    /// longitudinal hyper-parameters.
    pub fn jacobian(&self, s: &[f64; 6], u: &ControlSample, p: &[f64; N_PARAMS]) -> DerivativeJacobian {
        type D = Dual<14>;
        let sd: [D; 6] = std::array::from_fn(|i| D::seed(s[i], i));
        let pd: [D; N_PARAMS] = std::array::from_fn(|i| D::seed(p[i], 6 + i));
        let h = self.hyper.to_array();
        let hd: [D; N_HYPER] = std::array::from_fn(|i| D::seed(h[i], 11 + i));
        let out = derivative_generic(&self.geometry, self.tire, &sd, u, &pd, &hd);
        let mut jac = DerivativeJacobian {
            rate: out.map(|o| o.v),
            wrt_state: SMatrix::zeros(),
            wrt_params: SMatrix::zeros(),
            wrt_hyper: SMatrix::zeros(),
        };
        for (r, o) in out.iter().enumerate() {
            for c in 0..6 {
                jac.wrt_state[(r, c)] = o.d[c];
            }
            for c in 0..N_PARAMS {
                jac.wrt_params[(r, c)] = o.d[6 + c];
            }
            for c in 0..N_HYPER {
                jac.wrt_hyper[(r, c)] = o.d[11 + c];
            }
        }
        jac
    }
}
