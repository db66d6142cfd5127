//! Rigid-body algebra and the geometric measurement functions of the vehicle
//! model: body velocity extraction, relative body poses, planar projection
//! and the mounting constraints.
//!
//! Tangent vectors of a [`Pose3`] are ordered `[δp, δφ]` with the update
//! `p ← p + δp`, `R ← R·Exp(δφ)`.

use nalgebra::{Matrix3, SMatrix, UnitQuaternion, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Matrix3x6 = SMatrix<f64, 3, 6>;

/// Rotations closer to π than this are rejected by [`project_planar`].
pub const NEAR_PI_MARGIN: f64 = 1e-3;

pub mod so3 {
    use nalgebra::{Matrix3, UnitQuaternion, Vector3};

    pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
        Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
    }

    pub fn exp(phi: &Vector3<f64>) -> UnitQuaternion<f64> {
        UnitQuaternion::from_scaled_axis(*phi)
    }

    /// Rotation vector of `q`, accurate for small angles.
    pub fn log(q: &UnitQuaternion<f64>) -> Vector3<f64> {
        let (w, v) = if q.w < 0.0 { (-q.w, -q.imag()) } else { (q.w, q.imag()) };
        let n = v.norm();
        if n < 1e-12 {
            return v * (2.0 / w);
        }
        v * (2.0 * n.atan2(w) / n)
    }

    pub fn angle(q: &UnitQuaternion<f64>) -> f64 {
        log(q).norm()
    }

    /// Right Jacobian of the exponential map.
    pub fn right_jacobian(phi: &Vector3<f64>) -> Matrix3<f64> {
        let t2 = phi.norm_squared();
        let k = skew(phi);
        let (a, b) = if t2 < 1e-10 {
            (0.5 - t2 / 24.0, 1.0 / 6.0 - t2 / 120.0)
        } else {
            let t = t2.sqrt();
            ((1.0 - t.cos()) / t2, (t - t.sin()) / (t2 * t))
        };
        Matrix3::identity() - k * a + k * k * b
    }

    pub fn right_jacobian_inv(phi: &Vector3<f64>) -> Matrix3<f64> {
        let t2 = phi.norm_squared();
        let k = skew(phi);
        let c = if t2 < 1e-10 {
            1.0 / 12.0 + t2 / 720.0
        } else {
            let t = t2.sqrt();
            1.0 / t2 - (1.0 + t.cos()) / (2.0 * t * t.sin())
        };
        Matrix3::identity() + k * 0.5 + k * k * c
    }
}

use so3::skew;

/// Rigid transform; maps points of its child frame into its parent frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose3 {
    pub rotation: UnitQuaternion<f64>,
    pub translation: Vector3<f64>,
}

/// Pose of the inertial sensor expressed in the vehicle body frame.
pub type Extrinsics = Pose3;

impl Default for Pose3 {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose3 {
    pub fn identity() -> Self {
        Self { rotation: UnitQuaternion::identity(), translation: Vector3::zeros() }
    }

    pub fn new(rotation: UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        Self { rotation, translation }
    }

    pub fn from_planar(x: f64, y: f64, yaw: f64) -> Self {
        Self::new(UnitQuaternion::from_euler_angles(0.0, 0.0, yaw), Vector3::new(x, y, 0.0))
    }

    pub fn rot(&self) -> Matrix3<f64> {
        *self.rotation.to_rotation_matrix().matrix()
    }

    pub fn compose(&self, o: &Pose3) -> Pose3 {
        Pose3 {
            rotation: self.rotation * o.rotation,
            translation: self.translation + self.rotation * o.translation,
        }
    }

    pub fn inverse(&self) -> Pose3 {
        let r = self.rotation.inverse();
        Pose3 { rotation: r, translation: -(r * self.translation) }
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn retract(&self, d: &Vector6<f64>) -> Pose3 {
        let dp = Vector3::new(d[0], d[1], d[2]);
        let dphi = Vector3::new(d[3], d[4], d[5]);
        Pose3 {
            rotation: UnitQuaternion::new_normalize(*(self.rotation * so3::exp(&dphi)).quaternion()),
            translation: self.translation + dp,
        }
    }

    /// Tangent vector `d` with `self.retract(d) == other`.
    pub fn local(&self, other: &Pose3) -> Vector6<f64> {
        let dp = other.translation - self.translation;
        let dphi = so3::log(&(self.rotation.inverse() * other.rotation));
        Vector6::new(dp.x, dp.y, dp.z, dphi.x, dphi.y, dphi.z)
    }

    pub fn is_finite(&self) -> bool {
        self.translation.iter().all(|v| v.is_finite()) && self.rotation.coords.iter().all(|v| v.is_finite())
    }

    /// Rotation angle in radians.
    pub fn angle(&self) -> f64 {
        so3::angle(&self.rotation)
    }
}

/// Planar body velocity with Jacobians.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BodyVelocity {
    /// `(v_x, v_y, yaw_rate)` in the body frame.
    pub value: Vector3<f64>,
    pub wrt_pose: Matrix3x6,
    pub wrt_velocity: Matrix3<f64>,
    pub wrt_bias: Matrix3<f64>,
    pub wrt_extrinsics: Matrix3x6,
}

fn select_xy_z(v: &Matrix3<f64>, w: &Matrix3<f64>) -> Matrix3<f64> {
    let mut out = Matrix3::zeros();
    out.fixed_rows_mut::<2>(0).copy_from(&v.fixed_rows::<2>(0));
    out.row_mut(2).copy_from(&w.row(2));
    out
}

/// Body-frame planar velocity from a sensor state. `v_w` is the sensor
/// velocity in the world frame, `gyro` a raw angular-rate sample.
pub fn body_velocity(
    t_wi: &Pose3,
    v_w: &Vector3<f64>,
    gyro: &Vector3<f64>,
    b_g: &Vector3<f64>,
    ext: &Extrinsics,
) -> Vector3<f64> {
    let w_o = ext.rotation * (gyro - b_g);
    let v_o = ext.rotation * (t_wi.rotation.inverse() * v_w) + ext.translation.cross(&w_o);
    Vector3::new(v_o.x, v_o.y, w_o.z)
}

pub fn body_velocity_jacobians(
    t_wi: &Pose3,
    v_w: &Vector3<f64>,
    gyro: &Vector3<f64>,
    b_g: &Vector3<f64>,
    ext: &Extrinsics,
) -> BodyVelocity {
    let r_oi = ext.rot();
    let r_wi = t_wi.rot();
    let t = ext.translation;
    let w = gyro - b_g;
    let u = r_wi.transpose() * v_w;
    let w_o = r_oi * w;
    let v_o = r_oi * u + t.cross(&w_o);

    let zero = Matrix3::zeros();
    let mut wrt_pose = Matrix3x6::zeros();
    wrt_pose.fixed_columns_mut::<3>(3).copy_from(&select_xy_z(&(r_oi * skew(&u)), &zero));
    let wrt_velocity = select_xy_z(&(r_oi * r_wi.transpose()), &zero);
    let wrt_bias = select_xy_z(&(-skew(&t) * r_oi), &(-r_oi));
    let mut wrt_extrinsics = Matrix3x6::zeros();
    wrt_extrinsics.fixed_columns_mut::<3>(0).copy_from(&select_xy_z(&(-skew(&w_o)), &zero));
    let d_phi_v = -r_oi * skew(&u) - skew(&t) * r_oi * skew(&w);
    let d_phi_w = -r_oi * skew(&w);
    wrt_extrinsics.fixed_columns_mut::<3>(3).copy_from(&select_xy_z(&d_phi_v, &d_phi_w));

    BodyVelocity {
        value: Vector3::new(v_o.x, v_o.y, w_o.z),
        wrt_pose,
        wrt_velocity,
        wrt_bias,
        wrt_extrinsics,
    }
}

/// Pose of the body at the second state expressed in the body frame of the
/// first: `E_a · T_a⁻¹ · T_b · E_b⁻¹`.
pub fn relative_body_pose(t_a: &Pose3, e_a: &Extrinsics, t_b: &Pose3, e_b: &Extrinsics) -> Pose3 {
    e_a.compose(&t_a.inverse()).compose(t_b).compose(&e_b.inverse())
}

/// Jacobians of the translation and the rotation logarithm of
/// [`relative_body_pose`], ordered `(t_a, e_a, t_b, e_b)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelativePoseJacobians {
    pub pose: Pose3,
    pub log: Vector3<f64>,
    pub d_translation: [Matrix3x6; 4],
    pub d_log: [Matrix3x6; 4],
}

pub fn relative_body_pose_jacobians(
    t_a: &Pose3,
    e_a: &Extrinsics,
    t_b: &Pose3,
    e_b: &Extrinsics,
) -> RelativePoseJacobians {
    let pose = relative_body_pose(t_a, e_a, t_b, e_b);
    let log = so3::log(&pose.rotation);
    let jr_inv = so3::right_jacobian_inv(&log);

    let (r_a, r_b, r_e0, r_en) = (t_a.rot(), t_b.rot(), e_a.rot(), e_b.rot());
    let q = r_en.transpose() * e_b.translation;
    let w = t_b.translation - r_b * q - t_a.translation;
    let m = r_e0 * r_a.transpose();
    let x = r_a.transpose() * r_b * r_en.transpose();
    let raw = skew(&(r_a.transpose() * w));

    let block = |dp: Matrix3<f64>, dphi: Matrix3<f64>| {
        let mut j = Matrix3x6::zeros();
        j.fixed_columns_mut::<3>(0).copy_from(&dp);
        j.fixed_columns_mut::<3>(3).copy_from(&dphi);
        j
    };
    let z = Matrix3::zeros();
    let d_translation = [
        block(-m, r_e0 * raw),
        block(Matrix3::identity(), -r_e0 * raw),
        block(m, m * r_b * skew(&q)),
        block(-m * r_b * r_en.transpose(), -m * r_b * skew(&q)),
    ];
    let d_log = [
        block(z, -jr_inv * x.transpose()),
        block(z, jr_inv * x.transpose()),
        block(z, jr_inv * r_en),
        block(z, -jr_inv * r_en),
    ];
    RelativePoseJacobians { pose, log, d_translation, d_log }
}

/// Planar `(x, y, yaw)` of a relative pose: translation x/y and the z
/// component of the rotation logarithm.
pub fn project_planar(rel: &Pose3) -> Result<[f64; 3]> {
    let log = so3::log(&rel.rotation);
    let angle = log.norm();
    if angle >= std::f64::consts::PI - NEAR_PI_MARGIN {
        return Err(Error::NearPiRotation { angle });
    }
    Ok([rel.translation.x, rel.translation.y, log.z])
}

/// Planar projection of the relative body pose together with its 3×6
/// Jacobians, ordered `(t_a, e_a, t_b, e_b)`.
pub fn planar_relative_pose(
    t_a: &Pose3,
    e_a: &Extrinsics,
    t_b: &Pose3,
    e_b: &Extrinsics,
) -> Result<([f64; 3], [Matrix3x6; 4])> {
    let j = relative_body_pose_jacobians(t_a, e_a, t_b, e_b);
    let planar = project_planar(&j.pose)?;
    let blocks = std::array::from_fn(|k| {
        let mut b = Matrix3x6::zeros();
        b.fixed_rows_mut::<2>(0).copy_from(&j.d_translation[k].fixed_rows::<2>(0));
        b.row_mut(2).copy_from(&j.d_log[k].row(2));
        b
    });
    Ok((planar, blocks))
}

/// Residual with Jacobians with respect to the sensor pose and extrinsics.
#[derive(Debug, Clone, PartialEq)]
pub struct GeometricResidual<const R: usize> {
    pub value: SMatrix<f64, R, 1>,
    pub wrt_pose: SMatrix<f64, R, 6>,
    pub wrt_extrinsics: SMatrix<f64, R, 6>,
}

/// Deviation of the body from the ground plane `z = -d` with normal `e₃`.
pub fn plane_residual(t_wi: &Pose3, ext: &Extrinsics, d: f64) -> GeometricResidual<3> {
    let r_wi = t_wi.rot();
    let r_oi = ext.rot();
    let a = r_oi.transpose() * Vector3::z();
    let b = r_oi.transpose() * ext.translation;
    let normal = r_wi * a;
    let origin = t_wi.translation - r_wi * b;

    let mut wrt_pose = SMatrix::<f64, 3, 6>::zeros();
    let mut wrt_extrinsics = SMatrix::<f64, 3, 6>::zeros();
    let n_phi_pose = -r_wi * skew(&a);
    let o_phi_pose = r_wi * skew(&b);
    let n_phi_ext = r_wi * skew(&a);
    let o_phi_ext = -r_wi * skew(&b);
    let o_p_ext = -r_wi * r_oi.transpose();
    for c in 0..3 {
        wrt_pose[(0, 3 + c)] = n_phi_pose[(0, c)];
        wrt_pose[(1, 3 + c)] = n_phi_pose[(1, c)];
        wrt_pose[(2, 3 + c)] = o_phi_pose[(2, c)];
        wrt_extrinsics[(0, 3 + c)] = n_phi_ext[(0, c)];
        wrt_extrinsics[(1, 3 + c)] = n_phi_ext[(1, c)];
        wrt_extrinsics[(2, 3 + c)] = o_phi_ext[(2, c)];
        wrt_extrinsics[(2, c)] = o_p_ext[(2, c)];
    }
    wrt_pose[(2, 2)] = 1.0;
    GeometricResidual {
        value: Vector3::new(normal.x, normal.y, d + origin.z),
        wrt_pose,
        wrt_extrinsics,
    }
}

/// Mounting priors: plane constraint, no yaw of the sensor forward axis
/// relative to the body, and lateral / longitudinal lever-arm priors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MountingPrior {
    /// Height of the sensor above the ground plane, m.
    pub plane_offset: f64,
    /// Lateral sensor offset from the body x axis, m.
    pub lateral_offset: f64,
    /// Front axle distance from the center of mass, m.
    pub front_axle: f64,
    /// Longitudinal sensor offset ahead of the front axle, m.
    pub front_offset: f64,
    /// Sensor-frame axis that must stay aligned with the body x-z plane.
    pub forward_axis: [f64; 3],
}

pub fn geometry_residual(t_wi: &Pose3, ext: &Extrinsics, prior: &MountingPrior) -> GeometricResidual<6> {
    let plane = plane_residual(t_wi, ext, prior.plane_offset);
    let axis = Vector3::from(prior.forward_axis);
    let r_oi = ext.rot();
    let yaw = (r_oi * axis).y;
    let d_yaw = -r_oi * skew(&axis);
    let p = ext.translation;

    let mut value = SMatrix::<f64, 6, 1>::zeros();
    value.fixed_rows_mut::<3>(0).copy_from(&plane.value);
    value[3] = yaw;
    value[4] = p.y - prior.lateral_offset;
    value[5] = p.x - prior.front_axle - prior.front_offset;

    let mut wrt_pose = SMatrix::<f64, 6, 6>::zeros();
    wrt_pose.fixed_rows_mut::<3>(0).copy_from(&plane.wrt_pose);
    let mut wrt_extrinsics = SMatrix::<f64, 6, 6>::zeros();
    wrt_extrinsics.fixed_rows_mut::<3>(0).copy_from(&plane.wrt_extrinsics);
    for c in 0..3 {
        wrt_extrinsics[(3, 3 + c)] = d_yaw[(1, c)];
    }
    wrt_extrinsics[(4, 1)] = 1.0;
    wrt_extrinsics[(5, 0)] = 1.0;
    GeometricResidual { value, wrt_pose, wrt_extrinsics }
}

/// Sensor-to-body rotation for a sensor with z forward, x right and y down
/// mounted level on a body with x forward, y left and z up.
pub fn camera_mount_rotation() -> UnitQuaternion<f64> {
    let m = Matrix3::new(0.0, 0.0, 1.0, -1.0, 0.0, 0.0, 0.0, -1.0, 0.0);
    UnitQuaternion::from_matrix(&m)
}
