//! Residual definitions of the estimator's factor graph.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, Matrix3, SMatrix, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::dynamics::{DynamicsParams, SingleTrack, N_PARAMS};
use crate::error::{Error, Result};
use crate::geometry::{
    body_velocity_jacobians, geometry_residual, planar_relative_pose, so3, MountingPrior, Pose3,
};
use crate::graph::{Factor, Residual, Values, VarKey};
use crate::integrate::{rollout, ControlTimeline, IntegratorConfig, SENS_PARAMS};

/// Information weights of the model-based factors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FactorWeights {
    pub dynamics_pose: f64,
    pub dynamics_velocity: f64,
    pub geometry: f64,
    pub extrinsics_prior: f64,
    /// Multiplied by `30·dt` for frames `dt` seconds apart.
    pub extrinsics_walk: f64,
    pub param_prior: f64,
    /// Multiplied by `30·dt` for frames `dt` seconds apart.
    pub param_walk: f64,
}

impl Default for FactorWeights {
    fn default() -> Self {
        Self {
            dynamics_pose: 1e3,
            dynamics_velocity: 1e3,
            geometry: 1e4,
            extrinsics_prior: 1.0,
            extrinsics_walk: 1e4,
            param_prior: 20.0,
            param_walk: 1e8,
        }
    }
}

pub(crate) fn dm<const R: usize, const C: usize>(m: &SMatrix<f64, R, C>) -> DMatrix<f64> {
    DMatrix::from_column_slice(R, C, m.as_slice())
}

fn copy_into<const R: usize, const C: usize>(dst: &mut DMatrix<f64>, row: usize, col: usize, m: &SMatrix<f64, R, C>) {
    dst.view_mut((row, col), (R, C)).copy_from(m);
}

/// `[p_j − p_i rotated into i − p_z, Log(R_zᵀ R_iᵀ R_j)]` and its Jacobians
/// with respect to `i` and `j`.
pub fn between_residual(pi: &Pose3, pj: &Pose3, meas: &Pose3) -> (Vector6<f64>, SMatrix<f64, 6, 6>, SMatrix<f64, 6, 6>) {
    let ri = pi.rot();
    let rij = ri.transpose() * pj.rot();
    let pij = ri.transpose() * (pj.translation - pi.translation);
    let rp = pij - meas.translation;
    let rr = so3::log(&(meas.rotation.inverse() * pi.rotation.inverse() * pj.rotation));
    let jr_inv = so3::right_jacobian_inv(&rr);

    let mut ji = SMatrix::<f64, 6, 6>::zeros();
    let mut jj = SMatrix::<f64, 6, 6>::zeros();
    ji.fixed_view_mut::<3, 3>(0, 0).copy_from(&-ri.transpose());
    ji.fixed_view_mut::<3, 3>(0, 3).copy_from(&so3::skew(&pij));
    ji.fixed_view_mut::<3, 3>(3, 3).copy_from(&(-jr_inv * rij.transpose()));
    jj.fixed_view_mut::<3, 3>(0, 0).copy_from(&ri.transpose());
    jj.fixed_view_mut::<3, 3>(3, 3).copy_from(&jr_inv);
    (Vector6::new(rp.x, rp.y, rp.z, rr.x, rr.y, rr.z), ji, jj)
}

/// Tangent-space offset `[p − p₀, Log(R₀ᵀ R)]` with its Jacobian.
pub fn prior_residual(x: &Pose3, prior: &Pose3) -> (Vector6<f64>, SMatrix<f64, 6, 6>) {
    let r = prior.local(x);
    let mut j = SMatrix::<f64, 6, 6>::identity();
    j.fixed_view_mut::<3, 3>(3, 3).copy_from(&so3::right_jacobian_inv(&Vector3::new(r[3], r[4], r[5])));
    (r, j)
}

fn weights(parts: &[(usize, f64)]) -> DVector<f64> {
    DVector::from_iterator(
        parts.iter().map(|p| p.0).sum(),
        parts.iter().flat_map(|&(n, w)| std::iter::repeat_n(w, n)),
    )
}

/// Standard deviations of the odometry front end as seen by the estimator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OdometryNoise {
    pub translation: f64,
    pub rotation: f64,
    pub velocity: f64,
    /// Gyro white noise density per sample, rad/s.
    pub gyro: f64,
    pub gyro_rate: f64,
    /// Gyro bias random walk, rad/s/√s.
    pub bias_walk: f64,
}

impl OdometryNoise {
    /// Information weights for frames `dt` apart. Standard deviations are
    /// floored so noise-free data still yields finite weights.
    pub fn weights(&self, dt: f64) -> [f64; 5] {
        let inv = |s: f64, floor: f64| 1.0 / s.max(floor).powi(2);
        [
            inv(self.translation, 1e-4),
            inv(self.rotation, 1e-5),
            inv(self.velocity, 1e-4),
            inv(self.bias_walk * dt.sqrt(), 1e-6),
            inv(self.gyro * (dt / self.gyro_rate).sqrt(), 1e-6),
        ]
    }
}

/// Relative pose, velocity, gyro-bias walk and gyro rotation between two
/// consecutive frames.
#[derive(Debug, Clone, PartialEq)]
pub struct OdometryFactor {
    pub from: u64,
    pub to: u64,
    pub rel_pose: Pose3,
    /// Velocity of frame `to` in its sensor frame.
    pub velocity: Vector3<f64>,
    pub rot_increment: Vector3<f64>,
    pub dt: f64,
    /// Translation, rotation, velocity, bias walk, gyro rotation.
    pub weights: [f64; 5],
}

impl Factor for OdometryFactor {
    fn keys(&self) -> Vec<VarKey> {
        vec![
            VarKey::pose(self.from),
            VarKey::pose(self.to),
            VarKey::velocity(self.to),
            VarKey::bias(self.from),
            VarKey::bias(self.to),
        ]
    }

    fn evaluate(&self, values: &Values) -> Result<Residual> {
        let pi = values.pose(&VarKey::pose(self.from))?;
        let pj = values.pose(&VarKey::pose(self.to))?;
        let vj = values.vector(&VarKey::velocity(self.to))?;
        let bi = values.vector(&VarKey::bias(self.from))?;
        let bj = values.vector(&VarKey::bias(self.to))?;

        let (rel, ji, jj) = between_residual(pi, pj, &self.rel_pose);
        let rj = pj.rot();
        let rv = rj.transpose() * vj - self.velocity;
        let rb = bj - bi;

        let g = self.rot_increment - bi * self.dt;
        let rij = pi.rot().transpose() * rj;
        let x = so3::exp(&g).inverse() * pi.rotation.inverse() * pj.rotation;
        let rg = so3::log(&x);
        let jr_inv = so3::right_jacobian_inv(&rg);
        let xm = *x.to_rotation_matrix().matrix();

        let mut value = DVector::zeros(15);
        value.rows_mut(0, 6).copy_from(&rel);
        value.rows_mut(6, 3).copy_from(&rv);
        value.rows_mut(9, 3).copy_from(&rb);
        value.rows_mut(12, 3).copy_from(&rg);

        let mut d_pi = DMatrix::zeros(15, 6);
        let mut d_pj = DMatrix::zeros(15, 6);
        let mut d_vj = DMatrix::zeros(15, 3);
        let mut d_bi = DMatrix::zeros(15, 3);
        let mut d_bj = DMatrix::zeros(15, 3);
        copy_into(&mut d_pi, 0, 0, &ji);
        copy_into(&mut d_pj, 0, 0, &jj);
        copy_into(&mut d_pj, 6, 3, &so3::skew(&(rj.transpose() * vj)));
        copy_into(&mut d_vj, 6, 0, &rj.transpose());
        copy_into(&mut d_bi, 9, 0, &-Matrix3::identity());
        copy_into(&mut d_bj, 9, 0, &Matrix3::identity());
        copy_into(&mut d_pi, 12, 3, &(-jr_inv * rij.transpose()));
        copy_into(&mut d_pj, 12, 3, &jr_inv);
        copy_into(&mut d_bi, 12, 0, &(jr_inv * xm.transpose() * so3::right_jacobian(&g) * self.dt));

        let [wt, wr, wv, wb, wg] = self.weights;
        Ok(Residual {
            value,
            jacobians: vec![d_pi, d_pj, d_vj, d_bi, d_bj],
            weights: weights(&[(3, wt), (3, wr), (3, wv), (3, wb), (3, wg)]),
        })
    }

    fn name(&self) -> &'static str {
        "odometry"
    }
}

/// Relative pose between a keyframe and a recent frame.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorFactor {
    pub keyframe: u64,
    pub frame: u64,
    pub rel_pose: Pose3,
    pub translation_weight: f64,
    pub rotation_weight: f64,
}

impl Factor for AnchorFactor {
    fn keys(&self) -> Vec<VarKey> {
        vec![VarKey::pose(self.keyframe), VarKey::pose(self.frame)]
    }

    fn evaluate(&self, values: &Values) -> Result<Residual> {
        let pi = values.pose(&VarKey::pose(self.keyframe))?;
        let pj = values.pose(&VarKey::pose(self.frame))?;
        let (r, ji, jj) = between_residual(pi, pj, &self.rel_pose);
        Ok(Residual {
            value: DVector::from_column_slice(r.as_slice()),
            jacobians: vec![dm(&ji), dm(&jj)],
            weights: weights(&[(3, self.translation_weight), (3, self.rotation_weight)]),
        })
    }

    fn name(&self) -> &'static str {
        "anchor"
    }
}

/// Pose prior fixing the gauge, velocity measurement and a bias prior for
/// the first frame.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialStateFactor {
    pub frame: u64,
    pub pose: Pose3,
    pub velocity: Vector3<f64>,
    pub bias: Vector3<f64>,
    /// Pose, velocity, bias.
    pub weights: [f64; 3],
}

impl Factor for InitialStateFactor {
    fn keys(&self) -> Vec<VarKey> {
        vec![VarKey::pose(self.frame), VarKey::velocity(self.frame), VarKey::bias(self.frame)]
    }

    fn evaluate(&self, values: &Values) -> Result<Residual> {
        let p = values.pose(&VarKey::pose(self.frame))?;
        let v = values.vector(&VarKey::velocity(self.frame))?;
        let b = values.vector(&VarKey::bias(self.frame))?;
        let (rp, jp) = prior_residual(p, &self.pose);
        let r = p.rot();
        let rv = r.transpose() * v - self.velocity;
        let mut value = DVector::zeros(12);
        value.rows_mut(0, 6).copy_from(&rp);
        value.rows_mut(6, 3).copy_from(&rv);
        value.rows_mut(9, 3).copy_from(&(b - self.bias));
        let mut d_p = DMatrix::zeros(12, 6);
        let mut d_v = DMatrix::zeros(12, 3);
        let mut d_b = DMatrix::zeros(12, 3);
        copy_into(&mut d_p, 0, 0, &jp);
        copy_into(&mut d_p, 6, 3, &so3::skew(&(r.transpose() * v)));
        copy_into(&mut d_v, 6, 0, &r.transpose());
        copy_into(&mut d_b, 9, 0, &Matrix3::identity());
        let [wp, wv, wb] = self.weights;
        Ok(Residual { value, jacobians: vec![d_p, d_v, d_b], weights: weights(&[(6, wp), (3, wv), (3, wb)]) })
    }

    fn name(&self) -> &'static str {
        "initial"
    }
}

/// Plane, yaw-alignment and lever-arm constraints on one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct GeometryFactor {
    pub frame: u64,
    pub prior: MountingPrior,
    pub weight: f64,
}

impl Factor for GeometryFactor {
    fn keys(&self) -> Vec<VarKey> {
        vec![VarKey::pose(self.frame), VarKey::extrinsics(self.frame)]
    }

    fn evaluate(&self, values: &Values) -> Result<Residual> {
        let p = values.pose(&VarKey::pose(self.frame))?;
        let e = values.pose(&VarKey::extrinsics(self.frame))?;
        let r = geometry_residual(p, e, &self.prior);
        Ok(Residual {
            value: DVector::from_column_slice(r.value.as_slice()),
            jacobians: vec![dm(&r.wrt_pose), dm(&r.wrt_extrinsics)],
            weights: DVector::from_element(6, self.weight),
        })
    }

    fn name(&self) -> &'static str {
        "geometry"
    }
}

/// Weak prior tying the extrinsics to their initial value.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtrinsicsPriorFactor {
    pub frame: u64,
    pub prior: Pose3,
    pub weight: f64,
}

impl Factor for ExtrinsicsPriorFactor {
    fn keys(&self) -> Vec<VarKey> {
        vec![VarKey::extrinsics(self.frame)]
    }

    fn evaluate(&self, values: &Values) -> Result<Residual> {
        let e = values.pose(&VarKey::extrinsics(self.frame))?;
        let (r, j) = prior_residual(e, &self.prior);
        Ok(Residual {
            value: DVector::from_column_slice(r.as_slice()),
            jacobians: vec![dm(&j)],
            weights: DVector::from_element(6, self.weight),
        })
    }

    fn name(&self) -> &'static str {
        "extrinsics_prior"
    }
}

/// Smoothness of the extrinsics between consecutive frames.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtrinsicsWalkFactor {
    pub from: u64,
    pub to: u64,
    pub weight: f64,
}

impl Factor for ExtrinsicsWalkFactor {
    fn keys(&self) -> Vec<VarKey> {
        vec![VarKey::extrinsics(self.from), VarKey::extrinsics(self.to)]
    }

    fn evaluate(&self, values: &Values) -> Result<Residual> {
        let a = values.pose(&VarKey::extrinsics(self.from))?;
        let b = values.pose(&VarKey::extrinsics(self.to))?;
        let r = a.local(b);
        let jr_inv = so3::right_jacobian_inv(&Vector3::new(r[3], r[4], r[5]));
        let rab = a.rot().transpose() * b.rot();
        let mut ja = SMatrix::<f64, 6, 6>::zeros();
        let mut jb = SMatrix::<f64, 6, 6>::identity();
        ja.fixed_view_mut::<3, 3>(0, 0).copy_from(&-Matrix3::identity());
        ja.fixed_view_mut::<3, 3>(3, 3).copy_from(&(-jr_inv * rab.transpose()));
        jb.fixed_view_mut::<3, 3>(3, 3).copy_from(&jr_inv);
        Ok(Residual {
            value: DVector::from_column_slice(r.as_slice()),
            jacobians: vec![dm(&ja), dm(&jb)],
            weights: DVector::from_element(6, self.weight),
        })
    }

    fn name(&self) -> &'static str {
        "extrinsics_walk"
    }
}

fn scaled_difference(a: &DynamicsParams, b: &DynamicsParams, scale: &[f64; N_PARAMS]) -> DVector<f64> {
    let (a, b) = (a.to_array(), b.to_array());
    DVector::from_fn(N_PARAMS, |i, _| (b[i] - a[i]) / scale[i])
}

fn scale_jacobian(scale: &[f64; N_PARAMS], sign: f64) -> DMatrix<f64> {
    DMatrix::from_fn(N_PARAMS, N_PARAMS, |r, c| if r == c { sign / scale[r] } else { 0.0 })
}

/// `(p_to − p_from) / scale`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamRelativeFactor {
    pub from: u64,
    pub to: u64,
    pub scale: [f64; N_PARAMS],
    pub weight: f64,
}

impl Factor for ParamRelativeFactor {
    fn keys(&self) -> Vec<VarKey> {
        vec![VarKey::params(self.from), VarKey::params(self.to)]
    }

    fn evaluate(&self, values: &Values) -> Result<Residual> {
        let a = values.params(&VarKey::params(self.from))?;
        let b = values.params(&VarKey::params(self.to))?;
        Ok(Residual {
            value: scaled_difference(a, b, &self.scale),
            jacobians: vec![scale_jacobian(&self.scale, -1.0), scale_jacobian(&self.scale, 1.0)],
            weights: DVector::from_element(N_PARAMS, self.weight),
        })
    }

    fn name(&self) -> &'static str {
        "param_relative"
    }
}

/// `(p − reference) / scale`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamAbsoluteFactor {
    pub frame: u64,
    pub reference: DynamicsParams,
    pub scale: [f64; N_PARAMS],
    pub weight: f64,
}

impl Factor for ParamAbsoluteFactor {
    fn keys(&self) -> Vec<VarKey> {
        vec![VarKey::params(self.frame)]
    }

    fn evaluate(&self, values: &Values) -> Result<Residual> {
        let p = values.params(&VarKey::params(self.frame))?;
        Ok(Residual {
            value: scaled_difference(&self.reference, p, &self.scale),
            jacobians: vec![scale_jacobian(&self.scale, 1.0)],
            weights: DVector::from_element(N_PARAMS, self.weight),
        })
    }

    fn name(&self) -> &'static str {
        "param_absolute"
    }
}

/// Disagreement between the model rollout from the first frame and the
/// estimated planar motion and body velocity of the following frames.
#[derive(Debug, Clone)]
pub struct DynamicsFactor {
    pub frames: Vec<u64>,
    pub times: Vec<f64>,
    /// Raw gyro sample nearest to each frame.
    pub gyro: Vec<Vector3<f64>>,
    pub controls: Arc<ControlTimeline>,
    pub model: SingleTrack,
    pub integrator: IntegratorConfig,
    pub pose_weight: f64,
    pub velocity_weight: f64,
}

impl DynamicsFactor {
    /// Keys of frame `n` start at `1 + 4n`.
    fn frame_keys(frame: u64) -> [VarKey; 4] {
        [VarKey::pose(frame), VarKey::velocity(frame), VarKey::bias(frame), VarKey::extrinsics(frame)]
    }
}

impl Factor for DynamicsFactor {
    fn keys(&self) -> Vec<VarKey> {
        let mut keys = vec![VarKey::params(self.frames[0])];
        for f in &self.frames {
            keys.extend(Self::frame_keys(*f));
        }
        keys
    }

    fn evaluate(&self, values: &Values) -> Result<Residual> {
        let n = self.frames.len();
        if n < 2 || self.times.len() != n || self.gyro.len() != n {
            return Err(Error::FactorEvaluationFailure("dynamics factor needs two or more consistent frames".into()));
        }
        let p = values.params(&VarKey::params(self.frames[0]))?;
        let state = |i: usize| -> Result<(&Pose3, &Vector3<f64>, &Vector3<f64>, &Pose3)> {
            let [kp, kv, kb, ke] = Self::frame_keys(self.frames[i]);
            Ok((values.pose(&kp)?, values.vector(&kv)?, values.vector(&kb)?, values.pose(&ke)?))
        };
        let (t0, v0, b0, e0) = state(0)?;
        let bv0 = body_velocity_jacobians(t0, v0, &self.gyro[0], b0, e0);
        let roll = rollout(
            &self.model,
            &self.times,
            [bv0.value.x, bv0.value.y, bv0.value.z],
            &self.controls,
            p,
            true,
            &self.integrator,
        )
        .map_err(|e| Error::FactorEvaluationFailure(format!("dynamics rollout: {e}")))?;
        let sens = roll.sensitivities.as_ref().expect("requested sensitivities");

        let rows = 6 * (n - 1);
        let mut value = DVector::zeros(rows);
        let mut jac: Vec<DMatrix<f64>> = self.keys().iter().map(|k| DMatrix::zeros(rows, k.dim())).collect();
        let col = |frame_idx: usize, which: usize| 1 + 4 * frame_idx + which;

        for i in 1..n {
            let row = 6 * (i - 1);
            let (ti, vi, bi, ei) = state(i)?;
            let (planar, pblocks) = planar_relative_pose(t0, e0, ti, ei)?;
            let bvi = body_velocity_jacobians(ti, vi, &self.gyro[i], bi, ei);
            for k in 0..3 {
                value[row + k] = roll.poses[i][k] - planar[k];
                value[row + 3 + k] = roll.velocities[i][k] - bvi.value[k];
            }
            let s = &sens[i];
            let sv = s.fixed_columns::<3>(0).into_owned();
            let sp = s.fixed_columns::<N_PARAMS>(SENS_PARAMS).into_owned();
            copy_into(&mut jac[0], row, 0, &sp);

            let mut d_pose0 = sv * bv0.wrt_pose;
            let mut d_ext0 = sv * bv0.wrt_extrinsics;
            let top_pose0 = d_pose0.fixed_rows::<3>(0) - pblocks[0];
            d_pose0.fixed_rows_mut::<3>(0).copy_from(&top_pose0);
            let top_ext0 = d_ext0.fixed_rows::<3>(0) - pblocks[1];
            d_ext0.fixed_rows_mut::<3>(0).copy_from(&top_ext0);
            copy_into(&mut jac[col(0, 0)], row, 0, &d_pose0);
            copy_into(&mut jac[col(0, 1)], row, 0, &(sv * bv0.wrt_velocity));
            copy_into(&mut jac[col(0, 2)], row, 0, &(sv * bv0.wrt_bias));
            copy_into(&mut jac[col(0, 3)], row, 0, &d_ext0);

            copy_into(&mut jac[col(i, 0)], row, 0, &-pblocks[2]);
            copy_into(&mut jac[col(i, 0)], row + 3, 0, &-bvi.wrt_pose);
            copy_into(&mut jac[col(i, 1)], row + 3, 0, &-bvi.wrt_velocity);
            copy_into(&mut jac[col(i, 2)], row + 3, 0, &-bvi.wrt_bias);
            copy_into(&mut jac[col(i, 3)], row, 0, &-pblocks[3]);
            copy_into(&mut jac[col(i, 3)], row + 3, 0, &-bvi.wrt_extrinsics);
        }
        let w: Vec<f64> = (0..rows)
            .map(|r| if r % 6 < 3 { self.pose_weight } else { self.velocity_weight })
            .collect();
        Ok(Residual { value, jacobians: jac, weights: DVector::from_vec(w) })
    }

    fn name(&self) -> &'static str {
        "dynamics"
    }
}
