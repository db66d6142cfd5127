//! Generic nonlinear least squares over a small set of typed variables:
//! Levenberg-Marquardt on dense normal equations and Schur-complement
//! marginalization into a quadratic prior.
//!
//! The cost of a factor is `rᵀ W r` with diagonal `W`. A marginalization prior
//! contributes `δᵀ H δ + 2 bᵀ δ + c` with `δ` the tangent offset of its
//! variables from their values at marginalization time.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Debug;

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::dynamics::{DynamicsParams, N_PARAMS};
use crate::error::{Error, Result};
use crate::geometry::{so3, Pose3};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum VarKind {
    Pose,
    Velocity,
    GyroBias,
    Extrinsics,
    Params,
}

impl VarKind {
    pub fn dim(self) -> usize {
        match self {
            VarKind::Pose | VarKind::Extrinsics => 6,
            VarKind::Velocity | VarKind::GyroBias => 3,
            VarKind::Params => N_PARAMS,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct VarKey {
    pub frame: u64,
    pub kind: VarKind,
}

impl VarKey {
    pub fn new(frame: u64, kind: VarKind) -> Self {
        Self { frame, kind }
    }
    pub fn pose(frame: u64) -> Self {
        Self::new(frame, VarKind::Pose)
    }
    pub fn velocity(frame: u64) -> Self {
        Self::new(frame, VarKind::Velocity)
    }
    pub fn bias(frame: u64) -> Self {
        Self::new(frame, VarKind::GyroBias)
    }
    pub fn extrinsics(frame: u64) -> Self {
        Self::new(frame, VarKind::Extrinsics)
    }
    pub fn params(frame: u64) -> Self {
        Self::new(frame, VarKind::Params)
    }
    pub fn dim(&self) -> usize {
        self.kind.dim()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Var {
    Pose(Pose3),
    Vector(Vector3<f64>),
    Params(DynamicsParams),
}

/// Current estimate of every variable.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Values {
    map: BTreeMap<VarKey, Var>,
}

fn missing(key: &VarKey) -> Error {
    Error::FactorEvaluationFailure(format!("variable {key:?} missing or of the wrong type"))
}

impl Values {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, key: VarKey, v: Var) {
        self.map.insert(key, v);
    }

    pub fn insert_pose(&mut self, key: VarKey, p: Pose3) {
        self.insert(key, Var::Pose(p));
    }

    pub fn insert_vector(&mut self, key: VarKey, v: Vector3<f64>) {
        self.insert(key, Var::Vector(v));
    }

    pub fn insert_params(&mut self, key: VarKey, p: DynamicsParams) {
        self.insert(key, Var::Params(p));
    }

    pub fn remove(&mut self, key: &VarKey) -> Option<Var> {
        self.map.remove(key)
    }

    pub fn contains(&self, key: &VarKey) -> bool {
        self.map.contains_key(key)
    }

    pub fn get(&self, key: &VarKey) -> Option<&Var> {
        self.map.get(key)
    }

    pub fn keys(&self) -> impl Iterator<Item = &VarKey> {
        self.map.keys()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn pose(&self, key: &VarKey) -> Result<&Pose3> {
        match self.map.get(key) {
            Some(Var::Pose(p)) => Ok(p),
            _ => Err(missing(key)),
        }
    }

    pub fn vector(&self, key: &VarKey) -> Result<&Vector3<f64>> {
        match self.map.get(key) {
            Some(Var::Vector(v)) => Ok(v),
            _ => Err(missing(key)),
        }
    }

    pub fn params(&self, key: &VarKey) -> Result<&DynamicsParams> {
        match self.map.get(key) {
            Some(Var::Params(p)) => Ok(p),
            _ => Err(missing(key)),
        }
    }

    /// Applies a tangent increment; parameters are clamped to their floor.
    pub fn retract(&mut self, key: &VarKey, d: &[f64]) -> Result<()> {
        let v = self.map.get_mut(key).ok_or_else(|| missing(key))?;
        match v {
            Var::Pose(p) => *p = p.retract(&Vector6::from_column_slice(d)),
            Var::Vector(x) => *x += Vector3::from_column_slice(d),
            Var::Params(p) => {
                let mut a = p.to_array();
                for (x, dx) in a.iter_mut().zip(d) {
                    *x += dx;
                }
                *p = DynamicsParams::from_array(a).clamped();
            }
        }
        Ok(())
    }

    /// Tangent offset of `self[key]` from `reference[key]`.
    pub fn local(&self, reference: &Values, key: &VarKey) -> Result<DVector<f64>> {
        let a = reference.map.get(key).ok_or_else(|| missing(key))?;
        let b = self.map.get(key).ok_or_else(|| missing(key))?;
        Ok(match (a, b) {
            (Var::Pose(a), Var::Pose(b)) => DVector::from_column_slice(a.local(b).as_slice()),
            (Var::Vector(a), Var::Vector(b)) => DVector::from_column_slice((b - a).as_slice()),
            (Var::Params(a), Var::Params(b)) => {
                let (a, b) = (a.to_array(), b.to_array());
                DVector::from_iterator(N_PARAMS, (0..N_PARAMS).map(|i| b[i] - a[i]))
            }
            _ => return Err(missing(key)),
        })
    }
}

/// Weighted residual block with one Jacobian per connected variable.
#[derive(Debug, Clone, PartialEq)]
pub struct Residual {
    pub value: DVector<f64>,
    pub jacobians: Vec<DMatrix<f64>>,
    /// Diagonal information weights.
    pub weights: DVector<f64>,
}

impl Residual {
    pub fn cost(&self) -> f64 {
        self.value.iter().zip(self.weights.iter()).map(|(r, w)| w * r * r).sum()
    }
}

pub trait Factor: Debug + Send + Sync {
    fn keys(&self) -> Vec<VarKey>;
    /// Residual and Jacobians in the order of [`Factor::keys`].
    fn evaluate(&self, values: &Values) -> Result<Residual>;
    fn name(&self) -> &'static str {
        "factor"
    }
}

/// `r = Σ A_k x_k + offset` over vector or parameter variables. Used for
/// linear-Gaussian surrogates.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearFactor {
    pub keys: Vec<VarKey>,
    pub blocks: Vec<DMatrix<f64>>,
    pub offset: DVector<f64>,
    pub weights: DVector<f64>,
}

impl Factor for LinearFactor {
    fn keys(&self) -> Vec<VarKey> {
        self.keys.clone()
    }

    fn evaluate(&self, values: &Values) -> Result<Residual> {
        let mut r = self.offset.clone();
        for (k, a) in self.keys.iter().zip(&self.blocks) {
            let x: DVector<f64> = match values.get(k) {
                Some(Var::Vector(v)) => DVector::from_column_slice(v.as_slice()),
                Some(Var::Params(p)) => DVector::from_column_slice(&p.to_array()),
                _ => return Err(missing(k)),
            };
            r += a * x;
        }
        Ok(Residual { value: r, jacobians: self.blocks.clone(), weights: self.weights.clone() })
    }

    fn name(&self) -> &'static str {
        "linear"
    }
}

/// Quadratic prior left behind by marginalization.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginalPrior {
    pub keys: Vec<VarKey>,
    pub linearization: Values,
    pub h: DMatrix<f64>,
    pub b: DVector<f64>,
    pub c: f64,
}

impl MarginalPrior {
    pub fn dim(&self) -> usize {
        self.keys.iter().map(|k| k.dim()).sum()
    }

    /// Offset from the linearization point and the Jacobian of that offset
    /// with respect to a tangent increment at `values`.
    fn offset(&self, values: &Values) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let n = self.dim();
        let mut delta = DVector::zeros(n);
        let mut jac = DMatrix::identity(n, n);
        let mut at = 0;
        for k in &self.keys {
            let d = values.local(&self.linearization, k)?;
            delta.rows_mut(at, d.len()).copy_from(&d);
            if matches!(k.kind, VarKind::Pose | VarKind::Extrinsics) {
                let phi = Vector3::new(d[3], d[4], d[5]);
                jac.view_mut((at + 3, at + 3), (3, 3)).copy_from(&so3::right_jacobian_inv(&phi));
            }
            at += k.dim();
        }
        Ok((delta, jac))
    }

    pub fn cost(&self, values: &Values) -> Result<f64> {
        let (d, _) = self.offset(values)?;
        Ok((d.transpose() * &self.h * &d)[(0, 0)] + 2.0 * self.b.dot(&d) + self.c)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub max_iterations: usize,
    pub initial_damping: f64,
    pub max_damping: f64,
    pub step_tolerance: f64,
    pub relative_cost_tolerance: f64,
    /// Huber threshold on the whitened residual norm of each factor.
    pub huber: Option<f64>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iterations: 10,
            initial_damping: 1e-5,
            max_damping: 1e12,
            step_tolerance: 1e-8,
            relative_cost_tolerance: 1e-10,
            huber: None,
        }
    }
}

/// Variable layout of the normal equations.
#[derive(Debug, Clone, PartialEq)]
pub struct Ordering {
    pub keys: Vec<VarKey>,
    offsets: BTreeMap<VarKey, usize>,
    pub dim: usize,
}

impl Ordering {
    pub fn new(keys: impl IntoIterator<Item = VarKey>) -> Self {
        let keys: Vec<VarKey> = keys.into_iter().collect::<BTreeSet<_>>().into_iter().collect();
        let mut offsets = BTreeMap::new();
        let mut dim = 0;
        for k in &keys {
            offsets.insert(*k, dim);
            dim += k.dim();
        }
        Self { keys, offsets, dim }
    }

    pub fn offset(&self, key: &VarKey) -> Option<usize> {
        self.offsets.get(key).copied()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub accepted_iterations: usize,
    pub initial_cost: f64,
    pub final_cost: f64,
    pub ordering: Ordering,
    /// Gauss-Newton Hessian at the final estimate.
    pub hessian: DMatrix<f64>,
}

impl SolveReport {
    /// Marginal covariance block of `key` from the full Hessian.
    pub fn marginal_covariance(&self, key: &VarKey) -> Option<DMatrix<f64>> {
        let at = self.ordering.offset(key)?;
        let n = key.dim();
        let inv = pseudo_inverse(&self.hessian);
        Some(inv.view((at, at), (n, n)).into_owned())
    }
}

struct Normal {
    h: DMatrix<f64>,
    g: DVector<f64>,
    cost: f64,
}

fn robust_scale(cost: f64, huber: Option<f64>) -> (f64, f64) {
    match huber {
        Some(k) if cost > k * k => {
            let n = cost.sqrt();
            (k / n, 2.0 * k * n - k * k)
        }
        _ => (1.0, cost),
    }
}

fn total_cost(factors: &[&dyn Factor], prior: Option<&MarginalPrior>, values: &Values, huber: Option<f64>) -> Result<f64> {
    let mut cost = 0.0;
    for f in factors {
        cost += robust_scale(f.evaluate(values)?.cost(), huber).1;
    }
    if let Some(p) = prior {
        cost += p.cost(values)?;
    }
    if !cost.is_finite() {
        return Err(Error::FactorEvaluationFailure("non-finite cost".into()));
    }
    Ok(cost)
}

fn linearize(
    factors: &[&dyn Factor],
    prior: Option<&MarginalPrior>,
    values: &Values,
    ord: &Ordering,
    huber: Option<f64>,
) -> Result<Normal> {
    let mut h = DMatrix::zeros(ord.dim, ord.dim);
    let mut g = DVector::zeros(ord.dim);
    let mut cost = 0.0;
    for f in factors {
        let keys = f.keys();
        let res = f.evaluate(values)?;
        if res.jacobians.len() != keys.len() {
            return Err(Error::FactorEvaluationFailure(format!("{}: Jacobian count mismatch", f.name())));
        }
        let (scale, c) = robust_scale(res.cost(), huber);
        cost += c;
        let w = &res.weights * scale;
        let wr = res.value.component_mul(&w);
        let mut weighted = Vec::with_capacity(keys.len());
        for (k, j) in keys.iter().zip(&res.jacobians) {
            if j.ncols() != k.dim() || j.nrows() != res.value.len() {
                return Err(Error::FactorEvaluationFailure(format!("{}: bad Jacobian shape for {k:?}", f.name())));
            }
            weighted.push(DMatrix::from_fn(j.nrows(), j.ncols(), |r, c| j[(r, c)] * w[r]));
        }
        for (i, ki) in keys.iter().enumerate() {
            let Some(oi) = ord.offset(ki) else { continue };
            let jt = res.jacobians[i].transpose();
            let mut gi = g.rows_mut(oi, ki.dim());
            gi += &jt * &wr;
            for (j, kj) in keys.iter().enumerate() {
                let Some(oj) = ord.offset(kj) else { continue };
                let mut block = h.view_mut((oi, oj), (ki.dim(), kj.dim()));
                block += &jt * &weighted[j];
            }
        }
    }
    if let Some(p) = prior {
        let (d, jac) = p.offset(values)?;
        cost += (d.transpose() * &p.h * &d)[(0, 0)] + 2.0 * p.b.dot(&d) + p.c;
        let hp = jac.transpose() * &p.h * &jac;
        let gp = jac.transpose() * (&p.h * &d + &p.b);
        let mut at_i = 0;
        for ki in &p.keys {
            let oi = ord.offset(ki).ok_or_else(|| missing(ki))?;
            let mut at_j = 0;
            for kj in &p.keys {
                let oj = ord.offset(kj).ok_or_else(|| missing(kj))?;
                let mut block = h.view_mut((oi, oj), (ki.dim(), kj.dim()));
                block += hp.view((at_i, at_j), (ki.dim(), kj.dim()));
                at_j += kj.dim();
            }
            let mut gi = g.rows_mut(oi, ki.dim());
            gi += gp.rows(at_i, ki.dim());
            at_i += ki.dim();
        }
    }
    if !cost.is_finite() || h.iter().any(|v| !v.is_finite()) || g.iter().any(|v| !v.is_finite()) {
        return Err(Error::FactorEvaluationFailure("non-finite linearization".into()));
    }
    Ok(Normal { h, g, cost })
}

fn apply_step(values: &Values, ord: &Ordering, step: &DVector<f64>) -> Result<Values> {
    let mut out = values.clone();
    for k in &ord.keys {
        let at = ord.offset(k).unwrap_or(0);
        out.retract(k, step.rows(at, k.dim()).as_slice())?;
    }
    Ok(out)
}

/// Moore-Penrose inverse of a symmetric matrix.
pub fn pseudo_inverse(m: &DMatrix<f64>) -> DMatrix<f64> {
    if let Some(ch) = Cholesky::new(m.clone()) {
        return ch.inverse();
    }
    let eig = SymmetricEigen::new(m.clone());
    let max = eig.eigenvalues.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let tol = max * 1e-12 * m.nrows() as f64;
    let inv = eig.eigenvalues.map(|v| if v.abs() > tol { 1.0 / v } else { 0.0 });
    &eig.eigenvectors * DMatrix::from_diagonal(&inv) * eig.eigenvectors.transpose()
}

/// Variables touched by the factors and the prior.
pub fn connected_keys(factors: &[&dyn Factor], prior: Option<&MarginalPrior>) -> BTreeSet<VarKey> {
    let mut keys: BTreeSet<VarKey> = factors.iter().flat_map(|f| f.keys()).collect();
    if let Some(p) = prior {
        keys.extend(p.keys.iter().copied());
    }
    keys
}

/// Levenberg-Marquardt over every variable connected to a factor. On
/// failure `values` keeps the last accepted estimate.
pub fn optimize(
    factors: &[&dyn Factor],
    prior: Option<&MarginalPrior>,
    values: &mut Values,
    cfg: &SolverConfig,
) -> Result<SolveReport> {
    let ord = Ordering::new(connected_keys(factors, prior));
    for k in &ord.keys {
        if !values.contains(k) {
            return Err(missing(k));
        }
    }
    let mut lambda = cfg.initial_damping;
    let mut accepted = 0;
    let mut normal = linearize(factors, prior, values, &ord, cfg.huber)?;
    let initial_cost = normal.cost;

    'outer: while accepted < cfg.max_iterations {
        if normal.cost == 0.0 || normal.g.amax() == 0.0 {
            break;
        }
        loop {
            let mut damped = normal.h.clone();
            for i in 0..ord.dim {
                damped[(i, i)] += lambda * normal.h[(i, i)].max(1e-9);
            }
            let step = match Cholesky::new(damped) {
                Some(ch) => -ch.solve(&normal.g),
                None => {
                    lambda *= 10.0;
                    if lambda > cfg.max_damping {
                        return Err(Error::SolverFailure("damped system not positive definite".into()));
                    }
                    continue;
                }
            };
            if step.norm() < cfg.step_tolerance {
                break 'outer;
            }
            let trial = apply_step(values, &ord, &step)?;
            let trial_cost = total_cost(factors, prior, &trial, cfg.huber).unwrap_or(f64::INFINITY);
            if trial_cost <= normal.cost {
                let decrease = normal.cost - trial_cost;
                *values = trial;
                accepted += 1;
                lambda = (lambda / 3.0).max(1e-12);
                let old = normal.cost;
                normal = linearize(factors, prior, values, &ord, cfg.huber)?;
                if decrease <= cfg.relative_cost_tolerance * old {
                    break 'outer;
                }
                break;
            }
            lambda *= 10.0;
            if lambda > cfg.max_damping {
                return Err(Error::SolverFailure(format!(
                    "cost {:.6e} does not decrease at maximum damping",
                    normal.cost
                )));
            }
        }
    }
    Ok(SolveReport {
        accepted_iterations: accepted,
        initial_cost,
        final_cost: normal.cost,
        ordering: ord,
        hessian: normal.h,
    })
}

/// Central finite-difference Jacobians of a factor in tangent coordinates.
pub fn numeric_jacobians(factor: &dyn Factor, values: &Values, eps: f64) -> Result<Vec<DMatrix<f64>>> {
    let base = factor.evaluate(values)?;
    let m = base.value.len();
    factor
        .keys()
        .iter()
        .map(|k| {
            let mut j = DMatrix::zeros(m, k.dim());
            for c in 0..k.dim() {
                let mut d = vec![0.0; k.dim()];
                d[c] = eps;
                let mut plus = values.clone();
                plus.retract(k, &d)?;
                d[c] = -eps;
                let mut minus = values.clone();
                minus.retract(k, &d)?;
                let diff = (factor.evaluate(&plus)?.value - factor.evaluate(&minus)?.value) / (2.0 * eps);
                j.set_column(c, &diff);
            }
            Ok(j)
        })
        .collect()
}

/// Largest relative discrepancy between analytic and numeric Jacobian
/// blocks, `‖A − N‖ / (‖N‖ + floor)` per block.
pub fn jacobian_error(factor: &dyn Factor, values: &Values, eps: f64, floor: f64) -> Result<f64> {
    let analytic = factor.evaluate(values)?.jacobians;
    let numeric = numeric_jacobians(factor, values, eps)?;
    Ok(analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| (a - n).norm() / (n.norm() + floor))
        .fold(0.0, f64::max))
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MarginalizationReport {
    /// Diagonal regularization was added before inversion.
    pub regularized: bool,
    /// The eliminated block was rank deficient and a pseudo-inverse was used.
    pub pseudo_inverse: bool,
}

/// Eliminates `remove` from the quadratic model formed by `factors` and the
/// existing prior, linearized at `values`. The factors passed in are
/// consumed by the prior; callers drop them from the graph afterwards.
pub fn marginalize(
    factors: &[&dyn Factor],
    prior: Option<&MarginalPrior>,
    values: &Values,
    remove: &[VarKey],
) -> Result<(Option<MarginalPrior>, MarginalizationReport)> {
    let removed: BTreeSet<VarKey> = remove.iter().copied().collect();
    let all = connected_keys(factors, prior);
    if all.is_empty() {
        return Ok((None, MarginalizationReport::default()));
    }
    let ord = Ordering::new(all.iter().copied());
    let normal = linearize(factors, prior, values, &ord, None)?;
    let keep: Vec<VarKey> = ord.keys.iter().copied().filter(|k| !removed.contains(k)).collect();
    let drop: Vec<VarKey> = ord.keys.iter().copied().filter(|k| removed.contains(k)).collect();
    let idx = |keys: &[VarKey]| -> Vec<usize> {
        keys.iter().flat_map(|k| {
            let at = ord.offset(k).unwrap_or(0);
            at..at + k.dim()
        }).collect()
    };
    let (ik, id) = (idx(&keep), idx(&drop));
    let sub = |rows: &[usize], cols: &[usize]| DMatrix::from_fn(rows.len(), cols.len(), |r, c| normal.h[(rows[r], cols[c])]);
    let subv = |rows: &[usize]| DVector::from_fn(rows.len(), |r, _| normal.g[rows[r]]);

    let mut report = MarginalizationReport::default();
    let (h, b, c) = if id.is_empty() {
        (sub(&ik, &ik), subv(&ik), normal.cost)
    } else {
        let hmm = sub(&id, &id);
        let inv = match Cholesky::new(hmm.clone()) {
            Some(ch) => ch.inverse(),
            None => {
                report.regularized = true;
                let reg = &hmm + DMatrix::<f64>::identity(id.len(), id.len()) * 1e-12;
                match Cholesky::new(reg) {
                    Some(ch) => ch.inverse(),
                    None => {
                        report.pseudo_inverse = true;
                        pseudo_inverse(&hmm)
                    }
                }
            }
        };
        let hrm = sub(&ik, &id);
        let bm = subv(&id);
        let h = sub(&ik, &ik) - &hrm * &inv * hrm.transpose();
        let b = subv(&ik) - &hrm * &inv * &bm;
        let c = normal.cost - (bm.transpose() * &inv * &bm)[(0, 0)];
        (h, b, c)
    };
    if keep.is_empty() {
        return Ok((None, report));
    }
    let h = (&h + h.transpose()) * 0.5;
    let mut linearization = Values::new();
    for k in &keep {
        linearization.insert(*k, *values.get(k).ok_or_else(|| missing(k))?);
    }
    Ok((Some(MarginalPrior { keys: keep, linearization, h, b, c }), report))
}

/// Drops `remove` from a prior without absorbing information from any
/// factor, by Schur complement of the prior alone.
pub fn shrink_prior(prior: &MarginalPrior, remove: &[VarKey]) -> Result<(Option<MarginalPrior>, MarginalizationReport)> {
    marginalize(&[], Some(prior), &prior.linearization, remove)
}

impl MarginalPrior {
    /// Information block of a single variable.
    pub fn block(&self, key: &VarKey) -> Option<DMatrix<f64>> {
        let mut at = 0;
        for k in &self.keys {
            if k == key {
                return Some(self.h.view((at, at), (k.dim(), k.dim())).into_owned());
            }
            at += k.dim();
        }
        None
    }
}
