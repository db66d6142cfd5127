//! Property checks shared by the property tests and the acceptance run.

use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestCaseError, TestRng, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use trackcal::data::{Dataset, DatasetHeader, GroundTruthRecord, GyroSample, OdomRecord, ParamsTruthRecord};
use trackcal::dual::soft_threshold;
use trackcal::dynamics::{
    longitudinal_force, ControlSample, DynamicsParams, LongitudinalHyperParams, SingleTrack, TireModel,
    VehicleGeometry, N_PARAMS,
};
use trackcal::eval::{tracking_rpe, Trajectory, DEFAULT_FRACTIONS};
use trackcal::geometry::{project_planar, relative_body_pose, Pose3};
use trackcal::integrate::{compose_planar, rollout, ControlTimeline, IntegratorConfig, N_SENS};
use trackcal::io::{read_dataset, write_dataset};
use trackcal::sim::{default_geometry, default_params, DATASET_VERSION};

/// Runs `test` on `cases` deterministic draws from `strategy`.
pub fn check<S: Strategy>(
    cases: u32,
    strategy: S,
    test: impl Fn(S::Value) -> Result<(), TestCaseError>,
) -> Result<(), String> {
    let cfg = Config { cases, failure_persistence: None, ..Config::default() };
    let mut runner = TestRunner::new_with_rng(cfg, TestRng::deterministic_rng(RngAlgorithm::ChaCha));
    runner.run(&strategy, test).map_err(|e| e.to_string())
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
}

pub fn soft_threshold_is_even_and_bounded(cases: u32) -> Result<(), String> {
    let xs = prop_oneof![-1e6..1e6f64, -1e-3..1e-3f64, -50.0..50.0f64];
    check(cases, xs, |x| {
        let (g, gm) = (soft_threshold(x), soft_threshold(-x));
        prop_assert!((g - gm).abs() < 1e-12, "g({x}) = {g}, g(-x) = {gm}");
        prop_assert!(g >= std::f64::consts::LN_2);
        let gap = g - x.abs();
        prop_assert!(gap >= 0.0 && gap <= std::f64::consts::LN_2 + 1e-15, "gap {gap} at {x}");
        Ok(())
    })
}

fn state() -> impl Strategy<Value = [f64; 6]> {
    let vx = prop_oneof![Just(0.0), Just(1e-6), Just(-1e-6), -3.0..5.0f64];
    (-5.0..5.0f64, -5.0..5.0f64, -3.0..3.0f64, vx, -1.0..1.0f64, -3.0..3.0f64)
        .prop_map(|(x, y, yaw, vx, vy, w)| [x, y, yaw, vx, vy, w])
}

fn control() -> impl Strategy<Value = ControlSample> {
    (0.0..=1.0f64, -1.0..=1.0f64).prop_map(|(a, b)| ControlSample::new(0.0, a, b).unwrap())
}

fn params() -> impl Strategy<Value = [f64; N_PARAMS]> {
    proptest::array::uniform5(0.5..2.0f64).prop_map(|f| {
        let p = default_params().to_array();
        std::array::from_fn(|i| p[i] * f[i])
    })
}

fn tire() -> impl Strategy<Value = TireModel> {
    prop_oneof![Just(TireModel::Linear), (0.05..0.5f64).prop_map(|s| TireModel::Saturating { max_slip: s })]
}

/// Propagated derivatives against central differences of the state
/// derivative, for state, coefficients and hyper-parameters.
pub fn dynamics_derivatives_match_finite_differences(cases: u32) -> Result<(), String> {
    check(cases, (state(), control(), params(), tire()), |(s, u, p, tire)| {
        let h0 = LongitudinalHyperParams::default().to_array();
        let eval = |x: &[f64; 14]| {
            let m = SingleTrack::new(default_geometry(), LongitudinalHyperParams::from_array([x[11], x[12], x[13]]))
                .with_tire(tire);
            m.derivative_array(&std::array::from_fn(|i| x[i]), &u, &std::array::from_fn(|i| x[6 + i]))
        };
        let mut x0 = [0.0; 14];
        x0[..6].copy_from_slice(&s);
        x0[6..11].copy_from_slice(&p);
        x0[11..].copy_from_slice(&h0);
        let jac = SingleTrack::new(default_geometry(), LongitudinalHyperParams::default()).with_tire(tire).jacobian(&s, &u, &p);
        for c in 0..14 {
            let h = 1e-6 * x0[c].abs().max(1.0);
            let (mut xp, mut xm) = (x0, x0);
            xp[c] += h;
            xm[c] -= h;
            let (fp, fm) = (eval(&xp), eval(&xm));
            for r in 0..6 {
                let fd = (fp[r] - fm[r]) / (2.0 * h);
                let an = match c {
                    0..6 => jac.wrt_state[(r, c)],
                    6..11 => jac.wrt_params[(r, c - 6)],
                    _ => jac.wrt_hyper[(r, c - 11)],
                };
                prop_assert!(close(an, fd, 1e-5), "d{r}/d{c}: {an} vs {fd}");
            }
        }
        Ok(())
    })
}

pub fn velocity_derivatives_ignore_position(cases: u32) -> Result<(), String> {
    check(cases, (state(), control(), params()), |(s, u, p)| {
        let m = SingleTrack::new(default_geometry(), LongitudinalHyperParams::default());
        let at = m.derivative_array(&s, &u, &p);
        let origin = m.derivative_array(&[0.0, 0.0, 0.0, s[3], s[4], s[5]], &u, &p);
        prop_assert_eq!(&at[3..], &origin[3..]);
        prop_assert_eq!(&origin[..3], &s[3..]);
        Ok(())
    })
}

pub fn throttle_gain_trades_against_throttle(cases: u32) -> Result<(), String> {
    check(cases, (0.05..1.0f64, 1.0..5.0f64, -3.0..5.0f64, params()), |(u, k, vx, p)| {
        let p = DynamicsParams::from_array(p);
        let h = LongitudinalHyperParams::default();
        let scaled = DynamicsParams { throttle_gain: p.throttle_gain * k, ..p };
        let (a, b) = (longitudinal_force(&p, &h, u, vx), longitudinal_force(&scaled, &h, u / k, vx));
        prop_assert!(close(a, b, 1e-12), "{a} vs {b}");
        Ok(())
    })
}

/// Random piecewise-constant controls at 20 Hz over `duration`.
fn plan(seed: u64, duration: f64) -> ControlTimeline {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = (duration * 20.0) as usize + 1;
    ControlTimeline::new(
        (0..=n)
            .map(|k| ControlSample::new(k as f64 / 20.0, rng.random_range(0.0..=1.0), rng.random_range(-1.0..=1.0)).unwrap())
            .collect(),
    )
    .unwrap()
}

fn frames(n: usize) -> Vec<f64> {
    (0..n).map(|k| k as f64 / 30.0).collect()
}

pub fn rollout_is_markovian(cases: u32) -> Result<(), String> {
    let v0 = (-1.0..4.0f64, -0.5..0.5f64, -2.0..2.0f64);
    check(cases, (any::<u64>(), v0, params(), 1usize..29), |(seed, (vx, vy, w), p, m)| {
        let ctrl = plan(seed, 1.5);
        let model = SingleTrack::new(default_geometry(), LongitudinalHyperParams::default());
        let p = DynamicsParams::from_array(p);
        let cfg = IntegratorConfig::default();
        let ts = frames(31);
        let whole = rollout(&model, &ts, [vx, vy, w], &ctrl, &p, false, &cfg).unwrap();
        let first = rollout(&model, &ts[..=m], [vx, vy, w], &ctrl, &p, false, &cfg).unwrap();
        let second = rollout(&model, &ts[m..], first.velocities[m], &ctrl, &p, false, &cfg).unwrap();
        let chained = compose_planar(first.poses[m], second.last_pose());
        for i in 0..3 {
            prop_assert!((chained[i] - whole.last_pose()[i]).abs() < 1e-10, "{chained:?} vs {:?}", whole.last_pose());
            prop_assert!((second.velocities.last().unwrap()[i] - whole.velocities[30][i]).abs() < 1e-10);
        }
        Ok(())
    })
}

pub fn rollout_stays_finite(cases: u32) -> Result<(), String> {
    let scale = proptest::array::uniform5(0.1..10.0f64);
    let v0 = (-10.0..10.0f64, -10.0..10.0f64, -10.0..10.0f64);
    check(cases, (any::<u64>(), scale, v0), |(seed, f, (vx, vy, w))| {
        let v = Vector3::new(vx, vy, w);
        let v = if v.norm() > 10.0 { v * (10.0 / v.norm()) } else { v };
        let base = default_params().to_array();
        let p = DynamicsParams::from_array(std::array::from_fn(|i| base[i] * f[i]));
        let model = SingleTrack::new(default_geometry(), LongitudinalHyperParams::default());
        let r = rollout(&model, &frames(61), [v.x, v.y, v.z], &plan(seed, 2.5), &p, true, &IntegratorConfig::default());
        let r = r.map_err(|e| TestCaseError::fail(format!("{e} for {p:?} from {v:?}")))?;
        let finite = r.poses.iter().chain(&r.velocities).flatten().all(|x| x.is_finite())
            && r.sensitivities.unwrap().iter().all(|s| s.iter().all(|x| x.is_finite()));
        prop_assert!(finite);
        Ok(())
    })
}

/// Parameter and initial-velocity sensitivities, including from rest.
pub fn sensitivities_match_finite_differences(cases: u32) -> Result<(), String> {
    let v0 = prop_oneof![Just([0.0; 3]), (-1.0..3.0f64, -0.3..0.3f64, -1.0..1.0f64).prop_map(|(a, b, c)| [a, b, c])];
    check(cases, (any::<u64>(), v0, params()), |(seed, v0, p)| {
        let ctrl = plan(seed, 0.5);
        let ts = frames(7);
        let cfg = IntegratorConfig::default();
        let h0 = LongitudinalHyperParams::default().to_array();
        let run = |x: &[f64; N_SENS], sens: bool| {
            let m = SingleTrack::new(default_geometry(), LongitudinalHyperParams::from_array([x[8], x[9], x[10]]));
            let p = DynamicsParams::from_array(std::array::from_fn(|i| x[3 + i]));
            rollout(&m, &ts, [x[0], x[1], x[2]], &ctrl, &p, sens, &cfg).unwrap()
        };
        let mut x0 = [0.0; N_SENS];
        x0[..3].copy_from_slice(&v0);
        x0[3..8].copy_from_slice(&p);
        x0[8..].copy_from_slice(&h0);
        let r = run(&x0, true);
        let an = *r.sensitivities.as_ref().unwrap().last().unwrap();
        for c in 0..N_SENS {
            let h = 1e-6 * x0[c].abs().max(1e-2);
            let (mut xp, mut xm) = (x0, x0);
            xp[c] += h;
            xm[c] -= h;
            let (rp, rm) = (run(&xp, false), run(&xm, false));
            let fp: Vec<f64> = rp.last_pose().iter().chain(rp.velocities.last().unwrap()).copied().collect();
            let fm: Vec<f64> = rm.last_pose().iter().chain(rm.velocities.last().unwrap()).copied().collect();
            for row in 0..6 {
                let fd = (fp[row] - fm[row]) / (2.0 * h);
                prop_assert!(close(an[(row, c)], fd, 1e-5), "row {row} col {c}: {} vs {fd}", an[(row, c)]);
            }
        }
        Ok(())
    })
}

pub fn pose() -> impl Strategy<Value = Pose3> {
    ((-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64, 0.1..1.0f64), (-10.0..10.0f64, -10.0..10.0f64, -10.0..10.0f64))
        .prop_map(|((i, j, k, w), (x, y, z))| {
            Pose3::new(UnitQuaternion::from_quaternion(Quaternion::new(w, i, j, k)), Vector3::new(x, y, z))
        })
}

pub fn planar_projection_round_trips(cases: u32) -> Result<(), String> {
    let angle = -std::f64::consts::PI + 1e-6..std::f64::consts::PI - 1e-6;
    check(cases, (-50.0..50.0f64, -50.0..50.0f64, angle, pose(), pose()), |(x, y, yaw, a, e)| {
        let q = project_planar(&Pose3::from_planar(x, y, yaw)).unwrap();
        prop_assert!(close(q[0], x, 1e-12) && close(q[1], y, 1e-12) && (q[2] - yaw).abs() < 1e-12, "{q:?}");
        let zero = project_planar(&relative_body_pose(&a, &e, &a, &e)).unwrap();
        prop_assert!(zero.iter().all(|v| v.abs() < 1e-12), "{zero:?}");
        Ok(())
    })
}

/// Gently curving path sampled at 10 Hz with the given speed profile.
pub fn path(n: usize, speed: impl Fn(usize) -> f64) -> Trajectory {
    let mut poses = Vec::new();
    let mut vel = Vec::new();
    let mut p = Pose3::identity();
    for i in 0..n {
        let v = speed(i);
        let w = 0.3 * (i as f64 * 0.05).sin();
        poses.push(p);
        vel.push(Vector3::new(v, 0.0, w));
        p = p.compose(&Pose3::from_planar(v * 0.1, 0.0, w * 0.1));
    }
    Trajectory::new((0..n).map(|i| i as f64 * 0.1).collect(), poses, Some(vel)).unwrap()
}

pub fn transform(traj: &Trajectory, g: &Pose3) -> Trajectory {
    Trajectory { poses: traj.poses.iter().map(|p| g.compose(p)).collect(), ..traj.clone() }
}

/// Each pose perturbed by independent uniform noise of half-width `sigma`
/// (translation, m) and `sigma / 10` (rotation, rad).
pub fn noisy(gt: &Trajectory, sigma: f64, seed: u64) -> Trajectory {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let poses = gt
        .poses
        .iter()
        .map(|p| p.retract(&nalgebra::Vector6::from_fn(|i, _| r.random_range(-1.0..1.0) * if i < 3 { sigma } else { sigma * 0.1 })))
        .collect();
    Trajectory { poses, ..gt.clone() }
}

pub fn rpe_ignores_a_common_rigid_transform(cases: u32) -> Result<(), String> {
    check(cases, (0u64..1000, pose()), |(seed, g)| {
        let gt = path(120, |i| 0.5 + 0.01 * i as f64);
        let est = noisy(&gt, 0.03, seed);
        let a = tracking_rpe(&est, &gt, &DEFAULT_FRACTIONS).unwrap();
        let b = tracking_rpe(&transform(&est, &g), &transform(&gt, &g), &DEFAULT_FRACTIONS).unwrap();
        prop_assert_eq!(a.count, b.count);
        prop_assert!((a.translation_rmse - b.translation_rmse).abs() < 1e-9);
        prop_assert!((a.rotation_rmse_deg - b.rotation_rmse_deg).abs() < 1e-6);
        Ok(())
    })
}

fn finite() -> impl Strategy<Value = f64> {
    prop_oneof![
        proptest::num::f64::NORMAL | proptest::num::f64::SUBNORMAL | proptest::num::f64::ZERO,
        -10.0..10.0f64,
    ]
}

fn vec3() -> impl Strategy<Value = Vector3<f64>> {
    (finite(), finite(), finite()).prop_map(|(a, b, c)| Vector3::new(a, b, c))
}

fn any_pose() -> impl Strategy<Value = Pose3> {
    ((-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64, 0.1..1.0f64), vec3()).prop_map(|((i, j, k, w), t)| {
        Pose3::new(UnitQuaternion::from_quaternion(Quaternion::new(w, i, j, k)), t)
    })
}

/// Strictly increasing times from positive increments.
fn times(n: usize) -> impl Strategy<Value = Vec<f64>> {
    (finite(), proptest::collection::vec(1e-9..10.0f64, n)).prop_map(|(t0, steps)| {
        steps
            .iter()
            .scan(t0.clamp(-1e6, 1e6), |t, d| {
                let now = *t;
                *t += d;
                Some(now)
            })
            .collect()
    })
}

fn header() -> impl Strategy<Value = DatasetHeader> {
    (
        any::<u64>(),
        "[a-z \\-\"\\\\]{0,12}",
        proptest::array::uniform4(1e-3..1e3f64),
        proptest::array::uniform3(0.0..100.0f64),
        prop_oneof![Just(TireModel::Linear), (1e-3..1.0f64).prop_map(|s| TireModel::Saturating { max_slip: s })],
        any_pose(),
        any_pose(),
    )
        .prop_map(|(seed, name, g, h, tire, ext, init)| DatasetHeader {
            version: DATASET_VERSION,
            name,
            seed,
            frame_rate: g[0],
            gyro_rate: g[1],
            control_rate: g[2],
            geometry: VehicleGeometry { mass: g[0], yaw_inertia: g[1], front_axle: g[2], rear_axle: g[3] },
            hyper: LongitudinalHyperParams { linear_slope: h[0], softplus_gain: h[1], resistance_steepness: h[2] },
            tire,
            extrinsics: ext,
            initial_pose: init,
        })
}

pub fn dataset() -> impl Strategy<Value = Dataset> {
    (0usize..6, 0usize..6, 0usize..6, 0usize..4)
        .prop_flat_map(|(nc, ng, no, np)| {
            (
                header(),
                (times(nc), proptest::collection::vec((0.0..=1.0f64, -1.0..=1.0f64), nc)),
                (times(ng), proptest::collection::vec(vec3(), ng)),
                (times(no), proptest::collection::vec((any::<u64>(), any_pose(), vec3(), vec3()), no)),
                (times(no), proptest::collection::vec((any_pose(), vec3(), vec3(), vec3()), no)),
                (times(np), proptest::collection::vec(proptest::array::uniform5(1e-6..1e6f64), np)),
            )
        })
        .prop_map(|(h, (tc, c), (tg, g), (to, o), (tt, gt), (tp, p))| Dataset {
            header: Some(h),
            controls: tc.iter().zip(c).map(|(&t, (a, b))| ControlSample { t, throttle: a, steering: b }).collect(),
            gyro: tg.iter().zip(g).map(|(&t, omega)| GyroSample { t, omega }).collect(),
            odom: to
                .iter()
                .zip(o)
                .map(|(&t, (frame, rel_pose, velocity, rot_increment))| OdomRecord { t, frame, rel_pose, velocity, rot_increment })
                .collect(),
            groundtruth: tt
                .iter()
                .zip(gt)
                .map(|(&t, (pose, velocity, gyro_bias, body_velocity))| GroundTruthRecord {
                    t,
                    pose,
                    velocity,
                    gyro_bias,
                    body_velocity,
                })
                .collect(),
            params_truth: tp
                .iter()
                .zip(p)
                .map(|(&t, a)| ParamsTruthRecord { t, params: DynamicsParams::from_array(a) })
                .collect(),
        })
}

/// Equality that also tells apart `0.0` and `-0.0`.
pub fn bit_identical(a: &Dataset, b: &Dataset) -> bool {
    a == b && format!("{a:?}") == format!("{b:?}")
}

pub fn dataset_files_round_trip(cases: u32) -> Result<(), String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("d.jsonl");
    check(cases, dataset(), |data| {
        write_dataset(&data, &path).map_err(|e| TestCaseError::fail(e.to_string()))?;
        let back = read_dataset(&path).map_err(|e| TestCaseError::fail(e.to_string()))?;
        prop_assert!(bit_identical(&data, &back));
        Ok(())
    })
}

/// Every suite with its name.
pub const SUITES: [(&str, fn(u32) -> Result<(), String>); 11] = [
    ("soft threshold is even and bounded", soft_threshold_is_even_and_bounded),
    ("dynamics derivatives match finite differences", dynamics_derivatives_match_finite_differences),
    ("velocity derivatives ignore position", velocity_derivatives_ignore_position),
    ("throttle gain trades against throttle", throttle_gain_trades_against_throttle),
    ("rollout is Markovian", rollout_is_markovian),
    ("rollout stays finite", rollout_stays_finite),
    ("sensitivities match finite differences", sensitivities_match_finite_differences),
    ("planar projection round trips", planar_projection_round_trips),
    ("RPE ignores a common rigid transform", rpe_ignores_a_common_rigid_transform),
    ("dataset files round trip", dataset_files_round_trip),
    ("stage-1 cost never increases", stage1_cost_never_increases),
];

/// Cost after 0, 1, 2, ... iterations from a poor start.
pub fn stage1_cost_never_increases(cases: u32) -> Result<(), String> {
    use trackcal::calib::{calibrate_stage1, CalibConfig, CalibSetup};
    use trackcal::estimator::mounting_prior;
    let data = super::run_sim(&trackcal::sim::SimConfig::default(), "straight-accel", 12.0);
    let h = data.header.clone().unwrap();
    let setup = CalibSetup { geometry: h.geometry, mounting: mounting_prior(&h.extrinsics, &h.geometry) };
    check(cases, proptest::array::uniform3(0.4..1.8f64), |f| {
        let init = DynamicsParams {
            throttle_gain: 16.0 * f[0],
            throttle_damping: 3.5 * f[1],
            resistance: 6.0 * f[2],
            ..default_params()
        };
        let mut last = f64::INFINITY;
        for k in 0..6 {
            let cfg = CalibConfig { max_iterations: k, ..CalibConfig::default() };
            let r = calibrate_stage1(&data, &setup, &h.hyper, &init, &h.extrinsics, &cfg)
                .map_err(|e| TestCaseError::fail(e.to_string()))?;
            prop_assert!(r.cost <= last, "iteration {k}: {} after {last}", r.cost);
            last = r.cost;
        }
        Ok(())
    })
}
