mod common;

use common::*;
use nalgebra::Vector3;
use trackcal::data::ParamsTruthRecord;
use trackcal::dynamics::{LongitudinalHyperParams, SingleTrack};
use trackcal::geometry::{body_velocity, plane_residual};
use trackcal::integrate::{predict, IntegratorConfig};
use trackcal::sim::{builtin_scripts, simulate, SimConfig, SCRIPT_NAMES};

#[test]
fn zero_controls_and_zero_force_stay_at_rest() {
    let mut cfg = SimConfig::default();
    cfg.hyper = LongitudinalHyperParams { linear_slope: 0.0, softplus_gain: 1.0, resistance_steepness: 10.0 };
    cfg.initial_bias = Vector3::zeros();
    cfg.noise.bias_walk = 0.0;
    let ctrl = trackcal::integrate::ControlTimeline::new(vec![
        trackcal::dynamics::ControlSample::new(0.0, 0.0, 0.0).unwrap(),
    ])
    .unwrap();
    let data = simulate(&cfg, &ctrl, 5.0, "rest").unwrap();
    let start = data.groundtruth[0].pose;
    for g in &data.groundtruth {
        assert_eq!(g.body_velocity, Vector3::zeros());
        assert!((g.pose.translation - start.translation).norm() == 0.0);
    }
    let n = data.gyro.len() as f64;
    let mean: Vector3<f64> = data.gyro.iter().map(|g| g.omega).sum::<Vector3<f64>>() / n;
    let bound = 4.0 * cfg.noise.gyro / n.sqrt();
    assert!(mean.amax() < bound, "gyro mean {mean} exceeds {bound}");
    let vmean: Vector3<f64> = data.odom.iter().map(|o| o.velocity).sum::<Vector3<f64>>() / data.odom.len() as f64;
    assert!(vmean.amax() < 4.0 * cfg.noise.velocity / (data.odom.len() as f64).sqrt());
}

#[test]
fn noise_free_measurements_match_ground_truth() {
    let data = run_sim(&noise_free_config(), "varying-throttle-slalom", 12.0);
    let ext = data.header.as_ref().unwrap().extrinsics;
    for k in 1..data.odom.len() {
        let (a, b) = (&data.groundtruth[k - 1], &data.groundtruth[k]);
        let truth = a.pose.inverse().compose(&b.pose);
        let d = truth.local(&data.odom[k].rel_pose);
        assert!(d.amax() < 1e-12, "frame {k}: {d}");
        let v = b.pose.rotation.inverse() * b.velocity;
        assert!((v - data.odom[k].velocity).amax() < 1e-12);
        let gyro = data.nearest_gyro(b.t).unwrap();
        assert!((gyro.t - b.t).abs() < 1e-9);
        let bv = body_velocity(&b.pose, &b.velocity, &gyro.omega, &b.gyro_bias, &ext);
        assert!((bv - b.body_velocity).amax() < 1e-12);
    }
}

#[test]
fn simulation_is_deterministic_per_seed() {
    let cfg = SimConfig { seed: 42, ..SimConfig::default() };
    let a = run_sim(&cfg, "stop-and-go", 10.0);
    let b = run_sim(&cfg, "stop-and-go", 10.0);
    assert_eq!(a, b);
    let c = run_sim(&SimConfig { seed: 43, ..cfg }, "stop-and-go", 10.0);
    assert_ne!(a.odom, c.odom);
}

#[test]
fn ground_truth_stays_on_the_plane() {
    let data = run_sim(&SimConfig::default(), "full-throttle-slalom", 15.0);
    let ext = data.header.as_ref().unwrap().extrinsics;
    let d = ext.translation.z;
    for g in &data.groundtruth {
        let r = plane_residual(&g.pose, &ext, d).value;
        assert!(r.amax() < 1e-12, "t={}: {r}", g.t);
    }
}

#[test]
fn schedule_changes_truth_exactly_at_event_time() {
    let base = noise_free_config();
    let mut changed = base.clone();
    let mut p = base.params;
    p.tire_stiffness *= 0.6;
    changed.schedule = vec![ParamsTruthRecord { t: 4.0, params: p }];
    let a = run_sim(&base, "varying-throttle-slalom", 8.0);
    let b = run_sim(&changed, "varying-throttle-slalom", 8.0);
    for (ga, gb) in a.groundtruth.iter().zip(&b.groundtruth) {
        if ga.t <= 4.0 + 1e-9 {
            assert_eq!(ga, gb);
        }
    }
    let last = a.groundtruth.len() - 1;
    assert!((a.groundtruth[last].pose.translation - b.groundtruth[last].pose.translation).norm() > 1e-3);
    assert_eq!(b.params_at(3.99).unwrap(), base.params);
    assert_eq!(b.params_at(4.0).unwrap(), p);
}

#[test]
fn prediction_with_true_parameters_reproduces_ground_truth() {
    let cfg = noise_free_config();
    let duration = 12.0;
    let ctrl = script("varying-throttle-slalom", duration);
    let data = simulate(&cfg, &ctrl, duration, "x").unwrap();
    let model = SingleTrack::new(cfg.geometry, cfg.hyper);
    for start in [45usize, 120, 200] {
        let g0 = &data.groundtruth[start];
        let v0 = [g0.body_velocity.x, g0.body_velocity.y, g0.body_velocity.z];
        let r = predict(&model, g0.t, 1.0, v0, &ctrl, &cfg.params, FRAME_DT, &IntegratorConfig::default()).unwrap();
        assert_eq!(r.poses.len(), 31);
        for (k, pose) in r.poses.iter().enumerate() {
            let truth = gt_planar(&data, start, start + k);
            let err = ((pose[0] - truth[0]).powi(2) + (pose[1] - truth[1]).powi(2)).sqrt();
            assert!(err < 1e-6, "start {start} step {k}: {err}");
            assert!((pose[2] - truth[2]).abs() < 1e-6);
        }
    }
}

#[test]
fn builtin_scripts_have_their_advertised_shape() {
    let scripts = builtin_scripts(60.0, 20.0).unwrap();
    assert_eq!(scripts.iter().map(|s| s.0).collect::<Vec<_>>(), SCRIPT_NAMES.to_vec());
    for (_, s) in &scripts {
        for c in s.samples() {
            assert!((0.0..=1.0).contains(&c.throttle) && (-1.0..=1.0).contains(&c.steering));
        }
    }
    let straight = &scripts.iter().find(|s| s.0 == "straight-accel").unwrap().1;
    assert!(straight.samples().iter().all(|c| c.steering == 0.0));

    let data = run_sim(&noise_free_config(), "stop-and-go", 30.0);
    let (mut rest, mut longest) = (0.0f64, 0.0f64);
    for w in data.groundtruth.windows(2) {
        let moving = w[1].body_velocity.xy().norm() >= 0.02;
        let idle = data.controls.iter().rev().find(|c| c.t <= w[1].t).unwrap().throttle == 0.0;
        rest = if !moving && idle { rest + (w[1].t - w[0].t) } else { 0.0 };
        if w[1].t < 25.0 {
            longest = longest.max(rest);
        }
    }
    assert!(longest > 1.0, "longest mid-sequence rest {longest} s");
}
