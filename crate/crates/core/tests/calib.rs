mod common;

use common::*;
use nalgebra::Vector6;
use trackcal::calib::{calibrate_stage1, calibrate_stage2, CalibConfig, CalibResult, CalibSetup};
use trackcal::data::Dataset;
use trackcal::dynamics::DynamicsParams;
use trackcal::error::Error;
use trackcal::estimator::mounting_prior;
use trackcal::sim::SimConfig;

fn setup(data: &Dataset) -> CalibSetup {
    let h = data.header.as_ref().unwrap();
    CalibSetup { geometry: h.geometry, mounting: mounting_prior(&h.extrinsics, &h.geometry) }
}

fn truth(data: &Dataset) -> DynamicsParams {
    data.params_at(0.0).unwrap()
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

fn stage1(data: &Dataset, init: &DynamicsParams) -> CalibResult {
    let h = data.header.as_ref().unwrap();
    calibrate_stage1(data, &setup(data), &h.hyper, init, &h.extrinsics, &CalibConfig::default()).unwrap()
}

#[test]
fn stage1_recovers_longitudinal_coefficients_from_half_values() {
    let data = run_sim(&SimConfig::default(), "straight-accel", 25.0);
    let p = truth(&data);
    let init = DynamicsParams {
        throttle_gain: 0.5 * p.throttle_gain,
        throttle_damping: 0.5 * p.throttle_damping,
        resistance: 0.5 * p.resistance,
        ..p
    };
    let r = stage1(&data, &init);
    assert!(rel(r.params.throttle_gain, p.throttle_gain) < 0.05, "{:?}", r.params);
    assert!(rel(r.params.throttle_damping, p.throttle_damping) < 0.05, "{:?}", r.params);
    assert!(rel(r.params.resistance, p.resistance) < 0.05, "{:?}", r.params);
    assert_eq!(r.params.steering_ratio, p.steering_ratio);
    assert_eq!(r.params.tire_stiffness, p.tire_stiffness);
}

#[test]
fn stage1_started_at_truth_barely_moves() {
    let data = run_sim(&noise_free_config(), "straight-accel", 25.0);
    let p = truth(&data);
    let r = stage1(&data, &p);
    assert!(r.iterations <= 1, "{} iterations", r.iterations);
    assert!(r.cost < 1e-8, "cost {}", r.cost);
    for (a, b) in r.params.to_array().iter().zip(p.to_array()) {
        assert!(rel(*a, b) < 1e-6, "{a} vs {b}");
    }
}

#[test]
fn stage1_rejects_steering() {
    let data = run_sim(&noise_free_config(), "varying-throttle-slalom", 10.0);
    let h = data.header.as_ref().unwrap();
    let err = calibrate_stage1(&data, &setup(&data), &h.hyper, &truth(&data), &h.extrinsics, &CalibConfig::default())
        .unwrap_err();
    assert!(matches!(err, Error::NotForwardMotion { .. }), "{err}");
    assert_eq!(err.kind(), "NotForwardMotion");
}

#[test]
fn stage2_recovers_the_model_from_a_rough_start() {
    let straight = run_sim(&SimConfig::default(), "straight-accel", 25.0);
    let p = truth(&straight);
    let first = stage1(&straight, &DynamicsParams { tire_stiffness: 0.6 * p.tire_stiffness, ..p });
    let data = run_sim(&SimConfig::default(), "stop-and-go", 40.0);
    let h = data.header.as_ref().unwrap();
    let ext0 = h.extrinsics.retract(&Vector6::new(0.01, -0.01, 0.005, 0.01, -0.01, 0.02));
    let cfg = CalibConfig { max_wheel_angle: 0.30, ..CalibConfig::default() };
    let r = calibrate_stage2(&data, &setup(&data), &first, &ext0, &cfg).unwrap();
    assert!(r.iterations <= 50);
    assert!(rel(r.params.steering_ratio, p.steering_ratio) < 0.05, "{:?}", r.params);
    assert!(rel(r.params.tire_stiffness, p.tire_stiffness) < 0.05, "{:?}", r.params);
    assert!(rel(r.hyper.resistance_steepness, h.hyper.resistance_steepness) < 0.3, "{:?}", r.hyper);
    let d = r.extrinsics.local(&h.extrinsics);
    assert!(d.norm() < 0.01, "extrinsics off by {d:?}");

    let again = calibrate_stage2(&data, &setup(&data), &first, &ext0, &cfg).unwrap();
    assert_eq!(r, again);
}

#[test]
fn stage2_at_truth_on_noise_free_data_has_no_cost() {
    let data = run_sim(&noise_free_config(), "stop-and-go", 20.0);
    let h = data.header.as_ref().unwrap();
    let at_truth = CalibResult { params: truth(&data), hyper: h.hyper, extrinsics: h.extrinsics, cost: 0.0, iterations: 0 };
    let r = calibrate_stage2(&data, &setup(&data), &at_truth, &h.extrinsics, &CalibConfig::default()).unwrap();
    assert!(r.cost < 1e-8, "cost {}", r.cost);
    assert!(r.iterations <= 50);
}
