#![allow(dead_code)]

pub mod props;

use nalgebra::Vector3;
use trackcal::data::Dataset;
use trackcal::geometry::{project_planar, relative_body_pose};
use trackcal::integrate::ControlTimeline;
use trackcal::sim::{builtin_script, simulate, SensorNoise, SimConfig};

pub const FRAME_DT: f64 = 1.0 / 30.0;

pub fn noise_free_config() -> SimConfig {
    SimConfig { noise: SensorNoise::zero(), initial_bias: Vector3::zeros(), ..SimConfig::default() }
}

pub fn script(name: &str, duration: f64) -> ControlTimeline {
    builtin_script(name, duration, 20.0).unwrap()
}

pub fn run_sim(cfg: &SimConfig, name: &str, duration: f64) -> Dataset {
    simulate(cfg, &script(name, duration), duration, name).unwrap()
}

/// Ground-truth planar motion of the body between frames `i` and `j`.
pub fn gt_planar(data: &Dataset, i: usize, j: usize) -> [f64; 3] {
    let ext = data.header.as_ref().unwrap().extrinsics;
    let g = &data.groundtruth;
    project_planar(&relative_body_pose(&g[i].pose, &ext, &g[j].pose, &ext)).unwrap()
}

use std::sync::Arc;
use nalgebra::Vector6;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use trackcal::dynamics::{DynamicsParams, SingleTrack};
use trackcal::factors::DynamicsFactor;
use trackcal::graph::{Values, VarKey};
use trackcal::integrate::IntegratorConfig;

/// Ground-truth states of frames `start..start + n` keyed by frame index.
pub fn truth_values(data: &Dataset, start: usize, n: usize, params: DynamicsParams) -> Values {
    let ext = data.header.as_ref().unwrap().extrinsics;
    let mut v = Values::new();
    for k in start..start + n {
        let g = &data.groundtruth[k];
        let f = k as u64;
        v.insert_pose(VarKey::pose(f), g.pose);
        v.insert_vector(VarKey::velocity(f), g.velocity);
        v.insert_vector(VarKey::bias(f), g.gyro_bias);
        v.insert_pose(VarKey::extrinsics(f), ext);
    }
    v.insert_params(VarKey::params(start as u64), params);
    v.insert_params(VarKey::params(start as u64 + 1), params);
    v
}

pub fn dynamics_factor(data: &Dataset, ctrl: &ControlTimeline, start: usize, n: usize) -> DynamicsFactor {
    let h = data.header.as_ref().unwrap();
    let frames: Vec<u64> = (start..start + n).map(|k| k as u64).collect();
    let times: Vec<f64> = frames.iter().map(|&k| data.odom[k as usize].t).collect();
    DynamicsFactor {
        gyro: times.iter().map(|&t| data.nearest_gyro(t).unwrap().omega).collect(),
        frames,
        times,
        controls: Arc::new(ctrl.clone()),
        model: SingleTrack::new(h.geometry, h.hyper),
        integrator: IntegratorConfig::default(),
        pose_weight: 1e3,
        velocity_weight: 1e3,
    }
}

/// Randomly perturbs every variable of `values`; velocities of frames in
/// `standstill` are set to zero instead.
pub fn perturb_values(values: &Values, rng: &mut ChaCha8Rng, standstill: &[u64]) -> Values {
    let mut out = values.clone();
    let keys: Vec<VarKey> = values.keys().copied().collect();
    for k in keys {
        use trackcal::graph::VarKind::*;
        let d: Vec<f64> = match k.kind {
            Pose => (0..6).map(|i| rng.random_range(-1.0..1.0) * if i < 3 { 0.05 } else { 0.03 }).collect(),
            Extrinsics => (0..6).map(|_| rng.random_range(-0.02..0.02)).collect(),
            Velocity => (0..3).map(|_| rng.random_range(-0.2..0.2)).collect(),
            GyroBias => (0..3).map(|_| rng.random_range(-0.02..0.02)).collect(),
            Params => {
                let p = values.params(&k).unwrap().to_array();
                p.iter().map(|x| x * rng.random_range(-0.3..0.3)).collect()
            }
        };
        out.retract(&k, &d).unwrap();
        if k.kind == Velocity && standstill.contains(&k.frame) {
            out.insert_vector(k, Vector3::zeros());
        }
    }
    out
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn small_twist(rng: &mut ChaCha8Rng, t: f64, r: f64) -> Vector6<f64> {
    Vector6::from_fn(|i, _| rng.random_range(-1.0..1.0) * if i < 3 { t } else { r })
}

use trackcal::factors::{
    AnchorFactor, ExtrinsicsPriorFactor, ExtrinsicsWalkFactor, GeometryFactor, InitialStateFactor,
    OdometryFactor, ParamAbsoluteFactor, ParamRelativeFactor,
};
use trackcal::geometry::MountingPrior;
use trackcal::graph::Factor;

/// One factor of every kind over frames `start..start + 3`.
pub fn every_factor(data: &Dataset, ctrl: &ControlTimeline, start: usize) -> Vec<Box<dyn Factor>> {
    let h = data.header.as_ref().unwrap();
    let (a, b, c) = (start as u64, start as u64 + 1, start as u64 + 2);
    let odom = &data.odom[start + 1];
    let scale = h_params_scale();
    vec![
        Box::new(dynamics_factor(data, ctrl, start, 3)),
        Box::new(OdometryFactor {
            from: a,
            to: b,
            rel_pose: odom.rel_pose,
            velocity: odom.velocity,
            rot_increment: odom.rot_increment,
            dt: FRAME_DT,
            weights: [4e4, 3e5, 1e4, 3e6, 1e5],
        }),
        Box::new(AnchorFactor {
            keyframe: a,
            frame: c,
            rel_pose: data.groundtruth[start].pose.inverse().compose(&data.groundtruth[start + 2].pose),
            translation_weight: 1e4,
            rotation_weight: 1e5,
        }),
        Box::new(InitialStateFactor {
            frame: a,
            pose: h.initial_pose,
            velocity: data.odom[start].velocity,
            bias: Vector3::zeros(),
            weights: [1e8, 1e4, 100.0],
        }),
        Box::new(GeometryFactor {
            frame: b,
            prior: MountingPrior {
                plane_offset: h.extrinsics.translation.z,
                lateral_offset: 0.0,
                front_axle: h.geometry.front_axle,
                front_offset: h.extrinsics.translation.x - h.geometry.front_axle,
                forward_axis: [0.0, 0.0, 1.0],
            },
            weight: 1e4,
        }),
        Box::new(ExtrinsicsPriorFactor { frame: c, prior: h.extrinsics, weight: 1.0 }),
        Box::new(ExtrinsicsWalkFactor { from: a, to: b, weight: 1e4 }),
        Box::new(ParamRelativeFactor { from: a, to: b, scale, weight: 1e8 }),
        Box::new(ParamAbsoluteFactor { frame: a, reference: trackcal::sim::default_params(), scale, weight: 20.0 }),
    ]
}

pub fn h_params_scale() -> [f64; 5] {
    trackcal::sim::default_params().to_array()
}

use trackcal::estimator::{mounting_prior, Estimator, EstimatorConfig, InitialState, StateRecord};
use trackcal::sim::KeyframeAnchors;

pub fn estimator_for(data: &Dataset, ctrl: &ControlTimeline, cfg: EstimatorConfig, params: DynamicsParams) -> Estimator {
    let h = data.header.as_ref().unwrap();
    Estimator::new(
        cfg,
        SingleTrack::new(h.geometry, h.hyper),
        Arc::new(ctrl.clone()),
        mounting_prior(&h.extrinsics, &h.geometry),
        InitialState { pose: h.initial_pose, extrinsics: h.extrinsics, params, gyro_bias: Vector3::zeros() },
    )
    .unwrap()
}

pub fn run_estimator(data: &Dataset, ctrl: &ControlTimeline, cfg: EstimatorConfig, params: DynamicsParams) -> Vec<StateRecord> {
    let mut est = estimator_for(data, ctrl, cfg, params);
    let anchors = KeyframeAnchors::from_dataset(data, &trackcal::sim::SensorNoise::default(), 1);
    trackcal::estimator::run(&mut est, data, &anchors).unwrap()
}

pub fn run_estimator_anchors(
    data: &Dataset,
    ctrl: &ControlTimeline,
    cfg: EstimatorConfig,
    params: DynamicsParams,
    anchor_noise: trackcal::sim::SensorNoise,
) -> Vec<StateRecord> {
    let mut est = estimator_for(data, ctrl, cfg, params);
    let anchors = KeyframeAnchors::from_dataset(data, &anchor_noise, 1);
    trackcal::estimator::run(&mut est, data, &anchors).unwrap()
}

/// Largest relative Jacobian error of every factor kind over `windows`
/// random windows of a stop-and-go run; every fourth window holds frames at
/// rest. Returns the error and where it occurred.
pub fn worst_jacobian_error(windows: usize) -> (f64, String) {
    let duration = 30.0;
    let ctrl = script("stop-and-go", duration);
    let data = trackcal::sim::simulate(&trackcal::sim::SimConfig::default(), &ctrl, duration, "x").unwrap();
    let mut rng = rng(7);
    let mut worst = (0.0f64, String::new());
    for w in 0..windows {
        let start = (w * 37) % (data.odom.len() - 3);
        let truth = truth_values(&data, start, 3, trackcal::sim::default_params());
        let standstill: Vec<u64> = if w % 4 == 0 { vec![start as u64, start as u64 + 2] } else { vec![] };
        let values = perturb_values(&truth, &mut rng, &standstill);
        for f in every_factor(&data, &ctrl, start) {
            let err = trackcal::graph::jacobian_error(f.as_ref(), &values, 1e-6, 1e-6).unwrap();
            if err > worst.0 {
                worst = (err, format!("window {w}, {}", f.name()));
            }
        }
    }
    worst
}

/// Like [`run_estimator_anchors`] with a chosen anchor seed.
pub fn run_estimator_seeded(
    data: &Dataset,
    ctrl: &ControlTimeline,
    cfg: EstimatorConfig,
    params: DynamicsParams,
    anchor_noise: trackcal::sim::SensorNoise,
    seed: u64,
) -> Vec<StateRecord> {
    let mut est = estimator_for(data, ctrl, cfg, params);
    let anchors = KeyframeAnchors::from_dataset(data, &anchor_noise, seed);
    trackcal::estimator::run(&mut est, data, &anchors).unwrap()
}
