mod common;

use common::props::{self, noisy, path, transform};
use common::*;
use nalgebra::{UnitQuaternion, Vector3};
use trackcal::dynamics::SingleTrack;
use trackcal::error::Error;
use trackcal::eval::{
    prediction_rpe, tracking_rpe, trim_standing_tail, PredictionSetup, Trajectory, DEFAULT_FRACTIONS, DEFAULT_HORIZONS,
};
use trackcal::estimator::EstimatorConfig;
use trackcal::geometry::Pose3;

/// Independent quadratic-time evaluation of the same protocol.
fn brute_force(est: &Trajectory, gt: &Trajectory, fractions: &[f64]) -> (f64, f64, usize) {
    let n = gt.len();
    let mut path = vec![0.0];
    for k in 1..n {
        path.push(path[k - 1] + (gt.poses[k].translation - gt.poses[k - 1].translation).norm());
    }
    let (mut st, mut sr, mut count) = (0.0, 0.0, 0);
    for &f in fractions {
        let len = f * path[n - 1];
        for i in 0..n {
            let Some(j) = (i + 1..n).find(|&j| path[j] - path[i] >= len) else { continue };
            let g = gt.poses[i].inverse().compose(&gt.poses[j]);
            let e = est.poses[i].inverse().compose(&est.poses[j]);
            let d = g.inverse().compose(&e);
            st += d.translation.norm_squared();
            sr += d.angle().to_degrees().powi(2);
            count += 1;
        }
    }
    ((st / count as f64).sqrt(), (sr / count as f64).sqrt(), count)
}

#[test]
fn trimming_the_standing_tail() {
    let t = path(100, |i| if i >= 50 { 0.0 } else { 1.0 });
    let trimmed = trim_standing_tail(&t, 0.02, 0.5).unwrap();
    assert_eq!(trimmed.len(), 50);
    let moving = path(100, |_| 1.0);
    assert_eq!(trim_standing_tail(&moving, 0.02, 0.5).unwrap(), moving);
    let brief = path(100, |i| if i >= 97 { 0.0 } else { 1.0 });
    assert_eq!(trim_standing_tail(&brief, 0.02, 0.5).unwrap().len(), 100);
    let still = path(100, |_| 0.0);
    assert_eq!(trim_standing_tail(&still, 0.02, 0.5).unwrap_err(), Error::EmptyAfterTrim);
}

#[test]
fn identical_and_offset_trajectories_have_zero_error() {
    let gt = path(200, |_| 1.0);
    let r = tracking_rpe(&gt, &gt, &DEFAULT_FRACTIONS).unwrap();
    assert_eq!((r.translation_rmse, r.rotation_rmse_deg), (0.0, 0.0));
    assert_eq!(r.breakdown.len(), 5);
    let shifted = transform(&gt, &Pose3::new(UnitQuaternion::identity(), Vector3::new(5.0, -2.0, 1.0)));
    let r = tracking_rpe(&shifted, &gt, &DEFAULT_FRACTIONS).unwrap();
    assert!(r.translation_rmse < 1e-12 && r.rotation_rmse_deg < 1e-9);
}

#[test]
fn scale_drift_matches_brute_force() {
    let gt = path(300, |i| 0.5 + 0.5 * (i as f64 * 0.02).cos().abs());
    let est = Trajectory {
        poses: gt.poses.iter().map(|p| Pose3::new(p.rotation, p.translation * 1.01)).collect(),
        ..gt.clone()
    };
    let r = tracking_rpe(&est, &gt, &DEFAULT_FRACTIONS).unwrap();
    let (t, rot, n) = brute_force(&est, &gt, &DEFAULT_FRACTIONS);
    assert_eq!(r.count, n);
    assert!((r.translation_rmse - t).abs() <= 1e-12 * t);
    assert!((r.rotation_rmse_deg - rot).abs() <= 1e-9);
    // Relative translations grow by 1 %, so the error is 1 % of the
    // chord length, a bit below 1 % of the path length.
    let total = *gt.arc_length().last().unwrap();
    let mut chords = 0.0;
    for b in &r.breakdown {
        let expected = 0.01 * b.label * total;
        assert!(b.translation_rmse <= expected * 1.0001 && b.translation_rmse > 0.5 * expected, "{b:?}");
        chords += b.count as f64;
    }
    assert_eq!(chords as usize, r.count);
}

#[test]
fn noisy_estimates_match_brute_force() {
    let gt = path(250, |i| 0.8 + 0.2 * (i as f64 * 0.1).sin());
    for seed in 0..5 {
        let est = noisy(&gt, 0.02, seed);
        let r = tracking_rpe(&est, &gt, &DEFAULT_FRACTIONS).unwrap();
        let (t, rot, n) = brute_force(&est, &gt, &DEFAULT_FRACTIONS);
        assert_eq!(r.count, n);
        assert!((r.translation_rmse - t).abs() <= 1e-12 * t);
        assert!((r.rotation_rmse_deg - rot).abs() <= 1e-12 * rot);
    }
}

#[test]
fn more_noise_never_looks_better() {
    let gt = path(200, |_| 1.0);
    let wins = (0..20)
        .filter(|&seed| {
            let a = tracking_rpe(&noisy(&gt, 0.01, seed), &gt, &DEFAULT_FRACTIONS).unwrap();
            let b = tracking_rpe(&noisy(&gt, 0.02, seed + 100), &gt, &DEFAULT_FRACTIONS).unwrap();
            b.translation_rmse >= a.translation_rmse
        })
        .count();
    // One-sided sign test at p < 0.05 needs 15 of 20.
    assert!(wins >= 15, "{wins}");
}

#[test]
fn misaligned_timestamps_are_rejected() {
    let gt = path(50, |_| 1.0);
    let mut est = gt.clone();
    for t in est.times.iter_mut() {
        *t += 0.07;
    }
    assert!(matches!(tracking_rpe(&est, &gt, &[0.1]), Err(Error::AlignmentFailure(_))));
}

#[test]
fn rpe_is_invariant_to_a_common_rigid_transform() {
    props::rpe_ignores_a_common_rigid_transform(32).unwrap();
}

#[test]
fn predictions_with_true_parameters_are_exact_on_noise_free_data() {
    let dur = 20.0;
    let cfg = noise_free_config();
    let ctrl = script("varying-throttle-slalom", dur);
    let data = trackcal::sim::simulate(&cfg, &ctrl, dur, "p").unwrap();
    let records = run_estimator_anchors(&data, &ctrl, EstimatorConfig::default(), cfg.params, trackcal::sim::SensorNoise::zero());
    let h = data.header.as_ref().unwrap();
    let model = SingleTrack::new(h.geometry, h.hyper);
    let horizons = [0.0, DEFAULT_HORIZONS[0], DEFAULT_HORIZONS[2], DEFAULT_HORIZONS[3]];
    let report = prediction_rpe(&records, &data, &PredictionSetup::new(&model, &ctrl, &horizons)).unwrap();
    assert!(report.breakdown[0].translation_rmse < 1e-12);
    assert!(report.breakdown[0].rotation_rmse_deg < 1e-10);
    for b in &report.breakdown {
        assert!(b.count > 0);
        assert!(b.translation_rmse < 1e-3 && b.rotation_rmse_deg < 1e-2, "{b:?}");
    }
    let mut wrong = PredictionSetup::new(&model, &ctrl, &horizons);
    wrong.params = Some(cfg.params.scaled([1.3, 0.7, 1.3, 0.7, 1.3]));
    let bad = prediction_rpe(&records, &data, &wrong).unwrap();
    assert!(bad.breakdown[2].translation_rmse > 100.0 * report.breakdown[2].translation_rmse.max(1e-6));
}
