//! Tracking error with and without the dynamics factor on a vehicle whose
//! tires saturate, which the estimator's linear tire model cannot express.

use trackcal::calib::CalibResult;
use trackcal::cli::run_dataset;
use trackcal::config::ExperimentConfig;
use trackcal::dynamics::TireModel;
use trackcal::eval::{tracking_rpe, trim_standing_tail, Trajectory, DEFAULT_FRACTIONS};
use trackcal::sim::{builtin_script, simulate};

fn main() -> trackcal::error::Result<()> {
    let ctrl = builtin_script("full-throttle-slalom", 40.0, 20.0)?;
    println!("seed  with dynamics  odometry only");
    for seed in 0..3 {
        let mut cfg = ExperimentConfig::default();
        cfg.sim.seed = seed;
        cfg.anchors.seed = seed + 100;
        cfg.sim.tire = TireModel::Saturating { max_slip: 0.15 };
        let data = simulate(&cfg.sim, &ctrl, 40.0, "ablation")?;
        let gt = trim_standing_tail(&Trajectory::from_groundtruth(&data)?, 0.02, 0.5)?;
        let init = CalibResult { params: cfg.sim.params, hyper: cfg.sim.hyper, extrinsics: cfg.sim.extrinsics, cost: 0.0, iterations: 0 };
        let mut row = Vec::new();
        for on in [true, false] {
            cfg.estimator.use_dynamics = on;
            let (states, _, _) = run_dataset(&data, &cfg, &init, &[])?;
            row.push(tracking_rpe(&Trajectory::from_records(&states)?, &gt, &DEFAULT_FRACTIONS)?.translation_rmse);
        }
        println!("{seed:4} {:12.5} m {:12.5} m", row[0], row[1]);
    }
    Ok(())
}
