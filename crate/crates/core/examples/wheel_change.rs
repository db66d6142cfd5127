//! Tire stiffness drops by 40% halfway through a run; the estimate follows.

use trackcal::calib::CalibResult;
use trackcal::cli::run_dataset;
use trackcal::config::ExperimentConfig;
use trackcal::data::ParamsTruthRecord;
use trackcal::dynamics::DynamicsParams;
use trackcal::sim::{builtin_script, default_params, simulate};

fn main() -> trackcal::error::Result<()> {
    let truth = default_params();
    let worn = DynamicsParams { tire_stiffness: 0.6 * truth.tire_stiffness, ..truth };
    let mut cfg = ExperimentConfig::default();
    cfg.sim.schedule = vec![ParamsTruthRecord { t: 30.0, params: worn }];
    // A softer random walk lets the estimate move within seconds.
    cfg.estimator.weights.param_walk = 1e6;
    let ctrl = builtin_script("varying-throttle-slalom", 70.0, 20.0)?;
    let data = simulate(&cfg.sim, &ctrl, 70.0, "wheel-change")?;
    let init = CalibResult { params: truth, hyper: cfg.sim.hyper, extrinsics: cfg.sim.extrinsics, cost: 0.0, iterations: 0 };
    let (states, _, _) = run_dataset(&data, &cfg, &init, &[])?;
    println!("   t  C_tire estimate  truth");
    for r in states.iter().step_by(150) {
        let actual = if r.t < 30.0 { truth.tire_stiffness } else { worn.tire_stiffness };
        println!("{:4.0} {:16.2} {:6.1}", r.t, r.params.tire_stiffness, actual);
    }
    Ok(())
}
