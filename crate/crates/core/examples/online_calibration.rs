//! Runs the sliding-window estimator from a 30% wrong parameter guess and
//! compares open-loop prediction error with the initial and online values.

use trackcal::config::ExperimentConfig;
use trackcal::cli::run_dataset;
use trackcal::calib::CalibResult;
use trackcal::dynamics::SingleTrack;
use trackcal::eval::{prediction_rpe, PredictionSetup};
use trackcal::integrate::ControlTimeline;
use trackcal::sim::{builtin_script, default_params, simulate};

fn main() -> trackcal::error::Result<()> {
    let cfg = ExperimentConfig::default();
    let ctrl = builtin_script("varying-throttle-slalom", 60.0, 20.0)?;
    let data = simulate(&cfg.sim, &ctrl, 60.0, "online")?;
    let init = CalibResult {
        params: cfg.perturbation.apply(&default_params()),
        hyper: cfg.sim.hyper,
        extrinsics: cfg.sim.extrinsics,
        cost: 0.0,
        iterations: 0,
    };
    let (states, _, ms) = run_dataset(&data, &cfg, &init, &[])?;
    let last = states.last().unwrap().params;
    println!("initial  {:?}", init.params.to_array());
    println!("final    {:?}", last.to_array());
    println!("truth    {:?}", default_params().to_array());
    println!("{ms:.2} ms per frame");

    let model = SingleTrack::new(cfg.sim.geometry, cfg.sim.hyper);
    let timeline = ControlTimeline::new(data.controls.clone())?;
    let horizons = [0.33, 1.66, 3.33];
    let mut setup = PredictionSetup::new(&model, &timeline, &horizons);
    let online = prediction_rpe(&states, &data, &setup)?;
    setup.params = Some(init.params);
    let fixed = prediction_rpe(&states, &data, &setup)?;
    for (a, b) in online.breakdown.iter().zip(&fixed.breakdown) {
        println!("horizon {:5.2} s: initial {:.4} m, online {:.4} m", a.label, b.translation_rmse, a.translation_rmse);
    }
    Ok(())
}
