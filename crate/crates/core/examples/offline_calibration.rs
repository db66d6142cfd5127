//! Two-stage offline calibration: a straight run fixes the longitudinal
//! coefficients, then a stop-and-go run adds steering, tires and mounting.

use trackcal::calib::{calibrate_stage1, calibrate_stage2, CalibConfig, CalibSetup};
use trackcal::dynamics::DynamicsParams;
use trackcal::estimator::mounting_prior;
use trackcal::sim::{builtin_script, default_params, simulate, SimConfig};

fn main() -> trackcal::error::Result<()> {
    let sim = SimConfig::default();
    let straight = simulate(&sim, &builtin_script("straight-accel", 25.0, 20.0)?, 25.0, "straight")?;
    let mixed = simulate(&sim, &builtin_script("stop-and-go", 40.0, 20.0)?, 40.0, "mixed")?;
    let setup = CalibSetup { geometry: sim.geometry, mounting: mounting_prior(&sim.extrinsics, &sim.geometry) };
    let cfg = CalibConfig::default();

    let guess = default_params().scaled([1.0, 0.5, 0.5, 0.5, 0.6]);
    let first = calibrate_stage1(&straight, &setup, &sim.hyper, &guess, &sim.extrinsics, &cfg)?;
    let second = calibrate_stage2(&mixed, &setup, &first, &sim.extrinsics, &cfg)?;

    let truth = default_params().to_array();
    println!("{:>18} {:>10} {:>10} {:>10}", "", "truth", "stage 1", "stage 2");
    for (i, name) in DynamicsParams::NAMES.iter().enumerate() {
        println!("{name:>18} {:10.4} {:10.4} {:10.4}", truth[i], first.params.to_array()[i], second.params.to_array()[i]);
    }
    println!("hyper {:.3?}, cost {:.3e} after {} iterations", second.hyper.to_array(), second.cost, second.iterations);
    Ok(())
}
