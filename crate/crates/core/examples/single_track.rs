//! Integrates the single-track model through a slalom and prints the state
//! once per second.

use trackcal::dynamics::{SingleTrack, VehicleState2D};
use trackcal::integrate::{integrate_interval, IntegratorConfig};
use trackcal::sim::{builtin_script, SimConfig};

fn main() -> trackcal::error::Result<()> {
    let cfg = SimConfig::default();
    let model = SingleTrack::new(cfg.geometry, cfg.hyper);
    let ctrl = builtin_script("full-throttle-slalom", 10.0, 20.0)?;
    let mut s = VehicleState2D::from_velocity([0.0, 0.0, 0.0]);
    println!("   t      x      y    yaw     vx     vy      w");
    for k in 0..10 {
        let t = k as f64;
        s = integrate_interval(&model, &s, &ctrl, &cfg.params, t, t + 1.0, &IntegratorConfig::default())?;
        let a = s.to_array();
        println!("{:4.1} {:6.2} {:6.2} {:6.2} {:6.2} {:6.2} {:6.2}", t + 1.0, a[0], a[1], a[2], a[3], a[4], a[5]);
    }
    Ok(())
}
