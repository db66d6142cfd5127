//! Simulates every built-in script and writes the datasets to a temporary
//! directory.

use trackcal::io::{read_dataset, write_dataset};
use trackcal::sim::{builtin_scripts, simulate, SimConfig};

fn main() -> trackcal::error::Result<()> {
    let dir = std::env::temp_dir().join("trackcal-sequences");
    for (name, script) in builtin_scripts(20.0, 20.0)? {
        let data = simulate(&SimConfig::default(), &script, 20.0, name)?;
        let path = dir.join(format!("{name}.jsonl"));
        write_dataset(&data, &path)?;
        let back = read_dataset(&path)?;
        assert_eq!(back, data);
        println!("{name:>24}: {} frames, {} gyro samples -> {}", data.odom.len(), data.gyro.len(), path.display());
    }
    Ok(())
}
