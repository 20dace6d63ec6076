//! Reusing collision tensors across runs and exporting them as CSV.

use std::time::Instant;

use noma_opt::objective::{ModelSettings, ObjectiveBundle, TensorCache};
use noma_opt::scenario::{BlockConfig, Modulation, PowerLevelGrid, TrafficModel};

fn main() -> noma_opt::Result<()> {
    let dir = std::env::temp_dir().join("noma-opt-example-cache");
    let cache = TensorCache::new(&dir)?;
    let grid = PowerLevelGrid::from_endpoints(15.0, 27.0, 4)?;
    let traffic = TrafficModel::new(0.5, 2)?;
    let block = BlockConfig::new(100, Modulation::Bpsk)?;
    let settings = ModelSettings::new(Modulation::Bpsk, 20_000, 5);

    for pass in ["first", "second"] {
        let t = Instant::now();
        ObjectiveBundle::build_cached(&grid, &traffic, &block, &settings, Some(&cache))?;
        println!("{pass} build: {:.2?}", t.elapsed());
    }
    let bundle = ObjectiveBundle::build_cached(&grid, &traffic, &block, &settings, Some(&cache))?;
    print!("{}", bundle.tensor(1).to_csv(&grid)?);
    println!("cache: {}", dir.display());
    Ok(())
}
