//! Slot-level simulation of the optimized distribution.

use noma_opt::experiments::validate_point;
use noma_opt::objective::{ModelSettings, ObjectiveBundle};
use noma_opt::optimizer::optimize_k1;
use noma_opt::scenario::{BlockConfig, Modulation, PowerLevelGrid, TrafficModel};

fn main() -> noma_opt::Result<()> {
    let grid = PowerLevelGrid::from_endpoints(15.0, 27.0, 4)?;
    let bundle = ObjectiveBundle::build(
        &grid,
        &TrafficModel::new(0.5, 1)?,
        &BlockConfig::new(100, Modulation::Bpsk)?,
        &ModelSettings::new(Modulation::Bpsk, 20_000, 1),
    )?;
    let (p, _) = optimize_k1(&bundle)?;
    let (predicted, stats) = validate_point(&bundle, &p, 500_000, 11)?;
    println!("predicted BLEP  {predicted:.6}");
    println!("simulated BLEP  {:.6} ± {:.6}", stats.blep.value, stats.blep.half_width);
    println!("simulated BEP   {:.3e} ± {:.1e}", stats.bep.value, stats.bep.half_width);
    println!("throughput      {:.4} packets/slot", stats.throughput.value);
    let (lo, hi) = stats.blep_exact_interval(0.95);
    println!("exact interval  [{lo:.6}, {hi:.6}]");
    Ok(())
}
