//! Fixed-point refinement for a detector that resolves three-user collisions.

use noma_opt::objective::{ModelSettings, ObjectiveBundle};
use noma_opt::optimizer::{optimize_iterative, OptimizerConfig};
use noma_opt::scenario::{BlockConfig, Modulation, PowerLevelGrid, TrafficModel};

fn main() -> noma_opt::Result<()> {
    let grid = PowerLevelGrid::from_endpoints(15.0, 27.0, 5)?;
    let bundle = ObjectiveBundle::build(
        &grid,
        &TrafficModel::new(0.5, 2)?,
        &BlockConfig::new(100, Modulation::Bpsk)?,
        &ModelSettings::new(Modulation::Bpsk, 20_000, 3),
    )?;
    let (p, trace) = optimize_iterative(&bundle, &OptimizerConfig::default())?;
    print!("{}", trace.to_csv());
    println!("best iterate: {:?}", p.probs());
    println!("converged: {} after {} iterations", trace.converged, trace.iterations());
    Ok(())
}
