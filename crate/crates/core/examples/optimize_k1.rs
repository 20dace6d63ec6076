//! Optimal level distribution when the detector resolves at most two users.

use noma_opt::objective::{truncated_blep, ModelSettings, ObjectiveBundle};
use noma_opt::optimizer::optimize_k1;
use noma_opt::scenario::{BlockConfig, LevelDistribution, Modulation, PowerLevelGrid, TrafficModel};

fn main() -> noma_opt::Result<()> {
    let block = BlockConfig::new(100, Modulation::Bpsk)?;
    let traffic = TrafficModel::new(0.5, 1)?;
    let settings = ModelSettings::new(Modulation::Bpsk, 20_000, 1);
    for q in [4, 7, 13] {
        let grid = PowerLevelGrid::from_endpoints(15.0, 33.0, q)?;
        let bundle = ObjectiveBundle::build(&grid, &traffic, &block, &settings)?;
        let (p, report) = optimize_k1(&bundle)?;
        let uniform = truncated_blep(&LevelDistribution::uniform(q), &bundle)?;
        println!(
            "Q={q:>2} optimized {:.6} uniform {uniform:.6} ({})",
            truncated_blep(&p, &bundle)?,
            report.status
        );
        let probs: Vec<String> = p.probs().iter().map(|v| format!("{v:.3}")).collect();
        println!("      P = [{}]", probs.join(", "));
    }
    Ok(())
}
