//! Power-level grids, Poisson collision weights and the uniform baseline.

use noma_opt::scenario::{LevelDistribution, PowerLevelGrid, TrafficModel};

fn main() -> noma_opt::Result<()> {
    let grid = PowerLevelGrid::from_endpoints(15.0, 33.0, 7)?;
    println!("levels (dB): {:?}", grid.snr_db());
    println!("target mean SNR: {:.3}", grid.target_mean_snr());

    let traffic = TrafficModel::new(0.5, 2)?;
    for (k, w) in traffic.weights().iter().enumerate() {
        println!("p(k = {k}) = {w:.6}");
    }
    println!("mass beyond K: {:.6}", traffic.tail_mass());

    let uniform = LevelDistribution::uniform(grid.q_count());
    println!("uniform mean residual: {:.2e}", uniform.mean_residual(&grid));
    Ok(())
}
