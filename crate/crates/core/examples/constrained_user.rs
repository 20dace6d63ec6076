//! A user whose transmit power is capped, against everyone else at the optimum.

use noma_opt::objective::{ModelSettings, ObjectiveBundle};
use noma_opt::optimizer::{
    optimize_constrained_user_lp, optimize_k1, redistribute, tagged_blep, UserPowerConstraint,
};
use noma_opt::scenario::{BlockConfig, Modulation, PowerLevelGrid, TrafficModel};

fn main() -> noma_opt::Result<()> {
    let grid = PowerLevelGrid::from_endpoints(15.0, 33.0, 8)?;
    let bundle = ObjectiveBundle::build(
        &grid,
        &TrafficModel::new(0.5, 1)?,
        &BlockConfig::new(100, Modulation::Bpsk)?,
        &ModelSettings::new(Modulation::Bpsk, 20_000, 1),
    )?;
    let (optimum, _) = optimize_k1(&bundle)?;
    println!("{:>8} {:>10} {:>14}", "cap dB", "lp", "redistributed");
    for &cap in grid.snr_db() {
        let allowed = UserPowerConstraint::max_snr_db(&grid, cap)?;
        let lp = optimize_constrained_user_lp(&allowed, &optimum, &bundle)?;
        let red = tagged_blep(&redistribute(&optimum, &allowed)?, &optimum, &bundle)?;
        println!("{cap:>8.2} {:>10.6} {red:>14.6}", lp.blep);
    }
    Ok(())
}
