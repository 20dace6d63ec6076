//! Closed-form two-user BPSK bit error probability against the ML Monte Carlo detector.

use noma_opt::error_models::{mc_joint_ml_bep, single_user_bep, two_user_bep, ErrorModelSpec};
use noma_opt::scenario::{db_to_linear, Modulation};

fn main() -> noma_opt::Result<()> {
    let g1 = db_to_linear(15.0);
    println!("single user at 15 dB: {:.6e}", single_user_bep(g1)?);

    let spec = ErrorModelSpec::monte_carlo(Modulation::Bpsk, 2_000_000, 7)?;
    println!("{:>8} {:>14} {:>14} {:>7}", "g0 dB", "closed form", "monte carlo", "z");
    for db in [5.0, 10.0, 14.0, 15.0, 16.0, 20.0] {
        let g0 = db_to_linear(db);
        let exact = two_user_bep(g0, g1)?;
        let mc = mc_joint_ml_bep(&[g0, g1], &spec)?;
        println!("{db:>8.1} {exact:>14.6e} {:>14.6e} {:>7.2}", mc.value, mc.z_score(exact));
    }
    Ok(())
}
