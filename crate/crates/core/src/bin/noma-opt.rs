use std::fs::File;
use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use noma_opt::experiments::{
    run_blep_vs_q, run_constrained_user, run_distribution_dump, run_throughput_vs_q,
    run_validate, ExperimentSpec, Table, Variant,
};
use noma_opt::objective::TensorCache;
use noma_opt::optimizer::C2Policy;
use noma_opt::scenario::{Modulation, ScenarioConfig};
use noma_opt::Error;

const EXIT_USAGE: u8 = 1;
const EXIT_INFEASIBLE: u8 = 2;
const EXIT_VALIDATION: u8 = 3;

#[derive(Parser)]
#[command(name = "noma-opt", version, about = "Power-level selection sweeps for uplink NOMA random access")]
struct Cli {
    /// Scenario file supplying defaults (flags override it)
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Write CSV here instead of stdout
    #[arg(long, short, global = true)]
    output: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Truncated BLEP versus the number of levels
    BlepVsQ(Sweep),
    /// Per-level probabilities of the optimized and uniform distributions
    DistDump {
        #[command(flatten)]
        sweep: Sweep,
        /// L∞ distance to uniform below which a distribution counts as near-uniform
        #[arg(long)]
        near_uniform_threshold: Option<f64>,
    },
    /// Throughput of the optimized distribution versus the number of levels
    ThroughputVsQ(Sweep),
    /// BLEP of a power-capped user, LP and redistribution variants
    ConstrainedUser {
        #[command(flatten)]
        sweep: Sweep,
        /// Caps on the user's highest level, in dB (list)
        #[arg(long, value_delimiter = ',')]
        gamma_max1_db: Option<Vec<f64>>,
        #[arg(long)]
        constrained_q: Option<usize>,
        #[arg(long)]
        constrained_gamma_q_db: Option<f64>,
        /// impose | drop
        #[arg(long)]
        c2_policy: Option<String>,
    },
    /// Slot-level simulation against the semi-analytic BLEP
    Validate {
        #[command(flatten)]
        sweep: Sweep,
        #[arg(long)]
        slots: Option<u64>,
        #[arg(long)]
        validate_max_q: Option<usize>,
    },
}

#[derive(Args, Clone)]
struct Sweep {
    /// Levels to sweep: `2..16` (inclusive) or `2,4,8`
    #[arg(long)]
    q: Option<String>,
    /// Highest level(s) in dB
    #[arg(long, value_delimiter = ',')]
    gamma_q_db: Option<Vec<f64>>,
    #[arg(long)]
    gamma1_db: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    block_bits: Option<usize>,
    #[arg(long)]
    modulation: Option<Modulation>,
    /// Detector capabilities, e.g. `1,2`
    #[arg(long, value_delimiter = ',')]
    k: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    variants: Option<Vec<Variant>>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    mc_trials: Option<u64>,
    /// Add the mass of collisions the detector cannot resolve
    #[arg(long)]
    include_tail: bool,
}

fn parse_q_list(s: &str) -> Result<Vec<usize>, Error> {
    let bad = || Error::InvalidArgument(format!("bad Q list '{s}'"));
    if let Some((a, b)) = s.split_once("..") {
        let a: usize = a.trim().parse().map_err(|_| bad())?;
        let b: usize = b.trim().trim_start_matches('=').parse().map_err(|_| bad())?;
        if b < a {
            return Err(bad());
        }
        Ok((a..=b).collect())
    } else {
        s.split(',')
            .map(|x| x.trim().parse().map_err(|_| bad()))
            .collect()
    }
}

impl Sweep {
    fn apply(&self, spec: &mut ExperimentSpec) -> Result<(), Error> {
        if let Some(q) = &self.q {
            spec.q_values = parse_q_list(q)?;
        }
        if let Some(v) = &self.gamma_q_db {
            spec.gamma_q_db = v.clone();
            if let Some(&last) = v.last() {
                spec.constrained_gamma_q_db = last;
            }
        }
        if let Some(v) = self.gamma1_db {
            spec.gamma1_db = v;
        }
        if let Some(v) = self.lambda {
            spec.lambda = v;
        }
        if let Some(v) = self.block_bits {
            spec.block_bits = v;
        }
        if let Some(v) = self.modulation {
            spec.modulation = v;
        }
        if let Some(v) = &self.k {
            spec.k_values = v.clone();
        }
        if let Some(v) = &self.variants {
            spec.variants = v.clone();
        }
        if let Some(v) = self.seed {
            spec.seed = v;
        }
        if let Some(v) = self.mc_trials {
            spec.mc_trials = v;
        }
        spec.include_tail |= self.include_tail;
        Ok(())
    }
}

fn base_spec(cli: &Cli) -> Result<ExperimentSpec, Error> {
    let mut spec = ExperimentSpec::default();
    if let Some(path) = &cli.config {
        spec.apply_config(&ScenarioConfig::from_file(path)?);
    }
    spec.cache = TensorCache::from_env()?;
    Ok(spec)
}

fn emit(table: &Table, output: Option<&PathBuf>) -> Result<(), Error> {
    match output {
        Some(path) => table.write_to(&mut File::create(path)?),
        None => {
            let stdout = io::stdout();
            let mut lock = stdout.lock();
            table.write_to(&mut lock)?;
            lock.flush()?;
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<u8, Error> {
    let mut spec = base_spec(&cli)?;
    let output = cli.output.as_ref();
    match &cli.command {
        Command::BlepVsQ(sweep) => {
            sweep.apply(&mut spec)?;
            emit(&run_blep_vs_q(&spec)?, output)?;
        }
        Command::DistDump {
            sweep,
            near_uniform_threshold,
        } => {
            sweep.apply(&mut spec)?;
            if let Some(t) = near_uniform_threshold {
                spec.near_uniform_threshold = *t;
            }
            emit(&run_distribution_dump(&spec)?, output)?;
        }
        Command::ThroughputVsQ(sweep) => {
            sweep.apply(&mut spec)?;
            if sweep.k.is_none() {
                spec.k_values = vec![1, 2];
            }
            emit(&run_throughput_vs_q(&spec)?, output)?;
        }
        Command::ConstrainedUser {
            sweep,
            gamma_max1_db,
            constrained_q,
            constrained_gamma_q_db,
            c2_policy,
        } => {
            sweep.apply(&mut spec)?;
            if let Some(v) = gamma_max1_db {
                spec.gamma_max1_db = Some(v.clone());
            }
            if let Some(v) = constrained_q {
                spec.constrained_q = *v;
            }
            if let Some(v) = constrained_gamma_q_db {
                spec.constrained_gamma_q_db = *v;
            }
            if let Some(p) = c2_policy {
                spec.c2_policy = match p.as_str() {
                    "impose" => C2Policy::ImposeWhenFeasible,
                    "drop" => C2Policy::Drop,
                    other => {
                        return Err(Error::InvalidArgument(format!("unknown c2 policy '{other}'")))
                    }
                };
            }
            emit(&run_constrained_user(&spec)?, output)?;
        }
        Command::Validate {
            sweep,
            slots,
            validate_max_q,
        } => {
            sweep.apply(&mut spec)?;
            if sweep.q.is_none() && cli.config.is_none() {
                spec.q_values = (2..=4).collect();
            }
            if let Some(v) = slots {
                spec.slots = *v;
            }
            if let Some(v) = validate_max_q {
                spec.validate_max_q = *v;
            }
            let report = run_validate(&spec)?;
            emit(&report.table(), output)?;
            let failures = report.failures();
            if !failures.is_empty() {
                for f in failures {
                    eprintln!(
                        "validation failed: Q={} gammaQ_db={} K={} predicted={} empirical={} ± {}",
                        f.q, f.gamma_q_db, f.k, f.predicted, f.empirical, f.half_width
                    );
                }
                return Ok(EXIT_VALIDATION);
            }
        }
    }
    Ok(0)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::Infeasible(_) => EXIT_INFEASIBLE,
                _ => EXIT_USAGE,
            })
        }
    }
}
