//! Parameter sweeps that regenerate the evaluation curves as CSV tables.
//!
//! Every runner is deterministic for a fixed [`ExperimentSpec`]: sweep points
//! may be evaluated in parallel but rows come out in sweep order, and every
//! random draw is keyed on the spec seed.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::objective::{reported_blep, throughput, ModelSettings, ObjectiveBundle, TensorCache};
use crate::optimizer::{
    optimize_constrained_user_lp_with, optimize_iterative, optimize_k1_with, redistribute,
    tagged_blep, C2Policy, OptimizerConfig, UserPowerConstraint,
};
use crate::rng::derive_seed;
use crate::scenario::{
    BlockConfig, LevelDistribution, Modulation, PowerLevelGrid, ScenarioConfig, TrafficModel,
};
use crate::sim::simulate;

/// `printf("%.12g")`.
pub fn fmt12(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let sci = format!("{x:.11e}");
    let (mant, exp) = sci.split_once('e').expect("exponent");
    let exp: i32 = exp.parse().expect("integer exponent");
    let strip = |s: &str| -> String {
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s.to_string()
        }
    };
    if !(-4..12).contains(&exp) {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{sign}{:02}", strip(mant), exp.abs())
    } else {
        strip(&format!("{:.*}", (11 - exp) as usize, x))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Variant {
    Optimized,
    Uniform,
    LpConstrained,
    Redistributed,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Optimized => "optimized",
            Variant::Uniform => "uniform",
            Variant::LpConstrained => "lp",
            Variant::Redistributed => "redistributed",
        })
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "optimized" => Ok(Variant::Optimized),
            "uniform" => Ok(Variant::Uniform),
            "lp" | "lp_constrained" => Ok(Variant::LpConstrained),
            "redistributed" | "redistribution" => Ok(Variant::Redistributed),
            other => Err(invalid(format!("unknown variant '{other}'"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub q_values: Vec<usize>,
    pub gamma_q_db: Vec<f64>,
    pub gamma1_db: f64,
    pub lambda: f64,
    pub block_bits: usize,
    pub modulation: Modulation,
    pub k_values: Vec<usize>,
    pub variants: Vec<Variant>,
    /// Constrained-user sweep; `None` uses every level of the grid.
    pub gamma_max1_db: Option<Vec<f64>>,
    pub constrained_q: usize,
    pub constrained_gamma_q_db: f64,
    pub c2_policy: C2Policy,
    pub mc_trials: u64,
    pub seed: u64,
    pub slots: u64,
    /// Only sweep points with at most this many levels are simulated.
    pub validate_max_q: usize,
    /// Add the collision mass beyond `K` to reported BLEPs.
    pub include_tail: bool,
    pub near_uniform_threshold: f64,
    pub optimizer: OptimizerConfig,
    pub cache: Option<TensorCache>,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            q_values: (2..=16).collect(),
            gamma_q_db: vec![20.0, 27.0, 33.0],
            gamma1_db: 15.0,
            lambda: 0.5,
            block_bits: 100,
            modulation: Modulation::Bpsk,
            k_values: vec![1],
            variants: vec![Variant::Optimized, Variant::Uniform],
            gamma_max1_db: None,
            constrained_q: 13,
            constrained_gamma_q_db: 33.0,
            c2_policy: C2Policy::default(),
            mc_trials: 20_000,
            seed: 1,
            slots: 1_000_000,
            validate_max_q: 5,
            include_tail: false,
            near_uniform_threshold: 0.05,
            optimizer: OptimizerConfig::default(),
            cache: None,
        }
    }
}

impl ExperimentSpec {
    /// Applies the keys present in a scenario file.
    pub fn apply_config(&mut self, cfg: &ScenarioConfig) {
        if let Some(v) = cfg.gamma1_db {
            self.gamma1_db = v;
        }
        if let Some(v) = cfg.gamma_q_db {
            self.gamma_q_db = vec![v];
            self.constrained_gamma_q_db = v;
        }
        if let Some(v) = cfg.q_count {
            self.q_values = vec![v];
            self.constrained_q = v;
        }
        if let Some(v) = cfg.lambda {
            self.lambda = v;
        }
        if let Some(v) = cfg.k_max {
            self.k_values = vec![v];
        }
        if let Some(v) = cfg.block_bits {
            self.block_bits = v;
        }
        if let Some(v) = cfg.modulation {
            self.modulation = v;
        }
        if let Some(v) = cfg.seed {
            self.seed = v;
        }
        if let Some(v) = cfg.slots {
            self.slots = v;
        }
        if let Some(v) = cfg.mc_trials {
            self.mc_trials = v;
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.q_values.is_empty() || self.gamma_q_db.is_empty() || self.k_values.is_empty() {
            return Err(invalid("sweep ranges must be nonempty"));
        }
        if self.variants.is_empty() {
            return Err(invalid("at least one variant is required"));
        }
        if self.q_values.iter().any(|&q| q < 2) {
            return Err(invalid("Q sweep must start at 2 or above"));
        }
        if self.gamma_q_db.iter().any(|&g| !(g > self.gamma1_db)) {
            return Err(invalid("gammaQ_db must exceed gamma1_db"));
        }
        self.optimizer.validate()
    }

    fn k_max(&self) -> usize {
        self.k_values.iter().copied().max().unwrap_or(1)
    }

    fn block(&self) -> Result<BlockConfig> {
        BlockConfig::new(self.block_bits, self.modulation)
    }

    fn settings(&self) -> ModelSettings {
        ModelSettings::new(self.modulation, self.mc_trials, self.seed)
    }

    fn grid(&self, q: usize, gamma_q_db: f64) -> Result<PowerLevelGrid> {
        PowerLevelGrid::from_endpoints(self.gamma1_db, gamma_q_db, q)
    }

    fn bundle(&self, grid: &PowerLevelGrid, k: usize) -> Result<ObjectiveBundle> {
        ObjectiveBundle::build_cached(
            grid,
            &TrafficModel::new(self.lambda, k)?,
            &self.block()?,
            &self.settings(),
            self.cache.as_ref(),
        )
    }

    fn points(&self) -> Vec<(f64, usize)> {
        self.gamma_q_db
            .iter()
            .flat_map(|&g| self.q_values.iter().map(move |&q| (g, q)))
            .collect()
    }

    fn optimized(&self, bundle: &ObjectiveBundle, k: usize) -> Result<LevelDistribution> {
        let b = bundle.truncated_to(k)?;
        if k <= 1 {
            Ok(optimize_k1_with(&b, &self.optimizer)?.0)
        } else {
            let cfg = OptimizerConfig {
                k_cap: Some(k),
                ..self.optimizer.clone()
            };
            Ok(optimize_iterative(&b, &cfg)?.0)
        }
    }
}

fn point_ctx(q: usize, gamma_q_db: f64) -> String {
    format!("sweep point Q={q} gammaQ_db={}", fmt12(gamma_q_db))
}

/// Header plus text rows.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    fn new(header: &[&str]) -> Self {
        Self {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.header.join(",");
        out.push('\n');
        for r in &self.rows {
            out.push_str(&r.join(","));
            out.push('\n');
        }
        out
    }

    pub fn write_to(&self, w: &mut dyn Write) -> Result<()> {
        w.write_all(self.to_csv().as_bytes())?;
        Ok(())
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }
}

/// Truncated BLEP per (Q, γ_Q, variant, K).
pub fn run_blep_vs_q(spec: &ExperimentSpec) -> Result<Table> {
    spec.validate()?;
    let mut table = Table::new(&["Q", "gammaQ_db", "variant", "K", "blep"]);
    let mut ks = spec.k_values.clone();
    ks.sort_unstable();
    ks.dedup();
    let mut variants = spec.variants.clone();
    variants.sort();
    variants.dedup();
    let results: Vec<Result<Vec<Vec<String>>>> = spec
        .points()
        .par_iter()
        .map(|&(g, q)| {
            let grid = spec.grid(q, g)?;
            let full = spec.bundle(&grid, spec.k_max())?;
            let mut rows = Vec::new();
            for &variant in &variants {
                for &k in &ks {
                    let dist = match variant {
                        Variant::Optimized => spec.optimized(&full, k)?,
                        Variant::Uniform => LevelDistribution::uniform(q),
                        _ => continue,
                    };
                    let blep = reported_blep(&dist, &full.truncated_to(k)?, spec.include_tail)?;
                    rows.push(vec![
                        q.to_string(),
                        fmt12(g),
                        variant.to_string(),
                        k.to_string(),
                        fmt12(blep),
                    ]);
                }
            }
            Ok(rows)
        })
        .collect();
    for (r, (g, q)) in results.into_iter().zip(spec.points()) {
        table.rows.extend(r.map_err(|e| e.context(&point_ctx(q, g)))?);
    }
    Ok(table)
}

/// Per-level probabilities of the optimized and uniform distributions.
pub fn run_distribution_dump(spec: &ExperimentSpec) -> Result<Table> {
    spec.validate()?;
    let mut table = Table::new(&[
        "Q",
        "gammaQ_db",
        "K",
        "variant",
        "level_db",
        "probability",
        "linf_to_uniform",
        "near_uniform_threshold",
    ]);
    let k = spec.k_values[0];
    let results: Vec<Result<Vec<Vec<String>>>> = spec
        .points()
        .par_iter()
        .map(|&(g, q)| {
            let grid = spec.grid(q, g)?;
            let bundle = spec.bundle(&grid, k)?;
            let uniform = LevelDistribution::uniform(q);
            let mut rows = Vec::new();
            for (variant, dist) in [
                (Variant::Optimized, spec.optimized(&bundle, k)?),
                (Variant::Uniform, uniform.clone()),
            ] {
                let linf = dist.linf_distance(&uniform);
                for (db, p) in grid.snr_db().iter().zip(dist.probs()) {
                    rows.push(vec![
                        q.to_string(),
                        fmt12(g),
                        k.to_string(),
                        variant.to_string(),
                        fmt12(*db),
                        fmt12(*p),
                        fmt12(linf),
                        fmt12(spec.near_uniform_threshold),
                    ]);
                }
            }
            Ok(rows)
        })
        .collect();
    for (r, (g, q)) in results.into_iter().zip(spec.points()) {
        table.rows.extend(r.map_err(|e| e.context(&point_ctx(q, g)))?);
    }
    Ok(table)
}

/// Throughput of the optimized distribution for every `K`.
pub fn run_throughput_vs_q(spec: &ExperimentSpec) -> Result<Table> {
    spec.validate()?;
    let mut table = Table::new(&["Q", "gammaQ_db", "K", "throughput"]);
    let mut ks = spec.k_values.clone();
    ks.sort_unstable();
    ks.dedup();
    let results: Vec<Result<Vec<Vec<String>>>> = spec
        .points()
        .par_iter()
        .map(|&(g, q)| {
            let grid = spec.grid(q, g)?;
            let full = spec.bundle(&grid, spec.k_max())?;
            ks.iter()
                .map(|&k| {
                    let dist = spec.optimized(&full, k)?;
                    let t = throughput(&dist, &full.truncated_to(k)?)?;
                    Ok(vec![q.to_string(), fmt12(g), k.to_string(), fmt12(t)])
                })
                .collect()
        })
        .collect();
    for (r, (g, q)) in results.into_iter().zip(spec.points()) {
        table.rows.extend(r.map_err(|e| e.context(&point_ctx(q, g)))?);
    }
    Ok(table)
}

/// BLEP of a power-capped user for the LP and redistribution variants.
pub fn run_constrained_user(spec: &ExperimentSpec) -> Result<Table> {
    spec.validate()?;
    let mut table = Table::new(&["gamma_max1_db", "variant", "blep", "c2_imposed"]);
    let q = spec.constrained_q;
    let g = spec.constrained_gamma_q_db;
    let k = spec.k_values[0];
    let grid = spec.grid(q, g).map_err(|e| e.context(&point_ctx(q, g)))?;
    let bundle = spec
        .bundle(&grid, k)
        .map_err(|e| e.context(&point_ctx(q, g)))?;
    let optimum = spec.optimized(&bundle, k)?;
    let sweep = spec
        .gamma_max1_db
        .clone()
        .unwrap_or_else(|| grid.snr_db().to_vec());
    let tail = if spec.include_tail {
        bundle.traffic().tail_mass()
    } else {
        0.0
    };
    for gm in sweep {
        let allowed = UserPowerConstraint::max_snr_db(&grid, gm)
            .map_err(|e| e.context(&format!("gamma_max1_db={}", fmt12(gm))))?;
        let lp = optimize_constrained_user_lp_with(&allowed, &optimum, &bundle, spec.c2_policy)?;
        let red = redistribute(&optimum, &allowed)?;
        let red_blep = tagged_blep(&red, &optimum, &bundle)?;
        table.rows.push(vec![
            fmt12(gm),
            Variant::LpConstrained.to_string(),
            fmt12(lp.blep + tail),
            lp.c2_imposed.to_string(),
        ]);
        let red_c2 = red.mean_residual(&grid) <= 1e-9 * grid.target_mean_snr();
        table.rows.push(vec![
            fmt12(gm),
            Variant::Redistributed.to_string(),
            fmt12(red_blep + tail),
            red_c2.to_string(),
        ]);
    }
    Ok(table)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationRow {
    pub q: usize,
    pub gamma_q_db: f64,
    pub k: usize,
    pub predicted: f64,
    pub empirical: f64,
    pub half_width: f64,
}

impl ValidationRow {
    pub fn passed(&self) -> bool {
        (self.empirical - self.predicted).abs() <= self.half_width
    }
}

#[derive(Debug, Clone)]
pub struct ValidationReport {
    pub rows: Vec<ValidationRow>,
}

impl ValidationReport {
    pub fn all_passed(&self) -> bool {
        self.rows.iter().all(ValidationRow::passed)
    }

    pub fn failures(&self) -> Vec<&ValidationRow> {
        self.rows.iter().filter(|r| !r.passed()).collect()
    }

    pub fn table(&self) -> Table {
        let mut t = Table::new(&[
            "Q",
            "gammaQ_db",
            "K",
            "predicted",
            "empirical",
            "half_width",
            "pass",
        ]);
        for r in &self.rows {
            t.rows.push(vec![
                r.q.to_string(),
                fmt12(r.gamma_q_db),
                r.k.to_string(),
                fmt12(r.predicted),
                fmt12(r.empirical),
                fmt12(r.half_width),
                r.passed().to_string(),
            ]);
        }
        t
    }
}

/// Simulates `dist` and compares against the semi-analytic BLEP from `bundle`
/// (including the mass of collisions beyond `K`).
pub fn validate_point(
    bundle: &ObjectiveBundle,
    dist: &LevelDistribution,
    slots: u64,
    seed: u64,
) -> Result<(f64, crate::sim::SimStats)> {
    let predicted = reported_blep(dist, bundle, true)?;
    let stats = simulate(
        bundle.grid(),
        dist,
        bundle.traffic(),
        bundle.block(),
        slots,
        seed,
    )?;
    Ok((predicted, stats))
}

/// Slot-level simulation of the optimized distribution at every small sweep point.
pub fn run_validate(spec: &ExperimentSpec) -> Result<ValidationReport> {
    spec.validate()?;
    let mut ks = spec.k_values.clone();
    ks.sort_unstable();
    ks.dedup();
    let points: Vec<(f64, usize, usize)> = spec
        .points()
        .into_iter()
        .filter(|&(_, q)| q <= spec.validate_max_q)
        .flat_map(|(g, q)| ks.iter().map(move |&k| (g, q, k)))
        .collect();
    if points.is_empty() {
        return Err(invalid(format!(
            "no sweep point has Q <= {}",
            spec.validate_max_q
        )));
    }
    let rows = points
        .iter()
        .map(|&(g, q, k)| {
            let grid = spec.grid(q, g)?;
            let bundle = spec.bundle(&grid, k)?;
            let dist = spec.optimized(&bundle, k)?;
            let seed = derive_seed(spec.seed, &[0x51a7, q as u64, g.to_bits(), k as u64]);
            let (predicted, stats) = validate_point(&bundle, &dist, spec.slots, seed)?;
            Ok(ValidationRow {
                q,
                gamma_q_db: g,
                k,
                predicted,
                empirical: stats.blep.value,
                half_width: stats.blep.half_width,
            })
        })
        .zip(&points)
        .map(|(r, &(g, q, _))| r.map_err(|e: Error| e.context(&point_ctx(q, g))))
        .collect::<Result<Vec<_>>>()?;
    Ok(ValidationReport { rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fmt12_matches_printf() {
        let cases = [
            (0.0, "0"),
            (1.0, "1"),
            (0.5, "0.5"),
            (15.0, "15"),
            (1.0 / 3.0, "0.333333333333"),
            (2.0 / 3.0, "0.666666666667"),
            (123456.789, "123456.789"),
            (1e-5, "1e-05"),
            (1.5e-7, "1.5e-07"),
            (0.0001234, "0.0001234"),
            (1e12, "1e+12"),
            (999999999999.0, "999999999999"),
            (-2.5, "-2.5"),
            (0.09020401043104986, "0.090204010431"),
            (9.999999999999951, "10"),
        ];
        for (x, s) in cases {
            assert_eq!(fmt12(x), s, "{x}");
        }
    }

    fn small_spec() -> ExperimentSpec {
        ExperimentSpec {
            q_values: vec![2, 3, 4],
            gamma_q_db: vec![27.0],
            ..ExperimentSpec::default()
        }
    }

    #[test]
    fn q2_optimized_equals_uniform() {
        let t = run_blep_vs_q(&ExperimentSpec {
            q_values: vec![2],
            ..small_spec()
        })
        .unwrap();
        assert_eq!(t.rows.len(), 2);
        assert_eq!(t.rows[0][4], t.rows[1][4]);
    }

    #[test]
    fn dump_rows_sum_to_one() {
        let t = run_distribution_dump(&small_spec()).unwrap();
        let p = t.column("probability").unwrap();
        let v = t.column("variant").unwrap();
        for q in [2usize, 3, 4] {
            for variant in ["optimized", "uniform"] {
                let probs: Vec<f64> = t
                    .rows
                    .iter()
                    .filter(|r| r[0] == q.to_string() && r[v] == variant)
                    .map(|r| r[p].parse().unwrap())
                    .collect();
                assert_eq!(probs.len(), q);
                assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                if variant == "uniform" {
                    assert!(probs.iter().all(|&x| (x - 1.0 / q as f64).abs() < 1e-11));
                }
            }
        }
    }

    #[test]
    fn runs_are_deterministic() {
        let s = small_spec();
        assert_eq!(run_blep_vs_q(&s).unwrap(), run_blep_vs_q(&s).unwrap());
    }

    #[test]
    fn constrained_endpoints() {
        let spec = ExperimentSpec {
            constrained_q: 5,
            ..ExperimentSpec::default()
        };
        let t = run_constrained_user(&spec).unwrap();
        // lowest cap: only level 1 allowed, both variants are unit mass there
        assert_eq!(t.rows[0][2], t.rows[1][2]);
        assert_eq!(t.rows.len(), 10);
    }

    #[test]
    fn validation_negative_control() {
        let spec = ExperimentSpec {
            q_values: vec![3],
            gamma_q_db: vec![20.0],
            ..ExperimentSpec::default()
        };
        let grid = spec.grid(3, 20.0).unwrap();
        let bundle = spec.bundle(&grid, 1).unwrap();
        let corrupted = ObjectiveBundle::from_tensors(
            grid.clone(),
            bundle.traffic().clone(),
            *bundle.block(),
            bundle.tensors().iter().map(|t| t.map(|v| 0.5 * v)).collect(),
        )
        .unwrap();
        let dist = LevelDistribution::uniform(3);
        let (pred, stats) = validate_point(&corrupted, &dist, 100_000, 3).unwrap();
        assert!((stats.blep.value - pred).abs() > stats.blep.half_width);
    }

    #[test]
    fn rejects_empty_sweep() {
        let spec = ExperimentSpec {
            q_values: vec![],
            ..ExperimentSpec::default()
        };
        assert!(run_blep_vs_q(&spec).is_err());
        let spec = ExperimentSpec {
            variants: vec![],
            ..ExperimentSpec::default()
        };
        assert!(run_blep_vs_q(&spec).is_err());
    }
}
