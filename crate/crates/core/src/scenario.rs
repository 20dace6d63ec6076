//! SNR grids, traffic models, block settings and level distributions.
//!
//! Levels are indexed in increasing SNR order: level 0 is the weakest.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::error::{invalid, Error, Result};

/// Tolerance on `Σ P_q = 1`.
pub const SIMPLEX_TOL: f64 = 1e-9;
/// Entries at or above `-NEG_CLAMP_TOL` are clamped to zero; anything lower is rejected.
pub const NEG_CLAMP_TOL: f64 = 1e-12;

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn linear_to_db(x: f64) -> f64 {
    10.0 * x.log10()
}

/// The `Q` received-SNR levels together with the target mean SNR.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerLevelGrid {
    snr_linear: Vec<f64>,
    snr_db: Vec<f64>,
    target_mean_snr: f64,
}

impl PowerLevelGrid {
    /// Levels `gamma1_db + q * delta_db`, target = arithmetic mean of the linear SNRs.
    pub fn from_db_spacing(gamma1_db: f64, delta_db: f64, q_count: usize) -> Result<Self> {
        if q_count < 2 {
            return Err(invalid(format!("q_count must be >= 2, got {q_count}")));
        }
        if !(delta_db > 0.0) || !delta_db.is_finite() {
            return Err(invalid(format!("delta_db must be positive, got {delta_db}")));
        }
        if !gamma1_db.is_finite() {
            return Err(invalid("gamma1_db must be finite"));
        }
        let snr_db: Vec<f64> = (0..q_count)
            .map(|q| gamma1_db + q as f64 * delta_db)
            .collect();
        let snr_linear: Vec<f64> = snr_db.iter().map(|&d| db_to_linear(d)).collect();
        let target_mean_snr = snr_linear.iter().sum::<f64>() / q_count as f64;
        Ok(Self {
            snr_linear,
            snr_db,
            target_mean_snr,
        })
    }

    /// Evenly spaced dB grid running from `gamma1_db` to `gamma_q_db` inclusive.
    pub fn from_endpoints(gamma1_db: f64, gamma_q_db: f64, q_count: usize) -> Result<Self> {
        if q_count < 2 {
            return Err(invalid(format!("q_count must be >= 2, got {q_count}")));
        }
        let delta = (gamma_q_db - gamma1_db) / (q_count - 1) as f64;
        let mut grid = Self::from_db_spacing(gamma1_db, delta, q_count)?;
        // pin the top level to the requested endpoint exactly
        let last = q_count - 1;
        grid.snr_db[last] = gamma_q_db;
        grid.snr_linear[last] = db_to_linear(gamma_q_db);
        grid.target_mean_snr = grid.snr_linear.iter().sum::<f64>() / q_count as f64;
        Ok(grid)
    }

    /// Arbitrary strictly increasing linear levels. `target` defaults to their mean.
    pub fn from_linear(levels: Vec<f64>, target: Option<f64>) -> Result<Self> {
        if levels.is_empty() {
            return Err(invalid("grid needs at least one level"));
        }
        if levels.iter().any(|&g| !(g > 0.0) || !g.is_finite()) {
            return Err(invalid("all SNR levels must be positive and finite"));
        }
        if levels.windows(2).any(|w| w[1] <= w[0]) {
            return Err(invalid("SNR levels must be strictly increasing"));
        }
        let mean = levels.iter().sum::<f64>() / levels.len() as f64;
        let snr_db = levels.iter().map(|&g| linear_to_db(g)).collect();
        let grid = Self {
            snr_linear: levels,
            snr_db,
            target_mean_snr: mean,
        };
        match target {
            Some(t) => grid.with_target_mean_snr(t),
            None => Ok(grid),
        }
    }

    /// Replaces the target mean SNR; it must lie inside the level range.
    pub fn with_target_mean_snr(mut self, target: f64) -> Result<Self> {
        if !(target >= self.gamma_min() && target <= self.gamma_max()) {
            return Err(Error::Infeasible(format!(
                "target mean SNR {target} outside level range [{}, {}]",
                self.gamma_min(),
                self.gamma_max()
            )));
        }
        self.target_mean_snr = target;
        Ok(self)
    }

    pub fn q_count(&self) -> usize {
        self.snr_linear.len()
    }

    pub fn snr_linear(&self) -> &[f64] {
        &self.snr_linear
    }

    pub fn snr_db(&self) -> &[f64] {
        &self.snr_db
    }

    pub fn target_mean_snr(&self) -> f64 {
        self.target_mean_snr
    }

    pub fn gamma_min(&self) -> f64 {
        self.snr_linear[0]
    }

    pub fn gamma_max(&self) -> f64 {
        self.snr_linear[self.snr_linear.len() - 1]
    }

    /// Stable hex digest of the level values and target, used as a cache key.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for g in &self.snr_linear {
            h.update(g.to_bits().to_le_bytes());
        }
        h.update(self.target_mean_snr.to_bits().to_le_bytes());
        hex::encode(&h.finalize()[..8])
    }
}

/// Levels `gamma1_db, gamma1_db + delta_db, ...` with the mean-SNR target.
pub fn build_snr_grid(gamma1_db: f64, delta_db: f64, q_count: usize) -> Result<PowerLevelGrid> {
    PowerLevelGrid::from_db_spacing(gamma1_db, delta_db, q_count)
}

/// Poisson law of the number of extra active users, truncated at the detector capability.
#[derive(Debug, Clone, PartialEq)]
pub struct TrafficModel {
    lambda: f64,
    weights: Vec<f64>,
}

impl TrafficModel {
    pub fn new(lambda: f64, k_max: usize) -> Result<Self> {
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(invalid(format!("lambda must be >= 0, got {lambda}")));
        }
        let mut weights = Vec::with_capacity(k_max + 1);
        let mut w = (-lambda).exp();
        for k in 0..=k_max {
            if k > 0 {
                w *= lambda / k as f64;
            }
            weights.push(w);
        }
        Ok(Self { lambda, weights })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Detector capability `K`: the largest number of extra colliding packets handled.
    pub fn k_max(&self) -> usize {
        self.weights.len() - 1
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weight(&self, k: usize) -> f64 {
        self.weights.get(k).copied().unwrap_or(0.0)
    }

    /// `Σ_{k>K} p_λ(k)`: probability that the collision exceeds the detector.
    pub fn tail_mass(&self) -> f64 {
        if self.lambda == 0.0 {
            return 0.0;
        }
        // Sum the tail directly; 1 - Σ_{k<=K} cancels badly for small λ.
        let mut k = self.weights.len();
        let mut w = *self.weights.last().unwrap() * self.lambda / k as f64;
        let mut total = 0.0;
        while w > 0.0 && (w > total * 1e-18 || (k as f64) < self.lambda) {
            total += w;
            k += 1;
            w *= self.lambda / k as f64;
            if k > 10_000 {
                break;
            }
        }
        total
    }
}

/// `p_λ(k) = e^{-λ} λ^k / k!` for `k = 0..=k_max`, not renormalized.
pub fn poisson_weights(lambda: f64, k_max: usize) -> Result<TrafficModel> {
    TrafficModel::new(lambda, k_max)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Modulation {
    Bpsk,
    Qpsk,
}

impl Modulation {
    pub fn order(self) -> usize {
        match self {
            Modulation::Bpsk => 2,
            Modulation::Qpsk => 4,
        }
    }

    pub fn bits_per_symbol(self) -> u32 {
        match self {
            Modulation::Bpsk => 1,
            Modulation::Qpsk => 2,
        }
    }

    /// Unit-energy constellation point for symbol index `d` (Gray labelled).
    pub fn symbol(self, d: usize) -> (f64, f64) {
        match self {
            Modulation::Bpsk => (1.0 - 2.0 * (d & 1) as f64, 0.0),
            Modulation::Qpsk => {
                let s = std::f64::consts::FRAC_1_SQRT_2;
                (
                    s * (1.0 - 2.0 * (d & 1) as f64),
                    s * (1.0 - 2.0 * ((d >> 1) & 1) as f64),
                )
            }
        }
    }
}

impl fmt::Display for Modulation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Modulation::Bpsk => "bpsk",
            Modulation::Qpsk => "qpsk",
        })
    }
}

impl FromStr for Modulation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bpsk" => Ok(Modulation::Bpsk),
            "qpsk" => Ok(Modulation::Qpsk),
            other => Err(invalid(format!("unknown modulation '{other}'"))),
        }
    }
}

/// Which error probability the objective is built from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum ErrorMetric {
    /// Block error probability `1 - (1 - p_e)^L`.
    #[default]
    Block,
    /// Raw bit error probability.
    Bit,
}

impl fmt::Display for ErrorMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ErrorMetric::Block => "blep",
            ErrorMetric::Bit => "bep",
        })
    }
}

impl FromStr for ErrorMetric {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "blep" | "block" => Ok(ErrorMetric::Block),
            "bep" | "bit" => Ok(ErrorMetric::Bit),
            other => Err(invalid(format!("unknown metric '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BlockConfig {
    pub bits_per_block: usize,
    pub modulation: Modulation,
    pub metric: ErrorMetric,
}

impl BlockConfig {
    pub fn new(bits_per_block: usize, modulation: Modulation) -> Result<Self> {
        if bits_per_block < 1 {
            return Err(invalid("bits_per_block must be >= 1"));
        }
        Ok(Self {
            bits_per_block,
            modulation,
            metric: ErrorMetric::Block,
        })
    }

    pub fn with_metric(mut self, metric: ErrorMetric) -> Self {
        self.metric = metric;
        self
    }

    /// Symbols needed to carry one block.
    pub fn symbols_per_block(&self) -> usize {
        self.bits_per_block
            .div_ceil(self.modulation.bits_per_symbol() as usize)
    }
}

/// Probability vector over the levels of a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelDistribution {
    probs: Vec<f64>,
    mean_constrained: bool,
}

impl LevelDistribution {
    /// Validates nonnegativity and normalization; tiny negatives are clamped.
    pub fn new(mut probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(invalid("distribution must have at least one entry"));
        }
        for p in probs.iter_mut() {
            if !p.is_finite() || *p < -NEG_CLAMP_TOL {
                return Err(invalid(format!("probability entry {p} is negative or not finite")));
            }
            if *p < 0.0 {
                *p = 0.0;
            }
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(invalid(format!("probabilities sum to {sum}, expected 1")));
        }
        Ok(Self {
            probs,
            mean_constrained: false,
        })
    }

    pub fn uniform(q_count: usize) -> Self {
        assert!(q_count >= 1, "uniform distribution needs q_count >= 1");
        Self {
            probs: vec![1.0 / q_count as f64; q_count],
            mean_constrained: false,
        }
    }

    pub fn unit_mass(q_count: usize, level: usize) -> Result<Self> {
        if level >= q_count {
            return Err(invalid(format!("level {level} out of range for Q = {q_count}")));
        }
        let mut probs = vec![0.0; q_count];
        probs[level] = 1.0;
        Ok(Self {
            probs,
            mean_constrained: false,
        })
    }

    /// Tags the distribution as satisfying the mean-SNR constraint of `grid`.
    pub fn mean_constrained(mut self, grid: &PowerLevelGrid) -> Result<Self> {
        let r = self.mean_residual(grid);
        if r > SIMPLEX_TOL * grid.target_mean_snr() {
            return Err(invalid(format!("mean SNR residual {r} exceeds tolerance")));
        }
        self.mean_constrained = true;
        Ok(self)
    }

    pub fn is_mean_constrained(&self) -> bool {
        self.mean_constrained
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn q_count(&self) -> usize {
        self.probs.len()
    }

    pub fn mean_snr(&self, grid: &PowerLevelGrid) -> f64 {
        self.probs
            .iter()
            .zip(grid.snr_linear())
            .map(|(p, g)| p * g)
            .sum()
    }

    /// `|P·γ - γ̄|`.
    pub fn mean_residual(&self, grid: &PowerLevelGrid) -> f64 {
        (self.mean_snr(grid) - grid.target_mean_snr()).abs()
    }

    /// Largest absolute coordinate difference to `other`.
    pub fn linf_distance(&self, other: &Self) -> f64 {
        self.probs
            .iter()
            .zip(&other.probs)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// `P_q = 1/Q`.
pub fn uniform_distribution(q_count: usize) -> LevelDistribution {
    LevelDistribution::uniform(q_count)
}

/// Flat `key = value` scenario description. `#` starts a comment.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScenarioConfig {
    pub gamma1_db: Option<f64>,
    pub delta_db: Option<f64>,
    pub gamma_q_db: Option<f64>,
    pub q_count: Option<usize>,
    pub lambda: Option<f64>,
    pub k_max: Option<usize>,
    pub block_bits: Option<usize>,
    pub modulation: Option<Modulation>,
    pub seed: Option<u64>,
    pub slots: Option<u64>,
    pub mc_trials: Option<u64>,
    pub metric: Option<ErrorMetric>,
}

const KNOWN_KEYS: &[&str] = &[
    "gamma1_db",
    "delta_db",
    "gammaQ_db",
    "q_count",
    "lambda",
    "k_max",
    "block_bits",
    "modulation",
    "seed",
    "slots",
    "mc_trials",
    "metric",
];

fn parse_value<T: FromStr>(line: usize, key: &str, raw: &str) -> Result<T> {
    raw.parse::<T>().map_err(|_| Error::Parse {
        line,
        message: format!("bad value '{raw}' for key '{key}'"),
    })
}

impl ScenarioConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut seen = BTreeMap::new();
        for (idx, raw_line) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw_line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .or_else(|| line.split_once(':'))
                .ok_or_else(|| Error::Parse {
                    line: line_no,
                    message: format!("expected 'key = value', got '{line}'"),
                })?;
            let key = key.trim();
            let value = value.trim();
            if !KNOWN_KEYS.contains(&key) {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("unknown key '{key}'"),
                });
            }
            if seen.insert(key.to_string(), (line_no, value.to_string())).is_some() {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("duplicate key '{key}'"),
                });
            }
        }

        let mut cfg = ScenarioConfig::default();
        for (key, (line, value)) in &seen {
            let (line, v) = (*line, value.as_str());
            match key.as_str() {
                "gamma1_db" => cfg.gamma1_db = Some(parse_value(line, key, v)?),
                "delta_db" => cfg.delta_db = Some(parse_value(line, key, v)?),
                "gammaQ_db" => cfg.gamma_q_db = Some(parse_value(line, key, v)?),
                "q_count" => cfg.q_count = Some(parse_value(line, key, v)?),
                "lambda" => cfg.lambda = Some(parse_value(line, key, v)?),
                "k_max" => cfg.k_max = Some(parse_value(line, key, v)?),
                "block_bits" => cfg.block_bits = Some(parse_value(line, key, v)?),
                "modulation" => {
                    cfg.modulation = Some(v.parse().map_err(|_| Error::Parse {
                        line,
                        message: format!("unknown modulation '{v}'"),
                    })?)
                }
                "seed" => cfg.seed = Some(parse_value(line, key, v)?),
                "slots" => cfg.slots = Some(parse_value(line, key, v)?),
                "mc_trials" => cfg.mc_trials = Some(parse_value(line, key, v)?),
                "metric" => {
                    cfg.metric = Some(v.parse().map_err(|_| Error::Parse {
                        line,
                        message: format!("unknown metric '{v}'"),
                    })?)
                }
                _ => unreachable!(),
            }
        }
        cfg.check_spacing()?;
        Ok(cfg)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    fn check_spacing(&self) -> Result<()> {
        if let (Some(g1), Some(delta), Some(gq), Some(q)) =
            (self.gamma1_db, self.delta_db, self.gamma_q_db, self.q_count)
        {
            if q >= 2 {
                let implied = (gq - g1) / (q - 1) as f64;
                if (implied - delta).abs() > 1e-9 * delta.abs().max(1.0) {
                    return Err(invalid(format!(
                        "delta_db = {delta} inconsistent with gammaQ_db = {gq} (implies {implied})"
                    )));
                }
            }
        }
        Ok(())
    }

    /// The grid described by this config; needs `gamma1_db`, `q_count` and
    /// one of `delta_db` / `gammaQ_db`.
    pub fn grid(&self) -> Result<PowerLevelGrid> {
        self.check_spacing()?;
        let g1 = self.gamma1_db.ok_or_else(|| invalid("missing gamma1_db"))?;
        let q = self.q_count.ok_or_else(|| invalid("missing q_count"))?;
        match (self.delta_db, self.gamma_q_db) {
            (_, Some(gq)) => PowerLevelGrid::from_endpoints(g1, gq, q),
            (Some(d), None) => PowerLevelGrid::from_db_spacing(g1, d, q),
            (None, None) => Err(invalid("need delta_db or gammaQ_db")),
        }
    }

    pub fn traffic(&self) -> Result<TrafficModel> {
        TrafficModel::new(
            self.lambda.ok_or_else(|| invalid("missing lambda"))?,
            self.k_max.ok_or_else(|| invalid("missing k_max"))?,
        )
    }

    pub fn block(&self) -> Result<BlockConfig> {
        Ok(BlockConfig::new(
            self.block_bits.ok_or_else(|| invalid("missing block_bits"))?,
            self.modulation.unwrap_or(Modulation::Bpsk),
        )?
        .with_metric(self.metric.unwrap_or_default()))
    }
}
