//! Bit and block error probabilities of a tagged user inside a collision.
//!
//! Closed forms cover BPSK with at most one interferer under same-phase gains.
//! Everything else goes through a seeded Monte Carlo run of the joint ML
//! detector in [`crate::detect`].
//!
//! Noise convention: real noise per dimension has variance `1/2`, so a user
//! with linear SNR `γ` is received with amplitude `√γ` and single-user BPSK
//! has BEP `½·erfc(√γ)`. QPSK symbols have unit energy and complex noise of
//! unit total variance.

use std::fmt;

use rand::RngCore;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::detect::JointDetector;
use crate::error::{invalid, Error, Result};
use crate::rng;
use crate::scenario::{BlockConfig, ErrorMetric, Modulation};

/// Smallest Monte Carlo budget accepted by [`ErrorModelSpec`].
pub const MIN_MC_TRIALS: u64 = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EvalMode {
    Analytic,
    MonteCarlo,
}

/// How a Monte Carlo BLEP is formed from detector runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum BlockModel {
    /// `1 - (1 - p̂_e)^L` from an estimated BEP.
    #[default]
    IndependentBits,
    /// Each trial transmits a whole block and counts block failures.
    DirectBlock,
}

impl fmt::Display for BlockModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BlockModel::IndependentBits => "independent-bits",
            BlockModel::DirectBlock => "direct-block",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ErrorModelSpec {
    pub modulation: Modulation,
    pub mode: EvalMode,
    pub mc_trials: u64,
    pub mc_seed: u64,
    pub block_model: BlockModel,
}

impl ErrorModelSpec {
    pub fn analytic_bpsk() -> Self {
        Self {
            modulation: Modulation::Bpsk,
            mode: EvalMode::Analytic,
            mc_trials: 0,
            mc_seed: 0,
            block_model: BlockModel::IndependentBits,
        }
    }

    pub fn monte_carlo(modulation: Modulation, mc_trials: u64, mc_seed: u64) -> Result<Self> {
        let spec = Self {
            modulation,
            mode: EvalMode::MonteCarlo,
            mc_trials,
            mc_seed,
            block_model: BlockModel::IndependentBits,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_block_model(mut self, model: BlockModel) -> Self {
        self.block_model = model;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.mc_seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        match self.mode {
            EvalMode::Analytic if self.modulation != Modulation::Bpsk => Err(
                Error::UnsupportedModel(format!("no closed form for {}", self.modulation)),
            ),
            EvalMode::MonteCarlo if self.mc_trials < MIN_MC_TRIALS => Err(invalid(format!(
                "mc_trials must be >= {MIN_MC_TRIALS}, got {}",
                self.mc_trials
            ))),
            _ => Ok(()),
        }
    }

    /// Whether closed forms exist for a collision of `users` packets.
    pub fn analytic_supported(modulation: Modulation, users: usize) -> bool {
        modulation == Modulation::Bpsk && (1..=2).contains(&users)
    }

    /// Short human-readable description used in cache headers.
    pub fn describe(&self) -> String {
        match self.mode {
            EvalMode::Analytic => format!("analytic-{}", self.modulation),
            EvalMode::MonteCarlo => format!(
                "mc-{}-trials{}-seed{}-{}",
                self.modulation, self.mc_trials, self.mc_seed, self.block_model
            ),
        }
    }
}

/// A probability together with its Monte Carlo provenance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BepEstimate {
    pub value: f64,
    /// Binomial standard error of `value`; zero for closed forms.
    pub std_error: f64,
    pub mode: EvalMode,
    /// Independent Bernoulli observations behind `value` (bits or blocks).
    pub observations: u64,
    pub trials: u64,
    pub seed: u64,
    pub block_model: Option<BlockModel>,
}

impl BepEstimate {
    fn exact(value: f64) -> Self {
        Self {
            value,
            std_error: 0.0,
            mode: EvalMode::Analytic,
            observations: 0,
            trials: 0,
            seed: 0,
            block_model: None,
        }
    }

    fn from_counts(errors: u64, observations: u64, trials: u64, seed: u64) -> Self {
        let p = errors as f64 / observations as f64;
        Self {
            value: p,
            std_error: (p * (1.0 - p) / observations as f64).sqrt(),
            mode: EvalMode::MonteCarlo,
            observations,
            trials,
            seed,
            block_model: None,
        }
    }

    /// Standard error of the estimator if the true probability were `reference`.
    pub fn null_std_error(&self, reference: f64) -> f64 {
        if self.observations == 0 {
            return 0.0;
        }
        (reference * (1.0 - reference) / self.observations as f64).sqrt()
    }

    /// `|value - reference|` in units of the estimator's standard error at `reference`.
    pub fn z_score(&self, reference: f64) -> f64 {
        let diff = (self.value - reference).abs();
        let se = self.null_std_error(reference);
        if diff == 0.0 {
            0.0
        } else if se == 0.0 {
            f64::INFINITY
        } else {
            diff / se
        }
    }
}

fn erfc(x: f64) -> f64 {
    libm::erfc(x)
}

/// `½·erfc(√γ)`.
pub fn single_user_bep(gamma: f64) -> Result<f64> {
    if !(gamma >= 0.0) {
        return Err(invalid(format!("SNR must be nonnegative, got {gamma}")));
    }
    Ok(0.5 * erfc(gamma.sqrt()))
}

/// BEP of user 0 under optimal joint detection with one interferer.
///
/// Dispatches on the exact comparison of the two SNRs:
/// stronger tagged user, weaker tagged user, or equal levels.
pub fn two_user_bep(gamma0: f64, gamma1: f64) -> Result<f64> {
    if !(gamma0 >= 0.0) || !(gamma1 >= 0.0) {
        return Err(invalid(format!(
            "SNRs must be nonnegative, got ({gamma0}, {gamma1})"
        )));
    }
    let a0 = gamma0.sqrt();
    let a1 = gamma1.sqrt();
    let p = if gamma0 > gamma1 {
        0.25 * (erfc(a0 + a1) + erfc(a0 - a1))
    } else if gamma0 < gamma1 {
        0.25
            * (2.0 * erfc(a0) + erfc(a1 - a0)
                - erfc(2.0 * a1 - a0)
                - erfc(a1 + a0)
                + erfc(2.0 * a1 + a0))
    } else {
        0.25 * (erfc(2.0 * a0) + 1.0)
    };
    Ok(p.clamp(0.0, 1.0))
}

/// `1 - (1 - p_e)^L`.
pub fn bep_to_blep(p_e: f64, block_bits: usize) -> Result<f64> {
    if !(0.0..=1.0).contains(&p_e) {
        return Err(invalid(format!("bit error probability {p_e} outside [0, 1]")));
    }
    if block_bits < 1 {
        return Err(invalid("block length must be >= 1"));
    }
    Ok((-(block_bits as f64 * (-p_e).ln_1p()).exp_m1()).clamp(0.0, 1.0))
}

pub(crate) fn draw_noise<R: RngCore>(rng: &mut R, sigma: f64, complex: bool) -> (f64, f64) {
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = if complex { StandardNormal.sample(rng) } else { 0.0 };
    (sigma * re, sigma * im)
}

fn check_snrs(snrs: &[f64]) -> Result<()> {
    if snrs.is_empty() {
        return Err(invalid("need at least the tagged user's SNR"));
    }
    if snrs.iter().any(|g| !(*g >= 0.0) || !g.is_finite()) {
        return Err(invalid("SNRs must be finite and nonnegative"));
    }
    Ok(())
}

/// Monte Carlo BEP of user 0 under exhaustive joint ML detection.
///
/// Each trial draws equiprobable symbols for every user, adds Gaussian noise
/// and decodes all users jointly. Deterministic in `spec.mc_seed`.
pub fn mc_joint_ml_bep(snrs: &[f64], spec: &ErrorModelSpec) -> Result<BepEstimate> {
    check_snrs(snrs)?;
    if spec.mc_trials == 0 {
        return Err(invalid("mc_trials must be positive"));
    }
    let det = JointDetector::from_snrs(snrs, spec.modulation)?;
    let complex = spec.modulation == Modulation::Qpsk;
    let mask = det.hypotheses() as u64 - 1;
    let sigma = std::f64::consts::FRAC_1_SQRT_2;
    let seed = spec.mc_seed;

    let chunks: Vec<(u64, u64)> = rng::chunks(spec.mc_trials).collect();
    let errors: u64 = chunks
        .par_iter()
        .map(|&(id, n)| {
            let mut r = rng::stream(seed, id);
            let mut errs = 0u64;
            for _ in 0..n {
                let sent = (r.next_u64() & mask) as usize;
                let (pr, pi) = det.point(sent);
                let (nr, ni) = draw_noise(&mut r, sigma, complex);
                let dec = det.detect(pr + nr, pi + ni);
                errs += det.bit_errors(sent, dec, 0) as u64;
            }
            errs
        })
        .sum();
    let bits = spec.mc_trials * spec.modulation.bits_per_symbol() as u64;
    Ok(BepEstimate::from_counts(errors, bits, spec.mc_trials, seed))
}

/// Monte Carlo BLEP of user 0 with every trial carrying a full block.
pub fn mc_direct_blep(
    snrs: &[f64],
    block: &BlockConfig,
    spec: &ErrorModelSpec,
) -> Result<BepEstimate> {
    check_snrs(snrs)?;
    if spec.mc_trials == 0 {
        return Err(invalid("mc_trials must be positive"));
    }
    let det = JointDetector::from_snrs(snrs, spec.modulation)?;
    let complex = spec.modulation == Modulation::Qpsk;
    let mask = det.hypotheses() as u64 - 1;
    let sigma = std::f64::consts::FRAC_1_SQRT_2;
    let seed = spec.mc_seed;
    let symbols = block.symbols_per_block();

    let chunks: Vec<(u64, u64)> = rng::chunks(spec.mc_trials).collect();
    let failures: u64 = chunks
        .par_iter()
        .map(|&(id, n)| {
            let mut r = rng::stream(seed, id);
            let mut fails = 0u64;
            for _ in 0..n {
                let mut failed = false;
                for _ in 0..symbols {
                    let sent = (r.next_u64() & mask) as usize;
                    let (pr, pi) = det.point(sent);
                    let (nr, ni) = draw_noise(&mut r, sigma, complex);
                    let dec = det.detect(pr + nr, pi + ni);
                    failed |= det.bit_errors(sent, dec, 0) > 0;
                }
                fails += failed as u64;
            }
            fails
        })
        .sum();
    let mut est = BepEstimate::from_counts(failures, spec.mc_trials, spec.mc_trials, seed);
    est.block_model = Some(BlockModel::DirectBlock);
    Ok(est)
}

/// Error probability of user 0 when `snrs.len()` users collide.
///
/// With [`ErrorMetric::Block`] this is the BLEP, with [`ErrorMetric::Bit`] the BEP.
pub fn collision_blep(
    snrs: &[f64],
    block: &BlockConfig,
    spec: &ErrorModelSpec,
) -> Result<BepEstimate> {
    check_snrs(snrs)?;
    spec.validate()?;
    if spec.modulation != block.modulation {
        return Err(invalid(format!(
            "error model is {} but block uses {}",
            spec.modulation, block.modulation
        )));
    }
    match spec.mode {
        EvalMode::Analytic => {
            if !ErrorModelSpec::analytic_supported(spec.modulation, snrs.len()) {
                return Err(Error::UnsupportedModel(format!(
                    "closed form unavailable for {} with {} colliding users",
                    spec.modulation,
                    snrs.len()
                )));
            }
            let p = match snrs {
                [g] => single_user_bep(*g)?,
                [g0, g1] => two_user_bep(*g0, *g1)?,
                _ => unreachable!(),
            };
            let v = match block.metric {
                ErrorMetric::Block => bep_to_blep(p, block.bits_per_block)?,
                ErrorMetric::Bit => p,
            };
            Ok(BepEstimate::exact(v))
        }
        EvalMode::MonteCarlo => match (block.metric, spec.block_model) {
            (ErrorMetric::Bit, _) => mc_joint_ml_bep(snrs, spec),
            (ErrorMetric::Block, BlockModel::DirectBlock) => mc_direct_blep(snrs, block, spec),
            (ErrorMetric::Block, BlockModel::IndependentBits) => {
                let bep = mc_joint_ml_bep(snrs, spec)?;
                let l = block.bits_per_block;
                let v = bep_to_blep(bep.value, l)?;
                // delta method through 1 - (1-p)^L
                let slope = l as f64 * (1.0 - bep.value).powi(l as i32 - 1);
                Ok(BepEstimate {
                    value: v,
                    std_error: slope * bep.std_error,
                    block_model: Some(BlockModel::IndependentBits),
                    ..bep
                })
            }
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn db(x: f64) -> f64 {
        10f64.powf(x / 10.0)
    }

    // erfc values below were computed with mpmath at 30 digits.
    #[test]
    fn single_user_values() {
        assert_eq!(single_user_bep(0.0).unwrap(), 0.5);
        assert_eq!(single_user_bep(1e6).unwrap(), 0.0);
        assert_relative_eq!(
            single_user_bep(10.0).unwrap(),
            3.8721082155220418e-6,
            max_relative = 1e-13
        );
        assert_relative_eq!(
            single_user_bep(1.0).unwrap(),
            0.078649603525142565,
            max_relative = 1e-14
        );
        assert!(single_user_bep(-1.0).is_err());
    }

    #[test]
    fn single_user_strictly_decreasing() {
        let mut prev = single_user_bep(0.0).unwrap();
        for i in 1..200 {
            let p = single_user_bep(i as f64 * 0.1).unwrap();
            assert!(p < prev);
            prev = p;
        }
    }

    #[test]
    fn two_user_limits() {
        assert_relative_eq!(two_user_bep(1e4, 1e4).unwrap(), 0.25, epsilon = 1e-15);
        for &g in &[0.0, 0.3, 2.0, 30.0] {
            assert_eq!(two_user_bep(g, 0.0).unwrap(), single_user_bep(g).unwrap());
        }
        assert!(two_user_bep(-1.0, 1.0).is_err());
        assert!(two_user_bep(1.0, -1.0).is_err());
    }

    #[test]
    fn two_user_reference_values() {
        // mpmath evaluation of the three closed forms
        assert_relative_eq!(two_user_bep(10.0, 4.0).unwrap(), 0.025059090274161607, max_relative = 1e-12);
        assert_relative_eq!(two_user_bep(4.0, 10.0).unwrap(), 0.027397957524425015, max_relative = 1e-12);
        assert_relative_eq!(two_user_bep(3.0, 3.0).unwrap(), 0.25000024083925216, max_relative = 1e-12);
    }

    #[test]
    fn case_boundary_continuity() {
        for &g in &[0.5, 3.0, db(15.0), db(25.0), db(33.0)] {
            let a = g.sqrt();
            let case3 = two_user_bep(g, g).unwrap();
            // stronger-tagged side meets the equal-level value exactly
            let case1_at_equal = 0.25 * (libm::erfc(2.0 * a) + libm::erfc(0.0));
            assert!((case1_at_equal - case3).abs() <= 1e-12);
            let above = two_user_bep(g * (1.0 + 1e-14), g).unwrap();
            assert!((above - case3).abs() <= 1e-10, "{above} vs {case3}");
            // weaker-tagged side jumps by ¼[erfc(a) - 2erfc(2a) + erfc(3a)]
            let jump = 0.25 * (libm::erfc(a) - 2.0 * libm::erfc(2.0 * a) + libm::erfc(3.0 * a));
            let below = two_user_bep(g * (1.0 - 1e-14), g).unwrap();
            assert!((below - case3 - jump).abs() <= 1e-10, "{below} vs {case3} + {jump}");
            if g >= db(15.0) {
                assert!((below - case3).abs() <= 1e-12);
            }
        }
        // jump at 0.5 frozen from a 30-digit evaluation
        let a = 0.5f64.sqrt();
        let jump = 0.25 * (libm::erfc(a) - 2.0 * libm::erfc(2.0 * a) + libm::erfc(3.0 * a));
        assert_relative_eq!(jump, 0.0572524440333643657704, max_relative = 1e-13);
    }

    #[test]
    fn two_user_nonincreasing_when_tagged_is_stronger() {
        let g1 = 8.0;
        let above: Vec<f64> = (81..300).map(|i| i as f64 * 0.1).collect();
        for w in above.windows(2) {
            let p0 = two_user_bep(w[0], g1).unwrap();
            let p1 = two_user_bep(w[1], g1).unwrap();
            assert!(p1 <= p0 + 1e-15, "{} -> {}: {p0} -> {p1}", w[0], w[1]);
        }
        // a weaker tagged user gets worse as it approaches the interferer
        assert!(two_user_bep(7.9, g1).unwrap() > two_user_bep(6.0, g1).unwrap());
    }

    #[test]
    fn blep_examples() {
        assert_eq!(bep_to_blep(0.0, 100).unwrap(), 0.0);
        assert_eq!(bep_to_blep(1.0, 100).unwrap(), 1.0);
        assert_relative_eq!(bep_to_blep(1e-3, 100).unwrap(), 0.095207852886290958, max_relative = 1e-13);
        assert_relative_eq!(bep_to_blep(0.37, 1).unwrap(), 0.37, max_relative = 1e-15);
        assert!(bep_to_blep(1.5, 10).is_err());
        assert!(bep_to_blep(-0.1, 10).is_err());
    }

    #[test]
    fn collision_blep_analytic() {
        let block = BlockConfig::new(100, Modulation::Bpsk).unwrap();
        let spec = ErrorModelSpec::analytic_bpsk();
        // γ with ½·erfc(√γ) = 1e-3 (mpmath root)
        let g = 4.7747678530416216;
        let v = collision_blep(&[g], &block, &spec).unwrap();
        assert_relative_eq!(v.value, 0.095207852886290958, max_relative = 1e-9);
        let v = collision_blep(&[1e4, 1e4], &block, &spec).unwrap();
        assert_relative_eq!(v.value, 1.0 - 0.75f64.powi(100), max_relative = 1e-12);
        assert!(matches!(
            collision_blep(&[1.0, 2.0, 3.0], &block, &spec),
            Err(Error::UnsupportedModel(_))
        ));
        let qpsk = BlockConfig::new(100, Modulation::Qpsk).unwrap();
        let bad = ErrorModelSpec { modulation: Modulation::Qpsk, ..spec };
        assert!(matches!(collision_blep(&[1.0], &qpsk, &bad), Err(Error::UnsupportedModel(_))));
    }

    #[test]
    fn bit_metric_skips_block_mapping() {
        let block = BlockConfig::new(100, Modulation::Bpsk).unwrap().with_metric(ErrorMetric::Bit);
        let v = collision_blep(&[10.0, 4.0], &block, &ErrorModelSpec::analytic_bpsk()).unwrap();
        assert_eq!(v.value, two_user_bep(10.0, 4.0).unwrap());
    }

    #[test]
    fn mc_single_user_matches_closed_form() {
        let spec = ErrorModelSpec::monte_carlo(Modulation::Bpsk, 400_000, 11).unwrap();
        for &g in &[0.5, 2.0, 4.0] {
            let est = mc_joint_ml_bep(&[g], &spec).unwrap();
            let p = single_user_bep(g).unwrap();
            assert!(est.z_score(p) < 3.0, "γ={g}: {} vs {p}", est.value);
        }
    }

    #[test]
    fn mc_qpsk_single_user() {
        // Gray QPSK: BEP = ½·erfc(√(γ/2))
        let spec = ErrorModelSpec::monte_carlo(Modulation::Qpsk, 400_000, 5).unwrap();
        let g = 4.0;
        let est = mc_joint_ml_bep(&[g], &spec).unwrap();
        let p = 0.5 * libm::erfc((g / 2.0).sqrt());
        assert!(est.z_score(p) < 3.0, "{} vs {p}", est.value);
    }

    #[test]
    fn mc_is_reproducible() {
        let spec = ErrorModelSpec::monte_carlo(Modulation::Bpsk, 50_000, 99).unwrap();
        let a = mc_joint_ml_bep(&[2.0, 3.0], &spec).unwrap();
        let b = mc_joint_ml_bep(&[2.0, 3.0], &spec).unwrap();
        assert_eq!(a, b);
        let c = mc_joint_ml_bep(&[2.0, 3.0], &spec.with_seed(100)).unwrap();
        assert_ne!(a.value, c.value);
    }

    #[test]
    fn mc_rejects_bad_input() {
        let spec = ErrorModelSpec::monte_carlo(Modulation::Bpsk, 10_000, 1).unwrap();
        assert!(mc_joint_ml_bep(&[], &spec).is_err());
        assert!(ErrorModelSpec::monte_carlo(Modulation::Bpsk, 100, 1).is_err());
    }

    /// High-SNR error floor for equal-level users: every transmitted joint
    /// hypothesis decodes to the lowest-index hypothesis with the same
    /// superposed point.
    fn enumerated_floor(users: usize) -> f64 {
        let det = JointDetector::new(&vec![1.0; users], Modulation::Bpsk).unwrap();
        let n = det.hypotheses();
        let mut errors = 0;
        for sent in 0..n {
            let p = det.point(sent);
            let decoded = (0..n).find(|&h| det.point(h) == p).unwrap();
            errors += det.bit_errors(sent, decoded, 0);
        }
        errors as f64 / n as f64
    }

    #[test]
    fn three_equal_users_floor() {
        let floor = enumerated_floor(3);
        assert_eq!(floor, 0.375);
        assert_eq!(enumerated_floor(2), 0.25);
        let spec = ErrorModelSpec::monte_carlo(Modulation::Bpsk, 200_000, 3).unwrap();
        let g = db(40.0);
        let est = mc_joint_ml_bep(&[g, g, g], &spec).unwrap();
        assert!(est.value > 0.0);
        assert!(est.z_score(floor) < 3.0, "{} vs {floor}", est.value);
    }

    #[test]
    fn direct_block_agrees_with_independent_bits() {
        let block = BlockConfig::new(100, Modulation::Bpsk).unwrap();
        let g = db(25.0);
        let snrs = [g, g, g];
        let spec = ErrorModelSpec::monte_carlo(Modulation::Bpsk, 20_000, 17).unwrap();
        let indep = collision_blep(&snrs, &block, &spec).unwrap();
        let direct =
            collision_blep(&snrs, &block, &spec.with_block_model(BlockModel::DirectBlock)).unwrap();
        assert_eq!(direct.block_model, Some(BlockModel::DirectBlock));
        assert_eq!(indep.block_model, Some(BlockModel::IndependentBits));
        let se = (indep.std_error.powi(2) + direct.std_error.powi(2)).sqrt();
        assert!((indep.value - direct.value).abs() <= 3.0 * se.max(1e-12));

        // distinct levels, where block failures are not certain
        let snrs = [db(15.0), db(12.0)];
        let indep = collision_blep(&snrs, &block, &spec).unwrap();
        let direct =
            collision_blep(&snrs, &block, &spec.with_block_model(BlockModel::DirectBlock)).unwrap();
        let se = (indep.std_error.powi(2) + direct.std_error.powi(2)).sqrt();
        assert!((indep.value - direct.value).abs() <= 3.0 * se, "{} vs {}", indep.value, direct.value);
    }
}
