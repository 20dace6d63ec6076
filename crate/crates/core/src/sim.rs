//! Slot-level simulation of the random-access channel.
//!
//! Every slot has a tagged user (user 0) plus `k ~ Poisson(λ)` others. Each
//! user draws a level from the distribution, channel inversion makes its
//! received SNR exactly that level, and the base station runs genie-aided
//! joint ML detection over `L` bits when `k <= K`. Larger collisions fail
//! for every user without being simulated; the tagged user is then charged
//! a full block of bit errors.

use std::fmt;

use rand::{Rng, RngCore};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;

use crate::detect::JointDetector;
use crate::error::{invalid, Result};
use crate::error_models::draw_noise;
use crate::rng;
use crate::scenario::{BlockConfig, LevelDistribution, Modulation, PowerLevelGrid, TrafficModel};

/// Two-sided normal quantile for 95% intervals.
pub const Z95: f64 = 1.959963984540054;

#[derive(Debug, Clone, PartialEq)]
pub struct SlotOutcome {
    pub num_active: usize,
    pub chosen_levels: Vec<usize>,
    pub success: Vec<bool>,
    pub tagged_bit_errors: u64,
}

/// An empirical mean with a 95% interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ratio {
    pub value: f64,
    pub half_width: f64,
}

impl Ratio {
    fn from_moments(sum: f64, sum_sq: f64, n: u64) -> Self {
        let n = n as f64;
        let mean = sum / n;
        let var = if n > 1.0 {
            ((sum_sq - n * mean * mean) / (n - 1.0)).max(0.0)
        } else {
            0.0
        };
        Self {
            value: mean,
            half_width: Z95 * (var / n).sqrt(),
        }
    }

    pub fn lower(&self) -> f64 {
        self.value - self.half_width
    }

    pub fn upper(&self) -> f64 {
        self.value + self.half_width
    }

    pub fn contains(&self, x: f64) -> bool {
        (x - self.value).abs() <= self.half_width
    }
}

impl fmt::Display for Ratio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.6e} ± {:.2e}", self.value, self.half_width)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimStats {
    pub slots: u64,
    pub block_failures: u64,
    pub bit_errors: u64,
    pub bits: u64,
    pub blep: Ratio,
    pub bep: Ratio,
    /// Decoded packets per slot.
    pub throughput: Ratio,
}

impl SimStats {
    /// Clopper-Pearson interval for the tagged-user BLEP.
    pub fn blep_exact_interval(&self, confidence: f64) -> (f64, f64) {
        clopper_pearson(self.block_failures, self.slots, confidence)
    }
}

impl fmt::Display for SimStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} slots: blep {}, bep {}, throughput {}",
            self.slots, self.blep, self.bep, self.throughput
        )
    }
}

/// Exact binomial interval for `k` successes out of `n`.
pub fn clopper_pearson(k: u64, n: u64, confidence: f64) -> (f64, f64) {
    use statrs::distribution::{Beta as SBeta, ContinuousCDF};
    let alpha = 1.0 - confidence;
    let (kf, nf) = (k as f64, n as f64);
    let lo = if k == 0 {
        0.0
    } else {
        SBeta::new(kf, nf - kf + 1.0).unwrap().inverse_cdf(alpha / 2.0)
    };
    let hi = if k == n {
        1.0
    } else {
        SBeta::new(kf + 1.0, nf - kf).unwrap().inverse_cdf(1.0 - alpha / 2.0)
    };
    (lo, hi)
}

struct Sampler {
    cdf: Vec<f64>,
    poisson: Option<Poisson<f64>>,
}

impl Sampler {
    fn level(&self, r: &mut ChaCha8Rng) -> usize {
        let u: f64 = r.random();
        self.cdf
            .iter()
            .position(|&c| u < c)
            .unwrap_or(self.cdf.len() - 1)
    }

    fn extra_users(&self, r: &mut ChaCha8Rng) -> usize {
        match &self.poisson {
            Some(p) => p.sample(r) as usize,
            None => 0,
        }
    }
}

fn one_slot(
    r: &mut ChaCha8Rng,
    sampler: &Sampler,
    snrs: &[f64],
    k_max: usize,
    block: &BlockConfig,
) -> SlotOutcome {
    let users = 1 + sampler.extra_users(r);
    let chosen: Vec<usize> = (0..users).map(|_| sampler.level(r)).collect();
    if users > k_max + 1 {
        return SlotOutcome {
            num_active: users,
            chosen_levels: chosen,
            success: vec![false; users],
            tagged_bit_errors: block.bits_per_block as u64,
        };
    }
    let levels: Vec<f64> = chosen.iter().map(|&i| snrs[i]).collect();
    let det = JointDetector::from_snrs(&levels, block.modulation).expect("validated SNRs");
    let complex = block.modulation == Modulation::Qpsk;
    let mask = det.hypotheses() as u64 - 1;
    let sigma = std::f64::consts::FRAC_1_SQRT_2;
    let mut ok = vec![true; users];
    let mut tagged = 0u64;
    for _ in 0..block.symbols_per_block() {
        let sent = (r.next_u64() & mask) as usize;
        let (pr, pi) = det.point(sent);
        let (nr, ni) = draw_noise(r, sigma, complex);
        let dec = det.detect(pr + nr, pi + ni);
        if dec != sent {
            for (u, flag) in ok.iter_mut().enumerate() {
                let e = det.bit_errors(sent, dec, u);
                if e > 0 {
                    *flag = false;
                    if u == 0 {
                        tagged += e as u64;
                    }
                }
            }
        }
    }
    SlotOutcome {
        num_active: users,
        chosen_levels: chosen,
        success: ok,
        tagged_bit_errors: tagged,
    }
}

#[derive(Default, Clone, Copy)]
struct Acc {
    slots: u64,
    failures: u64,
    bit_errors: u64,
    bep_sq: f64,
    decoded: u64,
    decoded_sq: u64,
}

impl Acc {
    fn merge(self, o: Self) -> Self {
        Self {
            slots: self.slots + o.slots,
            failures: self.failures + o.failures,
            bit_errors: self.bit_errors + o.bit_errors,
            bep_sq: self.bep_sq + o.bep_sq,
            decoded: self.decoded + o.decoded,
            decoded_sq: self.decoded_sq + o.decoded_sq,
        }
    }
}

/// Simulates `slots` slots; deterministic in `seed`.
pub fn simulate(
    grid: &PowerLevelGrid,
    dist: &LevelDistribution,
    traffic: &TrafficModel,
    block: &BlockConfig,
    slots: u64,
    seed: u64,
) -> Result<SimStats> {
    if slots == 0 {
        return Err(invalid("need at least one slot"));
    }
    if dist.q_count() != grid.q_count() {
        return Err(invalid("distribution length does not match the grid"));
    }
    let mut cdf: Vec<f64> = dist
        .probs()
        .iter()
        .scan(0.0, |acc, p| {
            *acc += p;
            Some(*acc)
        })
        .collect();
    // levels with zero mass at the top must never be drawn
    let last = dist.probs().iter().rposition(|&p| p > 0.0).unwrap_or(0);
    for c in cdf.iter_mut().skip(last) {
        *c = f64::INFINITY;
    }
    let sampler = Sampler {
        cdf,
        poisson: if traffic.lambda() > 0.0 {
            Some(Poisson::new(traffic.lambda()).map_err(|e| invalid(e.to_string()))?)
        } else {
            None
        },
    };
    let snrs = grid.snr_linear();
    let bits = block.bits_per_block as u64;

    let chunks: Vec<(u64, u64)> = rng::chunks(slots).collect();
    let acc = chunks
        .par_iter()
        .map(|&(id, n)| {
            let mut r = rng::stream(seed, id);
            let mut a = Acc::default();
            for _ in 0..n {
                let s = one_slot(&mut r, &sampler, snrs, traffic.k_max(), block);
                let d = s.success.iter().filter(|&&x| x).count() as u64;
                let frac = s.tagged_bit_errors as f64 / bits as f64;
                a.slots += 1;
                a.failures += !s.success[0] as u64;
                a.bit_errors += s.tagged_bit_errors;
                a.bep_sq += frac * frac;
                a.decoded += d;
                a.decoded_sq += d * d;
            }
            a
        })
        .reduce(Acc::default, Acc::merge);

    let n = acc.slots;
    let p = acc.failures as f64 / n as f64;
    let bep_mean = acc.bit_errors as f64 / bits as f64;
    Ok(SimStats {
        slots: n,
        block_failures: acc.failures,
        bit_errors: acc.bit_errors,
        bits: n * bits,
        blep: Ratio {
            value: p,
            half_width: Z95 * (p * (1.0 - p) / n as f64).sqrt(),
        },
        bep: Ratio::from_moments(bep_mean, acc.bep_sq, n),
        throughput: Ratio::from_moments(acc.decoded as f64, acc.decoded_sq as f64, n),
    })
}

/// Runs one slot from an explicit stream; exposed for inspection and tests.
pub fn simulate_slot(
    r: &mut ChaCha8Rng,
    grid: &PowerLevelGrid,
    dist: &LevelDistribution,
    traffic: &TrafficModel,
    block: &BlockConfig,
) -> Result<SlotOutcome> {
    let cdf = dist
        .probs()
        .iter()
        .scan(0.0, |acc, p| {
            *acc += p;
            Some(*acc)
        })
        .collect();
    let sampler = Sampler {
        cdf,
        poisson: (traffic.lambda() > 0.0)
            .then(|| Poisson::new(traffic.lambda()))
            .transpose()
            .map_err(|e| invalid(e.to_string()))?,
    };
    Ok(one_slot(r, &sampler, grid.snr_linear(), traffic.k_max(), block))
}
