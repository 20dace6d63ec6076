//! Genie-aided joint maximum-likelihood detection of superposed users.
//!
//! The receiver knows the amplitude of every colliding user and searches all
//! `M^{n}` joint symbol hypotheses for the one closest to the received sample.
//! Hypothesis `h` assigns symbol digit `(h / M^j) % M` to user `j`; exact ties
//! go to the lowest `h`.

use crate::error::{invalid, Result};
use crate::scenario::Modulation;

/// Precomputed superposed constellation for a fixed set of user amplitudes.
#[derive(Debug, Clone)]
pub struct JointDetector {
    modulation: Modulation,
    users: usize,
    points: Vec<(f64, f64)>,
}

/// Largest number of jointly detected users supported.
pub const MAX_USERS: usize = 8;

impl JointDetector {
    pub fn new(amplitudes: &[f64], modulation: Modulation) -> Result<Self> {
        if amplitudes.is_empty() {
            return Err(invalid("joint detection needs at least one user"));
        }
        if amplitudes.len() > MAX_USERS {
            return Err(invalid(format!(
                "joint detection supports at most {MAX_USERS} users, got {}",
                amplitudes.len()
            )));
        }
        if amplitudes.iter().any(|a| !a.is_finite() || *a < 0.0) {
            return Err(invalid("amplitudes must be finite and nonnegative"));
        }
        let m = modulation.order();
        let count = m.pow(amplitudes.len() as u32);
        let points = (0..count)
            .map(|h| {
                let mut rest = h;
                let (mut re, mut im) = (0.0, 0.0);
                for &a in amplitudes {
                    let (sr, si) = modulation.symbol(rest % m);
                    re += a * sr;
                    im += a * si;
                    rest /= m;
                }
                (re, im)
            })
            .collect();
        Ok(Self {
            modulation,
            users: amplitudes.len(),
            points,
        })
    }

    /// Builds the detector for users received at the given linear SNRs.
    pub fn from_snrs(snrs: &[f64], modulation: Modulation) -> Result<Self> {
        if snrs.iter().any(|g| *g < 0.0) {
            return Err(invalid("SNRs must be nonnegative"));
        }
        let amps: Vec<f64> = snrs.iter().map(|g| g.sqrt()).collect();
        Self::new(&amps, modulation)
    }

    pub fn users(&self) -> usize {
        self.users
    }

    pub fn hypotheses(&self) -> usize {
        self.points.len()
    }

    pub fn modulation(&self) -> Modulation {
        self.modulation
    }

    /// Noiseless superposed point for hypothesis `h`.
    pub fn point(&self, h: usize) -> (f64, f64) {
        self.points[h]
    }

    /// Index of the minimum-distance hypothesis.
    #[inline]
    pub fn detect(&self, re: f64, im: f64) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (h, &(pr, pi)) in self.points.iter().enumerate() {
            let dr = re - pr;
            let di = im - pi;
            let d = dr * dr + di * di;
            if d < best_d {
                best_d = d;
                best = h;
            }
        }
        best
    }

    /// Symbol digit of `user` inside hypothesis `h`.
    #[inline]
    pub fn digit(&self, h: usize, user: usize) -> usize {
        let m = self.modulation.order();
        (h / m.pow(user as u32)) % m
    }

    /// Per-user symbol digits of hypothesis `h`.
    pub fn digits(&self, h: usize) -> Vec<usize> {
        (0..self.users).map(|j| self.digit(h, j)).collect()
    }

    /// Bit errors of `user` when `sent` was transmitted and `decoded` was chosen.
    #[inline]
    pub fn bit_errors(&self, sent: usize, decoded: usize, user: usize) -> u32 {
        (self.digit(sent, user) ^ self.digit(decoded, user)).count_ones()
    }
}

/// One-shot joint ML decision: returns the symbol digit chosen for each user.
pub fn joint_ml_detect(
    received: (f64, f64),
    amplitudes: &[f64],
    modulation: Modulation,
) -> Result<Vec<usize>> {
    let det = JointDetector::new(amplitudes, modulation)?;
    let h = det.detect(received.0, received.1);
    Ok(det.digits(h))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_user_noiseless_recovery() {
        for d in 0..2 {
            let (re, im) = Modulation::Bpsk.symbol(d);
            let got = joint_ml_detect((3.0 * re, 3.0 * im), &[3.0], Modulation::Bpsk).unwrap();
            assert_eq!(got, vec![d]);
        }
        for d in 0..4 {
            let (re, im) = Modulation::Qpsk.symbol(d);
            let got = joint_ml_detect((2.0 * re, 2.0 * im), &[2.0], Modulation::Qpsk).unwrap();
            assert_eq!(got, vec![d]);
        }
    }

    #[test]
    fn equal_levels_opposite_symbols_tie() {
        // (+1, -1) and (-1, +1) both superpose to zero; lowest index wins.
        let got = joint_ml_detect((0.0, 0.0), &[1.0, 1.0], Modulation::Bpsk).unwrap();
        assert_eq!(got, vec![1, 0]);
    }

    #[test]
    fn distinct_levels_noiseless_recovery() {
        let det = JointDetector::new(&[2.0, 1.0, 0.45], Modulation::Bpsk).unwrap();
        for h in 0..det.hypotheses() {
            let (re, im) = det.point(h);
            assert_eq!(det.detect(re, im), h);
        }
        let det = JointDetector::new(&[2.0, 0.7], Modulation::Qpsk).unwrap();
        assert_eq!(det.hypotheses(), 16);
        for h in 0..16 {
            let (re, im) = det.point(h);
            assert_eq!(det.detect(re, im), h);
        }
    }

    #[test]
    fn empty_hypothesis_set_rejected() {
        assert!(joint_ml_detect((0.0, 0.0), &[], Modulation::Bpsk).is_err());
    }

    #[test]
    fn qpsk_gray_bit_errors() {
        let det = JointDetector::new(&[1.0], Modulation::Qpsk).unwrap();
        assert_eq!(det.bit_errors(0, 3, 0), 2);
        assert_eq!(det.bit_errors(1, 0, 0), 1);
    }
}
