//! Error-rate estimation.
//!
//! The sampled estimator never publishes key bits. It picks disjoint random
//! pairs of positions and compares the XOR of each pair, which disagrees with
//! probability `f = 2e(1 − e)` at bit error rate `e`; inverting gives
//! `e = (1 − √(1 − 2f))/2`. Both bits of every pair are then discarded.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bits::BitString;
use crate::rng::stream;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BerError {
    #[error("keys differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("sample fraction {0} is outside (0, 1]")]
    Fraction(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum BerMode {
    /// Compares every bit; possible only inside the simulation.
    Oracle,
    /// Sacrifices about `fraction` of the key in disjoint pairs.
    Sampled { fraction: f64, seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BerEstimate {
    pub rate: f64,
    /// Bits (oracle) or pairs (sampled) compared.
    pub compared: usize,
    pub mismatches: usize,
    /// Key bits consumed by the estimate.
    pub sacrificed: usize,
    /// Positions that remain usable, ascending.
    pub remaining: Vec<usize>,
}

pub fn estimate_ber(alice: &BitString, bob: &BitString, mode: BerMode) -> Result<BerEstimate, BerError> {
    if alice.len() != bob.len() {
        return Err(BerError::LengthMismatch(alice.len(), bob.len()));
    }
    let n = alice.len();
    match mode {
        BerMode::Oracle => {
            let mismatches = alice.hamming(bob);
            Ok(BerEstimate {
                rate: if n == 0 { 0.0 } else { mismatches as f64 / n as f64 },
                compared: n,
                mismatches,
                sacrificed: 0,
                remaining: (0..n).collect(),
            })
        }
        BerMode::Sampled { fraction, seed } => {
            let pairs = sample_pairs(n, fraction, seed)?;
            let pa = pair_parities(alice, &pairs);
            let pb = pair_parities(bob, &pairs);
            let mismatches = pa.hamming(&pb);
            Ok(BerEstimate {
                rate: rate_from_pairs(mismatches, pairs.len()),
                compared: pairs.len(),
                mismatches,
                sacrificed: 2 * pairs.len(),
                remaining: remaining_after(n, &pairs),
            })
        }
    }
}

/// `floor(fraction·n/2)` disjoint pairs chosen by `seed`.
pub fn sample_pairs(n: usize, fraction: f64, seed: u64) -> Result<Vec<(usize, usize)>, BerError> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(BerError::Fraction(fraction));
    }
    let count = ((fraction * n as f64) / 2.0).floor() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream(seed, 0));
    Ok(order[..2 * count].chunks(2).map(|c| (c[0], c[1])).collect())
}

pub fn pair_parities(bits: &BitString, pairs: &[(usize, usize)]) -> BitString {
    pairs.iter().map(|&(i, j)| bits.get(i) ^ bits.get(j)).collect()
}

/// Inverts `f = 2e(1 − e)` on the lower branch.
pub fn rate_from_pairs(mismatches: usize, pairs: usize) -> f64 {
    if pairs == 0 {
        return 0.0;
    }
    let f = (mismatches as f64 / pairs as f64).min(0.5);
    0.5 * (1.0 - (1.0 - 2.0 * f).sqrt())
}

pub fn remaining_after(n: usize, pairs: &[(usize, usize)]) -> Vec<usize> {
    let mut used = vec![false; n];
    for &(i, j) in pairs {
        used[i] = true;
        used[j] = true;
    }
    (0..n).filter(|&i| !used[i]).collect()
}
