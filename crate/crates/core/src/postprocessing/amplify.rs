//! Privacy amplification by random-subset parities.
//!
//! Output bit `i` is the parity of a seeded random subset of the input, so the
//! whole map is multiplication by a uniformly random binary matrix. For any
//! two distinct inputs the outputs collide with probability exactly `2^−ℓ`
//! over the choice of matrix.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{KeyMaterial, MaterialRole};
use crate::bits::BitString;
use crate::rng::stream;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AmplifyError {
    #[error("output length {len} − {leak} − {margin} is not positive")]
    NoOutput { len: usize, leak: u64, margin: u64 },
}

/// Identifies the hash applied to a key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HashDescriptor {
    pub seed: u64,
    pub input_len: usize,
    pub output_len: usize,
}

impl HashDescriptor {
    /// The subset mask of output bit after bit, as packed words.
    fn rows(&self) -> impl Iterator<Item = Vec<u64>> {
        let words = self.input_len.div_ceil(64);
        let tail = self.input_len % 64;
        let mut rng = stream(self.seed, 0);
        (0..self.output_len).map(move |_| {
            let mut row: Vec<u64> = (0..words).map(|_| rng.random()).collect();
            if tail != 0 {
                if let Some(last) = row.last_mut() {
                    *last &= (1u64 << tail) - 1;
                }
            }
            row
        })
    }

    /// Applies the hash. `key` must have `input_len` bits.
    pub fn apply(&self, key: &BitString) -> BitString {
        assert_eq!(key.len(), self.input_len, "hash input length");
        self.rows().map(|row| key.masked_parity(&row)).collect()
    }

    /// The subset of output bit `i`, as input positions.
    pub fn subset(&self, i: usize) -> Vec<usize> {
        let row = self.rows().nth(i).expect("output index in range");
        (0..self.input_len)
            .filter(|&j| row[j / 64] >> (j % 64) & 1 == 1)
            .collect()
    }
}

/// Compresses `key` to `|key| − leak_bits − security_margin` bits.
pub fn privacy_amplify(
    key: &KeyMaterial,
    leak_bits: u64,
    security_margin: u64,
    seed: u64,
) -> Result<KeyMaterial, AmplifyError> {
    let len = key.bits.len();
    let out = (len as u64)
        .checked_sub(leak_bits)
        .and_then(|v| v.checked_sub(security_margin))
        .filter(|&v| v > 0)
        .ok_or(AmplifyError::NoOutput {
            len,
            leak: leak_bits,
            margin: security_margin,
        })?;
    let hash = HashDescriptor {
        seed,
        input_len: len,
        output_len: out as usize,
    };
    Ok(KeyMaterial {
        bits: hash.apply(&key.bits),
        role: MaterialRole::Amplified,
        disclosed_parity_count: key.disclosed_parity_count,
        session_id: key.session_id,
        hash: Some(hash),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn material(bits: BitString) -> KeyMaterial {
        KeyMaterial::sifted(bits, 1)
    }

    #[test]
    fn length_arithmetic() {
        let k = material(BitString::random(300, &mut stream(1, 0)));
        assert_eq!(privacy_amplify(&k, 0, 0, 4).unwrap().len(), 300);
        let a = privacy_amplify(&k, 40, 60, 4).unwrap();
        assert_eq!(a.len(), 200);
        assert_eq!(a.role, MaterialRole::Amplified);
        assert_eq!(a.hash.unwrap().output_len, 200);
        assert!(privacy_amplify(&k, 200, 100, 4).is_err());
        assert!(privacy_amplify(&k, 400, 0, 4).is_err());
    }

    #[test]
    fn single_bit_output_flip_rate_at_n8() {
        // For every seed and every input bit, flipping the bit flips the
        // output exactly when the bit is in that seed's subset.
        let mut flips = 0usize;
        let mut total = 0usize;
        let seeds = 4000u64;
        for seed in 0..seeds {
            let h = HashDescriptor {
                seed,
                input_len: 8,
                output_len: 1,
            };
            let subset = h.subset(0);
            for x in 0u8..=255 {
                let key = BitString::from_bytes(&[x], 8).unwrap();
                let base = h.apply(&key).get(0);
                for j in 0..8 {
                    let mut k2 = key.clone();
                    k2.flip(j);
                    let flipped = h.apply(&k2).get(0) != base;
                    assert_eq!(flipped, subset.contains(&j));
                    if x == 0 {
                        flips += flipped as usize;
                        total += 1;
                    }
                }
            }
        }
        let rate = flips as f64 / total as f64;
        assert!((rate - 0.5).abs() < 0.01, "{rate}");
    }

    /// Statistical distance from uniform of the 2-bit output when Eve knows
    /// 4 of 12 input bits, for the 2×8 matrix acting on the unknown bits.
    fn eve_advantage(unknown_rows: [u8; 2]) -> f64 {
        let mut counts = [0u32; 4];
        for x in 0u32..256 {
            let b0 = (unknown_rows[0] as u32 & x).count_ones() & 1;
            let b1 = (unknown_rows[1] as u32 & x).count_ones() & 1;
            counts[(b0 | b1 << 1) as usize] += 1;
        }
        counts.iter().map(|&c| (c as f64 / 256.0 - 0.25).abs()).sum::<f64>() / 2.0
    }

    #[test]
    fn partial_knowledge_is_erased_n12_k4_l2() {
        let bound = 2f64.powi(-(12 - 4 - 2));
        // Exhaustive over every matrix: the known bits only shift the output.
        let mut total = 0.0;
        for r0 in 0u16..256 {
            for r1 in 0u16..256 {
                total += eve_advantage([r0 as u8, r1 as u8]);
            }
        }
        let exact = total / 65536.0;
        assert!(exact <= bound, "{exact} > {bound}");

        // The implementation's matrices, with Eve knowing bits 0..4.
        let mut sum = 0.0;
        let seeds = 3000u64;
        for seed in 0..seeds {
            let h = HashDescriptor {
                seed,
                input_len: 12,
                output_len: 2,
            };
            let known = 0b1011u16;
            let mut counts = [0u32; 4];
            for unknown in 0u16..256 {
                let v = known | unknown << 4;
                let key = BitString::from_bytes(&v.to_le_bytes(), 12).unwrap();
                let out = h.apply(&key);
                counts[out.get(0) as usize | (out.get(1) as usize) << 1] += 1;
            }
            sum += counts.iter().map(|&c| (c as f64 / 256.0 - 0.25).abs()).sum::<f64>() / 2.0;
        }
        let mean = sum / seeds as f64;
        assert!((mean - exact).abs() < 0.006, "{mean} vs {exact}");
    }

    #[test]
    fn different_seeds_decorrelate() {
        let key = material(BitString::random(20_000, &mut stream(7, 0)));
        let a = privacy_amplify(&key, 5_000, 5_000, 1).unwrap().bits;
        let b = privacy_amplify(&key, 5_000, 5_000, 2).unwrap().bits;
        let n = a.len() as f64;
        let agree = n - a.hamming(&b) as f64;
        let corr = (2.0 * agree - n) / n;
        assert!(corr.abs() < 0.05, "{corr}");
    }

    proptest! {
        #[test]
        fn deterministic_given_seed(seed in any::<u64>(), len in 2usize..300, bits in any::<u64>()) {
            let key = material(BitString::random(len, &mut stream(bits, 0)));
            let a = privacy_amplify(&key, 1, 0, seed).unwrap();
            let b = privacy_amplify(&key, 1, 0, seed).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn hash_is_linear(seed in any::<u64>(), len in 1usize..200, s1 in any::<u64>(), s2 in any::<u64>()) {
            let h = HashDescriptor { seed, input_len: len, output_len: len.div_ceil(2) };
            let x = BitString::random(len, &mut stream(s1, 0));
            let y = BitString::random(len, &mut stream(s2, 0));
            let mut xy = x.clone();
            xy.xor_assign(&y);
            let mut hxy = h.apply(&x);
            hxy.xor_assign(&h.apply(&y));
            prop_assert_eq!(h.apply(&xy), hxy);
        }
    }
}
