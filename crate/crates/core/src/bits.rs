//! Packed bit strings.

use serde::{Deserialize, Serialize};
use std::fmt;

use rand::Rng;

/// Growable bit string stored 64 bits per word, least significant bit first.
#[derive(Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BitString {
    words: Vec<u64>,
    len: usize,
}

impl BitString {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn zeros(len: usize) -> Self {
        Self {
            words: vec![0; len.div_ceil(64)],
            len,
        }
    }

    pub fn with_capacity(bits: usize) -> Self {
        Self {
            words: Vec::with_capacity(bits.div_ceil(64)),
            len: 0,
        }
    }

    pub fn random<R: Rng + ?Sized>(len: usize, rng: &mut R) -> Self {
        let mut words: Vec<u64> = (0..len.div_ceil(64)).map(|_| rng.random()).collect();
        if !len.is_multiple_of(64) {
            if let Some(last) = words.last_mut() {
                *last &= (1u64 << (len % 64)) - 1;
            }
        }
        Self { words, len }
    }

    /// Parses a string of '0'/'1' characters, ignoring whitespace.
    pub fn parse(s: &str) -> Option<Self> {
        let mut b = Self::new();
        for ch in s.chars() {
            match ch {
                '0' => b.push(false),
                '1' => b.push(true),
                c if c.is_whitespace() => {}
                _ => return None,
            }
        }
        Some(b)
    }

    pub fn from_bools<I: IntoIterator<Item = bool>>(iter: I) -> Self {
        let mut b = Self::new();
        for x in iter {
            b.push(x);
        }
        b
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn get(&self, i: usize) -> bool {
        assert!(i < self.len, "bit index {i} out of range {}", self.len);
        (self.words[i / 64] >> (i % 64)) & 1 == 1
    }

    pub fn set(&mut self, i: usize, v: bool) {
        assert!(i < self.len, "bit index {i} out of range {}", self.len);
        let m = 1u64 << (i % 64);
        if v {
            self.words[i / 64] |= m;
        } else {
            self.words[i / 64] &= !m;
        }
    }

    pub fn flip(&mut self, i: usize) {
        assert!(i < self.len, "bit index {i} out of range {}", self.len);
        self.words[i / 64] ^= 1u64 << (i % 64);
    }

    pub fn push(&mut self, v: bool) {
        if self.len.is_multiple_of(64) {
            self.words.push(0);
        }
        let i = self.len;
        self.len += 1;
        if v {
            self.words[i / 64] |= 1u64 << (i % 64);
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = bool> + '_ {
        (0..self.len).map(move |i| self.get(i))
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    pub fn count_ones(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    /// Number of positions where the two strings differ.
    pub fn hamming(&self, other: &Self) -> usize {
        assert_eq!(self.len, other.len, "hamming distance needs equal lengths");
        self.words
            .iter()
            .zip(&other.words)
            .map(|(a, b)| (a ^ b).count_ones() as usize)
            .sum()
    }

    pub fn xor_assign(&mut self, other: &Self) {
        assert_eq!(self.len, other.len, "xor needs equal lengths");
        for (a, b) in self.words.iter_mut().zip(&other.words) {
            *a ^= b;
        }
    }

    pub fn mismatches(&self, other: &Self) -> Vec<usize> {
        assert_eq!(self.len, other.len, "mismatch scan needs equal lengths");
        (0..self.len).filter(|&i| self.get(i) != other.get(i)).collect()
    }

    /// Parity of the bits selected by a mask of the same length.
    pub fn masked_parity(&self, mask: &[u64]) -> bool {
        self.words
            .iter()
            .zip(mask)
            .fold(0u32, |acc, (a, m)| acc ^ (a & m).count_ones())
            & 1
            == 1
    }

    pub fn select(&self, positions: &[usize]) -> Self {
        Self::from_bools(positions.iter().map(|&i| self.get(i)))
    }

    pub fn truncate(&mut self, len: usize) {
        if len >= self.len {
            return;
        }
        self.len = len;
        self.words.truncate(len.div_ceil(64));
        if !len.is_multiple_of(64) {
            if let Some(last) = self.words.last_mut() {
                *last &= (1u64 << (len % 64)) - 1;
            }
        }
    }

    /// Removes and returns the first `n` bits.
    pub fn split_front(&mut self, n: usize) -> Self {
        assert!(n <= self.len);
        let head = Self::from_bools((0..n).map(|i| self.get(i)));
        let tail = Self::from_bools((n..self.len).map(|i| self.get(i)));
        *self = tail;
        head
    }

    pub fn extend(&mut self, other: &Self) {
        for b in other.iter() {
            self.push(b);
        }
    }

    /// Bytes with bit 0 in the least significant bit of byte 0.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.len.div_ceil(8));
        for (k, w) in self.words.iter().enumerate() {
            for (j, byte) in w.to_le_bytes().iter().enumerate() {
                if (k * 8 + j) * 8 < self.len {
                    out.push(*byte);
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], len: usize) -> Option<Self> {
        if bytes.len() != len.div_ceil(8) {
            return None;
        }
        let mut b = Self::zeros(len);
        for (i, byte) in bytes.iter().enumerate() {
            b.words[i / 8] |= u64::from(*byte) << (8 * (i % 8));
        }
        if !len.is_multiple_of(64) {
            let extra = b.words.last().copied().unwrap_or(0) >> (len % 64);
            if extra != 0 {
                return None;
            }
        }
        Some(b)
    }
}

impl fmt::Debug for BitString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "BitString({}: {})", self.len, self)
    }
}

impl fmt::Display for BitString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in self.iter() {
            f.write_str(if b { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl FromIterator<bool> for BitString {
    fn from_iter<T: IntoIterator<Item = bool>>(iter: T) -> Self {
        Self::from_bools(iter)
    }
}
