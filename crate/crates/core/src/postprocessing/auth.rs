//! Wegman–Carter authentication of the public channel.
//!
//! A message is split into 7-byte blocks which, followed by a block holding
//! the byte length, are the coefficients of a polynomial over the prime field
//! of order `p = 2^64 − 59`. The polynomial is evaluated at a secret point
//! `k1`, offset by `k2` and masked with a one-time pad. Each message uses 192
//! fresh pool bits: 64 for `k1`, 64 for `k2`, 64 for the pad. Two different
//! messages of at most `L` bytes collide for at most `⌈L/7⌉ + 1` values of
//! `k1`, so a forgery succeeds with probability at most `2L/p`.
//!
//! The pool is shared by both endpoints. The `k`-th key used in direction `d`
//! sits in slot `2k + d`, which covers pool bits `[192·slot, 192·(slot + 1))`.
//! Replenishment appends bits, so slot addresses never move.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bits::BitString;

/// The field order, `2^64 − 59`.
pub const FIELD_ORDER: u64 = 0xFFFF_FFFF_FFFF_FFC5;
pub const SLOT_BITS: usize = 192;
const BLOCK_BYTES: usize = 7;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AuthError {
    #[error("authentication pool exhausted (slot {slot} needs {needed} bits, pool holds {available})")]
    Exhausted { slot: u64, needed: usize, available: usize },
    #[error("refill of {requested} bits exceeds key length {available}")]
    RefillTooLarge { requested: usize, available: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    AliceToBob = 0,
    BobToAlice = 1,
}

impl Direction {
    pub fn reverse(self) -> Self {
        match self {
            Direction::AliceToBob => Direction::BobToAlice,
            Direction::BobToAlice => Direction::AliceToBob,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Purpose {
    Tag,
    Pad,
}

/// One line of the pool's consumption ledger.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Consumption {
    pub direction: Direction,
    pub slot: u64,
    pub bits: usize,
    pub purpose: Purpose,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MessageKey {
    pub k1: u64,
    pub k2: u64,
    pub pad: u64,
}

fn mulmod(a: u64, b: u64) -> u64 {
    ((a as u128 * b as u128) % FIELD_ORDER as u128) as u64
}

fn addmod(a: u64, b: u64) -> u64 {
    ((a as u128 + b as u128) % FIELD_ORDER as u128) as u64
}

impl MessageKey {
    fn from_bits(bits: &BitString, start: usize) -> Self {
        let word = |k: usize| -> u64 { (0..64).fold(0u64, |acc, i| acc | (bits.get(start + 64 * k + i) as u64) << i) };
        Self {
            k1: word(0) % FIELD_ORDER,
            k2: word(1) % FIELD_ORDER,
            pad: word(2),
        }
    }

    /// Polynomial hash of `msg` evaluated at `k1`.
    pub fn poly_hash(&self, msg: &[u8]) -> u64 {
        let mut h = 0u64;
        for block in msg.chunks(BLOCK_BYTES) {
            let mut b = [0u8; 8];
            b[..block.len()].copy_from_slice(block);
            h = addmod(mulmod(h, self.k1), u64::from_le_bytes(b));
        }
        addmod(mulmod(h, self.k1), msg.len() as u64 % FIELD_ORDER)
    }

    pub fn tag(&self, msg: &[u8]) -> u64 {
        addmod(self.poly_hash(msg), self.k2) ^ self.pad
    }
}

/// Secret bits reserved for authentication, with a record of what was used.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuthKeyPool {
    bits: BitString,
    next: [u64; 2],
    ledger: Vec<Consumption>,
    refilled: usize,
}

impl AuthKeyPool {
    pub fn new(bits: BitString) -> Self {
        Self {
            bits,
            next: [0, 0],
            ledger: Vec::new(),
            refilled: 0,
        }
    }

    /// Bits consumed per authenticated message.
    pub const fn bits_per_message() -> usize {
        SLOT_BITS
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn ledger(&self) -> &[Consumption] {
        &self.ledger
    }

    pub fn consumed_bits(&self) -> usize {
        self.ledger.iter().map(|c| c.bits).sum()
    }

    pub fn refilled_bits(&self) -> usize {
        self.refilled
    }

    /// Keys still available in `direction` before the pool runs dry.
    pub fn remaining_slots(&self, direction: Direction) -> u64 {
        let total = (self.bits.len() / SLOT_BITS) as u64;
        let d = direction as u64;
        let first_free = 2 * self.next[direction as usize] + d;
        if first_free >= total {
            0
        } else {
            (total - 1 - first_free) / 2 + 1
        }
    }

    fn take_slot(&mut self, direction: Direction, purpose: Purpose) -> Result<usize, AuthError> {
        let slot = 2 * self.next[direction as usize] + direction as u64;
        let start = slot as usize * SLOT_BITS;
        if start + SLOT_BITS > self.bits.len() {
            return Err(AuthError::Exhausted {
                slot,
                needed: start + SLOT_BITS,
                available: self.bits.len(),
            });
        }
        self.next[direction as usize] += 1;
        self.ledger.push(Consumption {
            direction,
            slot,
            bits: SLOT_BITS,
            purpose,
        });
        Ok(start)
    }

    pub fn next_key(&mut self, direction: Direction) -> Result<MessageKey, AuthError> {
        let start = self.take_slot(direction, Purpose::Tag)?;
        Ok(MessageKey::from_bits(&self.bits, start))
    }

    /// A one-time pad of `len` bits drawn from whole slots in `direction`.
    pub fn one_time_pad(&mut self, direction: Direction, len: usize) -> Result<BitString, AuthError> {
        let mut pad = BitString::with_capacity(len);
        while pad.len() < len {
            let start = self.take_slot(direction, Purpose::Pad)?;
            let take = (len - pad.len()).min(SLOT_BITS);
            for i in 0..take {
                pad.push(self.bits.get(start + i));
            }
        }
        Ok(pad)
    }

    pub fn replenish(&mut self, bits: &BitString) {
        self.bits.extend(bits);
        self.refilled += bits.len();
    }
}

pub fn authenticate(msg: &[u8], pool: &mut AuthKeyPool, direction: Direction) -> Result<u64, AuthError> {
    Ok(pool.next_key(direction)?.tag(msg))
}

/// Consumes the next key in `direction` and checks the tag in constant time.
pub fn verify(msg: &[u8], tag: u64, pool: &mut AuthKeyPool, direction: Direction) -> Result<bool, AuthError> {
    let expected = pool.next_key(direction)?.tag(msg);
    Ok(constant_time_eq(expected, tag))
}

fn constant_time_eq(a: u64, b: u64) -> bool {
    let d = a ^ b;
    let folded = (d | d.wrapping_neg()) >> 63;
    std::hint::black_box(folded) == 0
}

/// Moves the first `k` bits of `key` into the pool and returns the rest.
pub fn stage7_replenish(key: BitString, pool: &mut AuthKeyPool, k: usize) -> Result<BitString, AuthError> {
    if k > key.len() {
        return Err(AuthError::RefillTooLarge {
            requested: k,
            available: key.len(),
        });
    }
    let mut rest = key;
    let head = rest.split_front(k);
    pool.replenish(&head);
    Ok(rest)
}
