//! B92 and BB84: phase encodings, interpretation of detector clicks and
//! index-based sifting.
//!
//! Bob keys B92 on the central-window click of his constructive port. For
//! BB84 the constructive port reads 0 and the destructive port reads 1.

mod run;
mod station;

pub use run::{run_session, SessionRun};
pub use station::{
    AliceStation, BobDetection, BobStation, ClickCounters, OpticalBatch, DEFAULT_BATCH_CLOCKS,
};

use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bits::BitString;
use crate::optics::{DetectionEvent, Port, Window};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ProtocolKind {
    #[default]
    B92,
    BB84,
}

impl ProtocolKind {
    /// Expected sifted bits per detectable single photon in the lossless limit.
    pub fn sift_factor(self) -> f64 {
        match self {
            ProtocolKind::B92 => 0.25,
            ProtocolKind::BB84 => 0.5,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ProtocolKind::B92 => "b92",
            ProtocolKind::BB84 => "bb84",
        }
    }
}

impl std::str::FromStr for ProtocolKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "b92" => Ok(Self::B92),
            "bb84" => Ok(Self::BB84),
            other => Err(format!("unknown protocol `{other}` (expected b92 or bb84)")),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ProtocolError {
    #[error("bit value {0} is not 0 or 1")]
    InvalidBit(u8),
    #[error("clock index {index} is outside the session of {pulses} pulses")]
    IndexOutOfRange { index: u64, pulses: u64 },
    #[error("clock index {0} appears more than once or out of order")]
    DuplicateIndex(u64),
    #[error("index and basis lists differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("BB84 sifting needs Bob's bases")]
    MissingBases,
}

fn check_bit(bit: u8) -> Result<bool, ProtocolError> {
    match bit {
        0 => Ok(false),
        1 => Ok(true),
        b => Err(ProtocolError::InvalidBit(b)),
    }
}

pub fn b92_alice_phase(bit: u8) -> Result<f64, ProtocolError> {
    Ok(if check_bit(bit)? { FRAC_PI_2 } else { 0.0 })
}

pub fn b92_bob_phase(bit: u8) -> Result<f64, ProtocolError> {
    Ok(if check_bit(bit)? { PI } else { 3.0 * FRAC_PI_2 })
}

pub fn bb84_alice_phase(basis: u8, bit: u8) -> Result<f64, ProtocolError> {
    let basis = check_bit(basis)?;
    let bit = check_bit(bit)?;
    Ok(match (basis, bit) {
        (false, false) => 0.0,
        (false, true) => PI,
        (true, false) => FRAC_PI_2,
        (true, true) => 3.0 * FRAC_PI_2,
    })
}

pub fn bb84_bob_phase(basis: u8) -> Result<f64, ProtocolError> {
    Ok(if check_bit(basis)? { FRAC_PI_2 } else { 0.0 })
}

/// Alice's phase for a pulse. `basis` is ignored for B92.
pub(crate) fn alice_phase(kind: ProtocolKind, bit: bool, basis: bool) -> f64 {
    match kind {
        ProtocolKind::B92 => b92_alice_phase(bit as u8),
        ProtocolKind::BB84 => bb84_alice_phase(basis as u8, bit as u8),
    }
    .expect("bool is a valid bit")
}

/// Bob's phase for a pulse: his random bit (B92) or basis (BB84).
pub(crate) fn bob_phase(kind: ProtocolKind, choice: bool) -> f64 {
    match kind {
        ProtocolKind::B92 => b92_bob_phase(choice as u8),
        ProtocolKind::BB84 => bb84_bob_phase(choice as u8),
    }
    .expect("bool is a valid bit")
}

/// The port whose central-window click marks a B92 "pass".
pub const B92_PORT: Port = Port::Constructive;

/// BB84 bit read from a port.
pub fn bb84_port_bit(port: Port) -> bool {
    port == Port::Destructive
}

/// B92 pass/fail: Y iff the keying port clicked in the central window.
/// Side-window clicks never key; they are counted separately by the station.
pub fn b92_interpret(events: &[DetectionEvent]) -> bool {
    events
        .iter()
        .any(|e| e.window == Window::Central && e.port == B92_PORT)
}

/// Outcome of reading the central window for BB84.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Bb84Reading {
    Nothing,
    Bit(bool),
    /// Both ports fired; the pulse is discarded.
    DoubleClick,
}

pub fn bb84_interpret(events: &[DetectionEvent]) -> Bb84Reading {
    let mut ports = events.iter().filter(|e| e.window == Window::Central).map(|e| e.port);
    match (ports.next(), ports.next()) {
        (None, _) => Bb84Reading::Nothing,
        (Some(p), None) => Bb84Reading::Bit(bb84_port_bit(p)),
        (Some(a), Some(b)) if a == b => Bb84Reading::Bit(bb84_port_bit(a)),
        _ => Bb84Reading::DoubleClick,
    }
}

/// One clock tick seen by both parties (the combined oracle view).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BitRecord {
    pub clock_index: u64,
    pub alice_bit: bool,
    pub alice_basis: bool,
    /// B92: Bob's random bit. BB84: the bit read from the port.
    pub bob_bit: bool,
    pub bob_basis: bool,
    pub detected: bool,
    pub port: Option<Port>,
    pub window: Option<Window>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum KeyRole {
    Raw,
    #[default]
    Sifted,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SiftedKey {
    pub bits: BitString,
    pub indices: Vec<u64>,
    pub role: KeyRole,
}

impl SiftedKey {
    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }
}

/// What Bob announces publicly: which clocks he keeps, and for BB84 his bases.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct BobReport {
    pub indices: Vec<u64>,
    pub bases: Option<BitString>,
}

fn check_increasing(indices: &[u64], pulses: u64) -> Result<(), ProtocolError> {
    let mut prev: Option<u64> = None;
    for &i in indices {
        if i >= pulses {
            return Err(ProtocolError::IndexOutOfRange { index: i, pulses });
        }
        if prev.is_some_and(|p| i <= p) {
            return Err(ProtocolError::DuplicateIndex(i));
        }
        prev = Some(i);
    }
    Ok(())
}

/// Alice's half of sifting. Returns her sifted key; for BB84 the kept indices
/// (basis matches) are the key's `indices` and must be announced back to Bob.
pub fn alice_sift(
    kind: ProtocolKind,
    bits: &BitString,
    bases: Option<&BitString>,
    report: &BobReport,
) -> Result<SiftedKey, ProtocolError> {
    let pulses = bits.len() as u64;
    check_increasing(&report.indices, pulses)?;
    let kept: Vec<u64> = match kind {
        ProtocolKind::B92 => report.indices.clone(),
        ProtocolKind::BB84 => {
            let bob_bases = report.bases.as_ref().ok_or(ProtocolError::MissingBases)?;
            if bob_bases.len() != report.indices.len() {
                return Err(ProtocolError::LengthMismatch(report.indices.len(), bob_bases.len()));
            }
            let alice_bases = bases.ok_or(ProtocolError::MissingBases)?;
            report
                .indices
                .iter()
                .zip(bob_bases.iter())
                .filter(|(&i, b)| alice_bases.get(i as usize) == *b)
                .map(|(&i, _)| i)
                .collect()
        }
    };
    Ok(SiftedKey {
        bits: kept.iter().map(|&i| bits.get(i as usize)).collect(),
        indices: kept,
        role: KeyRole::Sifted,
    })
}

/// Bob's half of sifting: his bits at the indices Alice confirmed.
pub fn bob_sift(detections: &[BobDetection], kept: &[u64]) -> Result<SiftedKey, ProtocolError> {
    let mut bits = BitString::with_capacity(kept.len());
    let mut j = 0;
    let mut prev: Option<u64> = None;
    for &i in kept {
        if prev.is_some_and(|p| i <= p) {
            return Err(ProtocolError::DuplicateIndex(i));
        }
        prev = Some(i);
        while j < detections.len() && detections[j].clock_index < i {
            j += 1;
        }
        match detections.get(j) {
            Some(d) if d.clock_index == i => bits.push(d.bit),
            _ => {
                return Err(ProtocolError::IndexOutOfRange {
                    index: i,
                    pulses: detections.last().map_or(0, |d| d.clock_index + 1),
                })
            }
        }
    }
    Ok(SiftedKey {
        bits,
        indices: kept.to_vec(),
        role: KeyRole::Sifted,
    })
}

/// Sifting over the combined per-clock view: B92 keeps detected clocks, BB84
/// keeps detected clocks with matching bases.
pub fn sift(kind: ProtocolKind, records: &[BitRecord]) -> Result<(SiftedKey, SiftedKey), ProtocolError> {
    let mut prev: Option<u64> = None;
    for r in records {
        if prev.is_some_and(|p| r.clock_index <= p) {
            return Err(ProtocolError::DuplicateIndex(r.clock_index));
        }
        prev = Some(r.clock_index);
    }
    let keep = |r: &&BitRecord| {
        r.detected
            && match kind {
                ProtocolKind::B92 => true,
                ProtocolKind::BB84 => r.alice_basis == r.bob_basis,
            }
    };
    let kept: Vec<&BitRecord> = records.iter().filter(keep).collect();
    let indices: Vec<u64> = kept.iter().map(|r| r.clock_index).collect();
    let alice = SiftedKey {
        bits: kept.iter().map(|r| r.alice_bit).collect(),
        indices: indices.clone(),
        role: KeyRole::Sifted,
    };
    let bob = SiftedKey {
        bits: kept.iter().map(|r| r.bob_bit).collect(),
        indices,
        role: KeyRole::Sifted,
    };
    Ok((alice, bob))
}
