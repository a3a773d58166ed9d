//! Eavesdropper strategies acting on pulses between Alice and the fiber.
//!
//! Attacks read and write pulses in the two-state picture: the phase Alice
//! imprinted names one of her states, and Eve's measurements have the
//! outcome statistics of measurements on that state. Her resent light keeps
//! the photon-number structure so the detectors downstream see realistic
//! multi-photon and side-window behavior.

use std::f64::consts::FRAC_PI_2;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bits::BitString;
use crate::optics::{OpticalPulse, OpticsConfig, PhotonStatistics, CELLS};
use crate::protocol::{alice_phase, bob_phase, ProtocolKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum AttackKind {
    #[default]
    None,
    #[serde(alias = "intercept-alice")]
    InterceptResendAliceBasis,
    #[serde(alias = "intercept-bob")]
    InterceptResendBobBasis,
    Beamsplit,
}

impl std::str::FromStr for AttackKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "none" => Ok(Self::None),
            "intercept-alice" | "intercept-resend-alice-basis" => Ok(Self::InterceptResendAliceBasis),
            "intercept-bob" | "intercept-resend-bob-basis" => Ok(Self::InterceptResendBobBasis),
            "beamsplit" => Ok(Self::Beamsplit),
            other => Err(format!(
                "unknown attack `{other}` (expected none, intercept-alice, intercept-bob or beamsplit)"
            )),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AttackError {
    #[error("attack fraction {0} is outside [0, 1]")]
    Fraction(f64),
    #[error("resend multiplicity must be at least 1")]
    Multiplicity,
    #[error("the Bob-basis intercept is defined for B92 only")]
    BobBasisNeedsB92,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttackModel {
    pub kind: AttackKind,
    pub fraction: f64,
    pub resend_multiplicity: u32,
}

impl Default for AttackModel {
    fn default() -> Self {
        Self::none()
    }
}

impl AttackModel {
    pub fn none() -> Self {
        Self {
            kind: AttackKind::None,
            fraction: 0.0,
            resend_multiplicity: 1,
        }
    }

    pub fn new(kind: AttackKind, fraction: f64) -> Self {
        Self {
            kind,
            fraction,
            resend_multiplicity: 1,
        }
    }

    pub fn validate(&self, protocol: ProtocolKind) -> Result<(), AttackError> {
        if self.kind == AttackKind::None {
            return Ok(());
        }
        if !(0.0..=1.0).contains(&self.fraction) {
            return Err(AttackError::Fraction(self.fraction));
        }
        if self.resend_multiplicity == 0 {
            return Err(AttackError::Multiplicity);
        }
        if self.kind == AttackKind::InterceptResendBobBasis && protocol != ProtocolKind::B92 {
            return Err(AttackError::BobBasisNeedsB92);
        }
        Ok(())
    }

    pub fn is_active(&self) -> bool {
        self.kind != AttackKind::None && self.fraction > 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Confidence {
    Certain,
    Guessed,
}

/// Eve's knowledge of one pulse.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct EveEntry {
    pub known_bit: Option<(bool, Confidence)>,
    pub suppressed: bool,
}

impl EveEntry {
    fn certain(bit: bool) -> Self {
        Self {
            known_bit: Some((bit, Confidence::Certain)),
            suppressed: false,
        }
    }

    fn guessed(bit: bool) -> Self {
        Self {
            known_bit: Some((bit, Confidence::Guessed)),
            suppressed: false,
        }
    }
}

/// Append-only per-clock knowledge record, stored as packed columns.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EveRecord {
    known: BitString,
    value: BitString,
    certain: BitString,
    suppressed: BitString,
}

impl EveRecord {
    pub fn with_capacity(n: usize) -> Self {
        Self {
            known: BitString::with_capacity(n),
            value: BitString::with_capacity(n),
            certain: BitString::with_capacity(n),
            suppressed: BitString::with_capacity(n),
        }
    }

    pub fn push(&mut self, e: EveEntry) {
        let (known, value, certain) = match e.known_bit {
            None => (false, false, false),
            Some((b, c)) => (true, b, c == Confidence::Certain),
        };
        self.known.push(known);
        self.value.push(value);
        self.certain.push(certain);
        self.suppressed.push(e.suppressed);
    }

    pub fn len(&self) -> usize {
        self.known.len()
    }

    pub fn is_empty(&self) -> bool {
        self.known.is_empty()
    }

    pub fn get(&self, clock: usize) -> EveEntry {
        if clock >= self.len() {
            return EveEntry::default();
        }
        let known_bit = self.known.get(clock).then(|| {
            let c = if self.certain.get(clock) {
                Confidence::Certain
            } else {
                Confidence::Guessed
            };
            (self.value.get(clock), c)
        });
        EveEntry {
            known_bit,
            suppressed: self.suppressed.get(clock),
        }
    }

    pub fn suppressed_count(&self) -> usize {
        self.suppressed.count_ones()
    }
}

/// Alice's state label as Eve reads it from the pulse: `(bit, basis)`.
fn decode_state(kind: ProtocolKind, phase: f64) -> (bool, bool) {
    let q = ((phase / FRAC_PI_2).round() as i64).rem_euclid(4);
    match kind {
        ProtocolKind::B92 => (q == 1, false),
        ProtocolKind::BB84 => (q >= 2, q % 2 == 1),
    }
}

/// Eve measures in Alice's preparation basis and resends what she inferred.
///
/// B92: her measurement is the projective pair {state 0, its orthogonal
/// complement}. State 0 always gives the first outcome; state 1 gives it with
/// probability |⟨s₀|s₁⟩|² = 1/2. The second outcome identifies 1 for certain,
/// the first is read as 0. BB84: she picks one of Alice's two bases at random.
pub fn intercept_alice_basis<R: Rng + ?Sized>(
    kind: ProtocolKind,
    pulse: OpticalPulse,
    rng: &mut R,
) -> (OpticalPulse, EveEntry) {
    if pulse.photons == 0 {
        return (pulse, EveEntry::default());
    }
    let (bit, basis) = decode_state(kind, pulse.phase);
    let (guess, guess_basis, entry) = match kind {
        ProtocolKind::B92 => {
            if bit && rng.random_bool(0.5) {
                (true, false, EveEntry::certain(true))
            } else {
                (false, false, EveEntry::guessed(false))
            }
        }
        ProtocolKind::BB84 => {
            let eve_basis: bool = rng.random();
            if eve_basis == basis {
                (bit, eve_basis, EveEntry::certain(bit))
            } else {
                let b: bool = rng.random();
                (b, eve_basis, EveEntry::guessed(b))
            }
        }
    };
    let resent = OpticalPulse {
        phase: alice_phase(kind, guess, guess_basis),
        ..pulse
    };
    (resent, entry)
}

/// B92 only. Eve mimics Bob: a random bit choice `e` and his pass/fail test.
/// A pass (probability 1/2 when `e` equals Alice's bit, 0 otherwise) tells
/// her the bit with certainty and she resends `multiplicity` times the light
/// in that state; any other outcome suppresses the pulse.
pub fn intercept_bob_basis<R: Rng + ?Sized>(
    pulse: OpticalPulse,
    multiplicity: u32,
    rng: &mut R,
) -> (Option<OpticalPulse>, EveEntry) {
    let suppressed = EveEntry {
        known_bit: None,
        suppressed: true,
    };
    if pulse.photons == 0 {
        return (None, suppressed);
    }
    let (bit, _) = decode_state(ProtocolKind::B92, pulse.phase);
    let e: bool = rng.random();
    let pass = rng.random_bool(0.5);
    if e == bit && pass {
        let resent = OpticalPulse {
            phase: alice_phase(ProtocolKind::B92, e, false),
            photons: pulse.photons.saturating_mul(multiplicity),
            side_photons: pulse.side_photons.saturating_mul(multiplicity),
            ..pulse
        };
        (Some(resent), EveEntry::certain(e))
    } else {
        (None, suppressed)
    }
}

/// Eve taps one photon from multi-photon pulses. She holds it until the
/// public discussion reveals what she needs and then knows the bit exactly.
pub fn beamsplit(kind: ProtocolKind, pulse: OpticalPulse) -> (OpticalPulse, EveEntry) {
    if pulse.photons < 2 {
        return (pulse, EveEntry::default());
    }
    let (bit, _) = decode_state(kind, pulse.phase);
    let forwarded = OpticalPulse {
        photons: pulse.photons - 1,
        ..pulse
    };
    (forwarded, EveEntry::certain(bit))
}

/// Eve at work on one session: applies the configured attack to a fraction
/// of pulses and records what she learns.
#[derive(Debug, Clone)]
pub struct Eavesdropper<R> {
    model: AttackModel,
    protocol: ProtocolKind,
    rng: R,
    record: EveRecord,
}

impl<R: Rng> Eavesdropper<R> {
    pub fn new(model: AttackModel, protocol: ProtocolKind, rng: R, pulses: usize) -> Self {
        let cap = if model.kind == AttackKind::None { 0 } else { pulses };
        Self {
            model,
            protocol,
            rng,
            record: EveRecord::with_capacity(cap),
        }
    }

    /// Returns the light that continues towards Bob, if any.
    pub fn act(&mut self, pulse: OpticalPulse) -> Option<OpticalPulse> {
        if self.model.kind == AttackKind::None {
            return Some(pulse);
        }
        let attacked = self.rng.random::<f64>() < self.model.fraction;
        if !attacked {
            self.record.push(EveEntry::default());
            return Some(pulse);
        }
        let (out, entry) = match self.model.kind {
            AttackKind::None => unreachable!(),
            AttackKind::InterceptResendAliceBasis => {
                let (p, e) = intercept_alice_basis(self.protocol, pulse, &mut self.rng);
                (Some(p), e)
            }
            AttackKind::InterceptResendBobBasis => {
                intercept_bob_basis(pulse, self.model.resend_multiplicity, &mut self.rng)
            }
            AttackKind::Beamsplit => {
                let (p, e) = beamsplit(self.protocol, pulse);
                (Some(p), e)
            }
        };
        self.record.push(entry);
        out
    }

    pub fn record(&self) -> &EveRecord {
        &self.record
    }

    pub fn into_record(self) -> EveRecord {
        self.record
    }
}

/// Oracle comparison of Eve's record against Alice's sifted key.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EveInfo {
    pub sifted_bits: usize,
    pub certain: usize,
    pub certain_wrong: usize,
    pub guessed_correct: usize,
    pub guessed_wrong: usize,
}

impl EveInfo {
    /// Fraction of sifted bits Eve holds correctly, certain or guessed.
    pub fn fraction(&self) -> f64 {
        if self.sifted_bits == 0 {
            return 0.0;
        }
        (self.certain + self.guessed_correct) as f64 / self.sifted_bits as f64
    }

    pub fn certain_fraction(&self) -> f64 {
        if self.sifted_bits == 0 {
            return 0.0;
        }
        self.certain as f64 / self.sifted_bits as f64
    }
}

/// Fraction of Alice's sifted bits Eve holds, computed against ground truth.
pub fn eve_info_fraction(record: &EveRecord, indices: &[u64], alice_bits: &BitString) -> EveInfo {
    let mut info = EveInfo {
        sifted_bits: indices.len(),
        ..EveInfo::default()
    };
    for (k, &i) in indices.iter().enumerate() {
        let truth = alice_bits.get(k);
        match record.get(i as usize).known_bit {
            Some((b, Confidence::Certain)) => {
                info.certain += 1;
                if b != truth {
                    info.certain_wrong += 1;
                }
            }
            Some((b, Confidence::Guessed)) if b == truth => info.guessed_correct += 1,
            Some((_, Confidence::Guessed)) => info.guessed_wrong += 1,
            None => {}
        }
    }
    info
}

/// Observed versus expected count of pulses that fire two or more detector
/// cells. Eve's bright resends raise it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MultiClickMonitor {
    pub pulses: u64,
    pub observed: u64,
    pub expected: f64,
    pub z_score: f64,
}

impl MultiClickMonitor {
    pub fn alarm(&self, threshold: f64) -> bool {
        self.z_score > threshold
    }
}

/// Per-pulse probability that at least two cells click, for the honest
/// channel, averaged over the protocol's equally likely phase differences.
pub fn expected_multi_click_probability(optics: &OpticsConfig, protocol: ProtocolKind) -> f64 {
    let mut phases = Vec::new();
    for a in [false, true] {
        for ab in [false, true] {
            for b in [false, true] {
                if protocol == ProtocolKind::B92 && ab {
                    continue;
                }
                phases.push(alice_phase(protocol, a, ab) - bob_phase(protocol, b));
            }
        }
    }
    let total: f64 = phases
        .iter()
        .map(|&dphi| {
            match optics.source.statistics {
                PhotonStatistics::Poisson => at_least_two(&crate::optics::cell_click_probabilities(optics, dphi)),
                PhotonStatistics::SinglePhoton => single_photon_at_least_two(optics, dphi),
            }
        })
        .sum();
    total / phases.len() as f64
}

/// The photon lands in at most one cell; darks strike every cell independently.
fn single_photon_at_least_two(optics: &OpticsConfig, dphi: f64) -> f64 {
    let d = optics.detector.dark_probability();
    let m = crate::optics::cell_means(optics, dphi);
    let lost = (1.0 - m.iter().sum::<f64>()).max(0.0);
    let one_more_dark = 1.0 - (1.0 - d).powi(CELLS as i32 - 1);
    lost * at_least_two(&[d; CELLS]) + m.iter().map(|mi| mi * one_more_dark).sum::<f64>()
}

fn at_least_two(p: &[f64; CELLS]) -> f64 {
    let none: f64 = p.iter().map(|x| 1.0 - x).product();
    let one: f64 = (0..CELLS)
        .map(|i| {
            p[i] * (0..CELLS)
                .filter(|&j| j != i)
                .map(|j| 1.0 - p[j])
                .product::<f64>()
        })
        .sum();
    (1.0 - none - one).max(0.0)
}

pub fn multi_click_monitor(observed: u64, pulses: u64, optics: &OpticsConfig, protocol: ProtocolKind) -> MultiClickMonitor {
    let p = expected_multi_click_probability(optics, protocol);
    let expected = p * pulses as f64;
    let sd = (pulses as f64 * p * (1.0 - p)).sqrt();
    let z_score = if sd > 0.0 {
        (observed as f64 - expected) / sd
    } else if observed as f64 > expected {
        f64::INFINITY
    } else {
        0.0
    };
    MultiClickMonitor {
        pulses,
        observed,
        expected,
        z_score,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn pulse(phase: f64, photons: u32) -> OpticalPulse {
        OpticalPulse {
            clock_index: 0,
            phase,
            photons,
            side_photons: 0,
        }
    }

    #[test]
    fn decode_matches_encoding() {
        for kind in [ProtocolKind::B92, ProtocolKind::BB84] {
            for bit in [false, true] {
                for basis in [false, true] {
                    if kind == ProtocolKind::B92 && basis {
                        continue;
                    }
                    assert_eq!(decode_state(kind, alice_phase(kind, bit, basis)), (bit, basis));
                }
            }
        }
    }

    #[test]
    fn single_photon_untouched_by_beamsplit() {
        let p = pulse(FRAC_PI_2, 1);
        let (out, e) = beamsplit(ProtocolKind::B92, p);
        assert_eq!(out, p);
        assert_eq!(e, EveEntry::default());
        let (out, e) = beamsplit(ProtocolKind::B92, pulse(FRAC_PI_2, 3));
        assert_eq!(out.photons, 2);
        assert_eq!(e, EveEntry::certain(true));
    }

    /// Exhaustive single-pulse analysis of the Alice-basis intercept: for
    /// each Alice bit and Bob bit, the pass probability with and without
    /// Eve's resend, weighted uniformly.
    #[test]
    fn alice_basis_intercept_four_state_analysis() {
        let pass = |sent: bool, bob: bool| -> f64 {
            let d = alice_phase(ProtocolKind::B92, sent, false) - bob_phase(ProtocolKind::B92, bob);
            0.5 * (1.0 + d.cos())
        };
        let mut sifted = 0.0;
        let mut errors = 0.0;
        let mut eve_right = 0.0;
        for a in [false, true] {
            // Eve's outcome distribution for this Alice bit.
            let outcomes: Vec<(f64, bool, bool)> = if a {
                vec![(0.5, true, true), (0.5, false, false)]
            } else {
                vec![(1.0, false, false)]
            };
            for (pe, resend, _certain) in outcomes {
                for b in [false, true] {
                    let w = 0.25 * pe * pass(resend, b);
                    sifted += w;
                    if b != a {
                        errors += w;
                    }
                    if resend == a {
                        eve_right += w;
                    }
                }
            }
        }
        assert!((errors / sifted - 0.25).abs() < 1e-12);
        assert!((eve_right / sifted - 0.75).abs() < 1e-12);
    }

    #[test]
    fn certain_bits_are_true() {
        let mut rng = stream(3, 0);
        for i in 0..2000 {
            let bit = i % 2 == 1;
            let p = pulse(alice_phase(ProtocolKind::B92, bit, false), 1 + (i % 3) as u32);
            let (_, e) = intercept_alice_basis(ProtocolKind::B92, p, &mut rng);
            if let Some((b, Confidence::Certain)) = e.known_bit {
                assert_eq!(b, bit);
            }
            let (_, e) = intercept_bob_basis(p, 1, &mut rng);
            if let Some((b, Confidence::Certain)) = e.known_bit {
                assert_eq!(b, bit);
            }
            let basis = i % 4 >= 2;
            let p = pulse(alice_phase(ProtocolKind::BB84, bit, basis), 1);
            let (_, e) = intercept_alice_basis(ProtocolKind::BB84, p, &mut rng);
            if let Some((b, Confidence::Certain)) = e.known_bit {
                assert_eq!(b, bit);
            }
        }
    }

    #[test]
    fn record_roundtrip() {
        let mut r = EveRecord::default();
        let entries = [
            EveEntry::default(),
            EveEntry::certain(true),
            EveEntry::guessed(false),
            EveEntry {
                known_bit: None,
                suppressed: true,
            },
        ];
        for e in entries {
            r.push(e);
        }
        for (i, e) in entries.iter().enumerate() {
            assert_eq!(r.get(i), *e);
        }
        assert_eq!(r.suppressed_count(), 1);
    }

    #[test]
    fn dark_free_single_photons_never_multi_click() {
        let optics = OpticsConfig::ideal();
        assert_eq!(expected_multi_click_probability(&optics, ProtocolKind::BB84), 0.0);
    }

    #[test]
    fn at_least_two_brute_force() {
        let p = [0.1, 0.5, 0.3, 0.9, 0.0, 0.2];
        let mut direct = 0.0;
        for mask in 0u32..64 {
            if mask.count_ones() < 2 {
                continue;
            }
            let mut w = 1.0;
            for (i, &pi) in p.iter().enumerate() {
                w *= if mask >> i & 1 == 1 { pi } else { 1.0 - pi };
            }
            direct += w;
        }
        assert!((at_least_two(&p) - direct).abs() < 1e-12);
    }

    #[test]
    fn validation() {
        assert!(AttackModel::new(AttackKind::Beamsplit, 1.5).validate(ProtocolKind::B92).is_err());
        assert!(AttackModel::new(AttackKind::InterceptResendBobBasis, 1.0)
            .validate(ProtocolKind::BB84)
            .is_err());
        assert!(AttackModel::new(AttackKind::None, 7.0).validate(ProtocolKind::B92).is_ok());
    }
}
