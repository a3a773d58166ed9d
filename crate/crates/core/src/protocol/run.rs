//! One complete session between the two stations, driven through the
//! authenticated public channel on a single thread.

use super::{ClickCounters, ProtocolKind, SiftedKey};
use crate::adversary::AttackModel;
use crate::config::RunConfig;
use crate::optics::OpticsConfig;
use crate::rng::Seeds;
use crate::session::{run_loopback, SessionError, SessionReport};

#[derive(Debug, Clone)]
pub struct SessionRun {
    pub alice: SiftedKey,
    pub bob: SiftedKey,
    /// Oracle: positions where the sifted keys disagree.
    pub error_positions: Vec<usize>,
    pub counters: ClickCounters,
    pub report: SessionReport,
}

impl SessionRun {
    pub fn sifted_ber(&self) -> f64 {
        if self.alice.is_empty() {
            0.0
        } else {
            self.error_positions.len() as f64 / self.alice.len() as f64
        }
    }
}

/// Runs `pulses` clock ticks of `kind` with default post-processing.
pub fn run_session(
    kind: ProtocolKind,
    pulses: u64,
    optics: &OpticsConfig,
    attack: Option<AttackModel>,
    seeds: Seeds,
) -> Result<SessionRun, SessionError> {
    let cfg = RunConfig {
        protocol: kind,
        pulses: Some(pulses),
        seeds: Some(seeds),
        optics: *optics,
        attack: attack.unwrap_or_else(AttackModel::none),
        ..RunConfig::default()
    };
    let report = run_loopback(&cfg)?;
    let alice = report.alice.sifted.clone();
    let bob = report.bob.sifted.clone();
    let error_positions = if alice.indices == bob.indices {
        alice.bits.mismatches(&bob.bits)
    } else {
        Vec::new()
    };
    Ok(SessionRun {
        alice,
        bob,
        error_positions,
        counters: report.bob.counters.unwrap_or_default(),
        report,
    })
}
