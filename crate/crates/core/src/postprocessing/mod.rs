//! From sifted key to final key: error estimation, two-dimensional
//! block-parity reconciliation, privacy amplification, authentication of the
//! public channel, and exact bookkeeping of where every sifted bit went.

pub mod amplify;
pub mod auth;
pub mod ber;
pub mod reconcile;

pub use amplify::{privacy_amplify, AmplifyError, HashDescriptor};
pub use auth::{authenticate, stage7_replenish, verify, AuthError, AuthKeyPool, Direction, MessageKey, SLOT_BITS};
pub use ber::{estimate_ber, BerError, BerEstimate, BerMode};
pub use reconcile::{
    reconcile_block_parity, Decoder, ParityBlockReport, PassDisclosure, ReconcileError, ReconcileOutcome,
    ReconcileParams, ReconcileStats, Reconciler,
};

use serde::{Deserialize, Serialize};

use crate::bits::BitString;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaterialRole {
    Sifted,
    Reconciled,
    Amplified,
}

/// A key at some stage of distillation, with the public disclosures made
/// about it so far.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyMaterial {
    pub bits: BitString,
    pub role: MaterialRole,
    pub disclosed_parity_count: u64,
    pub session_id: u64,
    pub hash: Option<HashDescriptor>,
}

impl KeyMaterial {
    pub fn sifted(bits: BitString, session_id: u64) -> Self {
        Self {
            bits,
            role: MaterialRole::Sifted,
            disclosed_parity_count: 0,
            session_id,
            hash: None,
        }
    }

    pub fn disclose(&mut self, n: u64) {
        self.disclosed_parity_count += n;
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }
}

/// Where every sifted bit went. The identity
/// `final + refill + leak + margin + dropped + sacrificed + discarded = sifted`
/// holds exactly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct KeyAccounting {
    pub sifted: u64,
    /// Bits consumed by error-rate estimation.
    pub sacrificed: u64,
    /// Bits removed by the row-and-column drop step.
    pub dropped: u64,
    /// Reconciled bits entering privacy amplification.
    pub reconciled: u64,
    /// Leak charged against the reconciled key (capped at its length).
    pub leak_charged: u64,
    /// Leak that was owed; exceeds `leak_charged` only when the key was too short.
    pub leak_owed: u64,
    /// Configured margin plus the eavesdropper-knowledge bound actually applied.
    pub margin: u64,
    pub amplified: u64,
    /// Bits moved into the authentication pool.
    pub refill: u64,
    pub final_key: u64,
    /// Bits thrown away because the session aborted.
    pub discarded: u64,
    /// Every parity published on the public channel, charged or masked.
    pub disclosed_parities: u64,
}

impl KeyAccounting {
    pub fn balanced(&self) -> bool {
        self.final_key + self.refill + self.leak_charged + self.margin + self.dropped + self.sacrificed + self.discarded
            == self.sifted
            && self.sifted == self.sacrificed + self.dropped + self.reconciled + self.discarded
            && self.amplified == self.final_key + self.refill
    }

    /// Moves every bit not yet sacrificed or dropped into `discarded`.
    pub fn discard(&mut self) {
        self.discarded = self.sifted - self.sacrificed - self.dropped;
        self.reconciled = 0;
        self.leak_charged = 0;
        self.margin = 0;
        self.amplified = 0;
        self.refill = 0;
        self.final_key = 0;
    }

    /// Splits `reconciled` into leak, margin and amplified output; the leak
    /// is charged first, then the margin, and whatever remains is amplified.
    pub fn settle(&mut self, leak: u64, margin: u64) {
        self.leak_owed = leak;
        self.leak_charged = leak.min(self.reconciled);
        self.margin = margin.min(self.reconciled - self.leak_charged);
        self.amplified = self.reconciled - self.leak_charged - self.margin;
    }
}

/// Eavesdropper knowledge bound from the linear intercept-resend model:
/// every 25% of errors buys Eve 75% of the bits, so `min(1, 3·BER)·n`.
pub fn eve_knowledge_bound(ber: f64, n: u64) -> u64 {
    ((3.0 * ber.max(0.0)).min(1.0) * n as f64 - 1e-9).ceil().max(0.0) as u64
}
