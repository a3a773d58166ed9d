//! Photon-level simulator and protocol stack for interferometric quantum key
//! distribution over a lossy fiber link.
//!
//! The crate is layered bottom-up:
//!
//! - [`optics`]: laser source, fiber, time-multiplexed interferometers, gated detectors.
//! - [`protocol`]: B92 and BB84 encodings, click interpretation, sifting, and the two stations.
//! - [`adversary`]: eavesdropper strategies and their knowledge records.
//! - [`postprocessing`]: error estimation, block-parity reconciliation, privacy amplification,
//!   authentication and key accounting.
//! - [`analysis`]: closed-form calculators for visibility, decoherence bounds, multi-photon
//!   statistics, rate budgets and optimal detector efficiency.
//! - [`session`]: framed and authenticated public channel, endpoint state machines,
//!   transports, transcripts and replay.
//! - [`config`]: the run configuration shared by the CLI and the browser demo.

pub mod adversary;
pub mod analysis;
pub mod bits;
pub mod config;
pub mod optics;
pub mod postprocessing;
pub mod protocol;
pub mod rng;
pub mod session;

pub use bits::BitString;
