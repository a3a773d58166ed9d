//! Two-party sessions over an authenticated public channel.
//!
//! A session runs Alice's and Bob's endpoints against each other, either on
//! one thread through the loopback, on two threads, or in two processes over
//! TCP. The result carries both endpoint reports, the public transcript and
//! an oracle view that compares the parties' private data.

pub mod endpoint;
pub mod frame;
pub mod link;
pub mod payload;
pub mod transcript;

use std::collections::HashSet;
use std::net::{TcpListener, ToSocketAddrs};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use endpoint::{key_digest, preshared_pool, run_alice, run_bob, EndpointReport, PoolSummary, Status};
pub use frame::{decode_frame, encode_frame, FrameError, MessageType, PublicMessage};
pub use link::{
    accept_tcp, block_on, channel_pair, connect_tcp, ChannelLink, Divergence, Link, LoggedFrame, Loopback,
    LoopbackLink, StreamLink, TransportError,
};
pub use payload::{AbortCode, AbortReason, ParityMessage, Payload, PayloadError, Role, SeedPurpose};
pub use transcript::{merge_logs, replay, PartyResult, ReplayReport, SessionTranscript, TranscriptError};

use crate::adversary::{eve_info_fraction, multi_click_monitor, EveInfo, MultiClickMonitor};
use crate::config::{ConfigError, RunConfig};
use crate::protocol::ClickCounters;

#[derive(Debug, Error)]
pub enum SessionError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{role}: {error}")]
    Transport { role: Role, error: TransportError },
    #[error("public channel hygiene: {0}")]
    Hygiene(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Transcript(#[from] TranscriptError),
}

/// Ground truth that neither party could compute alone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleView {
    pub sifted_bits: usize,
    pub errors: usize,
    pub ber: f64,
    /// Errors on bits whose click came from a dark count alone.
    pub dark_errors: usize,
    pub dark_error_fraction: f64,
    pub duration_s: f64,
    pub sifted_rate_hz: f64,
    pub counters: Option<ClickCounters>,
    pub multi_click: Option<MultiClickMonitor>,
    pub eve: Option<EveInfo>,
    pub final_keys_equal: bool,
    pub alice_sifted: String,
    pub bob_sifted: String,
}

impl OracleView {
    pub fn new(cfg: &RunConfig, alice: &EndpointReport, bob: &EndpointReport) -> Self {
        let comparable = alice.sifted.indices == bob.sifted.indices;
        let (sifted_bits, mismatches) = if comparable {
            (alice.sifted.len(), alice.sifted.bits.mismatches(&bob.sifted.bits))
        } else {
            (0, Vec::new())
        };
        let dark_errors = match &bob.sifted_dark {
            Some(d) if comparable && d.len() == sifted_bits => mismatches.iter().filter(|&&i| d.get(i)).count(),
            _ => 0,
        };
        let errors = mismatches.len();
        let frac = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let duration_s = cfg.duration();
        Self {
            sifted_bits,
            errors,
            ber: frac(errors, sifted_bits),
            dark_errors,
            dark_error_fraction: frac(dark_errors, errors),
            duration_s,
            sifted_rate_hz: if duration_s > 0.0 { sifted_bits as f64 / duration_s } else { 0.0 },
            counters: bob.counters,
            multi_click: bob
                .counters
                .map(|c| multi_click_monitor(c.multi_click, c.pulses, &cfg.optics, cfg.protocol)),
            eve: alice
                .eve
                .as_ref()
                .map(|r| eve_info_fraction(r, &alice.sifted.indices, &alice.sifted.bits)),
            final_keys_equal: alice.final_key == bob.final_key,
            alice_sifted: hex::encode(alice.sifted.bits.to_bytes()),
            bob_sifted: hex::encode(bob.sifted.bits.to_bytes()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SessionReport {
    pub config: RunConfig,
    pub alice: EndpointReport,
    pub bob: EndpointReport,
    pub transcript: SessionTranscript,
    pub oracle: OracleView,
}

impl SessionReport {
    pub fn completed(&self) -> bool {
        self.alice.status.is_completed() && self.bob.status.is_completed()
    }

    /// The first abort reason reported by either side.
    pub fn abort_reason(&self) -> Option<&AbortReason> {
        self.alice.status.abort_reason().or(self.bob.status.abort_reason())
    }

    pub fn oracle_json(&self) -> String {
        serde_json::to_string_pretty(&self.oracle).expect("oracle serializes")
    }
}

/// Fixes the seeds and session id so that every later use of the
/// configuration, including replay, sees the same values.
pub fn resolve(cfg: &RunConfig) -> Result<RunConfig, ConfigError> {
    cfg.validate()?;
    let mut c = cfg.clone();
    c.seeds = Some(cfg.seeds());
    c.session.session_id = Some(cfg.session_id());
    Ok(c)
}

fn transport(role: Role) -> impl FnOnce(TransportError) -> SessionError {
    move |error| SessionError::Transport { role, error }
}

fn assemble(
    cfg: RunConfig,
    alice: EndpointReport,
    bob: EndpointReport,
    frames: Vec<LoggedFrame>,
) -> Result<SessionReport, SessionError> {
    let transcript = SessionTranscript {
        config: cfg.clone(),
        frames,
        counters: bob.counters,
        results: vec![PartyResult::from_report(&alice), PartyResult::from_report(&bob)],
    };
    let secrets = [&alice.sifted.bits, &bob.sifted.bits].map(|b| b.to_bytes());
    audit(&transcript.frames, &secrets)?;
    let oracle = OracleView::new(&cfg, &alice, &bob);
    Ok(SessionReport {
        config: cfg,
        alice,
        bob,
        transcript,
        oracle,
    })
}

/// Both endpoints on the current thread.
pub fn run_loopback(cfg: &RunConfig) -> Result<SessionReport, SessionError> {
    let cfg = resolve(cfg)?;
    let lb = Loopback::new();
    let (mut a, mut b) = lb.links();
    let (ra, rb) = lb.run(run_alice(&cfg, &mut a), run_bob(&cfg, &mut b));
    let alice = ra.map_err(transport(Role::Alice))?;
    let bob = rb.map_err(transport(Role::Bob))?;
    let log = lb.record().log;
    assemble(cfg, alice, bob, log)
}

fn timeout(cfg: &RunConfig) -> Duration {
    Duration::from_secs_f64(cfg.session.timeout_s)
}

/// Each endpoint on its own thread, joined by in-memory channels.
pub fn run_threaded(cfg: &RunConfig) -> Result<SessionReport, SessionError> {
    let cfg = resolve(cfg)?;
    let (mut a, mut b) = channel_pair(timeout(&cfg));
    let (ra, rb) = std::thread::scope(|s| {
        let c = &cfg;
        let alice = s.spawn(move || block_on(run_alice(c, &mut a)));
        let bob = s.spawn(move || block_on(run_bob(c, &mut b)));
        (
            alice.join().expect("alice thread panicked"),
            bob.join().expect("bob thread panicked"),
        )
    });
    let alice = ra.map_err(transport(Role::Alice))?;
    let bob = rb.map_err(transport(Role::Bob))?;
    let frames = merge_logs(&alice.log, &bob.log);
    assemble(cfg, alice, bob, frames)
}

/// Alice's process of a two-process session.
pub fn serve_alice(cfg: &RunConfig, listener: &TcpListener) -> Result<EndpointReport, SessionError> {
    let cfg = resolve(cfg)?;
    let mut link = accept_tcp(listener, timeout(&cfg)).map_err(transport(Role::Alice))?;
    let r = block_on(run_alice(&cfg, &mut link)).map_err(transport(Role::Alice))?;
    audit(&r.log, &[r.sifted.bits.to_bytes()])?;
    Ok(r)
}

/// Bob's process of a two-process session.
pub fn connect_bob<A: ToSocketAddrs>(cfg: &RunConfig, addr: A) -> Result<EndpointReport, SessionError> {
    let cfg = resolve(cfg)?;
    let mut link = connect_tcp(addr, timeout(&cfg)).map_err(transport(Role::Bob))?;
    let r = block_on(run_bob(&cfg, &mut link)).map_err(transport(Role::Bob))?;
    audit(&r.log, &[r.sifted.bits.to_bytes()])?;
    Ok(r)
}

const WINDOW: usize = 8;

/// Checks that every frame parses under its message schema and that no
/// payload contains any 8-byte run of a sifted key's packed bytes.
pub fn audit(frames: &[LoggedFrame], secrets: &[Vec<u8>]) -> Result<(), SessionError> {
    let windows: HashSet<&[u8]> = secrets.iter().flat_map(|s| s.windows(WINDOW)).collect();
    for (i, f) in frames.iter().enumerate() {
        let m = decode_frame(&f.frame).map_err(|e| SessionError::Hygiene(format!("frame {i}: {e}")))?;
        Payload::decode(m.msg_type, &m.payload).map_err(|e| SessionError::Hygiene(format!("frame {i}: {e}")))?;
        if m.payload.windows(WINDOW).any(|w| windows.contains(w)) {
            return Err(SessionError::Hygiene(format!(
                "frame {i} ({:?}) carries sifted key bytes",
                m.msg_type
            )));
        }
    }
    Ok(())
}
