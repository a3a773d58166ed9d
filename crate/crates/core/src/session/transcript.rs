//! Session transcripts and replay.
//!
//! A transcript is a JSON Lines file: one `config` record, then one `frame`
//! record per public frame, then the detector `counters` and one `result`
//! record per party. It holds only public data plus each party's final key
//! digest. Replay reruns both endpoints from the recorded configuration and
//! feeds them the recorded frames, flagging any frame they would not have
//! produced themselves.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::endpoint::{run_alice, run_bob, EndpointReport, Status};
use super::link::{direction_from, Divergence, LoggedFrame, Loopback, TransportError};
use super::payload::Role;
use crate::config::RunConfig;
use crate::postprocessing::{Direction, KeyAccounting};
use crate::protocol::ClickCounters;

#[derive(Debug, Error)]
pub enum TranscriptError {
    #[error("transcript I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Json { line: usize, message: String },
    #[error("transcript has no config record")]
    MissingConfig,
    #[error("no session: the transcript holds no frames")]
    NoSession,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartyResult {
    pub role: Role,
    #[serde(flatten)]
    pub status: Status,
    /// SHA-256 of the final key's length and bits.
    pub digest: String,
    pub final_bits: usize,
    pub accounting: KeyAccounting,
}

impl PartyResult {
    pub fn from_report(r: &EndpointReport) -> Self {
        Self {
            role: r.role,
            status: r.status.clone(),
            digest: r.digest(),
            final_bits: r.final_key.len(),
            accounting: r.accounting,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "lowercase")]
enum Record {
    Config { config: Box<RunConfig> },
    Frame(LoggedFrame),
    Counters { counters: ClickCounters },
    Result(PartyResult),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionTranscript {
    pub config: RunConfig,
    pub frames: Vec<LoggedFrame>,
    pub counters: Option<ClickCounters>,
    pub results: Vec<PartyResult>,
}

impl SessionTranscript {
    pub fn result(&self, role: Role) -> Option<&PartyResult> {
        self.results.iter().find(|r| r.role == role)
    }

    /// A transcript built from one endpoint's own log, for two-process runs.
    pub fn from_endpoint(config: RunConfig, r: &EndpointReport) -> Self {
        Self {
            config,
            frames: r.log.clone(),
            counters: r.counters,
            results: vec![PartyResult::from_report(r)],
        }
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<(), TranscriptError> {
        let mut line = |rec: &Record| -> Result<(), TranscriptError> {
            serde_json::to_writer(&mut w, rec).map_err(|e| TranscriptError::Json {
                line: 0,
                message: e.to_string(),
            })?;
            w.write_all(b"\n")?;
            Ok(())
        };
        line(&Record::Config {
            config: Box::new(self.config.clone()),
        })?;
        for f in &self.frames {
            line(&Record::Frame(f.clone()))?;
        }
        if let Some(c) = self.counters {
            line(&Record::Counters { counters: c })?;
        }
        for r in &self.results {
            line(&Record::Result(r.clone()))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("JSON is UTF-8")
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self, TranscriptError> {
        let mut config = None;
        let mut frames = Vec::new();
        let mut counters = None;
        let mut results = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: Record = serde_json::from_str(&line).map_err(|e| TranscriptError::Json {
                line: i + 1,
                message: e.to_string(),
            })?;
            match rec {
                Record::Config { config: c } => config = Some(*c),
                Record::Frame(f) => frames.push(f),
                Record::Counters { counters: c } => counters = Some(c),
                Record::Result(p) => results.push(p),
            }
        }
        Ok(Self {
            config: config.ok_or(TranscriptError::MissingConfig)?,
            frames,
            counters,
            results,
        })
    }

    pub fn from_jsonl(s: &str) -> Result<Self, TranscriptError> {
        Self::read_jsonl(s.as_bytes())
    }
}

/// Frames in Alice's order, followed by any frames Bob sent that Alice never read.
pub fn merge_logs(alice: &[LoggedFrame], bob: &[LoggedFrame]) -> Vec<LoggedFrame> {
    let from_bob = |f: &&LoggedFrame| f.direction == direction_from(Role::Bob);
    let seen = alice.iter().filter(from_bob).count();
    let mut out = alice.to_vec();
    out.extend(bob.iter().filter(from_bob).skip(seen).cloned());
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayParty {
    pub role: Role,
    /// `None` when the endpoint ended on a transport error.
    pub status: Option<Status>,
    /// The status the transcript recorded for this party, if any.
    pub recorded_status: Option<Status>,
    pub transport_error: Option<TransportError>,
    pub digest: Option<String>,
    /// Whether the digest equals the recorded one; `None` when either is missing.
    pub digest_matches: Option<bool>,
}

impl ReplayParty {
    fn new(role: Role, r: Result<EndpointReport, TransportError>, t: &SessionTranscript) -> Self {
        let recorded_status = t.result(role).map(|p| p.status.clone());
        match r {
            Ok(r) => {
                let digest = r.digest();
                Self {
                    role,
                    status: Some(r.status),
                    recorded_status,
                    transport_error: None,
                    digest_matches: t.result(role).map(|p| p.digest == digest),
                    digest: Some(digest),
                }
            }
            Err(e) => Self {
                role,
                status: None,
                recorded_status,
                transport_error: Some(e),
                digest: None,
                digest_matches: None,
            },
        }
    }

    pub fn completed(&self) -> bool {
        self.status.as_ref().is_some_and(Status::is_completed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayReport {
    pub frames: usize,
    pub divergences: Vec<Divergence>,
    /// Recorded frames per direction that the replay never reached.
    pub unused_frames: [usize; 2],
    pub alice: ReplayParty,
    pub bob: ReplayParty,
}

impl ReplayReport {
    /// True when every recorded frame was reproduced, both endpoints ran to
    /// their recorded end and every recorded digest matched.
    pub fn faithful(&self) -> bool {
        let party_ok = |p: &ReplayParty| {
            p.transport_error.is_none()
                && p.digest_matches != Some(false)
                && match (&p.status, &p.recorded_status) {
                    (Some(s), Some(r)) => s == r,
                    _ => true,
                }
        };
        self.divergences.is_empty() && self.unused_frames == [0, 0] && party_ok(&self.alice) && party_ok(&self.bob)
    }
}

/// Reruns both endpoints against the recorded frames.
pub fn replay(t: &SessionTranscript) -> Result<ReplayReport, TranscriptError> {
    if t.frames.is_empty() {
        return Err(TranscriptError::NoSession);
    }
    let lb = Loopback::scripted(&t.frames);
    let (mut a, mut b) = lb.links();
    let cfg = &t.config;
    let (ra, rb) = lb.run(run_alice(cfg, &mut a), run_bob(cfg, &mut b));
    let record = lb.record();
    Ok(ReplayReport {
        frames: t.frames.len(),
        divergences: record.divergences,
        unused_frames: [
            record.unused_script[Direction::AliceToBob as usize],
            record.unused_script[Direction::BobToAlice as usize],
        ],
        alice: ReplayParty::new(Role::Alice, ra, t),
        bob: ReplayParty::new(Role::Bob, rb, t),
    })
}
