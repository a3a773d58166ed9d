//! Typed payloads. No variant has a field for key bit values: the public
//! channel carries clock indices, bases, parities, seeds and lengths only.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::frame::MessageType;
use crate::bits::BitString;
use crate::config::Negotiated;
use crate::postprocessing::{HashDescriptor, ParityBlockReport};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PayloadError {
    #[error("payload of {0:?} is truncated")]
    Truncated(MessageType),
    #[error("payload of {0:?} has {1} trailing bytes")]
    Trailing(MessageType, usize),
    #[error("payload of {0:?} is malformed: {1}")]
    Malformed(MessageType, String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Alice,
    Bob,
}

impl Role {
    pub fn peer(self) -> Self {
        match self {
            Role::Alice => Role::Bob,
            Role::Bob => Role::Alice,
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::Alice => "alice",
            Role::Bob => "bob",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SeedPurpose {
    /// Chooses the pairs for error estimation.
    Sample = 0,
    /// Drives the reconciliation permutations, drops and verification subsets.
    Reconcile = 1,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParityMessage {
    /// Parities of the estimation pairs.
    Estimate(BitString),
    /// Verification parities of one reconciliation pass, possibly one-time padded.
    Check { pass: u32, encrypted: bool, bits: BitString },
    /// Bob's verdict on a pass.
    Verdict { pass: u32, agreed: bool },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AbortCode {
    ErrorRateExceedsThreshold = 1,
    AuthenticationFailed = 2,
    PoolExhausted = 3,
    ReconciliationFailed = 4,
    NegotiationMismatch = 5,
    ProtocolViolation = 6,
}

impl AbortCode {
    fn from_u8(b: u8) -> Option<Self> {
        use AbortCode::*;
        [
            ErrorRateExceedsThreshold,
            AuthenticationFailed,
            PoolExhausted,
            ReconciliationFailed,
            NegotiationMismatch,
            ProtocolViolation,
        ]
        .into_iter()
        .find(|c| *c as u8 == b)
    }

    pub fn text(self) -> &'static str {
        match self {
            AbortCode::ErrorRateExceedsThreshold => "error rate exceeds threshold",
            AbortCode::AuthenticationFailed => "authentication failed",
            AbortCode::PoolExhausted => "authentication pool exhausted",
            AbortCode::ReconciliationFailed => "reconciliation failed",
            AbortCode::NegotiationMismatch => "negotiation mismatch",
            AbortCode::ProtocolViolation => "protocol violation",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AbortReason {
    pub code: AbortCode,
    pub detail: String,
}

impl AbortReason {
    pub fn new(code: AbortCode, detail: impl Into<String>) -> Self {
        Self {
            code,
            detail: detail.into(),
        }
    }
}

impl fmt::Display for AbortReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.detail.is_empty() {
            f.write_str(self.code.text())
        } else {
            write!(f, "{} ({})", self.code.text(), self.detail)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Hello { role: Role, config_digest: [u8; 32] },
    Params(Negotiated),
    IndexList(Vec<u64>),
    BasisList(BitString),
    ParityReport(ParityBlockReport),
    PermutationSeed { purpose: SeedPurpose, seed: u64 },
    HashSeed(HashDescriptor),
    VerifyParity(ParityMessage),
    Replenish { bits: u64 },
    Abort(AbortReason),
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_be_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_be_bytes());
    }
    fn bits(&mut self, b: &BitString) {
        self.u32(b.len() as u32);
        self.0.extend_from_slice(&b.to_bytes());
    }
    fn bytes(&mut self, b: &[u8]) {
        self.u32(b.len() as u32);
        self.0.extend_from_slice(b);
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    at: usize,
    ty: MessageType,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], PayloadError> {
        if self.buf.len() - self.at < n {
            return Err(PayloadError::Truncated(self.ty));
        }
        let s = &self.buf[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8, PayloadError> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32, PayloadError> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64, PayloadError> {
        Ok(u64::from_be_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn flag(&mut self) -> Result<bool, PayloadError> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            b => Err(self.malformed(format!("flag byte {b}"))),
        }
    }
    fn bits(&mut self) -> Result<BitString, PayloadError> {
        let len = self.u32()? as usize;
        let raw = self.take(len.div_ceil(8))?;
        BitString::from_bytes(raw, len).ok_or_else(|| self.malformed("bits beyond declared length".into()))
    }
    fn bytes(&mut self) -> Result<&'a [u8], PayloadError> {
        let len = self.u32()? as usize;
        self.take(len)
    }
    fn malformed(&self, why: String) -> PayloadError {
        PayloadError::Malformed(self.ty, why)
    }
    fn finish(self) -> Result<(), PayloadError> {
        match self.buf.len() - self.at {
            0 => Ok(()),
            n => Err(PayloadError::Trailing(self.ty, n)),
        }
    }
}

impl Payload {
    pub fn msg_type(&self) -> MessageType {
        match self {
            Payload::Hello { .. } => MessageType::Hello,
            Payload::Params(_) => MessageType::Params,
            Payload::IndexList(_) => MessageType::IndexList,
            Payload::BasisList(_) => MessageType::BasisList,
            Payload::ParityReport(_) => MessageType::ParityReport,
            Payload::PermutationSeed { .. } => MessageType::PermutationSeed,
            Payload::HashSeed(_) => MessageType::HashSeed,
            Payload::VerifyParity(_) => MessageType::VerifyParity,
            Payload::Replenish { .. } => MessageType::Replenish,
            Payload::Abort(_) => MessageType::Abort,
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer(Vec::new());
        match self {
            Payload::Hello { role, config_digest } => {
                w.u8(*role as u8);
                w.0.extend_from_slice(config_digest);
            }
            Payload::Params(p) => w.bytes(&serde_json::to_vec(p).expect("parameters serialize")),
            Payload::IndexList(ix) => {
                w.u32(ix.len() as u32);
                for &i in ix {
                    w.u64(i);
                }
            }
            Payload::BasisList(b) => w.bits(b),
            Payload::ParityReport(r) => {
                w.u32(r.pass);
                w.u32(r.rows as u32);
                w.u32(r.cols as u32);
                w.bits(&r.row_parities);
                w.bits(&r.col_parities);
            }
            Payload::PermutationSeed { purpose, seed } => {
                w.u8(*purpose as u8);
                w.u64(*seed);
            }
            Payload::HashSeed(h) => {
                w.u64(h.seed);
                w.u64(h.input_len as u64);
                w.u64(h.output_len as u64);
            }
            Payload::VerifyParity(p) => match p {
                ParityMessage::Estimate(bits) => {
                    w.u8(0);
                    w.bits(bits);
                }
                ParityMessage::Check { pass, encrypted, bits } => {
                    w.u8(1);
                    w.u32(*pass);
                    w.u8(*encrypted as u8);
                    w.bits(bits);
                }
                ParityMessage::Verdict { pass, agreed } => {
                    w.u8(2);
                    w.u32(*pass);
                    w.u8(*agreed as u8);
                }
            },
            Payload::Replenish { bits } => w.u64(*bits),
            Payload::Abort(r) => {
                w.u8(r.code as u8);
                w.bytes(r.detail.as_bytes());
            }
        }
        w.0
    }

    pub fn decode(ty: MessageType, buf: &[u8]) -> Result<Self, PayloadError> {
        let mut r = Reader { buf, at: 0, ty };
        let p = match ty {
            MessageType::Hello => {
                let role = match r.u8()? {
                    0 => Role::Alice,
                    1 => Role::Bob,
                    b => return Err(r.malformed(format!("role {b}"))),
                };
                let config_digest = r.take(32)?.try_into().expect("32 bytes");
                Payload::Hello { role, config_digest }
            }
            MessageType::Params => {
                let body = r.bytes()?;
                Payload::Params(serde_json::from_slice(body).map_err(|e| r.malformed(e.to_string()))?)
            }
            MessageType::IndexList => {
                let n = r.u32()? as usize;
                if n > (buf.len() - 4) / 8 {
                    return Err(PayloadError::Truncated(ty));
                }
                Payload::IndexList((0..n).map(|_| r.u64()).collect::<Result<_, _>>()?)
            }
            MessageType::BasisList => Payload::BasisList(r.bits()?),
            MessageType::ParityReport => {
                let pass = r.u32()?;
                let rows = r.u32()? as usize;
                let cols = r.u32()? as usize;
                Payload::ParityReport(ParityBlockReport {
                    rows,
                    cols,
                    pass,
                    row_parities: r.bits()?,
                    col_parities: r.bits()?,
                })
            }
            MessageType::PermutationSeed => {
                let purpose = match r.u8()? {
                    0 => SeedPurpose::Sample,
                    1 => SeedPurpose::Reconcile,
                    b => return Err(r.malformed(format!("seed purpose {b}"))),
                };
                Payload::PermutationSeed { purpose, seed: r.u64()? }
            }
            MessageType::HashSeed => Payload::HashSeed(HashDescriptor {
                seed: r.u64()?,
                input_len: r.u64()? as usize,
                output_len: r.u64()? as usize,
            }),
            MessageType::VerifyParity => Payload::VerifyParity(match r.u8()? {
                0 => ParityMessage::Estimate(r.bits()?),
                1 => ParityMessage::Check {
                    pass: r.u32()?,
                    encrypted: r.flag()?,
                    bits: r.bits()?,
                },
                2 => ParityMessage::Verdict {
                    pass: r.u32()?,
                    agreed: r.flag()?,
                },
                b => return Err(r.malformed(format!("parity kind {b}"))),
            }),
            MessageType::Replenish => Payload::Replenish { bits: r.u64()? },
            MessageType::Abort => {
                let code = r.u8()?;
                let code = AbortCode::from_u8(code).ok_or_else(|| r.malformed(format!("abort code {code}")))?;
                let detail = String::from_utf8(r.bytes()?.to_vec()).map_err(|e| r.malformed(e.to_string()))?;
                Payload::Abort(AbortReason { code, detail })
            }
        };
        r.finish()?;
        Ok(p)
    }
}
