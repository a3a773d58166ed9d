//! Alice's and Bob's endpoints.
//!
//! Each endpoint is a sequential program over a [`Link`]: handshake, light,
//! sifting, error estimation, reconciliation passes, privacy amplification
//! and pool replenishment. Every message after `Hello` carries a tag keyed by
//! fresh pool bits. A failed check on either side ends the session with an
//! authenticated `Abort` and no key.

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::frame::{decode_frame, encode_frame, FrameError, MessageType, PublicMessage};
use super::link::{direction_from, Link, LoggedFrame, TransportError};
use super::payload::{AbortCode, AbortReason, ParityMessage, Payload, Role, SeedPurpose};
use crate::adversary::EveRecord;
use crate::bits::BitString;
use crate::config::{Negotiated, RunConfig};
use crate::postprocessing::ber::{pair_parities, rate_from_pairs, remaining_after, sample_pairs};
use crate::postprocessing::{
    eve_knowledge_bound, privacy_amplify, stage7_replenish, verify, AuthError, AuthKeyPool, BerEstimate, Direction,
    HashDescriptor, KeyAccounting, KeyMaterial, SLOT_BITS, PassDisclosure, ReconcileStats, Reconciler,
};
use crate::protocol::{alice_sift, bob_sift, AliceStation, BobReport, BobStation, ClickCounters, ProtocolKind, SiftedKey};
use crate::rng::{stream, streams};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum Status {
    Completed,
    Aborted { by: Role, reason: AbortReason },
}

impl Status {
    pub fn is_completed(&self) -> bool {
        matches!(self, Status::Completed)
    }

    pub fn abort_reason(&self) -> Option<&AbortReason> {
        match self {
            Status::Aborted { reason, .. } => Some(reason),
            Status::Completed => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PoolSummary {
    pub initial_bits: usize,
    pub consumed_bits: usize,
    pub refilled_bits: usize,
}

/// Everything one endpoint knows at the end of a session. `sifted`, `eve`
/// and `sifted_dark` are private or oracle data and never leave the process
/// except in the oracle sidecar.
#[derive(Debug, Clone)]
pub struct EndpointReport {
    pub role: Role,
    pub status: Status,
    pub sifted: SiftedKey,
    pub ber: Option<BerEstimate>,
    pub reconcile: Option<ReconcileStats>,
    pub accounting: KeyAccounting,
    pub hash: Option<HashDescriptor>,
    pub final_key: BitString,
    pub pool: PoolSummary,
    /// Frames sent and received, in local order.
    pub log: Vec<LoggedFrame>,
    /// Alice: the eavesdropper's record of the pulses it touched.
    pub eve: Option<EveRecord>,
    /// Bob: detector statistics.
    pub counters: Option<ClickCounters>,
    /// Bob: whether each sifted bit came from a dark count alone.
    pub sifted_dark: Option<BitString>,
}

impl EndpointReport {
    pub fn digest(&self) -> String {
        key_digest(&self.final_key)
    }
}

/// SHA-256 over the bit length and the packed bits, in hex.
pub fn key_digest(key: &BitString) -> String {
    let mut h = Sha256::new();
    h.update((key.len() as u64).to_be_bytes());
    h.update(key.to_bytes());
    hex::encode(h.finalize())
}

/// The pre-shared authentication secret both parties start from.
pub fn preshared_pool(cfg: &RunConfig) -> AuthKeyPool {
    let s = cfg.seeds();
    let mut rng = stream(s.alice ^ s.bob.rotate_left(17), streams::PREPARED_POOL);
    AuthKeyPool::new(BitString::random(cfg.postprocessing.auth_pool_bits, &mut rng))
}

#[derive(Debug)]
enum Fault {
    Transport(TransportError),
    Local(AbortReason),
    Peer(AbortReason),
}

fn local(code: AbortCode, detail: impl Into<String>) -> Fault {
    Fault::Local(AbortReason::new(code, detail))
}

fn violation(detail: impl std::fmt::Display) -> Fault {
    local(AbortCode::ProtocolViolation, detail.to_string())
}

fn pool_fault(e: AuthError) -> Fault {
    local(AbortCode::PoolExhausted, e.to_string())
}

fn unexpected(got: &Payload, wanted: &str) -> Fault {
    violation(format!("expected {wanted}, received {:?}", got.msg_type()))
}

struct Channel<'a, L> {
    link: &'a mut L,
    role: Role,
    session_id: u64,
    pool: AuthKeyPool,
    initial_pool: usize,
    send_seq: u32,
    recv_seq: u32,
    log: Vec<LoggedFrame>,
}

impl<'a, L: Link> Channel<'a, L> {
    fn new(link: &'a mut L, role: Role, session_id: u64, pool: AuthKeyPool) -> Self {
        let initial_pool = pool.len();
        Self {
            link,
            role,
            session_id,
            pool,
            initial_pool,
            send_seq: 0,
            recv_seq: 0,
            log: Vec::new(),
        }
    }

    fn out(&self) -> Direction {
        direction_from(self.role)
    }

    fn inbound(&self) -> Direction {
        direction_from(self.role.peer())
    }

    async fn transmit(&mut self, m: PublicMessage) -> Result<(), Fault> {
        let f = encode_frame(&m);
        self.log.push(LoggedFrame::new(self.out(), f.clone()));
        self.link.send_frame(f).await.map_err(Fault::Transport)?;
        self.send_seq += 1;
        Ok(())
    }

    async fn send_hello(&mut self, digest: [u8; 32]) -> Result<(), Fault> {
        let p = Payload::Hello {
            role: self.role,
            config_digest: digest,
        };
        let mut m = PublicMessage::new(MessageType::Hello, self.session_id, self.send_seq, p.encode());
        m.auth_tag = m.checksum();
        self.transmit(m).await
    }

    async fn send(&mut self, p: Payload) -> Result<(), Fault> {
        let reserve = !matches!(p, Payload::Abort(_));
        self.send_reserving(reserve, 0, |_| Ok(p)).await
    }

    /// Draws the tag key first, then lets `build` draw `pad_bits` of pad.
    async fn send_with(
        &mut self,
        pad_bits: usize,
        build: impl FnOnce(&mut AuthKeyPool) -> Result<Payload, AuthError>,
    ) -> Result<(), Fault> {
        self.send_reserving(true, pad_bits, build).await
    }

    /// With `reserve`, one key per direction is held back so that an `Abort`
    /// can always be authenticated.
    async fn send_reserving(
        &mut self,
        reserve: bool,
        pad_bits: usize,
        build: impl FnOnce(&mut AuthKeyPool) -> Result<Payload, AuthError>,
    ) -> Result<(), Fault> {
        let out = self.out();
        let needed = 2 + pad_bits.div_ceil(SLOT_BITS) as u64;
        if reserve && self.pool.remaining_slots(out) < needed {
            return Err(local(AbortCode::PoolExhausted, "authentication pool is down to its reserve"));
        }
        let key = self.pool.next_key(out).map_err(pool_fault)?;
        let p = build(&mut self.pool).map_err(pool_fault)?;
        let mut m = PublicMessage::new(p.msg_type(), self.session_id, self.send_seq, p.encode());
        m.auth_tag = key.tag(&m.authenticated_bytes());
        self.transmit(m).await
    }

    async fn recv_message(&mut self) -> Result<PublicMessage, Fault> {
        let f = self.link.recv_frame().await.map_err(Fault::Transport)?;
        self.log.push(LoggedFrame::new(self.inbound(), f.clone()));
        decode_frame(&f).map_err(|e| match e {
            FrameError::Version(_) => local(AbortCode::NegotiationMismatch, e.to_string()),
            _ => violation(e),
        })
    }

    fn check_header(&mut self, m: &PublicMessage) -> Result<(), Fault> {
        if m.session_id != self.session_id {
            return Err(violation(format!("session id {:016x}", m.session_id)));
        }
        if m.sequence != self.recv_seq {
            return Err(violation(format!("sequence {} where {} was due", m.sequence, self.recv_seq)));
        }
        self.recv_seq += 1;
        Ok(())
    }

    async fn recv_hello(&mut self) -> Result<(Role, [u8; 32]), Fault> {
        let m = self.recv_message().await?;
        if m.msg_type == MessageType::Abort {
            return Err(self.accept(m).err().unwrap_or_else(|| violation("Abort without a reason")));
        }
        if m.msg_type != MessageType::Hello {
            return Err(violation(format!("expected Hello, received {:?}", m.msg_type)));
        }
        if m.auth_tag != m.checksum() {
            return Err(local(AbortCode::AuthenticationFailed, "Hello checksum"));
        }
        self.check_header(&m)?;
        match Payload::decode(m.msg_type, &m.payload).map_err(violation)? {
            Payload::Hello { role, config_digest } => Ok((role, config_digest)),
            other => Err(unexpected(&other, "Hello")),
        }
    }

    async fn recv(&mut self) -> Result<Payload, Fault> {
        let m = self.recv_message().await?;
        if m.msg_type == MessageType::Hello {
            return Err(violation("unexpected Hello"));
        }
        self.accept(m)
    }

    fn accept(&mut self, m: PublicMessage) -> Result<Payload, Fault> {
        let dir = self.inbound();
        let ok = verify(&m.authenticated_bytes(), m.auth_tag, &mut self.pool, dir).map_err(pool_fault)?;
        if !ok {
            return Err(local(
                AbortCode::AuthenticationFailed,
                format!("{:?} #{}", m.msg_type, m.sequence),
            ));
        }
        self.check_header(&m)?;
        match Payload::decode(m.msg_type, &m.payload).map_err(violation)? {
            Payload::Abort(r) => Err(Fault::Peer(r)),
            p => Ok(p),
        }
    }

    fn pool_summary(&self) -> PoolSummary {
        PoolSummary {
            initial_bits: self.initial_pool,
            consumed_bits: self.pool.consumed_bits(),
            refilled_bits: self.pool.refilled_bits(),
        }
    }
}

#[derive(Default)]
struct Work {
    sifted: SiftedKey,
    ber: Option<BerEstimate>,
    reconcile: Option<ReconcileStats>,
    accounting: KeyAccounting,
    hash: Option<HashDescriptor>,
    final_key: BitString,
    eve: Option<EveRecord>,
    counters: Option<ClickCounters>,
    sifted_dark: Option<BitString>,
}

/// Leak, margin and amplified length once reconciliation has finished.
fn settle(w: &mut Work, stats: &ReconcileStats, reconciled: usize, ber: f64, neg: &Negotiated) {
    let post = &neg.postprocessing;
    let a = &mut w.accounting;
    a.dropped = stats.dropped;
    a.reconciled = reconciled as u64;
    a.disclosed_parities = stats.block_parities + stats.verify_parities;
    let masked = if post.encrypt_parities { stats.verify_parities } else { 0 };
    let leak = stats.leak_charged - masked;
    let bound = if post.eve_bound {
        eve_knowledge_bound(ber, reconciled as u64)
    } else {
        0
    };
    a.settle(leak, post.security_margin + bound);
}

fn amplify(w: &mut Work, key: &BitString, seed: u64, session_id: u64) -> HashDescriptor {
    let a = w.accounting;
    let desc = HashDescriptor {
        seed,
        input_len: key.len(),
        output_len: a.amplified as usize,
    };
    w.final_key = if a.amplified > 0 {
        let mut m = KeyMaterial::sifted(key.clone(), session_id);
        m.disclose(a.disclosed_parities);
        privacy_amplify(&m, a.leak_charged, a.margin, seed)
            .expect("settled lengths leave a positive output")
            .bits
    } else {
        BitString::new()
    };
    w.hash = Some(desc);
    desc
}

fn refill<L: Link>(w: &mut Work, ch: &mut Channel<'_, L>, bits: usize) -> Result<(), Fault> {
    let key = std::mem::take(&mut w.final_key);
    w.final_key = stage7_replenish(key, &mut ch.pool, bits).map_err(violation)?;
    w.accounting.refill = bits as u64;
    w.accounting.final_key = w.final_key.len() as u64;
    Ok(())
}

fn finish<L: Link>(
    role: Role,
    result: Result<(), Fault>,
    mut w: Work,
    ch: Channel<'_, L>,
) -> Result<EndpointReport, TransportError> {
    let status = match result {
        Ok(()) => Status::Completed,
        Err(Fault::Transport(e)) => return Err(e),
        Err(Fault::Local(reason)) => Status::Aborted { by: role, reason },
        Err(Fault::Peer(reason)) => Status::Aborted {
            by: role.peer(),
            reason,
        },
    };
    if !status.is_completed() {
        w.final_key = BitString::new();
        w.accounting.discard();
    }
    Ok(EndpointReport {
        role,
        status,
        sifted: w.sifted,
        ber: w.ber,
        reconcile: w.reconcile,
        accounting: w.accounting,
        hash: w.hash,
        final_key: w.final_key,
        pool: ch.pool_summary(),
        log: ch.log,
        eve: w.eve,
        counters: w.counters,
        sifted_dark: w.sifted_dark,
    })
}

async fn abort_after<L: Link>(ch: &mut Channel<'_, L>, result: &Result<(), Fault>) {
    if let Err(Fault::Local(reason)) = result {
        let _ = ch.send(Payload::Abort(reason.clone())).await;
    }
}

pub async fn run_alice<L: Link>(cfg: &RunConfig, link: &mut L) -> Result<EndpointReport, TransportError> {
    let neg = cfg.negotiated();
    let seeds = cfg.seeds();
    let mut station = AliceStation::new(cfg.protocol, &cfg.optics, cfg.attack, &seeds, neg.pulses);
    let mut ch = Channel::new(link, Role::Alice, neg.session_id, preshared_pool(cfg));
    let mut w = Work::default();
    let result = alice_flow(cfg, &neg, &mut station, &mut ch, &mut w).await;
    abort_after(&mut ch, &result).await;
    w.eve = cfg.attack.is_active().then(|| station.eve_record().clone());
    finish(Role::Alice, result, w, ch)
}

async fn alice_flow<L: Link>(
    cfg: &RunConfig,
    neg: &Negotiated,
    station: &mut AliceStation,
    ch: &mut Channel<'_, L>,
    w: &mut Work,
) -> Result<(), Fault> {
    let post = &neg.postprocessing;
    ch.send_hello(cfg.digest()).await?;
    let (role, digest) = ch.recv_hello().await?;
    if role != Role::Bob || digest != cfg.digest() {
        return Err(local(AbortCode::NegotiationMismatch, "configuration digest differs"));
    }
    ch.send(Payload::Params(neg.clone())).await?;

    while let Some(batch) = station.next_batch(neg.batch_clocks) {
        ch.link.send_optical(batch).await.map_err(Fault::Transport)?;
    }

    let indices = match ch.recv().await? {
        Payload::IndexList(ix) => ix,
        other => return Err(unexpected(&other, "IndexList")),
    };
    let bases = match neg.protocol {
        ProtocolKind::B92 => None,
        ProtocolKind::BB84 => match ch.recv().await? {
            Payload::BasisList(b) => Some(b),
            other => return Err(unexpected(&other, "BasisList")),
        },
    };
    let sifted = alice_sift(neg.protocol, station.bits(), station.bases(), &BobReport { indices, bases })
        .map_err(violation)?;
    if neg.protocol == ProtocolKind::BB84 {
        ch.send(Payload::IndexList(sifted.indices.clone())).await?;
    }
    let n = sifted.len();
    w.accounting.sifted = n as u64;
    w.sifted = sifted;

    let mut public = stream(cfg.seeds().alice, streams::ALICE_PUBLIC);
    let sample_seed: u64 = public.random();
    ch.send(Payload::PermutationSeed {
        purpose: SeedPurpose::Sample,
        seed: sample_seed,
    })
    .await?;
    let pairs = sample_pairs(n, post.sample_fraction, sample_seed).map_err(violation)?;
    let mine = pair_parities(&w.sifted.bits, &pairs);
    ch.send(Payload::VerifyParity(ParityMessage::Estimate(mine.clone()))).await?;
    let theirs = match ch.recv().await? {
        Payload::VerifyParity(ParityMessage::Estimate(b)) if b.len() == pairs.len() => b,
        other => return Err(unexpected(&other, "estimation parities")),
    };
    let mismatches = mine.hamming(&theirs);
    let ber = rate_from_pairs(mismatches, pairs.len());
    let remaining = remaining_after(n, &pairs);
    w.accounting.sacrificed = 2 * pairs.len() as u64;
    w.ber = Some(BerEstimate {
        rate: ber,
        compared: pairs.len(),
        mismatches,
        sacrificed: 2 * pairs.len(),
        remaining: Vec::new(),
    });
    if ber > post.ber_threshold {
        return Err(local(
            AbortCode::ErrorRateExceedsThreshold,
            format!("{ber:.4} > {}", post.ber_threshold),
        ));
    }

    let key = w.sifted.bits.select(&remaining);
    let rec_seed: u64 = public.random();
    ch.send(Payload::PermutationSeed {
        purpose: SeedPurpose::Reconcile,
        seed: rec_seed,
    })
    .await?;
    let mut rec = Reconciler::new(&key, post.reconcile, rec_seed, ber).map_err(violation)?;
    if !key.is_empty() {
        loop {
            let d = rec.alice_pass().map_err(|e| local(AbortCode::ReconciliationFailed, e.to_string()))?;
            let pass = d.report.pass;
            ch.send(Payload::ParityReport(d.report)).await?;
            let encrypted = post.encrypt_parities;
            let verify_bits = d.verify;
            ch.send_with(if encrypted { verify_bits.len() } else { 0 }, |pool| {
                let mut bits = verify_bits;
                if encrypted {
                    bits.xor_assign(&pool.one_time_pad(Direction::AliceToBob, bits.len())?);
                }
                Ok(Payload::VerifyParity(ParityMessage::Check { pass, encrypted, bits }))
            })
            .await?;
            match ch.recv().await? {
                Payload::VerifyParity(ParityMessage::Verdict { pass: p, agreed }) if p == pass => {
                    rec.alice_outcome(agreed);
                    if agreed {
                        break;
                    }
                }
                other => return Err(unexpected(&other, "verdict")),
            }
        }
    }
    let stats = *rec.stats();
    let reconciled = rec.key();
    w.reconcile = Some(stats);
    settle(w, &stats, reconciled.len(), ber, neg);

    let hash_seed: u64 = public.random();
    let desc = amplify(w, &reconciled, hash_seed, neg.session_id);
    ch.send(Payload::HashSeed(desc)).await?;

    let k = post.refill_bits.min(w.final_key.len());
    ch.send(Payload::Replenish { bits: k as u64 }).await?;
    refill(w, ch, k)
}

pub async fn run_bob<L: Link>(cfg: &RunConfig, link: &mut L) -> Result<EndpointReport, TransportError> {
    let neg = cfg.negotiated();
    let mut ch = Channel::new(link, Role::Bob, neg.session_id, preshared_pool(cfg));
    let mut w = Work::default();
    let result = bob_flow(cfg, &neg, &mut ch, &mut w).await;
    abort_after(&mut ch, &result).await;
    finish(Role::Bob, result, w, ch)
}

async fn bob_flow<L: Link>(
    cfg: &RunConfig,
    neg: &Negotiated,
    ch: &mut Channel<'_, L>,
    w: &mut Work,
) -> Result<(), Fault> {
    let post = &neg.postprocessing;
    ch.send_hello(cfg.digest()).await?;
    let (role, digest) = ch.recv_hello().await?;
    if role != Role::Alice || digest != cfg.digest() {
        return Err(local(AbortCode::NegotiationMismatch, "configuration digest differs"));
    }
    match ch.recv().await? {
        Payload::Params(p) if p == *neg => {}
        Payload::Params(_) => return Err(local(AbortCode::NegotiationMismatch, "parameters differ")),
        other => return Err(unexpected(&other, "Params")),
    }

    let mut station = BobStation::new(neg.protocol, &cfg.optics, &cfg.seeds(), neg.pulses);
    while !station.is_finished() {
        let batch = ch.link.recv_optical().await.map_err(Fault::Transport)?;
        station.receive(&batch).map_err(violation)?;
    }
    w.counters = Some(*station.counters());

    let report = station.report();
    ch.send(Payload::IndexList(report.indices.clone())).await?;
    let kept = match neg.protocol {
        ProtocolKind::B92 => report.indices,
        ProtocolKind::BB84 => {
            ch.send(Payload::BasisList(report.bases.expect("BB84 reports bases"))).await?;
            match ch.recv().await? {
                Payload::IndexList(ix) => ix,
                other => return Err(unexpected(&other, "IndexList")),
            }
        }
    };
    let sifted = bob_sift(station.detections(), &kept).map_err(violation)?;
    let mut dark = BitString::with_capacity(kept.len());
    let mut k = 0;
    for (d, flag) in station.detections().iter().zip(station.dark_only().iter()) {
        if kept.get(k) == Some(&d.clock_index) {
            dark.push(flag);
            k += 1;
        }
    }
    w.sifted_dark = Some(dark);
    let n = sifted.len();
    w.accounting.sifted = n as u64;
    w.sifted = sifted;

    let sample_seed = match ch.recv().await? {
        Payload::PermutationSeed {
            purpose: SeedPurpose::Sample,
            seed,
        } => seed,
        other => return Err(unexpected(&other, "sample seed")),
    };
    let pairs = sample_pairs(n, post.sample_fraction, sample_seed).map_err(violation)?;
    let theirs = match ch.recv().await? {
        Payload::VerifyParity(ParityMessage::Estimate(b)) if b.len() == pairs.len() => b,
        other => return Err(unexpected(&other, "estimation parities")),
    };
    let mine = pair_parities(&w.sifted.bits, &pairs);
    let mismatches = mine.hamming(&theirs);
    let ber = rate_from_pairs(mismatches, pairs.len());
    w.accounting.sacrificed = 2 * pairs.len() as u64;
    w.ber = Some(BerEstimate {
        rate: ber,
        compared: pairs.len(),
        mismatches,
        sacrificed: 2 * pairs.len(),
        remaining: Vec::new(),
    });
    if ber > post.ber_threshold {
        return Err(local(
            AbortCode::ErrorRateExceedsThreshold,
            format!("{ber:.4} > {}", post.ber_threshold),
        ));
    }
    ch.send(Payload::VerifyParity(ParityMessage::Estimate(mine))).await?;

    let rec_seed = match ch.recv().await? {
        Payload::PermutationSeed {
            purpose: SeedPurpose::Reconcile,
            seed,
        } => seed,
        other => return Err(unexpected(&other, "reconciliation seed")),
    };
    let key = w.sifted.bits.select(&remaining_after(n, &pairs));
    let mut rec = Reconciler::new(&key, post.reconcile, rec_seed, ber).map_err(violation)?;
    if !key.is_empty() {
        loop {
            let report = match ch.recv().await? {
                Payload::ParityReport(r) => r,
                other => return Err(unexpected(&other, "ParityReport")),
            };
            let (pass, encrypted, mut bits) = match ch.recv().await? {
                Payload::VerifyParity(ParityMessage::Check { pass, encrypted, bits }) => (pass, encrypted, bits),
                other => return Err(unexpected(&other, "verification parities")),
            };
            if pass != report.pass || encrypted != post.encrypt_parities {
                return Err(violation("verification parities do not match the pass"));
            }
            if encrypted {
                let pad = ch.pool.one_time_pad(Direction::AliceToBob, bits.len()).map_err(pool_fault)?;
                bits.xor_assign(&pad);
            }
            let agreed = rec
                .bob_pass(&PassDisclosure { report, verify: bits })
                .map_err(violation)?;
            if !agreed && (rec.pass() as usize >= post.reconcile.max_passes || rec.surviving_len() == 0) {
                return Err(local(
                    AbortCode::ReconciliationFailed,
                    format!("parities still disagree after {} passes", rec.pass()),
                ));
            }
            ch.send(Payload::VerifyParity(ParityMessage::Verdict { pass, agreed })).await?;
            if agreed {
                break;
            }
        }
    }
    let stats = *rec.stats();
    let reconciled = rec.key();
    w.reconcile = Some(stats);
    settle(w, &stats, reconciled.len(), ber, neg);

    let desc = match ch.recv().await? {
        Payload::HashSeed(d) => d,
        other => return Err(unexpected(&other, "HashSeed")),
    };
    if desc.input_len != reconciled.len() || desc.output_len as u64 != w.accounting.amplified {
        return Err(violation(format!(
            "hash {}→{} where {}→{} was expected",
            desc.input_len,
            desc.output_len,
            reconciled.len(),
            w.accounting.amplified
        )));
    }
    amplify(w, &reconciled, desc.seed, neg.session_id);

    let k = match ch.recv().await? {
        Payload::Replenish { bits } => bits as usize,
        other => return Err(unexpected(&other, "Replenish")),
    };
    if k != post.refill_bits.min(w.final_key.len()) {
        return Err(violation(format!("refill of {k} bits")));
    }
    refill(w, ch, k)
}
