//! Transports. An endpoint talks to a [`Link`], which carries public frames
//! and, separately, the simulation-oracle stream of optical batches from
//! Alice's station to Bob's detectors.
//!
//! The in-process loopback runs both endpoints on one thread by polling
//! their futures in turn, which makes it deterministic and usable where
//! threads are not. The channel and stream links block inside their futures
//! and run one endpoint per thread or process under [`block_on`].

use std::cell::RefCell;
use std::collections::VecDeque;
use std::future::{poll_fn, Future};
use std::io::{Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::pin::pin;
use std::rc::Rc;
use std::sync::mpsc;
use std::task::{Context, Poll, Waker};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::frame::{read_frame, MessageType};
use super::payload::Role;
use crate::optics::OpticalPulse;
use crate::postprocessing::Direction;
use crate::protocol::OpticalBatch;

#[derive(Debug, Error, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "detail", rename_all = "lowercase")]
pub enum TransportError {
    #[error("peer disconnected")]
    Disconnected,
    #[error("timed out waiting for the peer")]
    Timeout,
    #[error("both endpoints are waiting on each other")]
    Deadlock,
    #[error("transport I/O error: {0}")]
    Io(String),
    #[error("malformed optical batch: {0}")]
    Codec(String),
}

impl From<std::io::Error> for TransportError {
    fn from(e: std::io::Error) -> Self {
        match e.kind() {
            std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut => TransportError::Timeout,
            std::io::ErrorKind::UnexpectedEof
            | std::io::ErrorKind::ConnectionReset
            | std::io::ErrorKind::ConnectionAborted
            | std::io::ErrorKind::BrokenPipe => TransportError::Disconnected,
            _ => TransportError::Io(e.to_string()),
        }
    }
}

#[allow(async_fn_in_trait)]
pub trait Link {
    async fn send_frame(&mut self, frame: Vec<u8>) -> Result<(), TransportError>;
    async fn recv_frame(&mut self) -> Result<Vec<u8>, TransportError>;
    async fn send_optical(&mut self, batch: OpticalBatch) -> Result<(), TransportError>;
    async fn recv_optical(&mut self) -> Result<OpticalBatch, TransportError>;
}

/// A frame as it crossed the public channel.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoggedFrame {
    pub direction: Direction,
    pub msg_type: Option<MessageType>,
    #[serde(with = "hex::serde")]
    pub frame: Vec<u8>,
}

impl LoggedFrame {
    pub fn new(direction: Direction, frame: Vec<u8>) -> Self {
        Self {
            direction,
            msg_type: frame.get(5).and_then(|&b| MessageType::from_u8(b)),
            frame,
        }
    }
}

pub fn direction_from(role: Role) -> Direction {
    match role {
        Role::Alice => Direction::AliceToBob,
        Role::Bob => Direction::BobToAlice,
    }
}

/// Where a replayed session departed from its log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Divergence {
    pub direction: Direction,
    /// Position within that direction's frame sequence.
    pub index: usize,
    pub expected: Option<MessageType>,
    pub produced: Option<MessageType>,
}

#[derive(Default)]
struct Shared {
    frames: [VecDeque<Vec<u8>>; 2],
    optical: VecDeque<OpticalBatch>,
    done: [bool; 2],
    deadlock: bool,
    operations: u64,
    log: Vec<LoggedFrame>,
    script: Option<[VecDeque<Vec<u8>>; 2]>,
    sent: [usize; 2],
    divergences: Vec<Divergence>,
}

/// One end of the in-process loopback.
pub struct LoopbackLink {
    role: Role,
    shared: Rc<RefCell<Shared>>,
}

impl LoopbackLink {
    fn out(&self) -> usize {
        direction_from(self.role) as usize
    }
    fn inbound(&self) -> usize {
        direction_from(self.role.peer()) as usize
    }
    fn peer_done(&self, s: &Shared) -> bool {
        s.done[self.inbound()]
    }
}

impl Link for LoopbackLink {
    async fn send_frame(&mut self, frame: Vec<u8>) -> Result<(), TransportError> {
        let out = self.out();
        let mut s = self.shared.borrow_mut();
        s.operations += 1;
        let dir = direction_from(self.role);
        s.log.push(LoggedFrame::new(dir, frame.clone()));
        let index = s.sent[out];
        s.sent[out] += 1;
        let delivered = match s.script.as_mut().map(|sc| sc[out].pop_front()) {
            None => frame,
            Some(Some(expected)) => {
                if expected != frame {
                    let d = Divergence {
                        direction: dir,
                        index,
                        expected: LoggedFrame::new(dir, expected.clone()).msg_type,
                        produced: LoggedFrame::new(dir, frame).msg_type,
                    };
                    s.divergences.push(d);
                }
                expected
            }
            Some(None) => {
                let d = Divergence {
                    direction: dir,
                    index,
                    expected: None,
                    produced: LoggedFrame::new(dir, frame.clone()).msg_type,
                };
                s.divergences.push(d);
                frame
            }
        };
        s.frames[out].push_back(delivered);
        Ok(())
    }

    async fn recv_frame(&mut self) -> Result<Vec<u8>, TransportError> {
        poll_fn(|_| {
            let mut s = self.shared.borrow_mut();
            let inbound = self.inbound();
            if let Some(f) = s.frames[inbound].pop_front() {
                s.operations += 1;
                return Poll::Ready(Ok(f));
            }
            if s.deadlock {
                return Poll::Ready(Err(TransportError::Deadlock));
            }
            if self.peer_done(&s) {
                return Poll::Ready(Err(TransportError::Disconnected));
            }
            Poll::Pending
        })
        .await
    }

    async fn send_optical(&mut self, batch: OpticalBatch) -> Result<(), TransportError> {
        let mut s = self.shared.borrow_mut();
        s.operations += 1;
        s.optical.push_back(batch);
        Ok(())
    }

    async fn recv_optical(&mut self) -> Result<OpticalBatch, TransportError> {
        poll_fn(|_| {
            let mut s = self.shared.borrow_mut();
            if let Some(b) = s.optical.pop_front() {
                s.operations += 1;
                return Poll::Ready(Ok(b));
            }
            if s.deadlock {
                return Poll::Ready(Err(TransportError::Deadlock));
            }
            if self.peer_done(&s) {
                return Poll::Ready(Err(TransportError::Disconnected));
            }
            Poll::Pending
        })
        .await
    }
}

/// Runs two endpoints against each other on the current thread.
pub struct Loopback {
    shared: Rc<RefCell<Shared>>,
}

/// What the loopback saw, after both endpoints have finished.
#[derive(Debug, Clone, Default)]
pub struct LoopbackRecord {
    pub log: Vec<LoggedFrame>,
    pub divergences: Vec<Divergence>,
    /// Logged frames the replay never reached, per direction.
    pub unused_script: [usize; 2],
}

impl Loopback {
    pub fn new() -> Self {
        Self {
            shared: Rc::new(RefCell::new(Shared::default())),
        }
    }

    /// A loopback that delivers the logged frames of each direction in place
    /// of the ones the endpoints produce, noting any difference.
    pub fn scripted(log: &[LoggedFrame]) -> Self {
        let lb = Self::new();
        let mut script: [VecDeque<Vec<u8>>; 2] = Default::default();
        for f in log {
            script[f.direction as usize].push_back(f.frame.clone());
        }
        lb.shared.borrow_mut().script = Some(script);
        lb
    }

    pub fn links(&self) -> (LoopbackLink, LoopbackLink) {
        (
            LoopbackLink {
                role: Role::Alice,
                shared: self.shared.clone(),
            },
            LoopbackLink {
                role: Role::Bob,
                shared: self.shared.clone(),
            },
        )
    }

    /// Polls both futures until each completes.
    pub fn run<A: Future, B: Future>(&self, alice: A, bob: B) -> (A::Output, B::Output) {
        let mut alice = pin!(alice);
        let mut bob = pin!(bob);
        let mut cx = Context::from_waker(Waker::noop());
        let (mut ra, mut rb) = (None, None);
        loop {
            let before = self.shared.borrow().operations;
            if ra.is_none() {
                if let Poll::Ready(v) = alice.as_mut().poll(&mut cx) {
                    ra = Some(v);
                    self.shared.borrow_mut().done[Direction::AliceToBob as usize] = true;
                }
            }
            if rb.is_none() {
                if let Poll::Ready(v) = bob.as_mut().poll(&mut cx) {
                    rb = Some(v);
                    self.shared.borrow_mut().done[Direction::BobToAlice as usize] = true;
                }
            }
            if let (Some(_), Some(_)) = (&ra, &rb) {
                break;
            }
            let mut s = self.shared.borrow_mut();
            if s.operations == before && ra.is_none() && rb.is_none() {
                s.deadlock = true;
            }
        }
        (ra.expect("alice finished"), rb.expect("bob finished"))
    }

    pub fn record(&self) -> LoopbackRecord {
        let s = self.shared.borrow();
        LoopbackRecord {
            log: s.log.clone(),
            divergences: s.divergences.clone(),
            unused_script: s.script.as_ref().map_or([0, 0], |sc| [sc[0].len(), sc[1].len()]),
        }
    }
}

impl Default for Loopback {
    fn default() -> Self {
        Self::new()
    }
}

/// Drives a future whose links block rather than return `Pending`.
pub fn block_on<F: Future>(f: F) -> F::Output {
    let mut f = pin!(f);
    let mut cx = Context::from_waker(Waker::noop());
    loop {
        if let Poll::Ready(v) = f.as_mut().poll(&mut cx) {
            return v;
        }
        std::thread::yield_now();
    }
}

/// In-memory link for endpoints on separate threads.
pub struct ChannelLink {
    tx: mpsc::Sender<Vec<u8>>,
    rx: mpsc::Receiver<Vec<u8>>,
    optical_tx: Option<mpsc::Sender<OpticalBatch>>,
    optical_rx: Option<mpsc::Receiver<OpticalBatch>>,
    timeout: Duration,
}

/// Alice's and Bob's ends of a threaded in-memory link.
pub fn channel_pair(timeout: Duration) -> (ChannelLink, ChannelLink) {
    let (a_tx, b_rx) = mpsc::channel();
    let (b_tx, a_rx) = mpsc::channel();
    let (o_tx, o_rx) = mpsc::channel();
    (
        ChannelLink {
            tx: a_tx,
            rx: a_rx,
            optical_tx: Some(o_tx),
            optical_rx: None,
            timeout,
        },
        ChannelLink {
            tx: b_tx,
            rx: b_rx,
            optical_tx: None,
            optical_rx: Some(o_rx),
            timeout,
        },
    )
}

fn recv_timeout<T>(rx: &mpsc::Receiver<T>, timeout: Duration) -> Result<T, TransportError> {
    rx.recv_timeout(timeout).map_err(|e| match e {
        mpsc::RecvTimeoutError::Timeout => TransportError::Timeout,
        mpsc::RecvTimeoutError::Disconnected => TransportError::Disconnected,
    })
}

impl Link for ChannelLink {
    async fn send_frame(&mut self, frame: Vec<u8>) -> Result<(), TransportError> {
        self.tx.send(frame).map_err(|_| TransportError::Disconnected)
    }

    async fn recv_frame(&mut self) -> Result<Vec<u8>, TransportError> {
        recv_timeout(&self.rx, self.timeout)
    }

    async fn send_optical(&mut self, batch: OpticalBatch) -> Result<(), TransportError> {
        let tx = self.optical_tx.as_ref().ok_or(TransportError::Disconnected)?;
        tx.send(batch).map_err(|_| TransportError::Disconnected)
    }

    async fn recv_optical(&mut self) -> Result<OpticalBatch, TransportError> {
        let rx = self.optical_rx.as_ref().ok_or(TransportError::Disconnected)?;
        recv_timeout(rx, self.timeout)
    }
}

const PULSE_BYTES: usize = 24;

/// Serializes a batch for the oracle stream: length-prefixed, big-endian.
pub fn encode_batch(b: &OpticalBatch) -> Vec<u8> {
    let body = 8 + 8 + 4 + PULSE_BYTES * b.pulses.len();
    let mut out = Vec::with_capacity(4 + body);
    out.extend_from_slice(&(body as u32).to_be_bytes());
    out.extend_from_slice(&b.start.to_be_bytes());
    out.extend_from_slice(&b.end.to_be_bytes());
    out.extend_from_slice(&(b.pulses.len() as u32).to_be_bytes());
    for p in &b.pulses {
        out.extend_from_slice(&p.clock_index.to_be_bytes());
        out.extend_from_slice(&p.phase.to_bits().to_be_bytes());
        out.extend_from_slice(&p.photons.to_be_bytes());
        out.extend_from_slice(&p.side_photons.to_be_bytes());
    }
    out
}

/// Inverse of [`encode_batch`], without the length prefix.
pub fn decode_batch(body: &[u8]) -> Result<OpticalBatch, TransportError> {
    let bad = |why: &str| TransportError::Codec(why.to_string());
    if body.len() < 20 {
        return Err(bad("short header"));
    }
    let u64_at = |i: usize| u64::from_be_bytes(body[i..i + 8].try_into().expect("8 bytes"));
    let u32_at = |i: usize| u32::from_be_bytes(body[i..i + 4].try_into().expect("4 bytes"));
    let n = u32_at(16) as usize;
    if body.len() != 20 + n * PULSE_BYTES {
        return Err(bad("length does not match pulse count"));
    }
    let pulses = (0..n)
        .map(|k| {
            let o = 20 + k * PULSE_BYTES;
            OpticalPulse {
                clock_index: u64_at(o),
                phase: f64::from_bits(u64_at(o + 8)),
                photons: u32_at(o + 16),
                side_photons: u32_at(o + 20),
            }
        })
        .collect();
    Ok(OpticalBatch {
        start: u64_at(0),
        end: u64_at(8),
        pulses,
    })
}

/// A link over byte streams: one for the public channel and, for Alice and
/// Bob, one for the oracle stream.
pub struct StreamLink<S> {
    public: S,
    oracle: S,
}

impl<S: Read + Write> StreamLink<S> {
    pub fn new(public: S, oracle: S) -> Self {
        Self { public, oracle }
    }
}

impl<S: Read + Write> Link for StreamLink<S> {
    async fn send_frame(&mut self, frame: Vec<u8>) -> Result<(), TransportError> {
        self.public.write_all(&frame)?;
        self.public.flush()?;
        Ok(())
    }

    async fn recv_frame(&mut self) -> Result<Vec<u8>, TransportError> {
        read_frame(&mut self.public)?.ok_or(TransportError::Disconnected)
    }

    async fn send_optical(&mut self, batch: OpticalBatch) -> Result<(), TransportError> {
        self.oracle.write_all(&encode_batch(&batch))?;
        self.oracle.flush()?;
        Ok(())
    }

    async fn recv_optical(&mut self) -> Result<OpticalBatch, TransportError> {
        let mut len = [0u8; 4];
        self.oracle.read_exact(&mut len)?;
        let n = u32::from_be_bytes(len) as usize;
        if n > super::frame::MAX_FRAME_LEN {
            return Err(TransportError::Codec(format!("batch length {n}")));
        }
        let mut body = vec![0u8; n];
        self.oracle.read_exact(&mut body)?;
        decode_batch(&body)
    }
}

const PUBLIC_TAG: u8 = b'P';
const ORACLE_TAG: u8 = b'O';

/// Alice's side of a two-process session: accepts Bob's public and oracle
/// connections on `listener`.
pub fn accept_tcp(listener: &TcpListener, timeout: Duration) -> Result<StreamLink<TcpStream>, TransportError> {
    listener.set_nonblocking(true)?;
    let deadline = Instant::now() + timeout;
    let (mut public, mut oracle) = (None, None);
    while public.is_none() || oracle.is_none() {
        match listener.accept() {
            Ok((mut s, _)) => {
                s.set_nonblocking(false)?;
                s.set_read_timeout(Some(timeout))?;
                s.set_nodelay(true)?;
                let mut tag = [0u8; 1];
                s.read_exact(&mut tag)?;
                match tag[0] {
                    PUBLIC_TAG => public = Some(s),
                    ORACLE_TAG => oracle = Some(s),
                    _ => return Err(TransportError::Io("unexpected connection".into())),
                }
            }
            Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                if Instant::now() > deadline {
                    return Err(TransportError::Timeout);
                }
                std::thread::sleep(Duration::from_millis(5));
            }
            Err(e) => return Err(e.into()),
        }
    }
    Ok(StreamLink::new(public.expect("public"), oracle.expect("oracle")))
}

/// Bob's side of a two-process session, retrying until Alice listens or the
/// timeout passes.
pub fn connect_tcp<A: ToSocketAddrs>(addr: A, timeout: Duration) -> Result<StreamLink<TcpStream>, TransportError> {
    let addrs: Vec<SocketAddr> = addr
        .to_socket_addrs()
        .map_err(|e| TransportError::Io(e.to_string()))?
        .collect();
    if addrs.is_empty() {
        return Err(TransportError::Io("address resolves to nothing".into()));
    }
    let deadline = Instant::now() + timeout;
    let open = |tag: u8| -> Result<TcpStream, TransportError> {
        loop {
            match addrs.iter().find_map(|a| TcpStream::connect_timeout(a, timeout).ok()) {
                Some(mut s) => {
                    s.set_read_timeout(Some(timeout))?;
                    s.set_nodelay(true)?;
                    s.write_all(&[tag])?;
                    return Ok(s);
                }
                None if Instant::now() < deadline => std::thread::sleep(Duration::from_millis(20)),
                None => return Err(TransportError::Io(format!("cannot connect to {}", addrs[0]))),
            }
        }
    };
    let public = open(PUBLIC_TAG)?;
    let oracle = open(ORACLE_TAG)?;
    Ok(StreamLink::new(public, oracle))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batch_codec_round_trip() {
        let b = OpticalBatch {
            start: 10,
            end: 20,
            pulses: vec![
                OpticalPulse {
                    clock_index: 11,
                    phase: 1.25,
                    photons: 1,
                    side_photons: 2,
                },
                OpticalPulse {
                    clock_index: 19,
                    phase: 0.0,
                    photons: 0,
                    side_photons: 1,
                },
            ],
        };
        let enc = encode_batch(&b);
        assert_eq!(decode_batch(&enc[4..]).unwrap(), b);
        assert!(decode_batch(&enc[4..enc.len() - 1]).is_err());
    }

    #[test]
    fn loopback_detects_deadlock() {
        let lb = Loopback::new();
        let (mut a, mut b) = lb.links();
        let (ra, rb) = lb.run(async move { a.recv_frame().await }, async move { b.recv_frame().await });
        assert_eq!(ra, Err(TransportError::Deadlock));
        assert_eq!(rb, Err(TransportError::Deadlock));
    }

    #[test]
    fn loopback_reports_disconnect() {
        let lb = Loopback::new();
        let (mut a, mut b) = lb.links();
        let (ra, rb) = lb.run(
            async move { a.send_frame(vec![1, 2, 3]).await },
            async move {
                let first = b.recv_frame().await;
                let second = b.recv_frame().await;
                (first, second)
            },
        );
        assert_eq!(ra, Ok(()));
        assert_eq!(rb, (Ok(vec![1, 2, 3]), Err(TransportError::Disconnected)));
    }

    #[test]
    fn channel_pair_times_out() {
        let (mut a, _b) = channel_pair(Duration::from_millis(20));
        assert_eq!(block_on(a.recv_frame()), Err(TransportError::Timeout));
    }
}
