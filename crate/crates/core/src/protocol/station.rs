//! Alice's transmitter station and Bob's receiver station.
//!
//! Alice's station owns her random bits, the laser, the eavesdropper on her
//! doorstep and the fiber; it emits batches of pulses that still carry light
//! after the fiber. Bob's station owns his random choices, the interferometer
//! and detectors, and turns those batches plus dark counts into detections.
//! Only the pulses pass between them, so Bob's settings never reach Alice.

use thiserror::Error;

use crate::adversary::{AttackModel, Eavesdropper, EveRecord};
use crate::bits::BitString;
use crate::optics::{
    cell_index, merge_clicks, propagate, DarkCounts, DetectionEvent, OpticalPulse, OpticsConfig, Port, Receiver,
    Transmitter, Window, CELLS,
};
use crate::rng::{stream, streams, Seeds, SimRng};

use super::{alice_phase, b92_interpret, bb84_interpret, bob_phase, Bb84Reading, BobReport, ProtocolKind};

/// Clock ticks covered by one batch on the optical stream.
pub const DEFAULT_BATCH_CLOCKS: u64 = 1 << 20;

/// Light leaving the fiber for the clock range `start..end`. Clocks without
/// a pulse carried no light.
#[derive(Debug, Clone, PartialEq)]
pub struct OpticalBatch {
    pub start: u64,
    pub end: u64,
    pub pulses: Vec<OpticalPulse>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum StationError {
    #[error("optical batch starts at clock {got}, expected {expected}")]
    OutOfOrder { expected: u64, got: u64 },
    #[error("optical batch ends at clock {0}, beyond the session length")]
    PastEnd(u64),
    #[error("pulse at clock {0} lies outside its batch or out of order")]
    BadPulse(u64),
}

pub struct AliceStation {
    kind: ProtocolKind,
    bits: BitString,
    bases: Option<BitString>,
    transmitter: Transmitter,
    transmission: f64,
    source_rng: SimRng,
    fiber_rng: SimRng,
    eve: Eavesdropper<SimRng>,
    next_clock: u64,
    pulses: u64,
}

impl AliceStation {
    pub fn new(kind: ProtocolKind, optics: &OpticsConfig, attack: AttackModel, seeds: &Seeds, pulses: u64) -> Self {
        let n = pulses as usize;
        let bits = BitString::random(n, &mut stream(seeds.alice, streams::ALICE_BITS));
        let bases = (kind == ProtocolKind::BB84).then(|| BitString::random(n, &mut stream(seeds.alice, streams::ALICE_BASES)));
        Self {
            kind,
            bits,
            bases,
            transmitter: Transmitter::new(optics),
            transmission: optics.transmission(),
            source_rng: stream(seeds.channel, streams::SOURCE),
            fiber_rng: stream(seeds.channel, streams::FIBER),
            eve: Eavesdropper::new(attack, kind, stream(seeds.eve, streams::EVE), n),
            next_clock: 0,
            pulses,
        }
    }

    pub fn is_finished(&self) -> bool {
        self.next_clock >= self.pulses
    }

    pub fn bits(&self) -> &BitString {
        &self.bits
    }

    pub fn bases(&self) -> Option<&BitString> {
        self.bases.as_ref()
    }

    pub fn eve_record(&self) -> &EveRecord {
        self.eve.record()
    }

    /// Transmits up to `max_clocks` further pulses; `None` once all are sent.
    pub fn next_batch(&mut self, max_clocks: u64) -> Option<OpticalBatch> {
        if self.is_finished() {
            return None;
        }
        let start = self.next_clock;
        let end = (start + max_clocks.max(1)).min(self.pulses);
        let mut pulses = Vec::new();
        for clock in start..end {
            let i = clock as usize;
            let basis = self.bases.as_ref().is_some_and(|b| b.get(i));
            let phase = alice_phase(self.kind, self.bits.get(i), basis);
            let emitted = self.transmitter.emit(clock, phase, &mut self.source_rng);
            let Some(onward) = self.eve.act(emitted) else {
                continue;
            };
            let arriving = propagate(onward, self.transmission, &mut self.fiber_rng);
            if !arriving.is_empty() {
                pulses.push(arriving);
            }
        }
        self.next_clock = end;
        Some(OpticalBatch { start, end, pulses })
    }
}

/// A clock on which Bob obtained a key bit: his random bit for B92, the bit
/// read from the firing port for BB84.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BobDetection {
    pub clock_index: u64,
    pub bit: bool,
}

/// Detector statistics accumulated by Bob's station.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
pub struct ClickCounters {
    pub pulses: u64,
    /// Clicks per (window, port) cell in `cell_index` order.
    pub cells: [u64; CELLS],
    /// Clicks per cell caused by dark counts alone (oracle).
    pub dark_cells: [u64; CELLS],
    /// Pulses on which two or more cells clicked.
    pub multi_click: u64,
    /// BB84 pulses discarded because both central ports fired.
    pub double_clicks: u64,
    pub side_window_clicks: u64,
}

pub struct BobStation {
    kind: ProtocolKind,
    choices: BitString,
    receiver: Receiver,
    route_rng: SimRng,
    dark_rng: SimRng,
    darks: DarkCounts,
    pulses: u64,
    next_clock: u64,
    detections: Vec<BobDetection>,
    dark_only: BitString,
    counters: ClickCounters,
    events: Vec<DetectionEvent>,
}

impl BobStation {
    pub fn new(kind: ProtocolKind, optics: &OpticsConfig, seeds: &Seeds, pulses: u64) -> Self {
        let receiver = Receiver::new(optics);
        let mut dark_rng = stream(seeds.channel, streams::BOB_DARKS);
        let darks = DarkCounts::new(receiver.dark_probability(), &mut dark_rng);
        Self {
            kind,
            choices: BitString::random(pulses as usize, &mut stream(seeds.bob, streams::BOB_CHOICES)),
            receiver,
            route_rng: stream(seeds.channel, streams::BOB_ROUTING),
            dark_rng,
            darks,
            pulses,
            next_clock: 0,
            detections: Vec::new(),
            dark_only: BitString::new(),
            counters: ClickCounters::default(),
            events: Vec::with_capacity(CELLS),
        }
    }

    pub fn is_finished(&self) -> bool {
        self.next_clock >= self.pulses
    }

    pub fn receive(&mut self, batch: &OpticalBatch) -> Result<(), StationError> {
        if batch.start != self.next_clock {
            return Err(StationError::OutOfOrder {
                expected: self.next_clock,
                got: batch.start,
            });
        }
        if batch.end > self.pulses || batch.end < batch.start {
            return Err(StationError::PastEnd(batch.end));
        }
        let mut prev = None;
        for p in &batch.pulses {
            if p.clock_index < batch.start || p.clock_index >= batch.end || prev.is_some_and(|c| p.clock_index <= c) {
                return Err(StationError::BadPulse(p.clock_index));
            }
            prev = Some(p.clock_index);
        }
        let mut pi = 0;
        loop {
            let next_pulse = batch.pulses.get(pi).map_or(u64::MAX, |p| p.clock_index);
            let next_dark = self.darks.next_clock();
            let clock = next_pulse.min(next_dark);
            if clock >= batch.end {
                break;
            }
            let phi_b = bob_phase(self.kind, self.choices.get(clock as usize));
            let photon = if next_pulse == clock {
                pi += 1;
                self.receiver
                    .photon_cells(&batch.pulses[pi - 1], phi_b, &mut self.route_rng)
            } else {
                [false; CELLS]
            };
            let dark = if next_dark == clock {
                self.darks.at(clock, &mut self.dark_rng)
            } else {
                [false; CELLS]
            };
            self.register(clock, &photon, &dark);
        }
        self.counters.pulses += batch.end - batch.start;
        self.next_clock = batch.end;
        Ok(())
    }

    fn register(&mut self, clock: u64, photon: &[bool; CELLS], dark: &[bool; CELLS]) {
        self.events.clear();
        merge_clicks(clock, photon, dark, &mut self.events);
        if self.events.is_empty() {
            return;
        }
        for e in &self.events {
            let c = cell_index(e.window, e.port);
            self.counters.cells[c] += 1;
            if e.dark {
                self.counters.dark_cells[c] += 1;
            }
            if e.window != Window::Central {
                self.counters.side_window_clicks += 1;
            }
        }
        if self.events.len() >= 2 {
            self.counters.multi_click += 1;
        }
        match self.kind {
            ProtocolKind::B92 => {
                if b92_interpret(&self.events) {
                    self.detections.push(BobDetection {
                        clock_index: clock,
                        bit: self.choices.get(clock as usize),
                    });
                    self.dark_only
                        .push(!photon[cell_index(Window::Central, super::B92_PORT)]);
                }
            }
            ProtocolKind::BB84 => match bb84_interpret(&self.events) {
                Bb84Reading::Nothing => {}
                Bb84Reading::DoubleClick => self.counters.double_clicks += 1,
                Bb84Reading::Bit(bit) => {
                    let port = if bit { Port::Destructive } else { Port::Constructive };
                    self.detections.push(BobDetection { clock_index: clock, bit });
                    self.dark_only.push(!photon[cell_index(Window::Central, port)]);
                }
            },
        }
    }

    /// The public announcement: detection clocks, plus bases for BB84.
    pub fn report(&self) -> BobReport {
        let indices: Vec<u64> = self.detections.iter().map(|d| d.clock_index).collect();
        let bases = (self.kind == ProtocolKind::BB84)
            .then(|| indices.iter().map(|&i| self.choices.get(i as usize)).collect());
        BobReport { indices, bases }
    }

    pub fn detections(&self) -> &[BobDetection] {
        &self.detections
    }

    /// Bob's random bit (B92) or basis (BB84) at each clock.
    pub fn choices(&self) -> &BitString {
        &self.choices
    }

    pub fn counters(&self) -> &ClickCounters {
        &self.counters
    }

    /// Oracle: whether each detection's keyed click came from a dark count alone.
    pub fn dark_only(&self) -> &BitString {
        &self.dark_only
    }
}
