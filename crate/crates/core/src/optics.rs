//! Physical layer: weak-laser source, lossy fiber, the time-multiplexed
//! interferometer pair and gated InGaAs detectors.
//!
//! Photon numbers are normalized to the *central peak*: a source with
//! `mu_central = 0.63` puts on average 0.63 photons per pulse into the
//! interfering (short-long + long-short) time slot, split between Bob's two
//! output ports as `(1 ± V₀ cos Δφ)/2`. The non-interfering prompt and delayed
//! slots are fed by an independent Poisson stream whose mean follows the
//! 1/16-per-port side-peak weights relative to the 1/4 central total.
//! Independence is exact for a coherent (laser) source.

use std::f64::consts::{PI, TAU};

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Highest pulse rate the detector model is valid for; above it after-pulsing
/// (not simulated) dominates.
pub const MAX_PULSE_RATE_HZ: f64 = 100_000.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OpticsError {
    #[error("detector efficiency {0} is outside [0, 1]")]
    Efficiency(f64),
    #[error("mean photon number must be positive, got {0}")]
    MeanPhotonNumber(f64),
    #[error("pulse rate must be positive, got {0}")]
    PulseRate(f64),
    #[error("gate width must be positive, got {0}")]
    GateWidth(f64),
    #[error("visibility {0} is outside [0, 1]")]
    Visibility(f64),
    #[error("channel parameter `{0}` must be non-negative")]
    Channel(&'static str),
    #[error("long-arm transmission {0} is outside (0, 1]")]
    LongArm(f64),
    #[error("dark-count probability per gate {0} is not small; the Bernoulli gate model needs R·τ ≪ 1")]
    DarkProbability(f64),
}

/// Photon-number statistics of the transmitter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum PhotonStatistics {
    /// Attenuated laser: Poisson photon numbers with mean `mu_central`.
    #[default]
    Poisson,
    /// Ideal single-photon source: exactly one central-peak photon per pulse
    /// and no side-peak light. Used for the lossless protocol idealizations.
    SinglePhoton,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SourceConfig {
    pub mu_central: f64,
    /// Pulses per second.
    pub pulse_rate: f64,
    /// Electrical drive pulse width in seconds (metadata; no temporal model).
    pub pulse_width: f64,
    #[serde(default)]
    pub statistics: PhotonStatistics,
}

impl Default for SourceConfig {
    fn default() -> Self {
        Self::fiber()
    }
}

impl SourceConfig {
    pub fn fiber() -> Self {
        Self {
            mu_central: 0.63,
            pulse_rate: 100_000.0,
            pulse_width: 300e-12,
            statistics: PhotonStatistics::Poisson,
        }
    }

    pub fn single_photon(pulse_rate: f64) -> Self {
        Self {
            mu_central: 1.0,
            pulse_rate,
            pulse_width: 300e-12,
            statistics: PhotonStatistics::SinglePhoton,
        }
    }

    pub fn validate(&self) -> Result<(), OpticsError> {
        if !(self.mu_central > 0.0) || !self.mu_central.is_finite() {
            return Err(OpticsError::MeanPhotonNumber(self.mu_central));
        }
        if !(self.pulse_rate > 0.0) || !self.pulse_rate.is_finite() {
            return Err(OpticsError::PulseRate(self.pulse_rate));
        }
        Ok(())
    }

    /// True when the pulse rate exceeds the after-pulsing limit.
    pub fn exceeds_afterpulse_limit(&self) -> bool {
        self.pulse_rate > MAX_PULSE_RATE_HZ
    }

    /// Probability that a pulse carries at least one central-peak photon.
    pub fn p_nonempty(&self) -> f64 {
        match self.statistics {
            PhotonStatistics::Poisson => -(-self.mu_central).exp_m1(),
            PhotonStatistics::SinglePhoton => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChannelConfig {
    pub length_km: f64,
    pub attenuation_db_per_km: f64,
    /// Connector and splice losses.
    pub extra_loss_db: f64,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        Self::fiber()
    }
}

impl ChannelConfig {
    /// The 48 km fiber loop: 0.3 dB/km plus connector losses, 22.9 dB total.
    pub fn fiber() -> Self {
        Self {
            length_km: 48.0,
            attenuation_db_per_km: 0.3,
            extra_loss_db: 8.5,
        }
    }

    pub fn lossless() -> Self {
        Self::with_total_db(0.0)
    }

    /// A channel described only by its end-to-end loss.
    pub fn with_total_db(db: f64) -> Self {
        Self {
            length_km: 0.0,
            attenuation_db_per_km: 0.0,
            extra_loss_db: db,
        }
    }

    pub fn total_db(&self) -> f64 {
        self.length_km * self.attenuation_db_per_km + self.extra_loss_db
    }

    pub fn validate(&self) -> Result<(), OpticsError> {
        for (name, v) in [
            ("length_km", self.length_km),
            ("attenuation_db_per_km", self.attenuation_db_per_km),
            ("extra_loss_db", self.extra_loss_db),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(OpticsError::Channel(name));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorConfig {
    /// Single-photon detection efficiency η.
    pub efficiency: f64,
    /// Gate (time window) width τ in seconds.
    pub gate_width: f64,
    /// Dark-count rate in kHz; when absent the InGaAs law `7.4·exp(9.2η)` applies.
    #[serde(default)]
    pub dark_rate_override: Option<f64>,
    /// Residual fringe visibility V₀ from optical imperfections.
    pub intrinsic_visibility: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self::fiber()
    }
}

impl DetectorConfig {
    pub fn fiber() -> Self {
        Self {
            efficiency: 0.11,
            gate_width: 0.9e-9,
            dark_rate_override: None,
            intrinsic_visibility: 0.9899,
        }
    }

    /// Perfect detector: unit efficiency, no dark counts, unit visibility.
    pub fn ideal() -> Self {
        Self {
            efficiency: 1.0,
            gate_width: 1e-9,
            dark_rate_override: Some(0.0),
            intrinsic_visibility: 1.0,
        }
    }

    pub fn validate(&self) -> Result<(), OpticsError> {
        if !(0.0..=1.0).contains(&self.efficiency) {
            return Err(OpticsError::Efficiency(self.efficiency));
        }
        if !(self.gate_width > 0.0) {
            return Err(OpticsError::GateWidth(self.gate_width));
        }
        if !(0.0..=1.0).contains(&self.intrinsic_visibility) {
            return Err(OpticsError::Visibility(self.intrinsic_visibility));
        }
        let p = self.dark_probability();
        if !(0.0..0.5).contains(&p) {
            return Err(OpticsError::DarkProbability(p));
        }
        Ok(())
    }

    /// Dark-count rate in kHz.
    pub fn dark_rate_khz(&self) -> f64 {
        match self.dark_rate_override {
            Some(r) => r,
            None => 7.4 * (9.2 * self.efficiency).exp(),
        }
    }

    /// Probability of a dark click in one gate of one detector, `R·τ`.
    pub fn dark_probability(&self) -> f64 {
        self.dark_rate_khz() * 1e3 * self.gate_width
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Layout {
    /// Single Mach-Zehnder: every photon lands in the central slot.
    Simple,
    /// Two unequal-arm interferometers on one fiber: prompt/central/delayed slots.
    #[default]
    TimeMultiplexed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InterferometerConfig {
    pub layout: Layout,
    /// Power transmission of each long arm (air-gap loss); 1.0 is ideal.
    pub long_arm_transmission: f64,
}

impl Default for InterferometerConfig {
    fn default() -> Self {
        Self {
            layout: Layout::TimeMultiplexed,
            long_arm_transmission: 1.0,
        }
    }
}

impl InterferometerConfig {
    pub fn validate(&self) -> Result<(), OpticsError> {
        let a = self.long_arm_transmission;
        if !(a > 0.0 && a <= 1.0) {
            return Err(OpticsError::LongArm(a));
        }
        Ok(())
    }

    /// Mean side-peak photons per central-peak photon, per (window, port).
    fn side_means_per_central(&self) -> SideWindows {
        match self.layout {
            Layout::Simple => SideWindows {
                prompt: 0.0,
                delayed: 0.0,
            },
            Layout::TimeMultiplexed => {
                let s = side_window_prob(self.long_arm_transmission);
                SideWindows {
                    prompt: s.prompt / CENTRAL_TOTAL,
                    delayed: s.delayed / CENTRAL_TOTAL,
                }
            }
        }
    }
}

/// Everything on the optical path, from Alice's laser to Bob's detectors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OpticsConfig {
    pub source: SourceConfig,
    pub channel: ChannelConfig,
    pub detector: DetectorConfig,
    #[serde(default)]
    pub interferometer: InterferometerConfig,
}

impl Default for OpticsConfig {
    fn default() -> Self {
        Self::fiber()
    }
}

impl OpticsConfig {
    pub fn fiber() -> Self {
        Self {
            source: SourceConfig::fiber(),
            channel: ChannelConfig::fiber(),
            detector: DetectorConfig::fiber(),
            interferometer: InterferometerConfig::default(),
        }
    }

    /// Single photons, no loss, perfect detectors, simple interferometer.
    pub fn ideal() -> Self {
        Self {
            source: SourceConfig::single_photon(100_000.0),
            channel: ChannelConfig::lossless(),
            detector: DetectorConfig::ideal(),
            interferometer: InterferometerConfig {
                layout: Layout::Simple,
                long_arm_transmission: 1.0,
            },
        }
    }

    pub fn validate(&self) -> Result<(), OpticsError> {
        self.source.validate()?;
        self.channel.validate()?;
        self.detector.validate()?;
        self.interferometer.validate()
    }

    pub fn transmission(&self) -> f64 {
        transmission(&self.channel)
    }
}

/// Phase settings of Alice's and Bob's long arms, canonicalized to `[0, 2π)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhasePair {
    pub phi_a: f64,
    pub phi_b: f64,
}

impl PhasePair {
    pub fn new(phi_a: f64, phi_b: f64) -> Self {
        Self {
            phi_a: canonical_phase(phi_a),
            phi_b: canonical_phase(phi_b),
        }
    }

    pub fn difference(&self) -> f64 {
        self.phi_a - self.phi_b
    }
}

pub fn canonical_phase(phi: f64) -> f64 {
    let r = phi.rem_euclid(TAU);
    // rem_euclid can round up to exactly 2π for tiny negative inputs
    if r >= TAU {
        0.0
    } else {
        r
    }
}

/// Bob's output ports, named by their behavior at zero phase difference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Port {
    Constructive,
    Destructive,
}

impl Port {
    pub const ALL: [Port; 2] = [Port::Constructive, Port::Destructive];

    fn index(self) -> usize {
        self as usize
    }
}

/// Arrival slot relative to the bright timing pulse.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Window {
    /// Short-short path.
    Prompt,
    /// Short-long and long-short paths; the only interfering slot.
    Central,
    /// Long-long path.
    Delayed,
}

impl Window {
    pub const ALL: [Window; 3] = [Window::Prompt, Window::Central, Window::Delayed];

    fn index(self) -> usize {
        self as usize
    }
}

/// Number of (window, port) detection cells.
pub const CELLS: usize = 6;

pub fn cell_index(window: Window, port: Port) -> usize {
    window.index() * 2 + port.index()
}

pub fn cell_of(index: usize) -> (Window, Port) {
    (Window::ALL[index / 2], Port::ALL[index % 2])
}

/// Labels used for report output (U/L) of the physical ports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PortLabels {
    pub constructive: char,
    pub destructive: char,
}

impl Default for PortLabels {
    fn default() -> Self {
        Self {
            constructive: 'U',
            destructive: 'L',
        }
    }
}

impl PortLabels {
    pub fn label(&self, port: Port) -> char {
        match port {
            Port::Constructive => self.constructive,
            Port::Destructive => self.destructive,
        }
    }
}

/// Dark-count rate in kHz of the InGaAs APDs as a function of efficiency.
pub fn dark_rate(eta: f64) -> Result<f64, OpticsError> {
    if !(0.0..=1.0).contains(&eta) {
        return Err(OpticsError::Efficiency(eta));
    }
    Ok(7.4 * (9.2 * eta).exp())
}

/// Single Mach-Zehnder port probabilities. The constructive port carries
/// `cos²(Δφ/2)`, the destructive port `sin²(Δφ/2)`.
pub fn simple_prob(pair: PhasePair, port: Port) -> f64 {
    let half = 0.5 * pair.difference();
    match port {
        Port::Constructive => half.cos().powi(2),
        Port::Destructive => half.sin().powi(2),
    }
}

/// Central-slot total probability across both ports for 50/50 couplers.
pub const CENTRAL_TOTAL: f64 = 0.25;

/// Central-slot port probability for the time-multiplexed pair,
/// `(1 ± cos Δφ)/8`.
pub fn central_prob(pair: PhasePair, port: Port) -> f64 {
    let c = pair.difference().cos();
    match port {
        Port::Constructive => 0.125 * (1.0 + c),
        Port::Destructive => 0.125 * (1.0 - c),
    }
}

/// Per-port probabilities of the two non-interfering slots.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SideWindows {
    pub prompt: f64,
    pub delayed: f64,
}

/// Side-slot probability per port. `long_arm_transmission` is the power
/// transmission of one long-arm traversal; the delayed slot crosses two.
pub fn side_window_prob(long_arm_transmission: f64) -> SideWindows {
    SideWindows {
        prompt: 1.0 / 16.0,
        delayed: long_arm_transmission * long_arm_transmission / 16.0,
    }
}

/// Fraction of photons surviving the fiber.
pub fn transmission(channel: &ChannelConfig) -> f64 {
    10f64.powf(-channel.total_db() / 10.0)
}

/// Fraction of central-peak photons routed to `port` given visibility `v`.
pub fn central_share(delta_phi: f64, visibility: f64, port: Port) -> f64 {
    let c = visibility * delta_phi.cos();
    match port {
        Port::Constructive => 0.5 * (1.0 + c),
        Port::Destructive => 0.5 * (1.0 - c),
    }
}

pub fn sample_photon_count<R: Rng + ?Sized>(source: &SourceConfig, rng: &mut R) -> u32 {
    match source.statistics {
        PhotonStatistics::SinglePhoton => 1,
        PhotonStatistics::Poisson => sample_poisson(source.mu_central, rng),
    }
}

fn sample_poisson<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> u32 {
    if mean <= 0.0 {
        return 0;
    }
    let dist = Poisson::new(mean).expect("finite positive mean");
    dist.sample(rng) as u32
}

/// One transmitted bit's physical settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PulsePreparation {
    pub clock_index: u64,
    pub phi_a: f64,
    pub photon_count: u32,
}

/// Light on the fiber for one clock tick. `phase` is the phase imprinted by
/// the last device that prepared the light (Alice, or Eve on a resend).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OpticalPulse {
    pub clock_index: u64,
    pub phase: f64,
    /// Photons headed for the interfering central slot.
    pub photons: u32,
    /// Photons headed for the prompt and delayed slots.
    pub side_photons: u32,
}

impl OpticalPulse {
    pub fn is_empty(&self) -> bool {
        self.photons == 0 && self.side_photons == 0
    }
}

/// A detector click. `dark` is simulation ground truth and must not feed
/// protocol decisions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DetectionEvent {
    pub clock_index: u64,
    pub port: Port,
    pub window: Window,
    pub dark: bool,
}

/// Alice's weak-laser transmitter.
#[derive(Debug, Clone)]
pub struct Transmitter {
    statistics: PhotonStatistics,
    central: Option<Poisson<f64>>,
    side: Option<Poisson<f64>>,
}

impl Transmitter {
    pub fn new(optics: &OpticsConfig) -> Self {
        let src = &optics.source;
        let side = optics.interferometer.side_means_per_central();
        let side_mean = src.mu_central * 2.0 * (side.prompt + side.delayed);
        let poisson = |m: f64| (m > 0.0).then(|| Poisson::new(m).expect("finite mean"));
        match src.statistics {
            PhotonStatistics::Poisson => Self {
                statistics: src.statistics,
                central: poisson(src.mu_central),
                side: poisson(side_mean),
            },
            PhotonStatistics::SinglePhoton => Self {
                statistics: src.statistics,
                central: None,
                side: None,
            },
        }
    }

    pub fn emit<R: Rng + ?Sized>(&self, clock_index: u64, phase: f64, rng: &mut R) -> OpticalPulse {
        let photons = match self.statistics {
            PhotonStatistics::SinglePhoton => 1,
            PhotonStatistics::Poisson => self.central.map_or(0, |d| d.sample(rng) as u32),
        };
        let side_photons = self.side.map_or(0, |d| d.sample(rng) as u32);
        OpticalPulse {
            clock_index,
            phase,
            photons,
            side_photons,
        }
    }
}

/// Binomial thinning of a photon number by survival probability `t`.
pub fn thin<R: Rng + ?Sized>(n: u32, t: f64, rng: &mut R) -> u32 {
    if t >= 1.0 {
        return n;
    }
    (0..n).filter(|_| rng.random::<f64>() < t).count() as u32
}

/// Fiber loss applied to a pulse.
pub fn propagate<R: Rng + ?Sized>(pulse: OpticalPulse, transmission: f64, rng: &mut R) -> OpticalPulse {
    OpticalPulse {
        photons: thin(pulse.photons, transmission, rng),
        side_photons: thin(pulse.side_photons, transmission, rng),
        ..pulse
    }
}

/// Bob's interferometer and detector pair. Photon routing draws come from
/// one random stream; dark counts from another so that they stay aligned
/// whatever the light does.
#[derive(Debug, Clone)]
pub struct Receiver {
    efficiency: f64,
    visibility: f64,
    /// Cumulative side-cell weights in cell order (prompt C, prompt D, delayed C, delayed D).
    side_cdf: [f64; 4],
    dark_probability: f64,
}

impl Receiver {
    pub fn new(optics: &OpticsConfig) -> Self {
        let s = side_window_prob(optics.interferometer.long_arm_transmission);
        let w = [s.prompt, s.prompt, s.delayed, s.delayed];
        let total: f64 = w.iter().sum();
        let mut cdf = [0.0; 4];
        let mut acc = 0.0;
        for (c, x) in cdf.iter_mut().zip(w) {
            acc += x / total;
            *c = acc;
        }
        Self {
            efficiency: optics.detector.efficiency,
            visibility: optics.detector.intrinsic_visibility,
            side_cdf: cdf,
            dark_probability: optics.detector.dark_probability(),
        }
    }

    pub fn dark_probability(&self) -> f64 {
        self.dark_probability
    }

    /// Which cells receive at least one registered photon.
    pub fn photon_cells<R: Rng + ?Sized>(&self, pulse: &OpticalPulse, phi_b: f64, rng: &mut R) -> [bool; CELLS] {
        let mut hit = [false; CELLS];
        if pulse.photons > 0 {
            let dphi = pulse.phase - phi_b;
            let to_c = self.efficiency * central_share(dphi, self.visibility, Port::Constructive);
            for _ in 0..pulse.photons {
                let u: f64 = rng.random();
                if u < to_c {
                    hit[cell_index(Window::Central, Port::Constructive)] = true;
                } else if u < self.efficiency {
                    hit[cell_index(Window::Central, Port::Destructive)] = true;
                }
            }
        }
        for _ in 0..pulse.side_photons {
            let u: f64 = rng.random();
            if u < self.efficiency {
                let v = u / self.efficiency;
                let k = self.side_cdf.iter().position(|&c| v < c).unwrap_or(3);
                let (window, port) = match k {
                    0 => (Window::Prompt, Port::Constructive),
                    1 => (Window::Prompt, Port::Destructive),
                    2 => (Window::Delayed, Port::Constructive),
                    _ => (Window::Delayed, Port::Destructive),
                };
                hit[cell_index(window, port)] = true;
            }
        }
        hit
    }
}

/// Merges photon hits and dark hits into click events. A cell with both
/// counts as a photon click.
pub fn merge_clicks(clock_index: u64, photon: &[bool; CELLS], dark: &[bool; CELLS], out: &mut Vec<DetectionEvent>) {
    for i in 0..CELLS {
        if photon[i] || dark[i] {
            let (window, port) = cell_of(i);
            out.push(DetectionEvent {
                clock_index,
                port,
                window,
                dark: !photon[i],
            });
        }
    }
}

/// Per-cell dark-count generator that skips ahead geometrically, so a
/// 10⁻⁵ per-gate probability costs one draw per dark click instead of one
/// per gate.
#[derive(Debug, Clone)]
pub struct DarkCounts {
    log_q: f64,
    next: [u64; CELLS],
}

impl DarkCounts {
    pub fn new<R: Rng + ?Sized>(dark_probability: f64, rng: &mut R) -> Self {
        let mut d = Self {
            log_q: (-dark_probability).ln_1p(),
            next: [u64::MAX; CELLS],
        };
        for i in 0..CELLS {
            d.next[i] = d.gap(rng);
        }
        d
    }

    fn gap<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        if self.log_q == 0.0 {
            return u64::MAX;
        }
        // Geometric number of failures before the first success.
        let u: f64 = 1.0 - rng.random::<f64>();
        let g = (u.ln() / self.log_q).floor();
        if g >= 1.0e18 {
            u64::MAX
        } else {
            g as u64
        }
    }

    /// Earliest clock at which any cell has a dark click.
    pub fn next_clock(&self) -> u64 {
        *self.next.iter().min().expect("non-empty")
    }

    /// Dark clicks at `clock`, advancing the generator. Clocks must be
    /// visited in non-decreasing order and none may be skipped past a
    /// pending dark click (use [`next_clock`](Self::next_clock)).
    pub fn at<R: Rng + ?Sized>(&mut self, clock: u64, rng: &mut R) -> [bool; CELLS] {
        let mut hit = [false; CELLS];
        for i in 0..CELLS {
            debug_assert!(self.next[i] >= clock, "dark stream skipped a click");
            if self.next[i] == clock {
                hit[i] = true;
                let g = self.gap(rng);
                self.next[i] = clock.saturating_add(1).saturating_add(g);
            }
        }
        hit
    }
}

/// Per-pulse simulation with a single random stream: source, fiber,
/// interferometer, detectors and per-gate Bernoulli dark counts.
pub fn simulate_pulse<R: Rng + ?Sized>(
    prep: &PulsePreparation,
    phi_b: f64,
    optics: &OpticsConfig,
    rng: &mut R,
) -> Vec<DetectionEvent> {
    let side = optics.interferometer.side_means_per_central();
    let side_mean = optics.source.mu_central * 2.0 * (side.prompt + side.delayed);
    let side_photons = match optics.source.statistics {
        PhotonStatistics::Poisson => sample_poisson(side_mean, rng),
        PhotonStatistics::SinglePhoton => 0,
    };
    let pulse = OpticalPulse {
        clock_index: prep.clock_index,
        phase: prep.phi_a,
        photons: prep.photon_count,
        side_photons,
    };
    let arriving = propagate(pulse, optics.transmission(), rng);
    let receiver = Receiver::new(optics);
    let photon = receiver.photon_cells(&arriving, phi_b, rng);
    let p = receiver.dark_probability();
    let mut dark = [false; CELLS];
    for d in dark.iter_mut() {
        *d = p > 0.0 && rng.random::<f64>() < p;
    }
    let mut out = Vec::new();
    merge_clicks(prep.clock_index, &photon, &dark, &mut out);
    out
}

/// Expected mean photon number in each cell after loss and efficiency, for
/// a coherent pulse at phase difference `delta_phi`.
pub fn cell_means(optics: &OpticsConfig, delta_phi: f64) -> [f64; CELLS] {
    let t = optics.transmission() * optics.detector.efficiency;
    let v = optics.detector.intrinsic_visibility;
    let mu = optics.source.mu_central;
    let side = optics.interferometer.side_means_per_central();
    let mut m = [0.0; CELLS];
    m[cell_index(Window::Central, Port::Constructive)] = mu * t * central_share(delta_phi, v, Port::Constructive);
    m[cell_index(Window::Central, Port::Destructive)] = mu * t * central_share(delta_phi, v, Port::Destructive);
    if optics.source.statistics == PhotonStatistics::Poisson {
        for port in Port::ALL {
            m[cell_index(Window::Prompt, port)] = mu * t * side.prompt;
            m[cell_index(Window::Delayed, port)] = mu * t * side.delayed;
        }
    }
    m
}

/// Probability that each cell clicks on one pulse (photon or dark).
pub fn cell_click_probabilities(optics: &OpticsConfig, delta_phi: f64) -> [f64; CELLS] {
    let d = optics.detector.dark_probability();
    let means = cell_means(optics, delta_phi);
    let mut p = [0.0; CELLS];
    match optics.source.statistics {
        PhotonStatistics::Poisson => {
            for i in 0..CELLS {
                p[i] = 1.0 - (1.0 - d) * (-means[i]).exp();
            }
        }
        PhotonStatistics::SinglePhoton => {
            // one photon: the two central cells are mutually exclusive
            for i in 0..CELLS {
                p[i] = 1.0 - (1.0 - d) * (1.0 - means[i]);
            }
        }
    }
    p
}

/// Convenience for phase differences given in units of π/2.
pub fn quarter_turns(k: i32) -> f64 {
    f64::from(k) * PI / 2.0
}

/// Click tally per (window, port) cell split by origin.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CellTally {
    pub pulses: u64,
    /// Cells that clicked with at least one photon present.
    pub photon: [u64; CELLS],
    /// Cells that clicked from a dark count alone.
    pub dark: [u64; CELLS],
}

impl CellTally {
    pub fn total(&self, cell: usize) -> u64 {
        self.photon[cell] + self.dark[cell]
    }

    pub fn merge(&mut self, other: &CellTally) {
        self.pulses += other.pulses;
        for i in 0..CELLS {
            self.photon[i] += other.photon[i];
            self.dark[i] += other.dark[i];
        }
    }
}

/// Analytic expectation of a [`CellTally`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpectedTally {
    pub pulses: u64,
    pub photon: [f64; CELLS],
    pub dark: [f64; CELLS],
}

impl ExpectedTally {
    pub fn total(&self, cell: usize) -> f64 {
        self.photon[cell] + self.dark[cell]
    }
}

pub fn expected_tally(optics: &OpticsConfig, delta_phi: f64, pulses: u64) -> ExpectedTally {
    let d = optics.detector.dark_probability();
    let means = cell_means(optics, delta_phi);
    let n = pulses as f64;
    let mut photon = [0.0; CELLS];
    let mut dark = [0.0; CELLS];
    for i in 0..CELLS {
        let p_light = match optics.source.statistics {
            PhotonStatistics::Poisson => -(-means[i]).exp_m1(),
            PhotonStatistics::SinglePhoton => means[i],
        };
        photon[i] = n * p_light;
        dark[i] = n * (1.0 - p_light) * d;
    }
    ExpectedTally { pulses, photon, dark }
}

/// Monte Carlo of `pulses` pulses at a fixed phase difference on one lane.
pub fn simulate_fixed_phase(optics: &OpticsConfig, delta_phi: f64, pulses: u64, seed: u64) -> CellTally {
    use crate::rng::{stream, streams};
    let transmitter = Transmitter::new(optics);
    let receiver = Receiver::new(optics);
    let t = optics.transmission();
    let mut source = stream(seed, streams::SOURCE);
    let mut fiber = stream(seed, streams::FIBER);
    let mut routing = stream(seed, streams::BOB_ROUTING);
    let mut dark_rng = stream(seed, streams::BOB_DARKS);
    let mut darks = DarkCounts::new(receiver.dark_probability(), &mut dark_rng);
    let mut tally = CellTally {
        pulses,
        ..CellTally::default()
    };
    for clock in 0..pulses {
        let pulse = propagate(transmitter.emit(clock, delta_phi, &mut source), t, &mut fiber);
        let has_dark = darks.next_clock() == clock;
        if pulse.is_empty() && !has_dark {
            continue;
        }
        let photon = if pulse.is_empty() {
            [false; CELLS]
        } else {
            receiver.photon_cells(&pulse, 0.0, &mut routing)
        };
        let dark = if has_dark {
            darks.at(clock, &mut dark_rng)
        } else {
            [false; CELLS]
        };
        for i in 0..CELLS {
            if photon[i] {
                tally.photon[i] += 1;
            } else if dark[i] {
                tally.dark[i] += 1;
            }
        }
    }
    tally
}

/// Splits a fixed-phase run over `lanes` independent substreams (lane `k`
/// uses seed [`lane_seed`](crate::rng::lane_seed)`(seed, k)`) and merges the tallies. Lanes run in parallel when
/// the `parallel` feature is enabled; the result does not depend on it.
pub fn simulate_fixed_phase_lanes(
    optics: &OpticsConfig,
    delta_phi: f64,
    pulses: u64,
    seed: u64,
    lanes: u64,
) -> CellTally {
    let lanes = lanes.max(1);
    let share = |k: u64| pulses / lanes + u64::from(k < pulses % lanes);
    let run = |k: u64| simulate_fixed_phase(optics, delta_phi, share(k), crate::rng::lane_seed(seed, k));
    #[cfg(feature = "parallel")]
    let parts: Vec<CellTally> = {
        use rayon::prelude::*;
        (0..lanes).into_par_iter().map(run).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let parts: Vec<CellTally> = (0..lanes).map(run).collect();
    let mut total = CellTally::default();
    for p in &parts {
        total.merge(p);
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::FRAC_PI_2;

    const EPS: f64 = 1e-12;

    #[test]
    fn dark_rate_law() {
        assert!((dark_rate(0.0).unwrap() - 7.4).abs() < EPS);
        assert!((dark_rate(0.20).unwrap() - 46.594).abs() < 0.001);
        assert!((dark_rate(0.11).unwrap() - 20.36).abs() < 0.01);
        assert!(dark_rate(-0.1).is_err());
        assert!(dark_rate(1.01).is_err());
    }

    #[test]
    fn override_replaces_law() {
        let mut d = DetectorConfig::fiber();
        d.dark_rate_override = Some(50.0);
        assert_eq!(d.dark_rate_khz(), 50.0);
        assert!((d.dark_probability() - 50e3 * 0.9e-9).abs() < EPS);
    }

    #[test]
    fn simple_interferometer() {
        let p = |a, b| simple_prob(PhasePair::new(a, b), Port::Constructive);
        assert!((p(0.0, 0.0) - 1.0).abs() < EPS);
        assert!(p(0.0, PI).abs() < EPS);
        assert!((p(0.0, 3.0 * FRAC_PI_2) - 0.5).abs() < EPS);
        for k in 0..16 {
            let pair = PhasePair::new(0.3 * k as f64, 1.1);
            let s = simple_prob(pair, Port::Constructive) + simple_prob(pair, Port::Destructive);
            assert!((s - 1.0).abs() < EPS);
        }
    }

    #[test]
    fn central_window() {
        let c = |d: f64| central_prob(PhasePair::new(d, 0.0), Port::Constructive);
        assert!((c(0.0) - 0.25).abs() < EPS);
        assert!(c(PI).abs() < EPS);
        assert!((c(FRAC_PI_2) - 0.125).abs() < EPS);
    }

    #[test]
    fn side_windows() {
        assert_eq!(side_window_prob(1.0).prompt, 1.0 / 16.0);
        assert_eq!(side_window_prob(1.0).delayed, side_window_prob(1.0).prompt);
        assert!((side_window_prob(0.8).delayed - 0.04).abs() < EPS);
        assert!((0.8f64 * 0.8 / 16.0 - 0.04).abs() < EPS);
    }

    /// Independent four-coupler amplitude model of the time-multiplexed pair.
    /// Each 50/50 coupler transmits with 1/√2 and reflects with i/√2; a
    /// long-arm traversal multiplies the amplitude by √a·e^{iφ}.
    fn amplitude_model(phi_a: f64, phi_b: f64, a: f64) -> [f64; CELLS] {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let t = Complex64::new(h, 0.0);
        let r = Complex64::new(0.0, h);
        let long = |phi: f64| Complex64::from_polar(a.sqrt(), phi);
        // Alice: photon enters port 0; short = transmit then (to output 0) transmit,
        // long = reflect then reflect. Only output 0 goes to the fiber.
        let alice_short = t * t;
        let alice_long = r * long(phi_a) * r;
        let mut out = [0.0; CELLS];
        // Bob: fiber enters his input 0. Output U (constructive) via t·t / r·r,
        // output L via t·r / r·t.
        for (port, (s_first, s_second, l_first, l_second)) in [
            (Port::Constructive, (t, t, r, r)),
            (Port::Destructive, (t, r, r, t)),
        ] {
            let bob_short = s_first * s_second;
            let bob_long = l_first * long(phi_b) * l_second;
            let prompt = alice_short * bob_short;
            let delayed = alice_long * bob_long;
            let central = alice_short * bob_long + alice_long * bob_short;
            out[cell_index(Window::Prompt, port)] = prompt.norm_sqr();
            out[cell_index(Window::Central, port)] = central.norm_sqr();
            out[cell_index(Window::Delayed, port)] = delayed.norm_sqr();
        }
        out
    }

    #[test]
    fn amplitude_model_matches_closed_forms() {
        for i in 0..12 {
            let phi_a = 0.5 * i as f64;
            let phi_b = 1.3;
            let amp = amplitude_model(phi_a, phi_b, 1.0);
            let pair = PhasePair::new(phi_a, phi_b);
            let c = amp[cell_index(Window::Central, Port::Constructive)];
            let d = amp[cell_index(Window::Central, Port::Destructive)];
            assert!((c - central_prob(pair, Port::Constructive)).abs() < 1e-12, "i={i}");
            assert!((d - central_prob(pair, Port::Destructive)).abs() < 1e-12);
            assert!((amp[cell_index(Window::Prompt, Port::Constructive)] - 1.0 / 16.0).abs() < 1e-12);
        }
        let amp = amplitude_model(0.4, 2.0, 0.8);
        assert!((amp[cell_index(Window::Delayed, Port::Constructive)] - side_window_prob(0.8).delayed).abs() < 1e-12);
        assert!((amp[cell_index(Window::Prompt, Port::Destructive)] - side_window_prob(0.8).prompt).abs() < 1e-12);
    }

    #[test]
    fn transmission_budget() {
        assert_eq!(transmission(&ChannelConfig::lossless()), 1.0);
        let t = transmission(&ChannelConfig::with_total_db(22.9));
        assert!((t - 5.13e-3).abs() < 0.005e-3);
        assert!((ChannelConfig::fiber().total_db() - 22.9).abs() < 1e-9);
    }

    #[test]
    fn photon_statistics() {
        let src = SourceConfig::fiber();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 200_000;
        let mut zero = 0;
        let mut one = 0;
        for _ in 0..n {
            match sample_photon_count(&src, &mut rng) {
                0 => zero += 1,
                1 => one += 1,
                _ => {}
            }
        }
        let p0 = zero as f64 / n as f64;
        assert!((p0 - 0.533).abs() < 0.004, "{p0}");
        let multi = (n - zero - one) as f64 / (n - zero) as f64;
        assert!((multi - 0.282).abs() < 0.006, "{multi}");
        let mut none = SourceConfig::fiber();
        none.mu_central = 1e-300;
        assert_eq!(sample_photon_count(&none, &mut rng), 0);
    }

    #[test]
    fn empty_pulse_without_darks_is_silent() {
        let mut optics = OpticsConfig::fiber();
        optics.detector.dark_rate_override = Some(0.0);
        optics.interferometer.layout = Layout::Simple;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let prep = PulsePreparation {
            clock_index: 3,
            phi_a: 0.0,
            photon_count: 0,
        };
        for _ in 0..100 {
            assert!(simulate_pulse(&prep, 0.0, &optics, &mut rng).is_empty());
        }
    }

    #[test]
    fn bright_limit_saturates_constructive_port() {
        let mut optics = OpticsConfig::ideal();
        optics.source = SourceConfig {
            mu_central: 40.0,
            statistics: PhotonStatistics::Poisson,
            ..SourceConfig::fiber()
        };
        let p = cell_click_probabilities(&optics, 0.0);
        assert!(p[cell_index(Window::Central, Port::Constructive)] > 1.0 - 1e-12);
        assert_eq!(p[cell_index(Window::Central, Port::Destructive)], 0.0);
    }

    #[test]
    fn dark_stream_rate() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let p = 0.01;
        let mut dark = DarkCounts::new(p, &mut rng);
        let n = 200_000u64;
        let mut count = [0u64; CELLS];
        let mut clock = 0;
        while clock < n {
            let next = dark.next_clock();
            if next >= n {
                break;
            }
            clock = next;
            for (c, h) in count.iter_mut().zip(dark.at(clock, &mut rng)) {
                *c += h as u64;
            }
        }
        let sd = (n as f64 * p * (1.0 - p)).sqrt();
        for c in count {
            assert!((c as f64 - n as f64 * p).abs() < 4.0 * sd, "{c}");
        }
    }
}
