//! Command-line grammar and the mapping from flags onto a [`RunConfig`].

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use qkd_core::adversary::{AttackKind, AttackModel};
use qkd_core::config::{ConfigError, RunConfig};
use qkd_core::optics::{ChannelConfig, OpticsConfig};
use qkd_core::postprocessing::Decoder;
use qkd_core::protocol::ProtocolKind;

#[derive(Debug, Parser)]
#[command(name = "qkd", version, about = "Fiber quantum key distribution simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a complete session with both parties in this process.
    Run {
        #[command(flatten)]
        config: ConfigArgs,
        #[command(flatten)]
        out: OutputArgs,
        /// Run each party on its own thread.
        #[arg(long)]
        threaded: bool,
    },
    /// Reproduce a reference figure or calculation.
    Reproduce {
        target: Target,
        /// Expectation formulas only (instant).
        #[arg(long, conflicts_with = "montecarlo")]
        analytic: bool,
        /// Full Monte Carlo run (the default for fig6).
        #[arg(long)]
        montecarlo: bool,
        /// Pulses per phase setting for the fig6 Monte Carlo.
        #[arg(long, default_value_t = qkd_core::config::DEFAULT_PULSES)]
        pulses: u64,
        /// Monte Carlo seed; drawn from the operating system when absent.
        #[arg(long)]
        seed: Option<u64>,
        /// Print the table as JSON.
        #[arg(long)]
        json: bool,
        /// Also write the table as CSV.
        #[arg(long, value_name = "PATH")]
        csv: Option<PathBuf>,
    },
    /// Run Alice's side, waiting for Bob on a TCP address.
    Serve {
        #[arg(long, default_value = "127.0.0.1:7411")]
        listen: String,
        #[command(flatten)]
        config: ConfigArgs,
        #[command(flatten)]
        out: OutputArgs,
    },
    /// Run Bob's side against an Alice listening at a TCP address.
    Connect {
        #[arg(long, default_value = "127.0.0.1:7411")]
        address: String,
        #[command(flatten)]
        config: ConfigArgs,
        #[command(flatten)]
        out: OutputArgs,
    },
    /// Re-execute both parties against a recorded transcript.
    Replay {
        transcript: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Print the effective configuration as TOML.
    Config {
        #[command(flatten)]
        config: ConfigArgs,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Target {
    Fig6,
    Fig7,
    Budget,
    Bounds,
    Multiphoton,
    Opteta,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    /// The 48 km fiber experiment.
    Fiber,
    /// Single photons, no loss, perfect detectors.
    Ideal,
}

#[derive(Debug, Clone, Default, Args)]
#[command(allow_negative_numbers = true)]
pub struct ConfigArgs {
    /// TOML configuration file; flags override its values.
    #[arg(long, short = 'c', value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Replace the optical setup with a named one; flags still apply on top.
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    /// b92 or bb84.
    #[arg(long, value_parser = parse_protocol)]
    pub protocol: Option<ProtocolKind>,
    /// Session length in pulses.
    #[arg(long)]
    pub pulses: Option<u64>,
    /// Session length in seconds at the configured pulse rate.
    #[arg(long, conflicts_with = "pulses")]
    pub duration: Option<f64>,
    /// Master seed; drawn from the operating system when absent.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Mean photon number of the central peak.
    #[arg(long)]
    pub mu: Option<f64>,
    /// End-to-end channel loss in dB.
    #[arg(long)]
    pub loss_db: Option<f64>,
    /// Detector efficiency.
    #[arg(long)]
    pub efficiency: Option<f64>,
    /// Dark-count rate in kHz, replacing the efficiency law.
    #[arg(long)]
    pub dark_rate: Option<f64>,
    /// Residual fringe visibility.
    #[arg(long)]
    pub visibility: Option<f64>,
    /// none, intercept-alice, intercept-bob or beamsplit.
    #[arg(long, value_parser = parse_attack)]
    pub attack: Option<AttackKind>,
    /// Fraction of pulses the eavesdropper attacks.
    #[arg(long)]
    pub fraction: Option<f64>,
    /// Photons per resent pulse.
    #[arg(long)]
    pub multiplicity: Option<u32>,
    /// Abort when the estimated BER exceeds this.
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Security margin in bits.
    #[arg(long)]
    pub margin: Option<u64>,
    /// Bob's reconciliation decoder: local or bp.
    #[arg(long, value_parser = parse_decoder)]
    pub decoder: Option<Decoder>,
    /// One-time-pad the verification parities.
    #[arg(long)]
    pub encrypt_parities: bool,
    /// Seconds to wait for each message from the peer.
    #[arg(long)]
    pub timeout: Option<f64>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct OutputArgs {
    /// Print the report as JSON instead of `key: value` lines.
    #[arg(long)]
    pub json: bool,
    /// Write the public transcript (JSON Lines).
    #[arg(long, value_name = "PATH")]
    pub transcript: Option<PathBuf>,
    /// Write the oracle sidecar; defaults next to the transcript.
    #[arg(long, value_name = "PATH")]
    pub oracle: Option<PathBuf>,
    /// Write the report as JSON.
    #[arg(long, value_name = "PATH")]
    pub report: Option<PathBuf>,
}

fn parse_protocol(s: &str) -> Result<ProtocolKind, String> {
    match s.to_ascii_lowercase().as_str() {
        "b92" => Ok(ProtocolKind::B92),
        "bb84" => Ok(ProtocolKind::BB84),
        other => Err(format!("unknown protocol `{other}` (expected b92 or bb84)")),
    }
}

fn parse_attack(s: &str) -> Result<AttackKind, String> {
    s.parse()
}

fn parse_decoder(s: &str) -> Result<Decoder, String> {
    match s {
        "local" => Ok(Decoder::Local),
        "bp" | "belief-propagation" => Ok(Decoder::BeliefPropagation),
        other => Err(format!("unknown decoder `{other}` (expected local or bp)")),
    }
}

impl ConfigArgs {
    /// Loads the file, applies the preset and the flag overrides, then validates.
    pub fn resolve(&self) -> Result<RunConfig, ConfigError> {
        let mut c = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        match self.preset {
            Some(Preset::Ideal) => c.optics = OpticsConfig::ideal(),
            Some(Preset::Fiber) => c.optics = OpticsConfig::fiber(),
            None => {}
        }
        if let Some(p) = self.protocol {
            c.protocol = p;
        }
        if let Some(p) = self.pulses {
            c.pulses = Some(p);
            c.duration_s = None;
        }
        if let Some(d) = self.duration {
            c.duration_s = Some(d);
            c.pulses = None;
        }
        if let Some(s) = self.seed {
            c.seed = Some(s);
            c.seeds = None;
        }
        let o = &mut c.optics;
        if let Some(mu) = self.mu {
            o.source.mu_central = mu;
        }
        if let Some(db) = self.loss_db {
            o.channel = ChannelConfig::with_total_db(db);
        }
        if let Some(e) = self.efficiency {
            o.detector.efficiency = e;
        }
        if let Some(r) = self.dark_rate {
            o.detector.dark_rate_override = Some(r);
        }
        if let Some(v) = self.visibility {
            o.detector.intrinsic_visibility = v;
        }
        if let Some(kind) = self.attack {
            c.attack = AttackModel {
                kind,
                fraction: if kind == AttackKind::None { 0.0 } else { 1.0 },
                ..c.attack
            };
        }
        if let Some(f) = self.fraction {
            c.attack.fraction = f;
        }
        if let Some(m) = self.multiplicity {
            c.attack.resend_multiplicity = m;
        }
        let post = &mut c.postprocessing;
        if let Some(t) = self.threshold {
            post.ber_threshold = t;
        }
        if let Some(m) = self.margin {
            post.security_margin = m;
        }
        if let Some(d) = self.decoder {
            post.reconcile.decoder = d;
        }
        if self.encrypt_parities {
            post.encrypt_parities = true;
        }
        if let Some(t) = self.timeout {
            c.session.timeout_s = t;
        }
        c.validate()?;
        Ok(c)
    }
}
