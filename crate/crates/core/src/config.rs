//! The run configuration: one TOML document covering the protocol, the
//! optical path, the eavesdropper, post-processing and session plumbing.
//! Every field has a default, and the defaults describe the 48 km B92
//! experiment run for 600 s.
//!
//! ```toml
//! protocol = "b92"
//! pulses = 60000000
//! seed = 7
//!
//! [optics.source]
//! mu_central = 0.63
//!
//! [attack]
//! kind = "intercept-alice"
//! fraction = 1.0
//!
//! [postprocessing]
//! ber_threshold = 0.15
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::adversary::{AttackError, AttackModel};
use crate::optics::{OpticsConfig, OpticsError, PortLabels};
use crate::postprocessing::ReconcileParams;
use crate::protocol::{ProtocolKind, DEFAULT_BATCH_CLOCKS};
use crate::rng::Seeds;

/// Pulses in a 600 s run at 100 kHz.
pub const DEFAULT_PULSES: u64 = 60_000_000;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid configuration file: {0}")]
    Parse(String),
    #[error(transparent)]
    Optics(#[from] OpticsError),
    #[error(transparent)]
    Attack(#[from] AttackError),
    #[error("BER threshold {0} is outside (0, 0.5)")]
    Threshold(f64),
    #[error("sample fraction {0} is outside (0, 1)")]
    SampleFraction(f64),
    #[error("reconciliation blocks must be at least 2×2 with at least one pass")]
    Blocks,
    #[error("duration {duration_s} s at {rate} Hz is {implied} pulses, but pulses = {pulses}")]
    DurationMismatch {
        duration_s: f64,
        rate: f64,
        implied: f64,
        pulses: u64,
    },
    #[error("duration must be finite and non-negative, got {0}")]
    Duration(f64),
    #[error("timeout must be positive")]
    Timeout,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PostConfig {
    /// Sessions whose estimated BER exceeds this abort.
    pub ber_threshold: f64,
    /// Fraction of the sifted key sacrificed in pairs for the BER estimate.
    pub sample_fraction: f64,
    pub reconcile: ReconcileParams,
    /// Bits removed on top of the disclosed leak and the eavesdropper bound.
    pub security_margin: u64,
    /// Also remove `min(1, 3·BER)·n` bits for the intercept-resend knowledge bound.
    pub eve_bound: bool,
    /// One-time-pad the verification parities with pool bits instead of
    /// charging them against the key.
    pub encrypt_parities: bool,
    /// Size of the pre-shared authentication pool.
    pub auth_pool_bits: usize,
    /// Amplified bits moved into the pool at the end of a session.
    pub refill_bits: usize,
}

impl Default for PostConfig {
    fn default() -> Self {
        Self {
            ber_threshold: 0.15,
            sample_fraction: 0.2,
            reconcile: ReconcileParams::default(),
            security_margin: 64,
            eve_bound: true,
            encrypt_parities: false,
            auth_pool_bits: 192 * 64,
            refill_bits: 256,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionConfig {
    /// Derived from the seeds when absent.
    pub session_id: Option<u64>,
    /// Seconds to wait for each expected message.
    pub timeout_s: f64,
    /// Clock ticks per optical batch.
    pub batch_clocks: u64,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            session_id: None,
            timeout_s: 30.0,
            batch_clocks: DEFAULT_BATCH_CLOCKS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct OutputConfig {
    /// JSON Lines transcript of the public channel.
    pub transcript: Option<PathBuf>,
    /// Ground-truth sidecar; defaults to the transcript path with `.oracle.json`.
    pub oracle: Option<PathBuf>,
    /// Machine-readable report.
    pub report_json: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub protocol: ProtocolKind,
    /// Session length in clock ticks; derived from `duration_s` when absent.
    pub pulses: Option<u64>,
    pub duration_s: Option<f64>,
    /// Master seed from which all party seeds derive.
    pub seed: Option<u64>,
    /// Explicit party seeds, overriding `seed`.
    pub seeds: Option<Seeds>,
    pub optics: OpticsConfig,
    pub attack: AttackModel,
    pub postprocessing: PostConfig,
    pub session: SessionConfig,
    pub labels: PortLabels,
    pub output: OutputConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            protocol: ProtocolKind::B92,
            pulses: None,
            duration_s: None,
            seed: None,
            seeds: None,
            optics: OpticsConfig::fiber(),
            attack: AttackModel::none(),
            postprocessing: PostConfig::default(),
            session: SessionConfig::default(),
            labels: PortLabels::default(),
            output: OutputConfig::default(),
        }
    }
}

/// The fields both endpoints must agree on before any light is sent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Negotiated {
    pub protocol: ProtocolKind,
    pub pulses: u64,
    pub session_id: u64,
    pub batch_clocks: u64,
    pub postprocessing: PostConfig,
}

impl RunConfig {
    pub fn fiber() -> Self {
        Self::default()
    }

    pub fn from_toml_str(s: &str) -> Result<Self, ConfigError> {
        toml::from_str(s).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("configuration serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.optics.validate()?;
        self.attack.validate(self.protocol)?;
        let post = &self.postprocessing;
        if !(post.ber_threshold > 0.0 && post.ber_threshold < 0.5) {
            return Err(ConfigError::Threshold(post.ber_threshold));
        }
        if !(post.sample_fraction > 0.0 && post.sample_fraction < 1.0) {
            return Err(ConfigError::SampleFraction(post.sample_fraction));
        }
        let r = &post.reconcile;
        if r.rows < 2 || r.cols < 2 || r.max_passes == 0 {
            return Err(ConfigError::Blocks);
        }
        if !(self.session.timeout_s > 0.0) {
            return Err(ConfigError::Timeout);
        }
        if let Some(d) = self.duration_s {
            if !(d >= 0.0 && d.is_finite()) {
                return Err(ConfigError::Duration(d));
            }
            if let Some(pulses) = self.pulses {
                let rate = self.optics.source.pulse_rate;
                let implied = d * rate;
                if (implied - pulses as f64).abs() > 0.5 {
                    return Err(ConfigError::DurationMismatch {
                        duration_s: d,
                        rate,
                        implied,
                        pulses,
                    });
                }
            }
        }
        Ok(())
    }

    pub fn pulse_count(&self) -> u64 {
        match (self.pulses, self.duration_s) {
            (Some(p), _) => p,
            (None, Some(d)) => (d * self.optics.source.pulse_rate).round() as u64,
            (None, None) => DEFAULT_PULSES,
        }
    }

    /// Seconds of operation the session represents.
    pub fn duration(&self) -> f64 {
        self.pulse_count() as f64 / self.optics.source.pulse_rate
    }

    pub fn seeds(&self) -> Seeds {
        self.seeds.unwrap_or_else(|| Seeds::from_master(self.seed.unwrap_or(0)))
    }

    pub fn session_id(&self) -> u64 {
        self.session.session_id.unwrap_or_else(|| {
            let s = self.seeds();
            let mut h = Sha256::new();
            for v in [s.alice, s.bob, s.eve, s.channel] {
                h.update(v.to_be_bytes());
            }
            u64::from_be_bytes(h.finalize()[..8].try_into().expect("8 bytes"))
        })
    }

    pub fn negotiated(&self) -> Negotiated {
        Negotiated {
            protocol: self.protocol,
            pulses: self.pulse_count(),
            session_id: self.session_id(),
            batch_clocks: self.session.batch_clocks,
            postprocessing: self.postprocessing,
        }
    }

    /// SHA-256 of the negotiated fields and the optical configuration.
    pub fn digest(&self) -> [u8; 32] {
        let body = serde_json::to_vec(&(self.negotiated(), self.optics)).expect("configuration serializes");
        Sha256::digest(&body).into()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adversary::AttackKind;

    #[test]
    fn defaults_are_the_experiment() {
        let c = RunConfig::default();
        c.validate().unwrap();
        assert_eq!(c.pulse_count(), 60_000_000);
        assert!((c.duration() - 600.0).abs() < 1e-9);
        assert_eq!(c.optics.source.mu_central, 0.63);
        assert!((c.optics.channel.total_db() - 22.9).abs() < 1e-9);
        assert_eq!(c.postprocessing.ber_threshold, 0.15);
    }

    #[test]
    fn partial_toml_fills_defaults() {
        let c = RunConfig::from_toml_str(
            r#"
            protocol = "bb84"
            pulses = 1000
            seed = 3
            [optics.source]
            mu_central = 0.39
            [attack]
            kind = "intercept-alice"
            fraction = 1.0
            "#,
        )
        .unwrap();
        assert_eq!(c.protocol, ProtocolKind::BB84);
        assert_eq!(c.optics.source.mu_central, 0.39);
        assert_eq!(c.optics.source.pulse_rate, 100_000.0);
        assert_eq!(c.attack.kind, AttackKind::InterceptResendAliceBasis);
        assert_eq!(c.attack.resend_multiplicity, 1);
        c.validate().unwrap();
    }

    #[test]
    fn round_trips_through_toml() {
        let mut c = RunConfig::default();
        c.seed = Some(11);
        c.pulses = Some(5);
        c.output.transcript = Some("t.jsonl".into());
        assert_eq!(RunConfig::from_toml_str(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn validation_errors() {
        let mut c = RunConfig::default();
        c.postprocessing.ber_threshold = 0.5;
        assert!(matches!(c.validate(), Err(ConfigError::Threshold(_))));
        let mut c = RunConfig::default();
        c.postprocessing.ber_threshold = 0.0;
        assert!(c.validate().is_err());
        let mut c = RunConfig::default();
        c.pulses = Some(1000);
        c.duration_s = Some(1.0);
        assert!(matches!(c.validate(), Err(ConfigError::DurationMismatch { .. })));
        c.pulses = Some(100_000);
        c.validate().unwrap();
        let mut c = RunConfig::default();
        c.protocol = ProtocolKind::BB84;
        c.attack = AttackModel::new(AttackKind::InterceptResendBobBasis, 1.0);
        assert!(matches!(c.validate(), Err(ConfigError::Attack(_))));
        assert!(RunConfig::from_toml_str("protocol = 3").is_err());
    }

    #[test]
    fn duration_sets_pulses() {
        let c = RunConfig {
            duration_s: Some(2.5),
            ..RunConfig::default()
        };
        assert_eq!(c.pulse_count(), 250_000);
    }

    #[test]
    fn digest_tracks_negotiated_fields_only() {
        let a = RunConfig {
            seed: Some(1),
            ..RunConfig::default()
        };
        let mut b = a.clone();
        b.output.report_json = Some("r.json".into());
        b.session.timeout_s = 5.0;
        assert_eq!(a.digest(), b.digest());
        b.postprocessing.security_margin += 1;
        assert_ne!(a.digest(), b.digest());
        let c = RunConfig {
            seed: Some(2),
            ..RunConfig::default()
        };
        assert_ne!(a.session_id(), c.session_id());
    }
}
