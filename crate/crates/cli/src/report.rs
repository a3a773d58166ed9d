//! Flat, stable-keyed summaries of session outcomes and their rendering.

use std::fmt::Write as _;

use qkd_core::config::RunConfig;
use qkd_core::session::{EndpointReport, SessionReport, Status};
use serde::Serialize;
use serde_json::Value;

#[derive(Debug, Serialize)]
pub struct RunSummary {
    pub seed: Option<u64>,
    pub protocol: String,
    pub pulses: u64,
    pub duration_s: f64,
    pub session_id: String,
    pub status: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub abort_by: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub abort_code: Option<u8>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub abort_reason: Option<String>,
    pub sifted_bits: usize,
    pub sifted_rate_hz: f64,
    pub ber_oracle: f64,
    pub ber_sampled: Option<f64>,
    pub errors: usize,
    pub dark_errors: usize,
    pub dark_error_fraction: f64,
    pub sacrificed_bits: u64,
    pub dropped_bits: u64,
    pub reconciled_bits: u64,
    pub reconcile_passes: Option<u32>,
    pub disclosed_parities: u64,
    pub leak_bits: u64,
    pub margin_bits: u64,
    pub amplified_bits: u64,
    pub refill_bits: u64,
    pub final_key_bits: u64,
    pub discarded_bits: u64,
    pub final_key_rate_hz: f64,
    pub keys_equal: bool,
    pub final_key_digest: String,
    pub multi_click_observed: Option<u64>,
    pub multi_click_expected: Option<f64>,
    pub multi_click_z: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eve_info: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eve_certain: Option<f64>,
}

fn status_fields(s: &Status) -> (&'static str, Option<String>, Option<u8>, Option<String>) {
    match s {
        Status::Completed => ("completed", None, None, None),
        Status::Aborted { by, reason } => (
            "aborted",
            Some(format!("{by:?}").to_lowercase()),
            Some(reason.code as u8),
            Some(reason.to_string()),
        ),
    }
}

/// The status of a two-party run: the first aborting side wins.
fn joint_status(r: &SessionReport) -> &Status {
    if r.alice.status.is_completed() {
        &r.bob.status
    } else {
        &r.alice.status
    }
}

impl RunSummary {
    pub fn new(seed: Option<u64>, r: &SessionReport) -> Self {
        let (status, abort_by, abort_code, abort_reason) = status_fields(joint_status(r));
        let o = &r.oracle;
        let a = r.alice.accounting;
        let duration = o.duration_s;
        Self {
            seed,
            protocol: r.config.protocol.name().to_string(),
            pulses: r.config.pulse_count(),
            duration_s: duration,
            session_id: format!("{:016x}", r.config.session_id()),
            status,
            abort_by,
            abort_code,
            abort_reason,
            sifted_bits: o.sifted_bits,
            sifted_rate_hz: o.sifted_rate_hz,
            ber_oracle: o.ber,
            ber_sampled: r.bob.ber.as_ref().or(r.alice.ber.as_ref()).map(|b| b.rate),
            errors: o.errors,
            dark_errors: o.dark_errors,
            dark_error_fraction: o.dark_error_fraction,
            sacrificed_bits: a.sacrificed,
            dropped_bits: a.dropped,
            reconciled_bits: a.reconciled,
            reconcile_passes: r.alice.reconcile.map(|s| s.passes),
            disclosed_parities: a.disclosed_parities,
            leak_bits: a.leak_charged,
            margin_bits: a.margin,
            amplified_bits: a.amplified,
            refill_bits: a.refill,
            final_key_bits: a.final_key,
            discarded_bits: a.discarded,
            final_key_rate_hz: if duration > 0.0 { a.final_key as f64 / duration } else { 0.0 },
            keys_equal: o.final_keys_equal,
            final_key_digest: r.alice.digest(),
            multi_click_observed: o.multi_click.map(|m| m.observed),
            multi_click_expected: o.multi_click.map(|m| m.expected),
            multi_click_z: o.multi_click.map(|m| m.z_score),
            eve_info: o.eve.as_ref().map(|e| e.fraction()),
            eve_certain: o.eve.as_ref().map(|e| e.certain_fraction()),
        }
    }
}

/// One side of a two-process session, from that side's view only.
#[derive(Debug, Serialize)]
pub struct EndpointSummary {
    pub role: String,
    pub seed: Option<u64>,
    pub protocol: String,
    pub pulses: u64,
    pub session_id: String,
    pub status: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub abort_by: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub abort_code: Option<u8>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub abort_reason: Option<String>,
    pub sifted_bits: usize,
    pub ber_sampled: Option<f64>,
    pub reconciled_bits: u64,
    pub leak_bits: u64,
    pub margin_bits: u64,
    pub amplified_bits: u64,
    pub refill_bits: u64,
    pub final_key_bits: u64,
    pub discarded_bits: u64,
    pub final_key_digest: String,
    pub frames: usize,
    pub pool_consumed_bits: usize,
}

impl EndpointSummary {
    pub fn new(seed: Option<u64>, cfg: &RunConfig, r: &EndpointReport) -> Self {
        let (status, abort_by, abort_code, abort_reason) = status_fields(&r.status);
        let a = r.accounting;
        Self {
            role: format!("{:?}", r.role).to_lowercase(),
            seed,
            protocol: cfg.protocol.name().to_string(),
            pulses: cfg.pulse_count(),
            session_id: format!("{:016x}", cfg.session_id()),
            status,
            abort_by,
            abort_code,
            abort_reason,
            sifted_bits: r.sifted.len(),
            ber_sampled: r.ber.as_ref().map(|b| b.rate),
            reconciled_bits: a.reconciled,
            leak_bits: a.leak_charged,
            margin_bits: a.margin,
            amplified_bits: a.amplified,
            refill_bits: a.refill,
            final_key_bits: a.final_key,
            discarded_bits: a.discarded,
            final_key_digest: r.digest(),
            frames: r.log.len(),
            pool_consumed_bits: r.pool.consumed_bits,
        }
    }
}

/// `key: value` lines for a flat JSON object; absent values print as `-`.
pub fn key_values(v: &Value) -> String {
    let mut out = String::new();
    if let Value::Object(map) = v {
        for (k, v) in map {
            let text = match v {
                Value::Null => "-".to_string(),
                Value::String(s) => s.clone(),
                other => other.to_string(),
            };
            let _ = writeln!(out, "{k}: {text}");
        }
    }
    out
}

pub fn render<T: Serialize>(value: &T, json: bool) -> String {
    let v = serde_json::to_value(value).expect("report serializes");
    if json {
        let mut s = serde_json::to_string_pretty(&v).expect("report serializes");
        s.push('\n');
        s
    } else {
        key_values(&v)
    }
}
