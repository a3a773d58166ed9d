//! Browser bindings for the simulator: a full two-party session, the sifted
//! rate budget and the interference fringe seen by Bob's detectors.
//!
//! Every export returns a JSON string so the page can stay framework-free.

use qkd_core::adversary::{AttackKind, AttackModel};
use qkd_core::analysis::rate_budget;
use qkd_core::config::RunConfig;
use qkd_core::optics::{cell_click_probabilities, cell_index, OpticsConfig, Port, Window};
use qkd_core::protocol::ProtocolKind;
use qkd_core::session::{run_loopback, Status};
use serde::Serialize;
use wasm_bindgen::prelude::*;

/// Parameters of a session as entered on the page.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionInput {
    pub protocol: String,
    pub ideal: bool,
    pub mu: f64,
    pub pulses: u64,
    pub seed: u64,
    pub attack: String,
    pub fraction: f64,
}

#[derive(Debug, Serialize)]
pub struct SessionOutcome {
    pub status: String,
    pub sifted_bits: usize,
    pub ber: f64,
    pub dark_error_fraction: f64,
    pub leak_bits: u64,
    pub margin_bits: u64,
    pub final_key_bits: u64,
    pub keys_equal: bool,
    pub digest: String,
    pub eve_info: Option<f64>,
    /// The first sifted bits of each party, for display.
    pub alice_head: String,
    pub bob_head: String,
}

const HEAD_BITS: usize = 64;

pub fn session(input: &SessionInput) -> Result<SessionOutcome, String> {
    let mut cfg = RunConfig::default();
    cfg.protocol = input.protocol.parse::<ProtocolKind>()?;
    if input.ideal {
        cfg.optics = OpticsConfig::ideal();
    } else {
        cfg.optics.source.mu_central = input.mu;
    }
    cfg.pulses = Some(input.pulses);
    cfg.seed = Some(input.seed);
    cfg.attack = AttackModel::new(input.attack.parse::<AttackKind>()?, input.fraction);
    let r = run_loopback(&cfg).map_err(|e| e.to_string())?;
    let status = match (&r.alice.status, &r.bob.status) {
        (Status::Completed, Status::Completed) => "completed".to_string(),
        (Status::Aborted { reason, .. }, _) | (_, Status::Aborted { reason, .. }) => format!("aborted: {reason}"),
    };
    let a = r.alice.accounting;
    let head = |s: &str| s.chars().take(HEAD_BITS).collect::<String>();
    Ok(SessionOutcome {
        status,
        sifted_bits: r.oracle.sifted_bits,
        ber: r.oracle.ber,
        dark_error_fraction: r.oracle.dark_error_fraction,
        leak_bits: a.leak_charged,
        margin_bits: a.margin,
        final_key_bits: a.final_key,
        keys_equal: r.oracle.final_keys_equal,
        digest: r.alice.digest(),
        eve_info: r.oracle.eve.as_ref().map(|e| e.fraction()),
        alice_head: head(&r.oracle.alice_sifted),
        bob_head: head(&r.oracle.bob_sifted),
    })
}

/// Expected sifted-key rate budget for the fiber link at the given settings.
pub fn budget(protocol: &str, mu: f64, length_km: f64, efficiency: f64) -> Result<serde_json::Value, String> {
    let mut optics = OpticsConfig::fiber();
    optics.source.mu_central = mu;
    optics.channel.length_km = length_km;
    optics.detector.efficiency = efficiency;
    optics.validate().map_err(|e| e.to_string())?;
    let b = rate_budget(&optics, protocol.parse::<ProtocolKind>()?);
    serde_json::to_value(b).map_err(|e| e.to_string())
}

#[derive(Debug, Serialize, PartialEq)]
pub struct FringePoint {
    pub phase: f64,
    pub constructive: f64,
    pub destructive: f64,
}

/// Central-window click probabilities per pulse over one period of phase difference.
pub fn fringe(mu: f64, points: usize) -> Result<Vec<FringePoint>, String> {
    let mut optics = OpticsConfig::fiber();
    optics.source.mu_central = mu;
    optics.validate().map_err(|e| e.to_string())?;
    let n = points.max(2);
    Ok((0..n)
        .map(|k| {
            let phase = std::f64::consts::TAU * k as f64 / (n - 1) as f64;
            let p = cell_click_probabilities(&optics, phase);
            FringePoint {
                phase,
                constructive: p[cell_index(Window::Central, Port::Constructive)],
                destructive: p[cell_index(Window::Central, Port::Destructive)],
            }
        })
        .collect())
}

fn to_js<T: Serialize>(r: Result<T, String>) -> Result<String, JsError> {
    let v = r.map_err(|e| JsError::new(&e))?;
    serde_json::to_string(&v).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen(js_name = runSession)]
#[allow(clippy::too_many_arguments)]
pub fn run_session(
    protocol: &str,
    ideal: bool,
    mu: f64,
    pulses: f64,
    seed: f64,
    attack: &str,
    fraction: f64,
) -> Result<String, JsError> {
    let input = SessionInput {
        protocol: protocol.to_string(),
        ideal,
        mu,
        pulses: pulses.max(0.0) as u64,
        seed: seed.max(0.0) as u64,
        attack: attack.to_string(),
        fraction,
    };
    to_js(session(&input))
}

#[wasm_bindgen(js_name = rateBudget)]
pub fn rate_budget_js(protocol: &str, mu: f64, length_km: f64, efficiency: f64) -> Result<String, JsError> {
    to_js(budget(protocol, mu, length_km, efficiency))
}

#[wasm_bindgen(js_name = fringe)]
pub fn fringe_js(mu: f64, points: u32) -> Result<String, JsError> {
    to_js(fringe(mu, points as usize))
}
