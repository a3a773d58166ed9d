use qkd_web::{budget, fringe, session, SessionInput};

fn input(protocol: &str, ideal: bool, pulses: u64, attack: &str, fraction: f64) -> SessionInput {
    SessionInput {
        protocol: protocol.into(),
        ideal,
        mu: 0.63,
        pulses,
        seed: 5,
        attack: attack.into(),
        fraction,
    }
}

#[test]
fn ideal_session_yields_an_error_free_key() {
    let out = session(&input("bb84", true, 20_000, "none", 0.0)).unwrap();
    assert_eq!(out.status, "completed");
    assert_eq!(out.ber, 0.0);
    assert!(out.keys_equal);
    assert!(out.final_key_bits > 0);
    assert_eq!(out.alice_head, out.bob_head);
    assert_eq!(out.alice_head.len(), 64);
}

#[test]
fn intercepted_session_aborts() {
    let out = session(&input("b92", true, 20_000, "intercept-alice", 1.0)).unwrap();
    assert!(out.status.starts_with("aborted"), "{}", out.status);
    assert_eq!(out.final_key_bits, 0);
    assert!(out.eve_info.unwrap() > 0.7);
}

#[test]
fn bad_inputs_are_reported() {
    assert!(session(&input("b93", true, 10, "none", 0.0)).is_err());
    assert!(session(&input("b92", true, 10, "tap", 0.0)).is_err());
    assert!(budget("b92", -1.0, 48.0, 0.11).is_err());
    assert!(fringe(0.0, 10).is_err());
}

#[test]
fn default_budget_is_about_ten_hertz() {
    let b = budget("b92", 0.63, 48.0, 0.11).unwrap();
    let hz = b["product"].as_f64().unwrap();
    assert!((5.0..20.0).contains(&hz), "{hz}");
}

#[test]
fn fringe_is_periodic_and_complementary_at_the_extremes() {
    let f = fringe(0.63, 65).unwrap();
    assert_eq!(f.len(), 65);
    assert!((f[0].constructive - f[64].constructive).abs() < 1e-12);
    assert!(f[0].constructive > f[0].destructive);
    assert!(f[32].destructive > f[32].constructive);
}
