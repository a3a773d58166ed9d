use std::io::{BufRead, BufReader};
use std::net::TcpListener;
use std::path::Path;
use std::process::{Child, Command, Output, Stdio};

use serde_json::Value;

fn qkd() -> Command {
    Command::new(env!("CARGO_BIN_EXE_qkd"))
}

fn run(args: &[&str]) -> Output {
    qkd().args(args).output().expect("binary runs")
}

fn json_of(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!(
            "stdout is not JSON ({e}):\n{}\nstderr:\n{}",
            String::from_utf8_lossy(&out.stdout),
            String::from_utf8_lossy(&out.stderr)
        )
    })
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

/// Starts `qkd serve` on an ephemeral port and returns it with the bound address.
fn serve(args: &[&str]) -> (Child, String) {
    let mut child = qkd()
        .args(["serve", "--listen", "127.0.0.1:0", "--json"])
        .args(args)
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .expect("serve starts");
    let mut err = BufReader::new(child.stderr.take().expect("stderr piped"));
    let mut line = String::new();
    err.read_line(&mut line).expect("listening line");
    let addr = line
        .trim()
        .strip_prefix("listening: ")
        .unwrap_or_else(|| panic!("unexpected serve output: {line}"))
        .to_string();
    (child, addr)
}

#[test]
fn default_run_matches_the_experiment() {
    let out = run(&["run", "--seed", "1", "--json"]);
    assert_eq!(code(&out), 0);
    let r = json_of(&out);
    let ber = r["ber_oracle"].as_f64().unwrap();
    let dark = r["dark_error_fraction"].as_f64().unwrap();
    assert!((0.078..=0.108).contains(&ber), "BER {ber}");
    assert!((0.85..=0.95).contains(&dark), "dark fraction {dark}");
    assert_eq!(r["status"], "completed");
    assert_eq!(r["keys_equal"], true);
    assert_eq!(r["seed"], 1);
    assert_eq!(r["pulses"], 60_000_000);
}

#[test]
fn human_report_has_stable_keys() {
    let out = run(&["run", "--seed", "4", "--pulses", "1000"]);
    assert_eq!(code(&out), 0);
    let text = String::from_utf8(out.stdout).unwrap();
    let keys: Vec<&str> = text.lines().map(|l| l.split(": ").next().unwrap()).collect();
    for k in [
        "seed",
        "status",
        "sifted_bits",
        "ber_oracle",
        "ber_sampled",
        "dark_error_fraction",
        "reconciled_bits",
        "amplified_bits",
        "final_key_bits",
        "final_key_digest",
    ] {
        assert!(keys.contains(&k), "missing {k} in\n{text}");
    }
}

#[test]
fn zero_pulses_is_an_empty_session() {
    let out = run(&["run", "--pulses", "0", "--json"]);
    assert_eq!(code(&out), 0);
    let r = json_of(&out);
    assert_eq!(r["status"], "completed");
    assert_eq!(r["sifted_bits"], 0);
    assert_eq!(r["final_key_bits"], 0);
    assert!(r["seed"].as_u64().is_some(), "drawn seed is echoed");
}

#[test]
fn full_intercept_resend_aborts() {
    let out = run(&["run", "--seed", "2", "--attack", "intercept-alice", "--fraction", "1", "--json"]);
    assert_eq!(code(&out), 2);
    let r = json_of(&out);
    assert_eq!(r["status"], "aborted");
    assert_eq!(r["abort_code"], 1);
    assert!(r["ber_oracle"].as_f64().unwrap() > 0.2);
    // dark clicks Eve cannot know dilute her share below the dark-free 75%
    assert!(r["eve_info"].as_f64().unwrap() > 0.6);
}

#[test]
fn configuration_errors_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "protocol = \"b93\"\n").unwrap();
    assert_eq!(code(&run(&["run", "-c", bad.to_str().unwrap()])), 3);
    assert_eq!(code(&run(&["run", "-c", "/nonexistent/qkd.toml"])), 3);
    assert_eq!(code(&run(&["run", "--threshold", "0.7", "--pulses", "10"])), 3);
    assert_eq!(code(&run(&["run", "--mu", "-1", "--pulses", "10"])), 3);
    assert_eq!(code(&run(&["run", "--no-such-flag"])), 3);
    assert_eq!(code(&run(&["run", "--pulses", "10", "--duration", "1"])), 3);
}

#[test]
fn unreachable_peer_exits_4() {
    let port = {
        let l = TcpListener::bind("127.0.0.1:0").unwrap();
        l.local_addr().unwrap().port()
    };
    let addr = format!("127.0.0.1:{port}");
    let out = run(&["connect", "--address", &addr, "--pulses", "10", "--seed", "1", "--timeout", "2"]);
    assert_eq!(code(&out), 4, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(code(&run(&["serve", "--listen", "256.0.0.1:1", "--pulses", "10"])), 4);
}

#[test]
fn two_processes_agree_with_the_single_process_run() {
    let common = ["--seed", "11", "--pulses", "20000000"];
    let local = run(&[&["run", "--json"][..], &common].concat());
    assert_eq!(code(&local), 0);
    let local = json_of(&local);
    assert!(local["final_key_bits"].as_u64().unwrap() > 0);

    let (alice, addr) = serve(&common);
    let bob = run(&[&["connect", "--json", "--address", &addr][..], &common].concat());
    let alice = alice.wait_with_output().unwrap();
    assert_eq!(code(&alice), 0, "{}", String::from_utf8_lossy(&alice.stderr));
    assert_eq!(code(&bob), 0, "{}", String::from_utf8_lossy(&bob.stderr));
    let (a, b) = (json_of(&alice), json_of(&bob));
    assert_eq!(a["role"], "alice");
    assert_eq!(b["role"], "bob");
    for side in [&a, &b] {
        assert_eq!(side["final_key_digest"], local["final_key_digest"]);
        assert_eq!(side["final_key_bits"], local["final_key_bits"]);
        assert_eq!(side["sifted_bits"], local["sifted_bits"]);
    }
}

#[test]
fn mismatched_configurations_abort_both_processes() {
    let (alice, addr) = serve(&["--seed", "1", "--pulses", "1000"]);
    let bob = run(&["connect", "--json", "--address", &addr, "--seed", "1", "--pulses", "2000"]);
    let alice = alice.wait_with_output().unwrap();
    assert_eq!(code(&alice), 2, "{}", String::from_utf8_lossy(&alice.stderr));
    assert_eq!(code(&bob), 2, "{}", String::from_utf8_lossy(&bob.stderr));
    assert_eq!(json_of(&bob)["abort_code"], 5);
    assert_eq!(json_of(&alice)["abort_code"], 5);
}

fn mutate_frame(path: &Path, line_no: usize) {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let mut rec: Value = serde_json::from_str(&lines[line_no]).unwrap();
    let frame = rec["frame"].as_str().unwrap().to_string();
    let mut bytes = frame.into_bytes();
    let i = bytes.len() - 20;
    bytes[i] = if bytes[i] == b'0' { b'1' } else { b'0' };
    rec["frame"] = Value::String(String::from_utf8(bytes).unwrap());
    lines[line_no] = rec.to_string();
    std::fs::write(path, lines.join("\n") + "\n").unwrap();
}

#[test]
fn transcripts_replay_and_mutations_are_caught() {
    let dir = tempfile::tempdir().unwrap();
    let t = dir.path().join("session.jsonl");
    let report = dir.path().join("report.json");
    let out = run(&[
        "run",
        "--seed",
        "3",
        "--pulses",
        "100000",
        "--preset",
        "ideal",
        "--transcript",
        t.to_str().unwrap(),
        "--report",
        report.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0);
    let oracle: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("session.oracle.json")).unwrap()).unwrap();
    assert!(oracle["sifted_bits"].as_u64().unwrap() > 1000);
    let saved: Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();

    let replayed = run(&["replay", "--json", t.to_str().unwrap()]);
    assert_eq!(code(&replayed), 0);
    let r = json_of(&replayed);
    assert_eq!(r["faithful"], true);
    assert_eq!(r["alice"]["digest"], saved["final_key_digest"]);
    assert_eq!(r["bob"]["digest"], saved["final_key_digest"]);

    let text = std::fs::read_to_string(&t).unwrap();
    let n = text.lines().count();
    for line_no in [1, 4, n / 2] {
        std::fs::write(&t, &text).unwrap();
        mutate_frame(&t, line_no);
        let out = run(&["replay", t.to_str().unwrap()]);
        assert_eq!(code(&out), 2, "mutation on line {line_no} went unnoticed");
        assert!(String::from_utf8_lossy(&out.stdout).contains("faithful: false"));
    }

    std::fs::write(&t, "not json\n").unwrap();
    assert_eq!(code(&run(&["replay", t.to_str().unwrap()])), 3);
}

#[test]
fn threaded_run_equals_loopback() {
    let a = json_of(&run(&["run", "--json", "--seed", "8", "--pulses", "5000000"]));
    let b = json_of(&run(&["run", "--json", "--threaded", "--seed", "8", "--pulses", "5000000"]));
    assert_eq!(a, b);
}

#[test]
fn config_round_trips_through_a_file() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["config", "--seed", "9", "--protocol", "bb84", "--mu", "0.39"]);
    assert_eq!(code(&out), 0);
    let file = dir.path().join("c.toml");
    std::fs::write(&file, &out.stdout).unwrap();
    let r = json_of(&run(&["run", "--json", "-c", file.to_str().unwrap(), "--pulses", "0"]));
    assert_eq!(r["seed"], 9);
    assert_eq!(r["protocol"], "bb84");
}

#[test]
fn reproduce_targets_print_tables() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("fig7.csv");
    let out = run(&["reproduce", "fig7", "--json", "--csv", csv.to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    let t = json_of(&out);
    let rows = t["rows"].as_array().unwrap();
    assert_eq!(rows[1]["computed"], 7);
    assert_eq!(rows[1]["reference"], 6);
    assert_eq!(rows[2]["computed"], "4 39 53 61 75 99 112");
    assert!(std::fs::read_to_string(&csv).unwrap().starts_with("quantity,reference"));

    let opteta = json_of(&run(&["reproduce", "opteta", "--json"]));
    let eta = opteta["rows"][0]["computed"].as_f64().unwrap();
    assert!((eta - 0.1087).abs() < 1e-3);
    assert_eq!(opteta["all_pass"], true);

    let fig6 = json_of(&run(&["reproduce", "fig6", "--analytic", "--json"]));
    assert_eq!(fig6["rows"].as_array().unwrap().len(), 4);
    assert_eq!(fig6["all_pass"], true);

    let mc = json_of(&run(&["reproduce", "fig6", "--json", "--pulses", "1000000", "--seed", "2"]));
    assert_eq!(mc["seed"], 2);
    assert_eq!(mc["mode"], "montecarlo");

    for target in ["budget", "bounds", "multiphoton"] {
        let out = run(&["reproduce", target]);
        assert_eq!(code(&out), 0, "{target}");
        assert!(String::from_utf8_lossy(&out.stdout).contains("pass"));
    }
}
