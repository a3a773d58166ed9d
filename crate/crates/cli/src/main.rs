//! `qkd`: run, attack, reproduce and replay simulated key distribution sessions.

mod args;
mod report;
mod reproduce;

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::Parser as _;
use qkd_core::config::{ConfigError, RunConfig};
use qkd_core::session::{
    connect_bob, replay, run_loopback, run_threaded, serve_alice, EndpointReport, SessionError, SessionTranscript,
    TranscriptError,
};
use rand::rngs::OsRng;
use rand::TryRngCore;

use args::{Cli, Command, ConfigArgs, OutputArgs};
use report::{render, EndpointSummary, RunSummary};
use reproduce::Mode;

const EXIT_ABORT: u8 = 2;
const EXIT_CONFIG: u8 = 3;
const EXIT_TRANSPORT: u8 = 4;
const EXIT_INTERNAL: u8 = 1;

#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn new(code: u8, message: impl std::fmt::Display) -> Self {
        Self {
            code,
            message: message.to_string(),
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::new(EXIT_CONFIG, e)
    }
}

impl From<SessionError> for Failure {
    fn from(e: SessionError) -> Self {
        let code = match e {
            SessionError::Config(_) => EXIT_CONFIG,
            SessionError::Transport { .. } => EXIT_TRANSPORT,
            _ => EXIT_INTERNAL,
        };
        Failure::new(code, e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::new(EXIT_INTERNAL, e)
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_CONFIG } else { 0 });
        }
    };
    match dispatch(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn dispatch(cmd: Command) -> Result<u8, Failure> {
    match cmd {
        Command::Run { config, out, threaded } => cmd_run(&config, &out, threaded),
        Command::Reproduce {
            target,
            analytic,
            montecarlo: _,
            pulses,
            seed,
            json,
            csv,
        } => cmd_reproduce(target, analytic, pulses, seed, json, csv.as_deref()),
        Command::Serve { listen, config, out } => cmd_serve(&listen, &config, &out),
        Command::Connect { address, config, out } => cmd_connect(&address, &config, &out),
        Command::Replay { transcript, json } => cmd_replay(&transcript, json),
        Command::Config { config } => {
            print!("{}", config.resolve()?.to_toml());
            Ok(0)
        }
    }
}

fn entropy_seed() -> u64 {
    OsRng.try_next_u64().expect("operating system entropy") >> 1
}

/// Resolves the configuration, drawing a master seed when none was given.
fn configure(args: &ConfigArgs) -> Result<(RunConfig, Option<u64>), Failure> {
    let mut cfg = args.resolve()?;
    if cfg.seed.is_none() && cfg.seeds.is_none() {
        cfg.seed = Some(entropy_seed());
    }
    Ok((cfg.clone(), cfg.seed))
}

fn write_file(path: &Path, contents: &str) -> Result<(), Failure> {
    std::fs::write(path, contents).map_err(|e| Failure::new(EXIT_INTERNAL, format!("{}: {e}", path.display())))
}

fn write_transcript(path: &Path, t: &SessionTranscript) -> Result<(), Failure> {
    let file = File::create(path).map_err(|e| Failure::new(EXIT_INTERNAL, format!("{}: {e}", path.display())))?;
    t.write_jsonl(BufWriter::new(file))
        .map_err(|e| Failure::new(EXIT_INTERNAL, format!("{}: {e}", path.display())))
}

fn oracle_path(out: &OutputArgs, cfg: &RunConfig, transcript: Option<&Path>) -> Option<PathBuf> {
    out.oracle
        .clone()
        .or_else(|| cfg.output.oracle.clone())
        .or_else(|| transcript.map(|t| t.with_extension("oracle.json")))
}

fn emit<T: serde::Serialize>(summary: &T, out: &OutputArgs, cfg: &RunConfig) -> Result<(), Failure> {
    print!("{}", render(summary, out.json));
    std::io::stdout().flush()?;
    if let Some(p) = out.report.clone().or_else(|| cfg.output.report_json.clone()) {
        write_file(&p, &render(summary, true))?;
    }
    Ok(())
}

fn cmd_run(args: &ConfigArgs, out: &OutputArgs, threaded: bool) -> Result<u8, Failure> {
    let (cfg, seed) = configure(args)?;
    let report = if threaded { run_threaded(&cfg)? } else { run_loopback(&cfg)? };
    let transcript = out.transcript.clone().or_else(|| cfg.output.transcript.clone());
    if let Some(p) = &transcript {
        write_transcript(p, &report.transcript)?;
    }
    if let Some(p) = oracle_path(out, &cfg, transcript.as_deref()) {
        write_file(&p, &report.oracle_json())?;
    }
    emit(&RunSummary::new(seed, &report), out, &cfg)?;
    Ok(if report.completed() { 0 } else { EXIT_ABORT })
}

fn finish_endpoint(cfg: &RunConfig, seed: Option<u64>, out: &OutputArgs, r: &EndpointReport) -> Result<u8, Failure> {
    if let Some(p) = out.transcript.clone().or_else(|| cfg.output.transcript.clone()) {
        let resolved = qkd_core::session::resolve(cfg)?;
        write_transcript(&p, &SessionTranscript::from_endpoint(resolved, r))?;
    }
    emit(&EndpointSummary::new(seed, cfg, r), out, cfg)?;
    Ok(if r.status.is_completed() { 0 } else { EXIT_ABORT })
}

fn cmd_serve(listen: &str, args: &ConfigArgs, out: &OutputArgs) -> Result<u8, Failure> {
    let (cfg, seed) = configure(args)?;
    let listener =
        TcpListener::bind(listen).map_err(|e| Failure::new(EXIT_TRANSPORT, format!("cannot listen on {listen}: {e}")))?;
    eprintln!("listening: {}", listener.local_addr()?);
    let r = serve_alice(&cfg, &listener)?;
    finish_endpoint(&cfg, seed, out, &r)
}

fn cmd_connect(address: &str, args: &ConfigArgs, out: &OutputArgs) -> Result<u8, Failure> {
    let (cfg, seed) = configure(args)?;
    let r = connect_bob(&cfg, address)?;
    finish_endpoint(&cfg, seed, out, &r)
}

fn cmd_replay(path: &Path, json: bool) -> Result<u8, Failure> {
    let unreadable = |e: TranscriptError| Failure::new(EXIT_CONFIG, format!("{}: {e}", path.display()));
    let file = File::open(path).map_err(|e| Failure::new(EXIT_CONFIG, format!("{}: {e}", path.display())))?;
    let t = SessionTranscript::read_jsonl(BufReader::new(file)).map_err(unreadable)?;
    let r = replay(&t).map_err(unreadable)?;
    let faithful = r.faithful();
    if json {
        let mut v = serde_json::to_value(&r).expect("replay report serializes");
        v["faithful"] = serde_json::Value::Bool(faithful);
        println!("{}", serde_json::to_string_pretty(&v).expect("replay report serializes"));
    } else {
        println!("faithful: {faithful}");
        println!("frames: {}", r.frames);
        println!("divergences: {}", r.divergences.len());
        if let Some(d) = r.divergences.first() {
            println!("first_divergence: {d:?}");
        }
        println!("unused_frames: {} {}", r.unused_frames[0], r.unused_frames[1]);
        for p in [&r.alice, &r.bob] {
            let role = format!("{:?}", p.role).to_lowercase();
            let status = match (&p.status, &p.transport_error) {
                (Some(s), _) if s.is_completed() => "completed".to_string(),
                (Some(s), _) => format!("aborted ({})", s.abort_reason().map(|a| a.to_string()).unwrap_or_default()),
                (None, Some(e)) => format!("transport error ({e})"),
                (None, None) => "-".into(),
            };
            println!("{role}_status: {status}");
            println!("{role}_digest: {}", p.digest.as_deref().unwrap_or("-"));
            let m = match p.digest_matches {
                Some(true) => "yes",
                Some(false) => "no",
                None => "-",
            };
            println!("{role}_digest_matches: {m}");
        }
    }
    Ok(if faithful { 0 } else { EXIT_ABORT })
}

fn cmd_reproduce(
    target: args::Target,
    analytic: bool,
    pulses: u64,
    seed: Option<u64>,
    json: bool,
    csv: Option<&Path>,
) -> Result<u8, Failure> {
    let mode = if analytic { Mode::Analytic } else { Mode::MonteCarlo };
    let seed = seed.unwrap_or_else(entropy_seed);
    let table = reproduce::build(target, mode, pulses, seed);
    if json {
        println!("{}", serde_json::to_string_pretty(&table.to_json()).expect("table serializes"));
    } else {
        print!("{}", table.to_text());
    }
    if let Some(p) = csv {
        write_file(p, &table.to_csv())?;
    }
    Ok(0)
}
