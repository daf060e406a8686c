//! `qvote`: run the committee service, cast and verify votes, tally,
//! audit, inspect QKD sessions, and benchmark the pipeline.
//!
//! Without `--broker` the commands that need a committee embed one over
//! the in-process loopback channel, so the whole pipeline runs with zero
//! external services. With `--broker mqtt://host:port` (or the
//! `QVOTE_BROKER_URI` environment variable) they talk to a `qvote serve`
//! instance through a real MQTT broker.
//!
//! Exit codes: 0 success/verified; 1 protocol outcome failure (failed
//! cast, receipt mismatch, failed ledger check); 2 usage or startup
//! failure; 3 unknown session; 4 transport failure mid-protocol.

mod state;

use std::io::Read;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use base64::prelude::*;
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use qvote_core::bb84::{simulate_session, NoiseModel, NoiseSpec, QkdConfig, SessionTranscript};
use qvote_core::bench::{
    key_size_sweep, throughput_bench, trial_seed, SweepConfig, ThroughputConfig,
};
use qvote_core::crypto::{receipt_hash, Receipt};
use qvote_core::protocol::{
    verify_receipt, voter_cast, Ballot, CastError, CommitteeConfig, MessageBody, VoterConfig,
    WireMessage,
};
use qvote_core::service::{ledger_check, serve, tally_path, Service};
use qvote_core::transport::{
    connect, Channel, ChannelConfig, LoopbackConfig, MqttConfig, BROKER_URI_ENV,
};
use qvote_core::BitString;

const EXIT_OK: u8 = 0;
const EXIT_OUTCOME: u8 = 1;
const EXIT_STARTUP: u8 = 2;
const EXIT_NOT_FOUND: u8 = 3;
const EXIT_TRANSPORT: u8 = 4;

#[derive(Parser)]
#[command(name = "qvote", version, about = "QKD-keyed voting pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the election committee service against an MQTT broker.
    Serve(ServeArgs),
    /// Cast one ballot and verify the returned receipt.
    Vote(VoteArgs),
    /// Re-verify receipts recorded in the voter state file.
    Verify(VerifyArgs),
    /// Tally a committee ledger.
    Tally(TallyArgs),
    /// Voluntarily reveal an identity key to resolve a dispute.
    Audit(AuditArgs),
    /// Print one QKD session step by step.
    QkdDemo(QkdDemoArgs),
    /// Measure end-to-end pipeline throughput on loopback.
    BenchThroughput(BenchThroughputArgs),
    /// Sweep QKD stability across key sizes.
    BenchSweep(BenchSweepArgs),
    /// Recompute every ledger receipt and report inconsistencies.
    LedgerCheck(LedgerCheckArgs),
}

#[derive(Args, Clone)]
struct ChannelArgs {
    /// MQTT broker URI (mqtt://host:port); in-process loopback when absent.
    #[arg(long, env = BROKER_URI_ENV)]
    broker: Option<String>,
    /// Election identifier (one topic level).
    #[arg(long, default_value = "election")]
    election_id: String,
}

#[derive(Args, Clone)]
struct NoiseArgs {
    /// Upper bound of the per-session uniform noise draw.
    #[arg(long, default_value_t = 0.2)]
    noise_max: f64,
    /// Disable quantum-channel noise.
    #[arg(long)]
    noise_off: bool,
    /// Simulate an intercept-resend eavesdropper.
    #[arg(long)]
    eve: bool,
}

impl NoiseArgs {
    fn spec(&self) -> Result<NoiseSpec> {
        if self.noise_off {
            return Ok(NoiseSpec::Off);
        }
        if !(0.0..=1.0).contains(&self.noise_max) {
            bail!("--noise-max must lie in [0, 1]");
        }
        Ok(NoiseSpec::Uniform {
            max: self.noise_max,
        })
    }
}

#[derive(Args, Clone)]
struct KeyArgs {
    /// Bits of sifted key reserved for the vote ciphertext.
    #[arg(long, default_value_t = 4)]
    vote_key_bits: usize,
    /// Bits of sifted key reserved for the identity ciphertext.
    #[arg(long, default_value_t = 4)]
    id_key_bits: usize,
    /// Measurement repetitions per qubit.
    #[arg(long, default_value_t = 10_000)]
    shots: u64,
}

#[derive(Args)]
struct ServeArgs {
    #[command(flatten)]
    channel: ChannelArgs,
    /// Registered candidates, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    candidates: Vec<String>,
    /// Ledger file (appended durably before each receipt).
    #[arg(long, default_value = "qvote-ledger.jsonl")]
    ledger: PathBuf,
    #[command(flatten)]
    keys: KeyArgs,
    #[command(flatten)]
    noise: NoiseArgs,
    /// Base seed for per-session randomness.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct VoteArgs {
    /// Candidate identifier to vote for.
    #[arg(long)]
    candidate: String,
    /// Opaque pre-issued voter credential.
    #[arg(long)]
    voter_id: String,
    #[command(flatten)]
    channel: ChannelArgs,
    /// Registered candidates for the embedded committee (loopback mode).
    #[arg(long, value_delimiter = ',', default_value = "A,B,C")]
    candidates: Vec<String>,
    /// Ledger for the embedded committee (loopback mode).
    #[arg(long, default_value = "qvote-ledger.jsonl")]
    ledger: PathBuf,
    /// Where this voter's receipts and keys are remembered.
    #[arg(long, default_value = "qvote-voter.jsonl")]
    state_file: PathBuf,
    #[command(flatten)]
    keys: KeyArgs,
    #[command(flatten)]
    noise: NoiseArgs,
    /// QKD attempts before the cast fails.
    #[arg(long, default_value_t = 3)]
    retry_cap: u32,
    /// Patience for the committee receipt, milliseconds.
    #[arg(long, default_value_t = 10_000)]
    receipt_timeout_ms: u64,
    #[arg(long)]
    seed: Option<u64>,
    /// Cast once more with a fresh session if the first cast fails.
    #[arg(long)]
    recast_on_failure: bool,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct VerifyArgs {
    /// Session to verify; all recorded sessions when omitted.
    #[arg(long)]
    session_id: Option<String>,
    #[arg(long, default_value = "qvote-voter.jsonl")]
    state_file: PathBuf,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct TallyArgs {
    #[arg(long, default_value = "qvote-ledger.jsonl")]
    ledger: PathBuf,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct AuditArgs {
    /// Session to open.
    #[arg(long)]
    session_id: String,
    #[arg(long, default_value = "qvote-voter.jsonl")]
    state_file: PathBuf,
    #[command(flatten)]
    channel: ChannelArgs,
    /// Committee ledger (loopback mode).
    #[arg(long, default_value = "qvote-ledger.jsonl")]
    ledger: PathBuf,
    #[command(flatten)]
    keys: KeyArgs,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct QkdDemoArgs {
    /// Qubits per frame.
    #[arg(long, default_value_t = 8)]
    raw_length: usize,
    /// Sifted bits required to accept the session.
    #[arg(long, default_value_t = 1)]
    min_sifted_bits: usize,
    #[arg(long, default_value_t = 3)]
    retry_cap: u32,
    #[arg(long, default_value_t = 10_000)]
    shots: u64,
    #[command(flatten)]
    noise: NoiseArgs,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct BenchThroughputArgs {
    #[arg(long, default_value_t = 10_000)]
    votes: u64,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    #[command(flatten)]
    keys: KeyArgs,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct BenchSweepArgs {
    /// Raw key lengths to sweep, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "2,4,8,16,32")]
    sizes: Vec<usize>,
    #[arg(long, default_value_t = 100_000)]
    trials: u64,
    #[arg(long, default_value_t = 0.2)]
    noise_max: f64,
    #[arg(long, default_value_t = 10_000)]
    shots: u64,
    /// Run trials on one thread.
    #[arg(long)]
    sequential: bool,
    #[arg(long)]
    seed: Option<u64>,
    /// Emit CSV instead of the aligned table.
    #[arg(long)]
    csv: bool,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct LedgerCheckArgs {
    #[arg(long, default_value = "qvote-ledger.jsonl")]
    ledger: PathBuf,
    #[arg(long)]
    json: bool,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_STARTUP)
        }
    }
}

fn run(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::Serve(args) => cmd_serve(args),
        Command::Vote(args) => cmd_vote(args),
        Command::Verify(args) => cmd_verify(args),
        Command::Tally(args) => cmd_tally(args),
        Command::Audit(args) => cmd_audit(args),
        Command::QkdDemo(args) => cmd_qkd_demo(args),
        Command::BenchThroughput(args) => cmd_bench_throughput(args),
        Command::BenchSweep(args) => cmd_bench_sweep(args),
        Command::LedgerCheck(args) => cmd_ledger_check(args),
    }
}

fn seed_or_entropy(seed: Option<u64>) -> u64 {
    seed.unwrap_or_else(rand::random)
}

fn open_remote_channel(broker: &str) -> Result<Arc<dyn Channel>> {
    connect(&ChannelConfig::Mqtt(MqttConfig {
        broker_uri: broker.to_string(),
        qos: 1,
        keepalive: Duration::from_secs(30),
    }))
    .with_context(|| format!("connect to broker {broker}"))
}

fn committee_config(
    election_id: &str,
    candidates: &[String],
    keys: &KeyArgs,
    noise: NoiseSpec,
    eavesdropper: bool,
    seed: u64,
) -> CommitteeConfig {
    CommitteeConfig {
        election_id: election_id.to_string(),
        candidates: candidates.to_vec(),
        vote_key_bits: keys.vote_key_bits,
        id_key_bits: keys.id_key_bits,
        shots: keys.shots,
        noise,
        eavesdropper,
        seed,
    }
}

fn cmd_serve(args: ServeArgs) -> Result<u8> {
    let Some(broker) = &args.channel.broker else {
        bail!(
            "serve needs --broker (or {BROKER_URI_ENV}); the loopback binding is in-process \
             only — `qvote vote` without --broker embeds its own committee"
        );
    };
    let channel = open_remote_channel(broker)?;
    let seed = seed_or_entropy(args.seed);
    let config = committee_config(
        &args.channel.election_id,
        &args.candidates,
        &args.keys,
        args.noise.spec()?,
        args.noise.eve,
        seed,
    );
    let service = serve(config, channel, &args.ledger)?;
    println!(
        "serving election {} via {} (ledger {}, seed {seed})",
        args.channel.election_id,
        broker,
        args.ledger.display()
    );
    println!("close stdin (Ctrl+D) to shut down cleanly");
    let mut sink = Vec::new();
    let _ = std::io::stdin().read_to_end(&mut sink);
    service.shutdown()?;
    println!("clean shutdown");
    Ok(EXIT_OK)
}

/// Committee embedded in-process for broker-less runs. Holding it keeps
/// its subscriptions alive.
struct Embedded {
    service: Option<Service>,
}

impl Embedded {
    fn shutdown(mut self) -> Result<()> {
        if let Some(service) = self.service.take() {
            service.shutdown()?;
        }
        Ok(())
    }
}

fn open_channel_with_committee(
    channel_args: &ChannelArgs,
    candidates: &[String],
    ledger: &std::path::Path,
    keys: &KeyArgs,
    noise: NoiseSpec,
    eve: bool,
    seed: u64,
) -> Result<(Arc<dyn Channel>, Embedded)> {
    match &channel_args.broker {
        Some(broker) => Ok((open_remote_channel(broker)?, Embedded { service: None })),
        None => {
            let channel = connect(&ChannelConfig::Loopback(LoopbackConfig::default()))?;
            let config = committee_config(
                &channel_args.election_id,
                candidates,
                keys,
                noise,
                eve,
                seed,
            );
            let service = serve(config, channel.clone(), ledger)?;
            Ok((
                channel,
                Embedded {
                    service: Some(service),
                },
            ))
        }
    }
}

fn cast_exit_code(error: &CastError) -> u8 {
    match error {
        CastError::Transport(_) => EXIT_TRANSPORT,
        CastError::InvalidConfig(_) => EXIT_STARTUP,
        _ => EXIT_OUTCOME,
    }
}

fn cmd_vote(args: VoteArgs) -> Result<u8> {
    let noise = args.noise.spec()?;
    let seed = seed_or_entropy(args.seed);
    let (channel, embedded) = open_channel_with_committee(
        &args.channel,
        &args.candidates,
        &args.ledger,
        &args.keys,
        noise,
        args.noise.eve,
        seed,
    )?;
    let ballot = Ballot::new(
        args.candidate.as_bytes().to_vec(),
        args.voter_id.as_bytes().to_vec(),
    )
    .context("ballot fields must be 1..=64 bytes")?;
    let config = VoterConfig {
        election_id: args.channel.election_id.clone(),
        vote_key_bits: args.keys.vote_key_bits,
        id_key_bits: args.keys.id_key_bits,
        shots: args.keys.shots,
        attempt_cap: args.retry_cap,
        receipt_timeout: Duration::from_millis(args.receipt_timeout_ms),
        step_timeout: Duration::from_millis(args.receipt_timeout_ms),
    };

    let max_casts = if args.recast_on_failure { 2 } else { 1 };
    let mut exit = EXIT_OUTCOME;
    for cast_index in 0..max_casts {
        let mut rng = ChaCha8Rng::seed_from_u64(trial_seed(seed, 0x56_4F_54_45 + cast_index));
        match voter_cast(&ballot, &config, &channel, &mut rng) {
            Ok(record) => {
                state::append(
                    &args.state_file,
                    &state::VoterRecord {
                        session_id: record.session_id.clone(),
                        election_id: record.election_id.clone(),
                        candidate: args.candidate.clone(),
                        voter_id: args.voter_id.clone(),
                        e_vote_b64: BASE64_STANDARD.encode(&record.encrypted.e_vote),
                        e_id_b64: BASE64_STANDARD.encode(&record.encrypted.e_id),
                        local_receipt_hex: record.receipt.to_hex(),
                        remote_receipt_hex: Some(record.receipt.to_hex()),
                        verified: true,
                        k_id_bits: Some(record.id_key_bits.to_string()),
                        attempts: record.attempts,
                        cast_at: qvote_core::transport::now_ms(),
                        failure: None,
                    },
                )?;
                if args.json {
                    println!(
                        "{}",
                        serde_json::json!({
                            "session_id": record.session_id,
                            "receipt_hex": record.receipt.to_hex(),
                            "state": "verified",
                            "attempts": record.attempts,
                            "sifted_bits": record.sifted_bits,
                            "seed": seed,
                        })
                    );
                } else {
                    println!("session  {}", record.session_id);
                    println!("receipt  {}", record.receipt.to_hex());
                    println!("state    Verified (attempt(s): {})", record.attempts);
                }
                embedded.shutdown()?;
                return Ok(EXIT_OK);
            }
            Err(e) => {
                exit = cast_exit_code(&e);
                state::append(
                    &args.state_file,
                    &state::VoterRecord {
                        session_id: String::new(),
                        election_id: args.channel.election_id.clone(),
                        candidate: args.candidate.clone(),
                        voter_id: args.voter_id.clone(),
                        e_vote_b64: String::new(),
                        e_id_b64: String::new(),
                        local_receipt_hex: String::new(),
                        remote_receipt_hex: None,
                        verified: false,
                        k_id_bits: None,
                        attempts: 0,
                        cast_at: qvote_core::transport::now_ms(),
                        failure: Some(e.to_string()),
                    },
                )?;
                if args.json {
                    println!(
                        "{}",
                        serde_json::json!({ "state": "failed", "error": e.to_string(), "seed": seed })
                    );
                } else {
                    eprintln!("cast failed: {e}");
                }
                if cast_index + 1 < max_casts {
                    eprintln!("recasting with a fresh session");
                }
            }
        }
    }
    embedded.shutdown()?;
    Ok(exit)
}

fn cmd_verify(args: VerifyArgs) -> Result<u8> {
    let records = state::load(&args.state_file)?;
    let selected: Vec<_> = records
        .into_iter()
        .filter(|r| {
            args.session_id
                .as_deref()
                .is_none_or(|want| want == r.session_id)
        })
        .filter(|r| !r.session_id.is_empty())
        .collect();
    if selected.is_empty() {
        eprintln!("no matching cast in {}", args.state_file.display());
        return Ok(EXIT_NOT_FOUND);
    }
    let mut all_ok = true;
    let mut lines = Vec::new();
    for record in &selected {
        let ok = (|| -> Option<bool> {
            let e_vote = BASE64_STANDARD.decode(&record.e_vote_b64).ok()?;
            let e_id = BASE64_STANDARD.decode(&record.e_id_b64).ok()?;
            let local = Receipt::new(
                receipt_hash(&e_vote, &e_id).ok()?,
                record.session_id.clone(),
            );
            let remote = Receipt::from_hex(
                record.remote_receipt_hex.as_deref()?,
                record.session_id.clone(),
            )
            .ok()?;
            Some(verify_receipt(&local, &remote))
        })()
        .unwrap_or(false);
        all_ok &= ok;
        lines.push(serde_json::json!({
            "session_id": record.session_id,
            "receipt_hex": record.remote_receipt_hex,
            "verified": ok,
        }));
        if !args.json {
            println!(
                "{}  {}",
                record.session_id,
                if ok {
                    "receipt verified"
                } else {
                    "RECEIPT MISMATCH"
                }
            );
        }
    }
    if args.json {
        println!("{}", serde_json::Value::Array(lines));
    }
    Ok(if all_ok { EXIT_OK } else { EXIT_OUTCOME })
}

fn cmd_tally(args: TallyArgs) -> Result<u8> {
    let tally = tally_path(&args.ledger)?;
    if args.json {
        println!("{}", serde_json::to_string_pretty(&tally)?);
    } else {
        for (candidate, count) in &tally.counts {
            println!("{candidate}: {count}");
        }
        println!("invalid: {}", tally.invalid);
        println!("total sessions: {}", tally.total_sessions);
        println!("receipts verified: {}", tally.verified);
    }
    Ok(EXIT_OK)
}

fn cmd_audit(args: AuditArgs) -> Result<u8> {
    let Some(record) = state::find(&args.state_file, &args.session_id)? else {
        eprintln!(
            "session {} not in {}",
            args.session_id,
            args.state_file.display()
        );
        return Ok(EXIT_NOT_FOUND);
    };
    let Some(k_id_bits) = &record.k_id_bits else {
        eprintln!("no identity key recorded for session {}", args.session_id);
        return Ok(EXIT_NOT_FOUND);
    };

    let (channel, embedded) = open_channel_with_committee(
        &args.channel,
        &[],
        &args.ledger,
        &args.keys,
        NoiseSpec::Off,
        false,
        0,
    )?;
    for body in [
        MessageBody::AuditRequest,
        MessageBody::AuditReveal {
            k_id_bits: k_id_bits.clone(),
        },
    ] {
        let msg = WireMessage::new(record.election_id.clone(), args.session_id.clone(), body);
        channel.publish(&msg.topic(), &msg.to_envelope()?)?;
    }

    match &embedded.service {
        Some(service) => {
            let entry = service
                .core()
                .with_ledger(|ledger| ledger.get(&args.session_id).cloned());
            embedded.shutdown()?;
            let Some(entry) = entry else {
                eprintln!(
                    "committee ledger has no entry for session {}",
                    args.session_id
                );
                return Ok(EXIT_NOT_FOUND);
            };
            let Some(audit) = entry.audit else {
                eprintln!("audit reveal was rejected; see committee log");
                return Ok(EXIT_OUTCOME);
            };
            if args.json {
                println!("{}", serde_json::to_string_pretty(&audit)?);
            } else {
                println!(
                    "revealed voter identity: {}",
                    audit
                        .revealed_voter_id_utf8
                        .unwrap_or_else(|| format!("base64:{}", audit.revealed_voter_id_b64))
                );
            }
            Ok(EXIT_OK)
        }
        None => {
            // Remote committee: give the broker a moment to flush.
            std::thread::sleep(Duration::from_millis(300));
            embedded.shutdown()?;
            if args.json {
                println!(
                    "{}",
                    serde_json::json!({ "session_id": args.session_id, "submitted": true })
                );
            } else {
                println!("audit reveal submitted for session {}", args.session_id);
            }
            Ok(EXIT_OK)
        }
    }
}

fn basis_row(bases: &[qvote_core::bb84::Basis]) -> String {
    bases
        .iter()
        .map(|b| b.symbol())
        .collect::<Vec<_>>()
        .join(" ")
}

fn spaced_bits(bits: &BitString) -> String {
    bits.iter()
        .map(|b| if b { "1" } else { "0" })
        .collect::<Vec<_>>()
        .join(" ")
}

fn render_trace(t: &SessionTranscript, shots: u64) -> String {
    let frame = qvote_core::bb84::prepare_frame(&t.voter_bits, &t.voter_bases)
        .expect("transcript fields are consistent");
    let qasm = qvote_core::qasm::emit_prep(&frame);
    let mask = t
        .voter_bases
        .iter()
        .zip(t.committee_bases.iter())
        .map(|(a, b)| if a == b { "^" } else { "." })
        .collect::<Vec<_>>()
        .join(" ");
    let mut out = String::new();
    out.push_str(&format!(
        "noise draw p = {:.4}, shots = {shots}, attempts = {}\n\n",
        t.noise_draw, t.attempts
    ));
    out.push_str(&format!(
        "step 1  voter bits            {}\n",
        spaced_bits(&t.voter_bits)
    ));
    out.push_str(&format!(
        "step 2  voter bases           {}\n",
        basis_row(&t.voter_bases)
    ));
    out.push_str("step 3  transmitted frame (QASM):\n");
    for line in qasm.text().lines() {
        out.push_str(&format!("        | {line}\n"));
    }
    out.push_str(&format!(
        "step 4  committee bases       {}\n",
        basis_row(&t.committee_bases)
    ));
    out.push_str(&format!(
        "        committee measurement {}\n",
        spaced_bits(&t.committee_measurements)
    ));
    out.push_str(&format!(
        "step 5  bases announced; matches marked ^\n                              {mask}\n"
    ));
    out.push_str(&format!(
        "step 6  voter sifted key      {}\n        committee sifted key  {}\n",
        t.voter_key.bits, t.committee_key.bits
    ));
    out.push_str(&format!(
        "        keys agree            {}\n",
        if t.voter_key.bits == t.committee_key.bits {
            "yes"
        } else {
            "NO"
        }
    ));
    out
}

fn cmd_qkd_demo(args: QkdDemoArgs) -> Result<u8> {
    if args.raw_length == 0 {
        bail!("--raw-length must be at least 1");
    }
    let seed = seed_or_entropy(args.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = args.noise.spec()?;
    let p = spec.draw(&mut rng);
    let noise = NoiseModel::new(p, args.noise.eve).expect("draw within [0, 1]");
    let config = QkdConfig {
        raw_length: args.raw_length,
        shots: args.shots,
        rng_seed: Some(seed),
        min_sifted_bits: args.min_sifted_bits,
        attempt_cap: args.retry_cap,
    };
    match simulate_session(&config, &noise, &mut rng) {
        Ok(transcript) => {
            if args.json {
                println!(
                    "{}",
                    serde_json::json!({
                        "seed": seed,
                        "raw_length": args.raw_length,
                        "shots": args.shots,
                        "noise_draw": transcript.noise_draw,
                        "eavesdropper": args.noise.eve,
                        "attempts": transcript.attempts,
                        "voter_bits": transcript.voter_bits.to_string(),
                        "voter_bases": transcript.voter_bases.iter().map(|b| b.symbol()).collect::<Vec<_>>(),
                        "committee_bases": transcript.committee_bases.iter().map(|b| b.symbol()).collect::<Vec<_>>(),
                        "committee_measurements": transcript.committee_measurements.to_string(),
                        "sifted_positions": transcript.voter_key.positions,
                        "voter_sifted_key": transcript.voter_key.bits.to_string(),
                        "committee_sifted_key": transcript.committee_key.bits.to_string(),
                    })
                );
            } else {
                println!("QKD demo: seed {seed}, raw length {}", args.raw_length);
                print!("{}", render_trace(&transcript, args.shots));
            }
            Ok(EXIT_OK)
        }
        Err(e) => {
            if args.json {
                println!(
                    "{}",
                    serde_json::json!({ "seed": seed, "failed": e.to_string() })
                );
            } else {
                println!("QKD demo: seed {seed} — session failed: {e}");
            }
            Ok(EXIT_OUTCOME)
        }
    }
}

fn cmd_bench_throughput(args: BenchThroughputArgs) -> Result<u8> {
    let seed = seed_or_entropy(args.seed);
    let report = throughput_bench(&ThroughputConfig {
        votes: args.votes,
        workers: args.workers,
        vote_key_bits: args.keys.vote_key_bits,
        id_key_bits: args.keys.id_key_bits,
        shots: args.keys.shots,
        seed,
        ..ThroughputConfig::default()
    })?;
    if args.json {
        println!("{}", serde_json::to_string_pretty(&report)?);
    } else {
        print!("{}", report.to_text());
    }
    Ok(EXIT_OK)
}

fn cmd_bench_sweep(args: BenchSweepArgs) -> Result<u8> {
    if args.sizes.is_empty() {
        bail!("--sizes needs at least one length");
    }
    if !(0.0..=1.0).contains(&args.noise_max) {
        bail!("--noise-max must lie in [0, 1]");
    }
    let seed = seed_or_entropy(args.seed);
    let report = key_size_sweep(&SweepConfig {
        sizes: args.sizes.clone(),
        trials: args.trials,
        noise: if args.noise_max == 0.0 {
            NoiseSpec::Off
        } else {
            NoiseSpec::Uniform {
                max: args.noise_max,
            }
        },
        shots: args.shots,
        attempt_cap: 3,
        seed,
        parallel: !args.sequential,
    });
    if args.json {
        println!("{}", serde_json::to_string_pretty(&report)?);
    } else if args.csv {
        print!("{}", report.to_csv());
    } else {
        print!("{}", report.to_text_table());
    }
    Ok(EXIT_OK)
}

fn cmd_ledger_check(args: LedgerCheckArgs) -> Result<u8> {
    let report = ledger_check(&args.ledger)?;
    if args.json {
        println!("{}", serde_json::to_string_pretty(&report)?);
    } else {
        println!("entries: {}", report.entries);
        println!("receipt mismatches: {}", report.receipt_mismatches.len());
        for sid in &report.receipt_mismatches {
            println!("  mismatch: {sid}");
        }
        println!("corrupt lines: {}", report.corrupt_lines);
        println!("orphan audits: {}", report.orphan_audits);
        if report.torn_tail {
            println!("torn final line detected (will be quarantined on next serve)");
        }
        println!("result: {}", if report.passed() { "PASS" } else { "FAIL" });
    }
    Ok(if report.passed() {
        EXIT_OK
    } else {
        EXIT_OUTCOME
    })
}
