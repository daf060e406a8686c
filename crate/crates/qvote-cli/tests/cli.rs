//! End-to-end CLI tests driving the `qvote` binary as a subprocess.

use std::path::Path;
use std::process::{Command, Output};

fn qvote(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qvote"))
        .current_dir(dir)
        .args(args)
        .env_remove("QVOTE_BROKER_URI")
        .output()
        .expect("run qvote")
}

fn stdout(output: &Output) -> String {
    String::from_utf8_lossy(&output.stdout).into_owned()
}

#[test]
fn vote_tally_verify_audit_happy_path() {
    let dir = tempfile::tempdir().unwrap();
    for (candidate, voter, seed) in [("A", "v1", "7"), ("A", "v2", "8"), ("B", "v3", "9")] {
        let out = qvote(
            dir.path(),
            &[
                "vote",
                "--candidate",
                candidate,
                "--voter-id",
                voter,
                "--noise-off",
                "--seed",
                seed,
            ],
        );
        assert_eq!(
            out.status.code(),
            Some(0),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        );
        let text = stdout(&out);
        assert!(text.contains("Verified"), "{text}");
        // A 64-hex receipt is printed.
        let receipt = text
            .lines()
            .find(|l| l.starts_with("receipt"))
            .and_then(|l| l.split_whitespace().nth(1))
            .expect("receipt line");
        assert_eq!(receipt.len(), 64);
        assert!(receipt.chars().all(|c| c.is_ascii_hexdigit()));
    }

    let tally = qvote(dir.path(), &["tally", "--json"]);
    assert_eq!(tally.status.code(), Some(0));
    let parsed: serde_json::Value = serde_json::from_str(&stdout(&tally)).unwrap();
    assert_eq!(parsed["counts"]["A"], 2);
    assert_eq!(parsed["counts"]["B"], 1);
    assert_eq!(parsed["invalid"], 0);
    assert_eq!(parsed["total_sessions"], 3);

    let verify = qvote(dir.path(), &["verify"]);
    assert_eq!(verify.status.code(), Some(0), "{}", stdout(&verify));

    // Audit the first vote: identity comes back.
    let state = std::fs::read_to_string(dir.path().join("qvote-voter.jsonl")).unwrap();
    let first: serde_json::Value = serde_json::from_str(state.lines().next().unwrap()).unwrap();
    let sid = first["session_id"].as_str().unwrap();
    let audit = qvote(dir.path(), &["audit", "--session-id", sid]);
    assert_eq!(audit.status.code(), Some(0));
    assert!(stdout(&audit).contains("v1"), "{}", stdout(&audit));

    let check = qvote(dir.path(), &["ledger-check"]);
    assert_eq!(check.status.code(), Some(0));
    assert!(stdout(&check).contains("PASS"));
}

#[test]
fn vote_json_output_is_machine_readable() {
    let dir = tempfile::tempdir().unwrap();
    let out = qvote(
        dir.path(),
        &[
            "vote",
            "--candidate",
            "C",
            "--voter-id",
            "vx",
            "--noise-off",
            "--seed",
            "3",
            "--json",
        ],
    );
    assert_eq!(out.status.code(), Some(0));
    let parsed: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(parsed["state"], "verified");
    assert_eq!(parsed["receipt_hex"].as_str().unwrap().len(), 64);
    assert!(parsed["session_id"].as_str().unwrap().len() >= 32);
}

#[test]
fn qkd_demo_is_deterministic_for_a_seed() {
    let dir = tempfile::tempdir().unwrap();
    let a = qvote(
        dir.path(),
        &["qkd-demo", "--raw-length", "8", "--seed", "7"],
    );
    let b = qvote(
        dir.path(),
        &["qkd-demo", "--raw-length", "8", "--seed", "7"],
    );
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(stdout(&a), stdout(&b));
    assert!(stdout(&a).contains("step 6"));
    let c = qvote(
        dir.path(),
        &["qkd-demo", "--raw-length", "8", "--seed", "8"],
    );
    assert_ne!(stdout(&a), stdout(&c));
}

#[test]
fn tally_of_missing_ledger_is_empty() {
    let dir = tempfile::tempdir().unwrap();
    let out = qvote(dir.path(), &["tally", "--json"]);
    assert_eq!(out.status.code(), Some(0));
    let parsed: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(parsed["total_sessions"], 0);
}

#[test]
fn verify_unknown_session_exits_not_found() {
    let dir = tempfile::tempdir().unwrap();
    let out = qvote(dir.path(), &["verify", "--session-id", "nope"]);
    assert_eq!(out.status.code(), Some(3));
    let audit = qvote(dir.path(), &["audit", "--session-id", "nope"]);
    assert_eq!(audit.status.code(), Some(3));
}

#[test]
fn serve_without_broker_is_a_startup_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = qvote(dir.path(), &["serve", "--candidates", "A,B"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--broker"));
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = qvote(dir.path(), &["vote", "--candidate", "A"]); // missing --voter-id
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bench_sweep_emits_all_formats() {
    let dir = tempfile::tempdir().unwrap();
    let args = [
        "bench-sweep",
        "--sizes",
        "2,4",
        "--trials",
        "2000",
        "--seed",
        "5",
    ];
    let table = qvote(dir.path(), &args);
    assert_eq!(table.status.code(), Some(0));
    assert!(stdout(&table).contains("raw_n"));

    let csv = qvote(dir.path(), &[&args[..], &["--csv"]].concat());
    assert!(stdout(&csv).starts_with("raw_length,"));
    assert_eq!(stdout(&csv).lines().count(), 3);

    let json = qvote(dir.path(), &[&args[..], &["--json"]].concat());
    let parsed: serde_json::Value = serde_json::from_str(&stdout(&json)).unwrap();
    assert_eq!(parsed["points"].as_array().unwrap().len(), 2);

    // Same seed, sequential vs parallel: identical statistics.
    let seq = qvote(
        dir.path(),
        &[&args[..], &["--json", "--sequential"]].concat(),
    );
    let parsed_seq: serde_json::Value = serde_json::from_str(&stdout(&seq)).unwrap();
    assert_eq!(parsed["points"], parsed_seq["points"]);
}

#[test]
fn bench_throughput_reports_stages() {
    let dir = tempfile::tempdir().unwrap();
    let out = qvote(
        dir.path(),
        &[
            "bench-throughput",
            "--votes",
            "100",
            "--seed",
            "2",
            "--shots",
            "64",
            "--json",
        ],
    );
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let parsed: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(parsed["votes"], 100);
    assert_eq!(parsed["failures"], 0);
    assert!(parsed["votes_per_sec"].as_f64().unwrap() > 0.0);
    assert!(parsed["stages"]["ledger_secs"].as_f64().unwrap() >= 0.0);
}

#[test]
fn ledger_check_fails_on_tamper() {
    let dir = tempfile::tempdir().unwrap();
    let out = qvote(
        dir.path(),
        &[
            "vote",
            "--candidate",
            "A",
            "--voter-id",
            "v",
            "--noise-off",
            "--seed",
            "1",
        ],
    );
    assert_eq!(out.status.code(), Some(0));
    // Corrupt the stored vote ciphertext.
    let path = dir.path().join("qvote-ledger.jsonl");
    let text = std::fs::read_to_string(&path).unwrap();
    let mut entry: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    entry["e_vote_b64"] = serde_json::Value::String("AAAA".into());
    std::fs::write(&path, format!("{entry}\n")).unwrap();
    let check = qvote(dir.path(), &["ledger-check"]);
    assert_eq!(check.status.code(), Some(1));
    assert!(stdout(&check).contains("FAIL"));
}

#[test]
fn recast_on_failure_retries_once() {
    let dir = tempfile::tempdir().unwrap();
    // Impossible key demand: QKD cannot sift 40 bits from the sized frame
    // reliably; with retry-cap 1 the first cast fails fast. The flag makes
    // the CLI try a second fresh session before giving up.
    let out = qvote(
        dir.path(),
        &[
            "vote",
            "--candidate",
            "A",
            "--voter-id",
            "v",
            "--seed",
            "4",
            "--retry-cap",
            "1",
            "--noise-max",
            "1.0",
            "--recast-on-failure",
        ],
    );
    let stderr = String::from_utf8_lossy(&out.stderr);
    if out.status.code() == Some(1) {
        assert!(stderr.contains("recasting"), "{stderr}");
    }
}
