//! Statistics and benchmark harness: key-size stability sweep with its
//! analytic oracle, batch session statistics, and the end-to-end
//! throughput pipeline.
//!
//! Trials are embarrassingly parallel. With the `parallel` feature (on by
//! default) they fan out over rayon; per-trial RNGs are derived from
//! (seed, trial index), so the parallel and sequential paths produce
//! identical statistics and fixed seeds give reproducible reports.

use std::path::PathBuf;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::bb84::{
    apply_channel, measure_frame, prepare_frame, random_bases, random_bits, sift, simulate_session,
    NoiseModel, NoiseSpec, QkdConfig, SessionError,
};
use crate::protocol::{voter_cast, Ballot, CastError, CommitteeConfig, VoterConfig};
use crate::service::{serve_with_sync, ServiceError};
use crate::transport::{Channel, LoopbackChannel};

/// Maps `trials` indices through `job`, in parallel when both the feature
/// and the flag allow it.
pub fn run_trials<T: Send>(
    trials: u64,
    parallel: bool,
    job: impl Fn(u64) -> T + Sync + Send,
) -> Vec<T> {
    #[cfg(feature = "parallel")]
    if parallel {
        return (0..trials).into_par_iter().map(job).collect();
    }
    let _ = parallel;
    (0..trials).map(job).collect()
}

/// SplitMix64 step; decorrelates per-trial seeds drawn from one base seed.
pub fn trial_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Expected probability that one first attempt at raw length `n` produces a
/// non-empty sifted key with zero transmission errors.
///
/// With k of n bases matching (probability C(n,k) 2^-n) and flip
/// probability p, the sifted bits are error-free with probability (1-p)^k;
/// the expectation over the noise distribution gives
///   sum_{k=1..n} C(n,k) 2^-n E_p[(1-p)^k],
/// where E_p[(1-p)^k] is (1-p)^k for fixed p and
/// (1-(1-q)^(k+1))/(q(k+1)) for p ~ U(0, q).
pub fn analytic_success(n: usize, noise: &NoiseSpec) -> f64 {
    let mut total = 0.0;
    let mut comb = 1.0; // C(n, k), updated incrementally
    for k in 1..=n {
        comb *= (n - k + 1) as f64 / k as f64;
        total += comb * 0.5f64.powi(n as i32) * survival_expectation(k, noise);
    }
    total
}

/// E_p[(1-p)^k] under the noise distribution.
fn survival_expectation(k: usize, noise: &NoiseSpec) -> f64 {
    match *noise {
        NoiseSpec::Off => 1.0,
        NoiseSpec::Fixed { p } => (1.0 - p).powi(k as i32),
        NoiseSpec::Uniform { max: 0.0 } => 1.0,
        NoiseSpec::Uniform { max } => {
            (1.0 - (1.0 - max).powi(k as i32 + 1)) / (max * (k + 1) as f64)
        }
    }
}

/// Probability that an intercept-resend eavesdropper (no channel noise)
/// trips the key confirmation on a first attempt at raw length `n`: each
/// sifted bit errs independently with probability 1/4, an empty sift
/// cannot mismatch.
pub fn eve_confirm_failure_oracle(n: usize) -> f64 {
    let mut total = 0.0;
    let mut comb = 1.0;
    for k in 1..=n {
        comb *= (n - k + 1) as f64 / k as f64;
        total += comb * 0.5f64.powi(n as i32) * (1.0 - 0.75f64.powi(k as i32));
    }
    total
}

/// One observed first attempt.
#[derive(Debug, Clone, Copy)]
pub struct AttemptProbe {
    pub sifted_len: usize,
    pub sifted_errors: usize,
}

impl AttemptProbe {
    /// Stable at threshold `t`: at least max(t, 1) sifted bits, none in error.
    pub fn stable(&self, threshold: usize) -> bool {
        self.sifted_len >= threshold.max(1) && self.sifted_errors == 0
    }
}

/// Runs a single QKD attempt (no retries) and reports the sift outcome.
pub fn probe_attempt(
    raw_length: usize,
    shots: u64,
    noise: &NoiseModel,
    rng: &mut impl rand::Rng,
) -> AttemptProbe {
    let bits = random_bits(raw_length, rng).expect("raw_length >= 1");
    let bases = random_bases(raw_length, rng).expect("raw_length >= 1");
    let frame = prepare_frame(&bits, &bases).expect("lengths match");
    let received = apply_channel(&frame, noise, rng);
    let committee_bases = random_bases(raw_length, rng).expect("raw_length >= 1");
    let measured = measure_frame(&received, &committee_bases, shots, rng).expect("lengths match");
    let key = sift(&bases, &committee_bases, &bits).expect("lengths match");
    let errors = key
        .positions
        .iter()
        .filter(|&&pos| measured.bit(pos) != bits.bit(pos))
        .count();
    AttemptProbe {
        sifted_len: key.len(),
        sifted_errors: errors,
    }
}

/// Key-size stability sweep configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub sizes: Vec<usize>,
    pub trials: u64,
    pub noise: NoiseSpec,
    pub shots: u64,
    pub attempt_cap: u32,
    pub seed: u64,
    pub parallel: bool,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            sizes: vec![2, 4, 8, 16, 32],
            trials: 100_000,
            noise: NoiseSpec::Uniform { max: 0.2 },
            shots: 1,
            attempt_cap: 3,
            seed: 0,
            parallel: true,
        }
    }
}

/// The sifted-length reading of a key size: sessions sized at 4x the
/// target, stable when at least the target survives error-free.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SiftedTargetStats {
    pub target_bits: usize,
    pub raw_length: usize,
    pub first_attempt_success_rate: f64,
}

/// Per-size sweep results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub raw_length: usize,
    /// Non-empty, error-free sift on the first attempt (raw reading).
    pub first_attempt_success_rate: f64,
    /// Matching closed-form probability.
    pub analytic_success: f64,
    pub mean_attempts: f64,
    pub mean_sifted_bits: f64,
    /// Sessions that confirmed a key within the attempt cap; a confirmed
    /// key decrypts the vote correctly end to end.
    pub end_to_end_vote_accuracy: f64,
    pub sifted_target: SiftedTargetStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub noise: NoiseSpec,
    pub trials: u64,
    pub seed: u64,
    pub points: Vec<SweepPoint>,
}

struct SweepTrial {
    first_stable: bool,
    sifted_len: usize,
    attempts: u32,
    confirmed: bool,
    target_stable: bool,
}

/// Runs `trials` QKD sessions per configured size and reports stability
/// under both readings of "key size", alongside the analytic oracle.
pub fn key_size_sweep(config: &SweepConfig) -> SweepReport {
    let mut points = Vec::with_capacity(config.sizes.len());
    for (size_index, &n) in config.sizes.iter().enumerate() {
        assert!(n >= 1, "key sizes must be at least 1");
        let base = trial_seed(config.seed, sweep_marker(size_index));
        let shots = config.shots;
        let noise = config.noise;
        let attempt_cap = config.attempt_cap;
        let outcomes = run_trials(config.trials, config.parallel, move |i| {
            let mut rng = ChaCha8Rng::seed_from_u64(trial_seed(base, i));
            let p = noise.draw(&mut rng);
            let model = NoiseModel::new(p, false).expect("draw within [0, 1]");

            let probe = probe_attempt(n, shots, &model, &mut rng);
            let target_probe = probe_attempt(4 * n, shots, &model, &mut rng);

            let session_config = QkdConfig {
                raw_length: n,
                shots,
                rng_seed: None,
                min_sifted_bits: 1,
                attempt_cap,
            };
            let (attempts, confirmed) = match simulate_session(&session_config, &model, &mut rng) {
                Ok(t) => (t.attempts, true),
                Err(SessionError::AttemptsExhausted { attempts }) => (attempts, false),
                Err(e) => panic!("in-process session cannot fail on transport: {e}"),
            };
            SweepTrial {
                first_stable: probe.stable(1),
                sifted_len: probe.sifted_len,
                attempts,
                confirmed,
                target_stable: target_probe.stable(n),
            }
        });

        let trials = config.trials as f64;
        let first = outcomes.iter().filter(|t| t.first_stable).count() as f64 / trials;
        let sifted: u64 = outcomes.iter().map(|t| t.sifted_len as u64).sum();
        let attempts: u64 = outcomes.iter().map(|t| u64::from(t.attempts)).sum();
        let confirmed = outcomes.iter().filter(|t| t.confirmed).count() as f64 / trials;
        let target = outcomes.iter().filter(|t| t.target_stable).count() as f64 / trials;
        points.push(SweepPoint {
            raw_length: n,
            first_attempt_success_rate: first,
            analytic_success: analytic_success(n, &config.noise),
            mean_attempts: attempts as f64 / trials,
            mean_sifted_bits: sifted as f64 / trials,
            end_to_end_vote_accuracy: confirmed,
            sifted_target: SiftedTargetStats {
                target_bits: n,
                raw_length: 4 * n,
                first_attempt_success_rate: target,
            },
        });
    }
    SweepReport {
        noise: config.noise,
        trials: config.trials,
        seed: config.seed,
        points,
    }
}

// Size index folded into the seed stream so points stay decorrelated.
fn sweep_marker(size_index: usize) -> u64 {
    0x53_57_45_45_50u64 ^ ((size_index as u64) << 32)
}

#[derive(Debug, Clone, Copy, Default)]
pub struct EveStats {
    pub sessions: u64,
    pub sifted_bits: u64,
    pub sifted_errors: u64,
    pub confirm_failures: u64,
}

impl EveStats {
    pub fn error_rate(&self) -> f64 {
        self.sifted_errors as f64 / self.sifted_bits as f64
    }

    pub fn confirm_failure_rate(&self) -> f64 {
        self.confirm_failures as f64 / self.sessions as f64
    }
}

/// First-attempt statistics under an intercept-resend eavesdropper with a
/// noiseless channel.
pub fn eavesdropper_stats(
    raw_length: usize,
    shots: u64,
    trials: u64,
    seed: u64,
    parallel: bool,
) -> EveStats {
    let noise = NoiseModel::new(0.0, true).expect("p = 0 is valid");
    let outcomes = run_trials(trials, parallel, move |i| {
        let mut rng = ChaCha8Rng::seed_from_u64(trial_seed(seed, i));
        probe_attempt(raw_length, shots, &noise, &mut rng)
    });
    let mut stats = EveStats {
        sessions: trials,
        ..EveStats::default()
    };
    for probe in outcomes {
        stats.sifted_bits += probe.sifted_len as u64;
        stats.sifted_errors += probe.sifted_errors as u64;
        if probe.sifted_errors > 0 {
            stats.confirm_failures += 1;
        }
    }
    stats
}

/// Mean sifted length over noiseless first attempts.
pub fn mean_sifted_length(raw_length: usize, trials: u64, seed: u64, parallel: bool) -> f64 {
    let noise = NoiseModel::noiseless();
    let lens = run_trials(trials, parallel, move |i| {
        let mut rng = ChaCha8Rng::seed_from_u64(trial_seed(seed, i));
        probe_attempt(raw_length, 1, &noise, &mut rng).sifted_len as u64
    });
    lens.iter().sum::<u64>() as f64 / trials as f64
}

/// Throughput pipeline configuration (loopback, noiseless).
#[derive(Debug, Clone, PartialEq)]
pub struct ThroughputConfig {
    pub votes: u64,
    pub workers: usize,
    pub candidates: Vec<String>,
    pub vote_key_bits: usize,
    pub id_key_bits: usize,
    pub shots: u64,
    pub seed: u64,
    pub election_id: String,
    /// Ledger location; a temp file when unset.
    pub ledger_path: Option<PathBuf>,
    /// fsync per append, part of the measured pipeline.
    pub sync: bool,
}

impl Default for ThroughputConfig {
    fn default() -> Self {
        ThroughputConfig {
            votes: 10_000,
            workers: 1,
            candidates: vec!["A".into(), "B".into(), "C".into()],
            vote_key_bits: 4,
            id_key_bits: 4,
            shots: 10_000,
            seed: 0,
            election_id: "bench".to_string(),
            ledger_path: None,
            sync: true,
        }
    }
}

/// Aggregate seconds spent per pipeline stage, summed over votes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct StageBreakdown {
    pub qkd_secs: f64,
    pub encrypt_secs: f64,
    /// Submit/receipt round trip minus the ledger share.
    pub transport_secs: f64,
    pub ledger_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThroughputReport {
    pub votes: u64,
    pub failures: u64,
    pub workers: usize,
    pub seed: u64,
    pub wall_secs: f64,
    pub votes_per_sec: f64,
    pub per_vote_secs: f64,
    pub stages: StageBreakdown,
    /// SHA-256 over the sorted (session, receipt) pairs; stable across
    /// runs with the same seed.
    pub outcome_digest: String,
}

/// Runs the full vote pipeline `votes` times over loopback with a
/// noiseless channel and reports wall-clock throughput with a per-stage
/// breakdown.
pub fn throughput_bench(config: &ThroughputConfig) -> Result<ThroughputReport, ServiceError> {
    assert!(config.votes >= 1 && config.workers >= 1);
    let channel: Arc<dyn Channel> = Arc::new(LoopbackChannel::default());
    let (ledger_path, scratch) = match &config.ledger_path {
        Some(path) => (path.clone(), None),
        None => {
            let path = std::env::temp_dir().join(format!(
                "qvote-throughput-{}.jsonl",
                uuid::Uuid::new_v4().simple()
            ));
            (path.clone(), Some(path))
        }
    };
    let committee = CommitteeConfig {
        election_id: config.election_id.clone(),
        candidates: config.candidates.clone(),
        vote_key_bits: config.vote_key_bits,
        id_key_bits: config.id_key_bits,
        shots: config.shots,
        noise: NoiseSpec::Off,
        eavesdropper: false,
        seed: config.seed,
    };
    let service = serve_with_sync(committee, channel.clone(), &ledger_path, config.sync)?;
    let voter_config = VoterConfig {
        election_id: config.election_id.clone(),
        vote_key_bits: config.vote_key_bits,
        id_key_bits: config.id_key_bits,
        shots: config.shots,
        ..VoterConfig::default()
    };

    let cast_one =
        |index: u64| -> Result<(String, String, Duration, Duration, Duration), CastError> {
            let mut rng = ChaCha8Rng::seed_from_u64(trial_seed(config.seed, index));
            let candidate = &config.candidates[(index as usize) % config.candidates.len()];
            let ballot = Ballot::new(candidate.as_bytes().to_vec(), format!("voter-{index}"))
                .expect("bench ballots are valid");
            let record = voter_cast(&ballot, &voter_config, &channel, &mut rng)?;
            Ok((
                record.session_id,
                record.receipt.to_hex(),
                record.timings.qkd,
                record.timings.encrypt,
                record.timings.submit_roundtrip,
            ))
        };

    let started = Instant::now();
    let mut outcomes: Vec<(String, String)> = Vec::with_capacity(config.votes as usize);
    let mut failures = 0u64;
    let mut qkd = Duration::ZERO;
    let mut encrypt = Duration::ZERO;
    let mut roundtrip = Duration::ZERO;
    if config.workers == 1 {
        for index in 0..config.votes {
            match cast_one(index) {
                Ok((sid, receipt, q, e, r)) => {
                    qkd += q;
                    encrypt += e;
                    roundtrip += r;
                    outcomes.push((sid, receipt));
                }
                Err(_) => failures += 1,
            }
        }
    } else {
        let results = std::thread::scope(|scope| {
            let mut handles = Vec::new();
            for worker in 0..config.workers {
                let cast_one = &cast_one;
                handles.push(scope.spawn(move || {
                    let mut local = Vec::new();
                    let mut index = worker as u64;
                    while index < config.votes {
                        local.push(cast_one(index));
                        index += config.workers as u64;
                    }
                    local
                }));
            }
            handles
                .into_iter()
                .flat_map(|h| h.join().expect("worker panicked"))
                .collect::<Vec<_>>()
        });
        for result in results {
            match result {
                Ok((sid, receipt, q, e, r)) => {
                    qkd += q;
                    encrypt += e;
                    roundtrip += r;
                    outcomes.push((sid, receipt));
                }
                Err(_) => failures += 1,
            }
        }
    }
    let wall = started.elapsed();

    let ledger_secs = service
        .core()
        .stats()
        .ledger_nanos
        .load(std::sync::atomic::Ordering::Relaxed) as f64
        / 1e9;
    service.shutdown()?;
    if let Some(path) = scratch {
        let _ = std::fs::remove_file(&path);
        let mut quarantine = path.into_os_string();
        quarantine.push(".quarantine");
        let _ = std::fs::remove_file(quarantine);
    }

    outcomes.sort();
    let mut hasher = Sha256::new();
    for (sid, receipt) in &outcomes {
        hasher.update(sid.as_bytes());
        hasher.update(b":");
        hasher.update(receipt.as_bytes());
        hasher.update(b"\n");
    }

    let completed = outcomes.len() as u64;
    let wall_secs = wall.as_secs_f64();
    Ok(ThroughputReport {
        votes: completed,
        failures,
        workers: config.workers,
        seed: config.seed,
        wall_secs,
        votes_per_sec: completed as f64 / wall_secs,
        per_vote_secs: wall_secs / completed.max(1) as f64,
        stages: StageBreakdown {
            qkd_secs: qkd.as_secs_f64(),
            encrypt_secs: encrypt.as_secs_f64(),
            transport_secs: (roundtrip.as_secs_f64() - ledger_secs).max(0.0),
            ledger_secs,
        },
        outcome_digest: hex::encode(hasher.finalize()),
    })
}

impl ThroughputReport {
    pub fn to_text(&self) -> String {
        format!(
            "votes           {}\n\
             failures        {}\n\
             workers         {}\n\
             seed            {}\n\
             wall time       {:.3} s\n\
             throughput      {:.0} votes/sec\n\
             per vote        {:.6} s\n\
             stage qkd       {:.3} s\n\
             stage encrypt   {:.3} s\n\
             stage transport {:.3} s\n\
             stage ledger    {:.3} s\n\
             outcome digest  {}\n",
            self.votes,
            self.failures,
            self.workers,
            self.seed,
            self.wall_secs,
            self.votes_per_sec,
            self.per_vote_secs,
            self.stages.qkd_secs,
            self.stages.encrypt_secs,
            self.stages.transport_secs,
            self.stages.ledger_secs,
            self.outcome_digest,
        )
    }
}

impl SweepReport {
    pub fn to_text_table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "noise {:?}, trials {}, seed {}\n",
            self.noise, self.trials, self.seed
        ));
        out.push_str(
            "raw_n  first_attempt  analytic  mean_att  mean_sift  e2e_acc  target(sift>=n @4n)\n",
        );
        for p in &self.points {
            out.push_str(&format!(
                "{:>5}  {:>13.5}  {:>8.5}  {:>8.3}  {:>9.3}  {:>7.5}  {:>19.5}\n",
                p.raw_length,
                p.first_attempt_success_rate,
                p.analytic_success,
                p.mean_attempts,
                p.mean_sifted_bits,
                p.end_to_end_vote_accuracy,
                p.sifted_target.first_attempt_success_rate,
            ));
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "raw_length,first_attempt_success_rate,analytic_success,mean_attempts,mean_sifted_bits,end_to_end_vote_accuracy,sifted_target_bits,sifted_target_raw_length,sifted_target_success_rate\n",
        );
        for p in &self.points {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                p.raw_length,
                p.first_attempt_success_rate,
                p.analytic_success,
                p.mean_attempts,
                p.mean_sifted_bits,
                p.end_to_end_vote_accuracy,
                p.sifted_target.target_bits,
                p.sifted_target.raw_length,
                p.sifted_target.first_attempt_success_rate,
            ));
        }
        out
    }
}
