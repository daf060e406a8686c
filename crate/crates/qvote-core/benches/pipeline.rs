//! Microbenchmarks for the pipeline stages plus the full end-to-end cast
//! over loopback.

use std::hint::black_box;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use qvote_core::bb84::{
    measure_frame, prepare_frame, random_bases, random_bits, simulate_session, NoiseModel,
    QkdConfig,
};
use qvote_core::bench::trial_seed;
use qvote_core::crypto::receipt_hash;
use qvote_core::protocol::{voter_cast, Ballot, CommitteeConfig, VoterConfig};
use qvote_core::qasm::{emit_prep, parse_prep};
use qvote_core::service::serve;
use qvote_core::transport::{Channel, LoopbackChannel};

fn bench_measure_shots(c: &mut Criterion) {
    // Majority aggregation samples the shot-sum binomial, so cost should
    // stay flat as the shot count grows.
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let bits = random_bits(32, &mut rng).unwrap();
    let bases = random_bases(32, &mut rng).unwrap();
    let frame = prepare_frame(&bits, &bases).unwrap();
    let committee_bases = random_bases(32, &mut rng).unwrap();

    let mut group = c.benchmark_group("measure_frame_32q");
    for shots in [1u64, 100, 10_000] {
        group.bench_with_input(BenchmarkId::from_parameter(shots), &shots, |b, &shots| {
            b.iter(|| measure_frame(black_box(&frame), &committee_bases, shots, &mut rng).unwrap());
        });
    }
    group.finish();
}

fn bench_qasm_roundtrip(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let bits = random_bits(32, &mut rng).unwrap();
    let bases = random_bases(32, &mut rng).unwrap();
    let frame = prepare_frame(&bits, &bases).unwrap();
    c.bench_function("qasm_emit_parse_32q", |b| {
        b.iter(|| parse_prep(emit_prep(black_box(&frame)).text()).unwrap());
    });
}

fn bench_receipt_hash(c: &mut Criterion) {
    c.bench_function("receipt_hash_64b", |b| {
        let e_vote = [0xA5u8; 32];
        let e_id = [0x5Au8; 32];
        b.iter(|| receipt_hash(black_box(&e_vote), black_box(&e_id)).unwrap());
    });
}

fn bench_qkd_session(c: &mut Criterion) {
    let config = QkdConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    c.bench_function("qkd_session_32q_noiseless", |b| {
        b.iter(|| simulate_session(&config, &NoiseModel::noiseless(), &mut rng).unwrap());
    });
}

fn bench_vote_end_to_end(c: &mut Criterion) {
    let channel: Arc<dyn Channel> = Arc::new(LoopbackChannel::default());
    let dir = std::env::temp_dir().join(format!("qvote-bench-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let ledger = dir.join("ledger.jsonl");
    let _ = std::fs::remove_file(&ledger);
    let service = serve(
        CommitteeConfig {
            candidates: vec!["A".into(), "B".into()],
            ..CommitteeConfig::default()
        },
        channel.clone(),
        &ledger,
    )
    .unwrap();
    let config = VoterConfig::default();
    let counter = AtomicU64::new(0);

    let mut group = c.benchmark_group("vote_end_to_end");
    group.throughput(Throughput::Elements(1));
    group.bench_function("loopback_fsync", |b| {
        b.iter(|| {
            let i = counter.fetch_add(1, Ordering::Relaxed);
            let ballot = Ballot::new(b"A".to_vec(), format!("bench-{i}").into_bytes()).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(trial_seed(4, i));
            voter_cast(&ballot, &config, &channel, &mut rng).unwrap()
        });
    });
    group.finish();

    service.shutdown().unwrap();
    let _ = std::fs::remove_dir_all(&dir);
}

criterion_group!(
    benches,
    bench_measure_shots,
    bench_qasm_roundtrip,
    bench_receipt_hash,
    bench_qkd_session,
    bench_vote_end_to_end
);
criterion_main!(benches);
