//! Binding equivalence: the protocol flow must behave over MQTT exactly
//! as it does over loopback.
//!
//! `vote_flow_over_embedded_broker` runs against an in-process rumqttd
//! broker and needs no external services. The ignored variant targets an
//! external broker named by `QVOTE_BROKER_URI`
//! (`cargo test --test mqtt_broker -- --ignored`).

#![cfg(feature = "mqtt")]

use std::collections::HashMap;
use std::net::TcpStream;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use qvote_core::bb84::NoiseSpec;
use qvote_core::protocol::{voter_cast, Ballot, CommitteeConfig, VoterConfig};
use qvote_core::service::serve;
use qvote_core::transport::{connect, ChannelConfig, MqttConfig, BROKER_URI_ENV};

fn start_embedded_broker(port: u16) {
    use rumqttd::{Broker, Config, ConnectionSettings, RouterConfig, ServerSettings};
    let config = Config {
        router: RouterConfig {
            max_connections: 128,
            max_outgoing_packet_count: 200,
            max_segment_size: 104_857_600,
            max_segment_count: 10,
            ..RouterConfig::default()
        },
        v4: Some(HashMap::from([(
            "v4".to_string(),
            ServerSettings {
                name: "v4".to_string(),
                listen: ([127, 0, 0, 1], port).into(),
                tls: None,
                next_connection_delay_ms: 0,
                connections: ConnectionSettings {
                    connection_timeout_ms: 60_000,
                    max_payload_size: 1_048_576,
                    max_inflight_count: 128,
                    auth: None,
                    external_auth: None,
                    dynamic_filters: false,
                },
            },
        )])),
        ..Config::default()
    };
    let mut broker = Broker::new(config);
    std::thread::spawn(move || {
        let _ = broker.start();
    });
    let deadline = Instant::now() + Duration::from_secs(10);
    while TcpStream::connect(("127.0.0.1", port)).is_err() {
        assert!(Instant::now() < deadline, "embedded broker never came up");
        std::thread::sleep(Duration::from_millis(50));
    }
}

fn run_vote_flow(broker_uri: &str, election_id: &str) {
    let mqtt = MqttConfig {
        broker_uri: broker_uri.to_string(),
        ..MqttConfig::default()
    };
    let committee_channel = connect(&ChannelConfig::Mqtt(mqtt.clone())).unwrap();
    let voter_channel = connect(&ChannelConfig::Mqtt(mqtt)).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let service = serve(
        CommitteeConfig {
            election_id: election_id.to_string(),
            candidates: vec!["A".into(), "B".into()],
            noise: NoiseSpec::Off,
            seed: 1,
            shots: 64,
            ..CommitteeConfig::default()
        },
        committee_channel,
        &dir.path().join("ledger.jsonl"),
    )
    .unwrap();
    // Let the broker settle the committee subscriptions.
    std::thread::sleep(Duration::from_millis(300));

    let voter_config = VoterConfig {
        election_id: election_id.to_string(),
        shots: 64,
        receipt_timeout: Duration::from_secs(15),
        step_timeout: Duration::from_secs(15),
        ..VoterConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut sessions = Vec::new();
    for (i, candidate) in [b"A", b"B", b"A"].iter().enumerate() {
        let ballot = Ballot::new(candidate.to_vec(), format!("remote-{i}").into_bytes()).unwrap();
        let record = match voter_cast(&ballot, &voter_config, &voter_channel, &mut rng) {
            Ok(record) => record,
            Err(e) => panic!("cast {i} over broker failed: {e}"),
        };
        sessions.push(record.session_id);
    }

    // Same outcome as loopback: every cast verified, recorded, tallyable.
    std::thread::sleep(Duration::from_millis(300));
    let tally = service.tally();
    assert_eq!(tally.count("A"), 2);
    assert_eq!(tally.count("B"), 1);
    assert_eq!(tally.verified, 3);
    for session in &sessions {
        assert!(service.core().with_ledger(|l| l.get(session).is_some()));
    }
    service.shutdown().unwrap();
}

#[test]
fn vote_flow_over_embedded_broker() {
    let port = 18936;
    start_embedded_broker(port);
    run_vote_flow(&format!("mqtt://127.0.0.1:{port}"), "mqtt-embedded");
}

#[test]
fn unreachable_broker_reports_retry_hint() {
    let config = MqttConfig {
        broker_uri: "mqtt://127.0.0.1:1".to_string(), // nothing listens here
        ..MqttConfig::default()
    };
    match connect(&ChannelConfig::Mqtt(config)) {
        Err(qvote_core::transport::TransportError::Unreachable { retry_after, .. }) => {
            assert!(retry_after > Duration::ZERO);
        }
        other => panic!("expected Unreachable, got {:?}", other.err()),
    }
}

#[test]
#[ignore = "requires an external MQTT broker (set QVOTE_BROKER_URI)"]
fn vote_flow_over_external_broker() {
    let Ok(broker_uri) = std::env::var(BROKER_URI_ENV) else {
        eprintln!("skipping: {BROKER_URI_ENV} not set");
        return;
    };
    run_vote_flow(&broker_uri, "mqtt-external");
}
