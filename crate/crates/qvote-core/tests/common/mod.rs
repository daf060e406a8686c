//! Shared helpers for the integration suites.
#![allow(dead_code)] // each suite uses a different subset

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use base64::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use qvote_core::bb84::NoiseSpec;
use qvote_core::protocol::{CommitteeConfig, VoterConfig};
use qvote_core::transport::{
    Channel, Envelope, Handler, LoopbackChannel, SubscriptionId, TransportError,
};

pub fn loopback() -> Arc<dyn Channel> {
    Arc::new(LoopbackChannel::default())
}

pub fn committee_config(election_id: &str, noise: NoiseSpec, seed: u64) -> CommitteeConfig {
    CommitteeConfig {
        election_id: election_id.to_string(),
        candidates: vec!["A".into(), "B".into(), "C".into()],
        noise,
        seed,
        shots: 64,
        ..CommitteeConfig::default()
    }
}

pub fn voter_config(election_id: &str) -> VoterConfig {
    VoterConfig {
        election_id: election_id.to_string(),
        shots: 64,
        ..VoterConfig::default()
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Channel wrapper that flips one ciphertext bit in every VOTE_SUBMIT.
pub struct TamperChannel {
    inner: Arc<dyn Channel>,
    rng: Mutex<ChaCha8Rng>,
    pub flips: AtomicU64,
}

impl TamperChannel {
    pub fn new(inner: Arc<dyn Channel>, seed: u64) -> Self {
        TamperChannel {
            inner,
            rng: Mutex::new(ChaCha8Rng::seed_from_u64(seed)),
            flips: AtomicU64::new(0),
        }
    }
}

/// Channel wrapper that swallows publishes of one message type.
pub struct DropTypeChannel {
    inner: Arc<dyn Channel>,
    msg_type: &'static str,
    pub dropped: AtomicU64,
}

impl DropTypeChannel {
    pub fn new(inner: Arc<dyn Channel>, msg_type: &'static str) -> Self {
        DropTypeChannel {
            inner,
            msg_type,
            dropped: AtomicU64::new(0),
        }
    }
}

impl Channel for DropTypeChannel {
    fn publish(&self, topic: &str, envelope: &Envelope) -> Result<(), TransportError> {
        if envelope.msg_type == self.msg_type {
            self.dropped.fetch_add(1, Ordering::Relaxed);
            return Ok(());
        }
        self.inner.publish(topic, envelope)
    }

    fn subscribe(&self, filter: &str, handler: Handler) -> Result<SubscriptionId, TransportError> {
        self.inner.subscribe(filter, handler)
    }

    fn unsubscribe(&self, id: SubscriptionId) -> Result<(), TransportError> {
        self.inner.unsubscribe(id)
    }
}

impl Channel for TamperChannel {
    fn publish(&self, topic: &str, envelope: &Envelope) -> Result<(), TransportError> {
        let mut envelope = envelope.clone();
        if envelope.msg_type == "VOTE_SUBMIT" {
            let payload = envelope.payload.as_object_mut().expect("object payload");
            let b64 = payload["e_vote_b64"]
                .as_str()
                .expect("e_vote present")
                .to_string();
            let mut bytes = BASE64_STANDARD.decode(&b64).expect("valid base64");
            let mut rng = self.rng.lock().expect("tamper rng");
            let byte = rng.random_range(0..bytes.len());
            let bit = rng.random_range(0..8u8);
            bytes[byte] ^= 1 << bit;
            payload.insert(
                "e_vote_b64".to_string(),
                serde_json::Value::String(BASE64_STANDARD.encode(&bytes)),
            );
            self.flips.fetch_add(1, Ordering::Relaxed);
        }
        self.inner.publish(topic, &envelope)
    }

    fn subscribe(&self, filter: &str, handler: Handler) -> Result<SubscriptionId, TransportError> {
        self.inner.subscribe(filter, handler)
    }

    fn unsubscribe(&self, id: SubscriptionId) -> Result<(), TransportError> {
        self.inner.unsubscribe(id)
    }
}
