//! Pluggable publish-subscribe channel with two bindings: a deterministic
//! in-process loopback and an MQTT client.
//!
//! Every message travels as a JSON [`Envelope`]; binary payload fields are
//! base64, digests lowercase hex. The loopback binding delivers
//! synchronously in publish order per topic and supports fault injection
//! (drop probability, fixed delay) for tests; it requires no external
//! services. The MQTT binding speaks to a real broker and is selected with
//! a `mqtt://host:port` URI.

use std::sync::Arc;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub mod loopback;
#[cfg(feature = "mqtt")]
pub mod mqtt;
pub mod topics;

pub use loopback::LoopbackChannel;
#[cfg(feature = "mqtt")]
pub use mqtt::MqttChannel;

/// Envelope schema version; the only one understood.
pub const ENVELOPE_VERSION: u32 = 1;

/// Hard ceiling on a serialized envelope.
pub const MAX_PAYLOAD_BYTES: usize = 256 * 1024;

/// Environment variable naming the default broker.
pub const BROKER_URI_ENV: &str = "QVOTE_BROKER_URI";

/// The JSON wire envelope common to every message.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub version: u32,
    pub election_id: String,
    pub session_id: String,
    pub msg_type: String,
    /// Milliseconds since the Unix epoch; informational only.
    pub sent_at: u64,
    pub payload: serde_json::Value,
}

/// Milliseconds since the Unix epoch.
pub fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

pub type Handler = Arc<dyn Fn(&str, &Envelope) + Send + Sync>;

/// Handle returned by [`Channel::subscribe`], used to unsubscribe.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SubscriptionId(pub(crate) u64);

/// A publish-subscribe message channel.
///
/// Handlers may be invoked concurrently across topics; per-topic delivery
/// order is preserved on the loopback binding. Publishing from handler
/// context must not deadlock.
pub trait Channel: Send + Sync {
    /// Serializes the envelope as UTF-8 JSON and delivers it to every
    /// subscriber whose filter matches the topic.
    fn publish(&self, topic: &str, envelope: &Envelope) -> Result<(), TransportError>;

    /// Registers a handler for every message whose topic matches `filter`;
    /// `+` matches one level, a trailing `#` matches any suffix.
    fn subscribe(&self, filter: &str, handler: Handler) -> Result<SubscriptionId, TransportError>;

    fn unsubscribe(&self, id: SubscriptionId) -> Result<(), TransportError>;
}

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("payload of {size} bytes exceeds the {MAX_PAYLOAD_BYTES}-byte limit")]
    PayloadTooLarge { size: usize },
    #[error("broker unreachable: {reason}; retry after {retry_after:?}")]
    Unreachable {
        reason: String,
        retry_after: Duration,
    },
    #[error("invalid topic filter `{0}`")]
    InvalidFilter(String),
    #[error("invalid broker URI `{0}`")]
    InvalidBrokerUri(String),
    #[error("channel closed")]
    Closed,
    #[error("envelope serialization failed: {0}")]
    Serialize(#[from] serde_json::Error),
}

/// Channel binding selection.
#[derive(Debug, Clone, PartialEq)]
pub enum ChannelConfig {
    Loopback(LoopbackConfig),
    Mqtt(MqttConfig),
}

/// Loopback binding knobs. Fault injection lives here; the protocol and
/// noise layers stay deterministic.
#[derive(Debug, Clone, PartialEq)]
pub struct LoopbackConfig {
    /// Probability that a delivery is silently dropped.
    pub drop_probability: f64,
    /// Fixed latency applied to every delivery.
    pub delay: Option<Duration>,
    /// Seed for the drop draw.
    pub seed: u64,
}

impl Default for LoopbackConfig {
    fn default() -> Self {
        LoopbackConfig {
            drop_probability: 0.0,
            delay: None,
            seed: 0,
        }
    }
}

/// MQTT binding configuration.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MqttConfig {
    /// `mqtt://host:port` (or bare `host:port`, port defaulting to 1883).
    pub broker_uri: String,
    /// QoS for publishes and subscriptions, 0..=2. Default 1: at-least-once
    /// delivery; the protocol layer rejects duplicates.
    pub qos: u8,
    pub keepalive: Duration,
}

impl Default for MqttConfig {
    fn default() -> Self {
        MqttConfig {
            broker_uri: "mqtt://localhost:1883".to_string(),
            qos: 1,
            keepalive: Duration::from_secs(30),
        }
    }
}

/// Opens a channel for the given binding.
pub fn connect(config: &ChannelConfig) -> Result<Arc<dyn Channel>, TransportError> {
    match config {
        ChannelConfig::Loopback(cfg) => Ok(Arc::new(LoopbackChannel::new(cfg.clone()))),
        #[cfg(feature = "mqtt")]
        ChannelConfig::Mqtt(cfg) => Ok(Arc::new(mqtt::MqttChannel::connect(cfg)?)),
        #[cfg(not(feature = "mqtt"))]
        ChannelConfig::Mqtt(_) => Err(TransportError::InvalidBrokerUri(
            "built without the `mqtt` feature".to_string(),
        )),
    }
}
