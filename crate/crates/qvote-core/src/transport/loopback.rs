//! In-process channel: synchronous delivery on the publisher's thread, in
//! publish order per topic, with optional fault injection.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    topics, Channel, Envelope, Handler, LoopbackConfig, SubscriptionId, TransportError,
    MAX_PAYLOAD_BYTES,
};

struct Subscription {
    id: u64,
    filter: String,
    handler: Handler,
}

pub struct LoopbackChannel {
    subs: Mutex<Vec<Subscription>>,
    next_id: AtomicU64,
    drop_probability: f64,
    delay: Option<std::time::Duration>,
    rng: Mutex<ChaCha8Rng>,
    published: AtomicU64,
    delivered: AtomicU64,
}

impl LoopbackChannel {
    pub fn new(config: LoopbackConfig) -> Self {
        LoopbackChannel {
            subs: Mutex::new(Vec::new()),
            next_id: AtomicU64::new(1),
            drop_probability: config.drop_probability,
            delay: config.delay,
            rng: Mutex::new(ChaCha8Rng::seed_from_u64(config.seed)),
            published: AtomicU64::new(0),
            delivered: AtomicU64::new(0),
        }
    }

    pub fn published(&self) -> u64 {
        self.published.load(Ordering::Relaxed)
    }

    pub fn delivered(&self) -> u64 {
        self.delivered.load(Ordering::Relaxed)
    }
}

impl Default for LoopbackChannel {
    fn default() -> Self {
        LoopbackChannel::new(LoopbackConfig::default())
    }
}

impl Channel for LoopbackChannel {
    fn publish(&self, topic: &str, envelope: &Envelope) -> Result<(), TransportError> {
        // Serialize/deserialize once per publish so the delivered value is
        // exactly what a wire binding would produce.
        let bytes = serde_json::to_vec(envelope)?;
        if bytes.len() > MAX_PAYLOAD_BYTES {
            return Err(TransportError::PayloadTooLarge { size: bytes.len() });
        }
        let delivered: Envelope = serde_json::from_slice(&bytes)?;
        self.published.fetch_add(1, Ordering::Relaxed);

        // Snapshot matching handlers, then invoke without holding the lock
        // so handlers can publish in turn.
        let matching: Vec<Handler> = {
            let subs = self.subs.lock().expect("subscription registry poisoned");
            subs.iter()
                .filter(|s| topics::matches(&s.filter, topic))
                .map(|s| s.handler.clone())
                .collect()
        };
        for handler in matching {
            if self.drop_probability > 0.0 {
                let dropped = {
                    let mut rng = self.rng.lock().expect("rng poisoned");
                    rng.random_bool(self.drop_probability.min(1.0))
                };
                if dropped {
                    continue;
                }
            }
            if let Some(delay) = self.delay {
                std::thread::sleep(delay);
            }
            self.delivered.fetch_add(1, Ordering::Relaxed);
            handler(topic, &delivered);
        }
        Ok(())
    }

    fn subscribe(&self, filter: &str, handler: Handler) -> Result<SubscriptionId, TransportError> {
        if filter.is_empty() {
            return Err(TransportError::InvalidFilter(filter.to_string()));
        }
        let mut subs = self.subs.lock().expect("subscription registry poisoned");
        // Duplicate identical subscriptions are idempotent.
        if let Some(existing) = subs
            .iter()
            .find(|s| s.filter == filter && Handler::ptr_eq(&s.handler, &handler))
        {
            return Ok(SubscriptionId(existing.id));
        }
        let id = self.next_id.fetch_add(1, Ordering::Relaxed);
        subs.push(Subscription {
            id,
            filter: filter.to_string(),
            handler,
        });
        Ok(SubscriptionId(id))
    }

    fn unsubscribe(&self, id: SubscriptionId) -> Result<(), TransportError> {
        let mut subs = self.subs.lock().expect("subscription registry poisoned");
        subs.retain(|s| s.id != id.0);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transport::{now_ms, ENVELOPE_VERSION};
    use std::sync::atomic::AtomicUsize;
    use std::sync::Arc;

    fn envelope(msg_type: &str) -> Envelope {
        Envelope {
            version: ENVELOPE_VERSION,
            election_id: "e1".into(),
            session_id: "s1".into(),
            msg_type: msg_type.into(),
            sent_at: now_ms(),
            payload: serde_json::json!({}),
        }
    }

    #[test]
    fn delivers_exactly_once_per_subscriber() {
        let ch = LoopbackChannel::default();
        let seen = Arc::new(Mutex::new(Vec::new()));
        let seen2 = seen.clone();
        ch.subscribe(
            "qvote/e1/vote/+",
            Arc::new(move |topic, env| {
                seen2.lock().unwrap().push((topic.to_string(), env.clone()));
            }),
        )
        .unwrap();
        let env = envelope("VOTE_SUBMIT");
        ch.publish("qvote/e1/vote/s1", &env).unwrap();
        let seen = seen.lock().unwrap();
        assert_eq!(seen.len(), 1);
        assert_eq!(seen[0].0, "qvote/e1/vote/s1");
        assert_eq!(seen[0].1, env);
    }

    #[test]
    fn drop_probability_one_suppresses_delivery() {
        let ch = LoopbackChannel::new(LoopbackConfig {
            drop_probability: 1.0,
            ..LoopbackConfig::default()
        });
        let count = Arc::new(AtomicUsize::new(0));
        let count2 = count.clone();
        ch.subscribe(
            "t",
            Arc::new(move |_, _| {
                count2.fetch_add(1, Ordering::Relaxed);
            }),
        )
        .unwrap();
        for _ in 0..50 {
            ch.publish("t", &envelope("X")).unwrap();
        }
        assert_eq!(count.load(Ordering::Relaxed), 0);
    }

    #[test]
    fn fixed_delay_applies_per_delivery() {
        let delay = std::time::Duration::from_millis(5);
        let ch = LoopbackChannel::new(LoopbackConfig {
            delay: Some(delay),
            ..LoopbackConfig::default()
        });
        let count = Arc::new(AtomicUsize::new(0));
        let count2 = count.clone();
        ch.subscribe(
            "t",
            Arc::new(move |_, _| {
                count2.fetch_add(1, Ordering::Relaxed);
            }),
        )
        .unwrap();
        let started = std::time::Instant::now();
        ch.publish("t", &envelope("X")).unwrap();
        assert_eq!(count.load(Ordering::Relaxed), 1);
        assert!(started.elapsed() >= delay);
    }

    #[test]
    fn preserves_publish_order_per_topic() {
        let ch = LoopbackChannel::default();
        let seen = Arc::new(Mutex::new(Vec::new()));
        let seen2 = seen.clone();
        ch.subscribe(
            "a/b",
            Arc::new(move |_, env| {
                seen2.lock().unwrap().push(env.sent_at);
            }),
        )
        .unwrap();
        for i in 0..100 {
            let mut env = envelope("X");
            env.sent_at = i;
            ch.publish("a/b", &env).unwrap();
        }
        assert_eq!(*seen.lock().unwrap(), (0..100).collect::<Vec<_>>());
    }

    #[test]
    fn duplicate_identical_subscription_is_idempotent() {
        let ch = LoopbackChannel::default();
        let count = Arc::new(AtomicUsize::new(0));
        let count2 = count.clone();
        let handler: Handler = Arc::new(move |_, _| {
            count2.fetch_add(1, Ordering::Relaxed);
        });
        let a = ch.subscribe("t", handler.clone()).unwrap();
        let b = ch.subscribe("t", handler).unwrap();
        assert_eq!(a, b);
        ch.publish("t", &envelope("X")).unwrap();
        assert_eq!(count.load(Ordering::Relaxed), 1);
    }

    #[test]
    fn unsubscribe_stops_delivery() {
        let ch = LoopbackChannel::default();
        let count = Arc::new(AtomicUsize::new(0));
        let count2 = count.clone();
        let id = ch
            .subscribe(
                "t",
                Arc::new(move |_, _| {
                    count2.fetch_add(1, Ordering::Relaxed);
                }),
            )
            .unwrap();
        ch.publish("t", &envelope("X")).unwrap();
        ch.unsubscribe(id).unwrap();
        ch.publish("t", &envelope("X")).unwrap();
        assert_eq!(count.load(Ordering::Relaxed), 1);
    }

    #[test]
    fn topic_isolation_between_sessions() {
        let ch = LoopbackChannel::default();
        let count = Arc::new(AtomicUsize::new(0));
        let count2 = count.clone();
        ch.subscribe(
            "qvote/e1/receipt/sA",
            Arc::new(move |_, _| {
                count2.fetch_add(1, Ordering::Relaxed);
            }),
        )
        .unwrap();
        ch.publish("qvote/e1/receipt/sB", &envelope("RECEIPT"))
            .unwrap();
        assert_eq!(count.load(Ordering::Relaxed), 0);
        ch.publish("qvote/e1/receipt/sA", &envelope("RECEIPT"))
            .unwrap();
        assert_eq!(count.load(Ordering::Relaxed), 1);
    }

    #[test]
    fn publish_from_handler_context_does_not_deadlock() {
        let ch = Arc::new(LoopbackChannel::default());
        let ch2 = ch.clone();
        let replies = Arc::new(AtomicUsize::new(0));
        let replies2 = replies.clone();
        ch.subscribe(
            "req",
            Arc::new(move |_, env| {
                ch2.publish("resp", env).unwrap();
            }),
        )
        .unwrap();
        ch.subscribe(
            "resp",
            Arc::new(move |_, _| {
                replies2.fetch_add(1, Ordering::Relaxed);
            }),
        )
        .unwrap();
        ch.publish("req", &envelope("X")).unwrap();
        assert_eq!(replies.load(Ordering::Relaxed), 1);
    }

    #[test]
    fn oversized_payload_rejected() {
        let ch = LoopbackChannel::default();
        let mut env = envelope("X");
        env.payload = serde_json::json!({"blob": "x".repeat(MAX_PAYLOAD_BYTES)});
        match ch.publish("t", &env) {
            Err(TransportError::PayloadTooLarge { size }) => assert!(size > MAX_PAYLOAD_BYTES),
            other => panic!("expected PayloadTooLarge, got {other:?}"),
        }
    }
}
