//! MQTT binding over rumqttc. Selected with an `mqtt://host:port` broker
//! URI; exercised by the ignored broker integration test.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use rumqttc::{Client, Event, Incoming, MqttOptions, QoS};

use super::{
    topics, Channel, Envelope, Handler, MqttConfig, SubscriptionId, TransportError,
    MAX_PAYLOAD_BYTES,
};

struct Subscription {
    id: u64,
    filter: String,
    handler: Handler,
}

pub struct MqttChannel {
    client: Client,
    qos: QoS,
    subs: Arc<Mutex<Vec<Subscription>>>,
    next_id: AtomicU64,
}

fn parse_uri(uri: &str) -> Result<(String, u16), TransportError> {
    let trimmed = uri
        .strip_prefix("mqtt://")
        .or_else(|| uri.strip_prefix("tcp://"))
        .unwrap_or(uri);
    if trimmed.is_empty() {
        return Err(TransportError::InvalidBrokerUri(uri.to_string()));
    }
    match trimmed.rsplit_once(':') {
        Some((host, port)) => {
            let port = port
                .parse()
                .map_err(|_| TransportError::InvalidBrokerUri(uri.to_string()))?;
            Ok((host.to_string(), port))
        }
        None => Ok((trimmed.to_string(), 1883)),
    }
}

fn to_qos(level: u8) -> Result<QoS, TransportError> {
    match level {
        0 => Ok(QoS::AtMostOnce),
        1 => Ok(QoS::AtLeastOnce),
        2 => Ok(QoS::ExactlyOnce),
        other => Err(TransportError::InvalidBrokerUri(format!(
            "QoS {other} out of range"
        ))),
    }
}

impl MqttChannel {
    /// Connects to the broker and blocks until the connection is
    /// acknowledged or fails.
    pub fn connect(config: &MqttConfig) -> Result<Self, TransportError> {
        let (host, port) = parse_uri(&config.broker_uri)?;
        let qos = to_qos(config.qos)?;
        let client_id = format!("qvote-{}", uuid::Uuid::new_v4().simple());
        let mut options = MqttOptions::new(client_id, host, port);
        options.set_keep_alive(config.keepalive);
        options.set_max_packet_size(MAX_PAYLOAD_BYTES + 4096, MAX_PAYLOAD_BYTES + 4096);

        let (client, mut connection) = Client::new(options, 64);
        let subs: Arc<Mutex<Vec<Subscription>>> = Arc::new(Mutex::new(Vec::new()));
        let subs_thread = subs.clone();
        let (ready_tx, ready_rx) = mpsc::channel::<Result<(), String>>();

        std::thread::Builder::new()
            .name("qvote-mqtt".to_string())
            .spawn(move || {
                let mut announced = false;
                for event in connection.iter() {
                    match event {
                        Ok(Event::Incoming(Incoming::ConnAck(_))) => {
                            if !announced {
                                announced = true;
                                let _ = ready_tx.send(Ok(()));
                            }
                        }
                        Ok(Event::Incoming(Incoming::Publish(publish))) => {
                            let envelope: Envelope = match serde_json::from_slice(&publish.payload)
                            {
                                Ok(env) => env,
                                Err(e) => {
                                    log::warn!(
                                        "dropping undecodable message on {}: {e}",
                                        publish.topic
                                    );
                                    continue;
                                }
                            };
                            let handlers: Vec<Handler> = {
                                let subs = subs_thread.lock().expect("subscriptions poisoned");
                                subs.iter()
                                    .filter(|s| topics::matches(&s.filter, &publish.topic))
                                    .map(|s| s.handler.clone())
                                    .collect()
                            };
                            for handler in handlers {
                                handler(&publish.topic, &envelope);
                            }
                        }
                        Ok(Event::Incoming(Incoming::Disconnect)) => break,
                        Ok(_) => {}
                        Err(e) => {
                            if !announced {
                                let _ = ready_tx.send(Err(e.to_string()));
                                break;
                            }
                            // Reconnect loop; avoid a hot spin.
                            std::thread::sleep(Duration::from_millis(200));
                        }
                    }
                }
            })
            .expect("spawn mqtt event thread");

        match ready_rx.recv_timeout(Duration::from_secs(10)) {
            Ok(Ok(())) => Ok(MqttChannel {
                client,
                qos,
                subs,
                next_id: AtomicU64::new(1),
            }),
            Ok(Err(reason)) => Err(TransportError::Unreachable {
                reason,
                retry_after: Duration::from_secs(1),
            }),
            Err(_) => Err(TransportError::Unreachable {
                reason: "no broker acknowledgement within 10s".to_string(),
                retry_after: Duration::from_secs(1),
            }),
        }
    }
}

impl Channel for MqttChannel {
    fn publish(&self, topic: &str, envelope: &Envelope) -> Result<(), TransportError> {
        let bytes = serde_json::to_vec(envelope)?;
        if bytes.len() > MAX_PAYLOAD_BYTES {
            return Err(TransportError::PayloadTooLarge { size: bytes.len() });
        }
        self.client
            .publish(topic, self.qos, false, bytes)
            .map_err(|e| TransportError::Unreachable {
                reason: e.to_string(),
                retry_after: Duration::from_secs(1),
            })
    }

    fn subscribe(&self, filter: &str, handler: Handler) -> Result<SubscriptionId, TransportError> {
        if filter.is_empty() {
            return Err(TransportError::InvalidFilter(filter.to_string()));
        }
        self.client
            .subscribe(filter, self.qos)
            .map_err(|e| TransportError::Unreachable {
                reason: e.to_string(),
                retry_after: Duration::from_secs(1),
            })?;
        let id = self.next_id.fetch_add(1, Ordering::Relaxed);
        self.subs
            .lock()
            .expect("subscriptions poisoned")
            .push(Subscription {
                id,
                filter: filter.to_string(),
                handler,
            });
        Ok(SubscriptionId(id))
    }

    fn unsubscribe(&self, id: SubscriptionId) -> Result<(), TransportError> {
        let mut subs = self.subs.lock().expect("subscriptions poisoned");
        let Some(at) = subs.iter().position(|s| s.id == id.0) else {
            return Ok(());
        };
        let filter = subs.remove(at).filter;
        if !subs.iter().any(|s| s.filter == filter) {
            let _ = self.client.unsubscribe(&filter);
        }
        Ok(())
    }
}

impl Drop for MqttChannel {
    fn drop(&mut self) {
        let _ = self.client.disconnect();
    }
}
