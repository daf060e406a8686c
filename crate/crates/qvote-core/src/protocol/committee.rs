//! Committee-side message handler: drives the mirror side of QKD sessions,
//! decrypts and records submitted ballots, answers receipts, and processes
//! voluntary identity reveals.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use base64::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::bb84::{CommitteeQkd, KeyConfirmation, NoiseModel, NoiseSpec};
use crate::bits::BitString;
use crate::crypto::{receipt_hash, split_key, xor_apply, xor_with_bits};
use crate::ledger::{AuditRecord, Ledger, LedgerEntry, RecordedVote};
use crate::qasm;
use crate::transport::{now_ms, topics};
use crate::vault::{KeyVault, SealedKey};

use super::messages::{MessageBody, Role, WireMessage};
use super::MAX_FIELD_BYTES;

/// Election-wide committee configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct CommitteeConfig {
    pub election_id: String,
    /// Registered candidate identifiers; decrypted votes outside this set
    /// are recorded but flagged invalid.
    pub candidates: Vec<String>,
    pub vote_key_bits: usize,
    pub id_key_bits: usize,
    /// Measurement repetitions per qubit.
    pub shots: u64,
    /// Distribution the per-session flip probability is drawn from.
    pub noise: NoiseSpec,
    /// Simulate an intercept-resend eavesdropper on the quantum channel.
    pub eavesdropper: bool,
    /// Base seed for per-session randomness.
    pub seed: u64,
}

impl Default for CommitteeConfig {
    fn default() -> Self {
        CommitteeConfig {
            election_id: "election".to_string(),
            candidates: Vec::new(),
            vote_key_bits: 4,
            id_key_bits: 4,
            shots: 10_000,
            noise: NoiseSpec::Off,
            eavesdropper: false,
            seed: 0,
        }
    }
}

#[derive(Debug, Error)]
pub enum Reject {
    #[error("unknown session {0}")]
    UnknownSession(String),
    #[error("duplicate vote submission for session {0}")]
    DuplicateSubmission(String),
    #[error("key not confirmed for session {0}")]
    KeyNotConfirmed(String),
    #[error("bad audit key: {0}")]
    BadKey(String),
    #[error("message for election {got}, serving {serving}")]
    WrongElection { got: String, serving: String },
    #[error("malformed message: {0}")]
    Malformed(String),
    #[error("internal failure: {0}")]
    Internal(String),
}

#[derive(Debug, Default)]
pub struct CommitteeStats {
    pub frames_received: AtomicU64,
    pub votes_recorded: AtomicU64,
    pub invalid_votes: AtomicU64,
    pub receipts_sent: AtomicU64,
    pub retries: AtomicU64,
    pub rejects: AtomicU64,
    pub audits_recorded: AtomicU64,
    /// Nanoseconds spent appending (and syncing) ledger entries.
    pub ledger_nanos: AtomicU64,
}

struct QkdSlot {
    qkd: CommitteeQkd,
    /// Canonical base64 of the last frame, for idempotent re-announcement.
    last_frame_b64: Option<String>,
    announced: Option<Vec<crate::bb84::Basis>>,
    last_voter_bases: Option<Vec<crate::bb84::Basis>>,
    confirmation: Option<KeyConfirmation>,
    expecting_frame: bool,
    confirmed: bool,
}

/// The committee state machine behind the service.
pub struct CommitteeCore {
    config: CommitteeConfig,
    sessions: Mutex<HashMap<String, Arc<Mutex<QkdSlot>>>>,
    vault: KeyVault,
    ledger: Mutex<Ledger>,
    stats: CommitteeStats,
}

impl CommitteeCore {
    pub fn new(config: CommitteeConfig, ledger: Ledger) -> Self {
        CommitteeCore {
            config,
            sessions: Mutex::new(HashMap::new()),
            vault: KeyVault::new(),
            ledger: Mutex::new(ledger),
            stats: CommitteeStats::default(),
        }
    }

    pub fn config(&self) -> &CommitteeConfig {
        &self.config
    }

    pub fn stats(&self) -> &CommitteeStats {
        &self.stats
    }

    pub fn vault(&self) -> &KeyVault {
        &self.vault
    }

    /// Runs `f` over the ledger under its lock.
    pub fn with_ledger<T>(&self, f: impl FnOnce(&Ledger) -> T) -> T {
        f(&self.ledger.lock().expect("ledger poisoned"))
    }

    fn session_rng(&self, session_id: &str) -> ChaCha8Rng {
        let mut hasher = Sha256::new();
        hasher.update(self.config.seed.to_le_bytes());
        hasher.update(self.config.election_id.as_bytes());
        hasher.update(session_id.as_bytes());
        ChaCha8Rng::from_seed(hasher.finalize().into())
    }

    fn slot(&self, session_id: &str) -> Option<Arc<Mutex<QkdSlot>>> {
        self.sessions
            .lock()
            .expect("sessions poisoned")
            .get(session_id)
            .cloned()
    }

    fn slot_or_create(&self, session_id: &str) -> Arc<Mutex<QkdSlot>> {
        let mut sessions = self.sessions.lock().expect("sessions poisoned");
        sessions
            .entry(session_id.to_string())
            .or_insert_with(|| {
                let mut rng = self.session_rng(session_id);
                let p = self.config.noise.draw(&mut rng);
                let noise = NoiseModel::new(p, self.config.eavesdropper)
                    .expect("drawn probability within [0, 1]");
                Arc::new(Mutex::new(QkdSlot {
                    qkd: CommitteeQkd::new(self.config.shots, noise, rng),
                    last_frame_b64: None,
                    announced: None,
                    last_voter_bases: None,
                    confirmation: None,
                    expecting_frame: true,
                    confirmed: false,
                }))
            })
            .clone()
    }

    /// Handles one inbound message; `Ok(Some(reply))` is published by the
    /// caller on the reply's canonical topic. Rejects are logged and
    /// dropped; the voter's timeouts own recovery.
    pub fn handle(&self, msg: &WireMessage) -> Result<Option<WireMessage>, Reject> {
        if msg.election_id != self.config.election_id {
            self.stats.rejects.fetch_add(1, Ordering::Relaxed);
            return Err(Reject::WrongElection {
                got: msg.election_id.clone(),
                serving: self.config.election_id.clone(),
            });
        }
        let result = match &msg.body {
            MessageBody::QkdQuantum { qasm_b64 } => self.on_frame(&msg.session_id, qasm_b64),
            MessageBody::QkdBasesVoter { bases } => self.on_voter_bases(&msg.session_id, bases),
            MessageBody::KeyConfirm {
                from: Role::Voter,
                sifted_len,
                key_digest_hex,
            } => self.on_voter_confirm(
                &msg.session_id,
                &KeyConfirmation {
                    sifted_len: *sifted_len,
                    key_digest_hex: key_digest_hex.clone(),
                },
            ),
            MessageBody::KeyRetry {
                from: Role::Voter, ..
            } => self.on_retry(&msg.session_id),
            // Our own publishes echoed back on the shared confirm topic.
            MessageBody::KeyConfirm {
                from: Role::Committee,
                ..
            }
            | MessageBody::KeyRetry {
                from: Role::Committee,
                ..
            } => Ok(None),
            MessageBody::VoteSubmit {
                e_vote_b64,
                e_id_b64,
            } => self.on_vote_submit(&msg.session_id, e_vote_b64, e_id_b64),
            MessageBody::AuditRequest => self.on_audit_request(&msg.session_id),
            MessageBody::AuditReveal { k_id_bits } => {
                self.on_audit_reveal(&msg.session_id, k_id_bits)
            }
            MessageBody::QkdBasesCommittee { .. } | MessageBody::Receipt { .. } => Err(
                Reject::Malformed(format!("{} is committee-bound only", msg.body.msg_type())),
            ),
        };
        if result.is_err() {
            self.stats.rejects.fetch_add(1, Ordering::Relaxed);
        }
        result
    }

    fn reply(&self, session_id: &str, body: MessageBody) -> Option<WireMessage> {
        Some(WireMessage::new(
            self.config.election_id.clone(),
            session_id,
            body,
        ))
    }

    fn on_frame(&self, session_id: &str, qasm_b64: &str) -> Result<Option<WireMessage>, Reject> {
        if !topics::valid_level(session_id) {
            return Err(Reject::Malformed(
                "session_id is not a valid topic level".into(),
            ));
        }
        let text_bytes = BASE64_STANDARD
            .decode(qasm_b64)
            .map_err(|e| Reject::Malformed(format!("frame base64: {e}")))?;
        let text = String::from_utf8(text_bytes)
            .map_err(|_| Reject::Malformed("frame is not UTF-8".into()))?;
        let frame = qasm::parse_prep(&text)
            .map_err(|e| Reject::Malformed(format!("frame rejected: {e}")))?;
        let canonical = BASE64_STANDARD.encode(&text);

        let slot = self.slot_or_create(session_id);
        let mut slot = slot.lock().expect("session slot poisoned");
        if !slot.expecting_frame {
            // At-least-once transport: re-announce for a byte-identical
            // replay, reject anything else.
            if slot.last_frame_b64.as_deref() == Some(canonical.as_str()) {
                let bases = slot.announced.clone().expect("announced with frame stored");
                return Ok(self.reply(session_id, MessageBody::QkdBasesCommittee { bases }));
            }
            return Err(Reject::Malformed(
                "unexpected extra frame for session".into(),
            ));
        }
        let bases = slot
            .qkd
            .receive_frame(&frame)
            .map_err(|e| Reject::Malformed(e.to_string()))?
            .to_vec();
        slot.expecting_frame = false;
        slot.last_frame_b64 = Some(canonical);
        slot.announced = Some(bases.clone());
        self.stats.frames_received.fetch_add(1, Ordering::Relaxed);
        Ok(self.reply(session_id, MessageBody::QkdBasesCommittee { bases }))
    }

    fn on_voter_bases(
        &self,
        session_id: &str,
        bases: &[crate::bb84::Basis],
    ) -> Result<Option<WireMessage>, Reject> {
        let slot = self
            .slot(session_id)
            .ok_or_else(|| Reject::UnknownSession(session_id.to_string()))?;
        let mut slot = slot.lock().expect("session slot poisoned");
        if slot.announced.is_none() {
            return Err(Reject::Malformed("voter bases before any frame".into()));
        }
        if let Some(confirmation) = &slot.confirmation {
            if slot.last_voter_bases.as_deref() == Some(bases) {
                let confirmation = confirmation.clone();
                return Ok(self.reply(
                    session_id,
                    MessageBody::KeyConfirm {
                        from: Role::Committee,
                        sifted_len: confirmation.sifted_len,
                        key_digest_hex: confirmation.key_digest_hex,
                    },
                ));
            }
            return Err(Reject::Malformed(
                "conflicting voter bases for attempt".into(),
            ));
        }
        let key = slot
            .qkd
            .receive_voter_bases(bases)
            .map_err(|e| Reject::Malformed(e.to_string()))?;
        let confirmation = KeyConfirmation::for_key(key);
        slot.last_voter_bases = Some(bases.to_vec());
        slot.confirmation = Some(confirmation.clone());
        Ok(self.reply(
            session_id,
            MessageBody::KeyConfirm {
                from: Role::Committee,
                sifted_len: confirmation.sifted_len,
                key_digest_hex: confirmation.key_digest_hex,
            },
        ))
    }

    fn on_voter_confirm(
        &self,
        session_id: &str,
        theirs: &KeyConfirmation,
    ) -> Result<Option<WireMessage>, Reject> {
        let slot = self
            .slot(session_id)
            .ok_or_else(|| Reject::UnknownSession(session_id.to_string()))?;
        let mut slot = slot.lock().expect("session slot poisoned");
        let Some(ours) = slot.confirmation.clone() else {
            return Err(Reject::Malformed(
                "confirm before basis reconciliation".into(),
            ));
        };
        if slot.confirmed {
            if ours == *theirs {
                return Ok(None); // duplicate ack
            }
            return Err(Reject::Malformed("conflicting confirmation ack".into()));
        }
        if ours != *theirs {
            return Err(Reject::Malformed(
                "voter acknowledged a digest the committee does not hold".into(),
            ));
        }
        let needed = self.config.vote_key_bits + self.config.id_key_bits;
        let key = slot.qkd.sifted().expect("confirmation implies sifted key");
        if key.len() < needed {
            return Err(Reject::Malformed(format!(
                "confirmed key has {} bits, {needed} needed",
                key.len()
            )));
        }
        let (vote_key, id_key) = split_key(
            key,
            session_id,
            self.config.vote_key_bits,
            self.config.id_key_bits,
        )
        .map_err(|e| Reject::Internal(e.to_string()))?;
        self.vault
            .store(session_id, vote_key, SealedKey::seal(id_key))
            .map_err(|e| Reject::Internal(e.to_string()))?;
        slot.confirmed = true;
        Ok(None)
    }

    fn on_retry(&self, session_id: &str) -> Result<Option<WireMessage>, Reject> {
        let slot = self
            .slot(session_id)
            .ok_or_else(|| Reject::UnknownSession(session_id.to_string()))?;
        let mut slot = slot.lock().expect("session slot poisoned");
        if slot.confirmed {
            return Err(Reject::Malformed("retry after key confirmation".into()));
        }
        slot.qkd.reset_attempt();
        slot.announced = None;
        slot.last_frame_b64 = None;
        slot.last_voter_bases = None;
        slot.confirmation = None;
        slot.expecting_frame = true;
        self.stats.retries.fetch_add(1, Ordering::Relaxed);
        Ok(None)
    }

    fn on_vote_submit(
        &self,
        session_id: &str,
        e_vote_b64: &str,
        e_id_b64: &str,
    ) -> Result<Option<WireMessage>, Reject> {
        let e_vote = BASE64_STANDARD
            .decode(e_vote_b64)
            .map_err(|e| Reject::Malformed(format!("e_vote base64: {e}")))?;
        let e_id = BASE64_STANDARD
            .decode(e_id_b64)
            .map_err(|e| Reject::Malformed(format!("e_id base64: {e}")))?;
        if e_vote.is_empty() || e_vote.len() > MAX_FIELD_BYTES {
            return Err(Reject::Malformed("e_vote length out of bounds".into()));
        }
        if e_id.is_empty() || e_id.len() > MAX_FIELD_BYTES {
            return Err(Reject::Malformed("e_id length out of bounds".into()));
        }
        let canonical_vote = BASE64_STANDARD.encode(&e_vote);
        let canonical_id = BASE64_STANDARD.encode(&e_id);

        // Hold the slot lock (when the session is live) across the
        // ledger check and append so replays serialize cleanly.
        let slot = self.slot(session_id);
        let mut slot_guard = slot
            .as_ref()
            .map(|s| s.lock().expect("session slot poisoned"));

        if let Some(existing) = self.lookup_entry(session_id) {
            if existing.e_vote_b64 == canonical_vote && existing.e_id_b64 == canonical_id {
                // Byte-identical replay (at-least-once delivery or a voter
                // re-query after a lost receipt): re-acknowledge.
                self.stats.receipts_sent.fetch_add(1, Ordering::Relaxed);
                return Ok(self.reply(
                    session_id,
                    MessageBody::Receipt {
                        receipt_hex: existing.receipt_hex,
                    },
                ));
            }
            return Err(Reject::DuplicateSubmission(session_id.to_string()));
        }

        let Some(slot_guard) = slot_guard.as_deref_mut() else {
            return Err(Reject::UnknownSession(session_id.to_string()));
        };
        if !slot_guard.confirmed {
            return Err(Reject::KeyNotConfirmed(session_id.to_string()));
        }
        let mut vote_key = self
            .vault
            .take_vote_key(session_id)
            .ok_or_else(|| Reject::Internal("vote key missing from vault".into()))?;
        let vote_bytes =
            xor_apply(&e_vote, &mut vote_key).map_err(|e| Reject::Internal(e.to_string()))?;
        let decrypted_vote = match String::from_utf8(vote_bytes.clone()) {
            Ok(candidate) if self.config.candidates.contains(&candidate) => {
                RecordedVote::Valid { candidate }
            }
            _ => {
                self.stats.invalid_votes.fetch_add(1, Ordering::Relaxed);
                RecordedVote::Invalid {
                    raw_b64: BASE64_STANDARD.encode(&vote_bytes),
                }
            }
        };
        let receipt_hex =
            hex::encode(receipt_hash(&e_vote, &e_id).map_err(|e| Reject::Internal(e.to_string()))?);
        let entry = LedgerEntry {
            session_id: session_id.to_string(),
            e_vote_b64: canonical_vote,
            e_id_b64: canonical_id,
            receipt_hex: receipt_hex.clone(),
            decrypted_vote,
            recorded_at: now_ms(),
            audit: None,
        };

        // Durability before acknowledgement.
        let append_started = Instant::now();
        {
            let mut ledger = self.ledger.lock().expect("ledger poisoned");
            ledger
                .append_vote(entry)
                .map_err(|e| Reject::Internal(e.to_string()))?;
        }
        self.stats.ledger_nanos.fetch_add(
            append_started.elapsed().as_nanos() as u64,
            Ordering::Relaxed,
        );
        self.stats.votes_recorded.fetch_add(1, Ordering::Relaxed);
        self.stats.receipts_sent.fetch_add(1, Ordering::Relaxed);

        // The QKD slot has served its purpose; replays are answered from
        // the ledger. Map holders never wait on a slot lock, so removing
        // under the slot guard cannot deadlock.
        self.sessions
            .lock()
            .expect("sessions poisoned")
            .remove(session_id);
        Ok(self.reply(session_id, MessageBody::Receipt { receipt_hex }))
    }

    fn lookup_entry(&self, session_id: &str) -> Option<LedgerEntry> {
        self.ledger
            .lock()
            .expect("ledger poisoned")
            .get(session_id)
            .cloned()
    }

    fn on_audit_request(&self, session_id: &str) -> Result<Option<WireMessage>, Reject> {
        if self.lookup_entry(session_id).is_none() {
            return Err(Reject::UnknownSession(session_id.to_string()));
        }
        log::info!("audit requested for session {session_id}");
        Ok(None)
    }

    fn on_audit_reveal(
        &self,
        session_id: &str,
        k_id_bits: &str,
    ) -> Result<Option<WireMessage>, Reject> {
        let bits: BitString = k_id_bits
            .parse()
            .map_err(|e| Reject::BadKey(format!("key bits: {e}")))?;
        let entry = self
            .lookup_entry(session_id)
            .ok_or_else(|| Reject::UnknownSession(session_id.to_string()))?;
        if bits.len() != self.config.id_key_bits {
            return Err(Reject::BadKey(format!(
                "expected {} key bits, got {}",
                self.config.id_key_bits,
                bits.len()
            )));
        }
        let e_id = BASE64_STANDARD
            .decode(&entry.e_id_b64)
            .map_err(|e| Reject::Internal(format!("stored e_id: {e}")))?;
        let voter_id = xor_with_bits(&e_id, &bits).map_err(|e| Reject::BadKey(e.to_string()))?;
        if voter_id.is_empty() || voter_id.len() > MAX_FIELD_BYTES {
            return Err(Reject::BadKey(
                "revealed identity fails length bounds".into(),
            ));
        }
        // The reveal is recorded verbatim; whether the key was genuine is a
        // human question, the ledger line is the review trail.
        let record = AuditRecord {
            revealed_voter_id_b64: BASE64_STANDARD.encode(&voter_id),
            revealed_voter_id_utf8: String::from_utf8(voter_id).ok(),
            revealed_at: now_ms(),
        };
        let mut ledger = self.ledger.lock().expect("ledger poisoned");
        ledger
            .append_audit(session_id, record)
            .map_err(|e| Reject::Internal(e.to_string()))?;
        self.stats.audits_recorded.fetch_add(1, Ordering::Relaxed);
        Ok(None)
    }
}
