//! Voter-side flow: QKD over the channel, ballot encryption, submission,
//! receipt verification.

use std::sync::mpsc;
use std::sync::Arc;
use std::time::{Duration, Instant};

use base64::prelude::*;
use rand::Rng;
use thiserror::Error;

use crate::bb84::{
    run_session, Basis, KeyConfirmation, LengthPolicy, PeerError, QkdConfig, QkdPeer, SessionError,
};
use crate::bits::BitString;
use crate::crypto::{receipt_hash, split_key, xor_apply, CryptoError, EncryptedBallot, Receipt};
use crate::transport::{topics, Channel, SubscriptionId, TransportError};

use super::messages::{MessageBody, Role, WireMessage};
use super::{verify_receipt, Ballot};

/// Voter-side configuration; the defaults mirror the committee's.
#[derive(Debug, Clone, PartialEq)]
pub struct VoterConfig {
    pub election_id: String,
    /// Bits for the vote key half.
    pub vote_key_bits: usize,
    /// Bits for the identity key half.
    pub id_key_bits: usize,
    /// Measurement repetitions the committee applies per qubit.
    pub shots: u64,
    /// Total QKD attempts before giving up.
    pub attempt_cap: u32,
    /// Patience for the RECEIPT reply.
    pub receipt_timeout: Duration,
    /// Patience for each QKD step reply.
    pub step_timeout: Duration,
}

impl Default for VoterConfig {
    fn default() -> Self {
        VoterConfig {
            election_id: "election".to_string(),
            vote_key_bits: 4,
            id_key_bits: 4,
            shots: 10_000,
            attempt_cap: 3,
            receipt_timeout: Duration::from_secs(10),
            step_timeout: Duration::from_secs(10),
        }
    }
}

impl VoterConfig {
    /// Initial frame length: four qubits per needed key bit, since sifting
    /// keeps about half and headroom halves the retry rate. Doubled on a
    /// short-sift retry.
    pub fn initial_raw_length(&self) -> usize {
        4 * (self.vote_key_bits + self.id_key_bits)
    }

    pub fn qkd_config(&self) -> QkdConfig {
        QkdConfig {
            raw_length: self.initial_raw_length(),
            shots: self.shots,
            rng_seed: None,
            min_sifted_bits: self.vote_key_bits + self.id_key_bits,
            attempt_cap: self.attempt_cap,
        }
    }

    pub fn validate(&self) -> Result<(), CastError> {
        if !topics::valid_level(&self.election_id) {
            return Err(CastError::InvalidConfig(
                "election_id is not a valid topic level",
            ));
        }
        if self.vote_key_bits == 0 || self.id_key_bits == 0 {
            return Err(CastError::InvalidConfig("key sizes must be at least 1 bit"));
        }
        if self.shots == 0 || self.attempt_cap == 0 {
            return Err(CastError::InvalidConfig(
                "shots and attempt_cap must be at least 1",
            ));
        }
        Ok(())
    }
}

/// Voter state machine stages, in protocol order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum VoterStage {
    Init,
    QuantumSent,
    BasesExchanged,
    KeyConfirmed,
    VoteSent,
    Verified,
    Failed,
}

/// Enforces the stage order: forward-only, `Failed` only from a
/// non-`Verified` stage, and a QKD retry rewinds to `Init`.
#[derive(Debug)]
pub(crate) struct StageTracker {
    stage: VoterStage,
}

impl StageTracker {
    pub(crate) fn new() -> Self {
        StageTracker {
            stage: VoterStage::Init,
        }
    }

    #[cfg(test)]
    pub(crate) fn stage(&self) -> VoterStage {
        self.stage
    }

    pub(crate) fn advance(&mut self, next: VoterStage) {
        let ok = match next {
            VoterStage::Failed => self.stage != VoterStage::Verified,
            _ => next > self.stage,
        };
        assert!(ok, "illegal voter transition {:?} -> {next:?}", self.stage);
        self.stage = next;
    }

    pub(crate) fn rewind_for_retry(&mut self) {
        assert!(
            self.stage < VoterStage::KeyConfirmed,
            "retry after key confirmation is illegal"
        );
        self.stage = VoterStage::Init;
    }
}

/// Wall-clock cost of each pipeline stage of one cast.
#[derive(Debug, Clone, Copy, Default)]
pub struct CastTimings {
    pub qkd: Duration,
    pub encrypt: Duration,
    /// VOTE_SUBMIT publish through RECEIPT receipt, committee work included.
    pub submit_roundtrip: Duration,
}

/// A verified cast: the receipt matched.
#[derive(Debug, Clone)]
pub struct CastRecord {
    pub session_id: String,
    pub election_id: String,
    pub receipt: Receipt,
    pub encrypted: EncryptedBallot,
    /// Identity key half, retained so the voter can audit later.
    pub id_key_bits: BitString,
    pub attempts: u32,
    pub sifted_bits: usize,
    pub timings: CastTimings,
}

#[derive(Debug, Error)]
pub enum CastError {
    #[error("QKD failed after {attempts} attempts")]
    Qkd { attempts: u32 },
    #[error("timed out waiting for {waiting_for}")]
    Timeout { waiting_for: &'static str },
    #[error("receipt mismatch for session {session_id}: ours {local}, committee {remote}")]
    ReceiptMismatch {
        session_id: String,
        local: String,
        remote: String,
    },
    #[error("invalid configuration: {0}")]
    InvalidConfig(&'static str),
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error("peer violation: {0}")]
    Peer(String),
    #[error(transparent)]
    Crypto(#[from] CryptoError),
}

impl CastError {
    /// Terminal stage this error leaves the voter in.
    pub fn stage(&self) -> VoterStage {
        VoterStage::Failed
    }
}

impl From<SessionError> for CastError {
    fn from(e: SessionError) -> Self {
        match e {
            SessionError::AttemptsExhausted { attempts } => CastError::Qkd { attempts },
            SessionError::Peer(PeerError::Timeout(what)) => {
                CastError::Timeout { waiting_for: what }
            }
            SessionError::Peer(p) => CastError::Peer(p.to_string()),
            SessionError::Protocol(p) => CastError::Peer(p.to_string()),
        }
    }
}

/// Subscription guard: unsubscribes on drop, success or failure alike.
struct SubGuard {
    channel: Arc<dyn Channel>,
    ids: Vec<SubscriptionId>,
}

impl Drop for SubGuard {
    fn drop(&mut self) {
        for id in self.ids.drain(..) {
            let _ = self.channel.unsubscribe(id);
        }
    }
}

/// Committee peer reached over the transport channel.
struct TransportPeer<'a> {
    channel: &'a Arc<dyn Channel>,
    election_id: &'a str,
    session_id: &'a str,
    inbox: &'a mpsc::Receiver<WireMessage>,
    step_timeout: Duration,
    tracker: &'a mut StageTracker,
}

impl TransportPeer<'_> {
    fn publish(&self, body: MessageBody) -> Result<(), PeerError> {
        let msg = WireMessage::new(self.election_id, self.session_id, body);
        let envelope = msg
            .to_envelope()
            .map_err(|e| PeerError::Channel(format!("serialize: {e}")))?;
        self.channel
            .publish(&msg.topic(), &envelope)
            .map_err(|e| PeerError::Channel(e.to_string()))
    }

    /// Receives the next message satisfying `pick`, skipping stragglers
    /// (duplicate deliveries, self-published confirm-topic messages).
    fn recv<T>(
        &self,
        waiting_for: &'static str,
        mut pick: impl FnMut(&MessageBody) -> Option<T>,
    ) -> Result<T, PeerError> {
        let deadline = Instant::now() + self.step_timeout;
        loop {
            let remaining = deadline
                .checked_duration_since(Instant::now())
                .ok_or(PeerError::Timeout(waiting_for))?;
            match self.inbox.recv_timeout(remaining) {
                Ok(msg) => {
                    if msg.session_id != self.session_id {
                        continue;
                    }
                    if let Some(value) = pick(&msg.body) {
                        return Ok(value);
                    }
                }
                Err(mpsc::RecvTimeoutError::Timeout) => {
                    return Err(PeerError::Timeout(waiting_for))
                }
                Err(mpsc::RecvTimeoutError::Disconnected) => {
                    return Err(PeerError::Channel("inbox closed".to_string()))
                }
            }
        }
    }
}

impl QkdPeer for TransportPeer<'_> {
    fn exchange_frame(&mut self, qasm_text: &str) -> Result<Vec<Basis>, PeerError> {
        self.publish(MessageBody::QkdQuantum {
            qasm_b64: BASE64_STANDARD.encode(qasm_text),
        })?;
        self.tracker.advance(VoterStage::QuantumSent);
        self.recv("committee bases", |body| match body {
            MessageBody::QkdBasesCommittee { bases } => Some(bases.clone()),
            _ => None,
        })
    }

    fn exchange_bases(&mut self, bases: &[Basis]) -> Result<KeyConfirmation, PeerError> {
        self.publish(MessageBody::QkdBasesVoter {
            bases: bases.to_vec(),
        })?;
        let confirmation = self.recv("key confirmation", |body| match body {
            MessageBody::KeyConfirm {
                from: Role::Committee,
                sifted_len,
                key_digest_hex,
            } => Some(KeyConfirmation {
                sifted_len: *sifted_len,
                key_digest_hex: key_digest_hex.clone(),
            }),
            _ => None,
        })?;
        self.tracker.advance(VoterStage::BasesExchanged);
        Ok(confirmation)
    }

    fn confirm_key(&mut self, confirmation: &KeyConfirmation) -> Result<(), PeerError> {
        self.publish(MessageBody::KeyConfirm {
            from: Role::Voter,
            sifted_len: confirmation.sifted_len,
            key_digest_hex: confirmation.key_digest_hex.clone(),
        })?;
        self.tracker.advance(VoterStage::KeyConfirmed);
        Ok(())
    }

    fn request_retry(&mut self, next_attempt: u32) -> Result<(), PeerError> {
        self.publish(MessageBody::KeyRetry {
            from: Role::Voter,
            attempt: next_attempt,
        })?;
        self.tracker.rewind_for_retry();
        Ok(())
    }
}

/// Casts one ballot end to end and verifies the committee's receipt.
///
/// Runs the QKD session (retrying with a doubled frame on short sifts),
/// splits the key, encrypts both ballot fields, submits, and compares the
/// returned receipt against the locally computed one. The RECEIPT wait is
/// bounded by `receipt_timeout`; a dropped receipt fails the cast rather
/// than re-submitting.
pub fn voter_cast(
    ballot: &Ballot,
    config: &VoterConfig,
    channel: &Arc<dyn Channel>,
    rng: &mut impl Rng,
) -> Result<CastRecord, CastError> {
    config.validate()?;
    let session_id = uuid::Builder::from_random_bytes(rng.random::<[u8; 16]>())
        .into_uuid()
        .simple()
        .to_string();
    let election_id = config.election_id.clone();

    let (tx, inbox) = mpsc::channel::<WireMessage>();
    let handler: crate::transport::Handler = {
        let tx = tx.clone();
        Arc::new(move |_topic, envelope| {
            if let Ok(msg) = WireMessage::from_envelope(envelope) {
                // Skip our own publishes on the shared confirm topic.
                match &msg.body {
                    MessageBody::KeyConfirm {
                        from: Role::Voter, ..
                    }
                    | MessageBody::KeyRetry {
                        from: Role::Voter, ..
                    } => {}
                    _ => {
                        let _ = tx.send(msg);
                    }
                }
            }
        })
    };
    let mut guard = SubGuard {
        channel: channel.clone(),
        ids: Vec::new(),
    };
    for topic in [
        topics::bases_committee(&election_id, &session_id),
        topics::confirm(&election_id, &session_id),
        topics::receipt(&election_id, &session_id),
    ] {
        guard.ids.push(channel.subscribe(&topic, handler.clone())?);
    }

    let mut tracker = StageTracker::new();
    let qkd_started = Instant::now();
    let session = {
        let mut peer = TransportPeer {
            channel,
            election_id: &election_id,
            session_id: &session_id,
            inbox: &inbox,
            step_timeout: config.step_timeout,
            tracker: &mut tracker,
        };
        run_session(
            &config.qkd_config(),
            LengthPolicy::DoubleOnShort,
            &mut peer,
            rng,
        )?
    };
    let qkd = qkd_started.elapsed();

    let encrypt_started = Instant::now();
    let (mut vote_key, mut id_key) = split_key(
        &session.key,
        &session_id,
        config.vote_key_bits,
        config.id_key_bits,
    )?;
    let id_key_bits = id_key.bits().clone();
    let e_vote = xor_apply(ballot.vote(), &mut vote_key)?;
    let e_id = xor_apply(ballot.voter_id(), &mut id_key)?;
    let local = Receipt::new(receipt_hash(&e_vote, &e_id)?, session_id.clone());
    let encrypt = encrypt_started.elapsed();

    let submit_started = Instant::now();
    let submit = WireMessage::new(
        election_id.clone(),
        session_id.clone(),
        MessageBody::VoteSubmit {
            e_vote_b64: BASE64_STANDARD.encode(&e_vote),
            e_id_b64: BASE64_STANDARD.encode(&e_id),
        },
    );
    channel.publish(
        &submit.topic(),
        &submit.to_envelope().map_err(TransportError::Serialize)?,
    )?;
    tracker.advance(VoterStage::VoteSent);

    let deadline = Instant::now() + config.receipt_timeout;
    let remote_hex = loop {
        let remaining =
            deadline
                .checked_duration_since(Instant::now())
                .ok_or(CastError::Timeout {
                    waiting_for: "receipt",
                })?;
        match inbox.recv_timeout(remaining) {
            Ok(msg) if msg.session_id == session_id => {
                if let MessageBody::Receipt { receipt_hex } = msg.body {
                    break receipt_hex;
                }
            }
            Ok(_) => {}
            Err(mpsc::RecvTimeoutError::Timeout) => {
                return Err(CastError::Timeout {
                    waiting_for: "receipt",
                })
            }
            Err(mpsc::RecvTimeoutError::Disconnected) => {
                return Err(CastError::Peer("inbox closed".to_string()))
            }
        }
    };
    let submit_roundtrip = submit_started.elapsed();

    let remote = Receipt::from_hex(&remote_hex, session_id.clone())?;
    if !verify_receipt(&local, &remote) {
        tracker.advance(VoterStage::Failed);
        return Err(CastError::ReceiptMismatch {
            session_id,
            local: local.to_hex(),
            remote: remote.to_hex(),
        });
    }
    tracker.advance(VoterStage::Verified);

    Ok(CastRecord {
        session_id: session_id.clone(),
        election_id,
        receipt: local,
        encrypted: EncryptedBallot {
            e_vote,
            e_id,
            session_id,
        },
        id_key_bits,
        attempts: session.attempts,
        sifted_bits: session.key.len(),
        timings: CastTimings {
            qkd,
            encrypt,
            submit_roundtrip,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_tracker_enforces_order() {
        let mut t = StageTracker::new();
        t.advance(VoterStage::QuantumSent);
        t.advance(VoterStage::BasesExchanged);
        t.rewind_for_retry();
        assert_eq!(t.stage(), VoterStage::Init);
        t.advance(VoterStage::QuantumSent);
        t.advance(VoterStage::BasesExchanged);
        t.advance(VoterStage::KeyConfirmed);
        t.advance(VoterStage::VoteSent);
        t.advance(VoterStage::Verified);
    }

    #[test]
    #[should_panic(expected = "illegal voter transition")]
    fn stage_tracker_rejects_backward_jump() {
        let mut t = StageTracker::new();
        t.advance(VoterStage::VoteSent);
        t.advance(VoterStage::QuantumSent);
    }

    #[test]
    #[should_panic(expected = "illegal voter transition")]
    fn stage_tracker_rejects_failed_after_verified() {
        let mut t = StageTracker::new();
        t.advance(VoterStage::Verified);
        t.advance(VoterStage::Failed);
    }

    #[test]
    fn sizing_rule() {
        let config = VoterConfig::default();
        assert_eq!(config.initial_raw_length(), 32);
        assert_eq!(config.qkd_config().min_sifted_bits, 8);
    }
}
