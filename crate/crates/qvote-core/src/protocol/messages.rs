//! Wire message vocabulary and the envelope mapping.
//!
//! Payload conventions: binary fields base64, digests lowercase hex, bases
//! as arrays of `"R"`/`"D"`, key bits as `0`/`1` strings. The `confirm`
//! topic is shared by both directions, so confirmation and retry payloads
//! carry the sender role.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bb84::Basis;
use crate::transport::{now_ms, topics, Envelope, ENVELOPE_VERSION};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Voter,
    Committee,
}

/// Message body, tagged by the envelope's `msg_type`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "msg_type")]
pub enum MessageBody {
    #[serde(rename = "QKD_QUANTUM")]
    QkdQuantum { qasm_b64: String },
    #[serde(rename = "QKD_BASES_COMMITTEE")]
    QkdBasesCommittee { bases: Vec<Basis> },
    #[serde(rename = "QKD_BASES_VOTER")]
    QkdBasesVoter { bases: Vec<Basis> },
    #[serde(rename = "KEY_CONFIRM")]
    KeyConfirm {
        from: Role,
        sifted_len: usize,
        /// Empty string when nothing survived sifting.
        key_digest_hex: String,
    },
    #[serde(rename = "KEY_RETRY")]
    KeyRetry { from: Role, attempt: u32 },
    #[serde(rename = "VOTE_SUBMIT")]
    VoteSubmit {
        e_vote_b64: String,
        e_id_b64: String,
    },
    #[serde(rename = "RECEIPT")]
    Receipt { receipt_hex: String },
    #[serde(rename = "AUDIT_REQUEST")]
    AuditRequest,
    #[serde(rename = "AUDIT_REVEAL")]
    AuditReveal { k_id_bits: String },
}

impl MessageBody {
    pub fn msg_type(&self) -> &'static str {
        match self {
            MessageBody::QkdQuantum { .. } => "QKD_QUANTUM",
            MessageBody::QkdBasesCommittee { .. } => "QKD_BASES_COMMITTEE",
            MessageBody::QkdBasesVoter { .. } => "QKD_BASES_VOTER",
            MessageBody::KeyConfirm { .. } => "KEY_CONFIRM",
            MessageBody::KeyRetry { .. } => "KEY_RETRY",
            MessageBody::VoteSubmit { .. } => "VOTE_SUBMIT",
            MessageBody::Receipt { .. } => "RECEIPT",
            MessageBody::AuditRequest => "AUDIT_REQUEST",
            MessageBody::AuditReveal { .. } => "AUDIT_REVEAL",
        }
    }
}

/// One protocol message, addressed by election and session.
#[derive(Debug, Clone, PartialEq)]
pub struct WireMessage {
    pub election_id: String,
    pub session_id: String,
    pub body: MessageBody,
}

#[derive(Debug, Error)]
pub enum WireError {
    #[error("unsupported envelope version {0}")]
    UnsupportedVersion(u32),
    #[error("unknown message type `{0}`")]
    UnknownType(String),
    #[error("bad payload for {msg_type}: {reason}")]
    BadPayload { msg_type: String, reason: String },
}

impl WireMessage {
    pub fn new(
        election_id: impl Into<String>,
        session_id: impl Into<String>,
        body: MessageBody,
    ) -> Self {
        WireMessage {
            election_id: election_id.into(),
            session_id: session_id.into(),
            body,
        }
    }

    pub fn msg_type(&self) -> &'static str {
        self.body.msg_type()
    }

    /// Canonical topic this message is published on.
    pub fn topic(&self) -> String {
        let e = &self.election_id;
        let s = &self.session_id;
        match &self.body {
            MessageBody::QkdQuantum { .. } => topics::quantum(e, s),
            MessageBody::QkdBasesCommittee { .. } => topics::bases_committee(e, s),
            MessageBody::QkdBasesVoter { .. } => topics::bases_voter(e, s),
            MessageBody::KeyConfirm { .. } | MessageBody::KeyRetry { .. } => topics::confirm(e, s),
            MessageBody::VoteSubmit { .. } => topics::vote(e, s),
            MessageBody::Receipt { .. } => topics::receipt(e, s),
            MessageBody::AuditRequest | MessageBody::AuditReveal { .. } => topics::audit(e, s),
        }
    }

    pub fn to_envelope(&self) -> Result<Envelope, serde_json::Error> {
        let mut payload = serde_json::to_value(&self.body)?;
        if let Some(object) = payload.as_object_mut() {
            object.remove("msg_type");
        }
        Ok(Envelope {
            version: ENVELOPE_VERSION,
            election_id: self.election_id.clone(),
            session_id: self.session_id.clone(),
            msg_type: self.msg_type().to_string(),
            sent_at: now_ms(),
            payload,
        })
    }

    pub fn from_envelope(envelope: &Envelope) -> Result<Self, WireError> {
        if envelope.version != ENVELOPE_VERSION {
            return Err(WireError::UnsupportedVersion(envelope.version));
        }
        let mut payload = envelope.payload.clone();
        let object = payload
            .as_object_mut()
            .ok_or_else(|| WireError::BadPayload {
                msg_type: envelope.msg_type.clone(),
                reason: "payload is not a JSON object".to_string(),
            })?;
        object.insert(
            "msg_type".to_string(),
            serde_json::Value::String(envelope.msg_type.clone()),
        );
        let body: MessageBody = serde_json::from_value(payload).map_err(|e| {
            if KNOWN_TYPES.contains(&envelope.msg_type.as_str()) {
                WireError::BadPayload {
                    msg_type: envelope.msg_type.clone(),
                    reason: e.to_string(),
                }
            } else {
                WireError::UnknownType(envelope.msg_type.clone())
            }
        })?;
        Ok(WireMessage {
            election_id: envelope.election_id.clone(),
            session_id: envelope.session_id.clone(),
            body,
        })
    }
}

const KNOWN_TYPES: [&str; 9] = [
    "QKD_QUANTUM",
    "QKD_BASES_COMMITTEE",
    "QKD_BASES_VOTER",
    "KEY_CONFIRM",
    "KEY_RETRY",
    "VOTE_SUBMIT",
    "RECEIPT",
    "AUDIT_REQUEST",
    "AUDIT_REVEAL",
];
