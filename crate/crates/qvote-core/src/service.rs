//! The Election Committee service: subscribes to an election's topics,
//! dispatches to the committee handler, and owns the durable ledger.
//! Tally, audit and the ledger self-check live here too.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use base64::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::receipt_hash;
use crate::ledger::{read_snapshot, Ledger, LedgerError, RecordedVote, RecoveryReport};
use crate::protocol::{CommitteeConfig, CommitteeCore, WireMessage};
use crate::transport::{topics, Channel, SubscriptionId, TransportError};

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("startup failure: {0}")]
    Startup(String),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error(transparent)]
    Transport(#[from] TransportError),
}

/// A running committee service bound to a channel.
pub struct Service {
    core: Arc<CommitteeCore>,
    channel: Arc<dyn Channel>,
    subscriptions: Vec<SubscriptionId>,
    ledger_path: PathBuf,
    recovery: RecoveryReport,
}

/// Starts the committee: recovers the ledger, then subscribes to every
/// election topic. Entries are appended durably before any RECEIPT is
/// emitted; malformed inbound messages are logged and dropped.
pub fn serve(
    config: CommitteeConfig,
    channel: Arc<dyn Channel>,
    ledger_path: &Path,
) -> Result<Service, ServiceError> {
    serve_with_sync(config, channel, ledger_path, true)
}

/// [`serve`] with control over fsync-per-append (benchmarks keep it on;
/// it is part of the measured pipeline).
pub fn serve_with_sync(
    config: CommitteeConfig,
    channel: Arc<dyn Channel>,
    ledger_path: &Path,
    sync: bool,
) -> Result<Service, ServiceError> {
    if !topics::valid_level(&config.election_id) {
        return Err(ServiceError::Startup(
            "election_id is not a valid topic level".into(),
        ));
    }
    let (ledger, recovery) = Ledger::open_with_sync(ledger_path, sync)
        .map_err(|e| ServiceError::Startup(format!("ledger at {}: {e}", ledger_path.display())))?;
    if recovery.torn_tail_quarantined {
        log::warn!(
            "ledger {} had a torn final line; quarantined to sidecar",
            ledger_path.display()
        );
    }
    let core = Arc::new(CommitteeCore::new(config, ledger));

    let mut subscriptions = Vec::new();
    for filter in topics::committee_filters(&core.config().election_id) {
        let dispatch_core = core.clone();
        let dispatch_channel = channel.clone();
        let handler: crate::transport::Handler = Arc::new(move |topic, envelope| {
            let msg = match WireMessage::from_envelope(envelope) {
                Ok(msg) => msg,
                Err(e) => {
                    log::warn!("dropping malformed message on {topic}: {e}");
                    return;
                }
            };
            match dispatch_core.handle(&msg) {
                Ok(Some(reply)) => {
                    let envelope = match reply.to_envelope() {
                        Ok(env) => env,
                        Err(e) => {
                            log::error!("failed to serialize reply: {e}");
                            return;
                        }
                    };
                    if let Err(e) = dispatch_channel.publish(&reply.topic(), &envelope) {
                        log::error!("failed to publish {} reply: {e}", reply.msg_type());
                    }
                }
                Ok(None) => {}
                Err(reject) => {
                    log::warn!(
                        "rejected {} for session {}: {reject}",
                        msg.msg_type(),
                        msg.session_id
                    );
                }
            }
        });
        subscriptions.push(channel.subscribe(&filter, handler)?);
    }

    Ok(Service {
        core,
        channel,
        subscriptions,
        ledger_path: ledger_path.to_path_buf(),
        recovery,
    })
}

impl Service {
    pub fn core(&self) -> &Arc<CommitteeCore> {
        &self.core
    }

    pub fn ledger_path(&self) -> &Path {
        &self.ledger_path
    }

    pub fn recovery(&self) -> &RecoveryReport {
        &self.recovery
    }

    /// Tally over the live in-memory ledger.
    pub fn tally(&self) -> TallyResult {
        self.core
            .with_ledger(|ledger| tally_entries(ledger.entries(), 0))
    }

    /// Unsubscribes from all topics; the ledger file stays behind.
    pub fn shutdown(mut self) -> Result<(), ServiceError> {
        for id in self.subscriptions.drain(..) {
            self.channel.unsubscribe(id)?;
        }
        Ok(())
    }
}

/// Per-candidate counts over a ledger.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TallyResult {
    pub counts: BTreeMap<String, u64>,
    /// Flagged-invalid entries plus unreadable ledger lines.
    pub invalid: u64,
    /// Ledger entries seen, unreadable lines included.
    pub total_sessions: u64,
    /// Entries whose stored receipt recomputes from the stored ciphertexts.
    pub verified: u64,
}

impl TallyResult {
    pub fn count(&self, candidate: &str) -> u64 {
        self.counts.get(candidate).copied().unwrap_or(0)
    }
}

fn tally_entries(entries: &[crate::ledger::LedgerEntry], corrupt_lines: u64) -> TallyResult {
    let mut counts: BTreeMap<String, u64> = BTreeMap::new();
    let mut invalid = corrupt_lines;
    let mut verified = 0u64;
    for entry in entries {
        match &entry.decrypted_vote {
            RecordedVote::Valid { candidate } => {
                *counts.entry(candidate.clone()).or_insert(0) += 1;
            }
            RecordedVote::Invalid { .. } => invalid += 1,
        }
        if recomputed_receipt(entry).as_deref() == Some(entry.receipt_hex.as_str()) {
            verified += 1;
        }
    }
    TallyResult {
        counts,
        invalid,
        total_sessions: entries.len() as u64 + corrupt_lines,
        verified,
    }
}

fn recomputed_receipt(entry: &crate::ledger::LedgerEntry) -> Option<String> {
    let e_vote = BASE64_STANDARD.decode(&entry.e_vote_b64).ok()?;
    let e_id = BASE64_STANDARD.decode(&entry.e_id_b64).ok()?;
    receipt_hash(&e_vote, &e_id).ok().map(hex::encode)
}

/// Tallies a ledger file; corrupt lines are counted as invalid with a
/// warning, voter identities untouched.
pub fn tally_path(path: &Path) -> Result<TallyResult, LedgerError> {
    let snapshot = read_snapshot(path)?;
    if snapshot.corrupt_lines > 0 {
        log::warn!(
            "{}: {} unreadable ledger line(s) counted invalid",
            path.display(),
            snapshot.corrupt_lines
        );
    }
    Ok(tally_entries(
        &snapshot.entries,
        snapshot.corrupt_lines as u64,
    ))
}

#[derive(Debug, Error)]
pub enum AuditError {
    #[error("session {0} has no ledger entry")]
    NotFound(String),
    #[error("bad audit key: {0}")]
    BadKey(String),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
}

/// Decrypts a sealed identity with the voter-supplied key bits and records
/// the reveal. Returns the revealed identity bytes.
///
/// The committee's own sealed copy is never consulted; a wrong key of the
/// right length yields garbage that still gets recorded, flagged for human
/// review by its audit line.
pub fn audit_open(
    ledger: &mut Ledger,
    session_id: &str,
    k_id_bits: &crate::bits::BitString,
    expected_key_bits: usize,
) -> Result<Vec<u8>, AuditError> {
    let entry = ledger
        .get(session_id)
        .ok_or_else(|| AuditError::NotFound(session_id.to_string()))?
        .clone();
    if k_id_bits.len() != expected_key_bits {
        return Err(AuditError::BadKey(format!(
            "expected {expected_key_bits} key bits, got {}",
            k_id_bits.len()
        )));
    }
    let e_id = BASE64_STANDARD
        .decode(&entry.e_id_b64)
        .map_err(|e| AuditError::BadKey(format!("stored e_id: {e}")))?;
    let voter_id = crate::crypto::xor_with_bits(&e_id, k_id_bits)
        .map_err(|e| AuditError::BadKey(e.to_string()))?;
    if voter_id.is_empty() || voter_id.len() > crate::protocol::MAX_FIELD_BYTES {
        return Err(AuditError::BadKey(
            "revealed identity fails length bounds".into(),
        ));
    }
    ledger.append_audit(
        session_id,
        crate::ledger::AuditRecord {
            revealed_voter_id_b64: BASE64_STANDARD.encode(&voter_id),
            revealed_voter_id_utf8: String::from_utf8(voter_id.clone()).ok(),
            revealed_at: crate::transport::now_ms(),
        },
    )?;
    Ok(voter_id)
}

/// Result of the receipt-reproducibility self-check.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckReport {
    pub entries: u64,
    pub receipt_mismatches: Vec<String>,
    pub corrupt_lines: u64,
    pub orphan_audits: u64,
    /// A torn final line (crash evidence); recovered on the next `serve`.
    pub torn_tail: bool,
}

impl CheckReport {
    /// Healthy means every receipt reproduces and no line was unreadable.
    /// A torn tail alone still passes: it is detected and will be
    /// quarantined on the next startup.
    pub fn passed(&self) -> bool {
        self.receipt_mismatches.is_empty() && self.corrupt_lines == 0 && self.orphan_audits == 0
    }
}

/// Recomputes SHA-256 over every entry's stored ciphertexts and compares
/// with the recorded receipt.
pub fn ledger_check(path: &Path) -> Result<CheckReport, LedgerError> {
    let snapshot = read_snapshot(path)?;
    let mut mismatches = Vec::new();
    for entry in &snapshot.entries {
        if recomputed_receipt(entry).as_deref() != Some(entry.receipt_hex.as_str()) {
            mismatches.push(entry.session_id.clone());
        }
    }
    Ok(CheckReport {
        entries: snapshot.entries.len() as u64,
        receipt_mismatches: mismatches,
        corrupt_lines: snapshot.corrupt_lines as u64,
        orphan_audits: snapshot.orphan_audits as u64,
        torn_tail: snapshot.torn_tail,
    })
}
