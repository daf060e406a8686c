//! Voter-side state file: one JSON line per cast, so receipts can be
//! re-verified and audits opened after the process exits.

use std::fs::OpenOptions;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

/// One cast as the voter remembers it. `k_id_bits` is the identity key
/// half, kept so the voter can voluntarily open an audit later.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VoterRecord {
    pub session_id: String,
    pub election_id: String,
    pub candidate: String,
    pub voter_id: String,
    pub e_vote_b64: String,
    pub e_id_b64: String,
    pub local_receipt_hex: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub remote_receipt_hex: Option<String>,
    pub verified: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_id_bits: Option<String>,
    pub attempts: u32,
    pub cast_at: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

pub fn append(path: &Path, record: &VoterRecord) -> Result<()> {
    let mut file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .with_context(|| format!("open voter state file {}", path.display()))?;
    let mut line = serde_json::to_vec(record)?;
    line.push(b'\n');
    file.write_all(&line)?;
    file.sync_data()?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Vec<VoterRecord>> {
    let file = match std::fs::File::open(path) {
        Ok(file) => file,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => {
            return Err(e).with_context(|| format!("read voter state file {}", path.display()))
        }
    };
    let mut records = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(&line) {
            Ok(record) => records.push(record),
            Err(e) => eprintln!("warning: skipping unreadable voter state line: {e}"),
        }
    }
    Ok(records)
}

/// Latest record for a session.
pub fn find(path: &Path, session_id: &str) -> Result<Option<VoterRecord>> {
    Ok(load(path)?
        .into_iter()
        .rev()
        .find(|r| r.session_id == session_id))
}
