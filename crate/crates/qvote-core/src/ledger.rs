//! Append-only JSONL ledger with crash recovery.
//!
//! Two line types share the file: `vote` lines carry one [`LedgerEntry`]
//! each, `audit` lines record a later identity reveal for an existing
//! session. Each line is written with a single `write` call and (by
//! default) fsynced before the caller acknowledges anything, so a crash
//! leaves at most one torn final line. Recovery quarantines a torn tail
//! into a `.quarantine` sidecar and truncates it from the main file;
//! complete-but-unparseable lines elsewhere are preserved on disk and
//! surfaced as corrupt.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{Read, Seek, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Committee-side persistent record of one processed ballot.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub session_id: String,
    pub e_vote_b64: String,
    pub e_id_b64: String,
    /// Lowercase hex SHA-256 over the stored ciphertext concatenation.
    pub receipt_hex: String,
    pub decrypted_vote: RecordedVote,
    /// Milliseconds since the Unix epoch; informational only.
    pub recorded_at: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub audit: Option<AuditRecord>,
}

/// The committee's reading of the decrypted vote.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum RecordedVote {
    /// Decrypted to a registered candidate.
    Valid { candidate: String },
    /// Recorded but not a registered candidate; the receipt still attests
    /// receipt of the ciphertexts.
    Invalid { raw_b64: String },
}

/// Outcome of a voluntary identity reveal.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub revealed_voter_id_b64: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub revealed_voter_id_utf8: Option<String>,
    pub revealed_at: u64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum LedgerLine {
    Vote {
        #[serde(flatten)]
        entry: LedgerEntry,
    },
    Audit {
        session_id: String,
        #[serde(flatten)]
        record: AuditRecord,
    },
}

#[derive(Debug, Error)]
pub enum LedgerError {
    #[error("ledger I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("ledger serialization: {0}")]
    Serde(#[from] serde_json::Error),
    #[error("session {0} already has a ledger entry")]
    DuplicateSession(String),
    #[error("session {0} has no ledger entry")]
    UnknownSession(String),
}

/// What [`Ledger::open`] found and repaired.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RecoveryReport {
    pub entries: usize,
    pub audits: usize,
    /// A torn final line was moved to the `.quarantine` sidecar.
    pub torn_tail_quarantined: bool,
    /// Complete but unparseable lines (left in place, skipped in memory).
    pub corrupt_lines: usize,
}

/// Read-only view of a ledger file, torn/corrupt lines tolerated.
#[derive(Debug, Default)]
pub struct LedgerSnapshot {
    pub entries: Vec<LedgerEntry>,
    pub corrupt_lines: usize,
    pub torn_tail: bool,
    /// Audit lines whose session has no vote entry.
    pub orphan_audits: usize,
}

/// Writable append-only ledger with an in-memory index.
#[derive(Debug)]
pub struct Ledger {
    path: PathBuf,
    file: File,
    entries: Vec<LedgerEntry>,
    index: HashMap<String, usize>,
    sync: bool,
}

impl Ledger {
    /// Opens (creating if needed) with fsync-per-append durability.
    pub fn open(path: &Path) -> Result<(Self, RecoveryReport), LedgerError> {
        Self::open_with_sync(path, true)
    }

    /// `sync = false` skips the per-append fsync; crash durability then
    /// depends on the OS page cache.
    pub fn open_with_sync(path: &Path, sync: bool) -> Result<(Self, RecoveryReport), LedgerError> {
        let mut report = RecoveryReport::default();
        let mut entries: Vec<LedgerEntry> = Vec::new();
        let mut index = HashMap::new();

        let mut file = OpenOptions::new()
            .read(true)
            .append(true)
            .create(true)
            .open(path)?;
        let mut raw = Vec::new();
        file.read_to_end(&mut raw)?;

        let mut scan = scan_lines(&raw);
        for parsed in scan.lines.drain(..) {
            match parsed {
                Ok(LedgerLine::Vote { entry }) => {
                    if index.contains_key(&entry.session_id) {
                        report.corrupt_lines += 1; // duplicate on disk: keep first
                        continue;
                    }
                    index.insert(entry.session_id.clone(), entries.len());
                    entries.push(entry);
                    report.entries += 1;
                }
                Ok(LedgerLine::Audit { session_id, record }) => {
                    if let Some(&at) = index.get(&session_id) {
                        entries[at].audit = Some(record);
                        report.audits += 1;
                    } else {
                        report.corrupt_lines += 1;
                    }
                }
                Err(()) => report.corrupt_lines += 1,
            }
        }

        match scan.tail {
            Tail::Clean => {}
            Tail::CompleteMissingNewline => {
                // The final record parsed but the newline is missing
                // (crash between write and nothing else): terminate it so
                // the next append starts a fresh line.
                file.write_all(b"\n")?;
                file.sync_data()?;
            }
            Tail::Torn { from } => {
                let torn = raw[from..].to_vec();
                let mut sidecar = OpenOptions::new()
                    .append(true)
                    .create(true)
                    .open(quarantine_path(path))?;
                sidecar.write_all(&torn)?;
                sidecar.write_all(b"\n")?;
                sidecar.sync_data()?;
                file.set_len(from as u64)?;
                file.sync_data()?;
                file.seek(std::io::SeekFrom::End(0))?;
                report.torn_tail_quarantined = true;
            }
        }

        Ok((
            Ledger {
                path: path.to_path_buf(),
                file,
                entries,
                index,
                sync,
            },
            report,
        ))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, session_id: &str) -> Option<&LedgerEntry> {
        self.index.get(session_id).map(|&at| &self.entries[at])
    }

    pub fn entries(&self) -> &[LedgerEntry] {
        &self.entries
    }

    /// Appends a vote entry durably: one write call, then fsync (when
    /// enabled) before returning.
    pub fn append_vote(&mut self, entry: LedgerEntry) -> Result<(), LedgerError> {
        if self.index.contains_key(&entry.session_id) {
            return Err(LedgerError::DuplicateSession(entry.session_id));
        }
        let line = LedgerLine::Vote { entry };
        self.write_line(&line)?;
        let LedgerLine::Vote { entry } = line else {
            unreachable!()
        };
        self.index
            .insert(entry.session_id.clone(), self.entries.len());
        self.entries.push(entry);
        Ok(())
    }

    /// Appends an audit record for an existing session.
    pub fn append_audit(
        &mut self,
        session_id: &str,
        record: AuditRecord,
    ) -> Result<(), LedgerError> {
        let Some(&at) = self.index.get(session_id) else {
            return Err(LedgerError::UnknownSession(session_id.to_string()));
        };
        self.write_line(&LedgerLine::Audit {
            session_id: session_id.to_string(),
            record: record.clone(),
        })?;
        self.entries[at].audit = Some(record);
        Ok(())
    }

    fn write_line(&mut self, line: &LedgerLine) -> Result<(), LedgerError> {
        let mut bytes = serde_json::to_vec(line)?;
        bytes.push(b'\n');
        self.file.write_all(&bytes)?;
        if self.sync {
            self.file.sync_data()?;
        }
        Ok(())
    }
}

fn quarantine_path(path: &Path) -> PathBuf {
    let mut os = path.as_os_str().to_os_string();
    os.push(".quarantine");
    PathBuf::from(os)
}

enum Tail {
    Clean,
    CompleteMissingNewline,
    Torn { from: usize },
}

struct Scan {
    lines: Vec<Result<LedgerLine, ()>>,
    tail: Tail,
}

fn scan_lines(raw: &[u8]) -> Scan {
    let mut lines = Vec::new();
    let mut tail = Tail::Clean;
    let mut start = 0usize;
    while start < raw.len() {
        match raw[start..].iter().position(|&b| b == b'\n') {
            Some(rel) => {
                let line = &raw[start..start + rel];
                if !line.is_empty() {
                    lines.push(serde_json::from_slice::<LedgerLine>(line).map_err(|_| ()));
                }
                start += rel + 1;
            }
            None => {
                // Final segment without a newline.
                let line = &raw[start..];
                match serde_json::from_slice::<LedgerLine>(line) {
                    Ok(parsed) => {
                        lines.push(Ok(parsed));
                        tail = Tail::CompleteMissingNewline;
                    }
                    Err(_) => tail = Tail::Torn { from: start },
                }
                break;
            }
        }
    }
    Scan { lines, tail }
}

/// Reads a ledger without touching it; corrupt and torn lines are counted,
/// audit lines folded into their entries.
pub fn read_snapshot(path: &Path) -> Result<LedgerSnapshot, LedgerError> {
    let raw = match std::fs::read(path) {
        Ok(raw) => raw,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(LedgerSnapshot::default()),
        Err(e) => return Err(e.into()),
    };
    let mut snapshot = LedgerSnapshot::default();
    let mut index: HashMap<String, usize> = HashMap::new();
    let scan = scan_lines(&raw);
    if matches!(scan.tail, Tail::Torn { .. }) {
        snapshot.torn_tail = true;
    }
    for parsed in scan.lines {
        match parsed {
            Ok(LedgerLine::Vote { entry }) => {
                if index.contains_key(&entry.session_id) {
                    snapshot.corrupt_lines += 1;
                    continue;
                }
                index.insert(entry.session_id.clone(), snapshot.entries.len());
                snapshot.entries.push(entry);
            }
            Ok(LedgerLine::Audit { session_id, record }) => match index.get(&session_id) {
                Some(&at) => snapshot.entries[at].audit = Some(record),
                None => snapshot.orphan_audits += 1,
            },
            Err(()) => snapshot.corrupt_lines += 1,
        }
    }
    Ok(snapshot)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(sid: &str, candidate: &str) -> LedgerEntry {
        LedgerEntry {
            session_id: sid.to_string(),
            e_vote_b64: "AQI=".into(),
            e_id_b64: "Aw==".into(),
            receipt_hex: "ab".repeat(32),
            decrypted_vote: RecordedVote::Valid {
                candidate: candidate.into(),
            },
            recorded_at: 1,
            audit: None,
        }
    }

    #[test]
    fn append_then_reload() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ledger.jsonl");
        {
            let (mut ledger, report) = Ledger::open(&path).unwrap();
            assert_eq!(report, RecoveryReport::default());
            ledger.append_vote(entry("s1", "A")).unwrap();
            ledger.append_vote(entry("s2", "B")).unwrap();
            ledger
                .append_audit(
                    "s1",
                    AuditRecord {
                        revealed_voter_id_b64: "djE=".into(),
                        revealed_voter_id_utf8: Some("v1".into()),
                        revealed_at: 2,
                    },
                )
                .unwrap();
        }
        let (ledger, report) = Ledger::open(&path).unwrap();
        assert_eq!(report.entries, 2);
        assert_eq!(report.audits, 1);
        assert_eq!(ledger.len(), 2);
        assert!(ledger.get("s1").unwrap().audit.is_some());
        assert!(ledger.get("s2").unwrap().audit.is_none());
    }

    #[test]
    fn duplicate_session_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let (mut ledger, _) = Ledger::open(&dir.path().join("l.jsonl")).unwrap();
        ledger.append_vote(entry("s1", "A")).unwrap();
        assert!(matches!(
            ledger.append_vote(entry("s1", "A")).unwrap_err(),
            LedgerError::DuplicateSession(_)
        ));
        assert_eq!(ledger.len(), 1);
    }

    #[test]
    fn audit_for_unknown_session_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let (mut ledger, _) = Ledger::open(&dir.path().join("l.jsonl")).unwrap();
        let err = ledger
            .append_audit(
                "nope",
                AuditRecord {
                    revealed_voter_id_b64: "dg==".into(),
                    revealed_voter_id_utf8: None,
                    revealed_at: 0,
                },
            )
            .unwrap_err();
        assert!(matches!(err, LedgerError::UnknownSession(_)));
    }

    #[test]
    fn torn_tail_is_quarantined_and_truncated() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ledger.jsonl");
        {
            let (mut ledger, _) = Ledger::open(&path).unwrap();
            ledger.append_vote(entry("s1", "A")).unwrap();
        }
        // Simulate a crash mid-append.
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(b"{\"type\":\"vote\",\"session_id\":\"s2\",\"e_vo")
            .unwrap();
        drop(f);

        let (ledger, report) = Ledger::open(&path).unwrap();
        assert!(report.torn_tail_quarantined);
        assert_eq!(report.entries, 1);
        assert_eq!(ledger.len(), 1);
        assert!(quarantine_path(&path).exists());

        // The file is clean again: a fresh append lands on its own line.
        let (mut ledger, report) = Ledger::open(&path).unwrap();
        assert!(!report.torn_tail_quarantined);
        ledger.append_vote(entry("s3", "B")).unwrap();
        let snapshot = read_snapshot(&path).unwrap();
        assert_eq!(snapshot.entries.len(), 2);
        assert_eq!(snapshot.corrupt_lines, 0);
        assert!(!snapshot.torn_tail);
    }

    #[test]
    fn complete_final_line_missing_newline_is_repaired() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ledger.jsonl");
        let line = serde_json::to_string(&LedgerLine::Vote {
            entry: entry("s1", "A"),
        })
        .unwrap();
        std::fs::write(&path, line.as_bytes()).unwrap(); // no trailing newline
        let (mut ledger, report) = Ledger::open(&path).unwrap();
        assert_eq!(report.entries, 1);
        assert!(!report.torn_tail_quarantined);
        ledger.append_vote(entry("s2", "B")).unwrap();
        drop(ledger);
        let snapshot = read_snapshot(&path).unwrap();
        assert_eq!(snapshot.entries.len(), 2);
    }

    #[test]
    fn corrupt_mid_file_line_is_skipped_but_kept() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ledger.jsonl");
        let good = serde_json::to_string(&LedgerLine::Vote {
            entry: entry("s1", "A"),
        })
        .unwrap();
        let good2 = serde_json::to_string(&LedgerLine::Vote {
            entry: entry("s2", "B"),
        })
        .unwrap();
        std::fs::write(&path, format!("{good}\nnot json at all\n{good2}\n")).unwrap();
        let snapshot = read_snapshot(&path).unwrap();
        assert_eq!(snapshot.entries.len(), 2);
        assert_eq!(snapshot.corrupt_lines, 1);
        let (_, report) = Ledger::open(&path).unwrap();
        assert_eq!(report.corrupt_lines, 1);
        assert_eq!(report.entries, 2);
        // Still three-plus lines on disk: nothing was rewritten.
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.contains("not json at all"));
    }

    #[test]
    fn missing_file_snapshot_is_empty() {
        let dir = tempfile::tempdir().unwrap();
        let snapshot = read_snapshot(&dir.path().join("absent.jsonl")).unwrap();
        assert!(snapshot.entries.is_empty());
    }
}
