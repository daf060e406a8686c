//! Topic layout and filter matching.
//!
//! One election fans out into per-session topics:
//!
//! ```text
//! qvote/{election}/qkd/{session}/quantum          voter -> committee, QASM frame
//! qvote/{election}/qkd/{session}/bases/committee  committee -> voter
//! qvote/{election}/qkd/{session}/bases/voter      voter -> committee
//! qvote/{election}/qkd/{session}/confirm          both directions (payload carries the sender)
//! qvote/{election}/vote/{session}                 voter -> committee
//! qvote/{election}/receipt/{session}              committee -> voter
//! qvote/{election}/audit/{session}                voter -> committee
//! ```

pub fn quantum(election_id: &str, session_id: &str) -> String {
    format!("qvote/{election_id}/qkd/{session_id}/quantum")
}

pub fn bases_committee(election_id: &str, session_id: &str) -> String {
    format!("qvote/{election_id}/qkd/{session_id}/bases/committee")
}

pub fn bases_voter(election_id: &str, session_id: &str) -> String {
    format!("qvote/{election_id}/qkd/{session_id}/bases/voter")
}

pub fn confirm(election_id: &str, session_id: &str) -> String {
    format!("qvote/{election_id}/qkd/{session_id}/confirm")
}

pub fn vote(election_id: &str, session_id: &str) -> String {
    format!("qvote/{election_id}/vote/{session_id}")
}

pub fn receipt(election_id: &str, session_id: &str) -> String {
    format!("qvote/{election_id}/receipt/{session_id}")
}

pub fn audit(election_id: &str, session_id: &str) -> String {
    format!("qvote/{election_id}/audit/{session_id}")
}

/// The filters a committee service subscribes to for one election.
pub fn committee_filters(election_id: &str) -> Vec<String> {
    vec![
        format!("qvote/{election_id}/qkd/+/quantum"),
        format!("qvote/{election_id}/qkd/+/bases/voter"),
        format!("qvote/{election_id}/qkd/+/confirm"),
        format!("qvote/{election_id}/vote/+"),
        format!("qvote/{election_id}/audit/+"),
    ]
}

/// True when the string can be embedded as a single topic level.
pub fn valid_level(s: &str) -> bool {
    !s.is_empty() && !s.contains(['/', '+', '#'])
}

/// MQTT-style filter matching: `+` matches exactly one level, a trailing
/// `#` matches the rest.
pub fn matches(filter: &str, topic: &str) -> bool {
    let mut f = filter.split('/');
    let mut t = topic.split('/');
    loop {
        match (f.next(), t.next()) {
            (Some("#"), _) => return true,
            (Some("+"), Some(_)) => {}
            (Some(seg), Some(level)) if seg == level => {}
            (None, None) => return true,
            _ => return false,
        }
    }
}
