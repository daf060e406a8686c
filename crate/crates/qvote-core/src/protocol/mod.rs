//! Voter and committee state machines for the dual-key voting protocol.
//!
//! A vote runs end to end as: QKD session (with key confirmation and
//! retries), sifted-key split into vote/identity halves, XOR encryption of
//! both ballot fields, submission, and receipt verification. The committee
//! decrypts only the vote half, stores the identity ciphertext sealed, and
//! answers with the SHA-256 receipt the voter recomputes locally.

use thiserror::Error;

use crate::crypto::Receipt;

pub mod committee;
pub mod messages;
pub mod voter;

pub use committee::{CommitteeConfig, CommitteeCore, Reject};
pub use messages::{MessageBody, Role, WireError, WireMessage};
pub use voter::{voter_cast, CastError, CastRecord, CastTimings, VoterConfig, VoterStage};

/// Maximum byte length for a candidate identifier or a voter ID.
pub const MAX_FIELD_BYTES: usize = 64;

/// A ballot: candidate identifier plus an opaque pre-issued credential.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ballot {
    vote: Vec<u8>,
    voter_id: Vec<u8>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BallotError {
    #[error("{field} must be 1..={MAX_FIELD_BYTES} bytes, got {len}")]
    FieldLength { field: &'static str, len: usize },
}

impl Ballot {
    pub fn new(
        vote: impl Into<Vec<u8>>,
        voter_id: impl Into<Vec<u8>>,
    ) -> Result<Self, BallotError> {
        let vote = vote.into();
        let voter_id = voter_id.into();
        if vote.is_empty() || vote.len() > MAX_FIELD_BYTES {
            return Err(BallotError::FieldLength {
                field: "vote",
                len: vote.len(),
            });
        }
        if voter_id.is_empty() || voter_id.len() > MAX_FIELD_BYTES {
            return Err(BallotError::FieldLength {
                field: "voter_id",
                len: voter_id.len(),
            });
        }
        Ok(Ballot { vote, voter_id })
    }

    pub fn vote(&self) -> &[u8] {
        &self.vote
    }

    pub fn voter_id(&self) -> &[u8] {
        &self.voter_id
    }
}

/// Constant-time digest comparison of two receipts.
pub fn verify_receipt(local: &Receipt, remote: &Receipt) -> bool {
    let mut diff = 0u8;
    for (a, b) in local.digest().iter().zip(remote.digest().iter()) {
        diff |= a ^ b;
    }
    diff == 0
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ballot_length_bounds() {
        assert!(Ballot::new(b"A".to_vec(), b"v1".to_vec()).is_ok());
        assert_eq!(
            Ballot::new(b"".to_vec(), b"v".to_vec()).unwrap_err(),
            BallotError::FieldLength {
                field: "vote",
                len: 0
            }
        );
        assert!(Ballot::new(vec![b'x'; 65], b"v".to_vec()).is_err());
        assert!(Ballot::new(b"A".to_vec(), vec![b'x'; 65]).is_err());
        assert!(Ballot::new(vec![b'x'; 64], vec![b'y'; 64]).is_ok());
    }

    #[test]
    fn receipt_verification() {
        let a = Receipt::new([7u8; 32], "s".into());
        let b = Receipt::new([7u8; 32], "s".into());
        assert!(verify_receipt(&a, &b));

        let mut digest = [7u8; 32];
        digest[31] ^= 0x01; // last nibble differs
        let c = Receipt::new(digest, "s".into());
        assert!(!verify_receipt(&a, &c));
    }

    #[test]
    fn receipt_verification_normalizes_hex_case() {
        let a = Receipt::new([0xCD; 32], "s".into());
        let upper = Receipt::from_hex(&a.to_hex().to_uppercase(), "s".into()).unwrap();
        assert!(verify_receipt(&a, &upper));
    }
}
