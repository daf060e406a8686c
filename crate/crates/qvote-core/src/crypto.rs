//! Ballot encryption and receipt primitives.
//!
//! Votes and voter IDs are encrypted with bitwise XOR against key material
//! sifted out of a QKD session. One session's sifted key is split into two
//! disjoint halves: the vote half travels to the tally path, the identity
//! half stays sealed until the voter volunteers it for an audit. Keys are
//! single-use; an encryption consumes its key object.
//!
//! Keys shorter than the message repeat cyclically. That makes the cipher a
//! true one-time pad only when the key covers the whole message; with the
//! small key sizes used here the scheme is a demonstration cipher, not a
//! security boundary.

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::bb84::SiftedKey;
use crate::bits::BitString;

/// Where a key came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum KeyOrigin {
    /// The full sifted key of a QKD session.
    QkdSession { session_id: String },
    /// One half of a split session key.
    Split {
        parent_session_id: String,
        half: KeyHalf,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KeyHalf {
    Vote,
    Id,
}

/// Single-use symmetric key.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SymmetricKey {
    bits: BitString,
    origin: KeyOrigin,
    used: bool,
}

impl SymmetricKey {
    pub fn new(bits: BitString, origin: KeyOrigin) -> Result<Self, CryptoError> {
        if bits.is_empty() {
            return Err(CryptoError::EmptyKey);
        }
        Ok(SymmetricKey {
            bits,
            origin,
            used: false,
        })
    }

    pub fn bits(&self) -> &BitString {
        &self.bits
    }

    pub fn origin(&self) -> &KeyOrigin {
        &self.origin
    }

    pub fn len_bits(&self) -> usize {
        self.bits.len()
    }

    pub fn is_used(&self) -> bool {
        self.used
    }

    /// Consumes the key material, bypassing further use. For handing the
    /// identity half to a vault, not for encrypting.
    pub fn into_bits(self) -> BitString {
        self.bits
    }
}

/// Ciphertext pair for one ballot.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncryptedBallot {
    pub e_vote: Vec<u8>,
    pub e_id: Vec<u8>,
    pub session_id: String,
}

/// SHA-256 receipt over the concatenated ciphertexts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Receipt {
    digest: [u8; 32],
    session_id: String,
}

impl Receipt {
    pub fn new(digest: [u8; 32], session_id: String) -> Self {
        Receipt { digest, session_id }
    }

    /// Parses a 64-char hex digest; case-insensitive, stored lowercase.
    pub fn from_hex(hex_digest: &str, session_id: String) -> Result<Self, CryptoError> {
        let bytes = hex::decode(hex_digest).map_err(|_| CryptoError::MalformedDigest)?;
        let digest: [u8; 32] = bytes.try_into().map_err(|_| CryptoError::MalformedDigest)?;
        Ok(Receipt { digest, session_id })
    }

    pub fn digest(&self) -> &[u8; 32] {
        &self.digest
    }

    pub fn session_id(&self) -> &str {
        &self.session_id
    }

    /// Lowercase hex, the wire and ledger representation.
    pub fn to_hex(&self) -> String {
        hex::encode(self.digest)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CryptoError {
    #[error("key must contain at least one bit")]
    EmptyKey,
    #[error("key already used; QKD keys are single-use")]
    KeyReused,
    #[error("{0} must be non-empty")]
    EmptyInput(&'static str),
    #[error("sifted key too short: {available} bits available, {needed} needed")]
    KeyTooShort { available: usize, needed: usize },
    #[error("{0}")]
    InvalidArgument(&'static str),
    #[error("digest is not 64 hex characters")]
    MalformedDigest,
}

/// XORs a message with a key, bit by bit, cycling the key as needed.
///
/// Bit `i` of the output is bit `i` of the message XOR `key[i mod |key|]`,
/// with bits addressed MSB-first within each byte. Consumes the key's
/// single use; decryption paths that hold raw bits use [`xor_with_bits`].
pub fn xor_apply(message: &[u8], key: &mut SymmetricKey) -> Result<Vec<u8>, CryptoError> {
    if key.used {
        return Err(CryptoError::KeyReused);
    }
    let out = xor_with_bits(message, &key.bits)?;
    key.used = true;
    Ok(out)
}

/// The raw XOR transform; self-inverse for a fixed key.
pub fn xor_with_bits(message: &[u8], key_bits: &BitString) -> Result<Vec<u8>, CryptoError> {
    if key_bits.is_empty() {
        return Err(CryptoError::EmptyKey);
    }
    let key_len = key_bits.len();
    let mut out = Vec::with_capacity(message.len());
    let mut bit_index = 0usize;
    for &byte in message {
        let mut b = byte;
        for offset in 0..8 {
            if key_bits.bit(bit_index % key_len) {
                b ^= 1 << (7 - offset);
            }
            bit_index += 1;
        }
        out.push(b);
    }
    Ok(out)
}

/// Splits a sifted key into disjoint vote and identity halves.
///
/// The vote key takes the first `vote_key_bits` bits, the identity key the
/// next `id_key_bits`; no bit is shared. Both lengths must be at least 1.
pub fn split_key(
    sifted: &SiftedKey,
    session_id: &str,
    vote_key_bits: usize,
    id_key_bits: usize,
) -> Result<(SymmetricKey, SymmetricKey), CryptoError> {
    if vote_key_bits == 0 || id_key_bits == 0 {
        return Err(CryptoError::InvalidArgument(
            "both key lengths must be at least 1",
        ));
    }
    let needed = vote_key_bits + id_key_bits;
    if sifted.len() < needed {
        return Err(CryptoError::KeyTooShort {
            available: sifted.len(),
            needed,
        });
    }
    let vote_bits: BitString = sifted.bits.iter().take(vote_key_bits).collect();
    let id_bits: BitString = sifted
        .bits
        .iter()
        .skip(vote_key_bits)
        .take(id_key_bits)
        .collect();
    let vote_key = SymmetricKey::new(
        vote_bits,
        KeyOrigin::Split {
            parent_session_id: session_id.to_string(),
            half: KeyHalf::Vote,
        },
    )?;
    let id_key = SymmetricKey::new(
        id_bits,
        KeyOrigin::Split {
            parent_session_id: session_id.to_string(),
            half: KeyHalf::Id,
        },
    )?;
    Ok((vote_key, id_key))
}

/// SHA-256 over the exact concatenation `e_vote || e_id` — no separators,
/// no length prefix.
pub fn receipt_hash(e_vote: &[u8], e_id: &[u8]) -> Result<[u8; 32], CryptoError> {
    if e_vote.is_empty() {
        return Err(CryptoError::EmptyInput("e_vote"));
    }
    if e_id.is_empty() {
        return Err(CryptoError::EmptyInput("e_id"));
    }
    let mut hasher = Sha256::new();
    hasher.update(e_vote);
    hasher.update(e_id);
    Ok(hasher.finalize().into())
}

/// SHA-256 of the key bits packed MSB-first into zero-padded bytes. Used
/// for key confirmation over the classical channel.
pub fn key_digest(key_bits: &BitString) -> Result<[u8; 32], CryptoError> {
    if key_bits.is_empty() {
        return Err(CryptoError::EmptyKey);
    }
    Ok(Sha256::digest(key_bits.to_bytes_msb()).into())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn key(bits: &str) -> SymmetricKey {
        SymmetricKey::new(
            bits.parse().unwrap(),
            KeyOrigin::QkdSession {
                session_id: "s".into(),
            },
        )
        .unwrap()
    }

    #[test]
    fn xor_bitwise_example() {
        // message bits 1010 0000, key 0110: first nibble 1100, then the key
        // cycles over the zero padding giving 0110.
        let mut k = key("0110");
        let out = xor_apply(&[0b1010_0000], &mut k).unwrap();
        assert_eq!(out, vec![0b1100_0110]);
    }

    #[test]
    fn xor_all_zero_key_is_identity() {
        let msg = b"ballot-for-candidate-a".to_vec();
        let mut k = key("00000000");
        assert_eq!(xor_apply(&msg, &mut k).unwrap(), msg);
    }

    #[test]
    fn xor_two_bit_key_cycles() {
        // key 01 cycles to 0101...; 1010 ^ 0101 = 1111 in every nibble.
        let mut k = key("01");
        let out = xor_apply(&[0b1010_1010], &mut k).unwrap();
        assert_eq!(out, vec![0b1111_1111]);
    }

    #[test]
    fn xor_is_self_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..200 {
            let len = rng.random_range(1..=64usize);
            let msg: Vec<u8> = (0..len).map(|_| rng.random()).collect();
            let key_len = rng.random_range(1..=32usize);
            let bits: BitString = (0..key_len).map(|_| rng.random::<bool>()).collect();
            let ct = xor_with_bits(&msg, &bits).unwrap();
            assert_eq!(xor_with_bits(&ct, &bits).unwrap(), msg);
        }
    }

    #[test]
    fn xor_with_covering_key_is_injective() {
        // With |key| >= |message| in bits the map is a bijection on the
        // message space; distinct single-byte messages never collide.
        let bits: BitString = "10110010".parse().unwrap();
        let mut seen = std::collections::HashSet::new();
        for byte in 0..=255u8 {
            let ct = xor_with_bits(&[byte], &bits).unwrap();
            assert!(seen.insert(ct), "collision at message {byte:#x}");
        }
    }

    #[test]
    fn xor_single_use_enforced() {
        let mut k = key("1011");
        xor_apply(b"x", &mut k).unwrap();
        assert!(k.is_used());
        assert_eq!(xor_apply(b"y", &mut k).unwrap_err(), CryptoError::KeyReused);
    }

    #[test]
    fn empty_key_rejected() {
        assert_eq!(
            SymmetricKey::new(
                BitString::new(),
                KeyOrigin::QkdSession {
                    session_id: "s".into()
                }
            )
            .unwrap_err(),
            CryptoError::EmptyKey
        );
        assert_eq!(
            xor_with_bits(b"m", &BitString::new()).unwrap_err(),
            CryptoError::EmptyKey
        );
    }

    #[test]
    fn split_key_takes_disjoint_halves() {
        let sifted = SiftedKey {
            bits: "110100".parse().unwrap(),
            positions: vec![0, 1, 2, 3, 4, 5],
        };
        let (vote, id) = split_key(&sifted, "s1", 3, 3).unwrap();
        assert_eq!(vote.bits().to_string(), "110");
        assert_eq!(id.bits().to_string(), "100");
        assert_eq!(
            *vote.origin(),
            KeyOrigin::Split {
                parent_session_id: "s1".into(),
                half: KeyHalf::Vote
            }
        );
        assert_eq!(
            *id.origin(),
            KeyOrigin::Split {
                parent_session_id: "s1".into(),
                half: KeyHalf::Id
            }
        );
    }

    #[test]
    fn split_key_insufficient_material() {
        let sifted = SiftedKey {
            bits: "1101".parse().unwrap(),
            positions: vec![0, 1, 2, 3],
        };
        assert_eq!(
            split_key(&sifted, "s", 4, 1).unwrap_err(),
            CryptoError::KeyTooShort {
                available: 4,
                needed: 5
            }
        );
    }

    #[test]
    fn split_key_zero_length_rejected() {
        let sifted = SiftedKey {
            bits: "1101".parse().unwrap(),
            positions: vec![0, 1, 2, 3],
        };
        assert!(matches!(
            split_key(&sifted, "s", 3, 0).unwrap_err(),
            CryptoError::InvalidArgument(_)
        ));
        assert!(matches!(
            split_key(&sifted, "s", 0, 3).unwrap_err(),
            CryptoError::InvalidArgument(_)
        ));
    }

    #[test]
    fn sha256_fips_empty_string_vector() {
        // FIPS 180-4 test vector for the primitive itself.
        let digest = Sha256::digest(b"");
        assert_eq!(
            hex::encode(digest),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
    }

    #[test]
    fn receipt_hash_is_plain_concatenation() {
        let digest = receipt_hash(b"ab", b"cd").unwrap();
        assert_eq!(
            hex::encode(digest),
            "88d4266fd4e6338d13b845fcf289579d209c897823b9217da3e161936f031589"
        );
        assert_eq!(receipt_hash(b"ab", b"cd").unwrap(), digest);
    }

    #[test]
    fn receipt_hash_rejects_empty_inputs() {
        assert_eq!(
            receipt_hash(b"", b"x").unwrap_err(),
            CryptoError::EmptyInput("e_vote")
        );
        assert_eq!(
            receipt_hash(b"x", b"").unwrap_err(),
            CryptoError::EmptyInput("e_id")
        );
    }

    #[test]
    fn receipt_hash_avalanche_on_single_bit_flips() {
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        for _ in 0..1000 {
            let a: Vec<u8> = (0..rng.random_range(1..=32usize))
                .map(|_| rng.random())
                .collect();
            let b: Vec<u8> = (0..rng.random_range(1..=32usize))
                .map(|_| rng.random())
                .collect();
            let base = receipt_hash(&a, &b).unwrap();
            let mut a2 = a.clone();
            let byte = rng.random_range(0..a2.len());
            let bit = rng.random_range(0..8u8);
            a2[byte] ^= 1 << bit;
            assert_ne!(receipt_hash(&a2, &b).unwrap(), base);
        }
    }

    #[test]
    fn key_digest_packs_msb_first() {
        let bits: BitString = "1011".parse().unwrap();
        let digest = key_digest(&bits).unwrap();
        assert_eq!(digest, Sha256::digest([0xB0u8]).as_slice());
    }

    #[test]
    fn key_digest_avalanche() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        for _ in 0..1000 {
            let len = rng.random_range(1..=64usize);
            let bits: BitString = (0..len).map(|_| rng.random::<bool>()).collect();
            let mut flipped: Vec<bool> = bits.iter().collect();
            let at = rng.random_range(0..len);
            flipped[at] = !flipped[at];
            let flipped: BitString = flipped.into_iter().collect();
            assert_ne!(key_digest(&bits).unwrap(), key_digest(&flipped).unwrap());
        }
    }

    #[test]
    fn receipt_hex_roundtrip_and_case_normalization() {
        let r = Receipt::new([0xAB; 32], "s".into());
        let upper = r.to_hex().to_uppercase();
        let parsed = Receipt::from_hex(&upper, "s".into()).unwrap();
        assert_eq!(parsed, r);
        assert_eq!(parsed.to_hex(), r.to_hex());
        assert!(Receipt::from_hex("zz", "s".into()).is_err());
        assert!(Receipt::from_hex("abcd", "s".into()).is_err());
    }
}
