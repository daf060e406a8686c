//! Committee key vault with a structural vote/identity separation.
//!
//! BB84 hands the committee the whole sifted key, so the privacy boundary
//! between the vote half and the identity half is enforced here: the
//! identity half is wrapped in a [`SealedKey`] that exposes its length and
//! nothing else. There is no unseal operation — audits decrypt with the
//! key bits the voter volunteers, never with the vault copy. The tally
//! path can only ever obtain the vote key, exactly once.

use std::collections::HashMap;
use std::sync::Mutex;

use thiserror::Error;

use crate::crypto::SymmetricKey;

/// Identity-half key material with no read access.
#[derive(Debug)]
pub struct SealedKey {
    bits_len: usize,
    // Held so the material demonstrably exists in committee memory, as the
    // protocol implies; nothing can observe it.
    _material: crate::bits::BitString,
}

impl SealedKey {
    pub fn seal(key: SymmetricKey) -> Self {
        let bits = key.into_bits();
        SealedKey {
            bits_len: bits.len(),
            _material: bits,
        }
    }

    /// Length metadata only; used to validate audit submissions.
    pub fn len_bits(&self) -> usize {
        self.bits_len
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum VaultError {
    #[error("vault already holds keys for session {0}")]
    AlreadyStored(String),
}

struct Slot {
    vote_key: Option<SymmetricKey>,
    id_key: SealedKey,
}

/// Per-session key storage.
#[derive(Default)]
pub struct KeyVault {
    slots: Mutex<HashMap<String, Slot>>,
}

impl KeyVault {
    pub fn new() -> Self {
        KeyVault::default()
    }

    pub fn store(
        &self,
        session_id: &str,
        vote_key: SymmetricKey,
        id_key: SealedKey,
    ) -> Result<(), VaultError> {
        let mut slots = self.slots.lock().expect("vault poisoned");
        if slots.contains_key(session_id) {
            return Err(VaultError::AlreadyStored(session_id.to_string()));
        }
        slots.insert(
            session_id.to_string(),
            Slot {
                vote_key: Some(vote_key),
                id_key,
            },
        );
        Ok(())
    }

    /// Releases the vote key to the tally path. Single take: the second
    /// call returns `None`.
    pub fn take_vote_key(&self, session_id: &str) -> Option<SymmetricKey> {
        let mut slots = self.slots.lock().expect("vault poisoned");
        slots
            .get_mut(session_id)
            .and_then(|slot| slot.vote_key.take())
    }

    /// Length of the sealed identity key, if the session is known.
    pub fn sealed_id_key_len(&self, session_id: &str) -> Option<usize> {
        let slots = self.slots.lock().expect("vault poisoned");
        slots.get(session_id).map(|slot| slot.id_key.len_bits())
    }

    pub fn contains(&self, session_id: &str) -> bool {
        self.slots
            .lock()
            .expect("vault poisoned")
            .contains_key(session_id)
    }

    pub fn len(&self) -> usize {
        self.slots.lock().expect("vault poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
