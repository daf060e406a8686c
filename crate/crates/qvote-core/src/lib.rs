//! Quantum-keyed voting pipeline.
//!
//! A voter and the election committee agree on key material through a
//! simulated BB84 exchange over a noisy quantum channel, carried as QASM
//! documents over a publish-subscribe transport. The sifted key splits into
//! two disjoint halves: the vote half encrypts the ballot choice (bitwise
//! XOR) and travels to the tally path; the identity half encrypts the voter
//! credential and stays sealed unless the voter volunteers it for an audit.
//! The committee answers every accepted ballot with a SHA-256 receipt over
//! the ciphertext pair, which the voter recomputes locally to confirm the
//! vote was recorded bit-exactly.
//!
//! Modules:
//! - [`bb84`]: the key exchange simulation (preparation, noisy channel,
//!   shots-based measurement, sifting, key confirmation, retries).
//! - [`qasm`]: the QASM-3 subset carrying preparation frames.
//! - [`crypto`]: XOR ballots, key splitting, receipt and key digests.
//! - [`transport`]: loopback and MQTT bindings of the message channel.
//! - [`protocol`]: voter and committee state machines.
//! - [`service`]: the committee service, ledger tally, audit, self-check.
//! - [`ledger`]: append-only JSONL storage with crash recovery.
//! - [`vault`]: structural separation of vote and identity key halves.
//! - [`bench`]: statistics sweeps and the throughput pipeline.

pub mod bb84;
pub mod bench;
pub mod bits;
pub mod crypto;
pub mod ledger;
pub mod protocol;
pub mod qasm;
pub mod service;
pub mod transport;
pub mod vault;

pub use bits::BitString;
