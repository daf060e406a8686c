//! BB84 key exchange over a simulated noisy quantum channel.
//!
//! The voter draws random bits and bases, prepares one qubit per bit, and
//! ships the frame to the committee. The committee measures each qubit in a
//! random basis (majority over a configurable number of shots), both sides
//! announce bases, and only matching-basis positions survive sifting. A
//! digest of the sifted key is exchanged so that a corrupted key triggers a
//! full-session retry instead of silently corrupting the ballot.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::bits::BitString;
use crate::crypto::key_digest;
use crate::qasm;

/// Preparation/measurement basis. Serialized as `"R"` / `"D"` on the wire.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Basis {
    /// Computational basis (|0>, |1>).
    Rectilinear,
    /// Hadamard basis (|+>, |->).
    Diagonal,
}

impl Basis {
    pub fn symbol(self) -> &'static str {
        match self {
            Basis::Rectilinear => "R",
            Basis::Diagonal => "D",
        }
    }

    pub fn from_symbol(s: &str) -> Option<Basis> {
        match s {
            "R" => Some(Basis::Rectilinear),
            "D" => Some(Basis::Diagonal),
            _ => None,
        }
    }

    fn random(rng: &mut impl Rng) -> Basis {
        if rng.random::<bool>() {
            Basis::Rectilinear
        } else {
            Basis::Diagonal
        }
    }
}

impl Serialize for Basis {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.symbol())
    }
}

impl<'de> Deserialize<'de> for Basis {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        Basis::from_symbol(&s)
            .ok_or_else(|| D::Error::custom(format!("basis must be \"R\" or \"D\", got {s:?}")))
    }
}

/// One qubit preparation: the classical bit and the encoding basis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QubitPrep {
    pub bit: bool,
    pub basis: Basis,
}

/// The voter's quantum transmission: an ordered, non-empty qubit sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PreparedFrame {
    preps: Vec<QubitPrep>,
}

impl PreparedFrame {
    pub fn from_preps(preps: Vec<QubitPrep>) -> Result<Self, Bb84Error> {
        if preps.is_empty() {
            return Err(Bb84Error::EmptyFrame);
        }
        Ok(PreparedFrame { preps })
    }

    pub fn len(&self) -> usize {
        self.preps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.preps.is_empty()
    }

    pub fn preps(&self) -> &[QubitPrep] {
        &self.preps
    }

    pub fn iter(&self) -> impl Iterator<Item = &QubitPrep> {
        self.preps.iter()
    }
}

/// Transit noise model: independent per-qubit flip probability, plus an
/// optional intercept-resend eavesdropper applied before the noise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    flip_probability: f64,
    eavesdropper: bool,
}

impl NoiseModel {
    pub fn new(flip_probability: f64, eavesdropper: bool) -> Result<Self, Bb84Error> {
        if !(0.0..=1.0).contains(&flip_probability) {
            return Err(Bb84Error::InvalidProbability(flip_probability));
        }
        Ok(NoiseModel {
            flip_probability,
            eavesdropper,
        })
    }

    pub fn noiseless() -> Self {
        NoiseModel {
            flip_probability: 0.0,
            eavesdropper: false,
        }
    }

    pub fn flip_probability(&self) -> f64 {
        self.flip_probability
    }

    pub fn eavesdropper(&self) -> bool {
        self.eavesdropper
    }
}

/// Noise distribution a session draws its flip probability from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseSpec {
    /// No transit noise.
    Off,
    /// Every session uses the same flip probability.
    Fixed { p: f64 },
    /// Each session draws p uniformly from [0, max].
    Uniform { max: f64 },
}

impl NoiseSpec {
    /// Draws one per-session flip probability.
    pub fn draw(&self, rng: &mut impl Rng) -> f64 {
        match *self {
            NoiseSpec::Off => 0.0,
            NoiseSpec::Fixed { p } => p,
            NoiseSpec::Uniform { max } => rng.random::<f64>() * max,
        }
    }
}

/// Per-session QKD parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QkdConfig {
    /// Qubits per transmitted frame.
    pub raw_length: usize,
    /// Measurement repetitions per qubit; the reported outcome is the
    /// majority, with an exact tie broken by one extra trial.
    pub shots: u64,
    /// Seed for deterministic sessions; `None` means caller-provided entropy.
    pub rng_seed: Option<u64>,
    /// Sifted keys shorter than this trigger a session retry.
    pub min_sifted_bits: usize,
    /// Total attempts (initial + retries) before the session fails.
    pub attempt_cap: u32,
}

impl Default for QkdConfig {
    fn default() -> Self {
        QkdConfig {
            raw_length: 32,
            shots: 10_000,
            rng_seed: None,
            min_sifted_bits: 8,
            attempt_cap: 3,
        }
    }
}

impl QkdConfig {
    pub fn validate(&self) -> Result<(), Bb84Error> {
        if self.raw_length == 0 {
            return Err(Bb84Error::InvalidConfig("raw_length must be at least 1"));
        }
        if self.shots == 0 {
            return Err(Bb84Error::InvalidConfig("shots must be at least 1"));
        }
        if self.min_sifted_bits > self.raw_length {
            return Err(Bb84Error::InvalidConfig(
                "min_sifted_bits cannot exceed raw_length",
            ));
        }
        if self.attempt_cap == 0 {
            return Err(Bb84Error::InvalidConfig("attempt_cap must be at least 1"));
        }
        Ok(())
    }
}

/// Sifted key: retained bits plus their positions in the raw frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SiftedKey {
    pub bits: BitString,
    pub positions: Vec<usize>,
}

impl SiftedKey {
    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }
}

/// Complete record of one QKD session as seen by an in-process simulation
/// that runs both endpoints.
#[derive(Debug, Clone)]
pub struct SessionTranscript {
    pub voter_bits: BitString,
    pub voter_bases: Vec<Basis>,
    pub committee_bases: Vec<Basis>,
    pub committee_measurements: BitString,
    pub voter_key: SiftedKey,
    pub committee_key: SiftedKey,
    pub noise_draw: f64,
    pub attempts: u32,
}

#[derive(Debug, Error, PartialEq)]
pub enum Bb84Error {
    #[error("length must be at least 1")]
    ZeroLength,
    #[error("frame must contain at least one qubit")]
    EmptyFrame,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("flip probability {0} outside [0, 1]")]
    InvalidProbability(f64),
    #[error("invalid config: {0}")]
    InvalidConfig(&'static str),
}

/// Failure of a peer exchange during a QKD session.
#[derive(Debug, Error)]
pub enum PeerError {
    #[error("timed out waiting for {0}")]
    Timeout(&'static str),
    #[error("peer sent an invalid reply: {0}")]
    InvalidReply(String),
    #[error("channel failure: {0}")]
    Channel(String),
}

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("session failed after {attempts} attempts")]
    AttemptsExhausted { attempts: u32 },
    #[error(transparent)]
    Peer(#[from] PeerError),
    #[error(transparent)]
    Protocol(#[from] Bb84Error),
}

/// Draws `n` independent uniform bits.
pub fn random_bits(n: usize, rng: &mut impl Rng) -> Result<BitString, Bb84Error> {
    if n == 0 {
        return Err(Bb84Error::ZeroLength);
    }
    Ok((0..n).map(|_| rng.random::<bool>()).collect())
}

/// Draws `n` independent uniform bases.
pub fn random_bases(n: usize, rng: &mut impl Rng) -> Result<Vec<Basis>, Bb84Error> {
    if n == 0 {
        return Err(Bb84Error::ZeroLength);
    }
    Ok((0..n).map(|_| Basis::random(rng)).collect())
}

/// Encodes classical bits into qubit preparations, one per (bit, basis) pair.
pub fn prepare_frame(bits: &BitString, bases: &[Basis]) -> Result<PreparedFrame, Bb84Error> {
    if bits.len() != bases.len() {
        return Err(Bb84Error::LengthMismatch(bits.len(), bases.len()));
    }
    PreparedFrame::from_preps(
        bits.iter()
            .zip(bases.iter())
            .map(|(bit, &basis)| QubitPrep { bit, basis })
            .collect(),
    )
}

/// Sends a frame through the simulated quantum channel.
///
/// With the eavesdropper enabled, each qubit is first measured in a random
/// basis and re-prepared in that basis with the measured bit. Transit noise
/// then flips each bit independently with the model's probability; bases are
/// untouched by the noise stage.
pub fn apply_channel(
    frame: &PreparedFrame,
    noise: &NoiseModel,
    rng: &mut impl Rng,
) -> PreparedFrame {
    let p = noise.flip_probability();
    let preps = frame
        .iter()
        .map(|prep| {
            let mut out = *prep;
            if noise.eavesdropper() {
                let eve_basis = Basis::random(rng);
                let eve_bit = if eve_basis == out.basis {
                    out.bit
                } else {
                    rng.random::<bool>()
                };
                out = QubitPrep {
                    bit: eve_bit,
                    basis: eve_basis,
                };
            }
            if p > 0.0 && rng.random_bool(p) {
                out.bit = !out.bit;
            }
            out
        })
        .collect();
    PreparedFrame { preps }
}

/// Measures every qubit of a frame in the given bases.
///
/// A matching basis yields the transmitted bit on every shot, so the majority
/// is that bit. A mismatched basis yields an independent uniform bit per
/// shot; the count of ones is drawn from Binomial(shots, 1/2) and the
/// reported outcome is the majority, with an exact tie settled by one extra
/// trial.
pub fn measure_frame(
    frame: &PreparedFrame,
    bases: &[Basis],
    shots: u64,
    rng: &mut impl Rng,
) -> Result<BitString, Bb84Error> {
    if frame.len() != bases.len() {
        return Err(Bb84Error::LengthMismatch(frame.len(), bases.len()));
    }
    if shots == 0 {
        return Err(Bb84Error::InvalidConfig("shots must be at least 1"));
    }
    let coin = Binomial::new(shots, 0.5).expect("valid binomial parameters");
    Ok(frame
        .iter()
        .zip(bases.iter())
        .map(|(prep, &basis)| {
            if prep.basis == basis {
                prep.bit
            } else {
                let ones = coin.sample(rng);
                match (2 * ones).cmp(&shots) {
                    std::cmp::Ordering::Greater => true,
                    std::cmp::Ordering::Less => false,
                    std::cmp::Ordering::Equal => rng.random::<bool>(),
                }
            }
        })
        .collect())
}

/// Keeps only the positions where both parties used the same basis.
pub fn sift(
    my_bases: &[Basis],
    their_bases: &[Basis],
    my_bits: &BitString,
) -> Result<SiftedKey, Bb84Error> {
    if my_bases.len() != their_bases.len() {
        return Err(Bb84Error::LengthMismatch(my_bases.len(), their_bases.len()));
    }
    if my_bases.len() != my_bits.len() {
        return Err(Bb84Error::LengthMismatch(my_bases.len(), my_bits.len()));
    }
    let mut bits = BitString::new();
    let mut positions = Vec::new();
    for (i, (mine, theirs)) in my_bases.iter().zip(their_bases.iter()).enumerate() {
        if mine == theirs {
            positions.push(i);
            bits.push(my_bits.bit(i));
        }
    }
    Ok(SiftedKey { bits, positions })
}

/// Committee-side digest announcement for one attempt.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeyConfirmation {
    pub sifted_len: usize,
    /// Lowercase hex digest of the sifted key; empty string when no bits
    /// survived sifting.
    pub key_digest_hex: String,
}

impl KeyConfirmation {
    pub fn for_key(key: &SiftedKey) -> Self {
        let key_digest_hex = if key.is_empty() {
            String::new()
        } else {
            hex::encode(key_digest(&key.bits).expect("non-empty key"))
        };
        KeyConfirmation {
            sifted_len: key.len(),
            key_digest_hex,
        }
    }
}

/// The committee as seen from the voter's session loop.
///
/// One implementation runs in-process (simulation, demos, sweeps); another
/// forwards each exchange over the transport layer.
pub trait QkdPeer {
    /// Delivers the prepared frame as QASM text; returns the committee's
    /// announced measurement bases.
    fn exchange_frame(&mut self, qasm_text: &str) -> Result<Vec<Basis>, PeerError>;

    /// Announces the voter's bases; returns the committee's key confirmation.
    fn exchange_bases(&mut self, bases: &[Basis]) -> Result<KeyConfirmation, PeerError>;

    /// Acknowledges a matching key digest; the committee may use the key.
    fn confirm_key(&mut self, confirmation: &KeyConfirmation) -> Result<(), PeerError>;

    /// Requests a fresh attempt after a digest mismatch or a short sift.
    fn request_retry(&mut self, next_attempt: u32) -> Result<(), PeerError>;
}

/// How the frame length evolves across retries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LengthPolicy {
    /// Every attempt uses the configured raw length.
    #[default]
    Fixed,
    /// Doubles the raw length after an attempt whose sift came up short.
    DoubleOnShort,
}

/// Voter-side view of a completed session.
#[derive(Debug, Clone)]
pub struct VoterSession {
    pub bits: BitString,
    pub bases: Vec<Basis>,
    pub committee_bases: Vec<Basis>,
    pub key: SiftedKey,
    pub attempts: u32,
    pub raw_length: usize,
}

/// Runs the voter side of a QKD session against a committee peer.
///
/// Each attempt draws fresh bits and bases, ships the frame, reconciles
/// bases and compares sifted-key digests. A digest mismatch or a sift
/// shorter than `min_sifted_bits` retries the whole session until the
/// attempt cap is exhausted.
pub fn run_session(
    config: &QkdConfig,
    policy: LengthPolicy,
    peer: &mut impl QkdPeer,
    rng: &mut impl Rng,
) -> Result<VoterSession, SessionError> {
    config.validate()?;
    let mut raw_length = config.raw_length;
    for attempt in 1..=config.attempt_cap {
        let bits = random_bits(raw_length, rng)?;
        let bases = random_bases(raw_length, rng)?;
        let frame = prepare_frame(&bits, &bases)?;
        let program = qasm::emit_prep(&frame);

        let committee_bases = peer.exchange_frame(program.text())?;
        if committee_bases.len() != raw_length {
            return Err(PeerError::InvalidReply(format!(
                "committee announced {} bases for a {raw_length}-qubit frame",
                committee_bases.len()
            ))
            .into());
        }
        let theirs = peer.exchange_bases(&bases)?;

        let key = sift(&bases, &committee_bases, &bits)?;
        let mine = KeyConfirmation::for_key(&key);
        let long_enough = key.len() >= config.min_sifted_bits && !key.is_empty();
        if long_enough && mine == theirs {
            peer.confirm_key(&mine)?;
            return Ok(VoterSession {
                bits,
                bases,
                committee_bases,
                key,
                attempts: attempt,
                raw_length,
            });
        }
        if attempt == config.attempt_cap {
            break;
        }
        peer.request_retry(attempt + 1)?;
        if policy == LengthPolicy::DoubleOnShort && !long_enough {
            raw_length *= 2;
        }
    }
    Err(SessionError::AttemptsExhausted {
        attempts: config.attempt_cap,
    })
}

/// Committee-side session state: measures incoming frames and reconciles
/// bases. The flip probability is drawn once per session and survives
/// retries; bases and measurements are fresh per attempt.
#[derive(Debug)]
pub struct CommitteeQkd {
    shots: u64,
    noise: NoiseModel,
    rng: ChaCha8Rng,
    bases: Vec<Basis>,
    measurements: BitString,
    sifted: Option<SiftedKey>,
}

impl CommitteeQkd {
    pub fn new(shots: u64, noise: NoiseModel, rng: ChaCha8Rng) -> Self {
        CommitteeQkd {
            shots,
            noise,
            rng,
            bases: Vec::new(),
            measurements: BitString::new(),
            sifted: None,
        }
    }

    pub fn noise(&self) -> &NoiseModel {
        &self.noise
    }

    pub fn bases(&self) -> &[Basis] {
        &self.bases
    }

    pub fn measurements(&self) -> &BitString {
        &self.measurements
    }

    pub fn sifted(&self) -> Option<&SiftedKey> {
        self.sifted.as_ref()
    }

    /// Receives the voter's frame: applies the channel, measures in fresh
    /// random bases and returns the bases to announce.
    pub fn receive_frame(&mut self, frame: &PreparedFrame) -> Result<&[Basis], Bb84Error> {
        let received = apply_channel(frame, &self.noise, &mut self.rng);
        self.bases = random_bases(received.len(), &mut self.rng)?;
        self.measurements = measure_frame(&received, &self.bases, self.shots, &mut self.rng)?;
        self.sifted = None;
        Ok(&self.bases)
    }

    /// Receives the voter's announced bases and sifts the measurements.
    pub fn receive_voter_bases(&mut self, voter_bases: &[Basis]) -> Result<&SiftedKey, Bb84Error> {
        if self.bases.is_empty() {
            return Err(Bb84Error::InvalidConfig("no frame received yet"));
        }
        let key = sift(&self.bases, voter_bases, &self.measurements)?;
        Ok(self.sifted.insert(key))
    }

    /// Discards per-attempt state ahead of a retry; keeps the noise draw.
    pub fn reset_attempt(&mut self) {
        self.bases.clear();
        self.measurements = BitString::new();
        self.sifted = None;
    }
}

/// In-process committee peer: runs the mirror side of the session locally,
/// parsing the QASM frame exactly as the wire path would.
pub struct LocalCommitteePeer {
    committee: CommitteeQkd,
    confirmed: bool,
}

impl LocalCommitteePeer {
    pub fn new(committee: CommitteeQkd) -> Self {
        LocalCommitteePeer {
            committee,
            confirmed: false,
        }
    }

    pub fn committee(&self) -> &CommitteeQkd {
        &self.committee
    }

    pub fn confirmed(&self) -> bool {
        self.confirmed
    }
}

impl QkdPeer for LocalCommitteePeer {
    fn exchange_frame(&mut self, qasm_text: &str) -> Result<Vec<Basis>, PeerError> {
        let frame = qasm::parse_prep(qasm_text)
            .map_err(|e| PeerError::InvalidReply(format!("bad frame: {e}")))?;
        let bases = self
            .committee
            .receive_frame(&frame)
            .map_err(|e| PeerError::InvalidReply(e.to_string()))?;
        Ok(bases.to_vec())
    }

    fn exchange_bases(&mut self, bases: &[Basis]) -> Result<KeyConfirmation, PeerError> {
        let key = self
            .committee
            .receive_voter_bases(bases)
            .map_err(|e| PeerError::InvalidReply(e.to_string()))?;
        Ok(KeyConfirmation::for_key(key))
    }

    fn confirm_key(&mut self, _confirmation: &KeyConfirmation) -> Result<(), PeerError> {
        self.confirmed = true;
        Ok(())
    }

    fn request_retry(&mut self, _next_attempt: u32) -> Result<(), PeerError> {
        self.committee.reset_attempt();
        Ok(())
    }
}

/// Runs one full QKD session with both endpoints in-process and returns the
/// merged transcript. Deterministic for a fixed (config, noise, rng) triple.
pub fn simulate_session(
    config: &QkdConfig,
    noise: &NoiseModel,
    rng: &mut impl Rng,
) -> Result<SessionTranscript, SessionError> {
    let committee_rng = ChaCha8Rng::seed_from_u64(rng.random::<u64>());
    let committee = CommitteeQkd::new(config.shots, *noise, committee_rng);
    let mut peer = LocalCommitteePeer::new(committee);
    let voter = run_session(config, LengthPolicy::Fixed, &mut peer, rng)?;
    let committee = peer.committee();
    let committee_key = committee
        .sifted()
        .cloned()
        .expect("confirmed session has a sifted key");
    Ok(SessionTranscript {
        voter_bits: voter.bits,
        voter_bases: voter.bases,
        committee_bases: committee.bases().to_vec(),
        committee_measurements: committee.measurements().clone(),
        voter_key: voter.key,
        committee_key,
        noise_draw: committee.noise().flip_probability(),
        attempts: voter.attempts,
    })
}
