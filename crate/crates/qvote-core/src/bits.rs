//! Bit strings: the unit of key material throughout the pipeline.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

/// An ordered sequence of bits.
///
/// Keys, raw QKD bits and measurement outcomes are all bit strings. The
/// canonical byte packing is most-significant-bit first with zero padding to
/// a byte boundary, so `1011` packs to `0xB0`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct BitString(Vec<bool>);

#[derive(Debug, Error, PartialEq, Eq)]
#[error("invalid bit character {found:?} at offset {offset}")]
pub struct ParseBitsError {
    pub offset: usize,
    pub found: char,
}

impl BitString {
    pub fn new() -> Self {
        BitString(Vec::new())
    }

    pub fn with_capacity(n: usize) -> Self {
        BitString(Vec::with_capacity(n))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Bit at position `i`; panics when out of range, like slice indexing.
    pub fn bit(&self, i: usize) -> bool {
        self.0[i]
    }

    pub fn push(&mut self, bit: bool) {
        self.0.push(bit);
    }

    pub fn iter(&self) -> impl Iterator<Item = bool> + '_ {
        self.0.iter().copied()
    }

    pub fn count_ones(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }

    /// Packs the bits MSB-first into bytes, zero-padded to a byte boundary.
    pub fn to_bytes_msb(&self) -> Vec<u8> {
        let mut out = vec![0u8; self.0.len().div_ceil(8)];
        for (i, &bit) in self.0.iter().enumerate() {
            if bit {
                out[i / 8] |= 1 << (7 - (i % 8));
            }
        }
        out
    }
}

impl From<Vec<bool>> for BitString {
    fn from(bits: Vec<bool>) -> Self {
        BitString(bits)
    }
}

impl FromIterator<bool> for BitString {
    fn from_iter<T: IntoIterator<Item = bool>>(iter: T) -> Self {
        BitString(iter.into_iter().collect())
    }
}

impl fmt::Display for BitString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &bit in &self.0 {
            f.write_str(if bit { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl FromStr for BitString {
    type Err = ParseBitsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.chars()
            .enumerate()
            .map(|(offset, c)| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                found => Err(ParseBitsError { offset, found }),
            })
            .collect()
    }
}
