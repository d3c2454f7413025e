//! Packed bit sequences.

use std::fmt;
use std::str::FromStr;

use crate::{Error, Result};

const WORD_BITS: usize = 64;

/// A finite, non-empty, ordered string of bits.
///
/// Bits are packed least-significant-bit first into `u64` words: bit `i`
/// lives at position `i % 64` of word `i / 64`. Bits past `len` in the last
/// word are always zero.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct BitSequence {
    words: Vec<u64>,
    len: usize,
}

impl BitSequence {
    /// Builds a sequence from booleans.
    pub fn from_bools<I: IntoIterator<Item = bool>>(bits: I) -> Result<Self> {
        let mut builder = BitSequenceBuilder::new();
        for bit in bits {
            builder.push(bit);
        }
        builder.finish()
    }

    /// Builds a sequence from `0`/`1` bytes. Any other value is rejected.
    pub fn from_bytes(bits: &[u8]) -> Result<Self> {
        let mut builder = BitSequenceBuilder::with_capacity(bits.len());
        for (i, &b) in bits.iter().enumerate() {
            match b {
                0 => builder.push(false),
                1 => builder.push(true),
                other => {
                    return Err(Error::InvalidArgument(format!(
                        "bit {i} has value {other}, expected 0 or 1"
                    )))
                }
            }
        }
        builder.finish()
    }

    pub(crate) fn from_raw_parts(words: Vec<u64>, len: usize) -> Result<Self> {
        if len == 0 {
            return Err(Error::EmptySequence);
        }
        debug_assert_eq!(words.len(), len.div_ceil(WORD_BITS));
        let mut seq = BitSequence { words, len };
        seq.clear_tail();
        Ok(seq)
    }

    pub fn len(&self) -> usize {
        self.len
    }

    /// Always false; kept for API symmetry with collections.
    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Returns bit `i` (0-based). Panics when out of range.
    pub fn get(&self, i: usize) -> bool {
        assert!(i < self.len, "bit index {i} out of range for length {}", self.len);
        (self.words[i / WORD_BITS] >> (i % WORD_BITS)) & 1 == 1
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = bool> + '_ {
        (0..self.len).map(move |i| self.get(i))
    }

    pub fn count_ones(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn count_zeros(&self) -> usize {
        self.len - self.count_ones()
    }

    pub(crate) fn words(&self) -> &[u64] {
        &self.words
    }

    /// Every bit inverted.
    pub fn complement(&self) -> Self {
        let mut seq = BitSequence {
            words: self.words.iter().map(|w| !w).collect(),
            len: self.len,
        };
        seq.clear_tail();
        seq
    }

    /// Bits in reverse order.
    pub fn reversed(&self) -> Self {
        let mut builder = BitSequenceBuilder::with_capacity(self.len);
        for i in (0..self.len).rev() {
            builder.push(self.get(i));
        }
        builder.finish().expect("non-empty")
    }

    /// The `[start, end)` slice of the sequence.
    pub fn slice(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.len {
            return Err(Error::InvalidArgument(format!(
                "slice {start}..{end} invalid for length {}",
                self.len
            )));
        }
        let mut builder = BitSequenceBuilder::with_capacity(end - start);
        for i in start..end {
            builder.push(self.get(i));
        }
        builder.finish()
    }

    /// Packs the bits most-significant-bit first, eight per byte, zero padded.
    pub fn to_msb_bytes(&self) -> Vec<u8> {
        let mut out = vec![0u8; self.len.div_ceil(8)];
        for (i, bit) in self.iter().enumerate() {
            if bit {
                out[i / 8] |= 0x80 >> (i % 8);
            }
        }
        out
    }

    /// Inverse of [`to_msb_bytes`](Self::to_msb_bytes).
    pub fn from_msb_bytes(bytes: &[u8], len: usize) -> Result<Self> {
        if bytes.len() != len.div_ceil(8) {
            return Err(Error::InvalidArgument(format!(
                "{} bytes cannot hold exactly {len} bits",
                bytes.len()
            )));
        }
        let mut builder = BitSequenceBuilder::with_capacity(len);
        for i in 0..len {
            builder.push(bytes[i / 8] & (0x80 >> (i % 8)) != 0);
        }
        builder.finish()
    }

    fn clear_tail(&mut self) {
        let rem = self.len % WORD_BITS;
        if rem != 0 {
            if let Some(last) = self.words.last_mut() {
                *last &= (1u64 << rem) - 1;
            }
        }
    }
}

impl fmt::Display for BitSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s: String = self.iter().map(|b| if b { '1' } else { '0' }).collect();
        f.write_str(&s)
    }
}

impl fmt::Debug for BitSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.len <= 128 {
            write!(f, "BitSequence({self})")
        } else {
            write!(f, "BitSequence(len={}, ones={})", self.len, self.count_ones())
        }
    }
}

impl FromStr for BitSequence {
    type Err = Error;

    /// Parses an ASCII string over `{0, 1}`.
    fn from_str(s: &str) -> Result<Self> {
        let mut builder = BitSequenceBuilder::with_capacity(s.len());
        for (i, c) in s.bytes().enumerate() {
            match c {
                b'0' => builder.push(false),
                b'1' => builder.push(true),
                _ => {
                    return Err(Error::InvalidArgument(format!(
                        "character {} at position {i} is not a bit",
                        char::from(c).escape_default()
                    )))
                }
            }
        }
        builder.finish()
    }
}

/// Incremental constructor used by the generators and parsers.
#[derive(Debug, Default)]
pub struct BitSequenceBuilder {
    words: Vec<u64>,
    len: usize,
}

impl BitSequenceBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(bits: usize) -> Self {
        BitSequenceBuilder {
            words: Vec::with_capacity(bits.div_ceil(WORD_BITS)),
            len: 0,
        }
    }

    #[inline]
    pub fn push(&mut self, bit: bool) {
        let offset = self.len % WORD_BITS;
        if offset == 0 {
            self.words.push(0);
        }
        if bit {
            *self.words.last_mut().expect("word allocated") |= 1u64 << offset;
        }
        self.len += 1;
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn finish(self) -> Result<BitSequence> {
        BitSequence::from_raw_parts(self.words, self.len)
    }
}
