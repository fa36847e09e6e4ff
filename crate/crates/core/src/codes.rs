//! Packed `{-1, +1}^r` codes and Hamming arithmetic.
//!
//! Bit `z` of a row lives in word `z / 64` at position `z % 64`; a set bit
//! encodes `+1`. Unused high bits of the last word are always zero, so the
//! Hamming distance is a plain XOR + popcount over the words.

use std::io::{Read, Write};

use rand::Rng;

use crate::container::{Decoder, Encoder};
use crate::embedding::DenseEmbeddingMatrix;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryCodeMatrix {
    rows: usize,
    bits: usize,
    words_per_row: usize,
    words: Vec<u64>,
}

impl BinaryCodeMatrix {
    /// All-`-1` codes.
    pub fn new(rows: usize, bits: usize) -> Result<Self> {
        if bits == 0 || !bits.is_multiple_of(8) {
            return Err(Error::Config(format!(
                "code length must be a positive multiple of 8, got {bits}"
            )));
        }
        let words_per_row = bits.div_ceil(64);
        Ok(BinaryCodeMatrix {
            rows,
            bits,
            words_per_row,
            words: vec![0; rows * words_per_row],
        })
    }

    pub fn from_words(rows: usize, bits: usize, words: Vec<u64>) -> Result<Self> {
        let mut m = Self::new(rows, bits)?;
        if words.len() != m.words.len() {
            return Err(Error::Config(format!(
                "{} words cannot hold {rows} codes of {bits} bits",
                words.len()
            )));
        }
        m.words = words;
        if (0..rows).any(|r| m.row(r)[m.words_per_row - 1] & !m.tail_mask() != 0) {
            return Err(Error::Config("bits set beyond the code length".into()));
        }
        Ok(m)
    }

    /// Uniformly random codes.
    pub fn random<R: Rng>(rows: usize, bits: usize, rng: &mut R) -> Result<Self> {
        let mut m = Self::new(rows, bits)?;
        let tail = m.tail_mask();
        let wpr = m.words_per_row;
        for row in m.words.chunks_exact_mut(wpr) {
            for w in row.iter_mut() {
                *w = rng.random();
            }
            row[wpr - 1] &= tail;
        }
        Ok(m)
    }

    fn tail_mask(&self) -> u64 {
        match self.bits % 64 {
            0 => u64::MAX,
            rem => (1u64 << rem) - 1,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn bits(&self) -> usize {
        self.bits
    }

    pub fn words_per_row(&self) -> usize {
        self.words_per_row
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[u64] {
        &self.words[r * self.words_per_row..(r + 1) * self.words_per_row]
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    /// Code entry `z` of row `r` as `±1.0`.
    #[inline]
    pub fn sign(&self, r: usize, z: usize) -> f64 {
        if self.row(r)[z / 64] >> (z % 64) & 1 == 1 {
            1.0
        } else {
            -1.0
        }
    }

    pub fn set(&mut self, r: usize, z: usize, positive: bool) {
        let w = &mut self.words[r * self.words_per_row + z / 64];
        let mask = 1u64 << (z % 64);
        if positive {
            *w |= mask;
        } else {
            *w &= !mask;
        }
    }

    /// The codes as a real `±1` matrix.
    pub fn to_signs(&self) -> DenseEmbeddingMatrix {
        let values = (0..self.rows)
            .flat_map(|r| (0..self.bits).map(move |z| (r, z)))
            .map(|(r, z)| self.sign(r, z))
            .collect();
        DenseEmbeddingMatrix::from_vec(self.rows, self.bits, values)
            .expect("shape is consistent by construction")
    }

    /// `<b, d> = r - 2 d_H(b, d)` for rows of this matrix and `other`.
    #[inline]
    pub fn inner_product(&self, r: usize, other: &BinaryCodeMatrix, s: usize) -> i64 {
        self.bits as i64 - 2 * hamming(self.row(r), other.row(s)) as i64
    }

    pub(crate) fn encode<W: Write>(&self, enc: &mut Encoder<W>) -> Result<()> {
        enc.usize(self.rows)?;
        enc.usize(self.bits)?;
        enc.u64s(&self.words)
    }

    pub(crate) fn decode<R: Read>(dec: &mut Decoder<R>) -> Result<Self> {
        let rows = dec.usize()?;
        let bits = dec.usize()?;
        let words = dec.u64s()?;
        Self::from_words(rows, bits, words).map_err(|e| Error::Format(e.to_string()))
    }
}

/// Elementwise `sgn` with `sgn(0) = +1`.
pub fn binarize(emb: &DenseEmbeddingMatrix) -> Result<BinaryCodeMatrix> {
    let mut codes = BinaryCodeMatrix::new(emb.rows(), emb.dim())?;
    for r in 0..emb.rows() {
        for (z, &x) in emb.row(r).iter().enumerate() {
            if x >= 0.0 {
                codes.set(r, z, true);
            }
        }
    }
    Ok(codes)
}

/// Number of differing bits between two packed rows of the same length.
pub fn hamming_distance(a: &[u64], b: &[u64]) -> Result<u32> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    Ok(hamming(a, b))
}

#[inline]
pub(crate) fn hamming(a: &[u64], b: &[u64]) -> u32 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x ^ y).count_ones()).sum()
}
