use std::io::{Read, Write};

use rand::Rng;

use crate::container::{Decoder, Encoder};
use crate::error::{Error, Result};

/// Row-major real matrix holding one embedding per user or item.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseEmbeddingMatrix {
    rows: usize,
    dim: usize,
    values: Vec<f64>,
}

impl DenseEmbeddingMatrix {
    pub fn zeros(rows: usize, dim: usize) -> Self {
        DenseEmbeddingMatrix {
            rows,
            dim,
            values: vec![0.0; rows * dim],
        }
    }

    pub fn from_vec(rows: usize, dim: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != rows * dim {
            return Err(Error::Config(format!(
                "{} values cannot form a {rows}x{dim} matrix",
                values.len()
            )));
        }
        Ok(DenseEmbeddingMatrix { rows, dim, values })
    }

    /// Entries drawn uniformly from `[-scale, scale]`.
    pub fn uniform<R: Rng>(rows: usize, dim: usize, scale: f64, rng: &mut R) -> Self {
        let values = (0..rows * dim)
            .map(|_| rng.random_range(-scale..=scale))
            .collect();
        DenseEmbeddingMatrix { rows, dim, values }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.values[r * self.dim..(r + 1) * self.dim]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.values[r * self.dim..(r + 1) * self.dim]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.dim.max(1)).take(self.rows)
    }

    pub fn ensure_finite(&self, what: &str) -> Result<()> {
        match self.values.iter().position(|v| !v.is_finite()) {
            None => Ok(()),
            Some(pos) => Err(Error::Numeric(format!(
                "{what}[{}][{}] = {}",
                pos / self.dim,
                pos % self.dim,
                self.values[pos]
            ))),
        }
    }

    /// Scales any row with ℓ2 norm above `max_norm` back onto the ball.
    pub fn clip_row_norm(&mut self, r: usize, max_norm: f64) {
        let row = self.row_mut(r);
        let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > max_norm {
            let s = max_norm / norm;
            row.iter_mut().for_each(|x| *x *= s);
        }
    }

    pub(crate) fn encode<W: Write>(&self, enc: &mut Encoder<W>) -> Result<()> {
        enc.usize(self.rows)?;
        enc.usize(self.dim)?;
        enc.f64s(&self.values)
    }

    pub(crate) fn decode<R: Read>(dec: &mut Decoder<R>) -> Result<Self> {
        let rows = dec.usize()?;
        let dim = dec.usize()?;
        let values = dec.f64s()?;
        Self::from_vec(rows, dim, values).map_err(|e| Error::Format(e.to_string()))
    }
}
