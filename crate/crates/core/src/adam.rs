//! Adam with lazy (row-sparse) semantics for embedding tables.
//!
//! Rows absent from a batch keep both their values and their moment
//! estimates; bias correction always uses the global step count.

use crate::embedding::DenseEmbeddingMatrix;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// One update of `params` in place. `step` is 1-based.
    pub fn update(&self, params: &mut [f64], grads: &[f64], moments: &mut Moments, offset: usize, step: u64) {
        let bc1 = 1.0 - self.beta1.powi(step as i32);
        let bc2 = 1.0 - self.beta2.powi(step as i32);
        let m = &mut moments.first[offset..offset + params.len()];
        let v = &mut moments.second[offset..offset + params.len()];
        for k in 0..params.len() {
            let g = grads[k];
            m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * g;
            v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * g * g;
            params[k] -= self.lr * (m[k] / bc1) / ((v[k] / bc2).sqrt() + self.eps);
        }
    }

    /// Updates only the rows touched in `grads`.
    pub fn update_rows(&self, params: &mut DenseEmbeddingMatrix, grads: &RowGrads, moments: &mut Moments, step: u64) {
        let dim = params.dim();
        for &r in grads.touched() {
            let r = r as usize;
            self.update(params.row_mut(r), grads.row(r), moments, r * dim, step);
        }
    }
}

/// First and second moment estimates, shaped like the parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Moments {
    first: Vec<f64>,
    second: Vec<f64>,
}

impl Moments {
    pub fn new(len: usize) -> Self {
        Moments {
            first: vec![0.0; len],
            second: vec![0.0; len],
        }
    }

    pub fn for_matrix(m: &DenseEmbeddingMatrix) -> Self {
        Self::new(m.values().len())
    }

    pub fn first(&self) -> &[f64] {
        &self.first
    }

    pub fn second(&self) -> &[f64] {
        &self.second
    }
}

/// Gradient accumulator for an embedding table that remembers which rows
/// were written since the last `clear`.
#[derive(Clone, Debug)]
pub struct RowGrads {
    dim: usize,
    data: Vec<f64>,
    touched: Vec<u32>,
    marked: Vec<bool>,
}

impl RowGrads {
    pub fn new(rows: usize, dim: usize) -> Self {
        RowGrads {
            dim,
            data: vec![0.0; rows * dim],
            touched: Vec::new(),
            marked: vec![false; rows],
        }
    }

    pub fn for_matrix(m: &DenseEmbeddingMatrix) -> Self {
        Self::new(m.rows(), m.dim())
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        if !self.marked[r] {
            self.marked[r] = true;
            self.touched.push(r as u32);
        }
        &mut self.data[r * self.dim..(r + 1) * self.dim]
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.dim..(r + 1) * self.dim]
    }

    /// Rows written since the last clear, in first-touch order.
    pub fn touched(&self) -> &[u32] {
        &self.touched
    }

    pub fn clear(&mut self) {
        for &r in &self.touched {
            let r = r as usize;
            self.marked[r] = false;
            self.data[r * self.dim..(r + 1) * self.dim].fill(0.0);
        }
        self.touched.clear();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let adam = Adam::new(0.01);
        let mut p = vec![0.3, -0.7];
        let mut mo = Moments::new(2);
        for t in 1..=5 {
            adam.update(&mut p, &[0.0, 0.0], &mut mo, 0, t);
        }
        assert_eq!(p, vec![0.3, -0.7]);
    }

    #[test]
    fn constant_gradient_steps_at_learning_rate() {
        let adam = Adam::new(0.001);
        let mut p = vec![0.0, 0.0];
        let mut mo = Moments::new(2);
        let mut prev = p.clone();
        for t in 1..=2000 {
            adam.update(&mut p, &[3.0, -0.02], &mut mo, 0, t);
            if t > 1000 {
                assert!(((prev[0] - p[0]) - 0.001).abs() < 1e-6);
                assert!(((p[1] - prev[1]) - 0.001).abs() < 1e-6);
            }
            prev.clone_from(&p);
        }
    }

    #[test]
    fn hand_trace_three_steps() {
        // f(x) = x^2 from x0 = 1 with lr 0.1; gradients 2x evaluated at each iterate.
        let adam = Adam::new(0.1);
        let mut x = vec![1.0];
        let mut mo = Moments::new(1);
        // Step 1: g=2, m=0.2, v=0.004, m̂=2, v̂=4 → x = 1 - 0.1*2/(2+1e-8)
        let expected1 = 1.0 - 0.1 * 2.0 / (2.0 + 1e-8);
        adam.update(&mut x, &[2.0], &mut mo, 0, 1);
        assert!((x[0] - expected1).abs() < 1e-15);

        let g2 = 2.0 * x[0];
        let m2: f64 = 0.9 * 0.2 + 0.1 * g2;
        let v2: f64 = 0.999 * 0.004 + 0.001 * g2 * g2;
        let expected2 = x[0] - 0.1 * (m2 / (1.0 - 0.81)) / ((v2 / (1.0 - 0.999f64.powi(2))).sqrt() + 1e-8);
        adam.update(&mut x, &[g2], &mut mo, 0, 2);
        assert!((x[0] - expected2).abs() < 1e-15);

        let g3 = 2.0 * x[0];
        let m3 = 0.9 * m2 + 0.1 * g3;
        let v3 = 0.999 * v2 + 0.001 * g3 * g3;
        let expected3 =
            x[0] - 0.1 * (m3 / (1.0 - 0.9f64.powi(3))) / ((v3 / (1.0 - 0.999f64.powi(3))).sqrt() + 1e-8);
        adam.update(&mut x, &[g3], &mut mo, 0, 3);
        assert!((x[0] - expected3).abs() < 1e-15);
        // ≈ 0.7013 after three steps
        assert!((x[0] - 0.70135).abs() < 1e-3);
    }

    #[test]
    fn untouched_rows_are_frozen() {
        let adam = Adam::new(0.1);
        let mut params = DenseEmbeddingMatrix::from_vec(3, 2, vec![1.0; 6]).unwrap();
        let mut moments = Moments::for_matrix(&params);
        let mut grads = RowGrads::for_matrix(&params);
        grads.row_mut(1).copy_from_slice(&[1.0, -1.0]);
        adam.update_rows(&mut params, &grads, &mut moments, 1);
        assert_eq!(params.row(0), &[1.0, 1.0]);
        assert_eq!(params.row(2), &[1.0, 1.0]);
        assert!(params.row(1)[0] < 1.0 && params.row(1)[1] > 1.0);
        assert_eq!(&moments.first()[..2], &[0.0, 0.0]);
        grads.clear();
        assert!(grads.touched().is_empty());
        assert_eq!(grads.row(1), &[0.0, 0.0]);
    }
}
