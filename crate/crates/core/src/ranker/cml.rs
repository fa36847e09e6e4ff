//! Metric embeddings scored by negative Euclidean distance, trained with a
//! hinge loss and kept inside the unit ball.

use crate::adam::{Adam, Moments, RowGrads};
use crate::embedding::DenseEmbeddingMatrix;
use crate::error::Result;
use crate::math::squared_norm;
use crate::sampling::TripletBatch;

use super::{check_batch, EmbeddingLoss};

/// Largest row norm of metric embeddings.
pub const MAX_NORM: f64 = 1.0;

#[derive(Clone, Debug, PartialEq)]
pub struct MetricEmbedding {
    pub user: DenseEmbeddingMatrix,
    pub item: DenseEmbeddingMatrix,
    pub margin: f64,
}

#[inline]
fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

impl MetricEmbedding {
    #[inline]
    pub(crate) fn score(&self, u: usize, i: usize) -> f64 {
        -distance(self.user.row(u), self.item.row(i))
    }

    /// Projects every row onto the unit ball.
    pub fn project(&mut self) {
        for r in 0..self.user.rows() {
            self.user.clip_row_norm(r, MAX_NORM);
        }
        for r in 0..self.item.rows() {
            self.item.clip_row_norm(r, MAX_NORM);
        }
    }
}

/// `Σ max(0, margin − ‖p_u − q_j‖ + ‖p_u − q_i‖)` plus the usual row-wise
/// ℓ2 term, with (sub)gradients.
pub fn cml_loss(model: &MetricEmbedding, batch: &TripletBatch, lambda: f64) -> Result<EmbeddingLoss> {
    let mut grads = EmbeddingLoss::zeros(&model.user, &model.item);
    grads.loss = accumulate(model, batch, lambda, &mut grads.user_grads, &mut grads.item_grads)?;
    Ok(grads)
}

fn accumulate(
    model: &MetricEmbedding,
    batch: &TripletBatch,
    lambda: f64,
    gu_all: &mut RowGrads,
    gi_all: &mut RowGrads,
) -> Result<f64> {
    check_batch(batch, model.user.rows(), model.item.rows())?;
    let k = model.user.dim();
    let mut loss = 0.0;
    for t in &batch.triples {
        let (u, i, j) = (t.user as usize, t.pos as usize, t.neg as usize);
        let (p, qi, qj) = (model.user.row(u), model.item.row(i), model.item.row(j));
        let dp = distance(p, qi);
        let dn = distance(p, qj);
        let hinge = model.margin - dn + dp;
        // Coefficients of (p − q_i) and (p − q_j); a zero distance has no direction.
        let (cp, cn) = if hinge > 0.0 {
            loss += hinge;
            (if dp > 0.0 { 1.0 / dp } else { 0.0 }, if dn > 0.0 { 1.0 / dn } else { 0.0 })
        } else {
            (0.0, 0.0)
        };
        if lambda > 0.0 {
            loss += lambda * (squared_norm(p) + squared_norm(qi) + squared_norm(qj));
        }
        let gp = gu_all.row_mut(u);
        for z in 0..k {
            gp[z] += cp * (p[z] - qi[z]) - cn * (p[z] - qj[z]) + 2.0 * lambda * p[z];
        }
        let gi = gi_all.row_mut(i);
        for z in 0..k {
            gi[z] += -cp * (p[z] - qi[z]) + 2.0 * lambda * qi[z];
        }
        let gj = gi_all.row_mut(j);
        for z in 0..k {
            gj[z] += cn * (p[z] - qj[z]) + 2.0 * lambda * qj[z];
        }
    }
    Ok(loss)
}

pub(crate) struct CmlTrainer {
    pub model: MetricEmbedding,
    lambda: f64,
    adam: Adam,
    user_moments: Moments,
    item_moments: Moments,
    user_grads: RowGrads,
    item_grads: RowGrads,
}

impl CmlTrainer {
    pub(crate) fn new(mut model: MetricEmbedding, lambda: f64, lr: f64) -> Self {
        model.project();
        CmlTrainer {
            user_moments: Moments::for_matrix(&model.user),
            item_moments: Moments::for_matrix(&model.item),
            user_grads: RowGrads::for_matrix(&model.user),
            item_grads: RowGrads::for_matrix(&model.item),
            model,
            lambda,
            adam: Adam::new(lr),
        }
    }

    pub(crate) fn step(&mut self, batch: &TripletBatch, step: u64) -> Result<f64> {
        self.user_grads.clear();
        self.item_grads.clear();
        let loss = accumulate(&self.model, batch, self.lambda, &mut self.user_grads, &mut self.item_grads)?;
        self.adam
            .update_rows(&mut self.model.user, &self.user_grads, &mut self.user_moments, step);
        self.adam
            .update_rows(&mut self.model.item, &self.item_grads, &mut self.item_moments, step);
        for &r in self.user_grads.touched() {
            self.model.user.clip_row_norm(r as usize, MAX_NORM);
        }
        for &r in self.item_grads.touched() {
            self.model.item.clip_row_norm(r as usize, MAX_NORM);
        }
        Ok(loss)
    }
}
