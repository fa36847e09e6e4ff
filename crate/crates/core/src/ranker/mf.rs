//! Inner-product matrix factorization trained with the BPR pairwise loss.

use crate::adam::{Adam, Moments, RowGrads};
use crate::embedding::DenseEmbeddingMatrix;
use crate::error::Result;
use crate::math::{dot, neg_log_sigmoid, sigmoid, squared_norm};
use crate::sampling::TripletBatch;

use super::{check_batch, EmbeddingLoss};

#[derive(Clone, Debug, PartialEq)]
pub struct MatrixFactorization {
    pub user: DenseEmbeddingMatrix,
    pub item: DenseEmbeddingMatrix,
}

impl MatrixFactorization {
    #[inline]
    pub(crate) fn score(&self, u: usize, i: usize) -> f64 {
        dot(self.user.row(u), self.item.row(i))
    }
}

/// `Σ −ln σ(⟨p_u, q_i⟩ − ⟨p_u, q_j⟩) + λ (‖p_u‖² + ‖q_i‖² + ‖q_j‖²)` over
/// the batch, with gradients.
pub fn bpr_loss(model: &MatrixFactorization, batch: &TripletBatch, lambda: f64) -> Result<EmbeddingLoss> {
    let mut grads = EmbeddingLoss::zeros(&model.user, &model.item);
    grads.loss = accumulate(model, batch, lambda, &mut grads.user_grads, &mut grads.item_grads)?;
    Ok(grads)
}

fn accumulate(
    model: &MatrixFactorization,
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
        let x = model.score(u, i) - model.score(u, j);
        loss += neg_log_sigmoid(x) + lambda * (squared_norm(p) + squared_norm(qi) + squared_norm(qj));
        let g = -sigmoid(-x);
        let gp = gu_all.row_mut(u);
        for z in 0..k {
            gp[z] += g * (qi[z] - qj[z]) + 2.0 * lambda * p[z];
        }
        let gi = gi_all.row_mut(i);
        for z in 0..k {
            gi[z] += g * p[z] + 2.0 * lambda * qi[z];
        }
        let gj = gi_all.row_mut(j);
        for z in 0..k {
            gj[z] += -g * p[z] + 2.0 * lambda * qj[z];
        }
    }
    Ok(loss)
}

pub(crate) struct MfTrainer {
    pub model: MatrixFactorization,
    lambda: f64,
    adam: Adam,
    user_moments: Moments,
    item_moments: Moments,
    user_grads: RowGrads,
    item_grads: RowGrads,
}

impl MfTrainer {
    pub(crate) fn new(model: MatrixFactorization, lambda: f64, lr: f64) -> Self {
        MfTrainer {
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
        Ok(loss)
    }
}
