//! Learning binary user and item codes.
//!
//! Codes are the signs of auxiliary real embeddings `b̃_u`, `d̃_i`. Training
//! replaces `sgn` by `tanh(β ·)` and minimizes a pairwise logistic loss on
//! the relaxed codes, raising β every epoch so the relaxation tightens.

use std::io::{Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::adam::{Adam, Moments, RowGrads};
use crate::codes::{binarize, BinaryCodeMatrix};
use crate::container::{self, Decoder, Encoder, HASHREC_MAGIC};
use crate::dataset::{InteractionDataset, Split};
use crate::embedding::DenseEmbeddingMatrix;
use crate::error::{Error, Result};
use crate::eval::evaluate_linear_codes;
use crate::math::{neg_log_sigmoid, sgn, sigmoid, squared_norm};
use crate::sampling::{BatchSource, TripletBatch, TripletSampler};

const HASHREC_VERSION: u32 = 1;

/// Smallest β used. The annealed schedule starts at exactly zero, where
/// `tanh(β x)` and all its gradients vanish.
pub const BETA_FLOOR: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum BetaSchedule {
    /// `β(e) = sqrt(rate · (e − 1))`.
    Annealed { rate: f64 },
    Constant(f64),
}

impl BetaSchedule {
    /// β for a 1-based epoch, floored at [`BETA_FLOOR`].
    pub fn beta(&self, epoch: usize) -> f64 {
        let raw = match *self {
            BetaSchedule::Annealed { rate } => (rate * epoch.saturating_sub(1) as f64).sqrt(),
            BetaSchedule::Constant(b) => b,
        };
        raw.max(BETA_FLOOR)
    }
}

impl Default for BetaSchedule {
    fn default() -> Self {
        BetaSchedule::Annealed { rate: 10.0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HashRecConfig {
    pub bits: usize,
    pub lambda: f64,
    /// Sigmoid scale; `None` means `10 / bits`.
    pub alpha: Option<f64>,
    pub num_epochs: usize,
    /// `None` means one pass worth of triples: `⌈|train| / batch_size⌉`.
    pub iters_per_epoch: Option<usize>,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub beta_schedule: BetaSchedule,
    /// Validate every this many epochs (and after the last one).
    pub eval_every: usize,
    /// Stop when validation has not improved for this many epochs; `None`
    /// trains for `num_epochs` regardless.
    pub patience: Option<usize>,
    /// Cutoff of the validation hit rate.
    pub validation_cutoff: usize,
    /// Half-width of the uniform initialization; `None` means `0.5 / bits`.
    pub init_scale: Option<f64>,
    /// Batches sampled ahead on a background thread; 0 samples inline.
    pub prefetch: usize,
}

impl Default for HashRecConfig {
    fn default() -> Self {
        HashRecConfig {
            bits: 64,
            lambda: 0.001,
            alpha: None,
            num_epochs: 100,
            iters_per_epoch: None,
            batch_size: 10_000,
            learning_rate: 0.001,
            seed: 0,
            beta_schedule: BetaSchedule::default(),
            eval_every: 10,
            patience: Some(20),
            validation_cutoff: 200,
            init_scale: None,
            prefetch: 2,
        }
    }
}

impl HashRecConfig {
    pub fn alpha(&self) -> f64 {
        self.alpha.unwrap_or(10.0 / self.bits as f64)
    }

    pub fn init_scale(&self) -> f64 {
        self.init_scale.unwrap_or(0.5 / self.bits as f64)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.into()));
        if self.bits == 0 || !self.bits.is_multiple_of(8) {
            return bad("bits must be a positive multiple of 8");
        }
        if !(self.alpha() > 0.0 && self.alpha().is_finite()) {
            return bad("alpha must be positive");
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad("lambda must be non-negative");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning rate must be positive");
        }
        if self.batch_size == 0 || self.eval_every == 0 || self.iters_per_epoch == Some(0) {
            return bad("batch size, iterations and evaluation interval must be positive");
        }
        if !(self.init_scale() > 0.0 && self.init_scale().is_finite()) {
            return bad("init scale must be positive");
        }
        let (BetaSchedule::Constant(b) | BetaSchedule::Annealed { rate: b }) = self.beta_schedule;
        if !(b >= 0.0 && b.is_finite()) {
            return bad("beta schedule must be non-negative");
        }
        Ok(())
    }
}

/// Relaxed loss of a batch with gradients for every touched row.
#[derive(Clone, Debug)]
pub struct SurrogateLoss {
    /// Data term plus regularization.
    pub loss: f64,
    pub regularization: f64,
    pub user_grads: RowGrads,
    pub item_grads: RowGrads,
}

/// `tanh(β x)` of embedding rows, computed once per batch and row.
struct TanhCache {
    dim: usize,
    values: Vec<f64>,
    stamps: Vec<u32>,
    stamp: u32,
}

impl TanhCache {
    fn new(rows: usize, dim: usize) -> Self {
        TanhCache {
            dim,
            values: vec![0.0; rows * dim],
            stamps: vec![0; rows],
            stamp: 0,
        }
    }

    fn invalidate(&mut self) {
        self.stamp = self.stamp.wrapping_add(1);
        if self.stamp == 0 {
            self.stamps.fill(0);
            self.stamp = 1;
        }
    }

    fn fill(&mut self, emb: &DenseEmbeddingMatrix, r: usize, beta: f64, what: &str) -> Result<()> {
        if self.stamps[r] == self.stamp {
            return Ok(());
        }
        self.stamps[r] = self.stamp;
        let out = &mut self.values[r * self.dim..(r + 1) * self.dim];
        for (z, (o, &x)) in out.iter_mut().zip(emb.row(r)).enumerate() {
            if !x.is_finite() {
                return Err(Error::Numeric(format!("{what}[{r}][{z}] = {x}")));
            }
            *o = (beta * x).tanh();
        }
        Ok(())
    }

    #[inline]
    fn row(&self, r: usize) -> &[f64] {
        &self.values[r * self.dim..(r + 1) * self.dim]
    }
}

/// Reusable buffers for [`surrogate_loss`] inside the training loop.
struct Workspace {
    users: TanhCache,
    items: TanhCache,
    user_grads: RowGrads,
    item_grads: RowGrads,
}

impl Workspace {
    fn new(users: &DenseEmbeddingMatrix, items: &DenseEmbeddingMatrix) -> Self {
        Workspace {
            users: TanhCache::new(users.rows(), users.dim()),
            items: TanhCache::new(items.rows(), items.dim()),
            user_grads: RowGrads::for_matrix(users),
            item_grads: RowGrads::for_matrix(items),
        }
    }
}

fn check_shapes(batch: &TripletBatch, users: &DenseEmbeddingMatrix, items: &DenseEmbeddingMatrix) -> Result<()> {
    if users.dim() != items.dim() {
        return Err(Error::LengthMismatch {
            left: users.dim(),
            right: items.dim(),
        });
    }
    for t in &batch.triples {
        if t.user as usize >= users.rows() {
            return Err(Error::OutOfRange {
                what: "user",
                id: t.user as usize,
                bound: users.rows(),
            });
        }
        for item in [t.pos, t.neg] {
            if item as usize >= items.rows() {
                return Err(Error::OutOfRange {
                    what: "item",
                    id: item as usize,
                    bound: items.rows(),
                });
            }
        }
    }
    Ok(())
}

/// Accumulates gradients into the workspace; returns (data loss, regularization).
fn accumulate(
    ws: &mut Workspace,
    batch: &TripletBatch,
    users: &DenseEmbeddingMatrix,
    items: &DenseEmbeddingMatrix,
    alpha: f64,
    beta: f64,
    lambda: f64,
) -> Result<(f64, f64)> {
    ws.users.invalidate();
    ws.items.invalidate();
    ws.user_grads.clear();
    ws.item_grads.clear();
    let dim = users.dim();
    let mut data = 0.0;
    let mut reg = 0.0;
    for t in &batch.triples {
        let (u, i, j) = (t.user as usize, t.pos as usize, t.neg as usize);
        ws.users.fill(users, u, beta, "user embedding")?;
        ws.items.fill(items, i, beta, "item embedding")?;
        ws.items.fill(items, j, beta, "item embedding")?;
        let (a, p, n) = (ws.users.row(u), ws.items.row(i), ws.items.row(j));
        let x: f64 = (0..dim).map(|z| a[z] * (p[z] - n[z])).sum();
        data += neg_log_sigmoid(alpha * x);
        // d/dx of −ln σ(αx)
        let g = -alpha * sigmoid(-alpha * x);

        let bu = users.row(u);
        let (di, dj) = (items.row(i), items.row(j));
        reg += lambda * (squared_norm(bu) + squared_norm(di) + squared_norm(dj));

        let gu = ws.user_grads.row_mut(u);
        for z in 0..dim {
            gu[z] += g * (p[z] - n[z]) * beta * (1.0 - a[z] * a[z]) + 2.0 * lambda * bu[z];
        }
        let gi = ws.item_grads.row_mut(i);
        for z in 0..dim {
            gi[z] += g * a[z] * beta * (1.0 - p[z] * p[z]) + 2.0 * lambda * di[z];
        }
        let gj = ws.item_grads.row_mut(j);
        for z in 0..dim {
            gj[z] += -g * a[z] * beta * (1.0 - n[z] * n[z]) + 2.0 * lambda * dj[z];
        }
    }
    Ok((data, reg))
}

/// Relaxed pairwise loss
/// `−Σ ln σ_α(⟨tanh βb̃_u, tanh βd̃_i⟩ − ⟨tanh βb̃_u, tanh βd̃_j⟩)` plus
/// `λ (‖b̃_u‖² + ‖d̃_i‖² + ‖d̃_j‖²)` for every triple, with exact gradients.
pub fn surrogate_loss(
    batch: &TripletBatch,
    users: &DenseEmbeddingMatrix,
    items: &DenseEmbeddingMatrix,
    alpha: f64,
    beta: f64,
    lambda: f64,
) -> Result<SurrogateLoss> {
    if beta.is_nan() || beta <= 0.0 {
        return Err(Error::Config(format!("beta must be positive, got {beta}")));
    }
    check_shapes(batch, users, items)?;
    let mut ws = Workspace::new(users, items);
    let (data, reg) = accumulate(&mut ws, batch, users, items, alpha, beta, lambda)?;
    Ok(SurrogateLoss {
        loss: data + reg,
        regularization: reg,
        user_grads: ws.user_grads,
        item_grads: ws.item_grads,
    })
}

fn sign_margin(b: &[f64], di: &[f64], dj: &[f64]) -> f64 {
    b.iter()
        .zip(di.iter().zip(dj))
        .map(|(&b, (&p, &n))| sgn(b) * (sgn(p) - sgn(n)))
        .sum()
}

/// The loss the relaxation stands in for: the same pairwise logistic loss
/// on `sgn` of the embeddings, without regularization.
pub fn desired_loss(
    batch: &TripletBatch,
    users: &DenseEmbeddingMatrix,
    items: &DenseEmbeddingMatrix,
    alpha: f64,
) -> Result<f64> {
    check_shapes(batch, users, items)?;
    let mut total = 0.0;
    for t in &batch.triples {
        let (b, di, dj) = (users.row(t.user as usize), items.row(t.pos as usize), items.row(t.neg as usize));
        if let Some(x) = b.iter().chain(di).chain(dj).find(|x| !x.is_finite()) {
            return Err(Error::Numeric(format!("non-finite embedding entry {x}")));
        }
        total += neg_log_sigmoid(alpha * sign_margin(b, di, dj));
    }
    Ok(total)
}

/// Mean of `(tanh(β x) − sgn(x))²` over every entry of both matrices.
pub fn quantization_error(users: &DenseEmbeddingMatrix, items: &DenseEmbeddingMatrix, beta: f64) -> f64 {
    let values = users.values().iter().chain(items.values());
    let count = users.values().len() + items.values().len();
    if count == 0 {
        return 0.0;
    }
    values.map(|&x| ((beta * x).tanh() - sgn(x)).powi(2)).sum::<f64>() / count as f64
}

/// Per-epoch training diagnostics; losses are means per triple.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub beta: f64,
    pub surrogate_loss: f64,
    pub desired_loss: f64,
    pub regularization: f64,
    pub quantization_error: f64,
    pub validation_hr: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainingCurve {
    pub epochs: Vec<EpochStats>,
}

impl TrainingCurve {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,beta,surrogate_loss,desired_loss,regularization,quantization_error,validation_hr\n");
        for e in &self.epochs {
            let hr = e.validation_hr.map(|v| v.to_string()).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                e.epoch, e.beta, e.surrogate_loss, e.desired_loss, e.regularization, e.quantization_error, hr
            ));
        }
        out
    }
}

/// Learned codes together with the embeddings they were taken from.
#[derive(Clone, Debug, PartialEq)]
pub struct HashRecModel {
    pub user_codes: BinaryCodeMatrix,
    pub item_codes: BinaryCodeMatrix,
    pub user_emb: DenseEmbeddingMatrix,
    pub item_emb: DenseEmbeddingMatrix,
    /// Epochs trained so far; a warm start continues the β schedule here.
    pub epochs_trained: usize,
}

impl HashRecModel {
    pub fn from_embeddings(user_emb: DenseEmbeddingMatrix, item_emb: DenseEmbeddingMatrix, epochs_trained: usize) -> Result<Self> {
        Ok(HashRecModel {
            user_codes: binarize(&user_emb)?,
            item_codes: binarize(&item_emb)?,
            user_emb,
            item_emb,
            epochs_trained,
        })
    }

    pub fn bits(&self) -> usize {
        self.user_codes.bits()
    }

    pub fn write_to<W: Write>(&self, w: W) -> Result<()> {
        let mut enc = Encoder::new(w, HASHREC_MAGIC, HASHREC_VERSION)?;
        enc.usize(self.bits())?;
        enc.usize(self.user_codes.rows())?;
        enc.usize(self.item_codes.rows())?;
        enc.usize(self.epochs_trained)?;
        self.user_codes.encode(&mut enc)?;
        self.item_codes.encode(&mut enc)?;
        self.user_emb.encode(&mut enc)?;
        self.item_emb.encode(&mut enc)?;
        enc.finish()?;
        Ok(())
    }

    pub fn read_from<R: Read>(r: R) -> Result<Self> {
        let mut dec = Decoder::new(r, HASHREC_MAGIC, HASHREC_VERSION)?;
        let bits = dec.usize()?;
        let num_users = dec.usize()?;
        let num_items = dec.usize()?;
        let epochs_trained = dec.usize()?;
        let user_codes = BinaryCodeMatrix::decode(&mut dec)?;
        let item_codes = BinaryCodeMatrix::decode(&mut dec)?;
        let user_emb = DenseEmbeddingMatrix::decode(&mut dec)?;
        let item_emb = DenseEmbeddingMatrix::decode(&mut dec)?;
        dec.finish()?;
        let consistent = user_codes.bits() == bits
            && item_codes.bits() == bits
            && user_emb.dim() == bits
            && item_emb.dim() == bits
            && user_codes.rows() == num_users
            && user_emb.rows() == num_users
            && item_codes.rows() == num_items
            && item_emb.rows() == num_items;
        if !consistent {
            return Err(Error::Format("inconsistent code model shapes".into()));
        }
        Ok(HashRecModel {
            user_codes,
            item_codes,
            user_emb,
            item_emb,
            epochs_trained,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write_to(container::create(path)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(container::open(path)?)
    }
}

#[derive(Clone, Debug)]
pub struct HashRecTraining {
    pub model: HashRecModel,
    pub curve: TrainingCurve,
    /// Epoch whose parameters were kept, the best validated one when
    /// validation ran.
    pub best_epoch: usize,
}

/// Trains codes from scratch. Returns `(user_codes, item_codes)` of the best
/// validated epoch.
pub fn train_hashrec(dataset: &InteractionDataset, config: &HashRecConfig) -> Result<(BinaryCodeMatrix, BinaryCodeMatrix)> {
    let run = train_hashrec_with(dataset, config, None)?;
    Ok((run.model.user_codes, run.model.item_codes))
}

/// Full training entry point. With `warm`, embeddings start from a previous
/// model and the β schedule resumes after its last epoch; optimizer moments
/// start fresh.
pub fn train_hashrec_with(
    dataset: &InteractionDataset,
    config: &HashRecConfig,
    warm: Option<&HashRecModel>,
) -> Result<HashRecTraining> {
    config.validate()?;
    if dataset.num_users() == 0 || dataset.num_train_interactions() == 0 {
        return Err(Error::EmptyDataset);
    }
    let r = config.bits;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (mut users, mut items, first_epoch) = match warm {
        Some(m) => {
            if m.user_emb.rows() != dataset.num_users() || m.item_emb.rows() != dataset.num_items() || m.bits() != r {
                return Err(Error::Config("warm-start model does not match the dataset or bit count".into()));
            }
            (m.user_emb.clone(), m.item_emb.clone(), m.epochs_trained + 1)
        }
        None => {
            let s = config.init_scale();
            let users = DenseEmbeddingMatrix::uniform(dataset.num_users(), r, s, &mut rng);
            let items = DenseEmbeddingMatrix::uniform(dataset.num_items(), r, s, &mut rng);
            (users, items, 1)
        }
    };
    let sampler_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_5a3b);
    let alpha = config.alpha();
    let iters = config
        .iters_per_epoch
        .unwrap_or_else(|| dataset.num_train_interactions().div_ceil(config.batch_size));
    let last_epoch = first_epoch + config.num_epochs - 1;
    let validate = dataset.has_held_out();

    let adam = Adam::new(config.learning_rate);
    let mut user_moments = Moments::for_matrix(&users);
    let mut item_moments = Moments::for_matrix(&items);
    let mut ws = Workspace::new(&users, &items);
    let sampler = TripletSampler::uniform(dataset)?;

    let mut curve = TrainingCurve::default();
    let mut best: Option<(f64, usize, DenseEmbeddingMatrix, DenseEmbeddingMatrix)> = None;
    let mut step = 0u64;

    std::thread::scope(|scope| -> Result<()> {
        let mut source = BatchSource::new(scope, sampler, sampler_rng, config.batch_size, config.prefetch);
        for epoch in first_epoch..=last_epoch {
            let beta = config.beta_schedule.beta(epoch);
            let (mut surrogate, mut desired, mut reg, mut triples) = (0.0, 0.0, 0.0, 0usize);
            for _ in 0..iters {
                let (batch, _) = source.next()?;
                desired += desired_loss(&batch, &users, &items, alpha)?;
                let (data, r) = accumulate(&mut ws, &batch, &users, &items, alpha, beta, config.lambda)?;
                if !(data + r).is_finite() {
                    return Err(Error::Diverged { epoch, loss: data + r });
                }
                surrogate += data;
                reg += r;
                triples += batch.len();
                step += 1;
                adam.update_rows(&mut users, &ws.user_grads, &mut user_moments, step);
                adam.update_rows(&mut items, &ws.item_grads, &mut item_moments, step);
            }
            users.ensure_finite("user embedding")?;
            items.ensure_finite("item embedding")?;

            let mut stats = EpochStats {
                epoch,
                beta,
                surrogate_loss: surrogate / triples as f64,
                desired_loss: desired / triples as f64,
                regularization: reg / triples as f64,
                quantization_error: quantization_error(&users, &items, beta),
                validation_hr: None,
            };
            let done_epochs = epoch - first_epoch + 1;
            let mut stop = false;
            if validate && (done_epochs % config.eval_every == 0 || epoch == last_epoch) {
                let user_codes = binarize(&users)?;
                let item_codes = binarize(&items)?;
                let hr = evaluate_linear_codes(&user_codes, &item_codes, dataset, config.validation_cutoff, Split::Valid)?.hr;
                stats.validation_hr = Some(hr);
                match &best {
                    Some((best_hr, _, _, _)) if hr <= *best_hr => {}
                    _ => best = Some((hr, epoch, users.clone(), items.clone())),
                }
                if let (Some(patience), Some((_, best_epoch, _, _))) = (config.patience, &best) {
                    stop = epoch - best_epoch >= patience;
                }
            }
            curve.epochs.push(stats);
            if stop {
                break;
            }
        }
        Ok(())
    })?;

    let trained = curve.epochs.last().map_or(first_epoch - 1, |e| e.epoch);
    let (best_epoch, users, items) = match best {
        Some((_, epoch, u, i)) => (epoch, u, i),
        None => (trained, users, items),
    };
    Ok(HashRecTraining {
        model: HashRecModel::from_embeddings(users, items, best_epoch)?,
        curve,
        best_epoch,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::Triple;

    fn tiny() -> (TripletBatch, DenseEmbeddingMatrix, DenseEmbeddingMatrix) {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let users = DenseEmbeddingMatrix::uniform(2, 8, 1.0, &mut rng);
        let items = DenseEmbeddingMatrix::uniform(3, 8, 1.0, &mut rng);
        let batch = TripletBatch {
            triples: vec![
                Triple { user: 0, pos: 0, neg: 1 },
                Triple { user: 1, pos: 2, neg: 0 },
                Triple { user: 0, pos: 0, neg: 2 },
            ],
        };
        (batch, users, items)
    }

    #[test]
    fn symmetric_triple_costs_ln2() {
        let users = DenseEmbeddingMatrix::from_vec(1, 8, vec![0.3; 8]).unwrap();
        let items = DenseEmbeddingMatrix::from_vec(2, 8, vec![0.3; 16]).unwrap();
        let batch = TripletBatch {
            triples: vec![Triple { user: 0, pos: 0, neg: 1 }],
        };
        let out = surrogate_loss(&batch, &users, &items, 10.0 / 8.0, 2.0, 0.0).unwrap();
        assert!((out.loss - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn zero_embeddings_give_ln2_desired_loss() {
        let users = DenseEmbeddingMatrix::zeros(1, 8);
        let items = DenseEmbeddingMatrix::zeros(2, 8);
        let batch = TripletBatch {
            triples: vec![Triple { user: 0, pos: 0, neg: 1 }; 3],
        };
        let l = desired_loss(&batch, &users, &items, 1.0).unwrap();
        assert!((l - 3.0 * 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn saturation_limit() {
        let r = 8;
        let users = DenseEmbeddingMatrix::from_vec(1, r, vec![1.0; r]).unwrap();
        let mut iv = vec![1.0; r];
        iv.extend(vec![0.0; r]);
        // ⟨b, d_i⟩ − ⟨b, d_j⟩ = r with d_j = 0.
        let items = DenseEmbeddingMatrix::from_vec(2, r, iv).unwrap();
        let batch = TripletBatch {
            triples: vec![Triple { user: 0, pos: 0, neg: 1 }],
        };
        let alpha = 10.0 / r as f64;
        let out = surrogate_loss(&batch, &users, &items, alpha, 1e3, 0.0).unwrap();
        assert!((out.loss - neg_log_sigmoid(alpha * r as f64)).abs() < 1e-9);
    }

    #[test]
    fn sign_embeddings_match_saturated_surrogate() {
        let (batch, users, items) = tiny();
        let su = DenseEmbeddingMatrix::from_vec(2, 8, users.values().iter().map(|&x| sgn(x)).collect()).unwrap();
        let si = DenseEmbeddingMatrix::from_vec(3, 8, items.values().iter().map(|&x| sgn(x)).collect()).unwrap();
        let d = desired_loss(&batch, &su, &si, 1.25).unwrap();
        let s = surrogate_loss(&batch, &su, &si, 1.25, 1e3, 0.0).unwrap().loss;
        assert!((d - s).abs() < 1e-9);
    }

    #[test]
    fn only_touched_rows_have_gradients() {
        let (mut batch, users, items) = tiny();
        batch.triples.truncate(1);
        let out = surrogate_loss(&batch, &users, &items, 1.0, 1.0, 0.1).unwrap();
        assert_eq!(out.user_grads.touched(), &[0]);
        assert_eq!(out.item_grads.touched(), &[0, 1]);
        assert!(out.item_grads.row(2).iter().all(|&g| g == 0.0));
    }

    #[test]
    fn non_finite_entries_are_rejected() {
        let (batch, mut users, items) = tiny();
        users.row_mut(1)[3] = f64::INFINITY;
        assert!(matches!(surrogate_loss(&batch, &users, &items, 1.0, 1.0, 0.0), Err(Error::Numeric(_))));
        assert!(matches!(desired_loss(&batch, &users, &items, 1.0), Err(Error::Numeric(_))));
    }

    #[test]
    fn beta_schedule_is_floored() {
        let s = BetaSchedule::default();
        assert_eq!(s.beta(1), BETA_FLOOR);
        assert!((s.beta(2) - 10f64.sqrt()).abs() < 1e-12);
        assert!((s.beta(11) - 10.0).abs() < 1e-12);
    }

    #[test]
    fn quantization_error_shrinks_with_beta() {
        let (_, users, items) = tiny();
        let lo = quantization_error(&users, &items, 1.0);
        let hi = quantization_error(&users, &items, 10.0);
        assert!(hi < lo);
    }

    #[test]
    fn config_defaults() {
        let c = HashRecConfig::default();
        assert_eq!(c.bits, 64);
        assert!((c.alpha() - 10.0 / 64.0).abs() < 1e-15);
        assert_eq!(c.batch_size, 10_000);
        assert!(HashRecConfig { bits: 12, ..c.clone() }.validate().is_err());
        assert!(HashRecConfig { alpha: Some(-1.0), ..c }.validate().is_err());
    }

    #[test]
    fn model_round_trip() {
        let (_, users, items) = tiny();
        let model = HashRecModel::from_embeddings(users, items, 7).unwrap();
        let mut buf = Vec::new();
        model.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"CGHR");
        assert_eq!(HashRecModel::read_from(&buf[..]).unwrap(), model);
    }
}
