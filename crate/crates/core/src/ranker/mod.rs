//! Re-ranking models, their training loop, and candidate re-ranking.

mod cml;
mod mf;
mod neumf;

pub use cml::{cml_loss, MetricEmbedding};
pub use mf::{bpr_loss, MatrixFactorization};
pub use neumf::{neumf_loss, Dense, NeuMf, NeuMfGrads, NeuMfLoss};

use std::cmp::Ordering;
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::adam::RowGrads;
use crate::candidates::CandidateSet;
use crate::codes::{binarize, hamming, BinaryCodeMatrix};
use crate::container::{self, Decoder, Encoder, RANKER_MAGIC};
use crate::dataset::{InteractionDataset, ItemId, Split, UserId};
use crate::embedding::DenseEmbeddingMatrix;
use crate::error::{Error, Result};
use crate::eval::{evaluate_full, evaluate_reranked};
use crate::sampling::{BatchSource, CandidatePool, SamplerStats, TripletBatch, TripletSampler};

const RANKER_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum RankerKind {
    BprMf,
    Cml,
    NeuMf,
    Pop,
    /// Signs of BPR-MF embeddings.
    BprB,
    /// Learned codes scored by their inner product.
    HashRec,
}

impl RankerKind {
    pub const ALL: [RankerKind; 6] = [
        RankerKind::BprMf,
        RankerKind::Cml,
        RankerKind::NeuMf,
        RankerKind::Pop,
        RankerKind::BprB,
        RankerKind::HashRec,
    ];

    fn tag(self) -> u8 {
        match self {
            RankerKind::BprMf => 0,
            RankerKind::Cml => 1,
            RankerKind::NeuMf => 2,
            RankerKind::Pop => 3,
            RankerKind::BprB => 4,
            RankerKind::HashRec => 5,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            RankerKind::BprMf => "bpr-mf",
            RankerKind::Cml => "cml",
            RankerKind::NeuMf => "neumf",
            RankerKind::Pop => "pop",
            RankerKind::BprB => "bpr-b",
            RankerKind::HashRec => "hashrec",
        }
    }
}

impl fmt::Display for RankerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RankerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.to_ascii_lowercase().replace('_', "-");
        RankerKind::ALL
            .into_iter()
            .find(|k| k.name() == norm || k.name().replace('-', "") == norm)
            .ok_or_else(|| Error::Config(format!("unknown ranker {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RerankConfig {
    /// Embedding size (BPR-MF, CML; BPR-B quantizes BPR-MF trained at this size).
    pub k: usize,
    /// Embedding size of each NeuMF pair.
    pub neumf_k: usize,
    pub lambda: f64,
    /// Probability of drawing a negative from the user's candidates.
    pub h: f64,
    pub c: usize,
    pub margin: f64,
    /// Hidden layer widths of the NeuMF tower.
    pub mlp_arch: Vec<usize>,
    pub num_epochs: usize,
    /// `None` means `⌈|train| / batch_size⌉`.
    pub iters_per_epoch: Option<usize>,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub eval_every: usize,
    pub patience: Option<usize>,
    /// Cutoff of the validation hit rate.
    pub validation_cutoff: usize,
    /// Half-width of the uniform embedding initialization; `None` picks a
    /// model-specific default.
    pub init_scale: Option<f64>,
    pub prefetch: usize,
}

impl Default for RerankConfig {
    fn default() -> Self {
        RerankConfig {
            k: 50,
            neumf_k: 25,
            lambda: 0.001,
            h: 0.5,
            c: 200,
            margin: 0.5,
            mlp_arch: vec![200, 100, 50, 25],
            num_epochs: 100,
            iters_per_epoch: None,
            batch_size: 10_000,
            learning_rate: 0.001,
            seed: 0,
            eval_every: 10,
            patience: Some(20),
            validation_cutoff: 10,
            init_scale: None,
            prefetch: 2,
        }
    }
}

impl RerankConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.into()));
        if !(0.0..=1.0).contains(&self.h) {
            return bad("h must lie in [0, 1]");
        }
        if self.k == 0 || self.neumf_k == 0 || self.batch_size == 0 || self.eval_every == 0 || self.iters_per_epoch == Some(0) {
            return bad("sizes, batch size, iterations and evaluation interval must be positive");
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad("lambda must be non-negative");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning rate must be positive");
        }
        if !(self.margin > 0.0 && self.margin.is_finite()) {
            return bad("margin must be positive");
        }
        if self.mlp_arch.is_empty() || self.mlp_arch.contains(&0) {
            return bad("MLP architecture needs positive widths");
        }
        if let Some(s) = self.init_scale {
            if !(s > 0.0 && s.is_finite()) {
                return bad("init scale must be positive");
            }
        }
        Ok(())
    }
}

/// A trained scorer.
#[derive(Clone, Debug, PartialEq)]
pub enum RankerModel {
    BprMf(MatrixFactorization),
    Cml(MetricEmbedding),
    NeuMf(NeuMf),
    /// Training-split interaction counts per item.
    Pop(Vec<u32>),
    BprB { user: BinaryCodeMatrix, item: BinaryCodeMatrix },
    HashRec { user: BinaryCodeMatrix, item: BinaryCodeMatrix },
}

/// Reusable per-thread buffers for scoring many items of one user.
#[derive(Default)]
pub struct ScoreScratch {
    neumf: Option<neumf::Trace>,
}

impl RankerModel {
    pub fn kind(&self) -> RankerKind {
        match self {
            RankerModel::BprMf(_) => RankerKind::BprMf,
            RankerModel::Cml(_) => RankerKind::Cml,
            RankerModel::NeuMf(_) => RankerKind::NeuMf,
            RankerModel::Pop(_) => RankerKind::Pop,
            RankerModel::BprB { .. } => RankerKind::BprB,
            RankerModel::HashRec { .. } => RankerKind::HashRec,
        }
    }

    /// Ranker over learned codes.
    pub fn from_codes(user: BinaryCodeMatrix, item: BinaryCodeMatrix) -> Result<Self> {
        if user.bits() != item.bits() {
            return Err(Error::LengthMismatch {
                left: user.bits(),
                right: item.bits(),
            });
        }
        Ok(RankerModel::HashRec { user, item })
    }

    pub fn popularity(dataset: &InteractionDataset) -> Self {
        RankerModel::Pop(dataset.item_popularity())
    }

    /// Users the model can score; `None` for user-independent models.
    pub fn num_users(&self) -> Option<usize> {
        match self {
            RankerModel::BprMf(m) => Some(m.user.rows()),
            RankerModel::Cml(m) => Some(m.user.rows()),
            RankerModel::NeuMf(m) => Some(m.num_users()),
            RankerModel::Pop(_) => None,
            RankerModel::BprB { user, .. } | RankerModel::HashRec { user, .. } => Some(user.rows()),
        }
    }

    pub fn num_items(&self) -> usize {
        match self {
            RankerModel::BprMf(m) => m.item.rows(),
            RankerModel::Cml(m) => m.item.rows(),
            RankerModel::NeuMf(m) => m.num_items(),
            RankerModel::Pop(c) => c.len(),
            RankerModel::BprB { item, .. } | RankerModel::HashRec { item, .. } => item.rows(),
        }
    }

    fn check_user(&self, u: UserId) -> Result<()> {
        match self.num_users() {
            Some(n) if u as usize >= n => Err(Error::OutOfRange {
                what: "user",
                id: u as usize,
                bound: n,
            }),
            _ => Ok(()),
        }
    }

    fn check_item(&self, i: ItemId) -> Result<()> {
        let n = self.num_items();
        if i as usize >= n {
            return Err(Error::OutOfRange {
                what: "item",
                id: i as usize,
                bound: n,
            });
        }
        Ok(())
    }

    pub fn score(&self, u: UserId, i: ItemId) -> Result<f64> {
        self.check_user(u)?;
        self.check_item(i)?;
        let mut out = Vec::with_capacity(1);
        self.score_unchecked(u, &[i], &mut out, &mut ScoreScratch::default());
        Ok(out[0])
    }

    /// Scores of `items` for `u`, written to `out` in the same order.
    pub fn score_into(&self, u: UserId, items: &[ItemId], out: &mut Vec<f64>, scratch: &mut ScoreScratch) -> Result<()> {
        self.check_user(u)?;
        if let Some(&i) = items.iter().find(|&&i| i as usize >= self.num_items()) {
            self.check_item(i)?;
        }
        self.score_unchecked(u, items, out, scratch);
        Ok(())
    }

    /// Scores of every item for `u`; `out[i]` is the score of item `i`.
    pub fn score_all_into(&self, u: UserId, out: &mut Vec<f64>, scratch: &mut ScoreScratch) -> Result<()> {
        self.check_user(u)?;
        let all: Vec<ItemId> = (0..self.num_items() as ItemId).collect();
        self.score_unchecked(u, &all, out, scratch);
        Ok(())
    }

    fn score_unchecked(&self, u: UserId, items: &[ItemId], out: &mut Vec<f64>, scratch: &mut ScoreScratch) {
        let u = u as usize;
        out.clear();
        match self {
            RankerModel::BprMf(m) => out.extend(items.iter().map(|&i| m.score(u, i as usize))),
            RankerModel::Cml(m) => out.extend(items.iter().map(|&i| m.score(u, i as usize))),
            RankerModel::NeuMf(m) => {
                let t = scratch.neumf.get_or_insert_with(|| m.trace());
                m.prepare_user(u, t);
                out.extend(items.iter().map(|&i| m.forward(u, i as usize, t)));
            }
            RankerModel::Pop(c) => out.extend(items.iter().map(|&i| c[i as usize] as f64)),
            RankerModel::BprB { user, item } | RankerModel::HashRec { user, item } => {
                let bits = user.bits() as f64;
                let b = user.row(u);
                out.extend(items.iter().map(|&i| bits - 2.0 * hamming(b, item.row(i as usize)) as f64));
            }
        }
    }

    pub fn ensure_finite(&self) -> Result<()> {
        match self {
            RankerModel::BprMf(m) => {
                m.user.ensure_finite("user embedding")?;
                m.item.ensure_finite("item embedding")
            }
            RankerModel::Cml(m) => {
                m.user.ensure_finite("user embedding")?;
                m.item.ensure_finite("item embedding")
            }
            RankerModel::NeuMf(m) => m.ensure_finite(),
            _ => Ok(()),
        }
    }

    pub fn write_to<W: Write>(&self, w: W) -> Result<()> {
        let mut enc = Encoder::new(w, RANKER_MAGIC, RANKER_VERSION)?;
        enc.u8(self.kind().tag())?;
        match self {
            RankerModel::BprMf(m) => {
                m.user.encode(&mut enc)?;
                m.item.encode(&mut enc)?;
            }
            RankerModel::Cml(m) => {
                enc.f64(m.margin)?;
                m.user.encode(&mut enc)?;
                m.item.encode(&mut enc)?;
            }
            RankerModel::NeuMf(m) => {
                m.gmf_user.encode(&mut enc)?;
                m.gmf_item.encode(&mut enc)?;
                m.mlp_user.encode(&mut enc)?;
                m.mlp_item.encode(&mut enc)?;
                enc.usize(m.layers.len())?;
                for l in &m.layers {
                    enc.usize(l.inputs)?;
                    enc.usize(l.outputs)?;
                    enc.f64s(&l.weights)?;
                    enc.f64s(&l.bias)?;
                }
                enc.f64s(&m.output)?;
            }
            RankerModel::Pop(c) => enc.u32s(c)?,
            RankerModel::BprB { user, item } | RankerModel::HashRec { user, item } => {
                user.encode(&mut enc)?;
                item.encode(&mut enc)?;
            }
        }
        enc.finish()?;
        Ok(())
    }

    pub fn read_from<R: Read>(r: R) -> Result<Self> {
        let mut dec = Decoder::new(r, RANKER_MAGIC, RANKER_VERSION)?;
        let tag = dec.u8()?;
        let kind = RankerKind::ALL
            .into_iter()
            .find(|k| k.tag() == tag)
            .ok_or_else(|| Error::Format(format!("unknown ranker tag {tag}")))?;
        let shape_err = |_| Error::Format("inconsistent ranker shapes".into());
        let model = match kind {
            RankerKind::BprMf => {
                let user = DenseEmbeddingMatrix::decode(&mut dec)?;
                let item = DenseEmbeddingMatrix::decode(&mut dec)?;
                same_dim(user.dim(), item.dim()).map_err(shape_err)?;
                RankerModel::BprMf(MatrixFactorization { user, item })
            }
            RankerKind::Cml => {
                let margin = dec.f64()?;
                let user = DenseEmbeddingMatrix::decode(&mut dec)?;
                let item = DenseEmbeddingMatrix::decode(&mut dec)?;
                same_dim(user.dim(), item.dim()).map_err(shape_err)?;
                RankerModel::Cml(MetricEmbedding { user, item, margin })
            }
            RankerKind::NeuMf => {
                let gmf_user = DenseEmbeddingMatrix::decode(&mut dec)?;
                let gmf_item = DenseEmbeddingMatrix::decode(&mut dec)?;
                let mlp_user = DenseEmbeddingMatrix::decode(&mut dec)?;
                let mlp_item = DenseEmbeddingMatrix::decode(&mut dec)?;
                let depth = dec.usize()?;
                if depth > 1024 {
                    return Err(Error::Format("implausible layer count".into()));
                }
                let mut layers = Vec::with_capacity(depth);
                for _ in 0..depth {
                    let inputs = dec.usize()?;
                    let outputs = dec.usize()?;
                    let weights = dec.f64s()?;
                    let bias = dec.f64s()?;
                    layers.push(Dense {
                        inputs,
                        outputs,
                        weights,
                        bias,
                    });
                }
                let output = dec.f64s()?;
                let m = NeuMf {
                    gmf_user,
                    gmf_item,
                    mlp_user,
                    mlp_item,
                    layers,
                    output,
                };
                m.check_shapes().map_err(shape_err)?;
                RankerModel::NeuMf(m)
            }
            RankerKind::Pop => RankerModel::Pop(dec.u32s()?),
            RankerKind::BprB | RankerKind::HashRec => {
                let user = BinaryCodeMatrix::decode(&mut dec)?;
                let item = BinaryCodeMatrix::decode(&mut dec)?;
                same_dim(user.bits(), item.bits()).map_err(shape_err)?;
                if kind == RankerKind::BprB {
                    RankerModel::BprB { user, item }
                } else {
                    RankerModel::HashRec { user, item }
                }
            }
        };
        dec.finish()?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write_to(container::create(path)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(container::open(path)?)
    }
}

fn same_dim(a: usize, b: usize) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(Error::LengthMismatch { left: a, right: b })
    }
}

/// Loss and embedding gradients of a pairwise model on one batch.
#[derive(Clone, Debug)]
pub struct EmbeddingLoss {
    pub loss: f64,
    pub user_grads: RowGrads,
    pub item_grads: RowGrads,
}

impl EmbeddingLoss {
    fn zeros(user: &DenseEmbeddingMatrix, item: &DenseEmbeddingMatrix) -> Self {
        EmbeddingLoss {
            loss: 0.0,
            user_grads: RowGrads::for_matrix(user),
            item_grads: RowGrads::for_matrix(item),
        }
    }
}

pub(crate) fn check_batch(batch: &TripletBatch, users: usize, items: usize) -> Result<()> {
    for t in &batch.triples {
        if t.user as usize >= users {
            return Err(Error::OutOfRange {
                what: "user",
                id: t.user as usize,
                bound: users,
            });
        }
        if let Some(&i) = [t.pos, t.neg].iter().find(|&&i| i as usize >= items) {
            return Err(Error::OutOfRange {
                what: "item",
                id: i as usize,
                bound: items,
            });
        }
    }
    Ok(())
}

/// Orders `(item, score)` by descending score, then ascending id. Adding
/// `0.0` folds `-0.0` into `+0.0`, which `total_cmp` would otherwise split.
#[inline]
pub(crate) fn rank_order(a: (ItemId, f64), b: (ItemId, f64)) -> Ordering {
    (b.1 + 0.0).total_cmp(&(a.1 + 0.0)).then(a.0.cmp(&b.0))
}

/// The `n` best-scoring candidates that are not in `exclude` (sorted
/// ascending), ties by ascending id.
pub fn rerank(model: &RankerModel, u: UserId, candidates: &[ItemId], n: usize, exclude: &[ItemId]) -> Result<Vec<ItemId>> {
    let kept: Vec<ItemId> = candidates
        .iter()
        .copied()
        .filter(|i| exclude.binary_search(i).is_err())
        .collect();
    let mut scores = Vec::with_capacity(kept.len());
    model.score_into(u, &kept, &mut scores, &mut ScoreScratch::default())?;
    let mut pairs: Vec<(ItemId, f64)> = kept.into_iter().zip(scores).collect();
    if n < pairs.len() {
        if n == 0 {
            return Ok(Vec::new());
        }
        pairs.select_nth_unstable_by(n - 1, |a, b| rank_order(*a, *b));
        pairs.truncate(n);
    }
    pairs.sort_unstable_by(|a, b| rank_order(*a, *b));
    Ok(pairs.into_iter().map(|(i, _)| i).collect())
}

/// BPR-B: the signs of a BPR-MF model's embeddings.
pub fn quantize_to_bprb(model: &RankerModel) -> Result<RankerModel> {
    match model {
        RankerModel::BprMf(m) => Ok(RankerModel::BprB {
            user: binarize(&m.user)?,
            item: binarize(&m.item)?,
        }),
        other => Err(Error::KindMismatch {
            expected: RankerKind::BprMf.name(),
            actual: other.kind().name(),
        }),
    }
}

/// One row of a ranker training curve.
#[derive(Clone, Debug, PartialEq)]
pub struct RankerEpoch {
    pub epoch: usize,
    /// Mean loss per triple.
    pub loss: f64,
    pub validation_hr: Option<f64>,
    pub candidate_fraction: f64,
}

#[derive(Clone, Debug)]
pub struct RankerTraining {
    pub model: RankerModel,
    pub curve: Vec<RankerEpoch>,
    pub best_epoch: usize,
    /// Branch counts of every sampled negative.
    pub sampler: SamplerStats,
}

enum Trainer {
    Mf(mf::MfTrainer),
    Cml(cml::CmlTrainer),
    NeuMf(Box<neumf::NeuMfTrainer>),
}

impl Trainer {
    fn step(&mut self, batch: &TripletBatch, step: u64) -> Result<f64> {
        match self {
            Trainer::Mf(t) => t.step(batch, step),
            Trainer::Cml(t) => t.step(batch, step),
            Trainer::NeuMf(t) => t.step(batch, step),
        }
    }

    fn snapshot(&self) -> RankerModel {
        match self {
            Trainer::Mf(t) => RankerModel::BprMf(t.model.clone()),
            Trainer::Cml(t) => RankerModel::Cml(t.model.clone()),
            Trainer::NeuMf(t) => RankerModel::NeuMf(t.model.clone()),
        }
    }
}

/// Trains a ranker of the given kind. With `candidates`, negatives are drawn
/// from each user's candidates with probability `config.h` and validation
/// re-ranks those candidates; otherwise sampling is uniform and validation
/// ranks every item.
pub fn train_ranker(
    dataset: &InteractionDataset,
    kind: RankerKind,
    config: &RerankConfig,
    candidates: Option<&CandidateSet>,
) -> Result<RankerTraining> {
    config.validate()?;
    if dataset.num_users() == 0 || dataset.num_train_interactions() == 0 {
        return Err(Error::EmptyDataset);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (nu, ni) = (dataset.num_users(), dataset.num_items());
    let default_scale = 0.01;
    let trainer = match kind {
        RankerKind::Pop => {
            return Ok(RankerTraining {
                model: RankerModel::popularity(dataset),
                curve: Vec::new(),
                best_epoch: 0,
                sampler: SamplerStats::default(),
            })
        }
        RankerKind::HashRec => {
            return Err(Error::Config("code rankers are built from trained codes, not trained here".into()))
        }
        RankerKind::BprB => {
            let base = train_ranker(dataset, RankerKind::BprMf, config, candidates)?;
            return Ok(RankerTraining {
                model: quantize_to_bprb(&base.model)?,
                ..base
            });
        }
        RankerKind::BprMf => {
            let s = config.init_scale.unwrap_or(default_scale);
            let model = MatrixFactorization {
                user: DenseEmbeddingMatrix::uniform(nu, config.k, s, &mut rng),
                item: DenseEmbeddingMatrix::uniform(ni, config.k, s, &mut rng),
            };
            Trainer::Mf(mf::MfTrainer::new(model, config.lambda, config.learning_rate))
        }
        RankerKind::Cml => {
            // Rows of norm about 0.58, inside the unit ball.
            let s = config.init_scale.unwrap_or(1.0 / (config.k as f64).sqrt());
            let model = MetricEmbedding {
                user: DenseEmbeddingMatrix::uniform(nu, config.k, s, &mut rng),
                item: DenseEmbeddingMatrix::uniform(ni, config.k, s, &mut rng),
                margin: config.margin,
            };
            Trainer::Cml(cml::CmlTrainer::new(model, config.lambda, config.learning_rate))
        }
        RankerKind::NeuMf => {
            let s = config.init_scale.unwrap_or(default_scale);
            let model = NeuMf::new(nu, ni, config.neumf_k, &config.mlp_arch, s, &mut rng)?;
            Trainer::NeuMf(Box::new(neumf::NeuMfTrainer::new(model, config.lambda, config.learning_rate)))
        }
    };
    fit(dataset, trainer, config, candidates)
}

fn fit(dataset: &InteractionDataset, mut trainer: Trainer, config: &RerankConfig, candidates: Option<&CandidateSet>) -> Result<RankerTraining> {
    let pool = candidates.map(|c| CandidatePool::new(dataset, c)).transpose()?;
    let sampler = match &pool {
        Some(p) => TripletSampler::candidate_oriented(dataset, p, config.h)?,
        None => TripletSampler::uniform(dataset)?,
    };
    let sampler_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_5a3b);
    let iters = config
        .iters_per_epoch
        .unwrap_or_else(|| dataset.num_train_interactions().div_ceil(config.batch_size));
    let validate = dataset.has_held_out();
    let cutoff = config.validation_cutoff;
    let evaluate = |model: &RankerModel| -> Result<f64> {
        Ok(match candidates {
            Some(c) => evaluate_reranked(model, dataset, c, cutoff, Split::Valid)?.hr,
            None => evaluate_full(model, dataset, cutoff, Split::Valid)?.hr,
        })
    };

    let mut curve = Vec::new();
    let mut totals = SamplerStats::default();
    let mut best: Option<(f64, usize, RankerModel)> = None;
    let mut step = 0u64;
    std::thread::scope(|scope| -> Result<()> {
        let mut source = BatchSource::new(scope, sampler, sampler_rng, config.batch_size, config.prefetch);
        for epoch in 1..=config.num_epochs {
            let mut epoch_stats = SamplerStats::default();
            let (mut loss, mut triples) = (0.0, 0usize);
            for _ in 0..iters {
                let (batch, stats) = source.next()?;
                epoch_stats.merge(&stats);
                step += 1;
                let l = trainer.step(&batch, step)?;
                if !l.is_finite() {
                    return Err(Error::Diverged { epoch, loss: l });
                }
                loss += l;
                triples += batch.len();
            }
            totals.merge(&epoch_stats);
            let mut row = RankerEpoch {
                epoch,
                loss: loss / triples.max(1) as f64,
                validation_hr: None,
                candidate_fraction: epoch_stats.candidate_fraction(),
            };
            let mut stop = false;
            if epoch % config.eval_every == 0 || epoch == config.num_epochs {
                let model = trainer.snapshot();
                model.ensure_finite()?;
                if validate {
                    let hr = evaluate(&model)?;
                    row.validation_hr = Some(hr);
                    match &best {
                        Some((best_hr, _, _)) if hr <= *best_hr => {}
                        _ => best = Some((hr, epoch, model)),
                    }
                    if let (Some(patience), Some((_, best_epoch, _))) = (config.patience, &best) {
                        stop = epoch - best_epoch >= patience;
                    }
                }
            }
            curve.push(row);
            if stop {
                break;
            }
        }
        Ok(())
    })?;

    let (model, best_epoch) = match best {
        Some((_, epoch, model)) => (model, epoch),
        None => (trainer.snapshot(), curve.len()),
    };
    model.ensure_finite()?;
    Ok(RankerTraining {
        model,
        curve,
        best_epoch,
        sampler: totals,
    })
}
