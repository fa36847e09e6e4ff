//! Triplet sampling for pairwise training.
//!
//! A triplet `(u, i, j)` pairs a user with one of its training items `i` and
//! an item `j` outside its training set. Negatives come either from the
//! whole catalogue (rejection sampling) or, with probability `h`, from the
//! user's retrieved candidates.

use std::sync::mpsc::{sync_channel, Receiver};
use std::thread::Scope;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::candidates::CandidateSet;
use crate::dataset::{InteractionDataset, ItemId, UserId};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Triple {
    pub user: UserId,
    pub pos: ItemId,
    pub neg: ItemId,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TripletBatch {
    pub triples: Vec<Triple>,
}

impl TripletBatch {
    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }
}

/// Branch counts of the negative sampler.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SamplerStats {
    /// Negatives drawn from the user's candidates.
    pub candidate: u64,
    /// Negatives drawn from the whole catalogue.
    pub global: u64,
    /// Candidate-branch draws that fell back to the catalogue because the
    /// user had no candidate outside its training set.
    pub fallbacks: u64,
}

impl SamplerStats {
    pub fn merge(&mut self, other: &SamplerStats) {
        self.candidate += other.candidate;
        self.global += other.global;
        self.fallbacks += other.fallbacks;
    }

    pub fn candidate_fraction(&self) -> f64 {
        let total = self.candidate + self.global;
        if total == 0 {
            0.0
        } else {
            self.candidate as f64 / total as f64
        }
    }
}

/// Per-user candidates with training items removed, i.e. `C_u ∩ I_u^-`.
#[derive(Clone, Debug)]
pub struct CandidatePool {
    negatives: Vec<Vec<ItemId>>,
}

impl CandidatePool {
    pub fn new(dataset: &InteractionDataset, candidates: &CandidateSet) -> Result<Self> {
        if candidates.num_users() != dataset.num_users() {
            return Err(Error::Precondition(format!(
                "candidate set covers {} users, dataset has {}",
                candidates.num_users(),
                dataset.num_users()
            )));
        }
        let negatives = (0..dataset.num_users() as UserId)
            .map(|u| {
                candidates
                    .items(u)
                    .iter()
                    .copied()
                    .filter(|&i| !dataset.is_train(u, i))
                    .collect()
            })
            .collect();
        Ok(CandidatePool { negatives })
    }

    pub fn negatives(&self, user: UserId) -> &[ItemId] {
        &self.negatives[user as usize]
    }
}

#[derive(Clone, Copy, Debug)]
enum Negatives<'a> {
    Uniform,
    Mixed { pool: &'a CandidatePool, h: f64 },
}

#[derive(Clone, Debug)]
pub struct TripletSampler<'a> {
    dataset: &'a InteractionDataset,
    users: Vec<UserId>,
    negatives: Negatives<'a>,
}

impl<'a> TripletSampler<'a> {
    /// Negatives uniform over items outside the user's training set.
    pub fn uniform(dataset: &'a InteractionDataset) -> Result<Self> {
        let users: Vec<UserId> = (0..dataset.num_users() as UserId)
            .filter(|&u| !dataset.train(u).is_empty())
            .collect();
        if users.is_empty() {
            return Err(Error::EmptyDataset);
        }
        Ok(TripletSampler {
            dataset,
            users,
            negatives: Negatives::Uniform,
        })
    }

    /// The candidate-oriented mixture: with probability `h` the negative is
    /// uniform over the user's candidates outside its training set.
    pub fn candidate_oriented(dataset: &'a InteractionDataset, pool: &'a CandidatePool, h: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&h) {
            return Err(Error::Config(format!("sampling ratio h must lie in [0, 1], got {h}")));
        }
        let mut sampler = Self::uniform(dataset)?;
        sampler.negatives = Negatives::Mixed { pool, h };
        Ok(sampler)
    }

    pub fn dataset(&self) -> &'a InteractionDataset {
        self.dataset
    }

    fn global_negative<R: Rng>(&self, user: UserId, rng: &mut R) -> Result<ItemId> {
        let train = self.dataset.train(user);
        let n = self.dataset.num_items();
        if train.len() >= n {
            return Err(Error::NoNegative { user });
        }
        loop {
            let j = rng.random_range(0..n) as ItemId;
            if train.binary_search(&j).is_err() {
                return Ok(j);
            }
        }
    }

    pub fn sample<R: Rng>(&self, batch_size: usize, rng: &mut R, stats: &mut SamplerStats) -> Result<TripletBatch> {
        let mut triples = Vec::with_capacity(batch_size);
        for _ in 0..batch_size {
            let user = self.users[rng.random_range(0..self.users.len())];
            let train = self.dataset.train(user);
            let pos = train[rng.random_range(0..train.len())];
            let from_candidates = match self.negatives {
                Negatives::Uniform => None,
                // The boundary cases skip the coin so h = 0 reproduces the
                // uniform sampler's random stream exactly.
                Negatives::Mixed { h, .. } if h <= 0.0 => None,
                Negatives::Mixed { pool, h } if h >= 1.0 => Some(pool),
                Negatives::Mixed { pool, h } => (rng.random::<f64>() < h).then_some(pool),
            };
            let neg = match from_candidates.map(|pool| pool.negatives(user)) {
                Some(cands) if !cands.is_empty() => {
                    stats.candidate += 1;
                    cands[rng.random_range(0..cands.len())]
                }
                Some(_) => {
                    stats.fallbacks += 1;
                    stats.global += 1;
                    self.global_negative(user, rng)?
                }
                None => {
                    stats.global += 1;
                    self.global_negative(user, rng)?
                }
            };
            triples.push(Triple { user, pos, neg });
        }
        Ok(TripletBatch { triples })
    }
}

/// Draws `batch_size` uniform triplets.
pub fn sample_triplets<R: Rng>(dataset: &InteractionDataset, batch_size: usize, rng: &mut R) -> Result<TripletBatch> {
    TripletSampler::uniform(dataset)?.sample(batch_size, rng, &mut SamplerStats::default())
}

/// Draws `batch_size` triplets from the candidate-oriented mixture.
pub fn sample_candidate_oriented<R: Rng>(
    dataset: &InteractionDataset,
    pool: &CandidatePool,
    h: f64,
    batch_size: usize,
    rng: &mut R,
    stats: &mut SamplerStats,
) -> Result<TripletBatch> {
    TripletSampler::candidate_oriented(dataset, pool, h)?.sample(batch_size, rng, stats)
}

pub(crate) type Sampled = Result<(TripletBatch, SamplerStats)>;

/// Source of batches for a training loop: either sampled inline or produced
/// ahead of time by a background thread over a bounded channel. Both yield
/// the same sequence for the same seed.
pub(crate) enum BatchSource<'a> {
    Inline {
        sampler: TripletSampler<'a>,
        rng: ChaCha8Rng,
        batch_size: usize,
    },
    Prefetched(Receiver<Sampled>),
}

impl<'a> BatchSource<'a> {
    pub(crate) fn new<'scope>(
        scope: &'scope Scope<'scope, '_>,
        sampler: TripletSampler<'a>,
        mut rng: ChaCha8Rng,
        batch_size: usize,
        prefetch: usize,
    ) -> Self
    where
        'a: 'scope,
    {
        if prefetch == 0 {
            return BatchSource::Inline {
                sampler,
                rng,
                batch_size,
            };
        }
        let (tx, rx) = sync_channel(prefetch);
        scope.spawn(move || loop {
            let mut stats = SamplerStats::default();
            let item = sampler.sample(batch_size, &mut rng, &mut stats).map(|b| (b, stats));
            let failed = item.is_err();
            // The receiver hangs up when training ends.
            if tx.send(item).is_err() || failed {
                break;
            }
        });
        BatchSource::Prefetched(rx)
    }

    pub(crate) fn next(&mut self) -> Sampled {
        match self {
            BatchSource::Inline {
                sampler,
                rng,
                batch_size,
            } => {
                let mut stats = SamplerStats::default();
                sampler.sample(*batch_size, rng, &mut stats).map(|b| (b, stats))
            }
            BatchSource::Prefetched(rx) => rx
                .recv()
                .map_err(|_| Error::Precondition("sampler thread terminated".into()))?,
        }
    }
}
