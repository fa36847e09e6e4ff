//! Leave-one-out HR@N and MRR@N.
//!
//! Every user contributes the position of the held-out item in a ranked
//! pool; the user's training items never enter the pool. Ties in score are
//! broken by ascending item id throughout.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::candidates::{generate_candidate_lists, CandidateSet};
use crate::codes::BinaryCodeMatrix;
use crate::dataset::{InteractionDataset, ItemId, Split, UserId};
use crate::error::{Error, Result};
use crate::mih::{linear_scan_topc, MultiIndexHashTable};
use crate::ranker::{rank_order, RankerModel, ScoreScratch};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n: usize,
    pub hr: f64,
    pub mrr: f64,
    pub num_users: usize,
    /// Per user, the 1-based position of the held-out item in the ranked
    /// pool, or `None` if it never entered the pool.
    pub ranks: Vec<Option<u32>>,
}

impl EvalReport {
    /// Metrics at cutoff `n` from per-user positions. Summation runs in user
    /// order, so the result does not depend on how ranks were computed.
    pub fn from_ranks(n: usize, ranks: Vec<Option<u32>>) -> Self {
        let (mut hits, mut rr) = (0usize, 0.0);
        for &r in ranks.iter().flatten() {
            if (r as usize) <= n {
                hits += 1;
                rr += 1.0 / r as f64;
            }
        }
        let users = ranks.len();
        let denom = users.max(1) as f64;
        EvalReport {
            n,
            hr: hits as f64 / denom,
            mrr: rr / denom,
            num_users: users,
            ranks,
        }
    }

    /// The same rankings measured at another cutoff.
    pub fn at(&self, n: usize) -> Self {
        Self::from_ranks(n, self.ranks.clone())
    }

    pub fn to_json(&self, include_ranks: bool) -> String {
        let value = if include_ranks {
            serde_json::to_value(self)
        } else {
            serde_json::to_value(EvalReport {
                ranks: Vec::new(),
                ..self.clone()
            })
        };
        let mut value = value.expect("report serializes");
        if !include_ranks {
            if let Some(obj) = value.as_object_mut() {
                obj.remove("ranks");
            }
        }
        serde_json::to_string_pretty(&value).expect("report serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Format(e.to_string()))
    }
}

/// Aligned text table over several labelled reports.
pub fn format_table(rows: &[(String, EvalReport)]) -> String {
    let width = rows.iter().map(|(l, _)| l.len()).max().unwrap_or(0).max(6);
    let mut out = format!("{:<width$}  {:>6}  {:>8}  {:>8}  {:>7}\n", "method", "N", "HR@N", "MRR@N", "users");
    for (label, r) in rows {
        out.push_str(&format!(
            "{:<width$}  {:>6}  {:>8.4}  {:>8.4}  {:>7}\n",
            label, r.n, r.hr, r.mrr, r.num_users
        ));
    }
    out
}

fn require_held_out(dataset: &InteractionDataset) -> Result<()> {
    if !dataset.has_held_out() {
        return Err(Error::Precondition("dataset has no held-out items".into()));
    }
    Ok(())
}

fn check_model(model: &RankerModel, dataset: &InteractionDataset) -> Result<()> {
    if model.num_items() != dataset.num_items() {
        return Err(Error::LengthMismatch {
            left: model.num_items(),
            right: dataset.num_items(),
        });
    }
    match model.num_users() {
        Some(n) if n != dataset.num_users() => Err(Error::LengthMismatch {
            left: n,
            right: dataset.num_users(),
        }),
        _ => Ok(()),
    }
}

/// Position of `target` among `pool` (which must contain it) by score.
fn position(pool: impl Iterator<Item = (ItemId, f64)>, target: (ItemId, f64)) -> u32 {
    1 + pool
        .filter(|&(i, s)| i != target.0 && rank_order((i, s), target).is_lt())
        .count() as u32
}

/// Ranks every non-training item.
pub fn evaluate_full(model: &RankerModel, dataset: &InteractionDataset, n: usize, split: Split) -> Result<EvalReport> {
    require_held_out(dataset)?;
    check_model(model, dataset)?;
    let ranks = (0..dataset.num_users() as UserId)
        .into_par_iter()
        .map_init(
            || (ScoreScratch::default(), Vec::new()),
            |(scratch, scores), u| -> Result<Option<u32>> {
                model.score_all_into(u, scores, scratch)?;
                let t = dataset.held_out(u, split);
                let train = dataset.train(u);
                let pool = scores
                    .iter()
                    .enumerate()
                    .map(|(i, &s)| (i as ItemId, s))
                    .filter(|(i, _)| train.binary_search(i).is_err());
                Ok(Some(position(pool, (t, scores[t as usize]))))
            },
        )
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport::from_ranks(n, ranks))
}

/// Ranks each user's candidates (minus training items) with `model`; a
/// held-out item outside the candidates is a miss.
pub fn evaluate_reranked(
    model: &RankerModel,
    dataset: &InteractionDataset,
    candidates: &CandidateSet,
    n: usize,
    split: Split,
) -> Result<EvalReport> {
    require_held_out(dataset)?;
    check_model(model, dataset)?;
    if candidates.num_users() != dataset.num_users() {
        return Err(Error::LengthMismatch {
            left: candidates.num_users(),
            right: dataset.num_users(),
        });
    }
    let ranks = (0..dataset.num_users() as UserId)
        .into_par_iter()
        .map_init(
            || (ScoreScratch::default(), Vec::new(), Vec::new()),
            |(scratch, pool, scores), u| -> Result<Option<u32>> {
                let t = dataset.held_out(u, split);
                let train = dataset.train(u);
                pool.clear();
                pool.extend(candidates.items(u).iter().copied().filter(|i| train.binary_search(i).is_err()));
                let Some(at) = pool.iter().position(|&i| i == t) else {
                    return Ok(None);
                };
                model.score_into(u, pool, scores, scratch)?;
                let target = (t, scores[at]);
                Ok(Some(position(pool.iter().copied().zip(scores.iter().copied()), target)))
            },
        )
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport::from_ranks(n, ranks))
}

/// Candidate retrieval followed by re-ranking, measured at `n`.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_cigar(
    user_codes: &BinaryCodeMatrix,
    index: &MultiIndexHashTable,
    model: &RankerModel,
    dataset: &InteractionDataset,
    n: usize,
    c: usize,
    l_max: usize,
    split: Split,
) -> Result<EvalReport> {
    let lists = generate_candidate_lists(index, user_codes, dataset, c, l_max)?;
    let set = CandidateSet::new(lists.into_iter().map(|l| l.items).collect());
    evaluate_reranked(model, dataset, &set, n, split)
}

/// Whether the held-out item is among each user's candidates, with its
/// position in candidate order.
pub fn evaluate_candidate_set(candidates: &CandidateSet, dataset: &InteractionDataset, c: usize, split: Split) -> Result<EvalReport> {
    require_held_out(dataset)?;
    if candidates.num_users() != dataset.num_users() {
        return Err(Error::LengthMismatch {
            left: candidates.num_users(),
            right: dataset.num_users(),
        });
    }
    let ranks = (0..dataset.num_users() as UserId)
        .map(|u| {
            let t = dataset.held_out(u, split);
            let train = dataset.train(u);
            candidates
                .items(u)
                .iter()
                .filter(|i| train.binary_search(i).is_err())
                .position(|&i| i == t)
                .map(|p| p as u32 + 1)
        })
        .collect();
    Ok(EvalReport::from_ranks(c, ranks))
}

/// HR@c of the retrieval stage alone.
pub fn evaluate_candidates(
    user_codes: &BinaryCodeMatrix,
    index: &MultiIndexHashTable,
    dataset: &InteractionDataset,
    c: usize,
    l_max: usize,
    split: Split,
) -> Result<EvalReport> {
    require_held_out(dataset)?;
    let lists = generate_candidate_lists(index, user_codes, dataset, c, l_max)?;
    let set = CandidateSet::new(lists.into_iter().map(|l| l.items).collect());
    evaluate_candidate_set(&set, dataset, c, split)
}

/// Exhaustive Hamming ranking of non-training items, measured at `c`.
pub fn evaluate_linear_codes(
    user_codes: &BinaryCodeMatrix,
    item_codes: &BinaryCodeMatrix,
    dataset: &InteractionDataset,
    c: usize,
    split: Split,
) -> Result<EvalReport> {
    require_held_out(dataset)?;
    if user_codes.rows() != dataset.num_users() || item_codes.rows() != dataset.num_items() || user_codes.bits() != item_codes.bits() {
        return Err(Error::LengthMismatch {
            left: user_codes.rows(),
            right: dataset.num_users(),
        });
    }
    let ranks = (0..dataset.num_users() as UserId)
        .into_par_iter()
        .map(|u| {
            let train = dataset.train(u);
            let t = dataset.held_out(u, split);
            linear_scan_topc(item_codes, user_codes.row(u as usize), c + train.len())
                .items
                .into_iter()
                .filter(|i| train.binary_search(i).is_err())
                .take(c)
                .position(|i| i == t)
                .map(|p| p as u32 + 1)
        })
        .collect();
    Ok(EvalReport::from_ranks(c, ranks))
}

/// Top-`c` most popular non-training items per user.
pub fn popularity_candidates(dataset: &InteractionDataset, c: usize) -> CandidateSet {
    let ranking = dataset.popularity_ranking();
    CandidateSet::new(
        (0..dataset.num_users() as UserId)
            .map(|u| {
                let train = dataset.train(u);
                ranking
                    .iter()
                    .copied()
                    .filter(|i| train.binary_search(i).is_err())
                    .take(c)
                    .collect()
            })
            .collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metrics_from_ranks() {
        let r = EvalReport::from_ranks(10, vec![Some(3); 4]);
        assert_eq!(r.hr, 1.0);
        assert!((r.mrr - 1.0 / 3.0).abs() < 1e-15);
        let r = EvalReport::from_ranks(2, vec![Some(1), Some(3), None, Some(2)]);
        assert_eq!(r.hr, 0.5);
        assert!((r.mrr - 1.5 / 4.0).abs() < 1e-15);
        assert_eq!(EvalReport::from_ranks(5, vec![]).hr, 0.0);
    }

    #[test]
    fn json_round_trip() {
        let r = EvalReport::from_ranks(2, vec![Some(1), None]);
        assert_eq!(EvalReport::from_json(&r.to_json(true)).unwrap(), r);
        assert!(!r.to_json(false).contains("ranks"));
        let table = format_table(&[("pop".into(), r)]);
        assert!(table.lines().count() == 2 && table.contains("0.5000"));
    }

    #[test]
    fn oracle_model_is_perfect() {
        // Item scores equal 1 for the test item and 0 elsewhere.
        let ds = InteractionDataset::from_parts(4, vec![vec![0], vec![1]], vec![1, 2], vec![3, 3]).unwrap();
        let model = RankerModel::Pop(vec![0, 0, 0, 1]);
        let r = evaluate_full(&model, &ds, 1, Split::Test).unwrap();
        assert_eq!((r.hr, r.mrr), (1.0, 1.0));
        // Validation items tie with other zero-score items; lower ids go first.
        let v = evaluate_full(&model, &ds, 10, Split::Valid).unwrap();
        assert_eq!(v.ranks, vec![Some(2), Some(3)]);
    }

    #[test]
    fn candidates_outside_pool_miss() {
        let ds = InteractionDataset::from_parts(4, vec![vec![0], vec![1]], vec![1, 2], vec![3, 3]).unwrap();
        let model = RankerModel::Pop(vec![0, 0, 0, 1]);
        let set = CandidateSet::new(vec![vec![0, 1, 3], vec![2]]);
        let r = evaluate_reranked(&model, &ds, &set, 10, Split::Test).unwrap();
        assert_eq!(r.ranks, vec![Some(1), None]);
        let cs = evaluate_candidate_set(&set, &ds, 3, Split::Test).unwrap();
        assert_eq!(cs.ranks, vec![Some(2), None]);
    }

    #[test]
    fn popularity_candidates_skip_training_items() {
        let ds = InteractionDataset::from_parts(4, vec![vec![0, 1], vec![1, 2], vec![1, 3]], vec![], vec![]).unwrap();
        let set = popularity_candidates(&ds, 2);
        assert_eq!(set.items(0), &[2, 3]);
        assert_eq!(set.items(1), &[0, 3]);
    }
}
