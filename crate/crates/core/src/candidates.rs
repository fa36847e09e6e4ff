//! Per-user candidate sets retrieved from the code index.

use std::io::{Read, Write};
use std::path::Path;

use rayon::prelude::*;

use crate::codes::BinaryCodeMatrix;
use crate::container::{self, Decoder, Encoder, CANDIDATES_MAGIC};
use crate::dataset::{InteractionDataset, ItemId, UserId};
use crate::error::{Error, Result};
use crate::mih::{pad_candidates, CandidateList, MultiIndexHashTable};

const CANDIDATES_VERSION: u32 = 1;

/// Item lists per user, stored as CSR.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CandidateSet {
    offsets: Vec<u64>,
    items: Vec<ItemId>,
}

impl CandidateSet {
    pub fn new(lists: Vec<Vec<ItemId>>) -> Self {
        let mut offsets = Vec::with_capacity(lists.len() + 1);
        offsets.push(0);
        let mut items = Vec::with_capacity(lists.iter().map(Vec::len).sum());
        for list in lists {
            items.extend(list);
            offsets.push(items.len() as u64);
        }
        CandidateSet { offsets, items }
    }

    pub fn num_users(&self) -> usize {
        self.offsets.len().saturating_sub(1)
    }

    pub fn items(&self, user: UserId) -> &[ItemId] {
        let u = user as usize;
        &self.items[self.offsets[u] as usize..self.offsets[u + 1] as usize]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[ItemId]> {
        self.offsets.windows(2).map(|w| &self.items[w[0] as usize..w[1] as usize])
    }

    pub fn write_to<W: Write>(&self, w: W) -> Result<()> {
        let mut enc = Encoder::new(w, CANDIDATES_MAGIC, CANDIDATES_VERSION)?;
        enc.u64s(&self.offsets)?;
        enc.u32s(&self.items)?;
        enc.finish()?;
        Ok(())
    }

    pub fn read_from<R: Read>(r: R) -> Result<Self> {
        let mut dec = Decoder::new(r, CANDIDATES_MAGIC, CANDIDATES_VERSION)?;
        let offsets = dec.u64s()?;
        let items = dec.u32s()?;
        dec.finish()?;
        let ok = offsets.first() == Some(&0)
            && offsets.last() == Some(&(items.len() as u64))
            && offsets.windows(2).all(|w| w[0] <= w[1]);
        if !ok {
            return Err(Error::Format("inconsistent candidate offsets".into()));
        }
        Ok(CandidateSet { offsets, items })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write_to(container::create(path)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(container::open(path)?)
    }
}

/// Candidates for one user: the `c` nearest non-training items found by
/// the index, topped up with popular items when the probe runs dry.
///
/// The index is asked for `c + |train[u]|` items so that removing training
/// items still leaves `c` retrieved ones whenever the radius allows it.
pub fn user_candidates(
    searcher: &mut crate::mih::Searcher<'_>,
    code: &[u64],
    train: &[ItemId],
    c: usize,
    l_max: usize,
    popularity: &[ItemId],
) -> Result<CandidateList> {
    let raw = searcher.query(code, c + train.len(), l_max)?;
    let mut kept = CandidateList::default();
    for (&item, &d) in raw.items.iter().zip(&raw.distances) {
        if kept.len() == c {
            break;
        }
        if train.binary_search(&item).is_err() {
            kept.items.push(item);
            kept.distances.push(d);
        }
    }
    Ok(pad_candidates(kept, c, popularity, train))
}

fn check_universe(index: &MultiIndexHashTable, user_codes: &BinaryCodeMatrix, dataset: &InteractionDataset) -> Result<()> {
    if index.num_items() != dataset.num_items() {
        return Err(Error::LengthMismatch {
            left: index.num_items(),
            right: dataset.num_items(),
        });
    }
    if user_codes.rows() != dataset.num_users() {
        return Err(Error::LengthMismatch {
            left: user_codes.rows(),
            right: dataset.num_users(),
        });
    }
    if user_codes.bits() != index.bits() {
        return Err(Error::LengthMismatch {
            left: user_codes.bits(),
            right: index.bits(),
        });
    }
    Ok(())
}

/// Candidate lists for every user, computed in parallel.
pub fn generate_candidate_lists(
    index: &MultiIndexHashTable,
    user_codes: &BinaryCodeMatrix,
    dataset: &InteractionDataset,
    c: usize,
    l_max: usize,
) -> Result<Vec<CandidateList>> {
    check_universe(index, user_codes, dataset)?;
    let popularity = dataset.popularity_ranking();
    (0..dataset.num_users() as UserId)
        .into_par_iter()
        .map_init(
            || index.searcher(),
            |searcher, u| {
                user_candidates(
                    searcher,
                    user_codes.row(u as usize),
                    dataset.train(u),
                    c,
                    l_max,
                    &popularity,
                )
            },
        )
        .collect()
}

/// As [`generate_candidate_lists`], keeping only the item ids.
pub fn generate_candidates(
    index: &MultiIndexHashTable,
    user_codes: &BinaryCodeMatrix,
    dataset: &InteractionDataset,
    c: usize,
    l_max: usize,
) -> Result<CandidateSet> {
    let lists = generate_candidate_lists(index, user_codes, dataset, c, l_max)?;
    Ok(CandidateSet::new(lists.into_iter().map(|l| l.items).collect()))
}
