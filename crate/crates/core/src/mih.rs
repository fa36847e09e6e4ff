//! Multi-index hashing over item codes.
//!
//! Each `r`-bit code is cut into `m` disjoint substrings of `r / m` bits and
//! item `i` is filed under its `j`-th substring in table `j`. If the full
//! distance between a query and an item is below `m (l + 1)`, at least one
//! substring pair differs in at most `l` bits, so probing every table at
//! radius `l` reaches all such items. Queries grow `l` from 0 until at least
//! `c` distinct items are retrieved or `l_max` is reached, then keep the `c`
//! closest by full-code distance.

use std::collections::{BinaryHeap, HashSet};
use std::io::{Read, Write};
use std::path::Path;

use crate::codes::{hamming, BinaryCodeMatrix};
use crate::container::{self, Decoder, Encoder, INDEX_MAGIC};
use crate::dataset::ItemId;
use crate::error::{Error, Result};

const INDEX_VERSION: u32 = 1;
const MAX_SUBSTRING_BITS: usize = 32;
const DENSE_SUBSTRING_BITS: usize = 16;

/// Items ordered by ascending Hamming distance to a query, ties by id.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CandidateList {
    pub items: Vec<ItemId>,
    pub distances: Vec<u32>,
}

impl CandidateList {
    /// Distance recorded for items appended by [`pad_candidates`]; they were
    /// not retrieved by code similarity.
    pub const PADDED: u32 = u32::MAX;

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    fn from_sorted(pairs: impl IntoIterator<Item = (u32, ItemId)>) -> Self {
        let (distances, items) = pairs.into_iter().unzip();
        CandidateList { items, distances }
    }
}

/// Bucket storage of one substring table, as CSR over bucket keys.
#[derive(Clone, Debug, PartialEq, Eq)]
enum Buckets {
    /// One slot per possible key (`2^s` keys).
    Dense { offsets: Vec<u32>, items: Vec<ItemId> },
    /// Only non-empty keys, sorted for binary search.
    Sparse {
        keys: Vec<u32>,
        offsets: Vec<u32>,
        items: Vec<ItemId>,
    },
}

impl Buckets {
    fn build(keys: &[u32], substring_len: usize) -> Self {
        if substring_len <= DENSE_SUBSTRING_BITS {
            let slots = 1usize << substring_len;
            let mut offsets = vec![0u32; slots + 1];
            for &k in keys {
                offsets[k as usize + 1] += 1;
            }
            for s in 0..slots {
                offsets[s + 1] += offsets[s];
            }
            let mut cursor = offsets.clone();
            let mut items = vec![0; keys.len()];
            for (i, &k) in keys.iter().enumerate() {
                items[cursor[k as usize] as usize] = i as ItemId;
                cursor[k as usize] += 1;
            }
            Buckets::Dense { offsets, items }
        } else {
            let mut pairs: Vec<(u32, ItemId)> = keys.iter().enumerate().map(|(i, &k)| (k, i as ItemId)).collect();
            pairs.sort_unstable();
            let mut bucket_keys = Vec::new();
            let mut offsets = vec![0u32];
            let mut items = Vec::with_capacity(pairs.len());
            for (n, &(k, i)) in pairs.iter().enumerate() {
                if bucket_keys.last() != Some(&k) {
                    if n > 0 {
                        offsets.push(n as u32);
                    }
                    bucket_keys.push(k);
                }
                items.push(i);
            }
            if !pairs.is_empty() {
                offsets.push(pairs.len() as u32);
            }
            Buckets::Sparse {
                keys: bucket_keys,
                offsets,
                items,
            }
        }
    }

    #[inline]
    fn get(&self, key: u32) -> &[ItemId] {
        match self {
            Buckets::Dense { offsets, items } => {
                let k = key as usize;
                &items[offsets[k] as usize..offsets[k + 1] as usize]
            }
            Buckets::Sparse { keys, offsets, items } => match keys.binary_search(&key) {
                Ok(b) => &items[offsets[b] as usize..offsets[b + 1] as usize],
                Err(_) => &[],
            },
        }
    }

    fn items(&self) -> &[ItemId] {
        match self {
            Buckets::Dense { items, .. } | Buckets::Sparse { items, .. } => items,
        }
    }

    /// Sizes of the non-empty buckets.
    fn sizes(&self) -> Vec<usize> {
        let offsets = match self {
            Buckets::Dense { offsets, .. } | Buckets::Sparse { offsets, .. } => offsets,
        };
        offsets
            .windows(2)
            .map(|w| (w[1] - w[0]) as usize)
            .filter(|&n| n > 0)
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MultiIndexHashTable {
    m: usize,
    substring_len: usize,
    tables: Vec<Buckets>,
    codes: BinaryCodeMatrix,
}

/// Substring count used when none is configured: 16 below 50K items, 8
/// below 200K, else 4 (adjusted to divide `bits`).
pub fn default_substrings(num_items: usize, bits: usize) -> usize {
    let preferred = if num_items < 50_000 {
        16
    } else if num_items < 200_000 {
        8
    } else {
        4
    };
    let valid = |m: usize| bits.is_multiple_of(m) && bits / m <= MAX_SUBSTRING_BITS;
    if valid(preferred) {
        return preferred;
    }
    // Closest valid divisor, favouring more tables on ties.
    (1..=bits)
        .filter(|&m| valid(m))
        .min_by_key(|&m| (m.abs_diff(preferred), usize::MAX - m))
        .unwrap_or(bits)
}

/// Bits `[start, start + len)` of a packed row, `len <= 32`.
#[inline]
fn substring(row: &[u64], start: usize, len: usize) -> u32 {
    let word = start / 64;
    let off = start % 64;
    let mut v = row[word] >> off;
    if off + len > 64 {
        v |= row[word + 1] << (64 - off);
    }
    (v & ((1u64 << len) - 1)) as u32
}

/// Next integer with the same popcount (Gosper's hack).
#[inline]
fn next_combination(x: u64) -> u64 {
    let c = x & x.wrapping_neg();
    let r = x + c;
    (((r ^ x) >> 2) / c) | r
}

/// Builds the index over all rows of `codes`.
pub fn build_index(codes: BinaryCodeMatrix, m: usize) -> Result<MultiIndexHashTable> {
    MultiIndexHashTable::build(codes, m)
}

impl MultiIndexHashTable {
    pub fn build(codes: BinaryCodeMatrix, m: usize) -> Result<Self> {
        let bits = codes.bits();
        if m == 0 || !bits.is_multiple_of(m) {
            return Err(Error::Config(format!("{m} substrings do not divide {bits}-bit codes")));
        }
        let substring_len = bits / m;
        if substring_len > MAX_SUBSTRING_BITS {
            return Err(Error::Config(format!(
                "substrings of {substring_len} bits exceed the {MAX_SUBSTRING_BITS}-bit key limit"
            )));
        }
        if codes.rows() > u32::MAX as usize {
            return Err(Error::Config("too many items for 32-bit ids".into()));
        }
        let mut keys = vec![0u32; codes.rows()];
        let tables = (0..m)
            .map(|j| {
                for (i, key) in keys.iter_mut().enumerate() {
                    *key = substring(codes.row(i), j * substring_len, substring_len);
                }
                Buckets::build(&keys, substring_len)
            })
            .collect();
        Ok(MultiIndexHashTable {
            m,
            substring_len,
            tables,
            codes,
        })
    }

    pub fn substrings(&self) -> usize {
        self.m
    }

    pub fn substring_len(&self) -> usize {
        self.substring_len
    }

    pub fn bits(&self) -> usize {
        self.codes.bits()
    }

    pub fn num_items(&self) -> usize {
        self.codes.rows()
    }

    pub fn codes(&self) -> &BinaryCodeMatrix {
        &self.codes
    }

    /// Items filed under `key` in table `table`.
    pub fn bucket(&self, table: usize, key: u32) -> &[ItemId] {
        self.tables[table].get(key)
    }

    /// Sizes of the non-empty buckets of one table.
    pub fn bucket_sizes(&self, table: usize) -> Vec<usize> {
        self.tables[table].sizes()
    }

    /// Every item id stored in one table (each exactly once).
    pub fn table_items(&self, table: usize) -> &[ItemId] {
        self.tables[table].items()
    }

    /// Key of `code` in table `table`.
    pub fn key(&self, code: &[u64], table: usize) -> u32 {
        substring(code, table * self.substring_len, self.substring_len)
    }

    /// One-off query; use [`Self::searcher`] for many queries.
    pub fn query(&self, code: &[u64], c: usize, l_max: usize) -> Result<CandidateList> {
        self.searcher().query(code, c, l_max)
    }

    /// Reusable query state. The index itself is immutable, so any number
    /// of searchers may run concurrently.
    pub fn searcher(&self) -> Searcher<'_> {
        Searcher {
            index: self,
            stamps: vec![0; self.num_items()],
            epoch: 0,
            retrieved: Vec::new(),
        }
    }

    pub fn write_to<W: Write>(&self, w: W) -> Result<()> {
        let mut enc = Encoder::new(w, INDEX_MAGIC, INDEX_VERSION)?;
        enc.usize(self.m)?;
        enc.usize(self.bits())?;
        self.codes.encode(&mut enc)?;
        for table in &self.tables {
            match table {
                Buckets::Dense { offsets, items } => {
                    enc.u8(0)?;
                    enc.u32s(offsets)?;
                    enc.u32s(items)?;
                }
                Buckets::Sparse { keys, offsets, items } => {
                    enc.u8(1)?;
                    enc.u32s(keys)?;
                    enc.u32s(offsets)?;
                    enc.u32s(items)?;
                }
            }
        }
        enc.finish()?;
        Ok(())
    }

    pub fn read_from<R: Read>(r: R) -> Result<Self> {
        let mut dec = Decoder::new(r, INDEX_MAGIC, INDEX_VERSION)?;
        let m = dec.usize()?;
        let bits = dec.usize()?;
        let codes = BinaryCodeMatrix::decode(&mut dec)?;
        if m == 0 || codes.bits() != bits || bits % m != 0 || bits / m > MAX_SUBSTRING_BITS {
            return Err(Error::Format("inconsistent index header".into()));
        }
        let substring_len = bits / m;
        let n = codes.rows();
        let mut tables = Vec::with_capacity(m);
        for _ in 0..m {
            let table = match dec.u8()? {
                0 => Buckets::Dense {
                    offsets: dec.u32s()?,
                    items: dec.u32s()?,
                },
                1 => Buckets::Sparse {
                    keys: dec.u32s()?,
                    offsets: dec.u32s()?,
                    items: dec.u32s()?,
                },
                tag => return Err(Error::Format(format!("unknown bucket layout {tag}"))),
            };
            let (len_ok, offsets, items) = match &table {
                Buckets::Dense { offsets, items } => {
                    (substring_len <= DENSE_SUBSTRING_BITS && offsets.len() == (1 << substring_len) + 1, offsets, items)
                }
                Buckets::Sparse { keys, offsets, items } => (
                    offsets.len() == keys.len() + 1 && keys.windows(2).all(|w| w[0] < w[1]),
                    offsets,
                    items,
                ),
            };
            let ok = len_ok
                && items.len() == n
                && offsets.first() == Some(&0)
                && offsets.last() == Some(&(n as u32))
                && offsets.windows(2).all(|w| w[0] <= w[1])
                && items.iter().all(|&i| (i as usize) < n);
            if !ok {
                return Err(Error::Format("inconsistent bucket table".into()));
            }
            tables.push(table);
        }
        dec.finish()?;
        Ok(MultiIndexHashTable {
            m,
            substring_len,
            tables,
            codes,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write_to(container::create(path)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(container::open(path)?)
    }
}

/// Bookkeeping of one query.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct QueryStats {
    /// Largest per-table probe radius reached.
    pub radius: usize,
    /// Distinct items collected from buckets before truncation to `c`.
    pub retrieved: usize,
}

impl QueryStats {
    /// Every item whose full-code distance is at most this value was
    /// retrieved.
    pub fn exact_radius(&self, substrings: usize) -> usize {
        substrings * (self.radius + 1) - 1
    }
}

pub struct Searcher<'a> {
    index: &'a MultiIndexHashTable,
    stamps: Vec<u32>,
    epoch: u32,
    retrieved: Vec<ItemId>,
}

impl Searcher<'_> {
    pub fn query(&mut self, code: &[u64], c: usize, l_max: usize) -> Result<CandidateList> {
        self.query_with_stats(code, c, l_max).map(|(list, _)| list)
    }

    pub fn query_with_stats(&mut self, code: &[u64], c: usize, l_max: usize) -> Result<(CandidateList, QueryStats)> {
        let index = self.index;
        let wpr = index.codes.words_per_row();
        if code.len() != wpr {
            return Err(Error::LengthMismatch {
                left: code.len(),
                right: wpr,
            });
        }
        self.epoch = self.epoch.wrapping_add(1);
        if self.epoch == 0 {
            self.stamps.fill(0);
            self.epoch = 1;
        }
        self.retrieved.clear();

        let s = index.substring_len;
        let keys: Vec<u32> = (0..index.m).map(|j| index.key(code, j)).collect();
        let mut radius = 0;
        for l in 0..=l_max.min(s) {
            radius = l;
            for (table, &key) in index.tables.iter().zip(&keys) {
                let mut flips: u64 = (1u64 << l) - 1;
                while flips < (1u64 << s) {
                    for &item in table.get(key ^ flips as u32) {
                        let stamp = &mut self.stamps[item as usize];
                        if *stamp != self.epoch {
                            *stamp = self.epoch;
                            self.retrieved.push(item);
                        }
                    }
                    if flips == 0 {
                        break;
                    }
                    flips = next_combination(flips);
                }
            }
            if self.retrieved.len() >= c {
                break;
            }
        }

        let mut pairs: Vec<(u32, ItemId)> = self
            .retrieved
            .iter()
            .map(|&i| (hamming(code, index.codes.row(i as usize)), i))
            .collect();
        if pairs.len() > c {
            if c > 0 {
                pairs.select_nth_unstable(c - 1);
            }
            pairs.truncate(c);
        }
        pairs.sort_unstable();
        let stats = QueryStats {
            radius,
            retrieved: self.retrieved.len(),
        };
        Ok((CandidateList::from_sorted(pairs), stats))
    }
}

/// Exact `c` nearest items by Hamming distance, ties by ascending id.
pub fn linear_scan_topc(item_codes: &BinaryCodeMatrix, user_code: &[u64], c: usize) -> CandidateList {
    if c == 0 {
        return CandidateList::default();
    }
    let mut heap: BinaryHeap<(u32, ItemId)> = BinaryHeap::with_capacity(c + 1);
    for i in 0..item_codes.rows() {
        let entry = (hamming(user_code, item_codes.row(i)), i as ItemId);
        if heap.len() < c {
            heap.push(entry);
        } else if let Some(mut top) = heap.peek_mut() {
            if entry < *top {
                *top = entry;
            }
        }
    }
    CandidateList::from_sorted(heap.into_sorted_vec())
}

/// Appends the most popular items that are neither present nor excluded
/// until the list holds `min(c, |I \ exclude|)` items. `popularity` ranks
/// every item; `exclude` is sorted ascending.
pub fn pad_candidates(mut cands: CandidateList, c: usize, popularity: &[ItemId], exclude: &[ItemId]) -> CandidateList {
    let target = c.min(popularity.len().saturating_sub(exclude.len()));
    if cands.len() >= target {
        return cands;
    }
    let present: HashSet<ItemId> = cands.items.iter().copied().collect();
    for &item in popularity {
        if cands.len() >= target {
            break;
        }
        if !present.contains(&item) && exclude.binary_search(&item).is_err() {
            cands.items.push(item);
            cands.distances.push(CandidateList::PADDED);
        }
    }
    cands
}
