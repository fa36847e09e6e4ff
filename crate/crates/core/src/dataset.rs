//! Implicit-feedback ingestion, k-core filtering and the leave-one-out split.

use std::collections::hash_map::Entry;
use std::collections::{HashMap, HashSet, VecDeque};
use std::fmt;
use std::io::{BufRead, Read, Write};
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::container::{self, Decoder, Encoder, DATASET_MAGIC};
use crate::error::{Error, Result};

pub type UserId = u32;
pub type ItemId = u32;

const DATASET_VERSION: u32 = 1;

/// One observed (user, item) event with its original ids.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Interaction {
    pub user: u64,
    pub item: u64,
    pub timestamp: Option<i64>,
}

/// Record layout of an interaction log.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum LogFormat {
    /// `user,item[,rating][,timestamp]`, optionally with a header line.
    #[default]
    Csv,
    /// Tab- or whitespace-separated columns in the same order (MovieLens-100K `u.data`).
    Tsv,
    /// `user::item::rating::timestamp` (MovieLens-1M/10M `ratings.dat`).
    MovieLens,
}

impl FromStr for LogFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(LogFormat::Csv),
            "tsv" => Ok(LogFormat::Tsv),
            "movielens" | "dat" => Ok(LogFormat::MovieLens),
            other => Err(Error::Config(format!("unknown log format {other:?}"))),
        }
    }
}

impl fmt::Display for LogFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LogFormat::Csv => "csv",
            LogFormat::Tsv => "tsv",
            LogFormat::MovieLens => "movielens",
        })
    }
}

impl LogFormat {
    fn fields<'a>(&self, line: &'a str) -> Vec<&'a str> {
        match self {
            LogFormat::Csv => line.split(',').map(str::trim).collect(),
            LogFormat::Tsv => line.split_whitespace().collect(),
            LogFormat::MovieLens => line.split("::").map(str::trim).collect(),
        }
    }
}

/// Reads an interaction log. Every record counts as positive feedback;
/// ratings are validated and dropped, and repeated (user, item) pairs are
/// collapsed onto their first occurrence.
pub fn load_interactions(path: &Path, format: LogFormat) -> Result<Vec<Interaction>> {
    let reader = container::open(path)?;
    parse_interactions(reader, format).map_err(|e| match e {
        Error::Stream(source) => Error::io(path, source),
        other => other,
    })
}

pub fn parse_interactions<R: BufRead>(reader: R, format: LogFormat) -> Result<Vec<Interaction>> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields = format.fields(line);
        if lineno == 1 && is_header(&fields) {
            continue;
        }
        let record = parse_record(&fields).map_err(|message| Error::Parse {
            line: lineno,
            message,
        })?;
        if seen.insert((record.user, record.item)) {
            out.push(record);
        }
    }
    if out.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(out)
}

fn is_header(fields: &[&str]) -> bool {
    fields.iter().all(|f| f.parse::<f64>().is_err())
}

fn parse_record(fields: &[&str]) -> std::result::Result<Interaction, String> {
    if !(2..=4).contains(&fields.len()) {
        return Err(format!("expected 2 to 4 fields, found {}", fields.len()));
    }
    let user = fields[0]
        .parse::<u64>()
        .map_err(|_| format!("invalid user id {:?}", fields[0]))?;
    let item = fields[1]
        .parse::<u64>()
        .map_err(|_| format!("invalid item id {:?}", fields[1]))?;
    if let Some(rating) = fields.get(2) {
        rating
            .parse::<f64>()
            .map_err(|_| format!("invalid rating {rating:?}"))?;
    }
    let timestamp = match fields.get(3) {
        Some(ts) => Some(
            ts.parse::<i64>()
                .map_err(|_| format!("invalid timestamp {ts:?}"))?,
        ),
        None => None,
    };
    Ok(Interaction {
        user,
        item,
        timestamp,
    })
}

/// Drops the `percent`% most popular items (by number of users) before any
/// other filtering. Ties are broken by ascending original id.
pub fn drop_top_popular(interactions: &[Interaction], percent: f64) -> Result<Vec<Interaction>> {
    if !(0.0..=100.0).contains(&percent) || percent.is_nan() {
        return Err(Error::Config(format!(
            "drop-top-percent must lie in [0, 100], got {percent}"
        )));
    }
    let mut counts: HashMap<u64, usize> = HashMap::new();
    for x in interactions {
        *counts.entry(x.item).or_default() += 1;
    }
    let drop = (counts.len() as f64 * percent / 100.0).floor() as usize;
    if drop == 0 {
        return Ok(interactions.to_vec());
    }
    let mut by_popularity: Vec<(u64, usize)> = counts.into_iter().collect();
    by_popularity.sort_unstable_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    let dropped: HashSet<u64> = by_popularity[..drop].iter().map(|&(item, _)| item).collect();
    Ok(interactions
        .iter()
        .filter(|x| !dropped.contains(&x.item))
        .copied()
        .collect())
}

/// Keeps the maximal sub-log in which every user and every item has at least
/// `k` interactions. Input order of the survivors is preserved. Expects
/// deduplicated input (as produced by [`load_interactions`]).
pub fn kcore_filter(interactions: &[Interaction], k: usize) -> Result<Vec<Interaction>> {
    if k == 0 {
        return Err(Error::Config("k-core requires k >= 1".into()));
    }
    let mut user_index = HashMap::new();
    let mut item_index = HashMap::new();
    let mut edges = Vec::with_capacity(interactions.len());
    for x in interactions {
        let next = user_index.len();
        let u = *user_index.entry(x.user).or_insert(next);
        let next = item_index.len();
        let i = *item_index.entry(x.item).or_insert(next);
        edges.push((u, i));
    }

    // Nodes 0..n_users are users, the rest items.
    let n_users = user_index.len();
    let n_nodes = n_users + item_index.len();
    let mut incident: Vec<Vec<usize>> = vec![Vec::new(); n_nodes];
    for (e, &(u, i)) in edges.iter().enumerate() {
        incident[u].push(e);
        incident[n_users + i].push(e);
    }
    let mut degree: Vec<usize> = incident.iter().map(Vec::len).collect();
    let mut removed = vec![false; n_nodes];
    let mut alive = vec![true; edges.len()];
    let mut queue: VecDeque<usize> = (0..n_nodes).filter(|&v| degree[v] < k).collect();
    for &v in &queue {
        removed[v] = true;
    }
    while let Some(v) = queue.pop_front() {
        for &e in &incident[v] {
            if !alive[e] {
                continue;
            }
            alive[e] = false;
            let (u, i) = edges[e];
            let other = if v == u { n_users + i } else { u };
            degree[other] -= 1;
            if !removed[other] && degree[other] < k {
                removed[other] = true;
                queue.push_back(other);
            }
        }
    }

    let out: Vec<Interaction> = interactions
        .iter()
        .zip(&alive)
        .filter(|(_, &keep)| keep)
        .map(|(x, _)| *x)
        .collect();
    if out.is_empty() {
        return Err(Error::EmptyAfterFilter { k });
    }
    Ok(out)
}

/// Which held-out item a query targets.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Valid,
    Test,
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "valid" | "validation" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split {other:?}"))),
        }
    }
}

/// Leave-one-out partition with dense ids.
///
/// Training items are stored per user, sorted, in one flat array.
#[derive(Clone, Debug, PartialEq)]
pub struct InteractionDataset {
    num_items: usize,
    train_offsets: Vec<usize>,
    train_items: Vec<ItemId>,
    valid: Vec<ItemId>,
    test: Vec<ItemId>,
    user_ids: Vec<u64>,
    item_ids: Vec<u64>,
}

/// Splits every user's interactions into one validation item, one test item
/// and the remaining training items. Users and items are renumbered densely
/// in order of first appearance.
pub fn leave_one_out_split(interactions: &[Interaction], seed: u64) -> Result<InteractionDataset> {
    if interactions.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut user_index: HashMap<u64, usize> = HashMap::new();
    let mut item_index: HashMap<u64, ItemId> = HashMap::new();
    let mut user_ids = Vec::new();
    let mut item_ids = Vec::new();
    let mut per_user: Vec<Vec<ItemId>> = Vec::new();
    for x in interactions {
        let u = match user_index.entry(x.user) {
            Entry::Occupied(e) => *e.get(),
            Entry::Vacant(e) => {
                user_ids.push(x.user);
                per_user.push(Vec::new());
                *e.insert(user_ids.len() - 1)
            }
        };
        let i = match item_index.entry(x.item) {
            Entry::Occupied(e) => *e.get(),
            Entry::Vacant(e) => {
                item_ids.push(x.item);
                *e.insert((item_ids.len() - 1) as ItemId)
            }
        };
        per_user[u].push(i);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train_offsets = Vec::with_capacity(per_user.len() + 1);
    let mut train_items = Vec::with_capacity(interactions.len());
    let mut valid = Vec::with_capacity(per_user.len());
    let mut test = Vec::with_capacity(per_user.len());
    train_offsets.push(0);
    for (u, items) in per_user.iter_mut().enumerate() {
        let n = items.len();
        items.sort_unstable();
        items.dedup();
        if items.len() != n {
            return Err(Error::Precondition(format!(
                "user {} has duplicate interactions",
                user_ids[u]
            )));
        }
        if n < 3 {
            return Err(Error::Precondition(format!(
                "user {} has {n} interactions; leave-one-out needs at least 3",
                user_ids[u]
            )));
        }
        let a = rng.random_range(0..n);
        let mut b = rng.random_range(0..n - 1);
        if b >= a {
            b += 1;
        }
        valid.push(items[a]);
        test.push(items[b]);
        train_items.extend(
            items
                .iter()
                .enumerate()
                .filter(|&(pos, _)| pos != a && pos != b)
                .map(|(_, &i)| i),
        );
        train_offsets.push(train_items.len());
    }

    Ok(InteractionDataset {
        num_items: item_ids.len(),
        train_offsets,
        train_items,
        valid,
        test,
        user_ids,
        item_ids,
    })
}

impl InteractionDataset {
    /// Builds a dataset from explicit parts; mainly for tests and synthetic
    /// data. `valid` and `test` are either both empty (no held-out items) or
    /// hold one item per user. Original ids default to the dense ids.
    pub fn from_parts(
        num_items: usize,
        train: Vec<Vec<ItemId>>,
        valid: Vec<ItemId>,
        test: Vec<ItemId>,
    ) -> Result<Self> {
        let num_users = train.len();
        if num_users == 0 || num_items == 0 {
            return Err(Error::EmptyDataset);
        }
        let held_out = !valid.is_empty() || !test.is_empty();
        if held_out && (valid.len() != num_users || test.len() != num_users) {
            return Err(Error::Precondition(
                "valid and test must hold exactly one item per user".into(),
            ));
        }
        let mut train_offsets = vec![0];
        let mut train_items = Vec::new();
        for (u, mut items) in train.into_iter().enumerate() {
            items.sort_unstable();
            items.dedup();
            if let Some(&bad) = items.iter().find(|&&i| i as usize >= num_items) {
                return Err(Error::OutOfRange {
                    what: "item",
                    id: bad as usize,
                    bound: num_items,
                });
            }
            if held_out {
                let (v, t) = (valid[u], test[u]);
                if v as usize >= num_items || t as usize >= num_items {
                    return Err(Error::OutOfRange {
                        what: "item",
                        id: v.max(t) as usize,
                        bound: num_items,
                    });
                }
                if v == t || items.binary_search(&v).is_ok() || items.binary_search(&t).is_ok() {
                    return Err(Error::Precondition(format!(
                        "held-out items of user {u} must be distinct and absent from train"
                    )));
                }
            }
            train_items.extend(items);
            train_offsets.push(train_items.len());
        }
        Ok(InteractionDataset {
            num_items,
            train_offsets,
            train_items,
            valid,
            test,
            user_ids: (0..num_users as u64).collect(),
            item_ids: (0..num_items as u64).collect(),
        })
    }

    pub fn num_users(&self) -> usize {
        self.train_offsets.len() - 1
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    pub fn num_train_interactions(&self) -> usize {
        self.train_items.len()
    }

    /// Training items of `user`, sorted ascending.
    #[inline]
    pub fn train(&self, user: UserId) -> &[ItemId] {
        let u = user as usize;
        &self.train_items[self.train_offsets[u]..self.train_offsets[u + 1]]
    }

    #[inline]
    pub fn is_train(&self, user: UserId, item: ItemId) -> bool {
        self.train(user).binary_search(&item).is_ok()
    }

    pub fn has_held_out(&self) -> bool {
        !self.valid.is_empty()
    }

    pub fn valid(&self, user: UserId) -> ItemId {
        self.valid[user as usize]
    }

    pub fn test(&self, user: UserId) -> ItemId {
        self.test[user as usize]
    }

    pub fn held_out(&self, user: UserId, split: Split) -> ItemId {
        match split {
            Split::Valid => self.valid(user),
            Split::Test => self.test(user),
        }
    }

    pub fn original_user(&self, user: UserId) -> u64 {
        self.user_ids[user as usize]
    }

    pub fn original_item(&self, item: ItemId) -> u64 {
        self.item_ids[item as usize]
    }

    /// Dense id of an original user id.
    pub fn find_user(&self, original: u64) -> Option<UserId> {
        self.user_ids
            .iter()
            .position(|&x| x == original)
            .map(|u| u as UserId)
    }

    pub fn user_remap(&self) -> HashMap<u64, UserId> {
        self.user_ids
            .iter()
            .enumerate()
            .map(|(u, &orig)| (orig, u as UserId))
            .collect()
    }

    pub fn item_remap(&self) -> HashMap<u64, ItemId> {
        self.item_ids
            .iter()
            .enumerate()
            .map(|(i, &orig)| (orig, i as ItemId))
            .collect()
    }

    /// Number of training interactions per item.
    pub fn item_popularity(&self) -> Vec<u32> {
        let mut counts = vec![0u32; self.num_items];
        for &i in &self.train_items {
            counts[i as usize] += 1;
        }
        counts
    }

    /// All items ordered by descending training popularity, ties by id.
    pub fn popularity_ranking(&self) -> Vec<ItemId> {
        let counts = self.item_popularity();
        let mut order: Vec<ItemId> = (0..self.num_items as ItemId).collect();
        order.sort_by(|&a, &b| counts[b as usize].cmp(&counts[a as usize]).then(a.cmp(&b)));
        order
    }

    pub fn write_to<W: Write>(&self, w: W) -> Result<()> {
        let mut enc = Encoder::new(w, DATASET_MAGIC, DATASET_VERSION)?;
        enc.usize(self.num_users())?;
        enc.usize(self.num_items)?;
        enc.u64s(&self.user_ids)?;
        enc.u64s(&self.item_ids)?;
        let offsets: Vec<u64> = self.train_offsets.iter().map(|&o| o as u64).collect();
        enc.u64s(&offsets)?;
        enc.u32s(&self.train_items)?;
        enc.u32s(&self.valid)?;
        enc.u32s(&self.test)?;
        enc.finish()?;
        Ok(())
    }

    pub fn read_from<R: Read>(r: R) -> Result<Self> {
        let mut dec = Decoder::new(r, DATASET_MAGIC, DATASET_VERSION)?;
        let num_users = dec.usize()?;
        let num_items = dec.usize()?;
        let user_ids = dec.u64s()?;
        let item_ids = dec.u64s()?;
        let train_offsets: Vec<usize> = dec.u64s()?.into_iter().map(|o| o as usize).collect();
        let train_items = dec.u32s()?;
        let valid = dec.u32s()?;
        let test = dec.u32s()?;
        dec.finish()?;

        let consistent = user_ids.len() == num_users
            && item_ids.len() == num_items
            && train_offsets.len() == num_users + 1
            && train_offsets.first() == Some(&0)
            && train_offsets.windows(2).all(|w| w[0] <= w[1])
            && train_offsets.last() == Some(&train_items.len())
            && (valid.is_empty() || valid.len() == num_users)
            && valid.len() == test.len()
            && train_items
                .iter()
                .chain(&valid)
                .chain(&test)
                .all(|&i| (i as usize) < num_items);
        if !consistent {
            return Err(Error::Format("inconsistent dataset payload".into()));
        }
        Ok(InteractionDataset {
            num_items,
            train_offsets,
            train_items,
            valid,
            test,
            user_ids,
            item_ids,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write_to(container::create(path)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(container::open(path)?)
    }
}
