//! Sequential per-query retrieval timing.

use std::fmt;
use std::hint::black_box;
use std::str::FromStr;
use std::time::Instant;

use crate::codes::BinaryCodeMatrix;
use crate::dataset::{InteractionDataset, ItemId, UserId};
use crate::error::{Error, Result};
use crate::mih::{linear_scan_topc, MultiIndexHashTable};
use crate::ranker::{rank_order, rerank, RankerModel, ScoreScratch};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BenchMethod {
    /// Score every item with a real-valued model and keep the top `n`.
    LinearReal,
    /// Hamming distance to every item code, keep the top `c`.
    LinearHamming,
    /// Index lookup of `c` candidates.
    Mih,
    /// Index lookup followed by re-ranking to the top `n`.
    CigarPipeline,
}

impl BenchMethod {
    pub const ALL: [BenchMethod; 4] = [
        BenchMethod::LinearReal,
        BenchMethod::LinearHamming,
        BenchMethod::Mih,
        BenchMethod::CigarPipeline,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BenchMethod::LinearReal => "linear-real",
            BenchMethod::LinearHamming => "linear-hamming",
            BenchMethod::Mih => "mih",
            BenchMethod::CigarPipeline => "cigar-pipeline",
        }
    }
}

impl fmt::Display for BenchMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BenchMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        BenchMethod::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown benchmark method {s:?}")))
    }
}

pub struct BenchInputs<'a> {
    pub user_codes: &'a BinaryCodeMatrix,
    pub index: &'a MultiIndexHashTable,
    /// Model for `linear-real` and `cigar-pipeline`.
    pub model: Option<&'a RankerModel>,
    /// Training items to exclude when re-ranking, when available.
    pub dataset: Option<&'a InteractionDataset>,
    pub queries: Vec<UserId>,
    pub c: usize,
    pub n: usize,
    pub l_max: usize,
    /// Untimed queries run before each method.
    pub warmup: usize,
    pub repeats: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchRow {
    pub method: BenchMethod,
    pub queries: usize,
    pub repeats: usize,
    /// Mean and standard deviation of the total time of one repeat.
    pub total_ms_mean: f64,
    pub total_ms_std: f64,
    pub mean_us: f64,
    pub p50_us: f64,
    pub p90_us: f64,
    pub p99_us: f64,
    pub max_us: f64,
}

pub const CSV_HEADER: &str = "method,queries,repeats,total_ms_mean,total_ms_std,mean_us,p50_us,p90_us,p99_us,max_us";

impl BenchRow {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{:.3},{:.3},{:.3},{:.3},{:.3},{:.3},{:.3}",
            self.method,
            self.queries,
            self.repeats,
            self.total_ms_mean,
            self.total_ms_std,
            self.mean_us,
            self.p50_us,
            self.p90_us,
            self.p99_us,
            self.max_us
        )
    }
}

pub fn rows_to_csv(rows: &[BenchRow]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.csv_line());
        out.push('\n');
    }
    out
}

/// Nearest-rank percentile of sorted values.
fn percentile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let rank = ((p / 100.0) * sorted.len() as f64).ceil().max(1.0) as usize;
    sorted[rank.min(sorted.len()) - 1]
}

fn top_n_real(model: &RankerModel, u: UserId, n: usize, scores: &mut Vec<f64>, scratch: &mut ScoreScratch) -> Result<Vec<ItemId>> {
    model.score_all_into(u, scores, scratch)?;
    let mut pairs: Vec<(ItemId, f64)> = scores.iter().enumerate().map(|(i, &s)| (i as ItemId, s)).collect();
    if n > 0 && n < pairs.len() {
        pairs.select_nth_unstable_by(n - 1, |a, b| rank_order(*a, *b));
    }
    pairs.truncate(n);
    pairs.sort_unstable_by(|a, b| rank_order(*a, *b));
    Ok(pairs.into_iter().map(|(i, _)| i).collect())
}

/// Times each method query by query on the calling thread.
pub fn bench_retrieval(methods: &[BenchMethod], inputs: &BenchInputs<'_>) -> Result<Vec<BenchRow>> {
    if inputs.queries.is_empty() {
        return Ok(Vec::new());
    }
    if let Some(&u) = inputs.queries.iter().find(|&&u| u as usize >= inputs.user_codes.rows()) {
        return Err(Error::OutOfRange {
            what: "user",
            id: u as usize,
            bound: inputs.user_codes.rows(),
        });
    }
    let repeats = inputs.repeats.max(1);
    let empty: &[ItemId] = &[];
    let mut rows = Vec::with_capacity(methods.len());
    for &method in methods {
        let model = match method {
            BenchMethod::LinearReal | BenchMethod::CigarPipeline => Some(
                inputs
                    .model
                    .ok_or_else(|| Error::Config(format!("{method} needs a ranking model")))?,
            ),
            _ => None,
        };
        let mut searcher = inputs.index.searcher();
        let mut scores = Vec::new();
        let mut scratch = ScoreScratch::default();
        let mut run = |u: UserId| -> Result<usize> {
            let code = inputs.user_codes.row(u as usize);
            let found = match method {
                BenchMethod::LinearReal => top_n_real(model.unwrap(), u, inputs.n, &mut scores, &mut scratch)?.len(),
                BenchMethod::LinearHamming => linear_scan_topc(inputs.index.codes(), code, inputs.c).len(),
                BenchMethod::Mih => searcher.query(code, inputs.c, inputs.l_max)?.len(),
                BenchMethod::CigarPipeline => {
                    let cands = searcher.query(code, inputs.c, inputs.l_max)?;
                    let exclude = inputs.dataset.map_or(empty, |d| d.train(u));
                    rerank(model.unwrap(), u, &cands.items, inputs.n, exclude)?.len()
                }
            };
            Ok(black_box(found))
        };
        for q in inputs.queries.iter().cycle().take(inputs.warmup) {
            run(*q)?;
        }
        let mut latencies = Vec::with_capacity(inputs.queries.len() * repeats);
        let mut totals = Vec::with_capacity(repeats);
        for _ in 0..repeats {
            let start = Instant::now();
            for &u in &inputs.queries {
                let t = Instant::now();
                run(u)?;
                latencies.push(t.elapsed().as_secs_f64() * 1e6);
            }
            totals.push(start.elapsed().as_secs_f64() * 1e3);
        }
        latencies.sort_by(f64::total_cmp);
        let mean_total = totals.iter().sum::<f64>() / repeats as f64;
        let var = totals.iter().map(|t| (t - mean_total).powi(2)).sum::<f64>() / repeats as f64;
        rows.push(BenchRow {
            method,
            queries: inputs.queries.len(),
            repeats,
            total_ms_mean: mean_total,
            total_ms_std: var.sqrt(),
            mean_us: latencies.iter().sum::<f64>() / latencies.len() as f64,
            p50_us: percentile(&latencies, 50.0),
            p90_us: percentile(&latencies, 90.0),
            p99_us: percentile(&latencies, 99.0),
            max_us: latencies.last().copied().unwrap_or(0.0),
        });
    }
    Ok(rows)
}
