//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Criteria on MovieLens-1M read `ratings.dat` from `$CIGAR_ML1M`; without
//! it they fail and say so. `CIGAR_ACCEPTANCE_ONLY=4,5` runs a subset.

mod common;

use std::collections::BTreeSet;
use std::time::Instant;

use cigar::bench::{bench_retrieval, BenchInputs, BenchMethod};
use cigar::codes::hamming_distance;
use cigar::embedding::DenseEmbeddingMatrix;
use cigar::eval::{evaluate_candidate_set, popularity_candidates};
use cigar::hashrec::{surrogate_loss, train_hashrec_with, HashRecConfig};
use cigar::math::dot;
use cigar::mih::default_substrings;
use cigar::ranker::{bpr_loss, cml_loss, neumf_loss, MatrixFactorization, MetricEmbedding, NeuMf};
use cigar::sampling::{Triple, TripletBatch};
use cigar::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// Pinned tolerances.
const C1_HR200_TARGET: f64 = 0.646;
const C1_HR200_TOL: f64 = 0.04;
const C1_HR10_TARGET: f64 = 0.135;
const C1_HR10_TOL: f64 = 0.03;
const SEEDS: [u64; 3] = [0, 1, 2];
const C4_ITEMS: usize = 10_000;
const C4_QUERIES: usize = 1_000;
const C5_ITEMS: usize = 1_000_000;
const C5_QUERIES: usize = 1_000;
const C5_MIN_SPEEDUP: f64 = 10.0;
const C6_INSTANCES: usize = 100;
const C7_EPOCHS: usize = 50;
const C7_FROM_EPOCH: usize = 5;
const C8_PAIRS: usize = 10_000;
const BITS: usize = 64;
const CANDIDATES: usize = 200;
const L_MAX: usize = 1;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn missing_ml1m() -> Outcome {
    outcome(
        false,
        format!("MovieLens-1M not available: set {} to ratings.dat", common::ML1M_ENV),
    )
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Everything measured on MovieLens-1M for one seed.
struct SeedRun {
    hashrec_hr200: f64,
    hashrec_hr10: f64,
    bprb_hr200: f64,
    pop_hr200: f64,
    bpr_full_hr10: f64,
    cigar_h05_hr10: f64,
    cigar_h0_hr10: f64,
}

fn run_seed(seed: u64) -> Result<SeedRun> {
    let ds = common::ml1m(seed).expect("checked by caller");
    let hcfg = HashRecConfig {
        seed,
        ..HashRecConfig::default()
    };
    let codes = train_hashrec_with(&ds, &hcfg, None)?.model;
    let m = default_substrings(ds.num_items(), BITS);
    let index = build_index(codes.item_codes.clone(), m)?;
    let hashrec_hr200 = evaluate_candidates(&codes.user_codes, &index, &ds, CANDIDATES, L_MAX, Split::Test)?.hr;
    let code_ranker = RankerModel::from_codes(codes.user_codes.clone(), codes.item_codes.clone())?;
    let hashrec_hr10 = evaluate_full(&code_ranker, &ds, 10, Split::Test)?.hr;

    let rcfg = RerankConfig {
        seed,
        ..RerankConfig::default()
    };
    let bprb = train_ranker(&ds, RankerKind::BprB, &RerankConfig { k: BITS, ..rcfg.clone() }, None)?.model;
    let RankerModel::BprB { user, item } = &bprb else {
        unreachable!("BPR-B training yields codes")
    };
    let bprb_index = build_index(item.clone(), m)?;
    let bprb_hr200 = evaluate_candidates(user, &bprb_index, &ds, CANDIDATES, L_MAX, Split::Test)?.hr;
    let pop_hr200 = evaluate_candidate_set(&popularity_candidates(&ds, CANDIDATES), &ds, CANDIDATES, Split::Test)?.hr;

    let bpr = train_ranker(&ds, RankerKind::BprMf, &rcfg, None)?.model;
    let bpr_full_hr10 = evaluate_full(&bpr, &ds, 10, Split::Test)?.hr;
    let cands = generate_candidates(&index, &codes.user_codes, &ds, CANDIDATES, L_MAX)?;
    let cigar = |h: f64| -> Result<f64> {
        let model = train_ranker(&ds, RankerKind::BprMf, &RerankConfig { h, ..rcfg.clone() }, Some(&cands))?.model;
        Ok(evaluate_cigar(&codes.user_codes, &index, &model, &ds, 10, CANDIDATES, L_MAX, Split::Test)?.hr)
    };
    let cigar_h05_hr10 = cigar(0.5)?;
    let cigar_h0_hr10 = cigar(0.0)?;
    Ok(SeedRun {
        hashrec_hr200,
        hashrec_hr10,
        bprb_hr200,
        pop_hr200,
        bpr_full_hr10,
        cigar_h05_hr10,
        cigar_h0_hr10,
    })
}

fn ml1m_runs() -> Option<Vec<SeedRun>> {
    common::ml1m_path()?;
    Some(SEEDS.iter().map(|&s| run_seed(s).expect("MovieLens-1M run")).collect())
}

fn criterion_1(runs: Option<&[SeedRun]>) -> Outcome {
    let Some(runs) = runs else { return missing_ml1m() };
    let r = &runs[0];
    let ok200 = (r.hashrec_hr200 - C1_HR200_TARGET).abs() <= C1_HR200_TOL;
    let ok10 = (r.hashrec_hr10 - C1_HR10_TARGET).abs() <= C1_HR10_TOL;
    outcome(
        ok200 && ok10,
        format!(
            "HR@200 {:.4} (target {C1_HR200_TARGET} ± {C1_HR200_TOL}), HR@10 {:.4} (target {C1_HR10_TARGET} ± {C1_HR10_TOL})",
            r.hashrec_hr200, r.hashrec_hr10
        ),
    )
}

fn criterion_2(runs: Option<&[SeedRun]>) -> Outcome {
    let Some(runs) = runs else { return missing_ml1m() };
    let plus = mean(&runs.iter().map(|r| r.cigar_h05_hr10).collect::<Vec<_>>());
    let full = mean(&runs.iter().map(|r| r.bpr_full_hr10).collect::<Vec<_>>());
    let h0 = mean(&runs.iter().map(|r| r.cigar_h0_hr10).collect::<Vec<_>>());
    outcome(
        plus > full && plus > h0,
        format!("mean HR@10: CIGAR h=0.5 {plus:.4}, BPR-MF full {full:.4}, CIGAR h=0 {h0:.4}"),
    )
}

fn criterion_3(runs: Option<&[SeedRun]>) -> Outcome {
    let Some(runs) = runs else { return missing_ml1m() };
    let hr = mean(&runs.iter().map(|r| r.hashrec_hr200).collect::<Vec<_>>());
    let bprb = mean(&runs.iter().map(|r| r.bprb_hr200).collect::<Vec<_>>());
    let pop = mean(&runs.iter().map(|r| r.pop_hr200).collect::<Vec<_>>());
    outcome(
        hr > bprb && bprb > pop,
        format!("mean HR@200: HashRec {hr:.4}, BPR-B {bprb:.4}, POP {pop:.4}"),
    )
}

fn flip_bits<R: Rng>(code: &[u64], flips: usize, rng: &mut R) -> Vec<u64> {
    let mut out = code.to_vec();
    let positions = rand::seq::index::sample(rng, BITS, flips);
    for z in positions {
        out[z / 64] ^= 1 << (z % 64);
    }
    out
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut violations = 0usize;
    let mut checked = 0usize;
    let mut deepest = 0usize;
    for m in [4, 8] {
        let codes = BinaryCodeMatrix::random(C4_ITEMS, BITS, &mut rng).unwrap();
        let queries: Vec<Vec<u64>> = (0..C4_QUERIES)
            .map(|q| {
                if q % 2 == 0 {
                    BinaryCodeMatrix::random(1, BITS, &mut rng).unwrap().row(0).to_vec()
                } else {
                    let src = rng.random_range(0..C4_ITEMS);
                    let flips = rng.random_range(0..=12);
                    flip_bits(codes.row(src), flips, &mut rng)
                }
            })
            .collect();
        let index = build_index(codes.clone(), m).unwrap();
        let mut searcher = index.searcher();
        for q in &queries {
            // Oracle: every item's distance, recomputed independently.
            let dist: Vec<u32> = (0..C4_ITEMS).map(|i| hamming_distance(q, codes.row(i)).unwrap()).collect();
            let at = |d: u32| -> BTreeSet<u32> { (0..C4_ITEMS as u32).filter(|&i| dist[i as usize] == d).collect() };
            for l_max in [0, 1, 2] {
                for c in [10, 50, CANDIDATES] {
                    let (list, stats) = searcher.query_with_stats(q, c, l_max).unwrap();
                    let exact = stats.exact_radius(m) as u32;
                    deepest = deepest.max(exact as usize);
                    let distinct: BTreeSet<u32> = list.items.iter().copied().collect();
                    let ordered = list
                        .items
                        .iter()
                        .zip(&list.distances)
                        .collect::<Vec<_>>()
                        .windows(2)
                        .all(|w| (w[0].1, w[0].0) < (w[1].1, w[1].0));
                    let consistent = list.items.iter().zip(&list.distances).all(|(&i, &d)| dist[i as usize] == d);
                    if distinct.len() != list.len() || !ordered || !consistent || list.len() > c {
                        violations += 1;
                        continue;
                    }
                    let truncated = list.len() == c;
                    let last = list.distances.last().copied();
                    for d in 0..=exact {
                        let returned: BTreeSet<u32> = list
                            .items
                            .iter()
                            .zip(&list.distances)
                            .filter(|(_, &dd)| dd == d)
                            .map(|(&i, _)| i)
                            .collect();
                        let expected = at(d);
                        checked += 1;
                        let ok = match last {
                            Some(last) if truncated && d > last => returned.is_empty(),
                            // The cut at the last distance keeps the lowest ids.
                            Some(last) if truncated && d == last => {
                                expected.iter().take(returned.len()).copied().collect::<BTreeSet<_>>() == returned
                            }
                            _ => returned == expected,
                        };
                        if !ok {
                            violations += 1;
                        }
                    }
                }
            }
        }
    }
    outcome(
        violations == 0,
        format!("{violations} violations over {checked} (query, distance) checks, radius up to {deepest}"),
    )
}

fn criterion_5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let items = BinaryCodeMatrix::random(C5_ITEMS, BITS, &mut rng).unwrap();
    let users = BinaryCodeMatrix::random(C5_QUERIES, BITS, &mut rng).unwrap();
    let index = build_index(items, 4).unwrap();
    let inputs = BenchInputs {
        user_codes: &users,
        index: &index,
        model: None,
        dataset: None,
        queries: (0..C5_QUERIES as u32).collect(),
        c: CANDIDATES,
        n: 10,
        l_max: L_MAX,
        warmup: 100,
        repeats: 3,
    };
    let rows = bench_retrieval(&[BenchMethod::LinearHamming, BenchMethod::Mih], &inputs).unwrap();
    let (linear, mih) = (rows[0].mean_us, rows[1].mean_us);
    let speedup = linear / mih;
    outcome(
        speedup >= C5_MIN_SPEEDUP,
        format!("mean latency: linear {linear:.1} µs, MIH {mih:.1} µs, speedup {speedup:.1}x (need ≥ {C5_MIN_SPEEDUP}x)"),
    )
}

fn random_batch<R: Rng>(rng: &mut R, users: usize, items: usize) -> TripletBatch {
    let n = rng.random_range(1..=6);
    TripletBatch {
        triples: (0..n)
            .map(|_| {
                let pos = rng.random_range(0..items as u32);
                let mut neg = rng.random_range(0..items as u32 - 1);
                if neg >= pos {
                    neg += 1;
                }
                Triple {
                    user: rng.random_range(0..users as u32),
                    pos,
                    neg,
                }
            })
            .collect(),
    }
}

fn rows_of(g: &cigar::adam::RowGrads, rows: usize) -> Vec<f64> {
    (0..rows).flat_map(|r| g.row(r).to_vec()).collect()
}

fn split_pair(flat: &[f64], a_rows: usize, b_rows: usize, dim: usize) -> (DenseEmbeddingMatrix, DenseEmbeddingMatrix) {
    let (a, b) = flat.split_at(a_rows * dim);
    (
        DenseEmbeddingMatrix::from_vec(a_rows, dim, a.to_vec()).unwrap(),
        DenseEmbeddingMatrix::from_vec(b_rows, dim, b.to_vec()).unwrap(),
    )
}

fn gradcheck_surrogate(rng: &mut ChaCha8Rng) -> f64 {
    let (nu, ni, r) = (rng.random_range(1..=4), rng.random_range(2..=6), rng.random_range(2..=6));
    let users = DenseEmbeddingMatrix::uniform(nu, r, 1.0, rng);
    let items = DenseEmbeddingMatrix::uniform(ni, r, 1.0, rng);
    let batch = random_batch(rng, nu, ni);
    let (alpha, beta, lambda) = (rng.random_range(0.2..3.0), rng.random_range(0.2..3.0), rng.random_range(0.0..0.1));
    let out = surrogate_loss(&batch, &users, &items, alpha, beta, lambda).unwrap();
    let params = [users.values(), items.values()].concat();
    let grads = [rows_of(&out.user_grads, nu), rows_of(&out.item_grads, ni)].concat();
    worst_error(&params, &grads, |x| {
        let (u, i) = split_pair(x, nu, ni, r);
        surrogate_loss(&batch, &u, &i, alpha, beta, lambda).unwrap().loss
    })
}

fn worst_error(params: &[f64], grads: &[f64], loss: impl FnMut(&[f64]) -> f64) -> f64 {
    common::worst_fd_error(params, grads, loss).0
}

fn gradcheck_bpr(rng: &mut ChaCha8Rng) -> f64 {
    let (nu, ni, k) = (rng.random_range(1..=4), rng.random_range(2..=6), rng.random_range(2..=6));
    let model = MatrixFactorization {
        user: DenseEmbeddingMatrix::uniform(nu, k, 1.0, rng),
        item: DenseEmbeddingMatrix::uniform(ni, k, 1.0, rng),
    };
    let batch = random_batch(rng, nu, ni);
    let lambda = rng.random_range(0.0..0.1);
    let out = bpr_loss(&model, &batch, lambda).unwrap();
    let params = [model.user.values(), model.item.values()].concat();
    let grads = [rows_of(&out.user_grads, nu), rows_of(&out.item_grads, ni)].concat();
    worst_error(&params, &grads, |x| {
        let (user, item) = split_pair(x, nu, ni, k);
        bpr_loss(&MatrixFactorization { user, item }, &batch, lambda).unwrap().loss
    })
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

fn gradcheck_cml(rng: &mut ChaCha8Rng) -> f64 {
    loop {
        let (nu, ni, k) = (rng.random_range(1..=4), rng.random_range(2..=6), rng.random_range(2..=6));
        let model = MetricEmbedding {
            user: DenseEmbeddingMatrix::uniform(nu, k, 0.5, rng),
            item: DenseEmbeddingMatrix::uniform(ni, k, 0.5, rng),
            margin: rng.random_range(0.1..2.0),
        };
        let batch = random_batch(rng, nu, ni);
        // The hinge and the distance are not differentiable at zero; keep
        // instances away from those points.
        let near_kink = batch.triples.iter().any(|t| {
            let p = model.user.row(t.user as usize);
            let dp = dist(p, model.item.row(t.pos as usize));
            let dn = dist(p, model.item.row(t.neg as usize));
            dp < 1e-3 || dn < 1e-3 || (model.margin - dn + dp).abs() < 1e-3
        });
        if near_kink {
            continue;
        }
        let lambda = rng.random_range(0.0..0.1);
        let out = cml_loss(&model, &batch, lambda).unwrap();
        let params = [model.user.values(), model.item.values()].concat();
        let grads = [rows_of(&out.user_grads, nu), rows_of(&out.item_grads, ni)].concat();
        let margin = model.margin;
        return worst_error(&params, &grads, |x| {
            let (user, item) = split_pair(x, nu, ni, k);
            cml_loss(&MetricEmbedding { user, item, margin }, &batch, lambda).unwrap().loss
        });
    }
}

fn neumf_flat(m: &NeuMf) -> Vec<f64> {
    let mut v = [m.gmf_user.values(), m.gmf_item.values(), m.mlp_user.values(), m.mlp_item.values()].concat();
    for l in &m.layers {
        v.extend(&l.weights);
        v.extend(&l.bias);
    }
    v.extend(&m.output);
    v
}

fn neumf_from_flat(template: &NeuMf, flat: &[f64]) -> NeuMf {
    let mut m = template.clone();
    let mut at = 0;
    let mut take = |dst: &mut [f64]| {
        dst.copy_from_slice(&flat[at..at + dst.len()]);
        at += dst.len();
    };
    take(m.gmf_user.values_mut());
    take(m.gmf_item.values_mut());
    take(m.mlp_user.values_mut());
    take(m.mlp_item.values_mut());
    for l in &mut m.layers {
        take(&mut l.weights);
        take(&mut l.bias);
    }
    take(&mut m.output);
    m
}

/// Smallest |pre-activation| over the pairs of a batch, from a direct
/// forward pass.
fn min_preactivation(m: &NeuMf, batch: &TripletBatch) -> f64 {
    let mut smallest = f64::INFINITY;
    for t in &batch.triples {
        for i in [t.pos, t.neg] {
            let mut h = [m.mlp_user.row(t.user as usize), m.mlp_item.row(i as usize)].concat();
            for l in &m.layers {
                let z: Vec<f64> = (0..l.outputs)
                    .map(|o| l.bias[o] + dot(&l.weights[o * l.inputs..(o + 1) * l.inputs], &h))
                    .collect();
                smallest = z.iter().fold(smallest, |a, v| a.min(v.abs()));
                h = z.iter().map(|v| v.max(0.0)).collect();
            }
        }
    }
    smallest
}

fn gradcheck_neumf(rng: &mut ChaCha8Rng) -> f64 {
    loop {
        let (nu, ni, k) = (rng.random_range(1..=3), rng.random_range(2..=5), rng.random_range(2..=4));
        let arch: Vec<usize> = (0..rng.random_range(1..=3)).map(|_| rng.random_range(2..=6)).collect();
        let mut model = NeuMf::new(nu, ni, k, &arch, 1.0, rng).unwrap();
        for l in &mut model.layers {
            l.bias.iter_mut().for_each(|b| *b = rng.random_range(-0.5..0.5));
        }
        let batch = random_batch(rng, nu, ni);
        // ReLU has a kink at zero.
        if min_preactivation(&model, &batch) < 1e-3 {
            continue;
        }
        let lambda = rng.random_range(0.0..0.1);
        let out = neumf_loss(&model, &batch, lambda).unwrap();
        let g = &out.grads;
        let mut grads = [
            rows_of(&g.gmf_user, nu),
            rows_of(&g.gmf_item, ni),
            rows_of(&g.mlp_user, nu),
            rows_of(&g.mlp_item, ni),
        ]
        .concat();
        for (w, b) in &g.layers {
            grads.extend(w);
            grads.extend(b);
        }
        grads.extend(&g.output);
        let params = neumf_flat(&model);
        return worst_error(&params, &grads, |x| neumf_loss(&neumf_from_flat(&model, x), &batch, lambda).unwrap().loss);
    }
}

fn criterion_6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let checks: [(&str, fn(&mut ChaCha8Rng) -> f64); 4] = [
        ("surrogate", gradcheck_surrogate),
        ("bpr", gradcheck_bpr),
        ("cml", gradcheck_cml),
        ("neumf", gradcheck_neumf),
    ];
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, check) in checks {
        let worst = (0..C6_INSTANCES).map(|_| check(&mut rng)).fold(0.0, f64::max);
        pass &= worst <= common::FD_TOLERANCE;
        parts.push(format!("{name} {worst:.2e}"));
    }
    outcome(
        pass,
        format!(
            "worst relative error over {C6_INSTANCES} instances: {} (limit {:.0e})",
            parts.join(", "),
            common::FD_TOLERANCE
        ),
    )
}

fn criterion_7() -> Outcome {
    let Some(ds) = common::ml1m(0) else { return missing_ml1m() };
    let cfg = HashRecConfig {
        num_epochs: C7_EPOCHS,
        patience: None,
        ..HashRecConfig::default()
    };
    let curve = train_hashrec_with(&ds, &cfg, None).expect("training succeeds").curve;
    let first = &curve.epochs[C7_FROM_EPOCH - 1];
    let last = curve.epochs.last().unwrap();
    outcome(
        curve.epochs.len() == C7_EPOCHS
            && last.desired_loss < first.desired_loss
            && last.quantization_error < first.quantization_error,
        format!(
            "epoch {C7_FROM_EPOCH} → {}: desired loss {:.4} → {:.4}, quantization error {:.4} → {:.4}",
            last.epoch, first.desired_loss, last.desired_loss, first.quantization_error, last.quantization_error
        ),
    )
}

fn criterion_8() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let a = BinaryCodeMatrix::random(C8_PAIRS, BITS, &mut rng).unwrap();
    let b = BinaryCodeMatrix::random(C8_PAIRS, BITS, &mut rng).unwrap();
    let (sa, sb) = (a.to_signs(), b.to_signs());
    let identity_failures = (0..C8_PAIRS)
        .filter(|&p| {
            let ip = dot(sa.row(p), sb.row(p));
            let dh = hamming_distance(a.row(p), b.row(p)).unwrap();
            ip != BITS as f64 - 2.0 * dh as f64 || a.inner_product(p, &b, p) != BITS as i64 - 2 * dh as i64
        })
        .count();

    // Exhaustive candidates on a synthetic dataset, for every model family.
    let ds = common::random_dataset(&mut rng, 150, 120, 5, 25);
    let item_codes = BinaryCodeMatrix::random(ds.num_items(), BITS, &mut rng).unwrap();
    let user_codes = BinaryCodeMatrix::random(ds.num_users(), BITS, &mut rng).unwrap();
    let index = build_index(item_codes.clone(), 8).unwrap();
    let quick = RerankConfig {
        num_epochs: 3,
        batch_size: 256,
        k: 16,
        neumf_k: 4,
        mlp_arch: vec![8, 4],
        ..RerankConfig::default()
    };
    let models: Vec<RankerModel> = [RankerKind::BprMf, RankerKind::Cml, RankerKind::NeuMf, RankerKind::Pop, RankerKind::BprB]
        .into_iter()
        .map(|k| train_ranker(&ds, k, &quick, None).unwrap().model)
        .chain([RankerModel::from_codes(user_codes.clone(), item_codes).unwrap()])
        .collect();
    let mut mismatches = Vec::new();
    for model in &models {
        for split in [Split::Valid, Split::Test] {
            for n in [1, 10, 50] {
                let full = evaluate_full(model, &ds, n, split).unwrap();
                let piped = evaluate_cigar(&user_codes, &index, model, &ds, n, ds.num_items(), L_MAX, split).unwrap();
                if full != piped || full.hr.to_bits() != piped.hr.to_bits() || full.mrr.to_bits() != piped.mrr.to_bits() {
                    mismatches.push(format!("{}@{n}", model.kind()));
                }
            }
        }
    }
    outcome(
        identity_failures == 0 && mismatches.is_empty(),
        format!(
            "{identity_failures}/{C8_PAIRS} identity failures; exhaustive pipeline mismatches: {}",
            if mismatches.is_empty() { "none".to_string() } else { mismatches.join(", ") }
        ),
    )
}

fn main() {
    let only: Option<Vec<u32>> = std::env::var("CIGAR_ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect());
    let wanted = |id: u32| only.as_ref().is_none_or(|o| o.contains(&id));

    let needs_runs = [1, 2, 3].iter().any(|&i| wanted(i));
    let started = Instant::now();
    let runs = if needs_runs { ml1m_runs() } else { None };
    let runs = runs.as_deref();

    let criteria: Vec<(u32, &str, Box<dyn Fn() -> Outcome + '_>)> = vec![
        (1, "MovieLens-1M HashRec HR@200 and HR@10", Box::new(|| criterion_1(runs))),
        (2, "MovieLens-1M CIGAR vs BPR-MF ordering", Box::new(|| criterion_2(runs))),
        (3, "MovieLens-1M HashRec > BPR-B > POP at HR@200", Box::new(|| criterion_3(runs))),
        (4, "MIH agrees with linear scan within the exact radius", Box::new(criterion_4)),
        (5, "MIH at least 10x faster than linear Hamming scan on 1M codes", Box::new(criterion_5)),
        (6, "analytic gradients match finite differences", Box::new(criterion_6)),
        (7, "MovieLens-1M desired loss and quantization error decrease", Box::new(criterion_7)),
        (8, "code inner-product identity and exhaustive pipeline equality", Box::new(criterion_8)),
    ];
    let mut failed = 0;
    for (id, name, run) in &criteria {
        if !wanted(*id) {
            continue;
        }
        let t = Instant::now();
        let o = run();
        if !o.pass {
            failed += 1;
        }
        println!(
            "{} [{id}] {name}: {} ({:.1}s)",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            t.elapsed().as_secs_f64()
        );
    }
    println!("acceptance finished in {:.1}s, {failed} failing", started.elapsed().as_secs_f64());
    if failed > 0 {
        std::process::exit(1);
    }
}
