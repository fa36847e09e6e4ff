mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use cigar::bench::{bench_retrieval, rows_to_csv, BenchInputs, BenchMethod};
use cigar::candidates::user_candidates;
use cigar::dataset::{drop_top_popular, kcore_filter, leave_one_out_split, load_interactions};
use cigar::eval::format_table;
use cigar::hashrec::{train_hashrec_with, HashRecTraining};
use cigar::mih::default_substrings;
use cigar::ranker::RankerTraining;
use cigar::*;
use clap::{Args, Parser, Subcommand};

use config::RunConfig;

const DATASET: &str = "dataset.cgds";
const CODES: &str = "hashrec.cghr";
const INDEX: &str = "index.cgix";
const CANDIDATES: &str = "candidates.cgcd";
const THREADS_ENV: &str = "CIGAR_THREADS";

/// Binary-code candidate generation and re-ranking for Top-N recommendation.
///
/// Every stage reads its inputs from `--out-dir` under fixed file names
/// unless given explicit paths, so stages chain by sharing one directory.
/// Settings resolve as defaults < `--config` file < `--set key=value` <
/// typed flags; the resolved set is written to `<out-dir>/<command>.conf`.
#[derive(Parser)]
#[command(name = "cigar", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one setting; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Directory for outputs and default inputs.
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Read an interaction log, k-core filter it and split leave-one-out.
    Ingest {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        input: PathBuf,
        /// csv, tsv or movielens.
        #[arg(long)]
        format: Option<String>,
        #[arg(long)]
        kcore: Option<usize>,
        #[arg(long)]
        drop_top_percent: Option<f64>,
    },
    /// Learn user and item binary codes.
    TrainHash {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Continue from a previously trained code file.
        #[arg(long)]
        warm_start: Option<PathBuf>,
        #[arg(long)]
        bits: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Build the multi-index hash table over item codes.
    BuildIndex {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        codes: Option<PathBuf>,
        /// Number of substrings; defaults by catalogue size.
        #[arg(long)]
        m: Option<usize>,
    },
    /// Retrieve `c` candidates per user.
    GenCandidates {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        codes: Option<PathBuf>,
        #[arg(long)]
        index: Option<PathBuf>,
        #[arg(short)]
        c: Option<usize>,
        #[arg(long)]
        l_max: Option<usize>,
    },
    /// Train a re-ranker, drawing negatives from candidates when given.
    TrainRanker {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Candidate file; enables candidate-oriented sampling.
        #[arg(long)]
        candidates: Option<PathBuf>,
        /// Code file, for the hashrec kind.
        #[arg(long)]
        codes: Option<PathBuf>,
        /// bpr-mf, cml, neumf, pop, bpr-b (k follows bits) or hashrec.
        #[arg(long)]
        kind: Option<String>,
        #[arg(long)]
        h: Option<f64>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Print the top-n items for one user (original id).
    Recommend {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        codes: Option<PathBuf>,
        #[arg(long)]
        index: Option<PathBuf>,
        #[arg(long)]
        kind: Option<String>,
        #[arg(long)]
        user: u64,
        #[arg(short)]
        n: Option<usize>,
        /// Rank every item instead of the retrieved candidates.
        #[arg(long)]
        full: bool,
    },
    /// Measure HR@N and MRR@N on the held-out items.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        codes: Option<PathBuf>,
        #[arg(long)]
        index: Option<PathBuf>,
        #[arg(long)]
        kind: Option<String>,
        /// cigar (retrieve then re-rank), full (rank every item) or
        /// candidates (hit rate of the retrieved set at c).
        #[arg(long, default_value = "cigar")]
        mode: String,
        #[arg(short)]
        n: Option<usize>,
        #[arg(short)]
        c: Option<usize>,
        /// valid or test.
        #[arg(long)]
        split: Option<String>,
    },
    /// Time retrieval per query; prints CSV.
    Bench {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        codes: Option<PathBuf>,
        #[arg(long)]
        index: Option<PathBuf>,
        #[arg(long)]
        kind: Option<String>,
        /// Comma-separated: linear-real, linear-hamming, mih, cigar-pipeline.
        #[arg(long, default_value = "linear-hamming,mih")]
        methods: String,
        /// Number of users queried, from user 0 upwards.
        #[arg(long, default_value_t = 1000)]
        queries: usize,
        #[arg(long, default_value_t = 100)]
        warmup: usize,
        #[arg(long, default_value_t = 3)]
        repeats: usize,
        #[arg(short)]
        c: Option<usize>,
    },
    /// Run every stage from an interaction log to evaluation reports.
    Pipeline {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        format: Option<String>,
        #[arg(long)]
        kind: Option<String>,
        #[arg(long)]
        h: Option<f64>,
        #[arg(short)]
        c: Option<usize>,
        #[arg(short)]
        n: Option<usize>,
    },
}

fn resolve(common: &Common, typed: &[(&str, Option<String>)]) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &common.config {
        cfg.apply_file(path)?;
    }
    for pair in &common.set {
        cfg.set_pair(pair)?;
    }
    if let Some(seed) = common.seed {
        cfg.set("seed", &seed.to_string())?;
    }
    for (key, value) in typed {
        if let Some(v) = value {
            cfg.set(key, v)?;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn opt<T: ToString>(v: &Option<T>) -> Option<String> {
    v.as_ref().map(T::to_string)
}

fn input(explicit: &Option<PathBuf>, dir: &Path, name: &str) -> PathBuf {
    explicit.clone().unwrap_or_else(|| dir.join(name))
}

fn ranker_file(kind: RankerKind) -> String {
    format!("ranker-{kind}.cgrk")
}

fn prepare_out(dir: &Path, command: &str, cfg: &RunConfig) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    write(&dir.join(format!("{command}.conf")), cfg.to_text())
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn ingest(path: &Path, cfg: &RunConfig) -> Result<InteractionDataset> {
    let mut log = load_interactions(path, cfg.format)?;
    if cfg.drop_top_percent > 0.0 {
        log = drop_top_popular(&log, cfg.drop_top_percent)?;
    }
    let core = kcore_filter(&log, cfg.kcore)?;
    let ds = leave_one_out_split(&core, cfg.seed)?;
    println!(
        "dataset: {} users, {} items, {} training interactions",
        ds.num_users(),
        ds.num_items(),
        ds.num_train_interactions()
    );
    Ok(ds)
}

fn train_hash(ds: &InteractionDataset, cfg: &RunConfig, warm: Option<&HashRecModel>, out: &Path) -> Result<HashRecModel> {
    let HashRecTraining { model, curve, best_epoch } = train_hashrec_with(ds, &cfg.hash, warm)?;
    model.save(&out.join(CODES))?;
    write(&out.join("hashrec_curve.csv"), curve.to_csv())?;
    println!(
        "hashrec: {} bits, {} epochs, best epoch {best_epoch}",
        model.bits(),
        curve.epochs.len()
    );
    Ok(model)
}

fn build(codes: &BinaryCodeMatrix, cfg: &mut RunConfig, out: &Path) -> Result<MultiIndexHashTable> {
    let m = cfg.m.unwrap_or_else(|| default_substrings(codes.rows(), codes.bits()));
    cfg.m = Some(m);
    let index = build_index(codes.clone(), m)?;
    index.save(&out.join(INDEX))?;
    println!("index: {} items, {m} substrings of {} bits", index.num_items(), index.substring_len());
    Ok(index)
}

fn train_rank(
    ds: &InteractionDataset,
    cfg: &mut RunConfig,
    candidates: Option<&CandidateSet>,
    codes: Option<&HashRecModel>,
    out: &Path,
) -> Result<RankerModel> {
    let kind = cfg.ranker;
    let model = if kind == RankerKind::HashRec {
        let codes = codes.context("the hashrec ranker needs a code file")?;
        RankerModel::from_codes(codes.user_codes.clone(), codes.item_codes.clone())?
    } else {
        if kind == RankerKind::BprB {
            cfg.rerank.k = cfg.hash.bits;
        }
        let RankerTraining {
            model,
            curve,
            best_epoch,
            sampler,
        } = train_ranker(ds, kind, &cfg.rerank, candidates)?;
        let mut csv = String::from("epoch,loss,validation_hr,candidate_fraction\n");
        for e in &curve {
            let hr = e.validation_hr.map(|v| v.to_string()).unwrap_or_default();
            csv.push_str(&format!("{},{},{hr},{}\n", e.epoch, e.loss, e.candidate_fraction));
        }
        write(&out.join(format!("ranker-{kind}_curve.csv")), csv)?;
        println!("{kind}: {} epochs, best epoch {best_epoch}", curve.len());
        if candidates.is_some() {
            println!(
                "sampler: h {} candidate {} global {} fallbacks {} candidate_fraction {:.4}",
                cfg.rerank.h,
                sampler.candidate,
                sampler.global,
                sampler.fallbacks,
                sampler.candidate_fraction()
            );
        }
        model
    };
    model.save(&out.join(ranker_file(kind)))?;
    Ok(model)
}

fn report(out: &Path, label: &str, r: &EvalReport) -> Result<()> {
    write(&out.join(format!("report-{label}.json")), r.to_json(false) + "\n")
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Command::Ingest {
            common,
            input: path,
            format,
            kcore,
            drop_top_percent,
        } => {
            let cfg = resolve(
                &common,
                &[
                    ("format", format),
                    ("kcore", opt(&kcore)),
                    ("drop_top_percent", opt(&drop_top_percent)),
                ],
            )?;
            let ds = ingest(&path, &cfg)?;
            prepare_out(&common.out_dir, "ingest", &cfg)?;
            ds.save(&common.out_dir.join(DATASET))?;
        }
        Command::TrainHash {
            common,
            dataset,
            warm_start,
            bits,
            epochs,
        } => {
            let cfg = resolve(&common, &[("bits", opt(&bits)), ("hash_epochs", opt(&epochs))])?;
            let ds = InteractionDataset::load(&input(&dataset, &common.out_dir, DATASET))?;
            let warm = warm_start.as_deref().map(HashRecModel::load).transpose()?;
            prepare_out(&common.out_dir, "train-hash", &cfg)?;
            train_hash(&ds, &cfg, warm.as_ref(), &common.out_dir)?;
        }
        Command::BuildIndex { common, codes, m } => {
            let mut cfg = resolve(&common, &[("m", opt(&m))])?;
            let model = HashRecModel::load(&input(&codes, &common.out_dir, CODES))?;
            fs::create_dir_all(&common.out_dir)?;
            build(&model.item_codes, &mut cfg, &common.out_dir)?;
            prepare_out(&common.out_dir, "build-index", &cfg)?;
        }
        Command::GenCandidates {
            common,
            dataset,
            codes,
            index,
            c,
            l_max,
        } => {
            let cfg = resolve(&common, &[("c", opt(&c)), ("l_max", opt(&l_max))])?;
            let dir = &common.out_dir;
            let ds = InteractionDataset::load(&input(&dataset, dir, DATASET))?;
            let model = HashRecModel::load(&input(&codes, dir, CODES))?;
            let index = MultiIndexHashTable::load(&input(&index, dir, INDEX))?;
            let cands = generate_candidates(&index, &model.user_codes, &ds, cfg.rerank.c, cfg.l_max)?;
            prepare_out(dir, "gen-candidates", &cfg)?;
            cands.save(&dir.join(CANDIDATES))?;
            println!("candidates: {} users, c = {}", cands.num_users(), cfg.rerank.c);
        }
        Command::TrainRanker {
            common,
            dataset,
            candidates,
            codes,
            kind,
            h,
            epochs,
        } => {
            let mut cfg = resolve(&common, &[("ranker", kind), ("h", opt(&h)), ("epochs", opt(&epochs))])?;
            let dir = &common.out_dir;
            let ds = InteractionDataset::load(&input(&dataset, dir, DATASET))?;
            let cands = candidates.as_deref().map(CandidateSet::load).transpose()?;
            let codes = if cfg.ranker == RankerKind::HashRec {
                Some(HashRecModel::load(&input(&codes, dir, CODES))?)
            } else {
                None
            };
            fs::create_dir_all(dir)?;
            train_rank(&ds, &mut cfg, cands.as_ref(), codes.as_ref(), dir)?;
            prepare_out(dir, "train-ranker", &cfg)?;
        }
        Command::Recommend {
            common,
            dataset,
            model,
            codes,
            index,
            kind,
            user,
            n,
            full,
        } => {
            let cfg = resolve(&common, &[("ranker", kind), ("n", opt(&n))])?;
            let dir = &common.out_dir;
            let ds = InteractionDataset::load(&input(&dataset, dir, DATASET))?;
            let ranker = RankerModel::load(&input(&model, dir, &ranker_file(cfg.ranker)))?;
            let u = ds
                .find_user(user)
                .with_context(|| format!("user {user} is not in the dataset"))?;
            let pool: Vec<ItemId> = if full {
                (0..ds.num_items() as ItemId).collect()
            } else {
                let codes = HashRecModel::load(&input(&codes, dir, CODES))?;
                let index = MultiIndexHashTable::load(&input(&index, dir, INDEX))?;
                if codes.user_codes.rows() != ds.num_users() {
                    bail!("code file has {} users, dataset {}", codes.user_codes.rows(), ds.num_users());
                }
                let popular = ds.popularity_ranking();
                user_candidates(
                    &mut index.searcher(),
                    codes.user_codes.row(u as usize),
                    ds.train(u),
                    cfg.rerank.c,
                    cfg.l_max,
                    &popular,
                )?
                .items
            };
            for (rank, item) in rerank(&ranker, u, &pool, cfg.n, ds.train(u))?.into_iter().enumerate() {
                println!("{}\t{}\t{}", rank + 1, ds.original_item(item), ranker.score(u, item)?);
            }
        }
        Command::Evaluate {
            common,
            dataset,
            model,
            codes,
            index,
            kind,
            mode,
            n,
            c,
            split,
        } => {
            let cfg = resolve(&common, &[("ranker", kind), ("n", opt(&n)), ("c", opt(&c)), ("split", split)])?;
            let dir = &common.out_dir;
            let ds = InteractionDataset::load(&input(&dataset, dir, DATASET))?;
            let load_codes = || -> Result<(HashRecModel, MultiIndexHashTable)> {
                Ok((
                    HashRecModel::load(&input(&codes, dir, CODES))?,
                    MultiIndexHashTable::load(&input(&index, dir, INDEX))?,
                ))
            };
            let load_model = || RankerModel::load(&input(&model, dir, &ranker_file(cfg.ranker)));
            let (c, l_max, split) = (cfg.rerank.c, cfg.l_max, cfg.split);
            let (label, r) = match mode.as_str() {
                "cigar" => {
                    let (codes, index) = load_codes()?;
                    let m = load_model()?;
                    (format!("cigar-{}", cfg.ranker), evaluate_cigar(&codes.user_codes, &index, &m, &ds, cfg.n, c, l_max, split)?)
                }
                "full" => (format!("full-{}", cfg.ranker), evaluate_full(&load_model()?, &ds, cfg.n, split)?),
                "candidates" => {
                    let (codes, index) = load_codes()?;
                    ("candidates".to_string(), evaluate_candidates(&codes.user_codes, &index, &ds, c, l_max, split)?)
                }
                other => bail!("unknown evaluation mode {other:?}; expected cigar, full or candidates"),
            };
            prepare_out(dir, "evaluate", &cfg)?;
            report(dir, &label, &r)?;
            print!("{}", format_table(&[(label, r)]));
        }
        Command::Bench {
            common,
            dataset,
            model,
            codes,
            index,
            kind,
            methods,
            queries,
            warmup,
            repeats,
            c,
        } => {
            let cfg = resolve(&common, &[("ranker", kind), ("c", opt(&c))])?;
            let dir = &common.out_dir;
            let methods: Vec<BenchMethod> = methods.split(',').map(|m| m.trim().parse()).collect::<cigar::Result<_>>()?;
            let needs_model = methods
                .iter()
                .any(|m| matches!(m, BenchMethod::LinearReal | BenchMethod::CigarPipeline));
            let codes = HashRecModel::load(&input(&codes, dir, CODES))?;
            let index = MultiIndexHashTable::load(&input(&index, dir, INDEX))?;
            let ranker = needs_model
                .then(|| RankerModel::load(&input(&model, dir, &ranker_file(cfg.ranker))))
                .transpose()?;
            let ds = needs_model
                .then(|| InteractionDataset::load(&input(&dataset, dir, DATASET)))
                .transpose()?;
            let users = codes.user_codes.rows().min(queries);
            let rows = bench_retrieval(
                &methods,
                &BenchInputs {
                    user_codes: &codes.user_codes,
                    index: &index,
                    model: ranker.as_ref(),
                    dataset: ds.as_ref(),
                    queries: (0..users as UserId).collect(),
                    c: cfg.rerank.c,
                    n: cfg.n,
                    l_max: cfg.l_max,
                    warmup,
                    repeats,
                },
            )?;
            let csv = rows_to_csv(&rows);
            prepare_out(dir, "bench", &cfg)?;
            write(&dir.join("bench.csv"), &csv)?;
            print!("{csv}");
        }
        Command::Pipeline {
            common,
            input: path,
            format,
            kind,
            h,
            c,
            n,
        } => {
            let mut cfg = resolve(
                &common,
                &[("format", format), ("ranker", kind), ("h", opt(&h)), ("c", opt(&c)), ("n", opt(&n))],
            )?;
            let dir = common.out_dir.clone();
            fs::create_dir_all(&dir)?;
            let ds = ingest(&path, &cfg)?;
            ds.save(&dir.join(DATASET))?;
            let codes = train_hash(&ds, &cfg, None, &dir)?;
            let index = build(&codes.item_codes, &mut cfg, &dir)?;
            let (c, l_max, split) = (cfg.rerank.c, cfg.l_max, cfg.split);
            let cands = generate_candidates(&index, &codes.user_codes, &ds, c, l_max)?;
            cands.save(&dir.join(CANDIDATES))?;
            let model = train_rank(&ds, &mut cfg, Some(&cands), Some(&codes), &dir)?;
            let rows = vec![
                ("candidates".to_string(), evaluate_candidates(&codes.user_codes, &index, &ds, c, l_max, split)?),
                (
                    format!("cigar-{}", cfg.ranker),
                    evaluate_cigar(&codes.user_codes, &index, &model, &ds, cfg.n, c, l_max, split)?,
                ),
                (format!("full-{}", cfg.ranker), evaluate_full(&model, &ds, cfg.n, split)?),
            ];
            for (label, r) in &rows {
                report(&dir, label, r)?;
            }
            prepare_out(&dir, "pipeline", &cfg)?;
            print!("{}", format_table(&rows));
        }
    }
    Ok(())
}

fn configure_threads() -> Result<()> {
    let Ok(value) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let threads: usize = value
        .trim()
        .parse()
        .with_context(|| format!("{THREADS_ENV} must be a thread count, got {value:?}"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .context("configuring the thread pool")
}

/// 3 for numeric failures inside training, 2 for everything else.
fn exit_code(err: &anyhow::Error) -> u8 {
    let numeric = err
        .chain()
        .any(|e| e.downcast_ref::<cigar::Error>().is_some_and(cigar::Error::is_numeric));
    if numeric {
        3
    } else {
        2
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match configure_threads().and_then(|()| run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
