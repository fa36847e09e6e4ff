//! Flat `key = value` run configuration.
//!
//! Values come from the defaults, then a config file, then `--set` pairs and
//! typed flags. The fully resolved set is written next to every output.

use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use cigar::dataset::LogFormat;
use cigar::hashrec::BetaSchedule;
use cigar::{HashRecConfig, RankerKind, RerankConfig, Split};

#[derive(Clone, Debug)]
pub struct RunConfig {
    pub format: LogFormat,
    pub kcore: usize,
    pub seed: u64,
    pub drop_top_percent: f64,
    pub hash: HashRecConfig,
    /// Substrings of the index; `None` picks by catalogue size.
    pub m: Option<usize>,
    pub l_max: usize,
    pub ranker: RankerKind,
    pub rerank: RerankConfig,
    pub n: usize,
    pub split: Split,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            format: LogFormat::Csv,
            kcore: 5,
            seed: 0,
            drop_top_percent: 0.0,
            hash: HashRecConfig::default(),
            m: None,
            l_max: 1,
            ranker: RankerKind::BprMf,
            rerank: RerankConfig::default(),
            n: 10,
            split: Split::Test,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: Display,
{
    value.parse().map_err(|e| anyhow!("{key}: cannot parse {value:?}: {e}"))
}

/// `auto` (or `none`) maps to `None`.
fn parse_opt<T: FromStr>(key: &str, value: &str) -> Result<Option<T>>
where
    T::Err: Display,
{
    match value {
        "auto" | "none" => Ok(None),
        v => parse(key, v).map(Some),
    }
}

fn show_opt<T: Display>(v: Option<T>, absent: &str) -> String {
    v.map_or_else(|| absent.to_string(), |v| v.to_string())
}

fn parse_split(key: &str, value: &str) -> Result<Split> {
    parse::<Split>(key, value)
}

fn parse_beta(key: &str, value: &str) -> Result<BetaSchedule> {
    match value.split_once(':') {
        Some(("annealed", r)) => Ok(BetaSchedule::Annealed { rate: parse(key, r)? }),
        Some(("constant", b)) => Ok(BetaSchedule::Constant(parse(key, b)?)),
        _ => bail!("{key}: expected annealed:<rate> or constant:<beta>, got {value:?}"),
    }
}

fn show_beta(b: BetaSchedule) -> String {
    match b {
        BetaSchedule::Annealed { rate } => format!("annealed:{rate}"),
        BetaSchedule::Constant(b) => format!("constant:{b}"),
    }
}

impl RunConfig {
    /// Every key in file order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let h = &self.hash;
        let r = &self.rerank;
        vec![
            ("format", self.format.to_string()),
            ("kcore", self.kcore.to_string()),
            ("seed", self.seed.to_string()),
            ("drop_top_percent", self.drop_top_percent.to_string()),
            ("bits", h.bits.to_string()),
            ("hash_lambda", h.lambda.to_string()),
            ("alpha", show_opt(h.alpha, "auto")),
            ("hash_epochs", h.num_epochs.to_string()),
            ("hash_iters", show_opt(h.iters_per_epoch, "auto")),
            ("hash_batch", h.batch_size.to_string()),
            ("hash_lr", h.learning_rate.to_string()),
            ("beta", show_beta(h.beta_schedule)),
            ("hash_eval_every", h.eval_every.to_string()),
            ("hash_patience", show_opt(h.patience, "none")),
            ("hash_validation_cutoff", h.validation_cutoff.to_string()),
            ("hash_init_scale", show_opt(h.init_scale, "auto")),
            ("m", show_opt(self.m, "auto")),
            ("c", r.c.to_string()),
            ("l_max", self.l_max.to_string()),
            ("ranker", self.ranker.to_string()),
            ("k", r.k.to_string()),
            ("neumf_k", r.neumf_k.to_string()),
            ("lambda", r.lambda.to_string()),
            ("h", r.h.to_string()),
            ("margin", r.margin.to_string()),
            (
                "mlp_arch",
                r.mlp_arch.iter().map(|w| w.to_string()).collect::<Vec<_>>().join(","),
            ),
            ("epochs", r.num_epochs.to_string()),
            ("iters", show_opt(r.iters_per_epoch, "auto")),
            ("batch", r.batch_size.to_string()),
            ("lr", r.learning_rate.to_string()),
            ("eval_every", r.eval_every.to_string()),
            ("patience", show_opt(r.patience, "none")),
            ("validation_cutoff", r.validation_cutoff.to_string()),
            ("init_scale", show_opt(r.init_scale, "auto")),
            ("n", self.n.to_string()),
            (
                "split",
                match self.split {
                    Split::Valid => "valid",
                    Split::Test => "test",
                }
                .to_string(),
            ),
            ("prefetch", h.prefetch.to_string()),
        ]
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let h = &mut self.hash;
        let r = &mut self.rerank;
        match key.trim() {
            "format" => self.format = parse(key, v)?,
            "kcore" => self.kcore = parse(key, v)?,
            "seed" => {
                self.seed = parse(key, v)?;
                h.seed = self.seed;
                r.seed = self.seed;
            }
            "drop_top_percent" => self.drop_top_percent = parse(key, v)?,
            "bits" => h.bits = parse(key, v)?,
            "hash_lambda" => h.lambda = parse(key, v)?,
            "alpha" => h.alpha = parse_opt(key, v)?,
            "hash_epochs" => h.num_epochs = parse(key, v)?,
            "hash_iters" => h.iters_per_epoch = parse_opt(key, v)?,
            "hash_batch" => h.batch_size = parse(key, v)?,
            "hash_lr" => h.learning_rate = parse(key, v)?,
            "beta" => h.beta_schedule = parse_beta(key, v)?,
            "hash_eval_every" => h.eval_every = parse(key, v)?,
            "hash_patience" => h.patience = parse_opt(key, v)?,
            "hash_validation_cutoff" => h.validation_cutoff = parse(key, v)?,
            "hash_init_scale" => h.init_scale = parse_opt(key, v)?,
            "m" => self.m = parse_opt(key, v)?,
            "c" => r.c = parse(key, v)?,
            "l_max" => self.l_max = parse(key, v)?,
            "ranker" => self.ranker = parse(key, v)?,
            "k" => r.k = parse(key, v)?,
            "neumf_k" => r.neumf_k = parse(key, v)?,
            "lambda" => r.lambda = parse(key, v)?,
            "h" => r.h = parse(key, v)?,
            "margin" => r.margin = parse(key, v)?,
            "mlp_arch" => {
                r.mlp_arch = v
                    .split(',')
                    .map(|w| parse(key, w.trim()))
                    .collect::<Result<_>>()?
            }
            "epochs" => r.num_epochs = parse(key, v)?,
            "iters" => r.iters_per_epoch = parse_opt(key, v)?,
            "batch" => r.batch_size = parse(key, v)?,
            "lr" => r.learning_rate = parse(key, v)?,
            "eval_every" => r.eval_every = parse(key, v)?,
            "patience" => r.patience = parse_opt(key, v)?,
            "validation_cutoff" => r.validation_cutoff = parse(key, v)?,
            "init_scale" => r.init_scale = parse_opt(key, v)?,
            "n" => self.n = parse(key, v)?,
            "split" => self.split = parse_split(key, v)?,
            "prefetch" => {
                h.prefetch = parse(key, v)?;
                r.prefetch = h.prefetch;
            }
            other => bail!("unknown configuration key {other:?}"),
        }
        Ok(())
    }

    /// Applies `key=value`.
    pub fn set_pair(&mut self, pair: &str) -> Result<()> {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| anyhow!("expected key=value, got {pair:?}"))?;
        self.set(k, v)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (no, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            self.set_pair(line).with_context(|| format!("config line {}", no + 1))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        self.apply_text(&text).with_context(|| path.display().to_string())
    }

    pub fn to_text(&self) -> String {
        self.entries().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.hash.validate()?;
        self.rerank.validate()?;
        if self.kcore == 0 {
            bail!("kcore must be positive");
        }
        if self.rerank.c == 0 || self.n == 0 {
            bail!("c and n must be positive");
        }
        Ok(())
    }
}
