//! Shared fixtures and oracles for the integration tests.
#![allow(dead_code)]

use std::path::PathBuf;

use cigar::dataset::{kcore_filter, leave_one_out_split, load_interactions, Interaction, LogFormat};
use cigar::InteractionDataset;
use rand::seq::IndexedRandom;
use rand::Rng;

/// Environment variable naming MovieLens-1M `ratings.dat` (or its directory).
pub const ML1M_ENV: &str = "CIGAR_ML1M";

pub fn ml1m_path() -> Option<PathBuf> {
    let p = PathBuf::from(std::env::var_os(ML1M_ENV)?);
    let file = if p.is_dir() { p.join("ratings.dat") } else { p };
    file.is_file().then_some(file)
}

/// 5-core leave-one-out split of MovieLens-1M, if the file is available.
pub fn ml1m(seed: u64) -> Option<InteractionDataset> {
    let raw = load_interactions(&ml1m_path()?, LogFormat::MovieLens).expect("ratings.dat parses");
    let core = kcore_filter(&raw, 5).expect("5-core is non-empty");
    Some(leave_one_out_split(&core, seed).expect("split succeeds"))
}

/// Random implicit log where every user has between `min_deg` and
/// `max_deg` distinct items.
pub fn random_log<R: Rng>(rng: &mut R, users: usize, items: usize, min_deg: usize, max_deg: usize) -> Vec<Interaction> {
    let all: Vec<u64> = (0..items as u64).collect();
    let mut out = Vec::new();
    for u in 0..users as u64 {
        let deg = rng.random_range(min_deg..=max_deg);
        for &i in all.choose_multiple(rng, deg) {
            out.push(Interaction {
                user: u,
                item: i,
                timestamp: None,
            });
        }
    }
    out
}

pub fn random_dataset<R: Rng>(rng: &mut R, users: usize, items: usize, min_deg: usize, max_deg: usize) -> InteractionDataset {
    let log = random_log(rng, users, items, min_deg.max(3), max_deg.max(3));
    leave_one_out_split(&log, rng.random()).unwrap()
}

/// Finite-difference step.
pub const FD_STEP: f64 = 1e-5;
/// Largest accepted relative deviation between analytic and numeric partials.
pub const FD_TOLERANCE: f64 = 1e-4;
/// Gradients below this magnitude are compared absolutely, as relative
/// error is meaningless at zero.
pub const FD_FLOOR: f64 = 1e-5;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FD_FLOOR)
}

/// Worst relative error of `analytic` against central differences of `loss`
/// around `params`.
pub fn worst_fd_error(params: &[f64], analytic: &[f64], mut loss: impl FnMut(&[f64]) -> f64) -> (f64, usize) {
    assert_eq!(params.len(), analytic.len());
    let mut x = params.to_vec();
    let mut worst = (0.0, 0);
    for k in 0..x.len() {
        let orig = x[k];
        x[k] = orig + FD_STEP;
        let up = loss(&x);
        x[k] = orig - FD_STEP;
        let down = loss(&x);
        x[k] = orig;
        let numeric = (up - down) / (2.0 * FD_STEP);
        let e = relative_error(analytic[k], numeric);
        if e > worst.0 {
            worst = (e, k);
        }
    }
    worst
}
