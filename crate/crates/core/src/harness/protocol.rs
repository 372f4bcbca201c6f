//! Train/test protocol and hyperparameter selection.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::metrics::r2;
use crate::search::{run_search, SearchConfig};

/// Fraction of rows held out for testing.
pub const TEST_FRACTION: f64 = 0.25;
/// Largest training partition; bigger ones are subsampled.
pub const MAX_TRAIN_ROWS: usize = 10_000;
pub const CV_FOLDS: usize = 5;
pub const MAX_CONFIGS: usize = 6;
/// Smallest row subset a halving round evaluates on.
pub const MIN_ROUND_ROWS: usize = 50;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ProtocolError {
    #[error("no configurations to search")]
    NoConfigs,
    #[error("{0} configurations given, at most {MAX_CONFIGS} allowed")]
    TooManyConfigs(usize),
    #[error("{0} rows cannot be split into train and test")]
    TooFewRows(usize),
}

/// Row indices of the train and test partitions, each sorted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProtocolSplit {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Seeded shuffle of `n` rows into a 75/25 split (test gets the rounded-up
/// share), then a uniform subsample of the training side down to
/// [`MAX_TRAIN_ROWS`].
pub fn protocol_split(n: usize, seed: u64) -> Result<ProtocolSplit, ProtocolError> {
    if n < 2 {
        return Err(ProtocolError::TooFewRows(n));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_test = ((n as f64 * TEST_FRACTION).ceil() as usize).clamp(1, n - 1);
    let mut test = idx.split_off(n - n_test);
    // the shuffle already made the order random, so a prefix is a uniform subsample
    idx.truncate(MAX_TRAIN_ROWS);
    idx.sort_unstable();
    test.sort_unstable();
    Ok(ProtocolSplit { train: idx, test })
}

/// `k` contiguous folds over `rows` as (train, validation) pairs. Fold sizes
/// differ by at most one.
pub fn kfold(rows: &[usize], k: usize) -> Vec<(Vec<usize>, Vec<usize>)> {
    let n = rows.len();
    let k = k.min(n).max(1);
    let mut out = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let len = n / k + usize::from(f < n % k);
        let val = rows[start..start + len].to_vec();
        let train = rows[..start].iter().chain(&rows[start + len..]).copied().collect();
        out.push((train, val));
        start += len;
    }
    out
}

/// Number of halving rounds for `k` configurations: the ceiling halving
/// `k -> ceil(k/2)` reaches one after `ceil(log2 k)` steps.
pub fn halving_rounds(k: usize) -> usize {
    let mut rounds = 0;
    let mut left = k;
    while left > 1 {
        left = left.div_ceil(2);
        rounds += 1;
    }
    rounds
}

/// Data fraction of each round: doubling, ending at the full data.
pub fn halving_fractions(k: usize) -> Vec<f64> {
    let r = halving_rounds(k);
    (0..r).map(|i| 0.5f64.powi((r - 1 - i) as i32)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundLog {
    pub fraction: f64,
    pub rows: usize,
    /// (config index, mean CV R²) of every survivor evaluated this round.
    pub scores: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HalvingResult {
    pub best: usize,
    pub rounds: Vec<RoundLog>,
}

/// Mean R² over [`CV_FOLDS`] folds of `rows`. A failed search or non-finite
/// score makes the mean `-inf`.
pub fn cv_score(cfg: &SearchConfig, x: &DMatrix<f64>, y: &DVector<f64>, rows: &[usize]) -> f64 {
    let folds = kfold(rows, CV_FOLDS);
    let mut total = 0.0;
    for (f, (tr, va)) in folds.iter().enumerate() {
        let mut c = cfg.clone();
        c.seed = cfg.seed.wrapping_add(f as u64);
        let score = run_search(&c, &x.select_rows(tr), &y.select_rows(tr))
            .ok()
            .and_then(|out| out.model.predict(&x.select_rows(va)).ok())
            .and_then(|pred| r2(y.select_rows(va).as_slice(), pred.as_slice()).ok())
            .filter(|s| s.is_finite());
        match score {
            Some(s) => total += s,
            None => return f64::NEG_INFINITY,
        }
    }
    total / folds.len() as f64
}

/// Successive halving with 5-fold CV. Each round scores the survivors on a
/// seeded row subset whose size doubles per round, the last round using all
/// rows, and keeps the better half (rounded up). Ties keep the earlier
/// configuration.
pub fn halving_grid_search(
    configs: &[SearchConfig],
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    seed: u64,
) -> Result<HalvingResult, ProtocolError> {
    if configs.is_empty() {
        return Err(ProtocolError::NoConfigs);
    }
    if configs.len() > MAX_CONFIGS {
        return Err(ProtocolError::TooManyConfigs(configs.len()));
    }
    let n = x.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let mut alive: Vec<usize> = (0..configs.len()).collect();
    let mut rounds = Vec::new();
    for fraction in halving_fractions(configs.len()) {
        let m = ((n as f64 * fraction).ceil() as usize).max(MIN_ROUND_ROWS.min(n));
        let rows = &order[..m];
        let mut scores: Vec<(usize, f64)> = alive
            .iter()
            .map(|&c| (c, cv_score(&configs[c], x, y, rows)))
            .collect();
        rounds.push(RoundLog {
            fraction,
            rows: m,
            scores: scores.clone(),
        });
        scores.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        scores.truncate(alive.len().div_ceil(2));
        alive = scores.into_iter().map(|(c, _)| c).collect();
    }
    Ok(HalvingResult {
        best: alive[0],
        rounds,
    })
}
