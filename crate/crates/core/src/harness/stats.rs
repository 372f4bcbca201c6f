//! Aggregate statistics over benchmark records.
//!
//! Everything here is deterministic given the records and a stats seed, and
//! does not depend on record order.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::experiment::{FrontRecord, RunRecord};
use crate::moo::hypervolume_2d;
use crate::search::{is_small, Heuristic};

pub const BOOTSTRAP_RESAMPLES: usize = 1000;
pub const CONFIDENCE: f64 = 0.95;
pub const TOP_K: usize = 5;

/// Studentized range statistic divided by √2 at α = 0.05 for k = 2..=25
/// groups with infinite degrees of freedom.
pub const NEMENYI_Q_05: [f64; 24] = [
    1.960, 2.344, 2.569, 2.728, 2.850, 2.948, 3.031, 3.102, 3.164, 3.219, 3.268, 3.313, 3.354,
    3.391, 3.426, 3.458, 3.489, 3.517, 3.544, 3.569, 3.593, 3.616, 3.637, 3.658,
];

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum StatsError {
    #[error("unknown group {0:?} (expected all, friedman, nonfriedman or points)")]
    UnknownGroup(String),
    #[error("no records")]
    NoRecords,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Group {
    All,
    Friedman,
    NonFriedman,
    Points,
}

impl Group {
    pub const ALL: [Group; 4] = [Group::All, Group::Friedman, Group::NonFriedman, Group::Points];

    pub fn name(self) -> &'static str {
        match self {
            Group::All => "all",
            Group::Friedman => "friedman",
            Group::NonFriedman => "nonfriedman",
            Group::Points => "points",
        }
    }

    pub fn contains(self, rec: &RunRecord) -> bool {
        match self {
            Group::All => true,
            Group::Friedman => is_friedman(&rec.dataset),
            Group::NonFriedman => !is_friedman(&rec.dataset),
            Group::Points => is_small(rec.n_train, rec.n_features, Heuristic::Points),
        }
    }
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Group {
    type Err = StatsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "all" => Ok(Group::All),
            "friedman" | "fri" => Ok(Group::Friedman),
            "nonfriedman" | "non-friedman" => Ok(Group::NonFriedman),
            "points" | "points-small" => Ok(Group::Points),
            _ => Err(StatsError::UnknownGroup(s.to_string())),
        }
    }
}

/// Friedman generator datasets by name: a leading "fri" or a "fri" token,
/// as in `607_fri_c4_1000_50`.
pub fn is_friedman(name: &str) -> bool {
    let lower = name.to_ascii_lowercase();
    lower.starts_with("fri") || lower.split(|c: char| !c.is_ascii_alphanumeric()).any(|t| t == "fri")
}

/// Median of a sample; `-inf` entries sort first. Empty input gives NaN.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        midpoint(v[n / 2 - 1], v[n / 2])
    }
}

fn midpoint(a: f64, b: f64) -> f64 {
    if a == b {
        a
    } else {
        a / 2.0 + b / 2.0
    }
}

/// Percentile of sorted values with linear interpolation between ranks.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 0 {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let (a, b) = (sorted[lo], sorted[hi]);
    let t = pos - lo as f64;
    if t == 0.0 || a == b {
        a
    } else if !a.is_finite() || !b.is_finite() {
        // interpolating toward an infinity is meaningless; stay conservative
        a
    } else {
        a + (b - a) * t
    }
}

/// Percentile bootstrap of the median: `(low, high)` bounds of the
/// [`CONFIDENCE`] interval from [`BOOTSTRAP_RESAMPLES`] resamples.
pub fn bootstrap_median_ci<R: Rng + ?Sized>(values: &[f64], rng: &mut R) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len();
    let mut meds = Vec::with_capacity(BOOTSTRAP_RESAMPLES);
    let mut sample = vec![0.0; n];
    for _ in 0..BOOTSTRAP_RESAMPLES {
        for s in sample.iter_mut() {
            *s = values[rng.random_range(0..n)];
        }
        meds.push(median(&sample));
    }
    meds.sort_by(|a, b| a.total_cmp(b));
    let alpha = 1.0 - CONFIDENCE;
    (percentile(&meds, alpha / 2.0), percentile(&meds, 1.0 - alpha / 2.0))
}

/// Median test R² over seeds for every (algorithm, dataset) in `group`.
pub fn dataset_medians(records: &[RunRecord], group: Group) -> BTreeMap<String, BTreeMap<String, f64>> {
    let mut scores: BTreeMap<String, BTreeMap<String, Vec<f64>>> = BTreeMap::new();
    for r in records.iter().filter(|r| group.contains(r)) {
        scores
            .entry(r.algorithm.clone())
            .or_default()
            .entry(r.dataset.clone())
            .or_default()
            .push(r.test_score());
    }
    scores
        .into_iter()
        .map(|(alg, per_ds)| (alg, per_ds.into_iter().map(|(ds, v)| (ds, median(&v))).collect()))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct MedianSummary {
    pub median: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n_datasets: usize,
}

/// Median over datasets of the per-dataset medians, with a bootstrap CI over
/// those medians. Each algorithm bootstraps from its own stream of
/// `stats_seed`, so results do not depend on which other algorithms are
/// present. The CI is widened if needed to contain the median.
pub fn median_of_medians(records: &[RunRecord], group: Group, stats_seed: u64) -> BTreeMap<String, MedianSummary> {
    dataset_medians(records, group)
        .into_iter()
        .map(|(alg, per_ds)| {
            let meds: Vec<f64> = per_ds.values().copied().collect();
            let m = median(&meds);
            let mut rng = ChaCha8Rng::seed_from_u64(stats_seed);
            rng.set_stream(stream_of(&alg));
            let (lo, hi) = bootstrap_median_ci(&meds, &mut rng);
            let summary = MedianSummary {
                median: m,
                ci_low: lo.min(m),
                ci_high: hi.max(m),
                n_datasets: meds.len(),
            };
            (alg, summary)
        })
        .collect()
}

/// FNV-1a of the algorithm name.
fn stream_of(name: &str) -> u64 {
    name.bytes()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

/// Ranks in descending order of score, 1 = best, ties sharing the average
/// of the ranks they span.
pub fn average_ranks(scores: &[f64]) -> Vec<f64> {
    let n = scores.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i + 1;
        while j < n && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        // positions i..j hold ranks i+1..=j
        let avg = (i + 1 + j) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = avg;
        }
        i = j;
    }
    ranks
}

/// `q · sqrt(k(k+1) / (6N))`, or `None` when `k` is outside 2..=25 or
/// there are no datasets.
pub fn critical_difference(k: usize, n_datasets: usize) -> Option<f64> {
    if !(2..=NEMENYI_Q_05.len() + 1).contains(&k) || n_datasets == 0 {
        return None;
    }
    let q = NEMENYI_Q_05[k - 2];
    Some(q * ((k * (k + 1)) as f64 / (6.0 * n_datasets as f64)).sqrt())
}

/// Per-dataset median table restricted to datasets every algorithm has.
struct Blocks {
    algorithms: Vec<String>,
    datasets: Vec<String>,
    /// `scores[d][a]`
    scores: Vec<Vec<f64>>,
}

fn complete_blocks(records: &[RunRecord], group: Group) -> Blocks {
    let meds = dataset_medians(records, group);
    let algorithms: Vec<String> = meds.keys().cloned().collect();
    let all_ds: BTreeSet<&String> = meds.values().flat_map(|m| m.keys()).collect();
    let mut datasets = Vec::new();
    let mut scores = Vec::new();
    for ds in all_ds {
        let row: Option<Vec<f64>> = algorithms.iter().map(|a| meds[a].get(ds).copied()).collect();
        match row {
            Some(row) => {
                datasets.push(ds.clone());
                scores.push(row);
            }
            None => warn!("dataset {ds} lacks results for some algorithms; left out of rankings"),
        }
    }
    Blocks {
        algorithms,
        datasets,
        scores,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankStats {
    pub avg_ranks: BTreeMap<String, f64>,
    pub critical_difference: Option<f64>,
    pub n_datasets: usize,
}

/// Average rank of each algorithm over the group's datasets and the
/// Nemenyi critical difference at α = 0.05.
pub fn rank_stats(records: &[RunRecord], group: Group) -> RankStats {
    let b = complete_blocks(records, group);
    let k = b.algorithms.len();
    let mut sums = vec![0.0; k];
    for row in &b.scores {
        for (s, r) in sums.iter_mut().zip(average_ranks(row)) {
            *s += r;
        }
    }
    let n = b.datasets.len();
    let avg_ranks = b
        .algorithms
        .iter()
        .zip(sums)
        .map(|(a, s)| (a.clone(), if n == 0 { f64::NAN } else { s / n as f64 }))
        .collect();
    RankStats {
        avg_ranks,
        critical_difference: critical_difference(k, n),
        n_datasets: n,
    }
}

/// R² rounded to two decimals; infinities pass through.
pub fn round2(v: f64) -> f64 {
    if v.is_finite() {
        (v * 100.0).round() / 100.0
    } else {
        v
    }
}

/// Fraction of the group's datasets on which each algorithm is in the top
/// five after rounding: fewer than five others score strictly higher.
pub fn top5_histogram(records: &[RunRecord], group: Group) -> BTreeMap<String, f64> {
    let b = complete_blocks(records, group);
    let mut counts = vec![0usize; b.algorithms.len()];
    for row in &b.scores {
        let rounded: Vec<f64> = row.iter().map(|&v| round2(v)).collect();
        for (a, &mine) in rounded.iter().enumerate() {
            let better = rounded.iter().filter(|&&o| o > mine).count();
            if better < TOP_K {
                counts[a] += 1;
            }
        }
    }
    let n = b.datasets.len();
    b.algorithms
        .into_iter()
        .zip(counts)
        .map(|(a, c)| (a, if n == 0 { 0.0 } else { c as f64 / n as f64 }))
        .collect()
}

/// One row of the aggregates file. Non-finite statistics become `null`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub algorithm: String,
    pub group: Group,
    pub median_of_medians_r2: Option<f64>,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
    pub avg_rank: Option<f64>,
    pub top5_fraction: f64,
    pub n_datasets: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupAggregates {
    pub group: Group,
    pub n_datasets: usize,
    pub critical_difference: Option<f64>,
    pub rows: Vec<AggregateRow>,
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

pub fn aggregate_group(records: &[RunRecord], group: Group, stats_seed: u64) -> GroupAggregates {
    let mom = median_of_medians(records, group, stats_seed);
    let ranks = rank_stats(records, group);
    let top5 = top5_histogram(records, group);
    let rows = mom
        .into_iter()
        .map(|(alg, m)| AggregateRow {
            group,
            median_of_medians_r2: finite(m.median),
            ci_low: finite(m.ci_low),
            ci_high: finite(m.ci_high),
            avg_rank: ranks.avg_ranks.get(&alg).copied().and_then(finite),
            top5_fraction: top5.get(&alg).copied().unwrap_or(0.0),
            n_datasets: m.n_datasets,
            algorithm: alg,
        })
        .collect();
    GroupAggregates {
        group,
        n_datasets: ranks.n_datasets,
        critical_difference: ranks.critical_difference,
        rows,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypervolumeRow {
    pub dataset: String,
    pub algorithm: String,
    pub mean: f64,
    pub std: f64,
    pub n_seeds: usize,
}

/// Mean and sample standard deviation over seeds of each front's
/// hypervolume. Accuracy is clipped to `[0, 1]`; sizes are divided by the
/// largest size among all fronts of the same dataset and seed, so the
/// algorithms of one table row share a scale. Infeasible members are
/// ignored. When the same (algorithm, dataset, seed) appears twice the last
/// one wins.
pub fn hypervolume_table(fronts: &[FrontRecord]) -> Vec<HypervolumeRow> {
    let mut latest: BTreeMap<(String, String, u64), &FrontRecord> = BTreeMap::new();
    for f in fronts {
        latest.insert((f.dataset.clone(), f.algorithm.clone(), f.seed), f);
    }
    let mut max_size: BTreeMap<(String, u64), usize> = BTreeMap::new();
    for f in latest.values() {
        let m = max_size.entry((f.dataset.clone(), f.seed)).or_default();
        for member in &f.members {
            *m = (*m).max(member.size);
        }
    }
    let mut per_cell: BTreeMap<(String, String), Vec<f64>> = BTreeMap::new();
    for ((ds, alg, seed), f) in &latest {
        let denom = max_size[&(ds.clone(), *seed)].max(1) as f64;
        let pts: Vec<(f64, f64)> = f
            .members
            .iter()
            .filter_map(|m| m.f1.map(|r| (r.clamp(0.0, 1.0), (m.size as f64 / denom).min(1.0))))
            .collect();
        let hv = hypervolume_2d(&pts).unwrap_or(0.0);
        per_cell.entry((ds.clone(), alg.clone())).or_default().push(hv);
    }
    per_cell
        .into_iter()
        .map(|((dataset, algorithm), hv)| {
            let n = hv.len();
            let mean = hv.iter().sum::<f64>() / n as f64;
            let std = if n > 1 {
                (hv.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64).sqrt()
            } else {
                0.0
            };
            HypervolumeRow {
                dataset,
                algorithm,
                mean,
                std,
                n_seeds: n,
            }
        })
        .collect()
}

/// Contents of `aggregates.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub stats_seed: u64,
    pub groups: Vec<GroupAggregates>,
    pub hypervolume: Vec<HypervolumeRow>,
}

pub fn aggregates(
    records: &[RunRecord],
    fronts: &[FrontRecord],
    groups: &[Group],
    stats_seed: u64,
) -> Result<Aggregates, StatsError> {
    if records.is_empty() {
        return Err(StatsError::NoRecords);
    }
    Ok(Aggregates {
        stats_seed,
        groups: groups.iter().map(|&g| aggregate_group(records, g, stats_seed)).collect(),
        hypervolume: hypervolume_table(fronts),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nemenyi_cd_two_algorithms() {
        // 1.960 * sqrt(2 * 3 / 60)
        let cd = critical_difference(2, 10).unwrap();
        assert!((cd - 0.6198064213930023).abs() < 1e-12);
        assert!(critical_difference(1, 10).is_none());
        assert!(critical_difference(26, 10).is_none());
        assert!(critical_difference(3, 0).is_none());
    }

    #[test]
    fn tie_averaging() {
        assert_eq!(average_ranks(&[0.9, 0.5]), vec![1.0, 2.0]);
        assert_eq!(average_ranks(&[0.5, 0.5, 0.5]), vec![2.0, 2.0, 2.0]);
        assert_eq!(average_ranks(&[0.1, 0.7, 0.7, f64::NEG_INFINITY]), vec![3.0, 1.5, 1.5, 4.0]);
    }

    #[test]
    fn medians() {
        assert_eq!(median(&[0.2, 0.9, 0.4]), 0.4);
        assert_eq!(median(&[0.2, 0.4]), 0.30000000000000004);
        assert_eq!(median(&[f64::NEG_INFINITY, 1.0]), f64::NEG_INFINITY);
    }

    #[test]
    fn percentile_interpolates() {
        let v = [0.0, 1.0, 2.0, 3.0, 4.0];
        assert_eq!(percentile(&v, 0.5), 2.0);
        assert_eq!(percentile(&v, 0.025), 0.1);
        assert_eq!(percentile(&[f64::NEG_INFINITY, 1.0], 0.5), f64::NEG_INFINITY);
    }

    #[test]
    fn bootstrap_constant_collapses() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(bootstrap_median_ci(&[0.5], &mut rng), (0.5, 0.5));
        assert_eq!(bootstrap_median_ci(&[0.5; 7], &mut rng), (0.5, 0.5));
    }

    #[test]
    fn rounding() {
        assert_eq!(round2(0.951), 0.95);
        assert_eq!(round2(0.949), 0.95);
        assert_eq!(round2(f64::NEG_INFINITY), f64::NEG_INFINITY);
    }

    #[test]
    fn group_names() {
        for g in Group::ALL {
            assert_eq!(g.name().parse::<Group>().unwrap(), g);
        }
        assert!("bogus".parse::<Group>().is_err());
        assert!(is_friedman("607_fri_c4_1000_50"));
        assert!(is_friedman("friedman1"));
        assert!(!is_friedman("192_vineyard"));
        assert!(!is_friedman("africa"));
    }
}
