//! Benchmark sweeps over (variant, dataset, seed) cells.
//!
//! Records are appended to `results.jsonl` as soon as a cell finishes, and
//! multi-objective fronts to `fronts.jsonl`. A resumed sweep skips every
//! cell whose key is already in the results file.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Mutex;
use std::time::Instant;

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use super::data::Dataset;
use super::protocol::{halving_grid_search, protocol_split};
use crate::expr::TirModel;
use crate::genetics::GeneticConfig;
use crate::metrics::{mae, mse, r2};
use crate::search::{run_search, Heuristic, Mode, PenaltyRule, SearchConfig, SelectionStrategy};

pub const RESULTS_FILE: &str = "results.jsonl";
pub const FRONTS_FILE: &str = "fronts.jsonl";

/// The two exponent ranges searched by the grid.
pub const K_RANGE_GRID: [(i32, i32); 2] = [(-5, 5), (0, 3)];

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}:{line}: {source}")]
    Parse {
        path: PathBuf,
        line: usize,
        source: serde_json::Error,
    },
    #[error("unknown variant {0:?}")]
    UnknownVariant(String),
    #[error("invalid experiment: {0}")]
    Invalid(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ExperimentError + '_ {
    move |source| ExperimentError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Named algorithm variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "TIR")]
    Tir,
    #[serde(rename = "TIR-points")]
    TirPoints,
    #[serde(rename = "TIRMOO")]
    TirMoo,
    #[serde(rename = "TIRMOO-points")]
    TirMooPoints,
    #[serde(rename = "TIRMOO-Select")]
    TirMooSelect,
    #[serde(rename = "TIRMOO-Sel-points")]
    TirMooSelPoints,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::Tir,
        Variant::TirPoints,
        Variant::TirMoo,
        Variant::TirMooPoints,
        Variant::TirMooSelect,
        Variant::TirMooSelPoints,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Tir => "TIR",
            Variant::TirPoints => "TIR-points",
            Variant::TirMoo => "TIRMOO",
            Variant::TirMooPoints => "TIRMOO-points",
            Variant::TirMooSelect => "TIRMOO-Select",
            Variant::TirMooSelPoints => "TIRMOO-Sel-points",
        }
    }

    pub fn mode(self) -> Mode {
        match self {
            Variant::Tir | Variant::TirPoints => Mode::Single,
            _ => Mode::Moo,
        }
    }

    pub fn penalty(self) -> PenaltyRule {
        match self {
            Variant::TirPoints => PenaltyRule::new(Heuristic::Points),
            _ => PenaltyRule::none(),
        }
    }

    pub fn strategy(self) -> SelectionStrategy {
        match self {
            Variant::TirMooPoints => SelectionStrategy::PenaltyPoints,
            Variant::TirMooSelect => SelectionStrategy::Select95,
            Variant::TirMooSelPoints => SelectionStrategy::SelPoints,
            _ => SelectionStrategy::BestOfFront,
        }
    }

    /// Search configuration for a training set of `n_train` rows and `dims`
    /// features.
    pub fn config(self, dims: usize, n_train: usize, k_range: (i32, i32), budget: &Budget, seed: u64) -> SearchConfig {
        let mut genetic = GeneticConfig::new(dims, n_train);
        genetic.k_range = k_range;
        genetic.pop_size = budget.pop_size;
        genetic.generations = budget.generations;
        SearchConfig {
            genetic,
            mode: self.mode(),
            penalty: self.penalty(),
            strategy: self.strategy(),
            seed,
            f1_decimals: None,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = ExperimentError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| ExperimentError::UnknownVariant(s.to_string()))
    }
}

/// Evolution effort per search.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Budget {
    pub pop_size: usize,
    pub generations: usize,
}

impl Default for Budget {
    fn default() -> Self {
        Budget {
            pop_size: 1000,
            generations: 500,
        }
    }
}

/// One (variant, dataset, seed) result. Metrics that are not finite are
/// stored as `null`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub algorithm: String,
    pub dataset: String,
    pub seed: u64,
    /// R² on the whole training partition after the final refit.
    pub train_r2: Option<f64>,
    pub test_r2: Option<f64>,
    pub test_mse: Option<f64>,
    pub test_mae: Option<f64>,
    pub model_size: Option<usize>,
    pub runtime_s: f64,
    pub model_string: Option<String>,
    pub model_structured: Option<TirModel>,
    pub hyperparams: BTreeMap<String, Value>,
    /// Training rows after the split and subsampling.
    pub n_train: usize,
    pub n_features: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl RunRecord {
    pub fn key(&self) -> (String, String, u64) {
        (self.algorithm.clone(), self.dataset.clone(), self.seed)
    }

    /// Test R² with missing values read as `-inf`.
    pub fn test_score(&self) -> f64 {
        self.test_r2.unwrap_or(f64::NEG_INFINITY)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontMember {
    /// Accuracy objective as evolved (penalized for the penalized variant).
    pub f1: Option<f64>,
    pub size: usize,
    pub train_r2: Option<f64>,
    pub test_r2: Option<f64>,
}

/// Final front of one multi-objective run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontRecord {
    pub algorithm: String,
    pub dataset: String,
    pub seed: u64,
    pub members: Vec<FrontMember>,
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub variants: Vec<Variant>,
    pub datasets: Vec<Dataset>,
    pub seeds: Vec<u64>,
    pub budget: Budget,
    pub k_ranges: Vec<(i32, i32)>,
}

impl ExperimentSpec {
    pub fn new(variants: Vec<Variant>, datasets: Vec<Dataset>, seeds: Vec<u64>, budget: Budget) -> Self {
        ExperimentSpec {
            variants,
            datasets,
            seeds,
            budget,
            k_ranges: K_RANGE_GRID.to_vec(),
        }
    }

    pub fn n_cells(&self) -> usize {
        self.variants.len() * self.datasets.len() * self.seeds.len()
    }
}

/// Outcome of one cell: the record plus the front for multi-objective runs.
#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub record: RunRecord,
    pub front: Option<FrontRecord>,
}

/// Split, grid search, final run and test evaluation for one cell. Failures
/// become records with null metrics and an error message.
pub fn run_cell(variant: Variant, ds: &Dataset, seed: u64, budget: &Budget, k_ranges: &[(i32, i32)]) -> CellResult {
    let start = Instant::now();
    let mut record = RunRecord {
        algorithm: variant.name().to_string(),
        dataset: ds.name.clone(),
        seed,
        train_r2: None,
        test_r2: None,
        test_mse: None,
        test_mae: None,
        model_size: None,
        runtime_s: 0.0,
        model_string: None,
        model_structured: None,
        hyperparams: BTreeMap::new(),
        n_train: 0,
        n_features: ds.n_features(),
        error: None,
    };

    let split = match protocol_split(ds.n_samples(), seed) {
        Ok(s) => s,
        Err(e) => {
            record.error = Some(e.to_string());
            return CellResult { record, front: None };
        }
    };
    let train = ds.subset(&split.train);
    let test = ds.subset(&split.test);
    record.n_train = train.n_samples();

    let configs: Vec<SearchConfig> = k_ranges
        .iter()
        .map(|&k| variant.config(ds.n_features(), train.n_samples(), k, budget, seed))
        .collect();
    let best = match halving_grid_search(&configs, &train.x, &train.y, seed) {
        Ok(h) => h.best,
        Err(e) => {
            record.error = Some(e.to_string());
            return CellResult { record, front: None };
        }
    };
    let cfg = &configs[best];
    record.hyperparams = hyperparams(cfg);

    let outcome = match run_search(cfg, &train.x, &train.y) {
        Ok(o) => o,
        Err(e) => {
            record.error = Some(e.to_string());
            record.runtime_s = start.elapsed().as_secs_f64();
            return CellResult { record, front: None };
        }
    };
    let test_score = |m: &TirModel| -> (f64, f64, f64) {
        match m.predict(&test.x) {
            Ok(p) => {
                let (t, p) = (test.y.as_slice(), p.as_slice());
                (
                    r2(t, p).unwrap_or(f64::NEG_INFINITY),
                    mse(t, p).unwrap_or(f64::INFINITY),
                    mae(t, p).unwrap_or(f64::INFINITY),
                )
            }
            Err(_) => (f64::NEG_INFINITY, f64::INFINITY, f64::INFINITY),
        }
    };
    let (t_r2, t_mse, t_mae) = test_score(&outcome.model);
    record.train_r2 = finite(outcome.train_r2);
    record.test_r2 = finite(t_r2);
    record.test_mse = finite(t_mse);
    record.test_mae = finite(t_mae);
    record.model_size = Some(outcome.model.node_count());
    record.model_string = Some(outcome.model.to_string());
    record.model_structured = Some(outcome.model.clone());

    let front = outcome.front.as_ref().map(|members| FrontRecord {
            algorithm: record.algorithm.clone(),
            dataset: record.dataset.clone(),
            seed,
            members: members
                .iter()
                .map(|m| {
                    let train_r2 = m
                        .model
                        .predict(&train.x)
                        .ok()
                        .and_then(|p| r2(train.y.as_slice(), p.as_slice()).ok())
                        .and_then(finite);
                    FrontMember {
                        f1: finite(m.obj.r2),
                        size: m.obj.size,
                        train_r2,
                        test_r2: finite(test_score(&m.model).0),
                    }
                })
                .collect(),
    });
    record.runtime_s = start.elapsed().as_secs_f64();
    CellResult { record, front }
}

fn hyperparams(cfg: &SearchConfig) -> BTreeMap<String, Value> {
    let g = &cfg.genetic;
    BTreeMap::from([
        ("k_range".to_string(), json!([g.k_range.0, g.k_range.1])),
        ("budget".to_string(), json!(g.budget)),
        ("pc".to_string(), json!(g.pc)),
        ("pm".to_string(), json!(g.pm)),
        ("pop_size".to_string(), json!(g.pop_size)),
        ("generations".to_string(), json!(g.generations)),
        ("mode".to_string(), json!(cfg.mode)),
        ("penalty".to_string(), json!(cfg.penalty)),
        ("strategy".to_string(), json!(cfg.strategy)),
    ])
}

/// Reads a JSON-lines file. A final line without a newline that fails to
/// parse is treated as an interrupted write and skipped.
pub fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, ExperimentError> {
    let file = File::open(path).map_err(io_err(path))?;
    let lines: Vec<String> = BufReader::new(file)
        .lines()
        .collect::<Result<_, _>>()
        .map_err(io_err(path))?;
    let mut out = Vec::with_capacity(lines.len());
    let last = lines.len().saturating_sub(1);
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(line) {
            Ok(v) => out.push(v),
            Err(e) if i == last => warn!("{}: ignoring truncated last line: {e}", path.display()),
            Err(source) => {
                return Err(ExperimentError::Parse {
                    path: path.to_path_buf(),
                    line: i + 1,
                    source,
                })
            }
        }
    }
    Ok(out)
}

pub fn read_records(path: &Path) -> Result<Vec<RunRecord>, ExperimentError> {
    read_jsonl(path)
}

pub fn read_fronts(path: &Path) -> Result<Vec<FrontRecord>, ExperimentError> {
    read_jsonl(path)
}

/// Opens `path` for appending, or truncates it when not resuming. A file
/// whose last line lacks its newline gets one so new records start clean.
fn open_log(path: &Path, resume: bool) -> Result<File, ExperimentError> {
    if !resume {
        return File::create(path).map_err(io_err(path));
    }
    let mut f = OpenOptions::new()
        .create(true)
        .read(true)
        .append(true)
        .open(path)
        .map_err(io_err(path))?;
    let len = f.metadata().map_err(io_err(path))?.len();
    if len > 0 {
        let mut last = [0u8; 1];
        f.seek(SeekFrom::Start(len - 1)).map_err(io_err(path))?;
        f.read_exact(&mut last).map_err(io_err(path))?;
        if last[0] != b'\n' {
            f.write_all(b"\n").map_err(io_err(path))?;
        }
    }
    Ok(f)
}

struct JsonlWriter {
    path: PathBuf,
    file: File,
}

impl JsonlWriter {
    fn append<T: Serialize>(&mut self, value: &T) -> Result<(), ExperimentError> {
        let mut line = serde_json::to_string(value).expect("records serialize");
        line.push('\n');
        self.file
            .write_all(line.as_bytes())
            .and_then(|_| self.file.flush())
            .map_err(io_err(&self.path))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    /// Records computed by this call, in completion order.
    pub computed: Vec<RunRecord>,
    /// Cells skipped because the results file already had them.
    pub skipped: usize,
}

/// Runs every missing cell of `spec` in parallel and appends the results to
/// `out_dir`. `progress` is called once per finished cell.
pub fn run_experiment(
    spec: &ExperimentSpec,
    out_dir: &Path,
    resume: bool,
    progress: &(dyn Fn(&RunRecord) + Sync),
) -> Result<ExperimentReport, ExperimentError> {
    if spec.k_ranges.is_empty() {
        return Err(ExperimentError::Invalid("empty k-range grid".into()));
    }
    let mut names = HashSet::new();
    for ds in &spec.datasets {
        if !names.insert(ds.name.as_str()) {
            return Err(ExperimentError::Invalid(format!("duplicate dataset name {:?}", ds.name)));
        }
    }
    std::fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let results_path = out_dir.join(RESULTS_FILE);
    let fronts_path = out_dir.join(FRONTS_FILE);

    let done: HashSet<(String, String, u64)> = if resume && results_path.exists() {
        read_records(&results_path)?.iter().map(RunRecord::key).collect()
    } else {
        HashSet::new()
    };

    let mut cells = Vec::new();
    let mut skipped = 0;
    for &v in &spec.variants {
        for ds in &spec.datasets {
            for &seed in &spec.seeds {
                if done.contains(&(v.name().to_string(), ds.name.clone(), seed)) {
                    skipped += 1;
                } else {
                    cells.push((v, ds, seed));
                }
            }
        }
    }
    info!("{} cells to run, {skipped} already done", cells.len());

    let results = Mutex::new(JsonlWriter {
        file: open_log(&results_path, resume)?,
        path: results_path,
    });
    let fronts = Mutex::new(JsonlWriter {
        file: open_log(&fronts_path, resume)?,
        path: fronts_path,
    });

    let computed: Vec<RunRecord> = cells
        .par_iter()
        .map(|&(v, ds, seed)| {
            let cell = run_cell(v, ds, seed, &spec.budget, &spec.k_ranges);
            {
                // both locks, in a fixed order, so a cell's two lines land together
                let mut r = results.lock().expect("writer lock");
                let mut f = fronts.lock().expect("writer lock");
                if let Some(front) = &cell.front {
                    f.append(front)?;
                }
                r.append(&cell.record)?;
            }
            progress(&cell.record);
            Ok(cell.record)
        })
        .collect::<Result<_, ExperimentError>>()?;
    Ok(ExperimentReport { computed, skipped })
}
