//! `tir`: fit a single model, run a benchmark sweep, or aggregate results.
//!
//! Exit codes: 0 on success, 2 for data errors (unreadable or unusable input
//! files), 3 for configuration errors (bad flags or values).

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicUsize, Ordering};

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use serde_json::json;

use tir::genetics::GeneticConfig;
use tir::harness::experiment::{ExperimentSpec, FRONTS_FILE};
use tir::harness::stats::StatsError;
use tir::harness::{
    aggregates, load_csv, protocol_split, read_fronts, read_records, run_experiment, Budget,
    DataError, Dataset, Group, TargetColumn, Variant,
};
use tir::metrics::r2;
use tir::search::{run_search, Heuristic, Mode, PenaltyRule, SearchConfig, SelectionStrategy, MIN_ROWS};

const DATA_ERROR: u8 = 2;
const CONFIG_ERROR: u8 = 3;

#[derive(Debug)]
enum CliError {
    Data(String),
    Config(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Data(_) => DATA_ERROR,
            CliError::Config(_) => CONFIG_ERROR,
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        CliError::Data(e.to_string())
    }
}

#[derive(Parser, Debug)]
#[command(name = "tir", version, about = "Symbolic regression with transformation-interaction-rational models")]
struct Cli {
    /// Worker threads; 0 uses every logical core.
    #[arg(long, global = true, env = "TIR_JOBS", default_value_t = 0)]
    jobs: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit one model on a CSV file and report it.
    Fit(FitArgs),
    /// Run variants over a directory of CSV datasets.
    Bench(BenchArgs),
    /// Aggregate a results file into summary statistics.
    Stats(StatsArgs),
}

#[derive(Args, Debug)]
struct TargetArgs {
    /// Name of the response column.
    #[arg(long, default_value = "target")]
    target: String,
    /// Use the last column as the response instead.
    #[arg(long, conflicts_with = "target")]
    target_last: bool,
}

impl TargetArgs {
    fn column(&self) -> TargetColumn {
        if self.target_last {
            TargetColumn::Last
        } else {
            TargetColumn::Named(self.target.clone())
        }
    }
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum ModeArg {
    Single,
    Moo,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum StrategyArg {
    Best,
    Select95,
    SelPoints,
    PenaltyPoints,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum PenaltyArg {
    None,
    Samples,
    Dim,
    Points,
}

#[derive(Args, Debug)]
struct FitArgs {
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    target: TargetArgs,
    #[arg(long, value_enum, default_value = "moo")]
    mode: ModeArg,
    /// Front selection in moo mode.
    #[arg(long, value_enum, default_value = "best")]
    strategy: StrategyArg,
    /// Small-data heuristic switching on the size penalty.
    #[arg(long, value_enum, default_value = "none")]
    penalty: PenaltyArg,
    /// Penalty per node.
    #[arg(long, default_value_t = tir::search::DEFAULT_PENALTY)]
    penalty_coef: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1000)]
    pop: usize,
    #[arg(long, default_value_t = 500)]
    gens: usize,
    #[arg(long, default_value_t = -5, allow_hyphen_values = true)]
    kmin: i32,
    #[arg(long, default_value_t = 5, allow_hyphen_values = true)]
    kmax: i32,
    /// Token budget; defaults to a value derived from the training size.
    #[arg(long)]
    budget: Option<usize>,
    #[arg(long, default_value_t = 0.3)]
    pc: f64,
    #[arg(long, default_value_t = 0.7)]
    pm: f64,
    /// Round the accuracy objective to this many decimals (moo mode).
    #[arg(long)]
    f1_decimals: Option<u32>,
    /// Write the fitted model and scores as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct BenchArgs {
    /// Directory of CSV files, one dataset each.
    #[arg(long)]
    datasets: PathBuf,
    #[command(flatten)]
    target: TargetArgs,
    /// Comma-separated variant names.
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "TIR,TIR-points,TIRMOO,TIRMOO-points,TIRMOO-Select,TIRMOO-Sel-points"
    )]
    variants: Vec<String>,
    /// Comma-separated seeds.
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5,6,7,8,9,10")]
    seeds: Vec<u64>,
    /// Output directory for results.jsonl and fronts.jsonl.
    #[arg(long)]
    out: PathBuf,
    /// Skip cells already present in the results file.
    #[arg(long)]
    resume: bool,
    #[arg(long, default_value_t = 1000)]
    pop: usize,
    #[arg(long, default_value_t = 500)]
    gens: usize,
}

#[derive(Args, Debug)]
struct StatsArgs {
    #[arg(long)]
    results: PathBuf,
    /// Fronts file; defaults to fronts.jsonl beside the results when present.
    #[arg(long)]
    fronts: Option<PathBuf>,
    /// Dataset group; every group when omitted.
    #[arg(long)]
    group: Option<Group>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    stats_seed: u64,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(CONFIG_ERROR)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    if cli.jobs > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.jobs).build_global() {
            eprintln!("error: cannot start worker pool: {e}");
            return ExitCode::from(CONFIG_ERROR);
        }
    }
    let result = match &cli.command {
        Command::Fit(a) => cmd_fit(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Stats(a) => cmd_stats(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            match &e {
                CliError::Data(m) => eprintln!("data error: {m}"),
                CliError::Config(m) => eprintln!("config error: {m}"),
            }
            ExitCode::from(e.code())
        }
    }
}

fn fit_config(a: &FitArgs, dims: usize, n_train: usize) -> Result<SearchConfig, CliError> {
    let mut genetic = GeneticConfig::new(dims, n_train);
    genetic.k_range = (a.kmin, a.kmax);
    genetic.pop_size = a.pop;
    genetic.generations = a.gens;
    genetic.pc = a.pc;
    genetic.pm = a.pm;
    if let Some(b) = a.budget {
        genetic.budget = b;
    }
    genetic.validate().map_err(|e| CliError::Config(e.to_string()))?;
    if !(a.penalty_coef >= 0.0 && a.penalty_coef.is_finite()) {
        return Err(CliError::Config(format!(
            "penalty coefficient must be non-negative, got {}",
            a.penalty_coef
        )));
    }
    Ok(SearchConfig {
        genetic,
        mode: match a.mode {
            ModeArg::Single => Mode::Single,
            ModeArg::Moo => Mode::Moo,
        },
        penalty: PenaltyRule {
            kind: match a.penalty {
                PenaltyArg::None => Heuristic::None,
                PenaltyArg::Samples => Heuristic::Samples,
                PenaltyArg::Dim => Heuristic::Dim,
                PenaltyArg::Points => Heuristic::Points,
            },
            c: a.penalty_coef,
        },
        strategy: match a.strategy {
            StrategyArg::Best => SelectionStrategy::BestOfFront,
            StrategyArg::Select95 => SelectionStrategy::Select95,
            StrategyArg::SelPoints => SelectionStrategy::SelPoints,
            StrategyArg::PenaltyPoints => SelectionStrategy::PenaltyPoints,
        },
        seed: a.seed,
        f1_decimals: a.f1_decimals,
    })
}

fn score(model: &tir::TirModel, ds: &Dataset) -> Option<f64> {
    let pred = model.predict(&ds.x).ok()?;
    r2(ds.y.as_slice(), pred.as_slice()).ok().filter(|v| v.is_finite())
}

fn cmd_fit(a: &FitArgs) -> Result<(), CliError> {
    // flag checks that need no data come first so a bad flag is reported as such
    if a.kmin > a.kmax {
        return Err(CliError::Config(format!("kmin {} exceeds kmax {}", a.kmin, a.kmax)));
    }
    let ds = load_csv(&a.data, &a.target.column())?;
    if ds.n_samples() < MIN_ROWS {
        return Err(CliError::Data(format!(
            "{} usable rows; at least {MIN_ROWS} are needed",
            ds.n_samples()
        )));
    }
    let split = protocol_split(ds.n_samples(), a.seed).map_err(|e| CliError::Data(e.to_string()))?;
    let train = ds.subset(&split.train);
    let test = ds.subset(&split.test);
    if train.n_samples() < MIN_ROWS {
        return Err(CliError::Data(format!(
            "{} training rows after the split; at least {MIN_ROWS} are needed",
            train.n_samples()
        )));
    }
    let cfg = fit_config(a, ds.n_features(), train.n_samples())?;
    println!(
        "config: {}",
        json!({
            "data": a.data.display().to_string(),
            "target": match a.target.column() {
                TargetColumn::Named(n) => n,
                TargetColumn::Last => "<last column>".to_string(),
            },
            "n_train": train.n_samples(),
            "n_test": test.n_samples(),
            "search": cfg,
        })
    );

    let start = std::time::Instant::now();
    let outcome = run_search(&cfg, &train.x, &train.y).map_err(|e| CliError::Data(e.to_string()))?;
    info!("search finished in {:.2}s", start.elapsed().as_secs_f64());

    let model = &outcome.model;
    let train_r2 = Some(outcome.train_r2).filter(|v| v.is_finite());
    let test_r2 = score(model, &test);
    let fmt = |v: Option<f64>| v.map_or("null".to_string(), |v| format!("{v:.6}"));
    println!("model: {model}");
    println!("train_r2: {}", fmt(train_r2));
    println!("test_r2: {}", fmt(test_r2));
    println!("size: {}", model.node_count());
    if let Some(front) = &outcome.front {
        println!("front_size: {}", front.len());
    }

    if let Some(out) = &a.out {
        let doc = json!({
            "model": model,
            "model_string": model.to_string(),
            "train_r2": train_r2,
            "test_r2": test_r2,
            "size": model.node_count(),
            "config": cfg,
        });
        write_json(out, &doc)?;
    }
    Ok(())
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).expect("json values serialize");
    std::fs::write(path, text + "\n")
        .map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))
}

fn load_dir(dir: &Path, target: &TargetColumn) -> Result<Vec<Dataset>, CliError> {
    let entries = std::fs::read_dir(dir)
        .map_err(|e| CliError::Data(format!("cannot read dataset directory {}: {e}", dir.display())))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(Result::ok)
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("csv")))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(CliError::Data(format!("no .csv files in {}", dir.display())));
    }
    let mut out = Vec::with_capacity(paths.len());
    for p in paths {
        let ds = load_csv(&p, target)?;
        if ds.n_samples() < MIN_ROWS {
            return Err(CliError::Data(format!(
                "{}: {} usable rows; at least {MIN_ROWS} are needed",
                p.display(),
                ds.n_samples()
            )));
        }
        out.push(ds);
    }
    Ok(out)
}

fn cmd_bench(a: &BenchArgs) -> Result<(), CliError> {
    let variants = a
        .variants
        .iter()
        .map(|v| v.parse::<Variant>().map_err(|e| CliError::Config(e.to_string())))
        .collect::<Result<Vec<_>, _>>()?;
    if variants.is_empty() || a.seeds.is_empty() {
        return Err(CliError::Config("need at least one variant and one seed".into()));
    }
    if a.pop < 2 || a.gens == 0 {
        return Err(CliError::Config("population must be at least 2 and generations at least 1".into()));
    }
    let datasets = load_dir(&a.datasets, &a.target.column())?;
    let spec = ExperimentSpec::new(
        variants,
        datasets,
        a.seeds.clone(),
        Budget {
            pop_size: a.pop,
            generations: a.gens,
        },
    );
    println!(
        "config: {}",
        json!({
            "datasets": spec.datasets.iter().map(|d| &d.name).collect::<Vec<_>>(),
            "variants": spec.variants.iter().map(|v| v.name()).collect::<Vec<_>>(),
            "seeds": spec.seeds,
            "budget": spec.budget,
            "k_ranges": spec.k_ranges,
            "out": a.out.display().to_string(),
            "resume": a.resume,
        })
    );
    let total = spec.n_cells();
    let finished = AtomicUsize::new(0);
    let progress = |r: &tir::harness::RunRecord| {
        let k = finished.fetch_add(1, Ordering::SeqCst) + 1;
        let test = r.test_r2.map_or("null".to_string(), |v| format!("{v:.4}"));
        let size = r.model_size.map_or("null".to_string(), |v| v.to_string());
        println!(
            "[{k}] {} {} seed={} test_r2={test} size={size}",
            r.algorithm, r.dataset, r.seed
        );
    };
    let report = run_experiment(&spec, &a.out, a.resume, &progress).map_err(|e| CliError::Data(e.to_string()))?;
    println!(
        "done: {} new cells, {} skipped, {total} total",
        report.computed.len(),
        report.skipped
    );
    Ok(())
}

fn cmd_stats(a: &StatsArgs) -> Result<(), CliError> {
    let records = read_records(&a.results).map_err(|e| CliError::Data(e.to_string()))?;
    let fronts_path = a.fronts.clone().or_else(|| {
        let p = a.results.with_file_name(FRONTS_FILE);
        p.exists().then_some(p)
    });
    let fronts = match &fronts_path {
        Some(p) => read_fronts(p).map_err(|e| CliError::Data(e.to_string()))?,
        None => Vec::new(),
    };
    let groups: Vec<Group> = match a.group {
        Some(g) => vec![g],
        None => Group::ALL.to_vec(),
    };
    println!(
        "config: {}",
        json!({
            "results": a.results.display().to_string(),
            "fronts": fronts_path.as_ref().map(|p| p.display().to_string()),
            "groups": groups,
            "stats_seed": a.stats_seed,
            "out": a.out.display().to_string(),
        })
    );
    let agg = aggregates(&records, &fronts, &groups, a.stats_seed).map_err(|e| match e {
        StatsError::NoRecords => CliError::Data(format!("{} holds no records", a.results.display())),
        other => CliError::Config(other.to_string()),
    })?;
    write_json(&a.out, &serde_json::to_value(&agg).expect("aggregates serialize"))?;
    for g in &agg.groups {
        println!("group {}: {} datasets, {} algorithms", g.group, g.n_datasets, g.rows.len());
    }
    Ok(())
}
