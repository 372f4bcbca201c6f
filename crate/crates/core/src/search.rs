//! Evolutionary drivers.
//!
//! * [`evolve_single`]: generational GA with binary tournaments, elitism of
//!   one, and an optional size penalty switched on by a small-data heuristic.
//! * [`evolve_moo`]: NSGA-II with `(μ + λ)` survival over validation accuracy
//!   and node count, with crowded tournaments for parent selection.
//!
//! Coefficients are fitted on two thirds of the training rows and scored on
//! the remaining third. The returned models are refitted on all training rows.
//!
//! Every child draws from its own generator stream derived from the seed, the
//! generation and the child's index, so results do not depend on how many
//! worker threads evaluate the population.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{InvFn, TirModel, TirShape};
use crate::fitting::{admissible_inverses, fit, refit, FitResult, SplitData};
use crate::genetics::{crossover, mutate, random_individual, GeneticConfig, GeneticError};
use crate::moo::{
    crowded_tournament, crowding_distance, hypervolume_2d, rank_population, Objectives, Rank,
    RankedIndividual,
};

/// Fewest training rows a search accepts.
pub const MIN_ROWS: usize = 10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SearchError {
    #[error("{0} rows are too few to split (need at least {MIN_ROWS})")]
    TooSmall(usize),
    #[error("data has {got} columns but the configuration expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("target and feature matrix disagree: {0} targets for {1} rows")]
    TargetMismatch(usize, usize),
    #[error("training data contains non-finite values")]
    NonFinite,
    #[error("penalty coefficient must be finite and non-negative, got {0}")]
    InvalidPenalty(f64),
    #[error("empty front")]
    EmptyFront,
    #[error(transparent)]
    Config(#[from] GeneticError),
}

/// Small-data heuristics deciding whether the size penalty applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Heuristic {
    None,
    Samples,
    Dim,
    Points,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenaltyRule {
    pub kind: Heuristic,
    pub c: f64,
}

pub const DEFAULT_PENALTY: f64 = 0.01;

impl PenaltyRule {
    pub fn none() -> Self {
        PenaltyRule {
            kind: Heuristic::None,
            c: DEFAULT_PENALTY,
        }
    }

    pub fn new(kind: Heuristic) -> Self {
        PenaltyRule {
            kind,
            c: DEFAULT_PENALTY,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionStrategy {
    /// Most accurate member of the front.
    BestOfFront,
    /// Smallest member within 95% of the best accuracy.
    Select95,
    /// `Select95` on small data (points heuristic), `BestOfFront` otherwise.
    SelPoints,
    /// Most accurate member; the accuracy objective itself is penalized on
    /// small data (points heuristic).
    PenaltyPoints,
}

/// Fraction of the best accuracy a `Select95` pick must reach.
pub const SELECT_FRACTION: f64 = 0.95;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Single,
    Moo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub genetic: GeneticConfig,
    pub mode: Mode,
    pub penalty: PenaltyRule,
    /// Ignored in single-objective mode.
    pub strategy: SelectionStrategy,
    pub seed: u64,
    /// Round the accuracy objective to this many decimals in NSGA-II.
    /// Off by default.
    #[serde(default)]
    pub f1_decimals: Option<u32>,
}

/// Inclusive thresholds: 100 samples, 6 features, 1000 sample-feature cells.
pub fn is_small(n_samples: usize, n_features: usize, kind: Heuristic) -> bool {
    match kind {
        Heuristic::None => false,
        Heuristic::Samples => n_samples <= 100,
        Heuristic::Dim => n_features <= 6,
        Heuristic::Points => n_samples * n_features <= 1000,
    }
}

/// `r2 - c · size`.
pub fn penalized_fitness(r2: f64, size: usize, c: f64) -> f64 {
    r2 - c * size as f64
}

/// Largest node count a shape within `budget` tokens can have. A term with
/// `t` tokens has at most `2t` nodes; five more come from the root, the
/// intercept and the division.
pub fn max_node_count(budget: usize) -> usize {
    2 * budget + 5
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub n_samples: usize,
    pub n_features: usize,
}

/// Per-generation diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationStats {
    pub generation: usize,
    pub best: f64,
    pub median: f64,
    pub front_size: Option<usize>,
    pub hypervolume: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SingleOutcome {
    /// Best individual refitted on all training rows.
    pub model: TirModel,
    pub train_r2: f64,
    /// Holdout fitness of the returned individual.
    pub fitness: f64,
    pub history: Vec<GenerationStats>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MooOutcome {
    /// First front of the final population, deduplicated, sorted by size,
    /// each member refitted on all training rows. Objectives stay the holdout
    /// values the search saw.
    pub front: Vec<RankedIndividual>,
    /// Training R² of each front member after refitting.
    pub train_r2: Vec<f64>,
    pub history: Vec<GenerationStats>,
}

fn stream_rng(seed: u64, generation: usize, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((generation as u64 + 1) << 32) | index as u64);
    rng
}

struct Problem<'a> {
    cfg: &'a SearchConfig,
    x: &'a DMatrix<f64>,
    y: &'a DVector<f64>,
    split: SplitData,
    allowed_g: Vec<InvFn>,
    meta: DatasetMeta,
}

impl<'a> Problem<'a> {
    fn new(cfg: &'a SearchConfig, x: &'a DMatrix<f64>, y: &'a DVector<f64>) -> Result<Self, SearchError> {
        cfg.genetic.validate()?;
        if !(cfg.penalty.c >= 0.0 && cfg.penalty.c.is_finite()) {
            return Err(SearchError::InvalidPenalty(cfg.penalty.c));
        }
        if x.nrows() != y.len() {
            return Err(SearchError::TargetMismatch(y.len(), x.nrows()));
        }
        if x.ncols() != cfg.genetic.dims {
            return Err(SearchError::DimensionMismatch {
                expected: cfg.genetic.dims,
                got: x.ncols(),
            });
        }
        if x.nrows() < MIN_ROWS {
            return Err(SearchError::TooSmall(x.nrows()));
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(SearchError::NonFinite);
        }
        let split = SplitData::holdout(x.nrows(), cfg.seed).map_err(|_| SearchError::TooSmall(x.nrows()))?;
        let allowed_g = admissible_inverses(y.as_slice());
        Ok(Problem {
            cfg,
            x,
            y,
            split,
            allowed_g,
            meta: DatasetMeta {
                n_samples: x.nrows(),
                n_features: x.ncols(),
            },
        })
    }

    fn evaluate(&self, shape: &TirShape) -> FitResult {
        fit(shape, self.x, self.y, &self.split)
    }

    fn breed<R: Rng>(&self, a: &TirShape, b: impl FnOnce(&mut R) -> TirShape, rng: &mut R) -> TirShape {
        let g = &self.cfg.genetic;
        let mut child = if rng.random_bool(g.pc) {
            let other = b(rng);
            crossover(a, &other, g.budget, rng).expect("population shares one dimensionality")
        } else {
            a.clone()
        };
        if rng.random_bool(g.pm) {
            child = mutate(&child, g, &self.allowed_g, rng);
        }
        child
    }

    fn initial_population(&self) -> Vec<(TirShape, FitResult)> {
        (0..self.cfg.genetic.pop_size)
            .into_par_iter()
            .map(|i| {
                let mut rng = stream_rng(self.cfg.seed, 0, i);
                let shape = random_individual(&self.cfg.genetic, &self.allowed_g, &mut rng);
                let fr = self.evaluate(&shape);
                (shape, fr)
            })
            .collect()
    }

    /// Refits shapes in order of preference and returns the first that stays
    /// feasible on all rows, falling back to the holdout fit.
    fn refit_first(&self, ordered: &[&(TirShape, FitResult)]) -> (TirModel, f64) {
        for (shape, _) in ordered {
            let full = refit(shape, self.x, self.y);
            if full.feasible && full.train_r2.is_finite() {
                return (full.model, full.train_r2);
            }
        }
        let (_, fr) = ordered[0];
        (fr.model.clone(), fr.train_r2)
    }
}

fn finite_or_neg_inf(v: f64) -> f64 {
    if v.is_nan() {
        f64::NEG_INFINITY
    } else {
        v
    }
}

fn median(values: &[f64]) -> f64 {
    let mut v: Vec<f64> = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        let (a, b) = (v[n / 2 - 1], v[n / 2]);
        if a == b {
            a
        } else {
            a / 2.0 + b / 2.0
        }
    }
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

fn argmin(values: &[f64]) -> usize {
    let mut worst = 0;
    for (i, &v) in values.iter().enumerate() {
        if v < values[worst] {
            worst = i;
        }
    }
    worst
}

fn tournament<R: Rng>(fitness: &[f64], rng: &mut R) -> usize {
    let a = rng.random_range(0..fitness.len());
    let b = rng.random_range(0..fitness.len());
    if fitness[b] > fitness[a] {
        b
    } else {
        a
    }
}

/// Single-objective GA. The fitness is the holdout R², minus `c · size`
/// when the configured heuristic flags the data as small.
pub fn evolve_single(
    cfg: &SearchConfig,
    x: &DMatrix<f64>,
    y: &DVector<f64>,
) -> Result<SingleOutcome, SearchError> {
    let prob = Problem::new(cfg, x, y)?;
    let penalize = is_small(prob.meta.n_samples, prob.meta.n_features, cfg.penalty.kind);
    let fitness_of = |fr: &FitResult| {
        if !fr.feasible {
            return f64::NEG_INFINITY;
        }
        let f = if penalize {
            penalized_fitness(fr.val_r2, fr.model.node_count(), cfg.penalty.c)
        } else {
            fr.val_r2
        };
        finite_or_neg_inf(f)
    };

    let mut pop = prob.initial_population();
    let mut fitness: Vec<f64> = pop.iter().map(|(_, fr)| fitness_of(fr)).collect();
    let mut history = vec![GenerationStats {
        generation: 0,
        best: fitness[argmax(&fitness)],
        median: median(&fitness),
        front_size: None,
        hypervolume: None,
    }];

    for gen in 1..=cfg.genetic.generations {
        let mut children: Vec<(TirShape, FitResult)> = (0..cfg.genetic.pop_size)
            .into_par_iter()
            .map(|i| {
                let mut rng = stream_rng(cfg.seed, gen, i);
                let first = tournament(&fitness, &mut rng);
                let child = prob.breed(
                    &pop[first].0,
                    |r| pop[tournament(&fitness, r)].0.clone(),
                    &mut rng,
                );
                let fr = prob.evaluate(&child);
                (child, fr)
            })
            .collect();
        let mut child_fitness: Vec<f64> = children.iter().map(|(_, fr)| fitness_of(fr)).collect();
        let elite = argmax(&fitness);
        let worst = argmin(&child_fitness);
        children[worst] = pop[elite].clone();
        child_fitness[worst] = fitness[elite];
        pop = children;
        fitness = child_fitness;
        history.push(GenerationStats {
            generation: gen,
            best: fitness[argmax(&fitness)],
            median: median(&fitness),
            front_size: None,
            hypervolume: None,
        });
    }

    let mut order: Vec<usize> = (0..pop.len()).collect();
    order.sort_by(|&a, &b| fitness[b].total_cmp(&fitness[a]).then(a.cmp(&b)));
    let ordered: Vec<&(TirShape, FitResult)> = order.iter().map(|&i| &pop[i]).collect();
    let (model, train_r2) = prob.refit_first(&ordered);
    Ok(SingleOutcome {
        model,
        train_r2,
        fitness: fitness[order[0]],
        history,
    })
}

/// Normalized hypervolume of the feasible members of `front`, with sizes
/// scaled by the largest size the budget allows.
fn front_hypervolume(objs: &[Objectives], front: &[usize], budget: usize) -> f64 {
    let denom = max_node_count(budget) as f64;
    let pts: Vec<(f64, f64)> = front
        .iter()
        .map(|&i| objs[i])
        .filter(Objectives::feasible)
        .map(|o| (o.r2.clamp(0.0, 1.0), (o.size as f64 / denom).min(1.0)))
        .collect();
    hypervolume_2d(&pts).unwrap_or(0.0)
}

fn moo_stats(gen: usize, objs: &[Objectives], fronts: &[Vec<usize>], budget: usize) -> GenerationStats {
    let acc: Vec<f64> = objs.iter().map(|o| o.r2).collect();
    GenerationStats {
        generation: gen,
        best: acc[argmax(&acc)],
        median: median(&acc),
        front_size: Some(fronts[0].len()),
        hypervolume: Some(front_hypervolume(objs, &fronts[0], budget)),
    }
}

/// Indices of the `mu` survivors of `objs`: whole fronts first, the last
/// partial front by decreasing crowding distance.
fn survivors(objs: &[Objectives], mu: usize) -> Vec<usize> {
    let (_, fronts) = rank_population(objs);
    let mut next = Vec::with_capacity(mu);
    for front in fronts {
        if next.len() + front.len() <= mu {
            next.extend(front);
            continue;
        }
        let fobjs: Vec<Objectives> = front.iter().map(|&i| objs[i]).collect();
        let crowd = crowding_distance(&fobjs);
        let mut order: Vec<usize> = (0..front.len()).collect();
        order.sort_by(|&a, &b| crowd[b].total_cmp(&crowd[a]).then(a.cmp(&b)));
        let left = mu - next.len();
        next.extend(order.into_iter().take(left).map(|k| front[k]));
        break;
    }
    next
}

/// NSGA-II over (holdout accuracy, node count).
///
/// The accuracy objective is penalized by `c · size` on small data: with the
/// points heuristic for [`SelectionStrategy::PenaltyPoints`], otherwise with
/// the configured penalty heuristic (none by default).
pub fn evolve_moo(
    cfg: &SearchConfig,
    x: &DMatrix<f64>,
    y: &DVector<f64>,
) -> Result<MooOutcome, SearchError> {
    let prob = Problem::new(cfg, x, y)?;
    let heuristic = match cfg.strategy {
        SelectionStrategy::PenaltyPoints => Heuristic::Points,
        _ => cfg.penalty.kind,
    };
    let penalize = is_small(prob.meta.n_samples, prob.meta.n_features, heuristic);
    let objective_of = |fr: &FitResult| {
        let size = fr.model.node_count();
        let r2 = if !fr.feasible {
            f64::NEG_INFINITY
        } else if penalize {
            penalized_fitness(fr.val_r2, size, cfg.penalty.c)
        } else {
            fr.val_r2
        };
        let r2 = match cfg.f1_decimals {
            Some(d) if r2.is_finite() => {
                let scale = 10f64.powi(d as i32);
                (r2 * scale).round() / scale
            }
            _ => r2,
        };
        Objectives::new(finite_or_neg_inf(r2), size)
    };
    let mu = cfg.genetic.pop_size;
    let budget = cfg.genetic.budget;

    let mut pop = prob.initial_population();
    let mut objs: Vec<Objectives> = pop.iter().map(|(_, fr)| objective_of(fr)).collect();
    let (mut ranks, mut fronts) = rank_population(&objs);
    let mut history = vec![moo_stats(0, &objs, &fronts, budget)];

    for gen in 1..=cfg.genetic.generations {
        let ranks_ref: &[Rank] = &ranks;
        let children: Vec<(TirShape, FitResult)> = (0..mu)
            .into_par_iter()
            .map(|i| {
                let mut rng = stream_rng(cfg.seed, gen, i);
                let first = crowded_tournament(ranks_ref, &mut rng);
                let child = prob.breed(
                    &pop[first].0,
                    |r| pop[crowded_tournament(ranks_ref, r)].0.clone(),
                    &mut rng,
                );
                let fr = prob.evaluate(&child);
                (child, fr)
            })
            .collect();
        let child_objs: Vec<Objectives> = children.iter().map(|(_, fr)| objective_of(fr)).collect();

        let mut merged = pop;
        merged.extend(children);
        let mut merged_objs = objs;
        merged_objs.extend(child_objs);
        let keep = survivors(&merged_objs, mu);

        let mut slots: Vec<Option<(TirShape, FitResult)>> = merged.into_iter().map(Some).collect();
        pop = keep.iter().map(|&i| slots[i].take().expect("unique index")).collect();
        objs = keep.iter().map(|&i| merged_objs[i]).collect();
        (ranks, fronts) = rank_population(&objs);
        history.push(moo_stats(gen, &objs, &fronts, budget));
    }

    let mut seen = std::collections::HashSet::new();
    let mut members: Vec<usize> = Vec::new();
    for &i in &fronts[0] {
        let key = (
            objs[i].r2.to_bits(),
            objs[i].size,
            pop[i].1.model.to_string(),
        );
        if seen.insert(key) {
            members.push(i);
        }
    }
    members.sort_by(|&a, &b| {
        objs[a]
            .size
            .cmp(&objs[b].size)
            .then(objs[b].r2.total_cmp(&objs[a].r2))
            .then(a.cmp(&b))
    });

    let (front, train_r2) = members
        .par_iter()
        .map(|&i| {
            let (model, train_r2) = prob.refit_first(&[&pop[i]]);
            let ind = RankedIndividual {
                model,
                obj: objs[i],
                rank: Some(ranks[i]),
            };
            (ind, train_r2)
        })
        .unzip();
    Ok(MooOutcome {
        front,
        train_r2,
        history,
    })
}

/// Index of the member `strategy` picks from a mutually non-dominated front.
pub fn select_index(
    front: &[Objectives],
    strategy: SelectionStrategy,
    meta: DatasetMeta,
) -> Result<usize, SearchError> {
    if front.is_empty() {
        return Err(SearchError::EmptyFront);
    }
    let best_of_front = || {
        let mut best = 0;
        for (i, o) in front.iter().enumerate() {
            let b = &front[best];
            if o.r2 > b.r2 || (o.r2 == b.r2 && o.size < b.size) {
                best = i;
            }
        }
        best
    };
    let select_95 = || {
        let top = best_of_front();
        let best_r2 = front[top].r2;
        if !(best_r2 > 0.0) {
            return top;
        }
        let threshold = SELECT_FRACTION * best_r2;
        let mut pick = top;
        for (i, o) in front.iter().enumerate() {
            if o.r2 < threshold {
                continue;
            }
            let p = &front[pick];
            if o.size < p.size || (o.size == p.size && o.r2 > p.r2) {
                pick = i;
            }
        }
        pick
    };
    Ok(match strategy {
        SelectionStrategy::BestOfFront | SelectionStrategy::PenaltyPoints => best_of_front(),
        SelectionStrategy::Select95 => select_95(),
        SelectionStrategy::SelPoints => {
            if is_small(meta.n_samples, meta.n_features, Heuristic::Points) {
                select_95()
            } else {
                best_of_front()
            }
        }
    })
}

pub fn select_model(
    front: &[RankedIndividual],
    strategy: SelectionStrategy,
    meta: DatasetMeta,
) -> Result<&RankedIndividual, SearchError> {
    let objs: Vec<Objectives> = front.iter().map(|m| m.obj).collect();
    select_index(&objs, strategy, meta).map(|i| &front[i])
}

/// Result of a search in either mode, reduced to the returned model.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchOutcome {
    pub model: TirModel,
    pub train_r2: f64,
    /// Final front for the multi-objective mode.
    pub front: Option<Vec<RankedIndividual>>,
    pub history: Vec<GenerationStats>,
}

/// Runs the configured mode and returns the model it hands back: the best
/// individual for the GA, the strategy's pick from the front for NSGA-II.
pub fn run_search(
    cfg: &SearchConfig,
    x: &DMatrix<f64>,
    y: &DVector<f64>,
) -> Result<SearchOutcome, SearchError> {
    match cfg.mode {
        Mode::Single => {
            let out = evolve_single(cfg, x, y)?;
            Ok(SearchOutcome {
                model: out.model,
                train_r2: out.train_r2,
                front: None,
                history: out.history,
            })
        }
        Mode::Moo => {
            let out = evolve_moo(cfg, x, y)?;
            let meta = DatasetMeta {
                n_samples: x.nrows(),
                n_features: x.ncols(),
            };
            let objs: Vec<Objectives> = out.front.iter().map(|m| m.obj).collect();
            let pick = select_index(&objs, cfg.strategy, meta)?;
            Ok(SearchOutcome {
                model: out.front[pick].model.clone(),
                train_r2: out.train_r2[pick],
                front: Some(out.front),
                history: out.history,
            })
        }
    }
}
