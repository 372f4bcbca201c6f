//! Random initialization and variation operators over [`TirShape`]s.
//!
//! Size is controlled by a token budget: every term costs one token for its
//! function plus one per variable it uses. Operators never produce a shape
//! whose numerator is empty, whose terms are empty, whose exponents leave the
//! configured range, or whose token count exceeds the budget.

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{InvFn, ItExpr, Term, TirShape, TransFn};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GeneticError {
    #[error("parents have {0} and {1} input variables")]
    DimensionMismatch(usize, usize),
    #[error("invalid configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneticConfig {
    pub dims: usize,
    /// Inclusive exponent range; zero is never sampled.
    pub k_range: (i32, i32),
    pub budget: usize,
    pub pc: f64,
    pub pm: f64,
    pub pop_size: usize,
    pub generations: usize,
}

impl GeneticConfig {
    /// Defaults: population 1000, 500 generations, crossover 0.3, mutation
    /// 0.7, exponents in `[-5, 5]` and the sample-size dependent budget.
    pub fn new(dims: usize, n_samples: usize) -> Self {
        GeneticConfig {
            dims,
            k_range: (-5, 5),
            budget: default_budget(n_samples),
            pc: 0.3,
            pm: 0.7,
            pop_size: 1000,
            generations: 500,
        }
    }

    pub fn validate(&self) -> Result<(), GeneticError> {
        let (kmin, kmax) = self.k_range;
        if self.dims == 0 {
            return Err(GeneticError::Config("dims must be at least 1".into()));
        }
        if kmin > kmax {
            return Err(GeneticError::Config(format!(
                "exponent range ({kmin}, {kmax}) is empty"
            )));
        }
        if kmin == 0 && kmax == 0 {
            return Err(GeneticError::Config(
                "exponent range must contain a nonzero value".into(),
            ));
        }
        if self.budget < 5 {
            return Err(GeneticError::Config(format!(
                "budget {} is below the minimum of 5",
                self.budget
            )));
        }
        for (name, p) in [("pc", self.pc), ("pm", self.pm)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(GeneticError::Config(format!("{name}={p} is not a probability")));
            }
        }
        if self.pop_size < 2 {
            return Err(GeneticError::Config("population needs at least 2 individuals".into()));
        }
        Ok(())
    }
}

/// `max(5, min(15, n / 10))`.
pub fn default_budget(n_samples: usize) -> usize {
    (n_samples / 10).clamp(5, 15)
}

fn term_tokens(t: &Term) -> usize {
    1 + t.n_vars()
}

fn expr_tokens(e: &ItExpr) -> usize {
    e.terms.iter().map(term_tokens).sum()
}

/// One token per term plus one per variable slot in use.
pub fn token_count(shape: &TirShape) -> usize {
    expr_tokens(&shape.p) + expr_tokens(&shape.q)
}

/// Uniform draw from the nonzero integers of `[kmin, kmax]`.
pub fn sample_exponent<R: Rng + ?Sized>(k_range: (i32, i32), rng: &mut R) -> i32 {
    let (kmin, kmax) = k_range;
    let has_zero = kmin <= 0 && kmax >= 0;
    let span = (kmax - kmin + 1) - i32::from(has_zero);
    let mut k = kmin + rng.random_range(0..span);
    if has_zero && k >= 0 {
        k += 1;
    }
    k
}

/// Builds a term by repeatedly picking an unused variable, stopping with
/// probability `1/(d'+1)` where `d'` is the number of unused variables.
/// Returns `None` when it stops before picking anything.
pub fn random_term<R: Rng + ?Sized>(d: usize, k_range: (i32, i32), rng: &mut R) -> Option<Term> {
    let mut exps = vec![0; d];
    let mut unchosen: Vec<usize> = (0..d).collect();
    while !unchosen.is_empty() {
        let left = unchosen.len();
        if rng.random_range(0..=left) == 0 {
            break;
        }
        let var = unchosen.swap_remove(rng.random_range(0..left));
        exps[var] = sample_exponent(k_range, rng);
    }
    if exps.iter().all(|&k| k == 0) {
        return None;
    }
    let func = *TransFn::ALL.choose(rng).expect("nonempty");
    Some(Term { func, exps })
}

fn single_var_term<R: Rng + ?Sized>(d: usize, k_range: (i32, i32), rng: &mut R) -> Term {
    let mut exps = vec![0; d];
    exps[rng.random_range(0..d)] = sample_exponent(k_range, rng);
    Term {
        func: *TransFn::ALL.choose(rng).expect("nonempty"),
        exps,
    }
}

/// Draws random terms until one comes back empty or would not fit.
fn random_it<R: Rng + ?Sized>(cfg: &GeneticConfig, budget: usize, rng: &mut R) -> ItExpr {
    let mut terms = Vec::new();
    let mut used = 0;
    while let Some(t) = random_term(cfg.dims, cfg.k_range, rng) {
        let cost = term_tokens(&t);
        if used + cost > budget {
            break;
        }
        used += cost;
        terms.push(t);
    }
    ItExpr::new(terms)
}

const MAX_RETRIES: usize = 100;

/// Random fresh term that costs at most `room` tokens (`room >= 2`).
fn fitting_term<R: Rng + ?Sized>(cfg: &GeneticConfig, room: usize, rng: &mut R) -> Term {
    for _ in 0..MAX_RETRIES {
        if let Some(t) = random_term(cfg.dims, cfg.k_range, rng) {
            if term_tokens(&t) <= room {
                return t;
            }
        }
    }
    single_var_term(cfg.dims, cfg.k_range, rng)
}

/// Random shape: `g` from `allowed_g`, a nonempty `p`, then `q` from the
/// budget that is left.
pub fn random_individual<R: Rng + ?Sized>(
    cfg: &GeneticConfig,
    allowed_g: &[InvFn],
    rng: &mut R,
) -> TirShape {
    let g = *allowed_g.choose(rng).expect("allowed_g must be nonempty");
    let mut p = ItExpr::default();
    for _ in 0..MAX_RETRIES {
        p = random_it(cfg, cfg.budget, rng);
        if !p.is_empty() {
            break;
        }
    }
    if p.is_empty() {
        p.terms.push(single_var_term(cfg.dims, cfg.k_range, rng));
    }
    let q = random_it(cfg, cfg.budget - expr_tokens(&p), rng);
    TirShape { g, p, q }
}

/// Maps a token offset inside an expression to the term that owns it.
fn term_at_token(e: &ItExpr, mut token: usize) -> usize {
    for (i, t) in e.terms.iter().enumerate() {
        let c = term_tokens(t);
        if token < c {
            return i;
        }
        token -= c;
    }
    e.len().saturating_sub(1)
}

/// Terms of `first` before `cut`, followed by the terms of `second` from a
/// uniformly chosen term onward.
fn recombine<R: Rng + ?Sized>(first: &ItExpr, cut: usize, second: &ItExpr, rng: &mut R) -> ItExpr {
    let mut terms = first.terms[..cut].to_vec();
    if !second.is_empty() {
        let from = rng.random_range(0..second.len());
        terms.extend_from_slice(&second.terms[from..]);
    }
    ItExpr::new(terms)
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Zone {
    P,
    Q,
}

/// Drops trailing terms until the shape fits, starting with `first`.
fn truncate_to_budget(shape: &mut TirShape, budget: usize, first: Zone) {
    let order = match first {
        Zone::P => [Zone::P, Zone::Q],
        Zone::Q => [Zone::Q, Zone::P],
    };
    for zone in order {
        while token_count(shape) > budget {
            let e = match zone {
                Zone::P if shape.p.len() > 1 => &mut shape.p,
                Zone::Q if !shape.q.is_empty() => &mut shape.q,
                _ => break,
            };
            e.terms.pop();
        }
    }
}

/// One-point crossover aligned on term boundaries.
///
/// The cut point is drawn uniformly over the tokens of `a` plus the root
/// slot. A root cut keeps `g, p` from `a` and takes `q` from `b`; a cut in
/// `p` (or `q`) mixes that expression of both parents and keeps the rest
/// from `a`.
pub fn crossover<R: Rng + ?Sized>(
    a: &TirShape,
    b: &TirShape,
    budget: usize,
    rng: &mut R,
) -> Result<TirShape, GeneticError> {
    if a.dims() != b.dims() {
        return Err(GeneticError::DimensionMismatch(a.dims(), b.dims()));
    }
    let tp = expr_tokens(&a.p);
    let tq = expr_tokens(&a.q);
    let point = rng.random_range(0..1 + tp + tq);
    let (mut child, zone) = if point == 0 {
        (
            TirShape {
                g: a.g,
                p: a.p.clone(),
                q: b.q.clone(),
            },
            Zone::Q,
        )
    } else if point <= tp {
        let cut = term_at_token(&a.p, point - 1);
        (
            TirShape {
                g: a.g,
                p: recombine(&a.p, cut, &b.p, rng),
                q: a.q.clone(),
            },
            Zone::P,
        )
    } else {
        let cut = term_at_token(&a.q, point - 1 - tp);
        (
            TirShape {
                g: a.g,
                p: a.p.clone(),
                q: recombine(&a.q, cut, &b.q, rng),
            },
            Zone::Q,
        )
    };
    truncate_to_budget(&mut child, budget, zone);
    Ok(child)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MutationOp {
    InsertNode,
    RemoveNode,
    ChangeVar,
    ChangeExponent,
    ChangeFunction,
}

impl MutationOp {
    pub const ALL: [MutationOp; 5] = [
        MutationOp::InsertNode,
        MutationOp::RemoveNode,
        MutationOp::ChangeVar,
        MutationOp::ChangeExponent,
        MutationOp::ChangeFunction,
    ];
}

fn terms_mut(shape: &mut TirShape, zone: Zone) -> &mut Vec<Term> {
    match zone {
        Zone::P => &mut shape.p.terms,
        Zone::Q => &mut shape.q.terms,
    }
}

fn term_slots(shape: &TirShape) -> Vec<(Zone, usize)> {
    (0..shape.p.len())
        .map(|i| (Zone::P, i))
        .chain((0..shape.q.len()).map(|i| (Zone::Q, i)))
        .collect()
}

/// Every (expression, term, variable) with a nonzero exponent.
fn occurrences(shape: &TirShape) -> Vec<(Zone, usize, usize)> {
    let mut out = Vec::new();
    for (zone, e) in [(Zone::P, &shape.p), (Zone::Q, &shape.q)] {
        for (ti, t) in e.terms.iter().enumerate() {
            out.extend(t.vars().map(|v| (zone, ti, v)));
        }
    }
    out
}

fn insert_targets(shape: &TirShape) -> Vec<(Zone, usize)> {
    let d = shape.dims();
    term_slots(shape)
        .into_iter()
        .filter(|&(z, i)| {
            let t = match z {
                Zone::P => &shape.p.terms[i],
                Zone::Q => &shape.q.terms[i],
            };
            t.n_vars() < d
        })
        .collect()
}

fn room(shape: &TirShape, budget: usize) -> usize {
    budget.saturating_sub(token_count(shape))
}

fn can_insert(shape: &TirShape, budget: usize) -> bool {
    let r = room(shape, budget);
    r >= 2 || (r == 1 && !insert_targets(shape).is_empty())
}

fn var_removals(shape: &TirShape) -> Vec<(Zone, usize)> {
    term_slots(shape)
        .into_iter()
        .filter(|&(z, i)| {
            let t = match z {
                Zone::P => &shape.p.terms[i],
                Zone::Q => &shape.q.terms[i],
            };
            t.n_vars() >= 2
        })
        .collect()
}

fn term_removals(shape: &TirShape) -> Vec<(Zone, usize)> {
    let mut out = Vec::new();
    if shape.p.len() > 1 {
        out.extend((0..shape.p.len()).map(|i| (Zone::P, i)));
    }
    out.extend((0..shape.q.len()).map(|i| (Zone::Q, i)));
    out
}

/// Mutation operators applicable to `shape`: insert-node is dropped when the
/// budget leaves no room, remove-node when only a single one-variable term is
/// left, change-var when there is a single input variable.
pub fn available_mutations(shape: &TirShape, budget: usize) -> Vec<MutationOp> {
    MutationOp::ALL
        .into_iter()
        .filter(|op| match op {
            MutationOp::InsertNode => can_insert(shape, budget),
            MutationOp::RemoveNode => {
                !var_removals(shape).is_empty() || !term_removals(shape).is_empty()
            }
            MutationOp::ChangeVar => shape.dims() >= 2,
            MutationOp::ChangeExponent | MutationOp::ChangeFunction => true,
        })
        .collect()
}

fn insert_node<R: Rng + ?Sized>(shape: &mut TirShape, cfg: &GeneticConfig, rng: &mut R) {
    let r = room(shape, cfg.budget);
    let targets = insert_targets(shape);
    let var_ok = r >= 1 && !targets.is_empty();
    let term_ok = r >= 2;
    let add_var = match (var_ok, term_ok) {
        (true, true) => rng.random_bool(0.5),
        (v, _) => v,
    };
    if add_var {
        let &(zone, ti) = targets.choose(rng).expect("nonempty");
        let t = &mut terms_mut(shape, zone)[ti];
        let free: Vec<usize> = (0..t.dims()).filter(|&i| t.exps[i] == 0).collect();
        let v = *free.choose(rng).expect("term has a free variable");
        t.exps[v] = sample_exponent(cfg.k_range, rng);
    } else {
        let zone = if rng.random_bool(0.5) { Zone::P } else { Zone::Q };
        let t = fitting_term(cfg, r, rng);
        terms_mut(shape, zone).push(t);
    }
}

fn remove_node<R: Rng + ?Sized>(shape: &mut TirShape, rng: &mut R) {
    let vars = var_removals(shape);
    let terms = term_removals(shape);
    let drop_var = match (vars.is_empty(), terms.is_empty()) {
        (false, false) => rng.random_bool(0.5),
        (empty_vars, _) => !empty_vars,
    };
    if drop_var {
        let &(zone, ti) = vars.choose(rng).expect("nonempty");
        let t = &mut terms_mut(shape, zone)[ti];
        let used: Vec<usize> = t.vars().collect();
        let v = *used.choose(rng).expect("term has variables");
        t.exps[v] = 0;
    } else {
        let &(zone, ti) = terms.choose(rng).expect("nonempty");
        terms_mut(shape, zone).remove(ti);
    }
}

fn change_var<R: Rng + ?Sized>(shape: &mut TirShape, rng: &mut R) {
    let d = shape.dims();
    let &(zone, ti, v) = occurrences(shape).choose(rng).expect("shape has variables");
    let mut other = rng.random_range(0..d - 1);
    if other >= v {
        other += 1;
    }
    terms_mut(shape, zone)[ti].exps.swap(v, other);
}

fn change_exponent<R: Rng + ?Sized>(shape: &mut TirShape, cfg: &GeneticConfig, rng: &mut R) {
    let &(zone, ti, v) = occurrences(shape).choose(rng).expect("shape has variables");
    terms_mut(shape, zone)[ti].exps[v] = sample_exponent(cfg.k_range, rng);
}

fn change_function<R: Rng + ?Sized>(shape: &mut TirShape, allowed_g: &[InvFn], rng: &mut R) {
    let slots = term_slots(shape);
    let pick = rng.random_range(0..=slots.len());
    if pick == 0 {
        shape.g = *allowed_g.choose(rng).expect("allowed_g must be nonempty");
    } else {
        let (zone, ti) = slots[pick - 1];
        terms_mut(shape, zone)[ti].func = *TransFn::ALL.choose(rng).expect("nonempty");
    }
}

/// Applies one uniformly chosen applicable mutation and reports which.
pub fn mutate_traced<R: Rng + ?Sized>(
    shape: &TirShape,
    cfg: &GeneticConfig,
    allowed_g: &[InvFn],
    rng: &mut R,
) -> (TirShape, MutationOp) {
    let ops = available_mutations(shape, cfg.budget);
    let op = *ops.choose(rng).expect("change-function is always available");
    let mut child = shape.clone();
    match op {
        MutationOp::InsertNode => insert_node(&mut child, cfg, rng),
        MutationOp::RemoveNode => remove_node(&mut child, rng),
        MutationOp::ChangeVar => change_var(&mut child, rng),
        MutationOp::ChangeExponent => change_exponent(&mut child, cfg, rng),
        MutationOp::ChangeFunction => change_function(&mut child, allowed_g, rng),
    }
    (child, op)
}

pub fn mutate<R: Rng + ?Sized>(
    shape: &TirShape,
    cfg: &GeneticConfig,
    allowed_g: &[InvFn],
    rng: &mut R,
) -> TirShape {
    mutate_traced(shape, cfg, allowed_g, rng).0
}

/// Structural invariants every shape handed out by this module satisfies.
pub fn check_shape(shape: &TirShape, cfg: &GeneticConfig) -> Result<(), String> {
    if shape.p.is_empty() {
        return Err("empty numerator".into());
    }
    let tokens = token_count(shape);
    if tokens > cfg.budget {
        return Err(format!("{tokens} tokens over budget {}", cfg.budget));
    }
    let (kmin, kmax) = cfg.k_range;
    for t in shape.terms() {
        if t.dims() != cfg.dims {
            return Err(format!("term with {} dims, expected {}", t.dims(), cfg.dims));
        }
        if t.n_vars() == 0 {
            return Err("term without variables".into());
        }
        if t.exps.iter().any(|&k| k < kmin || k > kmax) {
            return Err(format!("exponent outside [{kmin}, {kmax}] in {t}"));
        }
    }
    Ok(())
}
