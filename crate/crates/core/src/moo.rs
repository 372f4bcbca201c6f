//! NSGA-II building blocks over two objectives: accuracy (maximized) and
//! model size (minimized), plus the exact 2-D hypervolume.

use std::cmp::Ordering;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::TirModel;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MooError {
    #[error("point ({0}, {1}) lies outside the unit square")]
    OutOfRange(f64, f64),
    #[error("point ({0}, {1}) does not dominate the reference point")]
    BeyondReference(f64, f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Objectives {
    /// Accuracy (R² or its penalized form); `-inf` marks an infeasible model.
    pub r2: f64,
    /// Node count.
    pub size: usize,
}

impl Objectives {
    pub fn new(r2: f64, size: usize) -> Self {
        Objectives { r2, size }
    }

    pub fn feasible(&self) -> bool {
        self.r2.is_finite()
    }
}

/// `a` is at least as accurate and at most as large as `b`, and strictly
/// better in one of the two.
pub fn dominates(a: &Objectives, b: &Objectives) -> bool {
    a.r2 >= b.r2 && a.size <= b.size && (a.r2 > b.r2 || a.size < b.size)
}

/// Fast non-dominated sort. Fronts hold indices in input order; infeasible
/// points go to a single trailing front.
pub fn fast_nondominated_sort(pop: &[Objectives]) -> Vec<Vec<usize>> {
    let feasible: Vec<usize> = (0..pop.len()).filter(|&i| pop[i].feasible()).collect();
    let infeasible: Vec<usize> = (0..pop.len()).filter(|&i| !pop[i].feasible()).collect();

    let n = feasible.len();
    let mut dominated_by_me: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut domination_count = vec![0usize; n];
    for a in 0..n {
        for b in (a + 1)..n {
            let (pa, pb) = (&pop[feasible[a]], &pop[feasible[b]]);
            if dominates(pa, pb) {
                dominated_by_me[a].push(b);
                domination_count[b] += 1;
            } else if dominates(pb, pa) {
                dominated_by_me[b].push(a);
                domination_count[a] += 1;
            }
        }
    }

    let mut fronts = Vec::new();
    let mut current: Vec<usize> = (0..n).filter(|&i| domination_count[i] == 0).collect();
    while !current.is_empty() {
        let mut next = Vec::new();
        for &a in &current {
            for &b in &dominated_by_me[a] {
                domination_count[b] -= 1;
                if domination_count[b] == 0 {
                    next.push(b);
                }
            }
        }
        next.sort_unstable();
        fronts.push(current.iter().map(|&i| feasible[i]).collect());
        current = next;
    }
    if !infeasible.is_empty() {
        fronts.push(infeasible);
    }
    fronts
}

/// Crowding distance of each member of a front.
///
/// Boundary members of each objective get `+inf`; interior members add the
/// normalized gap between their neighbours. An objective with no spread adds
/// nothing.
pub fn crowding_distance(front: &[Objectives]) -> Vec<f64> {
    let n = front.len();
    let mut dist = vec![0.0; n];
    if n == 0 {
        return dist;
    }
    let axes: [fn(&Objectives) -> f64; 2] = [|o| o.r2, |o| o.size as f64];
    for value in axes {
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| {
            value(&front[a])
                .partial_cmp(&value(&front[b]))
                .unwrap_or(Ordering::Equal)
        });
        dist[order[0]] = f64::INFINITY;
        dist[order[n - 1]] = f64::INFINITY;
        let lo = value(&front[order[0]]);
        let hi = value(&front[order[n - 1]]);
        let range = hi - lo;
        if !(range.is_finite() && range > 0.0) {
            continue;
        }
        for w in 1..n.saturating_sub(1) {
            let gap = value(&front[order[w + 1]]) - value(&front[order[w - 1]]);
            dist[order[w]] += gap / range;
        }
    }
    dist
}

/// Front rank and crowding distance of one population member.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rank {
    pub front: usize,
    pub crowding: f64,
}

/// A fitted model together with its objectives and NSGA-II bookkeeping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedIndividual {
    pub model: TirModel,
    pub obj: Objectives,
    pub rank: Option<Rank>,
}

/// Sorts `pop` and assigns each member its front index and crowding distance.
/// Returns the fronts as well.
pub fn rank_population(pop: &[Objectives]) -> (Vec<Rank>, Vec<Vec<usize>>) {
    let fronts = fast_nondominated_sort(pop);
    let mut ranks = vec![
        Rank {
            front: 0,
            crowding: 0.0
        };
        pop.len()
    ];
    for (fi, front) in fronts.iter().enumerate() {
        let objs: Vec<Objectives> = front.iter().map(|&i| pop[i]).collect();
        for (&i, c) in front.iter().zip(crowding_distance(&objs)) {
            ranks[i] = Rank {
                front: fi,
                crowding: c,
            };
        }
    }
    (ranks, fronts)
}

/// Binary crowded tournament: lower front wins, then larger crowding, then a
/// fair coin.
pub fn crowded_tournament<R: Rng + ?Sized>(ranks: &[Rank], rng: &mut R) -> usize {
    let a = rng.random_range(0..ranks.len());
    let b = rng.random_range(0..ranks.len());
    let (ra, rb) = (&ranks[a], &ranks[b]);
    match ra.front.cmp(&rb.front) {
        Ordering::Less => a,
        Ordering::Greater => b,
        Ordering::Equal => {
            if ra.crowding > rb.crowding {
                a
            } else if rb.crowding > ra.crowding {
                b
            } else if rng.random_bool(0.5) {
                a
            } else {
                b
            }
        }
    }
}

/// Reference point used when hypervolumes are compared: zero accuracy and
/// full normalized size.
pub const HV_REFERENCE: (f64, f64) = (0.0, 1.0);

/// Exact area dominated by `points` (accuracy, normalized size) with respect
/// to `reference`. Points must lie in the unit square and dominate the
/// reference; dominated points contribute nothing.
pub fn hypervolume_2d_with_ref(
    points: &[(f64, f64)],
    reference: (f64, f64),
) -> Result<f64, MooError> {
    for &(r, s) in points {
        if !((0.0..=1.0).contains(&r) && (0.0..=1.0).contains(&s)) {
            return Err(MooError::OutOfRange(r, s));
        }
        if r < reference.0 || s > reference.1 {
            return Err(MooError::BeyondReference(r, s));
        }
    }
    let mut sorted = points.to_vec();
    sorted.sort_by(|a, b| {
        b.0.partial_cmp(&a.0)
            .unwrap_or(Ordering::Equal)
            .then(a.1.partial_cmp(&b.1).unwrap_or(Ordering::Equal))
    });
    let mut area = 0.0;
    let mut ceiling = reference.1;
    for (r, s) in sorted {
        if s < ceiling {
            area += (r - reference.0) * (ceiling - s);
            ceiling = s;
        }
    }
    Ok(area)
}

pub fn hypervolume_2d(points: &[(f64, f64)]) -> Result<f64, MooError> {
    hypervolume_2d_with_ref(points, HV_REFERENCE)
}
