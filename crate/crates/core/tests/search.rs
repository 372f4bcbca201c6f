mod common;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tir::fitting::admissible_inverses;
use tir::genetics::{check_shape, GeneticConfig};
use tir::moo::{dominates, Objectives};
use tir::search::{
    evolve_moo, evolve_single, run_search, select_index, DatasetMeta, Heuristic, Mode, PenaltyRule,
    SearchConfig, SearchError, SelectionStrategy,
};

fn config(dims: usize, n: usize, pop: usize, gens: usize, mode: Mode, seed: u64) -> SearchConfig {
    let mut genetic = GeneticConfig::new(dims, n);
    genetic.pop_size = pop;
    genetic.generations = gens;
    SearchConfig {
        genetic,
        mode,
        penalty: PenaltyRule::none(),
        strategy: SelectionStrategy::BestOfFront,
        seed,
        f1_decimals: None,
    }
}

fn linear_data() -> (DMatrix<f64>, DVector<f64>) {
    let x = common::uniform_x(100, 1, -3.0, 3.0, 42);
    let y = common::column_map(&x, |r| 2.0 * r[0] + 3.0);
    (x, y)
}

fn noisy_data(n: usize, d: usize, seed: u64) -> (DMatrix<f64>, DVector<f64>) {
    let x = common::uniform_x(n, d, 0.5, 2.0, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
    let y = common::column_map(&x, |r| r[0] * r[1] + r[d - 1].sin()).map(|v| v + rng.random_range(-0.3..0.3));
    (x, y)
}

#[test]
fn linear_target_recovered_quickly() {
    let (x, y) = linear_data();
    let out = evolve_single(&config(1, 100, 100, 20, Mode::Single, 1), &x, &y).unwrap();
    assert!(out.train_r2 >= 1.0 - 1e-6, "{} for {}", out.train_r2, out.model);
    assert!(out.history.len() <= 21);
}

#[test]
fn single_is_deterministic_and_elitist() {
    let (x, y) = noisy_data(80, 3, 1);
    let cfg = config(3, 80, 60, 15, Mode::Single, 9);
    let a = evolve_single(&cfg, &x, &y).unwrap();
    let b = evolve_single(&cfg, &x, &y).unwrap();
    assert_eq!(a.model.to_string(), b.model.to_string());
    assert_eq!(a.history, b.history);
    for w in a.history.windows(2) {
        assert!(w[1].best >= w[0].best, "best fell from {} to {}", w[0].best, w[1].best);
    }
}

#[test]
fn thread_count_does_not_change_results() {
    let (x, y) = noisy_data(60, 2, 3);
    for mode in [Mode::Single, Mode::Moo] {
        let cfg = config(2, 60, 40, 8, mode, 5);
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| run_search(&cfg, &x, &y).unwrap())
        };
        let (a, b) = (run(1), run(3));
        assert_eq!(a.model.to_string(), b.model.to_string());
        assert_eq!(a.history, b.history);
    }
}

#[test]
fn penalty_inert_on_large_data() {
    // 200 x 6 = 1200 cells: the points heuristic does not fire
    let (x, y) = noisy_data(200, 6, 4);
    let plain = config(6, 200, 40, 10, Mode::Single, 2);
    let mut penalized = plain.clone();
    penalized.penalty = PenaltyRule::new(Heuristic::Points);
    let a = evolve_single(&plain, &x, &y).unwrap();
    let b = evolve_single(&penalized, &x, &y).unwrap();
    assert_eq!(a.model, b.model);
    assert_eq!(a.history, b.history);
}

#[test]
fn penalty_shrinks_models_on_small_data() {
    let (x, y) = noisy_data(40, 3, 6);
    let mut sizes = (0, 0);
    for seed in 0..5 {
        let plain = config(3, 40, 60, 20, Mode::Single, seed);
        let mut penalized = plain.clone();
        penalized.penalty = PenaltyRule::new(Heuristic::Points);
        sizes.0 += evolve_single(&plain, &x, &y).unwrap().model.node_count();
        sizes.1 += evolve_single(&penalized, &x, &y).unwrap().model.node_count();
    }
    assert!(sizes.1 <= sizes.0, "penalized {} vs plain {}", sizes.1, sizes.0);
}

#[test]
fn moo_front_properties() {
    let (x, y) = noisy_data(90, 3, 7);
    let allowed = admissible_inverses(y.as_slice());
    for seed in 0..3 {
        let cfg = config(3, 90, 60, 15, Mode::Moo, seed);
        let out = evolve_moo(&cfg, &x, &y).unwrap();
        assert!(!out.front.is_empty());
        assert_eq!(out.front.len(), out.train_r2.len());
        for a in &out.front {
            check_shape(&a.model.shape, &cfg.genetic).unwrap();
            assert!(allowed.contains(&a.model.shape.g));
            for b in &out.front {
                assert!(!dominates(&a.obj, &b.obj));
                if a.obj.r2 > b.obj.r2 {
                    assert!(a.obj.size > b.obj.size);
                }
            }
        }
        let mut keys: Vec<(u64, usize, String)> = out
            .front
            .iter()
            .map(|m| (m.obj.r2.to_bits(), m.obj.size, m.model.to_string()))
            .collect();
        let n = keys.len();
        keys.sort();
        keys.dedup();
        assert_eq!(keys.len(), n, "duplicates left in the front");
    }
}

#[test]
fn moo_hypervolume_does_not_degrade() {
    let (x, y) = noisy_data(70, 2, 8);
    for seed in 0..10 {
        let out = evolve_moo(&config(2, 70, 40, 10, Mode::Moo, seed), &x, &y).unwrap();
        let first = out.history.first().unwrap().hypervolume.unwrap();
        let last = out.history.last().unwrap().hypervolume.unwrap();
        assert!(last >= first, "seed {seed}: {first} -> {last}");
    }
}

/// A random front: sizes strictly increasing with accuracy.
fn random_front(rng: &mut ChaCha8Rng) -> Vec<Objectives> {
    let n = rng.random_range(1..12);
    let mut sizes: Vec<usize> = (0..n).map(|_| rng.random_range(3..60)).collect();
    sizes.sort_unstable();
    sizes.dedup();
    let mut r2: Vec<f64> = (0..sizes.len()).map(|_| rng.random_range(-0.5..1.0)).collect();
    r2.sort_by(|a, b| a.total_cmp(b));
    sizes.into_iter().zip(r2).map(|(s, r)| Objectives::new(r, s)).collect()
}

#[test]
fn select_95_never_larger_than_best() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let meta = DatasetMeta {
        n_samples: 50,
        n_features: 3,
    };
    for _ in 0..1000 {
        let front = random_front(&mut rng);
        let best = select_index(&front, SelectionStrategy::BestOfFront, meta).unwrap();
        let sel = select_index(&front, SelectionStrategy::Select95, meta).unwrap();
        assert!(front[sel].size <= front[best].size);
        if front[best].r2 > 0.0 {
            assert!(front[sel].r2 >= 0.95 * front[best].r2);
        }
        // small data: sel_points agrees with select_95
        assert_eq!(select_index(&front, SelectionStrategy::SelPoints, meta).unwrap(), sel);
    }
}

#[test]
fn input_errors() {
    let x = common::uniform_x(9, 2, 0.0, 1.0, 0);
    let y = DVector::from_element(9, 1.0);
    let cfg = config(2, 9, 10, 2, Mode::Single, 0);
    assert_eq!(evolve_single(&cfg, &x, &y).unwrap_err(), SearchError::TooSmall(9));

    let x = common::uniform_x(20, 3, 0.0, 1.0, 0);
    let y = DVector::from_element(20, 1.0);
    assert!(matches!(
        evolve_moo(&cfg, &x, &y),
        Err(SearchError::DimensionMismatch { expected: 2, got: 3 })
    ));

    let x = common::uniform_x(20, 2, 0.0, 1.0, 0);
    let mut bad = cfg.clone();
    bad.genetic.k_range = (3, 1);
    assert!(matches!(evolve_single(&bad, &x, &y), Err(SearchError::Config(_))));
    let mut bad = cfg.clone();
    bad.penalty.c = -1.0;
    assert!(matches!(evolve_single(&bad, &x, &y), Err(SearchError::InvalidPenalty(_))));
}

#[test]
fn rounded_accuracy_objective() {
    let (x, y) = noisy_data(60, 2, 9);
    let mut cfg = config(2, 60, 30, 5, Mode::Moo, 1);
    cfg.f1_decimals = Some(2);
    let out = evolve_moo(&cfg, &x, &y).unwrap();
    for m in &out.front {
        let scaled = m.obj.r2 * 100.0;
        assert!((scaled - scaled.round()).abs() < 1e-9, "{}", m.obj.r2);
    }
}
