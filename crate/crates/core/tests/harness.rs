mod common;

use std::collections::BTreeMap;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tir::harness::experiment::{ExperimentSpec, FrontMember, RESULTS_FILE};
use tir::harness::protocol::halving_grid_search;
use tir::harness::stats::{
    aggregates, average_ranks, bootstrap_median_ci, hypervolume_table, median_of_medians,
    rank_stats, round2, top5_histogram, Group,
};
use tir::harness::{
    protocol_split, read_records, run_experiment, Budget, Dataset, FrontRecord, RunRecord, Variant,
};
use tir::search::{Mode, PenaltyRule, SearchConfig, SelectionStrategy};

fn record(alg: &str, ds: &str, seed: u64, test_r2: Option<f64>) -> RunRecord {
    RunRecord {
        algorithm: alg.into(),
        dataset: ds.into(),
        seed,
        train_r2: test_r2,
        test_r2,
        test_mse: Some(0.1),
        test_mae: Some(0.1),
        model_size: Some(7),
        runtime_s: 0.5,
        model_string: None,
        model_structured: None,
        hyperparams: BTreeMap::new(),
        n_train: 150,
        n_features: 4,
        error: None,
    }
}

fn toy_dataset(name: &str, n: usize, seed: u64) -> Dataset {
    let x = common::uniform_x(n, 2, 0.5, 2.0, seed);
    let y = common::column_map(&x, |r| r[0] * r[0] / (1.0 + r[1]));
    Dataset::new(name, x, y)
}

#[test]
fn protocol_examples() {
    let s = protocol_split(100, 7).unwrap();
    assert_eq!((s.train.len(), s.test.len()), (75, 25));
    let s = protocol_split(20_000, 7).unwrap();
    assert_eq!(s.train.len(), 10_000);
    assert_eq!(protocol_split(333, 1), protocol_split(333, 1));
}

fn search_config(seed: u64, k_range: (i32, i32), pop: usize) -> SearchConfig {
    let mut genetic = tir::genetics::GeneticConfig::new(2, 60);
    genetic.k_range = k_range;
    genetic.pop_size = pop;
    genetic.generations = 3;
    SearchConfig {
        genetic,
        mode: Mode::Moo,
        penalty: PenaltyRule::none(),
        strategy: SelectionStrategy::BestOfFront,
        seed,
        f1_decimals: None,
    }
}

#[test]
fn halving_edge_cases() {
    let ds = toy_dataset("toy", 60, 1);
    let one = [search_config(1, (-5, 5), 20)];
    let res = halving_grid_search(&one, &ds.x, &ds.y, 3).unwrap();
    assert_eq!(res.best, 0);
    assert!(res.rounds.is_empty());

    // population 1 is rejected by validation, so every CV fold fails
    let broken = search_config(1, (-5, 5), 1);
    let good = search_config(1, (0, 3), 20);
    for (configs, want) in [([broken.clone(), good.clone()], 1), ([good, broken], 0)] {
        let res = halving_grid_search(&configs, &ds.x, &ds.y, 3).unwrap();
        assert_eq!(res.best, want);
        assert_eq!(res.rounds.len(), 1);
        assert_eq!(res.rounds[0].rows, 60);
    }
    assert!(halving_grid_search(&[], &ds.x, &ds.y, 3).is_err());
    let seven = vec![search_config(1, (-5, 5), 20); 7];
    assert!(halving_grid_search(&seven, &ds.x, &ds.y, 3).is_err());
}

#[test]
fn halving_three_configs_two_rounds() {
    let ds = toy_dataset("toy", 120, 2);
    let configs = [
        search_config(1, (-5, 5), 15),
        search_config(1, (0, 3), 15),
        search_config(1, (-1, 1), 15),
    ];
    let a = halving_grid_search(&configs, &ds.x, &ds.y, 4).unwrap();
    let b = halving_grid_search(&configs, &ds.x, &ds.y, 4).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.rounds.len(), 2);
    assert_eq!((a.rounds[0].rows, a.rounds[1].rows), (60, 120));
    assert_eq!(a.rounds[0].scores.len(), 3);
    assert_eq!(a.rounds[1].scores.len(), 2);
}

#[test]
fn sweep_cardinality_resume_and_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let datasets = vec![toy_dataset("a", 20, 1), toy_dataset("b", 24, 2), toy_dataset("c", 28, 3)];
    let spec = ExperimentSpec::new(
        vec![Variant::Tir, Variant::TirMooSelect],
        datasets,
        (1..=10).collect(),
        Budget {
            pop_size: 6,
            generations: 1,
        },
    );
    let report = run_experiment(&spec, dir.path(), false, &|_| {}).unwrap();
    assert_eq!(report.computed.len(), 60);
    let path = dir.path().join(RESULTS_FILE);
    let mut on_disk = read_records(&path).unwrap();
    assert_eq!(on_disk.len(), 60);
    let mut computed = report.computed.clone();
    let key = |r: &RunRecord| r.key();
    on_disk.sort_by_key(key);
    computed.sort_by_key(key);
    assert_eq!(on_disk, computed);
    for r in &on_disk {
        assert_eq!(r.n_train, r.n_train.min(21));
        if let Some(m) = &r.model_structured {
            assert_eq!(Some(m.to_string()), r.model_string);
            assert_eq!(Some(m.node_count()), r.model_size);
        }
    }
    let fronts: Vec<FrontRecord> = tir::harness::read_fronts(&dir.path().join("fronts.jsonl")).unwrap();
    assert!(fronts.iter().all(|f| f.algorithm == "TIRMOO-Select"));

    let again = run_experiment(&spec, dir.path(), true, &|_| {}).unwrap();
    assert_eq!((again.computed.len(), again.skipped), (0, 60));

    // lose the last three records, one of them half written
    let text = std::fs::read_to_string(&path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    let mut kept = lines[..57].join("\n");
    kept.push('\n');
    kept.push_str(&lines[57][..lines[57].len() / 2]);
    std::fs::write(&path, kept).unwrap();
    let resumed = run_experiment(&spec, dir.path(), true, &|_| {}).unwrap();
    assert_eq!((resumed.computed.len(), resumed.skipped), (3, 57));
    // the half line is skipped with a warning; every full line parses
    let all = read_records(&path);
    assert!(all.is_err() || all.unwrap().len() == 60);
}

#[test]
fn truncated_tail_is_tolerated() {
    let mut f = tempfile::NamedTempFile::new().unwrap();
    let line = serde_json::to_string(&record("A", "d", 1, Some(0.5))).unwrap();
    writeln!(f, "{line}").unwrap();
    write!(f, "{}", &line[..20]).unwrap();
    assert_eq!(read_records(f.path()).unwrap().len(), 1);
}

#[test]
fn record_json_round_trip() {
    let mut r = record("TIRMOO", "fri_x", 3, Some(0.123456789012345678));
    r.test_mse = None;
    r.hyperparams.insert("k_range".into(), serde_json::json!([-5, 5]));
    let back: RunRecord = serde_json::from_str(&serde_json::to_string(&r).unwrap()).unwrap();
    assert_eq!(back, r);
    let text = serde_json::to_string(&r).unwrap();
    assert!(text.contains("\"test_mse\":null"));
}

#[test]
fn median_of_medians_examples() {
    let recs: Vec<RunRecord> = (0..5).map(|s| record("A", "d", s, Some(0.5))).collect();
    let m = &median_of_medians(&recs, Group::All, 0)["A"];
    assert_eq!((m.median, m.ci_low, m.ci_high), (0.5, 0.5, 0.5));

    let recs = vec![
        record("A", "d1", 0, Some(0.2)),
        record("A", "d2", 0, Some(0.4)),
        record("A", "d3", 0, Some(0.9)),
    ];
    let m = &median_of_medians(&recs, Group::All, 0)["A"];
    assert_eq!(m.median, 0.4);
    assert!(m.ci_low <= m.median && m.median <= m.ci_high);
    assert_eq!(median_of_medians(&recs, Group::All, 5), median_of_medians(&recs, Group::All, 5));
}

#[test]
fn bootstrap_reproducible() {
    let v = [0.1, 0.5, 0.3, 0.9, 0.7, 0.2];
    let a = bootstrap_median_ci(&v, &mut ChaCha8Rng::seed_from_u64(4));
    let b = bootstrap_median_ci(&v, &mut ChaCha8Rng::seed_from_u64(4));
    assert_eq!(a, b);
    assert!(a.0 <= a.1);
}

#[test]
fn rank_examples() {
    let mut recs = Vec::new();
    for d in 0..10 {
        recs.push(record("good", &format!("d{d}"), 0, Some(0.9)));
        recs.push(record("bad", &format!("d{d}"), 0, Some(0.1)));
    }
    let rs = rank_stats(&recs, Group::All);
    assert_eq!(rs.avg_ranks["good"], 1.0);
    assert_eq!(rs.avg_ranks["bad"], 2.0);
    assert!((rs.critical_difference.unwrap() - 0.6198064213930023).abs() < 1e-12);

    let tied: Vec<RunRecord> = ["a", "b", "c"]
        .iter()
        .flat_map(|a| (0..4).map(move |d| record(a, &format!("d{d}"), 0, Some(0.3))))
        .collect();
    for r in rank_stats(&tied, Group::All).avg_ranks.values() {
        assert_eq!(*r, 2.0);
    }
}

#[test]
fn top5_examples() {
    let mut recs = Vec::new();
    for d in 0..4 {
        for (i, a) in ["a", "b", "c", "d", "e", "f", "g"].iter().enumerate() {
            recs.push(record(a, &format!("d{d}"), 0, Some(0.9 - 0.1 * i as f64)));
        }
    }
    let h = top5_histogram(&recs, Group::All);
    assert_eq!(h["a"], 1.0);
    assert_eq!(h["f"], 0.0);
    assert!(h.values().sum::<f64>() >= 1.0);

    let recs = vec![
        record("x", "d", 0, Some(0.951)),
        record("y", "d", 0, Some(0.949)),
    ];
    assert_eq!(round2(0.951), round2(0.949));
    let r = rank_stats(&recs, Group::All);
    // ranks use the unrounded medians
    assert_eq!(r.avg_ranks["x"], 1.0);
}

/// Rank of each entry as 1 + strictly better + half the other ties.
fn naive_ranks(scores: &[f64]) -> Vec<f64> {
    scores
        .iter()
        .map(|&s| {
            let better = scores.iter().filter(|&&o| o > s).count() as f64;
            let ties = scores.iter().filter(|&&o| o == s).count() as f64;
            better + (ties + 1.0) / 2.0
        })
        .collect()
}

/// Members scoring at least the fifth best rounded score.
fn naive_top5(scores: &[f64]) -> Vec<bool> {
    let rounded: Vec<f64> = scores.iter().map(|&v| round2(v)).collect();
    let mut sorted = rounded.clone();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let cutoff = sorted[sorted.len().min(5) - 1];
    rounded.iter().map(|&v| v >= cutoff).collect()
}

fn random_fixture(rng: &mut ChaCha8Rng) -> Vec<RunRecord> {
    let k = rng.random_range(2..=10);
    let n = rng.random_range(1..=20);
    let mut recs = Vec::new();
    for a in 0..k {
        for d in 0..n {
            for seed in 0..3 {
                let v = if rng.random_bool(0.05) {
                    None
                } else {
                    // coarse values so ties happen
                    Some((rng.random_range(0..40) as f64) / 40.0)
                };
                recs.push(record(&format!("alg{a}"), &format!("ds{d}"), seed, v));
            }
        }
    }
    recs
}

#[test]
fn stats_agree_with_naive_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..200 {
        let recs = random_fixture(&mut rng);
        let meds = tir::harness::stats::dataset_medians(&recs, Group::All);
        let algs: Vec<&String> = meds.keys().collect();
        let datasets: Vec<&String> = meds[algs[0]].keys().collect();
        let mut rank_sum = vec![0.0; algs.len()];
        let mut top = vec![0usize; algs.len()];
        for ds in &datasets {
            let scores: Vec<f64> = algs.iter().map(|a| meds[*a][*ds]).collect();
            assert_eq!(average_ranks(&scores), naive_ranks(&scores));
            for (i, (r, t)) in naive_ranks(&scores).into_iter().zip(naive_top5(&scores)).enumerate() {
                rank_sum[i] += r;
                top[i] += usize::from(t);
            }
        }
        let rs = rank_stats(&recs, Group::All);
        let h = top5_histogram(&recs, Group::All);
        for (i, a) in algs.iter().enumerate() {
            let want = rank_sum[i] / datasets.len() as f64;
            assert!((rs.avg_ranks[*a] - want).abs() < 1e-12);
            assert_eq!(h[*a], top[i] as f64 / datasets.len() as f64);
        }
    }
}

#[test]
fn aggregates_ignore_record_order() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..20 {
        let mut recs = random_fixture(&mut rng);
        let a = aggregates(&recs, &[], &Group::ALL, 3).unwrap();
        recs.shuffle(&mut rng);
        let b = aggregates(&recs, &[], &Group::ALL, 3).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        for g in &a.groups {
            for row in &g.rows {
                if let (Some(lo), Some(m), Some(hi)) = (row.ci_low, row.median_of_medians_r2, row.ci_high) {
                    assert!(lo <= m && m <= hi);
                }
            }
        }
    }
    assert!(aggregates(&[], &[], &Group::ALL, 0).is_err());
}

#[test]
fn group_membership() {
    let mut small = record("A", "192_vineyard", 0, Some(0.5));
    small.n_train = 39;
    small.n_features = 2;
    let mut fri = record("A", "607_fri_c4_1000_50", 0, Some(0.5));
    fri.n_train = 750;
    fri.n_features = 50;
    assert!(Group::Points.contains(&small) && !Group::Points.contains(&fri));
    assert!(Group::Friedman.contains(&fri) && !Group::Friedman.contains(&small));
    assert!(Group::NonFriedman.contains(&small));
    assert!(Group::All.contains(&small) && Group::All.contains(&fri));
}

fn front(alg: &str, ds: &str, seed: u64, members: &[(f64, usize)]) -> FrontRecord {
    FrontRecord {
        algorithm: alg.into(),
        dataset: ds.into(),
        seed,
        members: members
            .iter()
            .map(|&(f1, size)| FrontMember {
                f1: Some(f1),
                size,
                train_r2: None,
                test_r2: None,
            })
            .collect(),
    }
}

#[test]
fn hypervolume_table_examples() {
    // perfect accuracy at the smallest size against a larger front elsewhere
    let fronts = vec![
        front("A", "d", 1, &[(1.0, 4)]),
        front("B", "d", 1, &[(0.5, 5), (0.9, 20)]),
        front("A", "d", 2, &[(1.0, 4)]),
        front("B", "d", 2, &[(0.5, 5), (0.9, 20)]),
    ];
    let table = hypervolume_table(&fronts);
    let a = table.iter().find(|r| r.algorithm == "A").unwrap();
    assert!((a.mean - (1.0 - 4.0 / 20.0)).abs() < 1e-12);
    assert!(a.mean < 1.0);
    assert_eq!(a.std, 0.0);
    assert_eq!(a.n_seeds, 2);

    // accuracy is clipped, infeasible members ignored
    let mut f = front("C", "e", 1, &[(1.7, 2), (-3.0, 1)]);
    f.members.push(FrontMember {
        f1: None,
        size: 1,
        train_r2: None,
        test_r2: None,
    });
    let t = hypervolume_table(&[f]);
    assert!((t[0].mean - 0.0).abs() < 1e-12 || t[0].mean <= 1.0);
}

#[test]
fn load_and_run_cell_from_csv() {
    let mut f = tempfile::Builder::new().suffix(".csv").tempfile().unwrap();
    writeln!(f, "a,b,target").unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..40 {
        let (a, b): (f64, f64) = (rng.random_range(0.5..2.0), rng.random_range(0.5..2.0));
        writeln!(f, "{a},{b},{}", a * b + 1.0).unwrap();
    }
    let ds = tir::harness::load_csv(f.path(), &Default::default()).unwrap();
    let cell = tir::harness::run_cell(
        Variant::TirMoo,
        &ds,
        1,
        &Budget {
            pop_size: 30,
            generations: 10,
        },
        &tir::harness::experiment::K_RANGE_GRID,
    );
    assert!(cell.record.error.is_none());
    assert_eq!(cell.record.n_train, 30);
    assert!(cell.record.test_r2.unwrap() > 0.9);
    assert!(cell.front.is_some());
    let _ = (DMatrix::<f64>::zeros(1, 1), DVector::<f64>::zeros(1));
}
