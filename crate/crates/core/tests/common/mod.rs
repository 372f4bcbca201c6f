#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tir::{InvFn, ItExpr, Term, TirShape, TransFn};

pub fn trans_fn() -> impl Strategy<Value = TransFn> {
    prop::sample::select(TransFn::ALL.to_vec())
}

pub fn inv_fn() -> impl Strategy<Value = InvFn> {
    prop::sample::select(InvFn::ALL.to_vec())
}

/// A term over `d` variables with exponents in `[-k, k]`, at least one nonzero.
pub fn term(d: usize, k: i32) -> impl Strategy<Value = Term> {
    (trans_fn(), prop::collection::vec(-k..=k, d), 0..d, 1..=k, any::<bool>()).prop_map(
        |(f, mut exps, forced, mag, neg)| {
            if exps.iter().all(|&e| e == 0) {
                exps[forced] = if neg { -mag } else { mag };
            }
            Term::new(f, exps).unwrap()
        },
    )
}

pub fn shape(d: usize, max_p: usize, max_q: usize) -> impl Strategy<Value = TirShape> {
    (
        inv_fn(),
        prop::collection::vec(term(d, 3), 1..=max_p),
        prop::collection::vec(term(d, 3), 0..=max_q),
    )
        .prop_map(|(g, p, q)| TirShape::new(g, ItExpr::new(p), ItExpr::new(q)).unwrap())
}

/// Uniform inputs in `[lo, hi)`.
pub fn uniform_x(n: usize, d: usize, lo: f64, hi: f64, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DMatrix::from_fn(n, d, |_, _| rng.random_range(lo..hi))
}

pub fn column_map(x: &DMatrix<f64>, f: impl Fn(&[f64]) -> f64) -> DVector<f64> {
    DVector::from_fn(x.nrows(), |i, _| {
        let row: Vec<f64> = x.row(i).iter().copied().collect();
        f(&row)
    })
}
