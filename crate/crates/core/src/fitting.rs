//! Linearized least-squares fitting of TIR coefficients.
//!
//! With `z = g⁻¹(y)` the model `y = g(p / (1 + q))` rearranges into
//! `z = p(x) - z · q(x)`, which is linear in the coefficients of `p` and `q`.
//! The design matrix therefore has the columns
//! `[1, p_1(x), …, p_mp(x), -z·q_1(x), …, -z·q_mq(x)]` and is solved by a
//! truncated SVD of the column-equilibrated matrix, which picks a minimum-norm
//! solution when terms are collinear.
//!
//! Scores are computed with the full nonlinear model, not the linearized one.

use nalgebra::{DMatrix, DVector, SVD};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::expr::{InvFn, TirModel, TirShape};
pub use crate::metrics::{mae, mse, r2, MetricError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FitError {
    #[error("{g:?} cannot be inverted on the target values")]
    Inadmissible { g: InvFn },
    #[error("split: {0}")]
    InvalidSplit(String),
}

/// Rows used to solve for the coefficients and rows used to score the fit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitData {
    fit_rows: Vec<usize>,
    val_rows: Vec<usize>,
}

impl SplitData {
    pub fn new(fit_rows: Vec<usize>, val_rows: Vec<usize>) -> Result<Self, FitError> {
        if fit_rows.is_empty() || val_rows.is_empty() {
            return Err(FitError::InvalidSplit(
                "both fit and validation rows must be nonempty".into(),
            ));
        }
        let mut seen = std::collections::HashSet::with_capacity(fit_rows.len());
        for &r in &fit_rows {
            seen.insert(r);
        }
        if val_rows.iter().any(|r| seen.contains(r)) {
            return Err(FitError::InvalidSplit("fit and validation rows overlap".into()));
        }
        Ok(SplitData { fit_rows, val_rows })
    }

    /// Random 2/3 fit, 1/3 validation split of `n` rows, both sides sorted.
    pub fn holdout(n: usize, seed: u64) -> Result<Self, FitError> {
        if n < 2 {
            return Err(FitError::InvalidSplit(format!("{n} rows cannot be split")));
        }
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let n_val = (n / 3).max(1);
        let mut val = idx.split_off(n - n_val);
        idx.sort_unstable();
        val.sort_unstable();
        SplitData::new(idx, val)
    }

    pub fn fit_rows(&self) -> &[usize] {
        &self.fit_rows
    }

    pub fn val_rows(&self) -> &[usize] {
        &self.val_rows
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub model: TirModel,
    pub train_r2: f64,
    pub val_r2: f64,
    /// False when a design entry or transformed target was non-finite, or the
    /// solve failed. Coefficients are zero in that case.
    pub feasible: bool,
}

impl FitResult {
    fn infeasible(shape: &TirShape) -> Self {
        FitResult {
            model: shape.clone().unfitted(),
            train_r2: f64::NEG_INFINITY,
            val_r2: f64::NEG_INFINITY,
            feasible: false,
        }
    }
}

/// Invertible functions whose inverse is defined on every target value.
pub fn admissible_inverses(y: &[f64]) -> Vec<InvFn> {
    InvFn::ALL
        .into_iter()
        .filter(|g| y.iter().all(|&v| g.inverse_defined(v)))
        .collect()
}

/// `g⁻¹` applied element-wise.
pub fn inverse_target(g: InvFn, y: &[f64]) -> Result<Vec<f64>, FitError> {
    let z: Vec<f64> = y.iter().map(|&v| g.inverse(v)).collect();
    if z.iter().any(|v| !v.is_finite()) {
        return Err(FitError::Inadmissible { g });
    }
    Ok(z)
}

/// Term columns evaluated over every row of the input.
struct TermColumns {
    p: Vec<DVector<f64>>,
    q: Vec<DVector<f64>>,
}

impl TermColumns {
    fn eval(shape: &TirShape, x: &DMatrix<f64>) -> Option<Self> {
        let p = shape
            .p
            .terms
            .iter()
            .map(|t| t.eval_columns(x).ok())
            .collect::<Option<Vec<_>>>()?;
        let q = shape
            .q
            .terms
            .iter()
            .map(|t| t.eval_columns(x).ok())
            .collect::<Option<Vec<_>>>()?;
        Some(TermColumns { p, q })
    }
}

/// Cap on implicit-shift sweeps; a decomposition that has not converged by
/// then is treated as a failed fit.
const SVD_MAX_ITER: usize = 10_000;

/// Least-squares solution via SVD, with singular values below
/// `max(m, n) · eps · σ_max` treated as zero.
///
/// Columns are scaled to unit norm first so that a huge column (an `exp`
/// term, say) cannot push every other direction under the truncation
/// threshold. Among the least-squares solutions the one returned has minimum
/// norm in the scaled coordinates; identical columns share one scale, so
/// duplicated terms still split their weight evenly.
pub fn lstsq(mut a: DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    let (m, n) = a.shape();
    if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
        return None;
    }
    let mut scales = vec![1.0; n];
    for (j, s) in scales.iter_mut().enumerate() {
        let mut col = a.column_mut(j);
        let big = col.amax();
        if big > 0.0 {
            // two-step norm so squares of huge entries cannot overflow
            col /= big;
            let norm = col.norm();
            col /= norm;
            *s = big * norm;
        }
    }
    // the ordered constructor panics when the iteration yields NaN
    let svd = SVD::try_new_unordered(a, true, true, 5.0 * f64::EPSILON, SVD_MAX_ITER)?;
    if svd.singular_values.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let smax = svd.singular_values.max();
    let tol = smax * (m.max(n) as f64) * f64::EPSILON;
    let mut w = svd.solve(b, tol).ok()?;
    for (wj, s) in w.iter_mut().zip(&scales) {
        *wj /= s;
    }
    w.iter().all(|v| v.is_finite()).then_some(w)
}

fn solve_rows(
    shape: &TirShape,
    cols: &TermColumns,
    y: &DVector<f64>,
    rows: &[usize],
) -> Option<TirModel> {
    let g = shape.g;
    let mp = cols.p.len();
    let mq = cols.q.len();
    let ncols = 1 + mp + mq;
    let mut z = DVector::zeros(rows.len());
    for (i, &r) in rows.iter().enumerate() {
        let v = g.inverse(y[r]);
        if !v.is_finite() {
            return None;
        }
        z[i] = v;
    }
    let mut a = DMatrix::zeros(rows.len(), ncols);
    for (i, &r) in rows.iter().enumerate() {
        a[(i, 0)] = 1.0;
        for (j, c) in cols.p.iter().enumerate() {
            a[(i, 1 + j)] = c[r];
        }
        for (j, c) in cols.q.iter().enumerate() {
            a[(i, 1 + mp + j)] = -z[i] * c[r];
        }
    }
    if a.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let w = lstsq(a, &z)?;
    let model = TirModel {
        shape: shape.clone(),
        w0: w[0],
        wp: w.rows(1, mp).iter().copied().collect(),
        wq: w.rows(1 + mp, mq).iter().copied().collect(),
    };
    Some(model)
}

fn score_rows(
    model: &TirModel,
    cols: &TermColumns,
    y: &DVector<f64>,
    rows: &[usize],
) -> f64 {
    let pred = model.predict_rows(&cols.p, &cols.q, rows);
    let truth: Vec<f64> = rows.iter().map(|&r| y[r]).collect();
    r2(&truth, pred.as_slice()).unwrap_or(f64::NEG_INFINITY)
}

/// Fits the coefficients of `shape` on `split.fit_rows()` and scores the
/// result on both sides of the split. Validation targets are never read
/// while solving.
pub fn fit(shape: &TirShape, x: &DMatrix<f64>, y: &DVector<f64>, split: &SplitData) -> FitResult {
    let Some(cols) = TermColumns::eval(shape, x) else {
        return FitResult::infeasible(shape);
    };
    let Some(model) = solve_rows(shape, &cols, y, split.fit_rows()) else {
        return FitResult::infeasible(shape);
    };
    let train_r2 = score_rows(&model, &cols, y, split.fit_rows());
    let val_r2 = score_rows(&model, &cols, y, split.val_rows());
    FitResult {
        model,
        train_r2,
        val_r2,
        feasible: true,
    }
}

/// Fits on every row. `val_r2` repeats `train_r2` since nothing is held out.
pub fn refit(shape: &TirShape, x: &DMatrix<f64>, y: &DVector<f64>) -> FitResult {
    let rows: Vec<usize> = (0..x.nrows()).collect();
    let Some(cols) = TermColumns::eval(shape, x) else {
        return FitResult::infeasible(shape);
    };
    let Some(model) = solve_rows(shape, &cols, y, &rows) else {
        return FitResult::infeasible(shape);
    };
    let train_r2 = score_rows(&model, &cols, y, &rows);
    FitResult {
        model,
        train_r2,
        val_r2: train_r2,
        feasible: true,
    }
}
