//! Transformation-Interaction-Rational expressions.
//!
//! A model has the form
//!
//! ```text
//! g( (w0 + Σ wp_j · f_j(Π x_i^k_ij)) / (1 + Σ wq_k · f_k(Π x_i^k_ik)) )
//! ```
//!
//! where `g` is an invertible function, each `f` is a transformation function
//! and the products are interaction terms with integer exponents. The
//! numerator and denominator are affine IT expressions; the denominator's
//! intercept is fixed at 1 and never stored.
//!
//! Evaluation never fails for domain reasons: undefined powers or function
//! applications produce NaN and callers decide what to do with it.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ExprError {
    #[error("input has {got} columns, expression expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("coefficient vector has {got} entries for {expected} terms")]
    CoefficientMismatch { expected: usize, got: usize },
    #[error("the numerator must contain at least one term")]
    EmptyNumerator,
    #[error("a term must have at least one nonzero exponent")]
    EmptyTerm,
}

/// Transformation function applied to an interaction term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransFn {
    Id,
    Tanh,
    Sin,
    Cos,
    Log,
    Exp,
    Sqrt,
}

impl TransFn {
    pub const ALL: [TransFn; 7] = [
        TransFn::Id,
        TransFn::Tanh,
        TransFn::Sin,
        TransFn::Cos,
        TransFn::Log,
        TransFn::Exp,
        TransFn::Sqrt,
    ];

    pub fn apply(self, v: f64) -> f64 {
        match self {
            TransFn::Id => v,
            TransFn::Tanh => v.tanh(),
            TransFn::Sin => v.sin(),
            TransFn::Cos => v.cos(),
            TransFn::Log => {
                if v > 0.0 {
                    v.ln()
                } else {
                    f64::NAN
                }
            }
            TransFn::Exp => v.exp(),
            TransFn::Sqrt => {
                if v >= 0.0 {
                    v.sqrt()
                } else {
                    f64::NAN
                }
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            TransFn::Id => "id",
            TransFn::Tanh => "tanh",
            TransFn::Sin => "sin",
            TransFn::Cos => "cos",
            TransFn::Log => "log",
            TransFn::Exp => "exp",
            TransFn::Sqrt => "sqrt",
        }
    }
}

/// Invertible function wrapped around the rational expression.
///
/// The inverse is what the linearized fit applies to the target, so the
/// inverse's domain decides which functions are usable for a given target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InvFn {
    Id,
    Atan,
    Tan,
    Tanh,
    Log,
    Exp,
    Sqrt,
}

/// Margin kept away from ±1 when inverting `tanh`.
pub const TANH_MARGIN: f64 = 1e-12;

impl InvFn {
    pub const ALL: [InvFn; 7] = [
        InvFn::Id,
        InvFn::Atan,
        InvFn::Tan,
        InvFn::Tanh,
        InvFn::Log,
        InvFn::Exp,
        InvFn::Sqrt,
    ];

    pub fn apply(self, v: f64) -> f64 {
        match self {
            InvFn::Id => v,
            InvFn::Atan => v.atan(),
            InvFn::Tan => v.tan(),
            InvFn::Tanh => v.tanh(),
            InvFn::Log => {
                if v > 0.0 {
                    v.ln()
                } else {
                    f64::NAN
                }
            }
            InvFn::Exp => v.exp(),
            InvFn::Sqrt => {
                if v >= 0.0 {
                    v.sqrt()
                } else {
                    f64::NAN
                }
            }
        }
    }

    /// `g⁻¹(y)`. Returns NaN outside [`InvFn::inverse_defined`].
    pub fn inverse(self, y: f64) -> f64 {
        if !self.inverse_defined(y) {
            return f64::NAN;
        }
        match self {
            InvFn::Id => y,
            InvFn::Atan => y.tan(),
            InvFn::Tan => y.atan(),
            InvFn::Tanh => y.atanh(),
            InvFn::Log => y.exp(),
            InvFn::Exp => y.ln(),
            InvFn::Sqrt => y * y,
        }
    }

    /// Whether `y` lies in the range of `g`, i.e. `g⁻¹(y)` exists and is finite.
    pub fn inverse_defined(self, y: f64) -> bool {
        if !y.is_finite() {
            return false;
        }
        match self {
            InvFn::Id | InvFn::Tan => true,
            InvFn::Atan => y.abs() < std::f64::consts::FRAC_PI_2,
            InvFn::Tanh => y.abs() < 1.0 - TANH_MARGIN,
            // exp(y) overflows past ~709.78
            InvFn::Log => y.exp().is_finite(),
            InvFn::Exp => y > 0.0,
            InvFn::Sqrt => y >= 0.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            InvFn::Id => "id",
            InvFn::Atan => "atan",
            InvFn::Tan => "tan",
            InvFn::Tanh => "tanh",
            InvFn::Log => "log",
            InvFn::Exp => "exp",
            InvFn::Sqrt => "sqrt",
        }
    }
}

/// `base^exp` by repeated squaring. `0^0 = 1`, `0^-k` is NaN.
pub fn int_pow(base: f64, exp: i32) -> f64 {
    if exp == 0 {
        return 1.0;
    }
    if exp < 0 {
        if base == 0.0 {
            return f64::NAN;
        }
        return 1.0 / int_pow(base, -exp);
    }
    let mut result = 1.0;
    let mut acc = base;
    let mut e = exp as u32;
    while e > 0 {
        if e & 1 == 1 {
            result *= acc;
        }
        e >>= 1;
        if e > 0 {
            acc *= acc;
        }
    }
    result
}

/// One interaction term `f(Π x_i^k_i)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Term {
    pub func: TransFn,
    pub exps: Vec<i32>,
}

impl Term {
    pub fn new(func: TransFn, exps: Vec<i32>) -> Result<Self, ExprError> {
        let term = Term { func, exps };
        if term.n_vars() == 0 {
            return Err(ExprError::EmptyTerm);
        }
        Ok(term)
    }

    pub fn dims(&self) -> usize {
        self.exps.len()
    }

    /// Number of variables with a nonzero exponent.
    pub fn n_vars(&self) -> usize {
        self.exps.iter().filter(|&&k| k != 0).count()
    }

    /// Indices of variables with a nonzero exponent.
    pub fn vars(&self) -> impl Iterator<Item = usize> + '_ {
        self.exps
            .iter()
            .enumerate()
            .filter(|(_, &k)| k != 0)
            .map(|(i, _)| i)
    }

    fn interaction(&self, x: &[f64]) -> f64 {
        self.exps
            .iter()
            .zip(x)
            .filter(|(&k, _)| k != 0)
            .fold(1.0, |acc, (&k, &xi)| acc * int_pow(xi, k))
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64, ExprError> {
        if x.len() != self.exps.len() {
            return Err(ExprError::DimensionMismatch {
                expected: self.exps.len(),
                got: x.len(),
            });
        }
        Ok(self.func.apply(self.interaction(x)))
    }

    /// Evaluates the term for every row of `x`, working column by column.
    pub fn eval_columns(&self, x: &DMatrix<f64>) -> Result<DVector<f64>, ExprError> {
        if x.ncols() != self.exps.len() {
            return Err(ExprError::DimensionMismatch {
                expected: self.exps.len(),
                got: x.ncols(),
            });
        }
        let mut out = DVector::from_element(x.nrows(), 1.0);
        for (i, &k) in self.exps.iter().enumerate() {
            if k == 0 {
                continue;
            }
            for (o, &xi) in out.iter_mut().zip(x.column(i).iter()) {
                *o *= int_pow(xi, k);
            }
        }
        out.apply(|v| *v = self.func.apply(*v));
        Ok(out)
    }
}

/// Evaluates a single term on a single sample.
pub fn eval_term(term: &Term, x: &[f64]) -> Result<f64, ExprError> {
    term.eval(x)
}

/// Ordered list of terms; the affine weights live in [`TirModel`].
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ItExpr {
    pub terms: Vec<Term>,
}

impl ItExpr {
    pub fn new(terms: Vec<Term>) -> Self {
        ItExpr { terms }
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }
}

/// Structure of a model without its coefficients: what the genetic operators
/// manipulate.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TirShape {
    pub g: InvFn,
    pub p: ItExpr,
    pub q: ItExpr,
}

impl TirShape {
    pub fn new(g: InvFn, p: ItExpr, q: ItExpr) -> Result<Self, ExprError> {
        if p.is_empty() {
            return Err(ExprError::EmptyNumerator);
        }
        let shape = TirShape { g, p, q };
        let d = shape.dims();
        for t in shape.terms() {
            if t.dims() != d {
                return Err(ExprError::DimensionMismatch {
                    expected: d,
                    got: t.dims(),
                });
            }
            if t.n_vars() == 0 {
                return Err(ExprError::EmptyTerm);
            }
        }
        Ok(shape)
    }

    /// Number of input variables, taken from the first numerator term.
    pub fn dims(&self) -> usize {
        self.p.terms.first().map(Term::dims).unwrap_or(0)
    }

    pub fn terms(&self) -> impl Iterator<Item = &Term> {
        self.p.terms.iter().chain(self.q.terms.iter())
    }

    pub fn node_count(&self) -> usize {
        node_count_parts(&self.p, &self.q)
    }

    /// Attaches coefficients. Lengths must match the term counts.
    pub fn with_coefficients(
        self,
        w0: f64,
        wp: Vec<f64>,
        wq: Vec<f64>,
    ) -> Result<TirModel, ExprError> {
        TirModel::new(self, w0, wp, wq)
    }

    /// Attaches all-zero coefficients.
    pub fn unfitted(self) -> TirModel {
        let (mp, mq) = (self.p.len(), self.q.len());
        TirModel {
            shape: self,
            w0: 0.0,
            wp: vec![0.0; mp],
            wq: vec![0.0; mq],
        }
    }
}

fn term_nodes(t: &Term) -> usize {
    let nonzero = t.n_vars();
    let non_unit = t.exps.iter().filter(|&&k| k != 0 && k.abs() != 1).count();
    // function + variables + power nodes + coefficient
    1 + nonzero + non_unit + 1
}

fn node_count_parts(p: &ItExpr, q: &ItExpr) -> usize {
    let terms: usize = p.terms.iter().chain(&q.terms).map(term_nodes).sum();
    // root g + intercept of p + (divide, add, constant 1) when q is present
    1 + terms + 1 + if q.is_empty() { 0 } else { 3 }
}

/// A fitted TIR regression model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TirModel {
    pub shape: TirShape,
    pub w0: f64,
    pub wp: Vec<f64>,
    pub wq: Vec<f64>,
}

impl TirModel {
    pub fn new(shape: TirShape, w0: f64, wp: Vec<f64>, wq: Vec<f64>) -> Result<Self, ExprError> {
        if shape.p.is_empty() {
            return Err(ExprError::EmptyNumerator);
        }
        if wp.len() != shape.p.len() {
            return Err(ExprError::CoefficientMismatch {
                expected: shape.p.len(),
                got: wp.len(),
            });
        }
        if wq.len() != shape.q.len() {
            return Err(ExprError::CoefficientMismatch {
                expected: shape.q.len(),
                got: wq.len(),
            });
        }
        Ok(TirModel { shape, w0, wp, wq })
    }

    pub fn node_count(&self) -> usize {
        self.shape.node_count()
    }

    pub fn dims(&self) -> usize {
        self.shape.dims()
    }

    /// Row-wise prediction. Rows where any piece is undefined come out NaN
    /// (or ±inf when the division blows up).
    pub fn predict(&self, x: &DMatrix<f64>) -> Result<DVector<f64>, ExprError> {
        let p_cols = self
            .shape
            .p
            .terms
            .iter()
            .map(|t| t.eval_columns(x))
            .collect::<Result<Vec<_>, _>>()?;
        let q_cols = self
            .shape
            .q
            .terms
            .iter()
            .map(|t| t.eval_columns(x))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(self.predict_from_columns(&p_cols, &q_cols, x.nrows()))
    }

    /// Prediction from pre-evaluated term columns (same order as the terms).
    pub(crate) fn predict_from_columns(
        &self,
        p_cols: &[DVector<f64>],
        q_cols: &[DVector<f64>],
        nrows: usize,
    ) -> DVector<f64> {
        DVector::from_iterator(nrows, (0..nrows).map(|r| self.predict_row(p_cols, q_cols, r)))
    }

    /// Prediction on a subset of rows of pre-evaluated columns.
    pub(crate) fn predict_rows(
        &self,
        p_cols: &[DVector<f64>],
        q_cols: &[DVector<f64>],
        rows: &[usize],
    ) -> DVector<f64> {
        DVector::from_iterator(
            rows.len(),
            rows.iter().map(|&r| self.predict_row(p_cols, q_cols, r)),
        )
    }

    fn predict_row(&self, p_cols: &[DVector<f64>], q_cols: &[DVector<f64>], r: usize) -> f64 {
        let mut num = self.w0;
        for (w, c) in self.wp.iter().zip(p_cols) {
            num += w * c[r];
        }
        let mut den = 1.0;
        for (w, c) in self.wq.iter().zip(q_cols) {
            den += w * c[r];
        }
        self.shape.g.apply(num / den)
    }
}

/// Convenience wrapper over [`TirModel::predict`].
pub fn predict(model: &TirModel, x: &DMatrix<f64>) -> Result<DVector<f64>, ExprError> {
    model.predict(x)
}

/// Node count used both as the size penalty and as the second objective.
///
/// `1` for the root, per term `1` (function) `+ 1` per variable `+ 1` per
/// exponent with `|k| != 1` `+ 1` (coefficient), `1` for the numerator
/// intercept, and `3` more (divide, add, constant one) when the denominator
/// has terms.
pub fn node_count(model: &TirModel) -> usize {
    model.node_count()
}

fn fmt_interaction(t: &Term, f: &mut fmt::Formatter<'_>) -> fmt::Result {
    let mut first = true;
    for (i, &k) in t.exps.iter().enumerate() {
        if k == 0 {
            continue;
        }
        if !first {
            f.write_str("*")?;
        }
        first = false;
        if k == 1 {
            write!(f, "x{i}")?;
        } else {
            write!(f, "x{i}^{k}")?;
        }
    }
    Ok(())
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}(", self.func.name())?;
        fmt_interaction(self, f)?;
        f.write_str(")")
    }
}

fn fmt_affine(
    f: &mut fmt::Formatter<'_>,
    intercept: Option<f64>,
    weights: &[f64],
    terms: &[Term],
) -> fmt::Result {
    match intercept {
        Some(w0) => write!(f, "{w0:?}")?,
        None => f.write_str("1")?,
    }
    for (w, t) in weights.iter().zip(terms) {
        write!(f, " + {w:?}*{t}")?;
    }
    Ok(())
}

/// Canonical infix form with every coefficient at full precision.
impl fmt::Display for TirModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}(", self.shape.g.name())?;
        if self.shape.q.is_empty() {
            fmt_affine(f, Some(self.w0), &self.wp, &self.shape.p.terms)?;
        } else {
            f.write_str("(")?;
            fmt_affine(f, Some(self.w0), &self.wp, &self.shape.p.terms)?;
            f.write_str(") / (")?;
            fmt_affine(f, None, &self.wq, &self.shape.q.terms)?;
            f.write_str(")")?;
        }
        f.write_str(")")
    }
}

impl fmt::Display for TirShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let join = |terms: &[Term]| {
            terms
                .iter()
                .map(Term::to_string)
                .collect::<Vec<_>>()
                .join(" + ")
        };
        write!(
            f,
            "{}[{}] / [{}]",
            self.g.name(),
            join(&self.p.terms),
            join(&self.q.terms)
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn term(func: TransFn, exps: &[i32]) -> Term {
        Term::new(func, exps.to_vec()).unwrap()
    }

    fn model(g: InvFn, p: Vec<Term>, q: Vec<Term>, w0: f64, wp: &[f64], wq: &[f64]) -> TirModel {
        TirShape::new(g, ItExpr::new(p), ItExpr::new(q))
            .unwrap()
            .with_coefficients(w0, wp.to_vec(), wq.to_vec())
            .unwrap()
    }

    #[test]
    fn eval_term_examples() {
        assert_eq!(eval_term(&term(TransFn::Id, &[1, 2]), &[2.0, 3.0]).unwrap(), 18.0);
        assert_eq!(eval_term(&term(TransFn::Log, &[1, 0]), &[1.0, 5.0]).unwrap(), 0.0);
        assert!(!eval_term(&term(TransFn::Sqrt, &[1]), &[-4.0]).unwrap().is_finite());
    }

    #[test]
    fn eval_term_length_mismatch() {
        let err = eval_term(&term(TransFn::Id, &[1, 2]), &[2.0]).unwrap_err();
        assert_eq!(err, ExprError::DimensionMismatch { expected: 2, got: 1 });
    }

    #[test]
    fn int_pow_edge_cases() {
        assert_eq!(int_pow(0.0, 0), 1.0);
        assert!(int_pow(0.0, -2).is_nan());
        assert_eq!(int_pow(2.0, -3), 0.125);
        assert_eq!(int_pow(-3.0, 3), -27.0);
        assert_eq!(int_pow(1.5, 5), 1.5 * 1.5 * 1.5 * 1.5 * 1.5);
    }

    #[test]
    fn predict_examples() {
        let x = DMatrix::from_row_slice(1, 1, &[3.0]);
        let m = model(InvFn::Id, vec![term(TransFn::Id, &[1])], vec![], 0.0, &[2.0], &[]);
        assert_eq!(m.predict(&x).unwrap()[0], 6.0);

        let x = DMatrix::from_row_slice(1, 1, &[2.0]);
        let m = model(InvFn::Exp, vec![term(TransFn::Id, &[1])], vec![], 0.0, &[1.0], &[]);
        assert_eq!(m.predict(&x).unwrap()[0], 2f64.exp());

        let x = DMatrix::from_row_slice(1, 2, &[4.0, 1.0]);
        let m = model(
            InvFn::Id,
            vec![term(TransFn::Id, &[1, 0])],
            vec![term(TransFn::Id, &[0, 1])],
            0.0,
            &[1.0],
            &[1.0],
        );
        assert_eq!(m.predict(&x).unwrap()[0], 2.0);
    }

    #[test]
    fn predict_column_mismatch() {
        let m = model(InvFn::Id, vec![term(TransFn::Id, &[1, 1])], vec![], 0.0, &[1.0], &[]);
        assert!(m.predict(&DMatrix::zeros(3, 3)).is_err());
    }

    #[test]
    fn predict_propagates_sentinel() {
        let m = model(InvFn::Id, vec![term(TransFn::Log, &[1])], vec![], 0.0, &[1.0], &[]);
        let out = m.predict(&DMatrix::from_row_slice(2, 1, &[-1.0, 1.0])).unwrap();
        assert!(out[0].is_nan());
        assert_eq!(out[1], 0.0);
    }

    #[test]
    fn node_count_examples() {
        let base = model(InvFn::Id, vec![term(TransFn::Id, &[1])], vec![], 0.0, &[1.0], &[]);
        assert_eq!(node_count(&base), 5);

        let wider = model(InvFn::Id, vec![term(TransFn::Id, &[1, 1])], vec![], 0.0, &[1.0], &[]);
        let narrow = model(InvFn::Id, vec![term(TransFn::Id, &[1, 0])], vec![], 0.0, &[1.0], &[]);
        assert_eq!(node_count(&wider), node_count(&narrow) + 1);

        let with_q = model(
            InvFn::Id,
            vec![term(TransFn::Id, &[1])],
            vec![term(TransFn::Id, &[1])],
            0.0,
            &[1.0],
            &[1.0],
        );
        assert_eq!(node_count(&with_q), 5 + 6);

        let squared = model(InvFn::Id, vec![term(TransFn::Id, &[2])], vec![], 0.0, &[1.0], &[]);
        assert_eq!(node_count(&squared), 6);
    }

    #[test]
    fn shape_validation() {
        assert_eq!(
            TirShape::new(InvFn::Id, ItExpr::default(), ItExpr::default()).unwrap_err(),
            ExprError::EmptyNumerator
        );
        assert_eq!(Term::new(TransFn::Id, vec![0, 0]).unwrap_err(), ExprError::EmptyTerm);
        let shape = TirShape::new(
            InvFn::Id,
            ItExpr::new(vec![term(TransFn::Id, &[1])]),
            ItExpr::default(),
        )
        .unwrap();
        assert!(matches!(
            shape.with_coefficients(0.0, vec![], vec![]),
            Err(ExprError::CoefficientMismatch { .. })
        ));
    }

    #[test]
    fn display_is_canonical() {
        let m = model(
            InvFn::Log,
            vec![term(TransFn::Tanh, &[2, 1])],
            vec![term(TransFn::Id, &[0, -1])],
            0.5,
            &[2.0],
            &[-0.25],
        );
        assert_eq!(
            m.to_string(),
            "log((0.5 + 2.0*tanh(x0^2*x1)) / (1 + -0.25*id(x1^-1)))"
        );
        let lin = model(InvFn::Id, vec![term(TransFn::Id, &[1])], vec![], 0.0, &[2.0], &[]);
        assert_eq!(lin.to_string(), "id(0.0 + 2.0*id(x0))");
    }

    #[test]
    fn serde_round_trip() {
        let m = model(
            InvFn::Sqrt,
            vec![term(TransFn::Cos, &[3, -2])],
            vec![term(TransFn::Exp, &[0, 1])],
            0.1,
            &[1.0 / 3.0],
            &[7.25],
        );
        let json = serde_json::to_string(&m).unwrap();
        let back: TirModel = serde_json::from_str(&json).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn inverse_round_trip() {
        for g in InvFn::ALL {
            for &v in &[-1.3, -0.2, 0.0, 0.4, 1.1, 2.5] {
                let y = g.apply(v);
                if !y.is_finite() || !g.inverse_defined(y) {
                    continue;
                }
                let back = g.apply(g.inverse(y));
                assert!((back - y).abs() <= 1e-10 * y.abs().max(1.0), "{g:?} {v}");
            }
        }
    }
}
