//! Regression error measures.
//!
//! Non-finite predictions never raise: R² drops to `-inf` and the error
//! measures go to `+inf`, so broken models lose every comparison.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MetricError {
    #[error("length mismatch: {truth} targets vs {pred} predictions")]
    LengthMismatch { truth: usize, pred: usize },
    #[error("cannot score an empty vector")]
    Empty,
}

fn check(y_true: &[f64], y_pred: &[f64]) -> Result<(), MetricError> {
    if y_true.len() != y_pred.len() {
        return Err(MetricError::LengthMismatch {
            truth: y_true.len(),
            pred: y_pred.len(),
        });
    }
    if y_true.is_empty() {
        return Err(MetricError::Empty);
    }
    Ok(())
}

/// Coefficient of determination `1 - SS_res / SS_tot`.
///
/// A constant target scores 0 when matched exactly and `-inf` otherwise.
pub fn r2(y_true: &[f64], y_pred: &[f64]) -> Result<f64, MetricError> {
    check(y_true, y_pred)?;
    if y_pred.iter().any(|v| !v.is_finite()) {
        return Ok(f64::NEG_INFINITY);
    }
    let n = y_true.len() as f64;
    let mean = y_true.iter().sum::<f64>() / n;
    let ss_tot: f64 = y_true.iter().map(|y| (y - mean) * (y - mean)).sum();
    let ss_res: f64 = y_true
        .iter()
        .zip(y_pred)
        .map(|(y, p)| (y - p) * (y - p))
        .sum();
    if !ss_res.is_finite() {
        return Ok(f64::NEG_INFINITY);
    }
    if ss_tot == 0.0 {
        return Ok(if ss_res == 0.0 { 0.0 } else { f64::NEG_INFINITY });
    }
    Ok(1.0 - ss_res / ss_tot)
}

pub fn mse(y_true: &[f64], y_pred: &[f64]) -> Result<f64, MetricError> {
    check(y_true, y_pred)?;
    if y_pred.iter().chain(y_true).any(|v| !v.is_finite()) {
        return Ok(f64::INFINITY);
    }
    let s: f64 = y_true
        .iter()
        .zip(y_pred)
        .map(|(y, p)| (y - p) * (y - p))
        .sum();
    Ok(s / y_true.len() as f64)
}

pub fn mae(y_true: &[f64], y_pred: &[f64]) -> Result<f64, MetricError> {
    check(y_true, y_pred)?;
    if y_pred.iter().chain(y_true).any(|v| !v.is_finite()) {
        return Ok(f64::INFINITY);
    }
    let s: f64 = y_true.iter().zip(y_pred).map(|(y, p)| (y - p).abs()).sum();
    Ok(s / y_true.len() as f64)
}
