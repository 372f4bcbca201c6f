//! CSV ingestion.

use std::path::Path;

use log::warn;
use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("no column named {0:?}")]
    MissingTarget(String),
    #[error("row {row}, column {column:?}: cannot parse {value:?} as a number")]
    Unparseable {
        row: usize,
        column: String,
        value: String,
    },
    #[error("dataset has no usable rows")]
    Empty,
    #[error("dataset needs at least one feature column besides the target")]
    NoFeatures,
}

/// Which column holds the response.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TargetColumn {
    Named(String),
    Last,
}

impl Default for TargetColumn {
    fn default() -> Self {
        TargetColumn::Named("target".into())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub feature_names: Vec<String>,
}

impl Dataset {
    pub fn new(name: impl Into<String>, x: DMatrix<f64>, y: DVector<f64>) -> Self {
        let feature_names = (0..x.ncols()).map(|i| format!("x{i}")).collect();
        Dataset {
            name: name.into(),
            x,
            y,
            feature_names,
        }
    }

    pub fn n_samples(&self) -> usize {
        self.x.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.x.ncols()
    }

    /// Copy of the given rows, in the given order.
    pub fn subset(&self, rows: &[usize]) -> Dataset {
        Dataset {
            name: self.name.clone(),
            x: self.x.select_rows(rows),
            y: self.y.select_rows(rows),
            feature_names: self.feature_names.clone(),
        }
    }
}

/// Parses a numeric cell. Blank cells count as missing.
fn parse_cell(raw: &str) -> Option<f64> {
    let s = raw.trim();
    if s.is_empty() {
        return Some(f64::NAN);
    }
    s.parse::<f64>().ok()
}

/// Reads a headed CSV of numbers. Rows containing a non-finite or blank cell
/// are dropped with a warning; text that is not a number is an error. The
/// dataset is named after the file stem.
pub fn load_csv(path: impl AsRef<Path>, target: &TargetColumn) -> Result<Dataset, DataError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let headers: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    let t = match target {
        TargetColumn::Named(name) => headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| DataError::MissingTarget(name.clone()))?,
        TargetColumn::Last => headers.len().checked_sub(1).ok_or(DataError::NoFeatures)?,
    };
    if headers.len() < 2 {
        return Err(DataError::NoFeatures);
    }
    let feature_names: Vec<String> = headers
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != t)
        .map(|(_, h)| h.clone())
        .collect();

    let mut xs: Vec<f64> = Vec::new();
    let mut ys: Vec<f64> = Vec::new();
    let mut dropped = 0usize;
    for (r, rec) in reader.records().enumerate() {
        let rec = rec?;
        let mut row = Vec::with_capacity(headers.len());
        for (c, raw) in rec.iter().enumerate() {
            let v = parse_cell(raw).ok_or_else(|| DataError::Unparseable {
                row: r + 1,
                column: headers[c].clone(),
                value: raw.to_string(),
            })?;
            row.push(v);
        }
        if row.iter().any(|v| !v.is_finite()) {
            dropped += 1;
            continue;
        }
        ys.push(row[t]);
        xs.extend(row.iter().enumerate().filter(|&(i, _)| i != t).map(|(_, v)| *v));
    }
    if dropped > 0 {
        warn!("{}: dropped {dropped} rows with missing or non-finite values", path.display());
    }
    if ys.is_empty() {
        return Err(DataError::Empty);
    }
    let d = feature_names.len();
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(Dataset {
        name,
        x: DMatrix::from_row_slice(ys.len(), d, &xs),
        y: DVector::from_vec(ys),
        feature_names,
    })
}
