//! Datasets, empirical measure views, and the extended regularization parameter.

use std::fmt;
use std::path::Path;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Regularization parameter on `[0, ∞]`.
///
/// Infinity is a distinguished value, not a large float: the infinite-penalty
/// fit is `argmin π` and is handled analytically by the solver.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Lambda {
    Finite(f64),
    Infinite,
}

impl Lambda {
    pub fn finite(self) -> Result<f64> {
        match self {
            Lambda::Finite(v) => Ok(v),
            Lambda::Infinite => Err(Error::InfiniteLambda),
        }
    }

    pub fn is_infinite(self) -> bool {
        matches!(self, Lambda::Infinite)
    }
}

impl From<f64> for Lambda {
    fn from(v: f64) -> Self {
        Lambda::Finite(v)
    }
}

impl fmt::Display for Lambda {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Lambda::Finite(v) => write!(f, "{v}"),
            Lambda::Infinite => write!(f, "inf"),
        }
    }
}

/// A training set of `n` points in `R^d`.
///
/// For GLM losses a point is a row `(x_1, ..., x_{d-1}, y)` with the label in
/// the last column. The dataset is immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    points: Vec<DVector<f64>>,
    dim: usize,
}

impl Dataset {
    pub fn new(points: Vec<DVector<f64>>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::Dataset(format!(
                "need at least 2 points, got {}",
                points.len()
            )));
        }
        let dim = points[0].len();
        if dim == 0 {
            return Err(Error::Dataset("points must have dimension >= 1".into()));
        }
        for (i, p) in points.iter().enumerate() {
            if p.len() != dim {
                return Err(Error::Dataset(format!(
                    "point {i} has dimension {}, expected {dim}",
                    p.len()
                )));
            }
        }
        Ok(Self { points, dim })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        Self::new(rows.iter().map(|r| DVector::from_vec(r.clone())).collect())
    }

    /// One-dimensional dataset from scalars.
    pub fn from_scalars(values: &[f64]) -> Result<Self> {
        Self::new(values.iter().map(|&v| DVector::from_vec(vec![v])).collect())
    }

    pub fn n(&self) -> usize {
        self.points.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn point(&self, i: usize) -> &DVector<f64> {
        &self.points[i]
    }

    pub fn points(&self) -> &[DVector<f64>] {
        &self.points
    }

    /// Read a numeric CSV, one row per point. A header line is detected by the
    /// presence of non-numeric fields and skipped.
    pub fn from_csv(path: &Path) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .from_path(path)?;
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for (line, record) in reader.records().enumerate() {
            let record = record?;
            if record.iter().all(|f| f.is_empty()) {
                continue;
            }
            let parsed: std::result::Result<Vec<f64>, _> =
                record.iter().map(|f| f.parse::<f64>()).collect();
            match parsed {
                Ok(row) => rows.push(row),
                Err(_) if line == 0 => continue, // header
                Err(e) => {
                    return Err(Error::Dataset(format!(
                        "line {}: non-numeric field ({e})",
                        line + 1
                    )))
                }
            }
        }
        Self::from_rows(&rows)
    }

    /// Write the dataset as a headerless numeric CSV.
    pub fn to_csv(&self, path: &Path) -> Result<()> {
        let mut writer = csv::Writer::from_path(path)?;
        for p in &self.points {
            let row: Vec<String> = p.iter().map(|v| format!("{v}")).collect();
            writer.write_record(&row)?;
        }
        writer.flush()?;
        Ok(())
    }
}

/// A view of the empirical measure: weight `1/n` on every point not excluded,
/// weight `0` on exclusions. The leave-one-out view is *not* renormalized to
/// `1/(n-1)`; the bound constants depend on this convention.
#[derive(Debug, Clone, PartialEq)]
pub struct Weights {
    n: usize,
    excluded: Vec<usize>,
}

impl Weights {
    pub fn full(n: usize) -> Self {
        Self {
            n,
            excluded: Vec::new(),
        }
    }

    pub fn leave_out(n: usize, i: usize) -> Self {
        debug_assert!(i < n);
        Self {
            n,
            excluded: vec![i],
        }
    }

    pub fn leave_set(n: usize, set: &[usize]) -> Self {
        let mut excluded = set.to_vec();
        excluded.sort_unstable();
        excluded.dedup();
        debug_assert!(excluded.iter().all(|&i| i < n));
        Self { n, excluded }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn excluded(&self) -> &[usize] {
        &self.excluded
    }

    pub fn weight(&self, i: usize) -> f64 {
        if self.excluded.binary_search(&i).is_ok() {
            0.0
        } else {
            1.0 / self.n as f64
        }
    }

    /// Indices with nonzero weight, in order, with their weight.
    pub fn iter_active(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        let w = 1.0 / self.n as f64;
        (0..self.n).filter_map(move |i| {
            if self.excluded.binary_search(&i).is_ok() {
                None
            } else {
                Some((i, w))
            }
        })
    }

    /// Total mass of the view ((n - k)/n for k exclusions).
    pub fn total_mass(&self) -> f64 {
        (self.n - self.excluded.len()) as f64 / self.n as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loo_weights_are_unnormalized() {
        let w = Weights::leave_out(4, 2);
        assert_eq!(w.weight(0), 0.25);
        assert_eq!(w.weight(2), 0.0);
        assert!((w.total_mass() - 0.75).abs() < 1e-15);
        let active: Vec<usize> = w.iter_active().map(|(i, _)| i).collect();
        assert_eq!(active, vec![0, 1, 3]);
    }

    #[test]
    fn rejects_ragged_and_tiny_datasets() {
        assert!(Dataset::from_rows(&[vec![1.0]]).is_err());
        assert!(Dataset::from_rows(&[vec![1.0], vec![1.0, 2.0]]).is_err());
        assert!(Dataset::from_rows(&[vec![1.0], vec![2.0]]).is_ok());
    }

    #[test]
    fn csv_roundtrip_with_header_detection() {
        let dir = std::env::temp_dir().join("approxcv_dataset_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("points.csv");
        std::fs::write(&path, "x1,x2\n1.0,2.0\n3.5,-4.0\n").unwrap();
        let ds = Dataset::from_csv(&path).unwrap();
        assert_eq!(ds.n(), 2);
        assert_eq!(ds.dim(), 2);
        assert_eq!(ds.point(1)[1], -4.0);

        let out = dir.join("out.csv");
        ds.to_csv(&out).unwrap();
        let ds2 = Dataset::from_csv(&out).unwrap();
        assert_eq!(ds, ds2);
    }
}
