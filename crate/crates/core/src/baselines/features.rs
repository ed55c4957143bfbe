use crate::error::{Error, Result};
use crate::preprocess::NormRun;

/// Row-major `n x p` design matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl FeatureMatrix {
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if let Some(r) = rows.iter().find(|r| r.len() != cols) {
            return Err(Error::Shape(format!("feature row of length {}, expected {cols}", r.len())));
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        })
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    /// The rows listed in `idx`, in that order.
    pub fn select(&self, idx: &[usize]) -> Self {
        Self {
            rows: idx.len(),
            cols: self.cols,
            data: idx.iter().flat_map(|&i| self.row(i).iter().copied()).collect(),
        }
    }
}

/// Per-metric time-mean followed by per-metric population time-std.
/// A single-second run has all stds zero.
pub fn featurize(run: &NormRun) -> Result<Vec<f64>> {
    let t = run.matrix.cols();
    if t == 0 {
        return Err(Error::Empty(format!("run of app {} has no valid seconds", run.app_id)));
    }
    let s = run.matrix.rows();
    let mut out = vec![0.0; 2 * s];
    for i in 0..s {
        let row = run.matrix.row(i);
        let mean = row.iter().sum::<f64>() / t as f64;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / t as f64;
        out[i] = mean;
        out[s + i] = var.sqrt();
    }
    Ok(out)
}

pub fn featurize_all(runs: &[NormRun]) -> Result<(FeatureMatrix, Vec<f64>)> {
    let rows = runs.iter().map(featurize).collect::<Result<Vec<_>>>()?;
    Ok((FeatureMatrix::from_rows(&rows)?, runs.iter().map(|r| r.label).collect()))
}
