use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::FeatureMatrix;
use crate::error::{Error, Result};

/// Diagonal jitter added to the normal equations.
pub const RIDGE_JITTER: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub weights: Vec<f64>,
    pub intercept: f64,
}

/// Solves `(A^T A + jitter I) b = A^T y` by Cholesky, falling back to SVD
/// when the factorization fails numerically.
pub(crate) fn solve_normal(a: &DMatrix<f64>, w: Option<&DVector<f64>>, y: &DVector<f64>) -> Result<DVector<f64>> {
    let (ata, aty) = match w {
        Some(w) => {
            let aw = DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)] * w[i]);
            (aw.transpose() * a, aw.transpose() * y)
        }
        None => (a.transpose() * a, a.transpose() * y),
    };
    let mut m = ata;
    for i in 0..m.nrows() {
        m[(i, i)] += RIDGE_JITTER;
    }
    if let Some(ch) = m.clone().cholesky() {
        let b = ch.solve(&aty);
        if b.iter().all(|v| v.is_finite()) {
            return Ok(b);
        }
    }
    m.svd(true, true)
        .solve(&aty, 1e-14)
        .map_err(|e| Error::Domain(format!("normal equations unsolvable: {e}")))
}

pub(crate) fn design(x: &FeatureMatrix) -> DMatrix<f64> {
    DMatrix::from_fn(x.rows, x.cols + 1, |i, j| if j < x.cols { x.get(i, j) } else { 1.0 })
}

/// Ordinary least squares with an intercept.
pub fn fit_linear(x: &FeatureMatrix, y: &[f64]) -> Result<LinearFit> {
    if x.rows == 0 {
        return Err(Error::Empty("linear regression needs at least one row".into()));
    }
    if y.len() != x.rows {
        return Err(Error::Shape(format!("{} rows but {} targets", x.rows, y.len())));
    }
    let b = solve_normal(&design(x), None, &DVector::from_column_slice(y))?;
    Ok(LinearFit {
        weights: b.as_slice()[..x.cols].to_vec(),
        intercept: b[x.cols],
    })
}

impl LinearFit {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        self.intercept + self.weights.iter().zip(row).map(|(w, v)| w * v).sum::<f64>()
    }

    pub fn predict(&self, x: &FeatureMatrix) -> Vec<f64> {
        (0..x.rows).map(|i| self.predict_row(x.row(i))).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fm(rows: &[&[f64]]) -> FeatureMatrix {
        FeatureMatrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn recovers_line() {
        let x = fm(&[&[0.0], &[1.0], &[2.0], &[3.5]]);
        let y: Vec<f64> = [0.0, 1.0, 2.0, 3.5].iter().map(|v| 2.0 * v + 1.0).collect();
        let f = fit_linear(&x, &y).unwrap();
        assert!((f.weights[0] - 2.0).abs() < 1e-8 && (f.intercept - 1.0).abs() < 1e-8, "{f:?}");
    }

    #[test]
    fn constant_target() {
        let x = fm(&[&[0.3, 1.0], &[1.0, -2.0], &[2.0, 0.5], &[-1.0, 4.0]]);
        let f = fit_linear(&x, &[0.7; 4]).unwrap();
        assert!((f.intercept - 0.7).abs() < 1e-8);
        assert!(f.weights.iter().all(|w| w.abs() < 1e-8));
    }

    #[test]
    fn duplicated_columns() {
        let x = fm(&[&[0.0, 0.0, 1.0], &[1.0, 1.0, 0.0], &[2.0, 2.0, 5.0], &[3.0, 3.0, 2.0]]);
        let y = [3.0, 2.0, 13.0, 8.0];
        let f = fit_linear(&x, &y).unwrap();
        assert!(f.weights.iter().all(|w| w.is_finite()));
        for (p, t) in f.predict(&x).iter().zip(&y) {
            assert!((p - t).abs() < 1e-6, "{p} vs {t}");
        }
    }

    #[test]
    fn single_row_and_empty() {
        assert!(fit_linear(&fm(&[&[2.0]]), &[3.0]).unwrap().predict_row(&[2.0]).is_finite());
        assert!(fit_linear(&FeatureMatrix { rows: 0, cols: 1, data: vec![] }, &[]).is_err());
    }
}
