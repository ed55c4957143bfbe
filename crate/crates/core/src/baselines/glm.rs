use log::warn;
use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::linear::{design, solve_normal};
use super::FeatureMatrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GlmOptions {
    pub max_iter: usize,
    /// Stop when `|D_new - D_old| / (|D_new| + 0.1)` falls below this.
    pub tol: f64,
    pub max_halvings: usize,
}

impl Default for GlmOptions {
    fn default() -> Self {
        Self {
            max_iter: 100,
            tol: 1e-8,
            max_halvings: 40,
        }
    }
}

/// Gamma regression with the inverse link `1 / mu = X b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlmFit {
    /// Feature coefficients followed by the intercept.
    pub beta: Vec<f64>,
    pub dispersion: f64,
    pub deviance: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Deviance after every accepted iteration, starting with the initial fit.
    pub deviance_trace: Vec<f64>,
}

/// Gamma deviance `2 sum(-ln(y/mu) + (y - mu)/mu)`; infinite when any mean
/// is non-positive.
pub fn gamma_deviance(y: &[f64], mu: &[f64]) -> f64 {
    if mu.iter().any(|&m| !(m > 0.0 && m.is_finite())) {
        return f64::INFINITY;
    }
    2.0 * y.iter().zip(mu).map(|(&y, &m)| -(y / m).ln() + (y - m) / m).sum::<f64>()
}

fn linear_predictor(x: &nalgebra::DMatrix<f64>, beta: &DVector<f64>) -> Vec<f64> {
    (x * beta).iter().copied().collect()
}

/// Iteratively reweighted least squares. Steps that would raise the
/// deviance or leave the valid region are halved; a run that cannot make
/// progress stops with `converged = false` rather than hiding the failure.
pub fn fit_gamma_glm(x: &FeatureMatrix, y: &[f64], opts: &GlmOptions) -> Result<GlmFit> {
    if x.rows == 0 {
        return Err(Error::Empty("gamma regression needs at least one row".into()));
    }
    if y.len() != x.rows {
        return Err(Error::Shape(format!("{} rows but {} targets", x.rows, y.len())));
    }
    if let Some(v) = y.iter().find(|&&v| !(v > 0.0 && v.is_finite())) {
        return Err(Error::Domain(format!("gamma regression needs strictly positive targets, got {v}")));
    }
    let a = design(x);
    let p = x.cols + 1;
    let ybar = y.iter().sum::<f64>() / y.len() as f64;
    let mut beta = DVector::zeros(p);
    beta[x.cols] = 1.0 / ybar;
    let mut eta = linear_predictor(&a, &beta);
    let mut dev = gamma_deviance(y, &eta.iter().map(|e| 1.0 / e).collect::<Vec<_>>());
    let mut trace = vec![dev];
    let mut converged = false;
    let mut iterations = 0;

    for it in 0..opts.max_iter {
        iterations = it + 1;
        let mu: Vec<f64> = eta.iter().map(|e| 1.0 / e).collect();
        // inverse link: d eta / d mu = -1 / mu^2, Var(mu) = mu^2, weight = mu^2
        let w = DVector::from_iterator(mu.len(), mu.iter().map(|m| m * m));
        let z = DVector::from_iterator(mu.len(), eta.iter().zip(&mu).zip(y).map(|((e, m), y)| e - (y - m) / (m * m)));
        let target = solve_normal(&a, Some(&w), &z)?;
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..=opts.max_halvings {
            let cand = &beta + (&target - &beta) * step;
            let e = linear_predictor(&a, &cand);
            let d = gamma_deviance(y, &e.iter().map(|v| 1.0 / v).collect::<Vec<_>>());
            if e.iter().all(|&v| v > 0.0) && d.is_finite() && d <= dev {
                accepted = Some((cand, e, d));
                break;
            }
            step *= 0.5;
        }
        let Some((b, e, d)) = accepted else {
            warn!("gamma IRLS could not reduce the deviance at iteration {iterations}");
            break;
        };
        let change = (dev - d).abs() / (d.abs() + 0.1);
        beta = b;
        eta = e;
        dev = d;
        trace.push(d);
        if change < opts.tol {
            converged = true;
            break;
        }
    }
    if !converged {
        warn!("gamma IRLS did not converge after {iterations} iterations");
    }
    let n = y.len();
    let dispersion = if n > p {
        eta.iter().zip(y).map(|(e, y)| ((y - 1.0 / e) * e).powi(2)).sum::<f64>() / (n - p) as f64
    } else {
        f64::NAN
    };
    Ok(GlmFit {
        beta: beta.iter().copied().collect(),
        dispersion,
        deviance: dev,
        iterations,
        converged,
        deviance_trace: trace,
    })
}

impl GlmFit {
    pub fn linear_predictor(&self, row: &[f64]) -> f64 {
        let k = self.beta.len() - 1;
        self.beta[k] + self.beta[..k].iter().zip(row).map(|(b, v)| b * v).sum::<f64>()
    }

    /// Predicted mean `1 / eta`. Rows whose linear predictor is not positive
    /// lie outside the model's support and map to `+inf` or a negative value;
    /// callers clamp to the label range.
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        1.0 / self.linear_predictor(row)
    }

    pub fn predict(&self, x: &FeatureMatrix) -> Vec<f64> {
        (0..x.rows).map(|i| self.predict_row(x.row(i))).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn intercept_only_is_inverse_mean() {
        let x = FeatureMatrix { rows: 4, cols: 0, data: vec![] };
        let y = [0.5, 1.0, 2.0, 0.25];
        let f = fit_gamma_glm(&x, &y, &GlmOptions::default()).unwrap();
        let ybar = 3.75 / 4.0;
        assert!((f.beta[0] - 1.0 / ybar).abs() < 1e-7, "{:?}", f.beta);
        assert!(f.converged);
    }

    #[test]
    fn rejects_non_positive() {
        let x = FeatureMatrix { rows: 2, cols: 0, data: vec![] };
        assert!(matches!(fit_gamma_glm(&x, &[1.0, 0.0], &GlmOptions::default()), Err(Error::Domain(_))));
        assert!(fit_gamma_glm(&x, &[1.0, -2.0], &GlmOptions::default()).is_err());
    }

    #[test]
    fn deviance_non_increasing_and_exact_fit() {
        let rows: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64 / 10.0]).collect();
        let x = FeatureMatrix::from_rows(&rows).unwrap();
        let y: Vec<f64> = rows.iter().map(|r| 1.0 / (0.5 + 2.0 * r[0])).collect();
        let f = fit_gamma_glm(&x, &y, &GlmOptions::default()).unwrap();
        assert!(f.deviance_trace.windows(2).all(|w| w[1] <= w[0]));
        assert!((f.beta[0] - 2.0).abs() < 1e-6 && (f.beta[1] - 0.5).abs() < 1e-6, "{:?}", f.beta);
    }

    #[test]
    fn deviance_of_perfect_fit_is_zero() {
        assert_eq!(gamma_deviance(&[1.0, 2.0], &[1.0, 2.0]), 0.0);
        assert_eq!(gamma_deviance(&[1.0], &[-1.0]), f64::INFINITY);
    }
}
