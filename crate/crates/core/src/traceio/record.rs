use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::label::{compute_label, PerfMetricKind};
use super::schema::MetricSchema;
use crate::error::{Error, Result};

/// Dense row-major matrix; for traces, one row per metric and one column per second.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{rows}x{cols} matrix needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    Static,
    MonotonicUp,
    MonotonicDown,
    Periodic,
    Random,
}

impl Scenario {
    pub const ALL: [Scenario; 5] = [
        Scenario::Static,
        Scenario::MonotonicUp,
        Scenario::MonotonicDown,
        Scenario::Periodic,
        Scenario::Random,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Scenario::Static => "static",
            Scenario::MonotonicUp => "monotonic_up",
            Scenario::MonotonicDown => "monotonic_down",
            Scenario::Periodic => "periodic",
            Scenario::Random => "random",
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AppClass {
    StaticOnly,
    Mixed,
}

impl AppClass {
    pub fn as_str(self) -> &'static str {
        match self {
            AppClass::StaticOnly => "static_only",
            AppClass::Mixed => "mixed",
        }
    }
}

/// One execution trace of an application VM with its degradation label.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub app_id: String,
    pub run_id: String,
    pub scenario: Scenario,
    /// `width x T`: primary metrics then neighbour-averaged metrics.
    pub matrix: Matrix,
    pub pm_kind: PerfMetricKind,
    pub pm_ideal: f64,
    pub pm_actual: f64,
    pub label: f64,
}

impl RunRecord {
    pub fn duration(&self) -> usize {
        self.matrix.cols()
    }

    /// Checks the record against the schema and its own label.
    pub fn check(&self, schema: &MetricSchema) -> Result<()> {
        if self.matrix.rows() != schema.width() {
            return Err(Error::Shape(format!(
                "run {}/{}: expected {} rows, found {}",
                self.app_id,
                self.run_id,
                schema.width(),
                self.matrix.rows()
            )));
        }
        if self.matrix.cols() == 0 {
            return Err(Error::Shape(format!(
                "run {}/{}: empty trace",
                self.app_id, self.run_id
            )));
        }
        if let Some(i) = self.matrix.as_slice().iter().position(|v| !v.is_finite()) {
            return Err(Error::Consistency(format!(
                "run {}/{}: non-finite value at metric {}, second {}",
                self.app_id,
                self.run_id,
                i / self.matrix.cols(),
                i % self.matrix.cols()
            )));
        }
        if !(self.label > 0.0 && self.label <= 1.0) {
            return Err(Error::Consistency(format!(
                "run {}/{}: label {} outside (0, 1]",
                self.app_id, self.run_id, self.label
            )));
        }
        let expected = compute_label(self.pm_ideal, self.pm_actual, &self.pm_kind)?;
        if (expected - self.label).abs() > 1e-12 {
            return Err(Error::Consistency(format!(
                "run {}/{}: stored label {} but performance fields imply {}",
                self.app_id, self.run_id, self.label, expected
            )));
        }
        Ok(())
    }
}

/// All runs of a dataset plus the per-application scenario class.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceDataset {
    pub schema: MetricSchema,
    pub runs: Vec<RunRecord>,
    pub apps: BTreeMap<String, AppClass>,
}

impl TraceDataset {
    /// Builds a dataset, deriving each app's class from its runs.
    pub fn from_runs(schema: MetricSchema, runs: Vec<RunRecord>) -> Self {
        let mut apps = BTreeMap::new();
        for r in &runs {
            let e = apps.entry(r.app_id.clone()).or_insert(AppClass::StaticOnly);
            if r.scenario != Scenario::Static {
                *e = AppClass::Mixed;
            }
        }
        Self { schema, runs, apps }
    }

    pub fn is_empty(&self) -> bool {
        self.runs.is_empty()
    }

    pub fn apps_of(&self, class: AppClass) -> Vec<String> {
        self.apps
            .iter()
            .filter(|(_, &c)| c == class)
            .map(|(a, _)| a.clone())
            .collect()
    }

    pub fn runs_of<'a>(&'a self, app: &'a str) -> impl Iterator<Item = &'a RunRecord> + 'a {
        self.runs.iter().filter(move |r| r.app_id == app)
    }

    /// Non-fatal observations about the dataset (e.g. it has no runs).
    pub fn warnings(&self) -> Vec<String> {
        let mut w = Vec::new();
        if self.runs.is_empty() {
            w.push("dataset contains no runs".to_string());
        }
        for app in self.apps.keys() {
            if self.runs_of(app).next().is_none() {
                w.push(format!("app {app} has no runs"));
            }
        }
        w
    }

    /// Every invariant violation, one message each.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.schema.n_base() == 103 {
            if let Err(e) = self.schema.check_full() {
                v.push(e.to_string());
            }
        }
        for r in &self.runs {
            if let Err(e) = r.check(&self.schema) {
                v.push(e.to_string());
            }
            if !self.apps.contains_key(&r.app_id) {
                v.push(format!("run {}/{}: app not declared", r.app_id, r.run_id));
            }
        }
        for (app, class) in &self.apps {
            let mut runs = self.runs_of(app).peekable();
            if runs.peek().is_none() {
                continue;
            }
            let dynamic = runs.filter(|r| r.scenario != Scenario::Static).count();
            match class {
                AppClass::StaticOnly if dynamic > 0 => {
                    v.push(format!("app {app}: static_only but has {dynamic} dynamic runs"))
                }
                AppClass::Mixed if dynamic == 0 => {
                    v.push(format!("app {app}: mixed but has no dynamic runs"))
                }
                _ => {}
            }
        }
        v
    }
}

/// Stacks the primary VM's metrics on top of the element-wise mean of its
/// neighbours' metrics. With no neighbours the second block is zero.
///
/// Each mean is taken over the neighbour values sorted ascending, so the
/// result does not depend on the order of `neighbors` at all.
pub fn aggregate_neighbors(primary: &Matrix, neighbors: &[Matrix]) -> Result<Matrix> {
    let (n, t) = (primary.rows(), primary.cols());
    for (k, m) in neighbors.iter().enumerate() {
        if m.rows() != n || m.cols() != t {
            return Err(Error::Shape(format!(
                "neighbour {k} is {}x{}, primary is {n}x{t}",
                m.rows(),
                m.cols()
            )));
        }
    }
    let mut out = Matrix::zeros(2 * n, t);
    out.data[..n * t].copy_from_slice(primary.as_slice());
    if neighbors.is_empty() {
        return Ok(out);
    }
    let inv = 1.0 / neighbors.len() as f64;
    let mut buf = Vec::with_capacity(neighbors.len());
    for i in 0..n * t {
        buf.clear();
        buf.extend(neighbors.iter().map(|m| m.data[i]));
        buf.sort_by(f64::total_cmp);
        out.data[n * t + i] = buf.iter().sum::<f64>() * inv;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn one_neighbor_is_copied() {
        let p = Matrix::from_fn(3, 4, |r, c| (r * 4 + c) as f64);
        let nb = Matrix::from_fn(3, 4, |r, c| (r as f64) - 0.5 * c as f64);
        let out = aggregate_neighbors(&p, std::slice::from_ref(&nb)).unwrap();
        assert_eq!(out.rows(), 6);
        for r in 0..3 {
            assert_eq!(out.row(r), p.row(r));
            assert_eq!(out.row(r + 3), nb.row(r));
        }
    }

    #[test]
    fn two_neighbors_average() {
        let p = Matrix::zeros(2, 3);
        let a = Matrix::from_fn(2, 3, |_, _| 2.0);
        let b = Matrix::from_fn(2, 3, |_, _| 4.0);
        let out = aggregate_neighbors(&p, &[a, b]).unwrap();
        assert!(out.as_slice()[6..].iter().all(|&v| v == 3.0));
    }

    #[test]
    fn no_neighbors_gives_zeros() {
        let p = Matrix::from_fn(2, 3, |_, _| 7.0);
        let out = aggregate_neighbors(&p, &[]).unwrap();
        assert!(out.as_slice()[..6].iter().all(|&v| v == 7.0));
        assert!(out.as_slice()[6..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn shape_mismatch() {
        let p = Matrix::zeros(2, 3);
        assert!(matches!(
            aggregate_neighbors(&p, &[Matrix::zeros(2, 4)]),
            Err(Error::Shape(_))
        ));
        assert!(aggregate_neighbors(&p, &[Matrix::zeros(3, 3)]).is_err());
    }

    proptest! {
        #[test]
        fn permutation_invariant(vals in prop::collection::vec(-1e3f64..1e3, 5 * 6), rot in 0usize..5) {
            let ns: Vec<Matrix> = vals.chunks(6).map(|c| Matrix::from_vec(2, 3, c.to_vec()).unwrap()).collect();
            let mut perm = ns.clone();
            perm.rotate_left(rot);
            perm.swap(0, 4);
            let p = Matrix::zeros(2, 3);
            prop_assert_eq!(aggregate_neighbors(&p, &ns).unwrap(), aggregate_neighbors(&p, &perm).unwrap());
        }
    }
}
