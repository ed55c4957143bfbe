//! Normalization, application-level splits and padded batching.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{io_err, Error, Result};
use crate::par::{map_slice, Parallelism};
use crate::seed::{Rng, SeedStream};
use crate::traceio::{fmt_f64, AppClass, Matrix, RunRecord, TraceDataset};

pub const STD_FLOOR: f64 = 1e-8;

/// The six repetitions of the split protocol.
pub const CANONICAL_SEEDS: [u64; 6] = [0, 1, 2, 3, 4, 5];

/// Per-metric z-score statistics, fit on training runs only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Mean and population std of every metric over all seconds of `train`.
///
/// Per-run partial sums may be computed in parallel; they are always
/// combined in run order, so the result is bit-identical for any thread
/// count.
pub fn fit_norm(train: &[&RunRecord], par: Parallelism) -> Result<NormStats> {
    let first = train
        .first()
        .ok_or_else(|| Error::Empty("normalization needs at least one training run".into()))?;
    let s = first.matrix.rows();
    if let Some(r) = train.iter().find(|r| r.matrix.rows() != s) {
        return Err(Error::Shape(format!(
            "run {}/{} has {} metrics, expected {s}",
            r.app_id,
            r.run_id,
            r.matrix.rows()
        )));
    }
    let count: usize = train.iter().map(|r| r.matrix.cols()).sum();
    let n = count as f64;

    let sums = map_slice(par, train, |r| (0..s).map(|i| r.matrix.row(i).iter().sum::<f64>()).collect::<Vec<_>>());
    let mut mean = vec![0.0; s];
    for part in &sums {
        for (m, p) in mean.iter_mut().zip(part) {
            *m += p;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);

    let sq = map_slice(par, train, |r| {
        (0..s)
            .map(|i| r.matrix.row(i).iter().map(|v| (v - mean[i]).powi(2)).sum::<f64>())
            .collect::<Vec<_>>()
    });
    let mut var = vec![0.0; s];
    for part in &sq {
        for (v, p) in var.iter_mut().zip(part) {
            *v += p;
        }
    }
    let std = var.iter().map(|v| (v / n).sqrt().max(STD_FLOOR)).collect();
    Ok(NormStats { mean, std })
}

impl NormStats {
    pub fn width(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, m: &Matrix) -> Result<Matrix> {
        self.check(m)?;
        Ok(Matrix::from_fn(m.rows(), m.cols(), |r, c| (m.get(r, c) - self.mean[r]) / self.std[r]))
    }

    pub fn invert(&self, m: &Matrix) -> Result<Matrix> {
        self.check(m)?;
        Ok(Matrix::from_fn(m.rows(), m.cols(), |r, c| m.get(r, c) * self.std[r] + self.mean[r]))
    }

    fn check(&self, m: &Matrix) -> Result<()> {
        if m.rows() != self.width() {
            return Err(Error::Shape(format!(
                "matrix has {} metrics, normalization expects {}",
                m.rows(),
                self.width()
            )));
        }
        Ok(())
    }

    /// CSV with header `metric,mean,std`.
    pub fn to_csv(&self, names: &[String]) -> String {
        let mut out = String::from("metric,mean,std\n");
        for (i, (m, s)) in self.mean.iter().zip(&self.std).enumerate() {
            let name = names.get(i).map(String::as_str).unwrap_or("?");
            out.push_str(&format!("{name},{},{}\n", fmt_f64(*m), fmt_f64(*s)));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut mean = Vec::new();
        let mut std = Vec::new();
        for (i, line) in text.lines().enumerate().skip(1).filter(|(_, l)| !l.is_empty()) {
            let parts: Vec<&str> = line.split(',').collect();
            let parse = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Domain(format!("normalization stats line {i}: bad number {s:?}")))
            };
            if parts.len() != 3 {
                return Err(Error::Domain(format!("normalization stats line {i}: expected 3 fields")));
            }
            mean.push(parse(parts[1])?);
            std.push(parse(parts[2])?);
        }
        Ok(Self { mean, std })
    }
}

/// A normalized run ready for batching.
#[derive(Debug, Clone, PartialEq)]
pub struct NormRun {
    pub app_id: String,
    /// `width x T`, z-scored.
    pub matrix: Matrix,
    pub label: f64,
}

impl NormRun {
    pub fn len(&self) -> usize {
        self.matrix.cols()
    }

    pub fn is_empty(&self) -> bool {
        self.matrix.cols() == 0
    }
}

pub fn normalize_runs(runs: &[&RunRecord], stats: &NormStats, par: Parallelism) -> Result<Vec<NormRun>> {
    map_slice(par, runs, |r| {
        Ok(NormRun {
            app_id: r.app_id.clone(),
            matrix: stats.apply(&r.matrix)?,
            label: r.label,
        })
    })
    .into_iter()
    .collect()
}

/// Which applications train and which are held out.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub seed: u64,
    pub train_apps: Vec<String>,
    pub test_apps: Vec<String>,
}

pub const TRAIN_STATIC: usize = 4;
pub const TRAIN_MIXED: usize = 3;
pub const TEST_STATIC: usize = 2;
pub const TEST_MIXED: usize = 2;

/// Draws 4 static-only + 3 mixed training apps and 2 + 2 unseen test apps.
pub fn make_split(ds: &TraceDataset, seed: u64) -> Result<SplitSpec> {
    let mut statics = ds.apps_of(AppClass::StaticOnly);
    let mut mixed = ds.apps_of(AppClass::Mixed);
    if statics.len() < TRAIN_STATIC + TEST_STATIC || mixed.len() < TRAIN_MIXED + TEST_MIXED {
        return Err(Error::Split(format!(
            "cannot satisfy composition: need {} static-only and {} mixed apps, have {} and {}",
            TRAIN_STATIC + TEST_STATIC,
            TRAIN_MIXED + TEST_MIXED,
            statics.len(),
            mixed.len()
        )));
    }
    let mut rng = SeedStream::root(seed).named("split").rng();
    statics.shuffle(&mut rng);
    mixed.shuffle(&mut rng);
    let mut test: Vec<String> = statics[..TEST_STATIC]
        .iter()
        .chain(&mixed[..TEST_MIXED])
        .cloned()
        .collect();
    let mut train: Vec<String> = statics[TEST_STATIC..TEST_STATIC + TRAIN_STATIC]
        .iter()
        .chain(&mixed[TEST_MIXED..TEST_MIXED + TRAIN_MIXED])
        .cloned()
        .collect();
    test.sort();
    train.sort();
    Ok(SplitSpec {
        seed,
        train_apps: train,
        test_apps: test,
    })
}

impl SplitSpec {
    pub fn check(&self, ds: &TraceDataset) -> Result<()> {
        let train: BTreeSet<_> = self.train_apps.iter().collect();
        let test: BTreeSet<_> = self.test_apps.iter().collect();
        if let Some(a) = train.intersection(&test).next() {
            return Err(Error::Split(format!("app {a} is in both train and test")));
        }
        for a in train.iter().chain(&test) {
            if !ds.apps.contains_key(a.as_str()) {
                return Err(Error::Split(format!("app {a} is not in the dataset")));
            }
        }
        if train.is_empty() {
            return Err(Error::Split("no training apps".into()));
        }
        Ok(())
    }

    pub fn train_runs<'a>(&self, ds: &'a TraceDataset) -> Vec<&'a RunRecord> {
        ds.runs.iter().filter(|r| self.train_apps.contains(&r.app_id)).collect()
    }

    pub fn test_runs<'a>(&self, ds: &'a TraceDataset) -> Vec<&'a RunRecord> {
        ds.runs.iter().filter(|r| self.test_apps.contains(&r.app_id)).collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(path, text).map_err(io_err(path))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Zero-padded batch, time-major: `values[(b * t_max + t) * width + s]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub values: Vec<f64>,
    pub mask: Vec<bool>,
    pub labels: Vec<f64>,
    pub lengths: Vec<usize>,
    pub t_max: usize,
    pub width: usize,
}

/// One sample of a batch.
#[derive(Debug, Clone, Copy)]
pub struct SampleView<'a> {
    /// `t_max x width`, time-major.
    pub values: &'a [f64],
    pub mask: &'a [bool],
    pub len: usize,
    pub t_max: usize,
    pub width: usize,
}

impl SampleView<'_> {
    pub fn at(&self, t: usize, s: usize) -> f64 {
        self.values[t * self.width + s]
    }

    /// Masked time-mean of every metric.
    pub fn metric_means(&self) -> Result<Vec<f64>> {
        let valid = self.mask.iter().filter(|&&m| m).count();
        if valid == 0 {
            return Err(Error::Empty("sample has no valid seconds".into()));
        }
        let mut out = vec![0.0; self.width];
        for t in (0..self.t_max).filter(|&t| self.mask[t]) {
            for (o, v) in out.iter_mut().zip(&self.values[t * self.width..(t + 1) * self.width]) {
                *o += v;
            }
        }
        out.iter_mut().for_each(|o| *o /= valid as f64);
        Ok(out)
    }
}

impl Batch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn sample(&self, b: usize) -> SampleView<'_> {
        let (t, w) = (self.t_max, self.width);
        SampleView {
            values: &self.values[b * t * w..(b + 1) * t * w],
            mask: &self.mask[b * t..(b + 1) * t],
            len: self.lengths[b],
            t_max: t,
            width: w,
        }
    }

    /// The same batch padded out to `t_max` seconds.
    pub fn padded_to(&self, t_max: usize) -> Batch {
        assert!(t_max >= self.t_max);
        let w = self.width;
        let mut values = vec![0.0; self.len() * t_max * w];
        let mut mask = vec![false; self.len() * t_max];
        for b in 0..self.len() {
            let s = self.sample(b);
            values[b * t_max * w..b * t_max * w + self.t_max * w].copy_from_slice(s.values);
            mask[b * t_max..b * t_max + self.t_max].copy_from_slice(s.mask);
        }
        Batch {
            values,
            mask,
            labels: self.labels.clone(),
            lengths: self.lengths.clone(),
            t_max,
            width: w,
        }
    }
}

/// Stacks normalized runs into one zero-padded batch with validity masks.
pub fn pad_batch(runs: &[&NormRun]) -> Result<Batch> {
    let first = runs.first().ok_or_else(|| Error::Empty("cannot batch zero runs".into()))?;
    let width = first.matrix.rows();
    if let Some(r) = runs.iter().find(|r| r.matrix.rows() != width) {
        return Err(Error::Shape(format!("run of app {} has {} metrics, expected {width}", r.app_id, r.matrix.rows())));
    }
    let lengths: Vec<usize> = runs.iter().map(|r| r.len()).collect();
    let t_max = *lengths.iter().max().unwrap_or(&0);
    let mut values = vec![0.0; runs.len() * t_max * width];
    let mut mask = vec![false; runs.len() * t_max];
    for (b, r) in runs.iter().enumerate() {
        for t in 0..r.len() {
            mask[b * t_max + t] = true;
            let row = &mut values[(b * t_max + t) * width..(b * t_max + t + 1) * width];
            for (s, v) in row.iter_mut().enumerate() {
                *v = r.matrix.get(s, t);
            }
        }
    }
    Ok(Batch {
        values,
        mask,
        labels: runs.iter().map(|r| r.label).collect(),
        lengths,
        t_max,
        width,
    })
}

/// Shuffled mini-batches of sample indices, grouped so that each batch
/// holds runs of similar length. Pools of eight batches are sorted by
/// length before cutting, then batch order is shuffled again.
pub fn bucket_batches(lengths: &[usize], batch_size: usize, rng: &mut Rng) -> Vec<Vec<usize>> {
    let batch_size = batch_size.max(1);
    let mut idx: Vec<usize> = (0..lengths.len()).collect();
    idx.shuffle(rng);
    let mut batches = Vec::new();
    for pool in idx.chunks_mut(batch_size * 8) {
        pool.sort_by_key(|&i| lengths[i]);
        batches.extend(pool.chunks(batch_size).map(<[usize]>::to_vec));
    }
    batches.shuffle(rng);
    batches
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::traceio::{Direction, MetricSchema, PerfMetricKind, Scenario};

    fn run(app: &str, m: Matrix) -> RunRecord {
        RunRecord {
            app_id: app.into(),
            run_id: "r".into(),
            scenario: Scenario::Static,
            matrix: m,
            pm_kind: PerfMetricKind::new("Latency (s)", Direction::LowerIsBetter),
            pm_ideal: 1.0,
            pm_actual: 1.0,
            label: 1.0,
        }
    }

    fn norm_run(t: usize, v: f64) -> NormRun {
        NormRun {
            app_id: "a".into(),
            matrix: Matrix::from_fn(2, t, |r, c| v + r as f64 + c as f64),
            label: 0.5,
        }
    }

    #[test]
    fn constant_metric_floors_std() {
        let r = run("a", Matrix::from_fn(1, 4, |_, _| 5.0));
        let st = fit_norm(&[&r], Parallelism::Sequential).unwrap();
        assert_eq!(st.mean, vec![5.0]);
        assert_eq!(st.std, vec![STD_FLOOR]);
        assert!(st.apply(&r.matrix).unwrap().as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn two_point_statistics() {
        let a = run("a", Matrix::from_vec(1, 2, vec![1.0, 3.0]).unwrap());
        let b = run("b", Matrix::from_vec(1, 1, vec![3.0]).unwrap());
        let c = run("c", Matrix::from_vec(1, 1, vec![1.0]).unwrap());
        let st = fit_norm(&[&a, &b, &c], Parallelism::Rayon).unwrap();
        assert_eq!(st.mean, vec![2.0]);
        assert_eq!(st.std, vec![1.0]);
    }

    #[test]
    fn empty_training_set() {
        assert!(matches!(fit_norm(&[], Parallelism::Sequential), Err(Error::Empty(_))));
    }

    #[test]
    fn norm_identity_and_round_trip() {
        let m = Matrix::from_fn(3, 5, |r, c| (r * 7 + c) as f64 * 0.37 - 2.0);
        let id = NormStats { mean: vec![0.0; 3], std: vec![1.0; 3] };
        assert_eq!(id.apply(&m).unwrap(), m);
        let st = NormStats { mean: vec![1.5, -3.0, 1e3], std: vec![0.3, 2.0, 1e-4] };
        let back = st.invert(&st.apply(&m).unwrap()).unwrap();
        assert!(back.max_abs_diff(&m) <= 1e-12);
        assert!(st.apply(&Matrix::zeros(2, 1)).is_err());
    }

    #[test]
    fn norm_stats_csv_round_trip() {
        let st = NormStats { mean: vec![0.1, -7.25e-9], std: vec![1.0 / 3.0, STD_FLOOR] };
        let names = MetricSchema::subset(&["cycles"]).unwrap().column_names();
        assert_eq!(NormStats::from_csv(&st.to_csv(&names)).unwrap(), st);
    }

    #[test]
    fn padding_semantics() {
        let (a, b) = (norm_run(3, 1.0), norm_run(5, 2.0));
        let batch = pad_batch(&[&a, &b]).unwrap();
        assert_eq!(batch.t_max, 5);
        assert_eq!(batch.sample(0).mask, &[true, true, true, false, false]);
        assert!(batch.sample(1).mask.iter().all(|&m| m));
        for t in 3..5 {
            assert!((0..2).all(|s| batch.sample(0).at(t, s) == 0.0));
        }
        assert_eq!(batch.sample(0).at(2, 1), a.matrix.get(1, 2));
    }

    #[test]
    fn single_and_duplicate_runs() {
        let a = norm_run(4, 0.0);
        let one = pad_batch(&[&a]).unwrap();
        assert!(one.mask.iter().all(|&m| m));
        let two = pad_batch(&[&a, &a]).unwrap();
        assert_eq!(two.sample(0).values, two.sample(1).values);
        assert!(pad_batch(&[]).is_err());
    }

    #[test]
    fn masked_metric_mean() {
        let r = NormRun { app_id: "a".into(), matrix: Matrix::from_vec(1, 2, vec![2.0, 4.0]).unwrap(), label: 1.0 };
        let b = pad_batch(&[&r]).unwrap().padded_to(3);
        let mut vals = b.values.clone();
        vals[2] = 999.0; // garbage under the mask must be ignored
        let view = SampleView { values: &vals, ..b.sample(0) };
        assert_eq!(view.metric_means().unwrap(), vec![3.0]);
    }

    #[test]
    fn buckets_cover_every_index_once() {
        let lengths: Vec<usize> = (0..53).map(|i| (i * 37) % 50 + 1).collect();
        let mut rng = SeedStream::root(1).rng();
        let batches = bucket_batches(&lengths, 4, &mut rng);
        let mut all: Vec<usize> = batches.concat();
        all.sort();
        assert_eq!(all, (0..53).collect::<Vec<_>>());
    }
}
