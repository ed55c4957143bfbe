//! Error metrics, multi-seed evaluation of every method, and report files.
//!
//! All errors are reported in percentage points: label-unit MAE times 100
//! and MSE times 100².

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::baselines::{
    featurize_all, fit_gamma_glm, fit_linear, random_candidates, tune, GlmOptions, Lstm, LstmConfig, TreeMethod,
};
use crate::error::{io_err, Error, Result};
use crate::model::{CloudFormer, CloudFormerConfig, SequenceRegressor, Variant};
use crate::par::{map_range, Parallelism};
use crate::preprocess::{fit_norm, make_split, normalize_runs, NormRun, SplitSpec};
use crate::seed::SeedStream;
use crate::traceio::TraceDataset;
use crate::train::{holdout, predict_runs, train_loop, TrainConfig};

pub const REPORT_VERSION: u32 = 1;

/// Upper edges of the error bands, in percentage points.
pub const BAND_EDGES: [f64; 5] = [5.0, 10.0, 15.0, 20.0, 25.0];
pub const BAND_LABELS: [&str; 6] = ["<5", "<10", "<15", "<20", "<25", ">=25"];

/// Display cap of the per-application heatmap.
pub const HEATMAP_CAP: f64 = 20.0;

fn check_lengths(pred: &[f64], target: &[f64]) -> Result<()> {
    if pred.len() != target.len() {
        return Err(Error::Shape(format!("{} predictions for {} targets", pred.len(), target.len())));
    }
    if pred.is_empty() {
        return Err(Error::Empty("no predictions to score".into()));
    }
    Ok(())
}

/// Mean squared error in squared percentage points.
pub fn mse(pred: &[f64], target: &[f64]) -> Result<f64> {
    check_lengths(pred, target)?;
    Ok(pred.iter().zip(target).map(|(p, t)| ((p - t) * 100.0).powi(2)).sum::<f64>() / pred.len() as f64)
}

/// Mean absolute error in percentage points.
pub fn mae(pred: &[f64], target: &[f64]) -> Result<f64> {
    check_lengths(pred, target)?;
    Ok(pred.iter().zip(target).map(|(p, t)| ((p - t) * 100.0).abs()).sum::<f64>() / pred.len() as f64)
}

/// Fraction of samples in each disjoint, left-closed error band.
pub fn error_bands(pred: &[f64], target: &[f64]) -> Result<[f64; 6]> {
    check_lengths(pred, target)?;
    let mut counts = [0usize; 6];
    for (p, t) in pred.iter().zip(target) {
        let e = ((p - t) * 100.0).abs();
        let bin = BAND_EDGES.iter().position(|&edge| e < edge).unwrap_or(5);
        counts[bin] += 1;
    }
    let n = pred.len() as f64;
    Ok(counts.map(|c| c as f64 / n))
}

pub fn cumulative(bands: &[f64; 6]) -> [f64; 6] {
    let mut out = [0.0; 6];
    let mut acc = 0.0;
    for (o, b) in out.iter_mut().zip(bands) {
        acc += b;
        *o = acc;
    }
    out
}

/// Population mean and standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    (m, (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Lr,
    Glr,
    Dt,
    Rf,
    Lstm,
    CfFull,
    CfTemporal,
    CfSystem,
}

impl Method {
    pub const ALL: [Method; 8] = [
        Method::Lr,
        Method::Glr,
        Method::Dt,
        Method::Rf,
        Method::Lstm,
        Method::CfFull,
        Method::CfTemporal,
        Method::CfSystem,
    ];
    pub const COMPARISON: [Method; 6] = [Method::Lr, Method::Glr, Method::Dt, Method::Rf, Method::Lstm, Method::CfFull];
    pub const ABLATION: [Method; 3] = [Method::CfFull, Method::CfTemporal, Method::CfSystem];

    pub fn key(self) -> &'static str {
        match self {
            Method::Lr => "lr",
            Method::Glr => "glr",
            Method::Dt => "dt",
            Method::Rf => "rf",
            Method::Lstm => "lstm",
            Method::CfFull => "cf_full",
            Method::CfTemporal => "cf_temporal",
            Method::CfSystem => "cf_system",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Method::Lr => "LR",
            Method::Glr => "GLR",
            Method::Dt => "DT",
            Method::Rf => "RF",
            Method::Lstm => "LSTM",
            Method::CfFull => "CF",
            Method::CfTemporal => "CF-Temporal",
            Method::CfSystem => "CF-System",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "cf" | "full" => Some(Method::CfFull),
            "temporal" => Some(Method::CfTemporal),
            "system" => Some(Method::CfSystem),
            _ => Method::ALL.into_iter().find(|m| m.key() == s),
        }
    }

    /// Parses a comma-separated list, keeping the given order.
    pub fn parse_list(s: &str) -> Result<Vec<Self>> {
        let mut out = Vec::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let m = Self::parse(part).ok_or_else(|| Error::Config(format!("unknown method {part:?}")))?;
            if !out.contains(&m) {
                out.push(m);
            }
        }
        if out.is_empty() {
            return Err(Error::Config("no methods given".into()));
        }
        Ok(out)
    }

    pub fn variant(self) -> Option<Variant> {
        match self {
            Method::CfFull => Some(Variant::Full),
            Method::CfTemporal => Some(Variant::TemporalOnly),
            Method::CfSystem => Some(Variant::SystemOnly),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub seeds: Vec<u64>,
    pub methods: Vec<Method>,
    /// CloudFormer template; the variant is set per method.
    pub cf: CloudFormerConfig,
    pub cf_train: TrainConfig,
    pub lstm: LstmConfig,
    pub lstm_train: TrainConfig,
    /// Fraction of training runs held out for early stopping.
    pub val_frac: f64,
    pub tune_budget: usize,
    pub tune_folds: usize,
    pub parallelism: Parallelism,
}

impl EvalConfig {
    /// Desk-scale defaults for a dataset of the given width.
    pub fn desk(width: usize) -> Self {
        let cf_train = TrainConfig {
            epochs: 200,
            batch_size: 16,
            peak_lr: 3e-3,
            floor_lr: 1e-5,
            patience: 30,
            ..TrainConfig::default()
        };
        Self {
            seeds: crate::preprocess::CANONICAL_SEEDS.to_vec(),
            methods: Method::COMPARISON.to_vec(),
            cf: CloudFormerConfig::desk(width),
            cf_train: cf_train.clone(),
            lstm: LstmConfig { width, hidden: 32 },
            lstm_train: cf_train,
            val_frac: 0.15,
            tune_budget: 50,
            tune_folds: 3,
            parallelism: Parallelism::Rayon,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub n: usize,
    pub mae: f64,
    pub mse: f64,
}

impl Scores {
    fn of(pred: &[f64], target: &[f64]) -> Result<Self> {
        Ok(Self {
            n: pred.len(),
            mae: mae(pred, target)?,
            mse: mse(pred, target)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub app_id: String,
    pub target: f64,
    pub pred: f64,
}

/// One method evaluated on one split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub seed: u64,
    pub method: Method,
    pub per_app: BTreeMap<String, Scores>,
    pub pooled: Scores,
    pub bands: [f64; 6],
    /// Test predictions (clamped to `[0, 1]`) in dataset order.
    pub predictions: Vec<Prediction>,
    /// Free-form notes such as the tuned hyperparameters.
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub method: Method,
    pub seeds: usize,
    pub mae_mean: f64,
    pub mae_std: f64,
    pub mse_mean: f64,
    pub mse_std: f64,
    /// Bands over the test samples of all seeds.
    pub bands: [f64; 6],
    pub bands_cumulative: [f64; 6],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub version: u32,
    pub schema_hash: String,
    pub config: EvalConfig,
    pub splits: Vec<SplitSpec>,
    pub cells: Vec<CellResult>,
    pub aggregates: Vec<Aggregate>,
}

/// Normalized train/test runs of one split; statistics come from the
/// training runs only.
pub fn prepare_split(ds: &TraceDataset, split: &SplitSpec, par: Parallelism) -> Result<(Vec<NormRun>, Vec<NormRun>)> {
    split.check(ds)?;
    let train = split.train_runs(ds);
    let test = split.test_runs(ds);
    if test.is_empty() {
        return Err(Error::Split("split has no test runs".into()));
    }
    let stats = fit_norm(&train, par)?;
    Ok((normalize_runs(&train, &stats, par)?, normalize_runs(&test, &stats, par)?))
}

fn train_sequence<M: SequenceRegressor>(model: &mut M, train: &[NormRun], cfg: &TrainConfig, val_frac: f64, stream: SeedStream) -> Result<()> {
    let (tr, va) = holdout(train.to_vec(), val_frac, stream.named("holdout"));
    let cfg = TrainConfig {
        seed: stream.named("train").seed(),
        ..cfg.clone()
    };
    train_loop(model, &tr, &va, &cfg)?;
    Ok(())
}

/// Fits `method` on `train` and predicts `test`. Returns raw predictions
/// and notes.
pub fn fit_predict(method: Method, train: &[NormRun], test: &[NormRun], cfg: &EvalConfig, stream: SeedStream) -> Result<(Vec<f64>, Vec<String>)> {
    let par = cfg.parallelism;
    let mut notes = Vec::new();
    let pred = match method {
        Method::Lr | Method::Glr | Method::Dt | Method::Rf => {
            let (x, y) = featurize_all(train)?;
            let (xt, _) = featurize_all(test)?;
            match method {
                Method::Lr => fit_linear(&x, &y)?.predict(&xt),
                Method::Glr => {
                    let fit = fit_gamma_glm(&x, &y, &GlmOptions::default())?;
                    notes.push(format!("irls iterations {} converged {}", fit.iterations, fit.converged));
                    fit.predict(&xt)
                }
                _ => {
                    let tm = if method == Method::Dt { TreeMethod::Dt } else { TreeMethod::Rf };
                    let groups: Vec<String> = train.iter().map(|r| r.app_id.clone()).collect();
                    let cands = random_candidates(tm, cfg.tune_budget.max(1), stream.named("candidates"));
                    let best = tune(&cands, &x, &y, &groups, cfg.tune_folds, stream.named("tune"), par)?;
                    notes.push(format!("tuned {}", serde_json::to_string(&best.best)?));
                    best.best.fit(&x, &y, stream.named("fit"), par)?.predict(&xt)
                }
            }
        }
        Method::Lstm => {
            let mut m = Lstm::new(cfg.lstm, stream.named("init"))?;
            train_sequence(&mut m, train, &cfg.lstm_train, cfg.val_frac, stream)?;
            predict_runs(&m, test, cfg.lstm_train.batch_size, par)?
        }
        Method::CfFull | Method::CfTemporal | Method::CfSystem => {
            let mc = cfg.cf.clone().with_variant(method.variant().expect("cf method"));
            let mut m = CloudFormer::new(mc, stream.named("init"))?;
            train_sequence(&mut m, train, &cfg.cf_train, cfg.val_frac, stream)?;
            predict_runs(&m, test, cfg.cf_train.batch_size, par)?
        }
    };
    Ok((pred, notes))
}

/// Scores clamped predictions against the test runs.
pub fn score_cell(seed: u64, method: Method, test: &[NormRun], raw: &[f64], notes: Vec<String>) -> Result<CellResult> {
    if raw.len() != test.len() {
        return Err(Error::Shape(format!("{} predictions for {} test runs", raw.len(), test.len())));
    }
    let pred: Vec<f64> = raw.iter().map(|p| if p.is_nan() { 0.5 } else { p.clamp(0.0, 1.0) }).collect();
    let target: Vec<f64> = test.iter().map(|r| r.label).collect();
    let mut groups: BTreeMap<String, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for ((r, p), t) in test.iter().zip(&pred).zip(&target) {
        let g = groups.entry(r.app_id.clone()).or_default();
        g.0.push(*p);
        g.1.push(*t);
    }
    let per_app = groups
        .iter()
        .map(|(a, (p, t))| Ok((a.clone(), Scores::of(p, t)?)))
        .collect::<Result<BTreeMap<_, _>>>()?;
    Ok(CellResult {
        seed,
        method,
        per_app,
        pooled: Scores::of(&pred, &target)?,
        bands: error_bands(&pred, &target)?,
        predictions: test
            .iter()
            .zip(&pred)
            .map(|(r, &p)| Prediction {
                app_id: r.app_id.clone(),
                target: r.label,
                pred: p,
            })
            .collect(),
        notes,
    })
}

/// Per-method mean ± population std over seeds, with bands pooled over all
/// test samples. Methods keep the order of `methods`.
pub fn aggregate(cells: &[CellResult], methods: &[Method]) -> Result<Vec<Aggregate>> {
    methods
        .iter()
        .map(|&m| {
            let mine: Vec<&CellResult> = cells.iter().filter(|c| c.method == m).collect();
            if mine.is_empty() {
                return Err(Error::Empty(format!("no results for method {}", m.key())));
            }
            let (mae_mean, mae_std) = mean_std(&mine.iter().map(|c| c.pooled.mae).collect::<Vec<_>>());
            let (mse_mean, mse_std) = mean_std(&mine.iter().map(|c| c.pooled.mse).collect::<Vec<_>>());
            let (p, t): (Vec<f64>, Vec<f64>) = mine.iter().flat_map(|c| c.predictions.iter().map(|x| (x.pred, x.target))).unzip();
            let bands = error_bands(&p, &t)?;
            Ok(Aggregate {
                method: m,
                seeds: mine.len(),
                mae_mean,
                mae_std,
                mse_mean,
                mse_std,
                bands,
                bands_cumulative: cumulative(&bands),
            })
        })
        .collect()
}

/// Every method on every seed's split. Cells run in parallel; each draws
/// its randomness from `(seed, method)` so the report does not depend on
/// scheduling.
pub fn run_matrix(ds: &TraceDataset, cfg: &EvalConfig) -> Result<EvalReport> {
    if cfg.seeds.is_empty() || cfg.methods.is_empty() {
        return Err(Error::Config("need at least one seed and one method".into()));
    }
    if cfg.cf.width != ds.schema.width() {
        return Err(Error::Config(format!("model width {} but dataset width {}", cfg.cf.width, ds.schema.width())));
    }
    let splits = cfg.seeds.iter().map(|&s| make_split(ds, s)).collect::<Result<Vec<_>>>()?;
    let data = splits.iter().map(|s| prepare_split(ds, s, cfg.parallelism)).collect::<Result<Vec<_>>>()?;
    let nm = cfg.methods.len();
    let cells = map_range(cfg.parallelism, splits.len() * nm, |job| {
        let (si, mi) = (job / nm, job % nm);
        let (seed, method) = (cfg.seeds[si], cfg.methods[mi]);
        let (train, test) = &data[si];
        let stream = SeedStream::root(seed).named("eval").named(method.key());
        log::info!("seed {seed}: fitting {}", method.key());
        let (raw, notes) = fit_predict(method, train, test, cfg, stream)?;
        score_cell(seed, method, test, &raw, notes)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let aggregates = aggregate(&cells, &cfg.methods)?;
    Ok(EvalReport {
        version: REPORT_VERSION,
        schema_hash: ds.schema.hash(),
        config: cfg.clone(),
        splits,
        cells,
        aggregates,
    })
}

fn f(x: f64) -> String {
    crate::traceio::fmt_f64(x)
}

impl EvalReport {
    pub fn aggregate_of(&self, m: Method) -> Option<&Aggregate> {
        self.aggregates.iter().find(|a| a.method == m)
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let r: Self = serde_json::from_str(&text)?;
        if r.version != REPORT_VERSION {
            return Err(Error::Format {
                path: path.to_path_buf(),
                msg: format!("unsupported report version {}", r.version),
            });
        }
        Ok(r)
    }

    /// Method rows with mean ± std of MSE and MAE over seeds.
    pub fn table_csv(&self) -> String {
        let mut s = String::from("method,label,seeds,mse_mean,mse_std,mae_mean,mae_std\n");
        for a in &self.aggregates {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{}",
                a.method.key(),
                a.method.label(),
                a.seeds,
                f(a.mse_mean),
                f(a.mse_std),
                f(a.mae_mean),
                f(a.mae_std)
            );
        }
        s
    }

    /// One row per (seed, method, test app).
    pub fn cells_csv(&self) -> String {
        let mut s = String::from("seed,method,app,n,mae,mse\n");
        for c in &self.cells {
            for (app, sc) in &c.per_app {
                let _ = writeln!(s, "{},{},{},{},{},{}", c.seed, c.method.key(), app, sc.n, f(sc.mae), f(sc.mse));
            }
        }
        s
    }

    /// Disjoint and cumulative band fractions per method.
    pub fn bands_csv(&self) -> String {
        let mut s = String::from("method,band,fraction,cumulative\n");
        for a in &self.aggregates {
            for (i, label) in BAND_LABELS.iter().enumerate() {
                let _ = writeln!(s, "{},{},{},{}", a.method.key(), label, f(a.bands[i]), f(a.bands_cumulative[i]));
            }
        }
        s
    }

    /// Per-application MAE of every method on one seed; `mae_display` is
    /// capped for plotting, `mae` is the raw value.
    pub fn heatmap_csv(&self, seed: u64) -> String {
        let mut s = String::from("method,app,n,mae,mae_display\n");
        for c in self.cells.iter().filter(|c| c.seed == seed) {
            for (app, sc) in &c.per_app {
                let _ = writeln!(s, "{},{},{},{},{}", c.method.key(), app, sc.n, f(sc.mae), f(sc.mae.min(HEATMAP_CAP)));
            }
        }
        s
    }

    pub fn markdown(&self) -> String {
        let mut s = String::from("# Evaluation report\n\n");
        let seeds: Vec<String> = self.config.seeds.iter().map(u64::to_string).collect();
        let _ = writeln!(s, "Seeds: {}. Errors in percentage points (label x 100).\n", seeds.join(", "));
        s.push_str("| Method | MSE (mean ± std) | MAE (mean ± std) |\n|---|---|---|\n");
        for a in &self.aggregates {
            let _ = writeln!(s, "| {} | {:.2} ± {:.2} | {:.2} ± {:.2} |", a.method.label(), a.mse_mean, a.mse_std, a.mae_mean, a.mae_std);
        }
        s.push_str("\n## Error bands (fraction of test samples)\n\n| Method |");
        for l in BAND_LABELS {
            let _ = write!(s, " {l} |");
        }
        s.push_str("\n|---|---|---|---|---|---|---|\n");
        for a in &self.aggregates {
            let _ = write!(s, "| {} |", a.method.label());
            for b in a.bands {
                let _ = write!(s, " {:.3} |", b);
            }
            s.push('\n');
        }
        s.push_str("\n## Aggregates\n\n");
        for a in &self.aggregates {
            let _ = writeln!(s, "- {}: MAE {:.2} ± {:.2}, MSE {:.2} ± {:.2}", a.method.label(), a.mae_mean, a.mae_std, a.mse_mean, a.mse_std);
        }
        s
    }

    /// Writes `report.json`, `table.csv`, `cells.csv`, `bands.csv`,
    /// `heatmap_seed<k>.csv` per seed and `report.md` into `dir`.
    pub fn emit(&self, dir: &Path) -> Result<Vec<String>> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let mut files = vec![
            ("report.json".to_string(), self.to_json()?),
            ("table.csv".to_string(), self.table_csv()),
            ("cells.csv".to_string(), self.cells_csv()),
            ("bands.csv".to_string(), self.bands_csv()),
        ];
        for &seed in &self.config.seeds {
            files.push((format!("heatmap_seed{seed}.csv"), self.heatmap_csv(seed)));
        }
        files.push(("report.md".to_string(), self.markdown()));
        for (name, text) in &files {
            let p = dir.join(name);
            fs::write(&p, text).map_err(io_err(&p))?;
        }
        Ok(files.into_iter().map(|(n, _)| n).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metric_values() {
        assert_eq!(mae(&[0.2], &[0.2]).unwrap(), 0.0);
        let (p, t) = ([0.6, 0.4], [0.5, 0.5]);
        assert!((mae(&p, &t).unwrap() - 10.0).abs() < 1e-9);
        assert!((mse(&p, &t).unwrap() - 100.0).abs() < 1e-9);
        assert!((mae(&[0.078], &[0.0]).unwrap() - 7.8).abs() < 1e-12);
        assert!(mae(&[], &[]).is_err());
        assert!(mse(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn band_binning() {
        assert_eq!(error_bands(&[0.5, 0.3], &[0.5, 0.3]).unwrap(), [1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(error_bands(&[0.62], &[0.5]).unwrap()[2], 1.0);
        let b = error_bands(&[0.02, 0.07, 0.30], &[0.0, 0.0, 0.0]).unwrap();
        let third = 1.0 / 3.0;
        assert_eq!(b, [third, third, 0.0, 0.0, 0.0, third]);
        assert_eq!(cumulative(&b)[5], 1.0);
        let b2 = error_bands(&[0.30, 0.02, 0.07], &[0.0, 0.0, 0.0]).unwrap();
        assert_eq!(b, b2);
        // left-closed boundary: exactly 25 points falls in the last bin
        assert_eq!(error_bands(&[0.75], &[0.5]).unwrap()[5], 1.0);
    }

    #[test]
    fn population_std() {
        assert_eq!(mean_std(&[1.0, 3.0]), (2.0, 1.0));
    }

    #[test]
    fn method_parsing() {
        assert_eq!(Method::parse_list("lr, rf,cf").unwrap(), vec![Method::Lr, Method::Rf, Method::CfFull]);
        assert!(Method::parse_list("lr,xgb").is_err());
        for m in Method::ALL {
            assert_eq!(Method::parse(m.key()), Some(m));
        }
    }

    #[test]
    fn pooled_is_weighted_mean_of_apps() {
        let mk = |a: &str, l: f64| NormRun {
            app_id: a.into(),
            matrix: crate::traceio::Matrix::zeros(1, 1),
            label: l,
        };
        let test = vec![mk("a", 0.5), mk("b", 0.2), mk("a", 0.9), mk("a", 0.1)];
        let c = score_cell(0, Method::Lr, &test, &[0.4, 0.25, 1.3, 0.1], vec![]).unwrap();
        let w: f64 = c.per_app.values().map(|s| s.mae * s.n as f64).sum::<f64>() / 4.0;
        assert!((w - c.pooled.mae).abs() < 1e-12);
        assert_eq!(c.predictions[2].pred, 1.0);
        for s in c.per_app.values() {
            assert!(s.mae <= s.mse.sqrt() + 1e-12);
        }
    }
}
