//! On-disk dataset layout.
//!
//! ```text
//! <root>/schema.csv                       index,name,category (one line per column)
//! <root>/apps.csv                         app_id,class (optional; derived when absent)
//! <root>/runs/<app_id>/<run_id>/meta.json run metadata and label
//! <root>/runs/<app_id>/<run_id>/trace.csv header = column names, one row per second
//! ```
//!
//! Reals are written in shortest round-trip decimal form, so a write/read
//! cycle reproduces every value bit for bit.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::label::{compute_label, Direction, PerfMetricKind};
use super::record::{AppClass, Matrix, RunRecord, Scenario, TraceDataset};
use super::schema::{MetricCategory, MetricSchema, NEIGHBOR_PREFIX};
use crate::error::{io_err, Error, Result};
use crate::par::{map_slice, Parallelism};

pub const SCHEMA_FILE: &str = "schema.csv";
pub const APPS_FILE: &str = "apps.csv";
pub const RUNS_DIR: &str = "runs";
pub const META_FILE: &str = "meta.json";
pub const TRACE_FILE: &str = "trace.csv";

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RunMeta {
    app_id: String,
    scenario: Scenario,
    pm_kind: String,
    direction: Direction,
    pm_ideal: f64,
    pm_actual: f64,
    #[serde(rename = "label_P")]
    label: f64,
    #[serde(rename = "duration_T")]
    duration: usize,
}

pub(crate) fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

fn format_err(path: &Path, msg: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        msg: msg.into(),
    }
}

pub fn write_schema(schema: &MetricSchema, path: &Path) -> Result<()> {
    fs::write(path, schema.to_csv()).map_err(io_err(path))
}

pub fn read_schema(path: &Path) -> Result<MetricSchema> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("index,name,category") {
        return Err(format_err(path, "header must be `index,name,category`"));
    }
    let mut names = Vec::new();
    let mut cats = Vec::new();
    for (i, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let row = i + 1;
        let parts: Vec<&str> = line.split(',').map(str::trim).collect();
        let parse_err = |column: &str, msg: String| Error::Parse {
            path: path.to_path_buf(),
            row,
            column: column.to_string(),
            msg,
        };
        if parts.len() != 3 {
            return Err(parse_err("*", format!("expected 3 fields, found {}", parts.len())));
        }
        let idx: usize = parts[0]
            .parse()
            .map_err(|_| parse_err("index", format!("not an integer: {:?}", parts[0])))?;
        if idx != i {
            return Err(parse_err("index", format!("expected {i}, found {idx}")));
        }
        let cat = MetricCategory::parse(parts[2])
            .ok_or_else(|| parse_err("category", format!("unknown category {:?}", parts[2])))?;
        names.push(parts[1].to_string());
        cats.push(cat);
    }
    if names.is_empty() || names.len() % 2 != 0 {
        return Err(format_err(
            path,
            format!("expected an even, non-zero number of columns, found {}", names.len()),
        ));
    }
    let n = names.len() / 2;
    for i in 0..n {
        let expected = format!("{NEIGHBOR_PREFIX}{}", names[i]);
        if names[n + i] != expected || cats[n + i] != cats[i] {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                row: n + i + 1,
                column: "name".into(),
                msg: format!("expected neighbour column {expected:?}, found {:?}", names[n + i]),
            });
        }
    }
    names.truncate(n);
    cats.truncate(n);
    MetricSchema::new(names, cats).map_err(|e| format_err(path, e.to_string()))
}

/// Writes `meta.json` and `trace.csv` into `dir` (created if missing).
pub fn write_run(record: &RunRecord, schema: &MetricSchema, dir: &Path) -> Result<()> {
    record.check(schema)?;
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let meta = RunMeta {
        app_id: record.app_id.clone(),
        scenario: record.scenario,
        pm_kind: record.pm_kind.name.clone(),
        direction: record.pm_kind.direction,
        pm_ideal: record.pm_ideal,
        pm_actual: record.pm_actual,
        label: record.label,
        duration: record.duration(),
    };
    let meta_path = dir.join(META_FILE);
    let mut text = serde_json::to_string_pretty(&meta)?;
    text.push('\n');
    fs::write(&meta_path, text).map_err(io_err(&meta_path))?;

    let m = &record.matrix;
    let mut out = String::with_capacity(m.rows() * m.cols() * 20);
    out.push_str(&schema.column_names().join(","));
    out.push('\n');
    for t in 0..m.cols() {
        for r in 0..m.rows() {
            if r > 0 {
                out.push(',');
            }
            out.push_str(&fmt_f64(m.get(r, t)));
        }
        out.push('\n');
    }
    let trace_path = dir.join(TRACE_FILE);
    fs::write(&trace_path, out).map_err(io_err(&trace_path))
}

/// Reads one run directory, validating it against `schema`.
pub fn read_run(dir: &Path, schema: &MetricSchema) -> Result<RunRecord> {
    let meta_path = dir.join(META_FILE);
    let meta_text = fs::read_to_string(&meta_path).map_err(io_err(&meta_path))?;
    let meta: RunMeta = serde_json::from_str(&meta_text)
        .map_err(|e| format_err(&meta_path, format!("invalid metadata: {e}")))?;

    let trace_path = dir.join(TRACE_FILE);
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(&trace_path)
        .map_err(|e| format_err(&trace_path, e.to_string()))?;
    let header = reader
        .headers()
        .map_err(|e| format_err(&trace_path, e.to_string()))?
        .clone();
    let columns = schema.column_names();
    let width = columns.len();
    if header.len() != width {
        return Err(Error::Parse {
            path: trace_path,
            row: 0,
            column: "header".into(),
            msg: format!("expected {width} rows (metric columns), found {}", header.len()),
        });
    }
    for (i, (got, want)) in header.iter().zip(&columns).enumerate() {
        if got.trim() != want {
            return Err(Error::Parse {
                path: trace_path,
                row: 0,
                column: format!("{i}"),
                msg: format!("header mismatch: expected {want:?}, found {got:?}"),
            });
        }
    }
    let mut seconds: Vec<Vec<f64>> = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| Error::Parse {
            path: trace_path.clone(),
            row,
            column: "*".into(),
            msg: e.to_string(),
        })?;
        if rec.len() != width {
            return Err(Error::Parse {
                path: trace_path,
                row,
                column: "*".into(),
                msg: format!("expected {width} fields, found {}", rec.len()),
            });
        }
        let mut vals = Vec::with_capacity(width);
        for (j, cell) in rec.iter().enumerate() {
            let v: f64 = cell.trim().parse().map_err(|_| Error::Parse {
                path: trace_path.clone(),
                row,
                column: columns[j].clone(),
                msg: format!("not a number: {cell:?}"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    path: trace_path.clone(),
                    row,
                    column: columns[j].clone(),
                    msg: format!("non-finite value {cell:?}"),
                });
            }
            vals.push(v);
        }
        seconds.push(vals);
    }
    if seconds.len() != meta.duration {
        return Err(format_err(
            &trace_path,
            format!("duration_T is {} but trace has {} rows", meta.duration, seconds.len()),
        ));
    }
    if seconds.is_empty() {
        return Err(format_err(&trace_path, "trace has no rows"));
    }
    let matrix = Matrix::from_fn(width, seconds.len(), |r, t| seconds[t][r]);
    let pm_kind = PerfMetricKind::new(meta.pm_kind, meta.direction);
    let expected = compute_label(meta.pm_ideal, meta.pm_actual, &pm_kind)?;
    if (expected - meta.label).abs() > 1e-12 {
        return Err(Error::Consistency(format!(
            "{}: stored label_P {} but pm_ideal/pm_actual imply {}",
            meta_path.display(),
            meta.label,
            expected
        )));
    }
    let run_id = dir
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    if dir
        .parent()
        .and_then(Path::file_name)
        .is_some_and(|a| a.to_string_lossy() != meta.app_id)
    {
        return Err(format_err(&meta_path, format!("app_id {:?} does not match directory", meta.app_id)));
    }
    let record = RunRecord {
        app_id: meta.app_id,
        run_id,
        scenario: meta.scenario,
        matrix,
        pm_kind,
        pm_ideal: meta.pm_ideal,
        pm_actual: meta.pm_actual,
        label: meta.label,
    };
    record.check(schema)?;
    Ok(record)
}

fn write_apps(apps: &BTreeMap<String, AppClass>, path: &Path) -> Result<()> {
    let mut out = String::from("app_id,class\n");
    for (a, c) in apps {
        out.push_str(&format!("{a},{}\n", c.as_str()));
    }
    fs::write(path, out).map_err(io_err(path))
}

fn read_apps(path: &Path) -> Result<BTreeMap<String, AppClass>> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut apps = BTreeMap::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let (a, c) = line.split_once(',').ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            row: i,
            column: "*".into(),
            msg: "expected `app_id,class`".into(),
        })?;
        let class = match c.trim() {
            "static_only" => AppClass::StaticOnly,
            "mixed" => AppClass::Mixed,
            other => {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    row: i,
                    column: "class".into(),
                    msg: format!("unknown class {other:?}"),
                })
            }
        };
        apps.insert(a.trim().to_string(), class);
    }
    Ok(apps)
}

pub fn write_dataset(ds: &TraceDataset, root: &Path) -> Result<()> {
    fs::create_dir_all(root.join(RUNS_DIR)).map_err(io_err(root))?;
    write_schema(&ds.schema, &root.join(SCHEMA_FILE))?;
    write_apps(&ds.apps, &root.join(APPS_FILE))?;
    for r in &ds.runs {
        write_run(r, &ds.schema, &run_dir(root, &r.app_id, &r.run_id))?;
    }
    Ok(())
}

pub fn run_dir(root: &Path, app_id: &str, run_id: &str) -> PathBuf {
    root.join(RUNS_DIR).join(app_id).join(run_id)
}

fn sorted_subdirs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(io_err(dir))? {
        let entry = entry.map_err(io_err(dir))?;
        if entry.file_type().map_err(io_err(entry.path()))?.is_dir() {
            out.push(entry.path());
        }
    }
    out.sort();
    Ok(out)
}

fn run_dirs(root: &Path) -> Result<Vec<PathBuf>> {
    let runs = root.join(RUNS_DIR);
    if !runs.exists() {
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    for app in sorted_subdirs(&runs)? {
        out.extend(sorted_subdirs(&app)?);
    }
    Ok(out)
}

/// Reads a dataset directory; runs are parsed in parallel and kept in
/// `(app_id, run_id)` order.
pub fn read_dataset(root: &Path, par: Parallelism) -> Result<TraceDataset> {
    let schema = read_schema(&root.join(SCHEMA_FILE))?;
    let dirs = run_dirs(root)?;
    let runs = map_slice(par, &dirs, |d| read_run(d, &schema))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let apps_path = root.join(APPS_FILE);
    let mut ds = TraceDataset::from_runs(schema, runs);
    if apps_path.exists() {
        ds.apps = read_apps(&apps_path)?;
    }
    Ok(ds)
}

/// Checks a dataset directory against every trace invariant and returns
/// all violations found (empty when the dataset is valid).
pub fn validate_dataset(root: &Path, par: Parallelism) -> Vec<String> {
    let schema = match read_schema(&root.join(SCHEMA_FILE)) {
        Ok(s) => s,
        Err(e) => return vec![e.to_string()],
    };
    let dirs = match run_dirs(root) {
        Ok(d) => d,
        Err(e) => return vec![e.to_string()],
    };
    let mut violations = Vec::new();
    let mut runs = Vec::new();
    for res in map_slice(par, &dirs, |d| read_run(d, &schema)) {
        match res {
            Ok(r) => runs.push(r),
            Err(e) => violations.push(e.to_string()),
        }
    }
    let mut ds = TraceDataset::from_runs(schema, runs);
    let apps_path = root.join(APPS_FILE);
    if apps_path.exists() {
        match read_apps(&apps_path) {
            Ok(apps) => ds.apps = apps,
            Err(e) => violations.push(e.to_string()),
        }
    }
    violations.extend(ds.violations());
    violations
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::traceio::Direction;

    fn schema() -> MetricSchema {
        MetricSchema::subset(&["cpu_util", "cycles", "retiring"]).unwrap()
    }

    fn record(schema: &MetricSchema, t: usize) -> RunRecord {
        let kind = PerfMetricKind::new("Latency (s)", Direction::LowerIsBetter);
        RunRecord {
            app_id: "hbase".into(),
            run_id: "run_0000".into(),
            scenario: Scenario::Static,
            matrix: Matrix::from_fn(schema.width(), t, |r, c| {
                (r as f64 + 1.0) / 3.0 + c as f64 * 1e-7 - 1e-17
            }),
            pm_ideal: 10.0,
            pm_actual: 20.0,
            label: compute_label(10.0, 20.0, &kind).unwrap(),
            pm_kind: kind,
        }
    }

    #[test]
    fn run_round_trip_is_exact() {
        let s = schema();
        let r = record(&s, 5);
        let dir = tempfile::tempdir().unwrap();
        let d = dir.path().join("hbase/run_0000");
        write_run(&r, &s, &d).unwrap();
        let back = read_run(&d, &s).unwrap();
        assert!(back.matrix.max_abs_diff(&r.matrix) <= 1e-12);
        assert_eq!(back, r);
    }

    #[test]
    fn missing_metric_column_is_reported() {
        let s = MetricSchema::full();
        let mut r = record(&s, 3);
        r.matrix = Matrix::from_fn(205, 3, |_, _| 1.0);
        let dir = tempfile::tempdir().unwrap();
        let d = dir.path().join("hbase/run_0000");
        fs::create_dir_all(&d).unwrap();
        // hand-write a 205-column trace with a valid meta
        let cols = s.column_names();
        let mut text = cols[..205].join(",");
        text.push('\n');
        for _ in 0..3 {
            text.push_str(&vec!["1.0"; 205].join(","));
            text.push('\n');
        }
        fs::write(d.join(TRACE_FILE), text).unwrap();
        let meta = r#"{"app_id":"hbase","scenario":"static","pm_kind":"Latency (s)","direction":"lower_is_better","pm_ideal":10.0,"pm_actual":20.0,"label_P":0.5,"duration_T":3}"#;
        fs::write(d.join(META_FILE), meta).unwrap();
        let err = read_run(&d, &s).unwrap_err().to_string();
        assert!(err.contains("expected 206 rows"), "{err}");
    }

    #[test]
    fn inconsistent_label_is_rejected() {
        let s = schema();
        let r = record(&s, 2);
        let dir = tempfile::tempdir().unwrap();
        let d = dir.path().join("hbase/run_0000");
        write_run(&r, &s, &d).unwrap();
        // pm fields imply 0.4, stored label says 0.5
        let meta = fs::read_to_string(d.join(META_FILE)).unwrap();
        fs::write(d.join(META_FILE), meta.replace("\"pm_actual\": 20.0", "\"pm_actual\": 25.0")).unwrap();
        let err = read_run(&d, &s).unwrap_err();
        assert!(matches!(err, Error::Consistency(_)), "{err}");
    }

    #[test]
    fn non_numeric_cell_names_row_and_column() {
        let s = schema();
        let r = record(&s, 2);
        let dir = tempfile::tempdir().unwrap();
        let d = dir.path().join("hbase/run_0000");
        write_run(&r, &s, &d).unwrap();
        let trace = fs::read_to_string(d.join(TRACE_FILE)).unwrap();
        let mut lines: Vec<String> = trace.lines().map(String::from).collect();
        let mut cells: Vec<&str> = lines[2].split(',').collect();
        cells[1] = "abc";
        lines[2] = cells.join(",");
        fs::write(d.join(TRACE_FILE), lines.join("\n")).unwrap();
        match read_run(&d, &s).unwrap_err() {
            Error::Parse { row, column, .. } => {
                assert_eq!(row, 2);
                assert_eq!(column, "cycles");
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn schema_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join(SCHEMA_FILE);
        write_schema(&MetricSchema::full(), &p).unwrap();
        assert_eq!(read_schema(&p).unwrap(), MetricSchema::full());
    }
}
