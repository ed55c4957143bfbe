use std::collections::BTreeSet;

use cloudformer::preprocess::{fit_norm, make_split, normalize_runs, pad_batch, TEST_MIXED, TEST_STATIC, TRAIN_MIXED, TRAIN_STATIC};
use cloudformer::synthgen::{gen_dataset, GenConfig};
use cloudformer::traceio::{compute_label, read_dataset, validate_dataset, write_dataset, AppClass, MetricSchema, TraceDataset};
use cloudformer::Parallelism;

fn small(runs_per_app: usize) -> TraceDataset {
    let cfg = GenConfig { runs_per_app, t_min: 8, t_max: 20, ..GenConfig::default() };
    gen_dataset(&cfg, &MetricSchema::desk(), Parallelism::Rayon).unwrap()
}

#[test]
fn generated_dataset_is_valid_and_deterministic() {
    let a = small(6);
    let b = gen_dataset(&GenConfig { runs_per_app: 6, t_min: 8, t_max: 20, ..GenConfig::default() }, &MetricSchema::desk(), Parallelism::Sequential).unwrap();
    assert_eq!(a, b);
    assert!(a.violations().is_empty(), "{:?}", a.violations());
    assert_eq!(a.runs.len(), 66);
    assert_eq!(a.apps_of(AppClass::StaticOnly).len(), 6);
    assert_eq!(a.apps_of(AppClass::Mixed).len(), 5);
    for r in &a.runs {
        assert!(r.label > 0.0 && r.label <= 1.0);
        let expect = compute_label(r.pm_ideal, r.pm_actual, &r.pm_kind).unwrap();
        assert!((expect - r.label).abs() < 1e-12);
        assert!((8..=20).contains(&r.duration()));
    }
}

#[test]
fn dataset_round_trips_through_disk() {
    let ds = small(3);
    let dir = tempfile::tempdir().unwrap();
    write_dataset(&ds, dir.path()).unwrap();
    assert!(validate_dataset(dir.path(), Parallelism::Rayon).is_empty());
    let back = read_dataset(dir.path(), Parallelism::Rayon).unwrap();
    assert_eq!(back, ds);
}

#[test]
fn split_composition_and_determinism() {
    let ds = small(2);
    let mut distinct = BTreeSet::new();
    for seed in 0..6 {
        let s = make_split(&ds, seed).unwrap();
        assert_eq!(s, make_split(&ds, seed).unwrap());
        s.check(&ds).unwrap();
        let count = |apps: &[String], class| apps.iter().filter(|a| ds.apps[*a] == class).count();
        assert_eq!(count(&s.train_apps, AppClass::StaticOnly), TRAIN_STATIC);
        assert_eq!(count(&s.train_apps, AppClass::Mixed), TRAIN_MIXED);
        assert_eq!(count(&s.test_apps, AppClass::StaticOnly), TEST_STATIC);
        assert_eq!(count(&s.test_apps, AppClass::Mixed), TEST_MIXED);
        assert!(s.train_apps.iter().all(|a| !s.test_apps.contains(a)));
        distinct.insert(s.test_apps.clone());
    }
    assert!(distinct.len() >= 3, "only {} distinct test sets", distinct.len());
}

#[test]
fn split_needs_enough_apps() {
    let cfg = GenConfig { n_apps: 8, runs_per_app: 2, t_min: 8, t_max: 10, ..GenConfig::default() };
    let ds = gen_dataset(&cfg, &MetricSchema::desk(), Parallelism::Rayon).unwrap();
    assert!(make_split(&ds, 0).is_err());
}

#[test]
fn normalization_sees_only_training_apps() {
    let ds = small(3);
    let split = make_split(&ds, 1).unwrap();
    let train = split.train_runs(&ds);
    let stats = fit_norm(&train, Parallelism::Rayon).unwrap();

    // Perturbing test runs must not move the statistics.
    let mut poisoned = ds.clone();
    for r in poisoned.runs.iter_mut().filter(|r| split.test_apps.contains(&r.app_id)) {
        for c in 0..r.matrix.cols() {
            r.matrix.set(0, c, 1e6);
        }
    }
    assert_eq!(fit_norm(&split.train_runs(&poisoned), Parallelism::Rayon).unwrap(), stats);

    // Normalized training data has zero mean and unit population std per metric.
    let norm = normalize_runs(&train, &stats, Parallelism::Rayon).unwrap();
    for s in 0..stats.width() {
        let vals: Vec<f64> = norm.iter().flat_map(|r| r.matrix.row(s).to_vec()).collect();
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 1e-9);
        if stats.std[s] > 1e-8 {
            assert!((var - 1.0).abs() < 1e-9);
        }
    }
}

#[test]
fn padded_batch_layout() {
    let ds = small(2);
    let runs: Vec<_> = ds.runs.iter().take(4).collect();
    let stats = fit_norm(&runs, Parallelism::Sequential).unwrap();
    let norm = normalize_runs(&runs, &stats, Parallelism::Sequential).unwrap();
    let refs: Vec<_> = norm.iter().collect();
    let b = pad_batch(&refs).unwrap();
    assert_eq!(b.t_max, norm.iter().map(|r| r.len()).max().unwrap());
    for (i, r) in norm.iter().enumerate() {
        let s = b.sample(i);
        assert_eq!(s.mask.iter().filter(|&&m| m).count(), r.len());
        for t in 0..b.t_max {
            for m in 0..b.width {
                let expect = if t < r.len() { r.matrix.get(m, t) } else { 0.0 };
                assert_eq!(s.at(t, m), expect);
            }
        }
    }
}

