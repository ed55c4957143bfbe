use cloudformer::eval::{run_matrix, EvalConfig, EvalReport, Method};
use cloudformer::synthgen::{gen_dataset, GenConfig};
use cloudformer::traceio::MetricSchema;
use cloudformer::Parallelism;

fn quick_report(par: Parallelism) -> EvalReport {
    let schema = MetricSchema::desk();
    let ds = gen_dataset(&GenConfig { runs_per_app: 4, t_min: 8, t_max: 16, ..GenConfig::default() }, &schema, Parallelism::Rayon).unwrap();
    let mut cfg = EvalConfig::desk(schema.width());
    cfg.seeds = vec![0, 1];
    cfg.methods = vec![Method::Lr, Method::Glr, Method::Dt, Method::CfSystem];
    cfg.cf_train.epochs = 3;
    cfg.tune_budget = 3;
    cfg.parallelism = par;
    run_matrix(&ds, &cfg).unwrap()
}

#[test]
fn report_is_thread_count_independent_and_round_trips() {
    let a = quick_report(Parallelism::Rayon);
    let mut b = quick_report(Parallelism::Sequential);
    b.config.parallelism = a.config.parallelism;
    assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());

    let dir = tempfile::tempdir().unwrap();
    let files = a.emit(dir.path()).unwrap();
    assert!(files.iter().any(|f| f == "report.json"));
    let back = EvalReport::load(&dir.path().join("report.json")).unwrap();
    assert_eq!(back, a);

    // One row per (method, test app, seed) in cells.csv; one per method in table.csv.
    let cells = std::fs::read_to_string(dir.path().join("cells.csv")).unwrap();
    assert_eq!(cells.lines().count() - 1, 4 * 4 * 2);
    let table = std::fs::read_to_string(dir.path().join("table.csv")).unwrap();
    assert_eq!(table.lines().count() - 1, 4);
    for seed in [0, 1] {
        let heat = std::fs::read_to_string(dir.path().join(format!("heatmap_seed{seed}.csv"))).unwrap();
        assert_eq!(heat.lines().count() - 1, 4 * 4);
    }
}

#[test]
fn aggregates_are_consistent_with_cells() {
    let r = quick_report(Parallelism::Rayon);
    for agg in &r.aggregates {
        let maes: Vec<f64> = r.cells.iter().filter(|c| c.method == agg.method).map(|c| c.pooled.mae).collect();
        let mean = maes.iter().sum::<f64>() / maes.len() as f64;
        assert!((mean - agg.mae_mean).abs() < 1e-12);
        assert!((agg.bands.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((agg.bands_cumulative[5] - 1.0).abs() < 1e-12);
    }
}
