use cloudformer::model::{CloudFormer, CloudFormerConfig};
use cloudformer::preprocess::{fit_norm, normalize_runs, NormRun};
use cloudformer::synthgen::{gen_dataset, GenConfig};
use cloudformer::train::{predict_runs, train_loop, TrainConfig};
use cloudformer::traceio::MetricSchema;
use cloudformer::{Parallelism, SeedStream};

fn eight_runs() -> Vec<NormRun> {
    let cfg = GenConfig { runs_per_app: 4, ..GenConfig::default() };
    let ds = gen_dataset(&cfg, &MetricSchema::desk(), Parallelism::Rayon).unwrap();
    let runs: Vec<_> = ds.runs.iter().step_by(5).take(8).collect();
    let stats = fit_norm(&runs, Parallelism::Rayon).unwrap();
    normalize_runs(&runs, &stats, Parallelism::Rayon).unwrap()
}

#[test]
fn cloudformer_memorizes_eight_runs() {
    let runs = eight_runs();
    let mut m = CloudFormer::new(CloudFormerConfig::tiny(24), SeedStream::root(0)).unwrap();
    let cfg = TrainConfig { epochs: 500, batch_size: 8, peak_lr: 1e-2, patience: usize::MAX, ..TrainConfig::default() };
    let t = std::time::Instant::now();
    let log = train_loop(&mut m, &runs, &[], &cfg).unwrap();
    let pred = predict_runs(&m, &runs, 8, Parallelism::Rayon).unwrap();
    let mae = pred.iter().zip(&runs).map(|(p, r)| (p - r.label).abs()).sum::<f64>() / 8.0 * 100.0;
    eprintln!("mae {mae} in {:?}; labels {:?}", t.elapsed(), runs.iter().map(|r| r.label).collect::<Vec<_>>());
    assert!(mae < 1.0);
    assert_eq!(log.steps, 500);
}

#[test]
fn lstm_memorizes_eight_runs() {
    use cloudformer::baselines::{Lstm, LstmConfig};
    let runs = eight_runs();
    let mut m = Lstm::new(LstmConfig { width: 24, hidden: 16 }, SeedStream::root(0)).unwrap();
    let cfg = TrainConfig { epochs: 500, batch_size: 8, peak_lr: 1e-2, patience: usize::MAX, ..TrainConfig::default() };
    train_loop(&mut m, &runs, &[], &cfg).unwrap();
    let pred = predict_runs(&m, &runs, 8, Parallelism::Rayon).unwrap();
    let mae = pred.iter().zip(&runs).map(|(p, r)| (p - r.label).abs()).sum::<f64>() / 8.0 * 100.0;
    assert!(mae < 2.0, "lstm mae {mae}");
}

#[test]
fn training_is_deterministic_across_thread_modes() {
    let runs = eight_runs();
    let run = |par| {
        let mut m = CloudFormer::new(CloudFormerConfig::tiny(24), SeedStream::root(1)).unwrap();
        let cfg = TrainConfig { epochs: 5, batch_size: 3, peak_lr: 1e-3, parallelism: par, ..TrainConfig::default() };
        let log = train_loop(&mut m, &runs[..6], &runs[6..], &cfg).unwrap();
        (m.store.to_json().unwrap(), log.epochs.iter().map(|e| e.train_loss).collect::<Vec<_>>())
    };
    assert_eq!(run(Parallelism::Rayon), run(Parallelism::Sequential));
}

#[test]
fn loss_decreases_and_empty_train_set_is_an_error() {
    let runs = eight_runs();
    let mut m = CloudFormer::new(CloudFormerConfig::tiny(24), SeedStream::root(2)).unwrap();
    assert!(train_loop(&mut m, &[], &[], &TrainConfig::default()).is_err());
    let cfg = TrainConfig { epochs: 60, batch_size: 8, peak_lr: 1e-2, patience: usize::MAX, ..TrainConfig::default() };
    let log = train_loop(&mut m, &runs, &[], &cfg).unwrap();
    assert!(log.epochs.last().unwrap().train_loss < log.epochs[0].train_loss);
    assert_eq!(log.lr_trace.len(), log.steps);
}
