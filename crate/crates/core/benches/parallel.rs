//! Sequential vs rayon execution of the data-parallel kernels.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use cloudformer::baselines::{featurize_all, fit_forest, ForestParams};
use cloudformer::model::{CloudFormer, CloudFormerConfig};
use cloudformer::preprocess::{fit_norm, normalize_runs, pad_batch, NormRun};
use cloudformer::synthgen::{gen_dataset, GenConfig};
use cloudformer::traceio::MetricSchema;
use cloudformer::train::batch_gradient;
use cloudformer::{Parallelism, SeedStream};

const MODES: [(&str, Parallelism); 2] = [("sequential", Parallelism::Sequential), ("rayon", Parallelism::Rayon)];

fn runs() -> Vec<NormRun> {
    let cfg = GenConfig { runs_per_app: 6, t_min: 16, t_max: 48, ..GenConfig::default() };
    let ds = gen_dataset(&cfg, &MetricSchema::desk(), Parallelism::Rayon).unwrap();
    let refs: Vec<_> = ds.runs.iter().collect();
    let stats = fit_norm(&refs, Parallelism::Rayon).unwrap();
    normalize_runs(&refs, &stats, Parallelism::Rayon).unwrap()
}

fn bench(c: &mut Criterion) {
    let runs = runs();
    let model = CloudFormer::new(CloudFormerConfig::desk(24), SeedStream::root(0)).unwrap();
    let batch = pad_batch(&runs.iter().take(32).collect::<Vec<_>>()).unwrap();
    let (x, y) = featurize_all(&runs).unwrap();
    let forest = ForestParams { n_trees: 32, ..ForestParams::default() };

    let mut g = c.benchmark_group("batch_gradient");
    g.sample_size(10);
    for (name, mode) in MODES {
        g.bench_with_input(BenchmarkId::from_parameter(name), &mode, |b, &mode| {
            b.iter(|| batch_gradient(&model, &batch, true, SeedStream::root(1), mode).unwrap())
        });
    }
    g.finish();

    let mut g = c.benchmark_group("fit_forest");
    g.sample_size(10);
    for (name, mode) in MODES {
        g.bench_with_input(BenchmarkId::from_parameter(name), &mode, |b, &mode| {
            b.iter(|| fit_forest(&x, &y, &forest, SeedStream::root(2), mode).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);
