use cloudformer::baselines::{Lstm, LstmConfig};
use cloudformer::model::{CloudFormer, CloudFormerConfig, Variant};
use cloudformer::nn::gradcheck::check_gradients;
use cloudformer::preprocess::Batch;
use cloudformer::SeedStream;
use rand::Rng;
use rand_distr::StandardNormal;

const S: usize = 6;

fn random_sample(stream: SeedStream, t_max: usize) -> (Batch, f64) {
    let mut rng = stream.rng();
    let len = rng.random_range(1..=t_max);
    let values = (0..t_max * S)
        .map(|i| if i / S < len { rng.sample::<f64, _>(StandardNormal) } else { 0.0 })
        .collect();
    let label = rng.random_range(0.05..0.95);
    let batch = Batch {
        values,
        mask: (0..t_max).map(|t| t < len).collect(),
        labels: vec![label],
        lengths: vec![len],
        t_max,
        width: S,
    };
    (batch, label)
}

fn check_cf(variant: Variant, seeds: u64) {
    let (mut kinks, mut agree) = (0, 0);
    for seed in 0..seeds {
        let root = SeedStream::root(seed);
        let mut m = CloudFormer::new(CloudFormerConfig::tiny(S).with_variant(variant), root.named("init")).unwrap();
        let (b, y) = random_sample(root.named("sample"), 6);
        let r = check_gradients(&mut m, b.sample(0), y, 1e-5, 1e-6, 1e-4).unwrap();
        assert!(r.max_rel_err < 1e-4, "seed {seed}: {r:?}");
        assert!(r.checked > 0);
        kinks += r.kinks;
        agree += r.kinks_agreeing;
    }
    eprintln!("{variant:?}: {kinks} kink-crossing perturbations ({agree} agreeing) over {seeds} seeds");
}

#[test]
fn cloudformer_gradients_match_finite_differences() {
    check_cf(Variant::Full, 100);
}

#[test]
fn single_branch_gradients_match_finite_differences() {
    check_cf(Variant::TemporalOnly, 5);
    check_cf(Variant::SystemOnly, 5);
}

#[test]
fn lstm_gradients_match_finite_differences() {
    for seed in 0..10 {
        let root = SeedStream::root(seed);
        let mut m = Lstm::new(LstmConfig { width: S, hidden: 5 }, root.named("init")).unwrap();
        let (b, y) = random_sample(root.named("sample"), 6);
        let r = check_gradients(&mut m, b.sample(0), y, 1e-5, 1e-6, 1e-4).unwrap();
        assert_eq!(r.kinks, 0);
        assert!(r.max_rel_err < 1e-4, "seed {seed}: {r:?}");
    }
}
