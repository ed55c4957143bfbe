use cloudformer::baselines::{fit_cart, fit_forest, fit_gamma_glm, fit_linear, tune, Candidate, FeatureMatrix, FeatureRule, ForestParams, GlmOptions, TreeParams};
use cloudformer::{Parallelism, SeedStream};
use rand::Rng;
use rand_distr::{Distribution, Gamma};

fn uniform_matrix(n: usize, p: usize, seed: u64) -> FeatureMatrix {
    let mut rng = SeedStream::root(seed).rng();
    let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..p).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    FeatureMatrix::from_rows(&rows).unwrap()
}

#[test]
fn least_squares_recovers_planted_coefficients() {
    let x = uniform_matrix(200, 5, 1);
    let w = [0.3, -1.2, 2.5, 0.0, 0.7];
    let y: Vec<f64> = (0..x.rows).map(|i| 0.4 + x.row(i).iter().zip(&w).map(|(a, b)| a * b).sum::<f64>()).collect();
    let fit = fit_linear(&x, &y).unwrap();
    for (a, b) in fit.weights.iter().zip(&w) {
        assert!((a - b).abs() < 1e-8);
    }
    assert!((fit.intercept - 0.4).abs() < 1e-8);
}

#[test]
fn gamma_irls_recovers_planted_inverse_link() {
    // 1 / mu = 0.5 + 2 x, shape 5.
    let n = 10_000;
    let mut rng = SeedStream::root(11).rng();
    let xs: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
    let shape = 5.0;
    let y: Vec<f64> = xs
        .iter()
        .map(|&x| {
            let mu = 1.0 / (0.5 + 2.0 * x);
            Gamma::new(shape, mu / shape).unwrap().sample(&mut rng)
        })
        .collect();
    let rows: Vec<Vec<f64>> = xs.iter().map(|&x| vec![x]).collect();
    let fit = fit_gamma_glm(&FeatureMatrix::from_rows(&rows).unwrap(), &y, &GlmOptions::default()).unwrap();
    assert!(fit.converged);
    let (slope, intercept) = (fit.beta[0], fit.beta[1]);
    assert!((intercept - 0.5).abs() / 0.5 < 0.05, "intercept {intercept}");
    assert!((slope - 2.0).abs() / 2.0 < 0.05, "slope {slope}");
    assert!(fit.deviance_trace.windows(2).all(|w| w[1] <= w[0] + 1e-9));
}

#[test]
fn unrestricted_tree_interpolates_distinct_points() {
    let x = uniform_matrix(150, 4, 2);
    let y: Vec<f64> = (0..x.rows).map(|i| (x.get(i, 0) * 3.0).sin() + x.get(i, 2)).collect();
    let t = fit_cart(&x, &y, &TreeParams { max_depth: None, min_leaf: 1, min_split: 2, max_features: FeatureRule::All }, SeedStream::root(0)).unwrap();
    let mse: f64 = t.predict(&x).iter().zip(&y).map(|(p, y)| (p - y).powi(2)).sum::<f64>() / y.len() as f64;
    assert_eq!(mse, 0.0);
}

#[test]
fn bagging_reduces_test_error_over_single_tree() {
    let f = |r: &[f64]| (r[0] * 3.0).sin() + r[1] * r[2];
    let mut rng = SeedStream::root(5).rng();
    let x = uniform_matrix(300, 3, 3);
    let y: Vec<f64> = (0..x.rows).map(|i| f(x.row(i)) + rng.random_range(-0.3..0.3)).collect();
    let xt = uniform_matrix(500, 3, 4);
    let yt: Vec<f64> = (0..xt.rows).map(|i| f(xt.row(i))).collect();
    let mse = |p: Vec<f64>| p.iter().zip(&yt).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / yt.len() as f64;
    let tree = TreeParams { max_depth: None, min_leaf: 1, min_split: 2, max_features: FeatureRule::All };
    let single = mse(fit_cart(&x, &y, &tree, SeedStream::root(0)).unwrap().predict(&xt));
    let params = ForestParams { n_trees: 60, tree, feature_frac: 1.0, bootstrap: true };
    let forest = fit_forest(&x, &y, &params, SeedStream::root(0), Parallelism::Rayon).unwrap();
    assert!(mse(forest.predict(&xt)) < single);
    let again = fit_forest(&x, &y, &params, SeedStream::root(0), Parallelism::Sequential).unwrap();
    assert_eq!(forest, again);
}

#[test]
fn tuning_selects_the_planted_candidate() {
    // A step function of feature 0: a depth-1 stump is exact, a depth-1
    // stump on a random single feature usually is not, and a min-leaf of
    // half the data cannot place the step.
    let x = uniform_matrix(120, 3, 6);
    let y: Vec<f64> = (0..x.rows).map(|i| if x.get(i, 0) > 0.1 { 0.8 } else { 0.2 }).collect();
    let groups: Vec<String> = (0..x.rows).map(|i| format!("app{}", i % 6)).collect();
    let bad = Candidate::Dt(TreeParams { max_depth: Some(1), min_leaf: 60, min_split: 2, max_features: FeatureRule::All });
    let good = Candidate::Dt(TreeParams { max_depth: Some(3), min_leaf: 1, min_split: 2, max_features: FeatureRule::All });
    let r = tune(&[bad, bad, good, bad], &x, &y, &groups, 3, SeedStream::root(0), Parallelism::Rayon).unwrap();
    assert_eq!(r.best_index, 2);
    assert_eq!(r.best, good);
}

#[test]
fn tuning_rejects_more_folds_than_groups() {
    let x = uniform_matrix(10, 2, 0);
    let y = vec![0.5; 10];
    let groups: Vec<String> = (0..10).map(|i| format!("a{}", i % 2)).collect();
    let c = Candidate::Dt(TreeParams::default());
    assert!(tune(&[c, c], &x, &y, &groups, 3, SeedStream::root(0), Parallelism::Sequential).is_err());
}
