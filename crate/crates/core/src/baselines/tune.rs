use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::tree::{fit_cart, fit_forest, FeatureRule, ForestParams, TreeParams};
use super::{FeatureMatrix, Forest, Tree};
use crate::error::{Error, Result};
use crate::par::{map_range, Parallelism};
use crate::seed::SeedStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TreeMethod {
    Dt,
    Rf,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Candidate {
    Dt(TreeParams),
    Rf(ForestParams),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Fitted {
    Tree(Tree),
    Forest(Forest),
}

impl Fitted {
    pub fn predict(&self, x: &FeatureMatrix) -> Vec<f64> {
        match self {
            Fitted::Tree(t) => t.predict(x),
            Fitted::Forest(f) => f.predict(x),
        }
    }
}

impl Candidate {
    pub fn fit(&self, x: &FeatureMatrix, y: &[f64], stream: SeedStream, par: Parallelism) -> Result<Fitted> {
        Ok(match self {
            Candidate::Dt(p) => Fitted::Tree(fit_cart(x, y, p, stream)?),
            Candidate::Rf(p) => Fitted::Forest(fit_forest(x, y, p, stream, par)?),
        })
    }
}

/// Seeded random draws from the search space of `method`.
///
/// * DT: max depth in {2..=20, unlimited}, min leaf 1..=20, min split
///   2..=40, per-split features all / sqrt / log2 / half.
/// * RF: 10..=100 trees, max depth in {4..=20, unlimited}, min leaf
///   1..=10, feature fraction 0.2..=1.0.
pub fn random_candidates(method: TreeMethod, budget: usize, stream: SeedStream) -> Vec<Candidate> {
    let mut rng = stream.rng();
    (0..budget)
        .map(|_| match method {
            TreeMethod::Dt => {
                let depth = rng.random_range(2..=21);
                Candidate::Dt(TreeParams {
                    max_depth: (depth <= 20).then_some(depth),
                    min_leaf: rng.random_range(1..=20),
                    min_split: rng.random_range(2..=40),
                    max_features: [FeatureRule::All, FeatureRule::Sqrt, FeatureRule::Log2, FeatureRule::Fraction(0.5)]
                        [rng.random_range(0..4)],
                })
            }
            TreeMethod::Rf => {
                let depth = rng.random_range(4..=21);
                Candidate::Rf(ForestParams {
                    n_trees: rng.random_range(10..=100),
                    tree: TreeParams {
                        max_depth: (depth <= 20).then_some(depth),
                        min_leaf: rng.random_range(1..=10),
                        min_split: 2,
                        max_features: FeatureRule::All,
                    },
                    feature_frac: rng.random_range(0.2..=1.0),
                    bootstrap: true,
                })
            }
        })
        .collect()
}

/// Row indices of `k` folds, keeping all rows of a group (application) in
/// the same fold. Groups are shuffled, then dealt round-robin.
pub fn app_folds(groups: &[String], k: usize, stream: SeedStream) -> Result<Vec<Vec<usize>>> {
    let mut by_group: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, g) in groups.iter().enumerate() {
        by_group.entry(g).or_default().push(i);
    }
    if k < 2 {
        return Err(Error::Config(format!("cross-validation needs k >= 2, got {k}")));
    }
    if k > by_group.len() {
        return Err(Error::Config(format!("k = {k} folds but only {} groups", by_group.len())));
    }
    let mut keys: Vec<&str> = by_group.keys().copied().collect();
    keys.shuffle(&mut stream.rng());
    let mut folds = vec![Vec::new(); k];
    for (i, key) in keys.iter().enumerate() {
        folds[i % k].extend(&by_group[key]);
    }
    folds.iter_mut().for_each(|f| f.sort_unstable());
    Ok(folds)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneResult {
    pub best: Candidate,
    pub best_index: usize,
    /// Mean held-out MAE of every candidate, in sampling order.
    pub cv_mae: Vec<f64>,
}

/// Picks the candidate with the lowest mean CV MAE; ties go to the
/// earliest candidate. A single candidate is returned without CV.
pub fn tune(
    candidates: &[Candidate],
    x: &FeatureMatrix,
    y: &[f64],
    groups: &[String],
    k: usize,
    stream: SeedStream,
    par: Parallelism,
) -> Result<TuneResult> {
    if candidates.is_empty() {
        return Err(Error::Config("no tuning candidates".into()));
    }
    let folds = app_folds(groups, k, stream.named("folds"))?;
    if candidates.len() == 1 {
        return Ok(TuneResult {
            best: candidates[0],
            best_index: 0,
            cv_mae: vec![f64::NAN],
        });
    }
    let maes = map_range(par, candidates.len() * k, |job| -> Result<f64> {
        let (c, f) = (job / k, job % k);
        let train: Vec<usize> = folds.iter().enumerate().filter(|&(j, _)| j != f).flat_map(|(_, v)| v.iter().copied()).collect();
        let test = &folds[f];
        let xt = x.select(&train);
        let yt: Vec<f64> = train.iter().map(|&i| y[i]).collect();
        let model = candidates[c].fit(&xt, &yt, stream.named("cv").at(c as u64).at(f as u64), Parallelism::Sequential)?;
        let pred = model.predict(&x.select(test));
        Ok(pred.iter().zip(test).map(|(p, &i)| (p.clamp(0.0, 1.0) - y[i]).abs()).sum::<f64>() / test.len() as f64)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let cv_mae: Vec<f64> = maes.chunks(k).map(|c| c.iter().sum::<f64>() / k as f64).collect();
    let mut best_index = 0;
    for (i, &m) in cv_mae.iter().enumerate() {
        if m < cv_mae[best_index] {
            best_index = i;
        }
    }
    Ok(TuneResult {
        best: candidates[best_index],
        best_index,
        cv_mae,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn folds_partition_by_group() {
        let groups: Vec<String> = (0..30).map(|i| format!("app{}", i % 7)).collect();
        let folds = app_folds(&groups, 3, SeedStream::root(1)).unwrap();
        let mut all: Vec<usize> = folds.concat();
        all.sort_unstable();
        assert_eq!(all, (0..30).collect::<Vec<_>>());
        for (a, fa) in folds.iter().enumerate() {
            for fb in folds.iter().skip(a + 1) {
                for &i in fa {
                    assert!(fb.iter().all(|&j| groups[i] != groups[j]));
                }
            }
        }
        assert!(app_folds(&groups, 8, SeedStream::root(1)).is_err());
    }

    #[test]
    fn candidates_are_seeded() {
        let a = random_candidates(TreeMethod::Rf, 5, SeedStream::root(4));
        assert_eq!(a, random_candidates(TreeMethod::Rf, 5, SeedStream::root(4)));
        assert_ne!(a, random_candidates(TreeMethod::Rf, 5, SeedStream::root(5)));
        assert_eq!(random_candidates(TreeMethod::Dt, 50, SeedStream::root(0)).len(), 50);
    }

    #[test]
    fn single_candidate_unchanged() {
        let x = FeatureMatrix::from_rows(&[vec![0.0], vec![1.0], vec![2.0]]).unwrap();
        let groups: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        let c = Candidate::Dt(TreeParams { min_leaf: 3, ..TreeParams::default() });
        let r = tune(&[c], &x, &[0.1, 0.2, 0.3], &groups, 2, SeedStream::root(0), Parallelism::Sequential).unwrap();
        assert_eq!(r.best, c);
    }
}
