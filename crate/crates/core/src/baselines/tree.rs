use rand::seq::index::sample;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::FeatureMatrix;
use crate::error::{Error, Result};
use crate::par::{map_range, Parallelism};
use crate::seed::{Rng, SeedStream};

/// Features considered at each split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureRule {
    All,
    Sqrt,
    Log2,
    Fraction(f64),
}

impl FeatureRule {
    fn count(self, p: usize) -> usize {
        let k = match self {
            FeatureRule::All => p,
            FeatureRule::Sqrt => (p as f64).sqrt().ceil() as usize,
            FeatureRule::Log2 => (p as f64).log2().ceil() as usize,
            FeatureRule::Fraction(f) => (f * p as f64).ceil() as usize,
        };
        k.clamp(1, p.max(1))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreeParams {
    pub max_depth: Option<usize>,
    pub min_leaf: usize,
    pub min_split: usize,
    pub max_features: FeatureRule,
}

impl Default for TreeParams {
    fn default() -> Self {
        Self {
            max_depth: None,
            min_leaf: 1,
            min_split: 2,
            max_features: FeatureRule::All,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Leaf { value: f64, n: usize },
    Split { feature: usize, threshold: f64, left: usize, right: usize },
}

/// A regression tree; `nodes[0]` is the root. Samples with
/// `x[feature] <= threshold` go left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { value, .. } => return value,
                Node::Split { feature, threshold, left, right } => {
                    i = if row[feature] <= threshold { left } else { right };
                }
            }
        }
    }

    pub fn predict(&self, x: &FeatureMatrix) -> Vec<f64> {
        (0..x.rows).map(|i| self.predict_row(x.row(i))).collect()
    }

    pub fn depth(&self) -> usize {
        fn go(t: &Tree, i: usize) -> usize {
            match t.nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + go(t, left).max(go(t, right)),
            }
        }
        go(self, 0)
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count()
    }
}

/// Column-major copy of the features with every column's row order
/// (by value, then row index) precomputed.
struct Columns {
    rows: usize,
    data: Vec<f64>,
    order: Vec<Vec<u32>>,
}

impl Columns {
    fn new(x: &FeatureMatrix) -> Self {
        let data: Vec<f64> = (0..x.cols).flat_map(|j| (0..x.rows).map(move |i| (i, j))).map(|(i, j)| x.get(i, j)).collect();
        let order = (0..x.cols)
            .map(|j| {
                let col = &data[j * x.rows..(j + 1) * x.rows];
                let mut o: Vec<u32> = (0..x.rows as u32).collect();
                o.sort_by(|&a, &b| col[a as usize].total_cmp(&col[b as usize]).then(a.cmp(&b)));
                o
            })
            .collect();
        Self {
            rows: x.rows,
            data,
            order,
        }
    }

    fn at(&self, row: u32, feature: usize) -> f64 {
        self.data[feature * self.rows + row as usize]
    }
}

struct Builder<'a> {
    x: &'a Columns,
    y: &'a [f64],
    params: &'a TreeParams,
    features: &'a [usize],
    rng: Rng,
    nodes: Vec<Node>,
    left_side: Vec<bool>,
}

impl Builder<'_> {
    fn leaf(&mut self, members: &[u32]) -> usize {
        let value = members.iter().map(|&r| self.y[r as usize]).sum::<f64>() / members.len() as f64;
        self.nodes.push(Node::Leaf { value, n: members.len() });
        self.nodes.len() - 1
    }

    /// `lists[k]` holds the node's samples (with bootstrap repeats) sorted
    /// by `features[k]`.
    fn build(&mut self, lists: Vec<Vec<u32>>, depth: usize) -> usize {
        let members = &lists[0];
        let n = members.len();
        let p = self.params;
        let y0 = self.y[members[0] as usize];
        let pure = members.iter().all(|&r| self.y[r as usize] == y0);
        if pure || n < p.min_split.max(2) || n < 2 * p.min_leaf.max(1) || p.max_depth.is_some_and(|d| depth >= d) {
            let m = members.clone();
            return self.leaf(&m);
        }
        let k = p.max_features.count(self.features.len());
        let mut chosen: Vec<usize> = if k >= self.features.len() {
            (0..self.features.len()).collect()
        } else {
            sample(&mut self.rng, self.features.len(), k).into_vec()
        };
        chosen.sort_unstable();

        let mean = members.iter().map(|&r| self.y[r as usize]).sum::<f64>() / n as f64;
        let min_leaf = p.min_leaf.max(1);
        let mut best: Option<(f64, usize, f64)> = None;
        for &c in &chosen {
            let f = self.features[c];
            let list = &lists[c];
            let total: f64 = list.iter().map(|&r| self.y[r as usize] - mean).sum();
            let mut sl = 0.0;
            for i in 0..n - 1 {
                sl += self.y[list[i] as usize] - mean;
                let nl = i + 1;
                let nr = n - nl;
                if nl < min_leaf || nr < min_leaf {
                    continue;
                }
                let (a, b) = (self.x.at(list[i], f), self.x.at(list[i + 1], f));
                if a >= b {
                    continue;
                }
                let sr = total - sl;
                let score = sl * sl / nl as f64 + sr * sr / nr as f64;
                if best.is_none_or(|(s, _, _)| score > s) {
                    let mid = a + (b - a) / 2.0;
                    best = Some((score, c, if mid < b { mid } else { a }));
                }
            }
        }
        let Some((_, c, threshold)) = best else {
            let m = members.clone();
            return self.leaf(&m);
        };
        let feature = self.features[c];
        for &r in members {
            self.left_side[r as usize] = self.x.at(r, feature) <= threshold;
        }
        let (mut ls, mut rs) = (Vec::with_capacity(lists.len()), Vec::with_capacity(lists.len()));
        for list in lists {
            let (l, r): (Vec<u32>, Vec<u32>) = list.into_iter().partition(|&r| self.left_side[r as usize]);
            ls.push(l);
            rs.push(r);
        }
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf { value: 0.0, n: 0 });
        let left = self.build(ls, depth + 1);
        let right = self.build(rs, depth + 1);
        self.nodes[id] = Node::Split {
            feature,
            threshold,
            left,
            right,
        };
        id
    }
}

fn fit_on(x: &Columns, y: &[f64], counts: &[u32], features: &[usize], params: &TreeParams, rng: Rng) -> Tree {
    let mut b = Builder {
        x,
        y,
        params,
        features,
        rng,
        nodes: Vec::new(),
        left_side: vec![false; x.rows],
    };
    let expand = |order: &[u32]| -> Vec<u32> {
        order
            .iter()
            .flat_map(|&r| std::iter::repeat_n(r, counts[r as usize] as usize))
            .collect()
    };
    let lists: Vec<Vec<u32>> = if features.is_empty() {
        vec![expand(&(0..x.rows as u32).collect::<Vec<_>>())]
    } else {
        features.iter().map(|&f| expand(&x.order[f])).collect()
    };
    if features.is_empty() {
        b.leaf(&lists[0]);
    } else {
        b.build(lists, 0);
    }
    Tree { nodes: b.nodes }
}

fn check_xy(x: &FeatureMatrix, y: &[f64]) -> Result<()> {
    if x.rows == 0 {
        return Err(Error::Empty("tree fitting needs at least one row".into()));
    }
    if y.len() != x.rows {
        return Err(Error::Shape(format!("{} rows but {} targets", x.rows, y.len())));
    }
    Ok(())
}

/// Greedy variance-reduction regression tree. Impure nodes split even at
/// zero gain (as XOR-like targets require). Ties between equally good
/// splits go to the lowest feature index, then the lowest threshold.
/// `stream` only matters when `max_features` subsamples features.
pub fn fit_cart(x: &FeatureMatrix, y: &[f64], params: &TreeParams, stream: SeedStream) -> Result<Tree> {
    check_xy(x, y)?;
    let cols = Columns::new(x);
    let features: Vec<usize> = (0..x.cols).collect();
    Ok(fit_on(&cols, y, &vec![1; x.rows], &features, params, stream.rng()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_trees: usize,
    pub tree: TreeParams,
    /// Fraction of features each tree may use.
    pub feature_frac: f64,
    pub bootstrap: bool,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            n_trees: 100,
            tree: TreeParams::default(),
            feature_frac: 1.0 / 3.0,
            bootstrap: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub trees: Vec<Tree>,
    pub seeds: Vec<u64>,
}

/// Bagged trees, each on a bootstrap sample and a random feature subset.
/// Trees are grown in parallel from per-tree seeds.
pub fn fit_forest(x: &FeatureMatrix, y: &[f64], params: &ForestParams, stream: SeedStream, par: Parallelism) -> Result<Forest> {
    check_xy(x, y)?;
    if params.n_trees == 0 {
        return Err(Error::Config("a forest needs at least one tree".into()));
    }
    if !(params.feature_frac > 0.0 && params.feature_frac <= 1.0) {
        return Err(Error::Config(format!("feature_frac must be in (0, 1], got {}", params.feature_frac)));
    }
    let cols = Columns::new(x);
    let seeds: Vec<u64> = (0..params.n_trees).map(|t| stream.at(t as u64).seed()).collect();
    let trees = map_range(par, params.n_trees, |t| {
        let s = SeedStream::root(seeds[t]);
        let mut rng = s.named("rows").rng();
        let mut counts = vec![0u32; x.rows];
        if params.bootstrap {
            for _ in 0..x.rows {
                counts[rng.random_range(0..x.rows)] += 1;
            }
        } else {
            counts.fill(1);
        }
        let k = FeatureRule::Fraction(params.feature_frac).count(x.cols);
        let mut features: Vec<usize> = if k >= x.cols {
            (0..x.cols).collect()
        } else {
            sample(&mut s.named("features").rng(), x.cols, k).into_vec()
        };
        features.sort_unstable();
        fit_on(&cols, y, &counts, &features, &params.tree, s.named("nodes").rng())
    });
    Ok(Forest { trees, seeds })
}

impl Forest {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        self.trees.iter().map(|t| t.predict_row(row)).sum::<f64>() / self.trees.len() as f64
    }

    pub fn predict(&self, x: &FeatureMatrix) -> Vec<f64> {
        (0..x.rows).map(|i| self.predict_row(x.row(i))).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fm(rows: &[&[f64]]) -> FeatureMatrix {
        FeatureMatrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn memorizes_distinct_points() {
        let x = fm(&[&[0.1, 5.0], &[0.4, 1.0], &[0.2, 2.0], &[0.9, 0.0], &[0.5, 3.0]]);
        let y = [1.0, 0.0, 3.0, -2.0, 0.5];
        let t = fit_cart(&x, &y, &TreeParams::default(), SeedStream::root(0)).unwrap();
        assert_eq!(t.predict(&x), y.to_vec());
    }

    #[test]
    fn constant_target_is_single_leaf() {
        let x = fm(&[&[0.1], &[0.4], &[0.2]]);
        let t = fit_cart(&x, &[0.1; 3], &TreeParams::default(), SeedStream::root(0)).unwrap();
        assert_eq!(t.nodes.len(), 1);
    }

    #[test]
    fn xor_needs_depth_two() {
        let x = fm(&[&[0.0, 0.0], &[0.0, 1.0], &[1.0, 0.0], &[1.0, 1.0]]);
        let y = [0.0, 1.0, 1.0, 0.0];
        let p = TreeParams { max_depth: Some(2), ..TreeParams::default() };
        let t = fit_cart(&x, &y, &p, SeedStream::root(0)).unwrap();
        assert_eq!(t.predict(&x), y.to_vec());
        // no split of the parent improves SSE, so the tie-break picks feature 0
        match t.nodes[0] {
            Node::Split { feature, threshold, .. } => assert_eq!((feature, threshold), (0, 0.5)),
            _ => panic!("expected split"),
        }
    }

    #[test]
    fn tie_break_lowest_feature_then_threshold() {
        // both features separate y identically
        let x = fm(&[&[0.0, 0.0], &[1.0, 1.0]]);
        let t = fit_cart(&x, &[0.0, 1.0], &TreeParams::default(), SeedStream::root(0)).unwrap();
        assert!(matches!(t.nodes[0], Node::Split { feature: 0, .. }));
    }

    #[test]
    fn thresholds_between_observed_values() {
        let x = fm(&[&[1.0], &[2.0], &[4.0], &[8.0]]);
        let t = fit_cart(&x, &[0.0, 0.0, 1.0, 1.0], &TreeParams::default(), SeedStream::root(0)).unwrap();
        assert!(matches!(t.nodes[0], Node::Split { threshold, .. } if threshold == 3.0));
    }

    #[test]
    fn limits_respected() {
        let rows: Vec<Vec<f64>> = (0..40).map(|i| vec![i as f64]).collect();
        let x = FeatureMatrix::from_rows(&rows).unwrap();
        let y: Vec<f64> = (0..40).map(|i| (i as f64).sin()).collect();
        let t = fit_cart(&x, &y, &TreeParams { max_depth: Some(3), ..TreeParams::default() }, SeedStream::root(0)).unwrap();
        assert!(t.depth() <= 3);
        let t = fit_cart(&x, &y, &TreeParams { min_leaf: 7, ..TreeParams::default() }, SeedStream::root(0)).unwrap();
        assert!(t.nodes.iter().all(|n| !matches!(n, Node::Leaf { n, .. } if *n < 7)));
    }

    #[test]
    fn one_tree_forest_equals_cart() {
        let rows: Vec<Vec<f64>> = (0..30).map(|i| vec![(i * 7 % 11) as f64, (i as f64).cos()]).collect();
        let x = FeatureMatrix::from_rows(&rows).unwrap();
        let y: Vec<f64> = (0..30).map(|i| (i as f64 * 0.3).sin()).collect();
        let cart = fit_cart(&x, &y, &TreeParams::default(), SeedStream::root(0)).unwrap();
        let p = ForestParams { n_trees: 1, feature_frac: 1.0, bootstrap: false, tree: TreeParams::default() };
        let f = fit_forest(&x, &y, &p, SeedStream::root(3), Parallelism::Sequential).unwrap();
        assert_eq!(f.trees[0], cart);
        assert!(fit_forest(&x, &y, &ForestParams { n_trees: 0, ..p }, SeedStream::root(3), Parallelism::Sequential).is_err());
    }

    #[test]
    fn forest_is_mean_of_trees_and_deterministic() {
        let rows: Vec<Vec<f64>> = (0..50).map(|i| vec![(i * 7 % 13) as f64, (i as f64).cos(), (i % 3) as f64]).collect();
        let x = FeatureMatrix::from_rows(&rows).unwrap();
        let y: Vec<f64> = (0..50).map(|i| (i as f64 * 0.3).sin()).collect();
        let p = ForestParams { n_trees: 7, ..ForestParams::default() };
        let a = fit_forest(&x, &y, &p, SeedStream::root(3), Parallelism::Rayon).unwrap();
        let b = fit_forest(&x, &y, &p, SeedStream::root(3), Parallelism::Sequential).unwrap();
        assert_eq!(a, b);
        let row = x.row(4);
        let mean = a.trees.iter().map(|t| t.predict_row(row)).sum::<f64>() / 7.0;
        assert_eq!(a.predict_row(row), mean);
    }
}
