//! Gradient-boosted regression trees on the logistic loss.

use serde::{Deserialize, Serialize};

use super::{Dataset, RecsysError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub n_trees: usize,
    pub learning_rate: f64,
    pub max_depth: usize,
    pub num_leaves: usize,
    pub min_child_samples: usize,
    pub lambda_l1: f64,
    pub lambda_l2: f64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            n_trees: 100,
            learning_rate: 0.1,
            max_depth: 6,
            num_leaves: 31,
            min_child_samples: 20,
            lambda_l1: 0.0,
            lambda_l2: 0.0,
        }
    }
}

const MIN_CHILD_HESSIAN: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Node {
    Split { feature: usize, threshold: f64, left: usize, right: usize, cover: f64 },
    Leaf { value: f64, cover: f64 },
}

impl Node {
    pub fn cover(&self) -> f64 {
        match self {
            Node::Split { cover, .. } | Node::Leaf { cover, .. } => *cover,
        }
    }
}

/// A regression tree stored as a node array with the root at index 0.
/// Samples with `x[feature] <= threshold` go left. Leaf values already
/// include the learning rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { value, .. } => return *value,
                Node::Split { feature, threshold, left, right, .. } => {
                    i = if x[*feature] <= *threshold { *left } else { *right };
                }
            }
        }
    }

    /// Cover-weighted mean leaf value.
    pub fn expected_value(&self) -> f64 {
        fn walk(t: &Tree, i: usize) -> f64 {
            match &t.nodes[i] {
                Node::Leaf { value, .. } => *value,
                Node::Split { left, right, cover, .. } => {
                    let (l, r) = (&t.nodes[*left], &t.nodes[*right]);
                    (l.cover() * walk(t, *left) + r.cover() * walk(t, *right)) / cover
                }
            }
        }
        walk(self, 0)
    }

    pub fn depth(&self) -> usize {
        fn walk(t: &Tree, i: usize) -> usize {
            match &t.nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(t, *left).max(walk(t, *right)),
            }
        }
        walk(self, 0)
    }

    pub fn leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeEnsembleModel {
    pub feature_names: Vec<String>,
    pub hyperparams: Hyperparams,
    pub learning_rate: f64,
    /// Initial raw score (log-odds).
    pub base_score: f64,
    pub positive_class_weight: f64,
    pub seed: u64,
    pub trees: Vec<Tree>,
}

pub fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

impl TreeEnsembleModel {
    pub fn predict_raw(&self, x: &[f64]) -> f64 {
        self.base_score + self.trees.iter().map(|t| t.predict(x)).sum::<f64>()
    }

    /// Positive-class probability.
    pub fn predict_proba(&self, x: &[f64]) -> f64 {
        sigmoid(self.predict_raw(x))
    }

    pub fn predict(&self, x: &[f64]) -> bool {
        self.predict_proba(x) >= 0.5
    }

    pub fn check_input(&self, x: &[f64]) -> Result<(), RecsysError> {
        if x.len() != self.feature_names.len() {
            return Err(RecsysError::FeatureCount { expected: self.feature_names.len(), got: x.len() });
        }
        match x.iter().position(|v| !v.is_finite()) {
            Some(i) => Err(RecsysError::NonFiniteFeature(self.feature_names[i].clone())),
            None => Ok(()),
        }
    }
}

fn threshold_l1(g: f64, l1: f64) -> f64 {
    g.signum() * (g.abs() - l1).max(0.0)
}

fn leaf_score(g: f64, h: f64, p: &Hyperparams) -> f64 {
    let t = threshold_l1(g, p.lambda_l1);
    t * t / (h + p.lambda_l2)
}

fn leaf_value(g: f64, h: f64, p: &Hyperparams) -> f64 {
    -threshold_l1(g, p.lambda_l1) / (h + p.lambda_l2)
}

#[derive(Debug, Clone, Copy)]
struct SplitCandidate {
    feature: usize,
    threshold: f64,
    gain: f64,
}

/// A leaf under construction: per-feature sample lists sorted by value.
struct Pending {
    node: usize,
    depth: usize,
    sorted: Vec<Vec<u32>>,
    grad: f64,
    hess: f64,
    split: Option<SplitCandidate>,
}

struct Grower<'a> {
    rows: &'a [Vec<f64>],
    grad: &'a [f64],
    hess: &'a [f64],
    params: &'a Hyperparams,
}

impl Grower<'_> {
    fn best_split(&self, sorted: &[Vec<u32>], g: f64, h: f64, depth: usize) -> Option<SplitCandidate> {
        let p = self.params;
        let n = sorted[0].len();
        if depth >= p.max_depth || n < 2 * p.min_child_samples.max(1) {
            return None;
        }
        let parent = leaf_score(g, h, p);
        let mut best: Option<SplitCandidate> = None;
        for (feature, order) in sorted.iter().enumerate() {
            let (mut gl, mut hl) = (0.0, 0.0);
            for pos in 0..n - 1 {
                let i = order[pos] as usize;
                gl += self.grad[i];
                hl += self.hess[i];
                let left_n = pos + 1;
                if left_n < p.min_child_samples {
                    continue;
                }
                if n - left_n < p.min_child_samples {
                    break;
                }
                let (x, next) = (self.rows[i][feature], self.rows[order[pos + 1] as usize][feature]);
                if x == next {
                    continue;
                }
                let hr = h - hl;
                if hl < MIN_CHILD_HESSIAN || hr < MIN_CHILD_HESSIAN {
                    continue;
                }
                let gain = leaf_score(gl, hl, p) + leaf_score(g - gl, hr, p) - parent;
                if gain > 1e-12 && best.is_none_or(|b| gain > b.gain) {
                    let mut threshold = x + (next - x) / 2.0;
                    if threshold >= next {
                        threshold = x;
                    }
                    best = Some(SplitCandidate { feature, threshold, gain });
                }
            }
        }
        best
    }

    fn pending(&self, node: usize, depth: usize, sorted: Vec<Vec<u32>>) -> Pending {
        let (grad, hess) = sorted[0].iter().fold((0.0, 0.0), |(g, h), &i| (g + self.grad[i as usize], h + self.hess[i as usize]));
        let split = self.best_split(&sorted, grad, hess, depth);
        Pending { node, depth, sorted, grad, hess, split }
    }

    fn grow(&self, all: &[Vec<u32>]) -> Tree {
        let p = self.params;
        let mut nodes = vec![Node::Leaf { value: 0.0, cover: all[0].len() as f64 }];
        let mut open = vec![self.pending(0, 0, all.to_vec())];
        let mut leaves = 1;
        let mut done: Vec<Pending> = Vec::new();
        while leaves < p.num_leaves.max(1) {
            // best-first: largest gain, earliest leaf on ties
            let pick = open
                .iter()
                .enumerate()
                .filter_map(|(i, l)| l.split.map(|s| (i, s.gain)))
                .fold(None, |acc: Option<(usize, f64)>, (i, g)| match acc {
                    Some((_, bg)) if bg >= g => acc,
                    _ => Some((i, g)),
                });
            let Some((idx, _)) = pick else { break };
            let leaf = open.remove(idx);
            let split = leaf.split.expect("picked leaf has a split");
            let goes_left = |i: u32| self.rows[i as usize][split.feature] <= split.threshold;
            let (mut left_sorted, mut right_sorted) = (Vec::new(), Vec::new());
            for order in &leaf.sorted {
                let (l, r): (Vec<u32>, Vec<u32>) = order.iter().partition(|&&i| goes_left(i));
                left_sorted.push(l);
                right_sorted.push(r);
            }
            let (left, right) = (nodes.len(), nodes.len() + 1);
            nodes.push(Node::Leaf { value: 0.0, cover: left_sorted[0].len() as f64 });
            nodes.push(Node::Leaf { value: 0.0, cover: right_sorted[0].len() as f64 });
            nodes[leaf.node] = Node::Split {
                feature: split.feature,
                threshold: split.threshold,
                left,
                right,
                cover: leaf.sorted[0].len() as f64,
            };
            open.push(self.pending(left, leaf.depth + 1, left_sorted));
            open.push(self.pending(right, leaf.depth + 1, right_sorted));
            leaves += 1;
        }
        done.extend(open);
        for leaf in done {
            let value = p.learning_rate * leaf_value(leaf.grad, leaf.hess, p);
            nodes[leaf.node] = Node::Leaf { value, cover: leaf.sorted[0].len() as f64 };
        }
        Tree { nodes }
    }
}

fn validate(data: &Dataset) -> Result<(), RecsysError> {
    let pos = data.positives();
    if data.is_empty() || pos == 0 || pos == data.len() {
        return Err(RecsysError::SingleClass);
    }
    for row in &data.rows {
        if row.len() != data.feature_names.len() {
            return Err(RecsysError::FeatureCount { expected: data.feature_names.len(), got: row.len() });
        }
        if let Some(j) = row.iter().position(|v| !v.is_finite()) {
            return Err(RecsysError::NonFiniteFeature(data.feature_names[j].clone()));
        }
    }
    Ok(())
}

/// Train a class-weighted boosted ensemble. Positives are weighted by
/// `N_neg / N_pos`. Rows are processed in a canonical order so the result
/// does not depend on input row order.
pub fn train(data: &Dataset, params: &Hyperparams, seed: u64) -> Result<TreeEnsembleModel, RecsysError> {
    validate(data)?;
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.sort_by(|&a, &b| {
        data.rows[a]
            .iter()
            .zip(&data.rows[b])
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(data.labels[a].cmp(&data.labels[b]))
    });
    let rows: Vec<Vec<f64>> = order.iter().map(|&i| data.rows[i].clone()).collect();
    let labels: Vec<f64> = order.iter().map(|&i| f64::from(u8::from(data.labels[i]))).collect();

    let n_pos = data.positives() as f64;
    let n_neg = data.len() as f64 - n_pos;
    let pos_weight = n_neg / n_pos;
    let weights: Vec<f64> = labels.iter().map(|&y| if y > 0.5 { pos_weight } else { 1.0 }).collect();
    let base_score = (n_pos * pos_weight / n_neg).ln();

    let n_features = data.feature_names.len();
    let sorted: Vec<Vec<u32>> = (0..n_features)
        .map(|f| {
            let mut idx: Vec<u32> = (0..rows.len() as u32).collect();
            idx.sort_by(|&a, &b| rows[a as usize][f].total_cmp(&rows[b as usize][f]).then(a.cmp(&b)));
            idx
        })
        .collect();

    let mut raw = vec![base_score; rows.len()];
    let mut grad = vec![0.0; rows.len()];
    let mut hess = vec![0.0; rows.len()];
    let mut trees = Vec::with_capacity(params.n_trees);
    for _ in 0..params.n_trees {
        for i in 0..rows.len() {
            let p = sigmoid(raw[i]);
            grad[i] = weights[i] * (p - labels[i]);
            hess[i] = (weights[i] * p * (1.0 - p)).max(1e-16);
        }
        let tree = if n_features == 0 {
            Tree { nodes: vec![Node::Leaf { value: 0.0, cover: rows.len() as f64 }] }
        } else {
            Grower { rows: &rows, grad: &grad, hess: &hess, params }.grow(&sorted)
        };
        for (r, x) in raw.iter_mut().zip(&rows) {
            *r += tree.predict(x);
        }
        trees.push(tree);
    }
    Ok(TreeEnsembleModel {
        feature_names: data.feature_names.clone(),
        hyperparams: *params,
        learning_rate: params.learning_rate,
        base_score,
        positive_class_weight: pos_weight,
        seed,
        trees,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> Dataset {
        let mut ds = Dataset::new(vec!["x".into(), "y".into()]);
        for i in 0..40 {
            let x = i as f64 / 4.0;
            let y = ((i * 7) % 11) as f64;
            ds.rows.push(vec![x, y]);
            ds.labels.push(x + 0.1 * y > 5.0);
            ds.users.push(format!("u{i}"));
            ds.regions.push("r".into());
        }
        ds
    }

    #[test]
    fn zero_trees_predict_half() {
        let params = Hyperparams { n_trees: 0, ..Default::default() };
        let m = train(&toy(), &params, 0).unwrap();
        assert!((m.predict_proba(&[0.0, 0.0]) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn separable_fits_exactly() {
        let data = toy();
        let params = Hyperparams { n_trees: 50, min_child_samples: 1, ..Default::default() };
        let m = train(&data, &params, 0).unwrap();
        let correct = data.rows.iter().zip(&data.labels).filter(|(x, y)| m.predict(x) == **y).count();
        assert_eq!(correct, data.len());
        assert!(m.trees.iter().all(|t| t.depth() <= 6 && t.leaves() <= 31));
    }

    #[test]
    fn row_order_does_not_matter() {
        let data = toy();
        let mut idx: Vec<usize> = (0..data.len()).rev().collect();
        idx.rotate_left(7);
        let params = Hyperparams { n_trees: 10, min_child_samples: 3, ..Default::default() };
        assert_eq!(train(&data, &params, 1).unwrap(), train(&data.subset(&idx), &params, 1).unwrap());
    }

    #[test]
    fn limits_respected() {
        let data = toy();
        let params = Hyperparams { n_trees: 5, max_depth: 2, num_leaves: 3, min_child_samples: 5, ..Default::default() };
        let m = train(&data, &params, 0).unwrap();
        for t in &m.trees {
            assert!(t.depth() <= 2 && t.leaves() <= 3);
            assert!(t.nodes.iter().all(|n| !matches!(n, Node::Leaf { cover, .. } if *cover < 5.0)));
        }
    }

    #[test]
    fn input_errors() {
        let mut data = toy();
        data.labels.iter_mut().for_each(|l| *l = true);
        assert!(matches!(train(&data, &Hyperparams::default(), 0), Err(RecsysError::SingleClass)));
        let mut data = toy();
        data.rows[3][1] = f64::NAN;
        match train(&data, &Hyperparams::default(), 0) {
            Err(RecsysError::NonFiniteFeature(name)) => assert_eq!(name, "y"),
            other => panic!("unexpected {other:?}"),
        }
    }
}
