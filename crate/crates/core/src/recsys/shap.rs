//! Path-dependent TreeSHAP.

use serde::{Deserialize, Serialize};

use super::gbdt::{Node, Tree, TreeEnsembleModel};

#[derive(Debug, Clone, Copy)]
struct PathElement {
    feature: Option<usize>,
    zero_fraction: f64,
    one_fraction: f64,
    weight: f64,
}

fn extend(path: &mut Vec<PathElement>, zero_fraction: f64, one_fraction: f64, feature: Option<usize>) {
    let depth = path.len();
    path.push(PathElement { feature, zero_fraction, one_fraction, weight: if depth == 0 { 1.0 } else { 0.0 } });
    let d = depth as f64;
    for i in (0..depth).rev() {
        let w = path[i].weight;
        path[i + 1].weight += one_fraction * w * (i as f64 + 1.0) / (d + 1.0);
        path[i].weight = zero_fraction * w * (d - i as f64) / (d + 1.0);
    }
}

fn unwind(path: &mut Vec<PathElement>, index: usize) {
    let depth = path.len() - 1;
    let d = depth as f64;
    let (one, zero) = (path[index].one_fraction, path[index].zero_fraction);
    let mut next = path[depth].weight;
    for i in (0..depth).rev() {
        if one != 0.0 {
            let tmp = path[i].weight;
            path[i].weight = next * (d + 1.0) / ((i as f64 + 1.0) * one);
            next = tmp - path[i].weight * zero * (d - i as f64) / (d + 1.0);
        } else {
            path[i].weight = path[i].weight * (d + 1.0) / (zero * (d - i as f64));
        }
    }
    for i in index..depth {
        path[i].feature = path[i + 1].feature;
        path[i].zero_fraction = path[i + 1].zero_fraction;
        path[i].one_fraction = path[i + 1].one_fraction;
    }
    path.pop();
}

fn unwound_sum(path: &[PathElement], index: usize) -> f64 {
    let depth = path.len() - 1;
    let d = depth as f64;
    let (one, zero) = (path[index].one_fraction, path[index].zero_fraction);
    let mut next = path[depth].weight;
    let mut total = 0.0;
    for i in (0..depth).rev() {
        if one != 0.0 {
            let tmp = next * (d + 1.0) / ((i as f64 + 1.0) * one);
            total += tmp;
            next = path[i].weight - tmp * zero * (d - i as f64) / (d + 1.0);
        } else {
            total += path[i].weight / zero / ((d - i as f64) / (d + 1.0));
        }
    }
    total
}

fn recurse(
    tree: &Tree,
    node: usize,
    x: &[f64],
    phi: &mut [f64],
    mut path: Vec<PathElement>,
    zero_fraction: f64,
    one_fraction: f64,
    feature: Option<usize>,
) {
    extend(&mut path, zero_fraction, one_fraction, feature);
    match &tree.nodes[node] {
        Node::Leaf { value, .. } => {
            for i in 1..path.len() {
                let w = unwound_sum(&path, i);
                let el = path[i];
                phi[el.feature.expect("only the root element lacks a feature")] +=
                    w * (el.one_fraction - el.zero_fraction) * value;
            }
        }
        Node::Split { feature: f, threshold, left, right, cover } => {
            let (hot, cold) = if x[*f] <= *threshold { (*left, *right) } else { (*right, *left) };
            let hot_zero = tree.nodes[hot].cover() / cover;
            let cold_zero = tree.nodes[cold].cover() / cover;
            let (mut incoming_zero, mut incoming_one) = (1.0, 1.0);
            if let Some(k) = path.iter().position(|e| e.feature == Some(*f)) {
                incoming_zero = path[k].zero_fraction;
                incoming_one = path[k].one_fraction;
                unwind(&mut path, k);
            }
            recurse(tree, hot, x, phi, path.clone(), hot_zero * incoming_zero, incoming_one, Some(*f));
            recurse(tree, cold, x, phi, path, cold_zero * incoming_zero, 0.0, Some(*f));
        }
    }
}

/// Shapley values of one tree, added into `phi`.
pub fn tree_shap(tree: &Tree, x: &[f64], phi: &mut [f64]) {
    recurse(tree, 0, x, phi, Vec::new(), 1.0, 1.0, None);
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attribution {
    pub feature_names: Vec<String>,
    pub shapley: Vec<f64>,
    /// Expected raw output under the training distribution.
    pub base_value: f64,
    /// Raw model output for the example.
    pub output: f64,
}

impl Attribution {
    /// Features ordered by |shapley| desc, ties by feature order.
    pub fn ranked(&self) -> Vec<(usize, f64)> {
        let mut r: Vec<(usize, f64)> = self.shapley.iter().copied().enumerate().collect();
        r.sort_by(|a, b| b.1.abs().total_cmp(&a.1.abs()).then(a.0.cmp(&b.0)));
        r
    }
}

pub fn expected_value(model: &TreeEnsembleModel) -> f64 {
    model.base_score + model.trees.iter().map(Tree::expected_value).sum::<f64>()
}

pub fn shapley_attribution(model: &TreeEnsembleModel, x: &[f64]) -> Attribution {
    let mut phi = vec![0.0; model.feature_names.len()];
    for tree in &model.trees {
        tree_shap(tree, x, &mut phi);
    }
    Attribution {
        feature_names: model.feature_names.clone(),
        shapley: phi,
        base_value: expected_value(model),
        output: model.predict_raw(x),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::recsys::Hyperparams;

    fn model(trees: Vec<Tree>, features: usize) -> TreeEnsembleModel {
        TreeEnsembleModel {
            feature_names: (0..features).map(|i| format!("f{i}")).collect(),
            hyperparams: Hyperparams::default(),
            learning_rate: 0.1,
            base_score: 0.25,
            positive_class_weight: 1.0,
            seed: 0,
            trees,
        }
    }

    #[test]
    fn stump_only_player() {
        let stump = Tree {
            nodes: vec![
                Node::Split { feature: 1, threshold: 0.5, left: 1, right: 2, cover: 4.0 },
                Node::Leaf { value: -1.0, cover: 3.0 },
                Node::Leaf { value: 2.0, cover: 1.0 },
            ],
        };
        let m = model(vec![stump], 3);
        let a = shapley_attribution(&m, &[9.0, 1.0, -4.0]);
        assert_eq!(a.shapley[0], 0.0);
        assert_eq!(a.shapley[2], 0.0);
        // E = (3 * -1 + 2) / 4 = -0.25; phi = 2 - (-0.25)
        assert!((a.shapley[1] - 2.25).abs() < 1e-12);
        assert!((a.base_value + a.shapley.iter().sum::<f64>() - a.output).abs() < 1e-12);
    }

    #[test]
    fn leaf_only_ensemble() {
        let m = model(vec![Tree { nodes: vec![Node::Leaf { value: 0.7, cover: 5.0 }] }], 2);
        let a = shapley_attribution(&m, &[1.0, 2.0]);
        assert_eq!(a.shapley, vec![0.0, 0.0]);
        assert!((a.base_value - a.output).abs() < 1e-12);
    }

    #[test]
    fn repeated_feature_local_accuracy() {
        let t = Tree {
            nodes: vec![
                Node::Split { feature: 0, threshold: 0.0, left: 1, right: 2, cover: 10.0 },
                Node::Split { feature: 1, threshold: 0.0, left: 3, right: 4, cover: 6.0 },
                Node::Split { feature: 0, threshold: 5.0, left: 5, right: 6, cover: 4.0 },
                Node::Leaf { value: 1.0, cover: 2.0 },
                Node::Leaf { value: -2.0, cover: 4.0 },
                Node::Leaf { value: 3.0, cover: 1.0 },
                Node::Leaf { value: 0.5, cover: 3.0 },
            ],
        };
        let m = model(vec![t.clone(), t], 2);
        for x in [[-1.0, -1.0], [-1.0, 1.0], [2.0, 0.0], [7.0, 3.0]] {
            let a = shapley_attribution(&m, &x);
            assert!((a.base_value + a.shapley.iter().sum::<f64>() - a.output).abs() < 1e-12);
        }
    }
}
