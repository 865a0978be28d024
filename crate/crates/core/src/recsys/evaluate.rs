use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Dataset, TreeEnsembleModel};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub recall: f64,
    pub precision: f64,
    pub f1: f64,
    pub accuracy: f64,
    pub confusion: Confusion,
}

impl Confusion {
    pub fn from_predictions(predicted: &[bool], actual: &[bool]) -> Self {
        let mut c = Confusion::default();
        for (p, a) in predicted.iter().zip(actual) {
            match (p, a) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.fn_ += 1,
            }
        }
        c
    }

    /// Scores for the positive class; undefined ratios are 0.
    pub fn scores(&self) -> Evaluation {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let recall = ratio(self.tp, self.tp + self.fn_);
        let precision = ratio(self.tp, self.tp + self.fp);
        let f1 = ratio(2 * self.tp, 2 * self.tp + self.fp + self.fn_);
        let accuracy = ratio(self.tp + self.tn, self.tp + self.tn + self.fp + self.fn_);
        Evaluation { recall, precision, f1, accuracy, confusion: *self }
    }
}

pub fn evaluate(model: &TreeEnsembleModel, data: &Dataset) -> Evaluation {
    let predicted: Vec<bool> = data.rows.iter().map(|x| model.predict(x)).collect();
    Confusion::from_predictions(&predicted, &data.labels).scores()
}

/// Indices of a grouped split: whole users go to either side. Returns
/// `(train, held_out)`.
pub fn group_split(data: &Dataset, held_out_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut users: Vec<&str> = data.users.iter().map(String::as_str).collect();
    users.sort_unstable();
    users.dedup();
    users.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_held = ((users.len() as f64) * held_out_fraction).round() as usize;
    let held: std::collections::HashSet<&str> = users[..n_held.min(users.len())].iter().copied().collect();
    (0..data.len()).partition(|&i| !held.contains(data.users[i].as_str()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImportanceMetric {
    #[default]
    F1,
    Recall,
}

fn metric(model: &TreeEnsembleModel, rows: &[Vec<f64>], labels: &[bool], which: ImportanceMetric) -> f64 {
    let predicted: Vec<bool> = rows.iter().map(|x| model.predict(x)).collect();
    let s = Confusion::from_predictions(&predicted, labels).scores();
    match which {
        ImportanceMetric::F1 => s.f1,
        ImportanceMetric::Recall => s.recall,
    }
}

/// Mean drop of `which` when each feature column is shuffled, in feature order.
pub fn permutation_importance(
    model: &TreeEnsembleModel,
    data: &Dataset,
    which: ImportanceMetric,
    repeats: usize,
    seed: u64,
) -> Vec<(String, f64)> {
    let baseline = metric(model, &data.rows, &data.labels, which);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = data.rows.clone();
    let mut out = Vec::with_capacity(data.feature_names.len());
    for (j, name) in data.feature_names.iter().enumerate() {
        let original: Vec<f64> = data.rows.iter().map(|r| r[j]).collect();
        let mut total = 0.0;
        for _ in 0..repeats.max(1) {
            let mut column = original.clone();
            column.shuffle(&mut rng);
            for (r, v) in rows.iter_mut().zip(&column) {
                r[j] = *v;
            }
            total += baseline - metric(model, &rows, &data.labels, which);
        }
        for (r, v) in rows.iter_mut().zip(&original) {
            r[j] = *v;
        }
        out.push((name.clone(), total / repeats.max(1) as f64));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_confusion() {
        let c = Confusion { tp: 2, fn_: 1, fp: 2, tn: 0 };
        let s = c.scores();
        assert!((s.recall - 2.0 / 3.0).abs() < 1e-12);
        assert!((s.precision - 0.5).abs() < 1e-12);
        assert!((s.f1 - 4.0 / 7.0).abs() < 1e-12);
    }

    #[test]
    fn extremes() {
        let actual = [true, false, true, false];
        let s = Confusion::from_predictions(&actual, &actual).scores();
        assert_eq!((s.recall, s.f1), (1.0, 1.0));
        let s = Confusion::from_predictions(&[false; 4], &actual).scores();
        assert_eq!((s.recall, s.f1), (0.0, 0.0));
    }

    #[test]
    fn split_keeps_users_together() {
        let mut ds = Dataset::new(vec!["a".into()]);
        for i in 0..100 {
            ds.rows.push(vec![i as f64]);
            ds.labels.push(i % 3 == 0);
            ds.users.push(format!("u{}", i / 4));
            ds.regions.push(format!("r{i}"));
        }
        let (train, test) = group_split(&ds, 0.2, 5);
        assert_eq!(train.len() + test.len(), 100);
        assert_eq!(test.len(), 20);
        let tu: std::collections::HashSet<&String> = test.iter().map(|&i| &ds.users[i]).collect();
        assert!(train.iter().all(|&i| !tu.contains(&ds.users[i])));
        assert_eq!(group_split(&ds, 0.2, 5), (train, test));
    }
}
