use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{evaluate, group_split, train, Dataset, Evaluation, Hyperparams, RecsysError, TreeEnsembleModel};

/// Inclusive sampling ranges for the randomized search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub n_trees: (usize, usize),
    pub learning_rate: (f64, f64),
    pub max_depth: (usize, usize),
    pub num_leaves: (usize, usize),
    pub min_child_samples: (usize, usize),
    pub lambda_l1: (f64, f64),
    pub lambda_l2: (f64, f64),
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self {
            n_trees: (100, 300),
            learning_rate: (0.01, 0.1),
            max_depth: (3, 10),
            num_leaves: (20, 50),
            min_child_samples: (10, 30),
            lambda_l1: (0.0, 0.5),
            lambda_l2: (0.0, 0.5),
        }
    }
}

impl SearchSpace {
    pub fn sample<R: Rng>(&self, rng: &mut R) -> Hyperparams {
        Hyperparams {
            n_trees: rng.random_range(self.n_trees.0..=self.n_trees.1),
            learning_rate: rng.random_range(self.learning_rate.0..=self.learning_rate.1),
            max_depth: rng.random_range(self.max_depth.0..=self.max_depth.1),
            num_leaves: rng.random_range(self.num_leaves.0..=self.num_leaves.1),
            min_child_samples: rng.random_range(self.min_child_samples.0..=self.min_child_samples.1),
            lambda_l1: rng.random_range(self.lambda_l1.0..=self.lambda_l1.1),
            lambda_l2: rng.random_range(self.lambda_l2.0..=self.lambda_l2.1),
        }
    }

    pub fn contains(&self, p: &Hyperparams) -> bool {
        fn within<T: PartialOrd>(v: T, r: (T, T)) -> bool {
            v >= r.0 && v <= r.1
        }
        within(p.n_trees, self.n_trees)
            && within(p.learning_rate, self.learning_rate)
            && within(p.max_depth, self.max_depth)
            && within(p.num_leaves, self.num_leaves)
            && within(p.min_child_samples, self.min_child_samples)
            && within(p.lambda_l1, self.lambda_l1)
            && within(p.lambda_l2, self.lambda_l2)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub index: usize,
    pub params: Hyperparams,
    pub validation: Evaluation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub best: Hyperparams,
    pub best_validation: Evaluation,
    pub trials: Vec<Trial>,
}

/// Sample `n_trials` configurations, score each on a user-grouped 80/20
/// split and keep the best validation F1 (earliest trial on ties).
pub fn random_search(
    data: &Dataset,
    space: &SearchSpace,
    n_trials: usize,
    seed: u64,
) -> Result<SearchResult, RecsysError> {
    if n_trials < 1 {
        return Err(RecsysError::NoTrials);
    }
    let (train_idx, val_idx) = group_split(data, 0.2, seed);
    let (train_set, val_set) = (data.subset(&train_idx), data.subset(&val_idx));
    if val_set.is_empty() {
        return Err(RecsysError::SingleClass);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params: Vec<Hyperparams> = (0..n_trials).map(|_| space.sample(&mut rng)).collect();
    let trials: Vec<Trial> = params
        .into_par_iter()
        .enumerate()
        .map(|(index, params)| {
            let model = train(&train_set, &params, seed)?;
            Ok(Trial { index, params, validation: evaluate(&model, &val_set) })
        })
        .collect::<Result<_, RecsysError>>()?;
    let best = trials
        .iter()
        .fold(None, |acc: Option<&Trial>, t| match acc {
            Some(b) if b.validation.f1 >= t.validation.f1 => acc,
            _ => Some(t),
        })
        .expect("at least one trial");
    Ok(SearchResult { best: best.params, best_validation: best.validation, trials })
}

/// Search, then refit the best configuration on the full dataset.
pub fn fit_best(
    data: &Dataset,
    space: &SearchSpace,
    n_trials: usize,
    seed: u64,
) -> Result<(TreeEnsembleModel, SearchResult), RecsysError> {
    let result = random_search(data, space, n_trials, seed)?;
    Ok((train(data, &result.best, seed)?, result))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn samples_stay_in_range() {
        let space = SearchSpace::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            assert!(space.contains(&space.sample(&mut rng)));
        }
    }

    #[test]
    fn trials_required() {
        let ds = Dataset::new(vec!["a".into()]);
        assert!(matches!(random_search(&ds, &SearchSpace::default(), 0, 1), Err(RecsysError::NoTrials)));
    }
}

/// F1 of trivial predictors on a set with positive rate `p`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Baselines {
    /// Predict positive everywhere.
    pub majority_f1: f64,
    /// Predict positive with probability `p`; expected F1 equals `p`.
    pub random_f1: f64,
}

impl Baselines {
    pub fn for_labels(labels: &[bool]) -> Self {
        let p = labels.iter().filter(|l| **l).count() as f64 / labels.len().max(1) as f64;
        Self { majority_f1: if p > 0.0 { 2.0 * p / (1.0 + p) } else { 0.0 }, random_f1: p }
    }

    pub fn best(&self) -> f64 {
        self.majority_f1.max(self.random_f1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub rows: usize,
    pub positives: usize,
    pub search: SearchResult,
    /// Scores of the best configuration refit on the training users and
    /// applied to held-out users.
    pub held_out: Evaluation,
    pub baselines: Baselines,
    /// Permutation importance on the held-out users, largest drop first.
    pub importance: Vec<(String, f64)>,
}

/// Hold out 20% of users, search on the rest, score on the held-out users,
/// then refit the chosen configuration on everything.
pub fn train_with_report(
    data: &Dataset,
    space: &SearchSpace,
    n_trials: usize,
    importance_repeats: usize,
    seed: u64,
) -> Result<(TreeEnsembleModel, TrainReport), RecsysError> {
    let (train_idx, test_idx) = group_split(data, 0.2, seed ^ 0x5eed);
    let (train_set, test_set) = (data.subset(&train_idx), data.subset(&test_idx));
    if test_set.is_empty() {
        return Err(RecsysError::EmptyInput("no held-out users".into()));
    }
    let search = random_search(&train_set, space, n_trials, seed)?;
    let model = train(&train_set, &search.best, seed)?;
    let held_out = evaluate(&model, &test_set);
    let mut importance =
        super::permutation_importance(&model, &test_set, super::ImportanceMetric::F1, importance_repeats, seed);
    importance.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let full = train(data, &search.best, seed)?;
    let report = TrainReport {
        rows: data.len(),
        positives: data.positives(),
        search,
        held_out,
        baselines: Baselines::for_labels(&test_set.labels),
        importance,
    };
    Ok((full, report))
}
