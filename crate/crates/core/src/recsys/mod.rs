//! Personalized high-interest region prediction and explanation.

mod evaluate;
mod features;
mod gbdt;
mod mobility;
mod profile;
mod recommend;
mod search;
mod shap;

pub use evaluate::{evaluate, group_split, permutation_importance, Confusion, Evaluation, ImportanceMetric};
pub use features::{assemble_features, build_dataset, Dataset, DatasetReport, FeatureConfig, FeatureVector, RawAttribute};
pub use gbdt::{sigmoid, train, Hyperparams, Node, Tree, TreeEnsembleModel};
pub use mobility::{classify_mobility, radius_of_gyration, MobilityClass, MobilitySummary};
pub use profile::{label_user, profile_from_ranked, UserInterestProfile};
pub use recommend::{
    explain, fine_profile, rank_candidates, recommend, Explanation, FactorContribution, LevelModel, RecommendOutput,
    RecommendParams, Recommendation, RegionCatalog, Templates,
};
pub use search::{fit_best, random_search, train_with_report, Baselines, SearchResult, SearchSpace, TrainReport, Trial};
pub use shap::{expected_value, shapley_attribution, tree_shap, Attribution};

#[derive(Debug, thiserror::Error)]
pub enum RecsysError {
    #[error("unknown region {0}")]
    UnknownRegion(String),
    #[error("dataset must contain both classes")]
    SingleClass,
    #[error("feature {0} has a non-finite value")]
    NonFiniteFeature(String),
    #[error("expected {expected} features, got {got}")]
    FeatureCount { expected: usize, got: usize },
    #[error("random search needs at least one trial")]
    NoTrials,
    #[error("empty input: {0}")]
    EmptyInput(String),
    #[error("ineligible request: {0}")]
    Ineligible(String),
    #[error("no trained model for {0}")]
    UntrainedLevel(String),
    #[error("malformed feature table: {0}")]
    Format(String),
}
