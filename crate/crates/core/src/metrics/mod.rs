//! Correlation, centrality, partition agreement and region factor metrics.

mod centrality;
mod compare;
mod correlation;
mod factors;
mod partition;

pub use centrality::{eigenvector_centrality, largest_component, DEFAULT_MAX_ITER, DEFAULT_TOL};
pub use compare::{compare_inets, paired_edges, CompareOptions, CompareReport, PairedEdgeSeries, PairingMode};
pub use correlation::{average_ranks, kendall_tau, pearson, spearman};
pub use factors::{
    correlate_edges_with_factor, factor_metric, factor_table_csv, FactorCorrelation, FactorKind, FactorMetricSpec,
};
pub use factors::Factor;
pub use partition::{nmi, rand_index, shared_labels, RandScores};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricError {
    #[error("series lengths differ: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("need at least {needed} values, got {got}")]
    TooFewValues { needed: usize, got: usize },
    #[error("input contains non-finite values")]
    NonFinite,
    #[error("correlation undefined: zero variance")]
    ZeroVariance,
    #[error("all values tied")]
    AllTied,
    #[error("network has no nodes")]
    EmptyNetwork,
    #[error("power iteration did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("factor {factor} unavailable for region {region}")]
    Unavailable { factor: Factor, region: String },
    #[error("networks are at different levels: {left} vs {right}")]
    LevelMismatch { left: String, right: String },
}
