//! Artifact store, pipeline orchestration and the read-only query layer
//! behind the HTTP API.

use std::path::PathBuf;

use thiserror::Error;

use crate::inet::InetError;
use crate::ingest::IngestError;
use crate::metrics::MetricError;
use crate::recsys::RecsysError;
use crate::upzones::UpzoneError;

pub mod api;
pub mod pipeline;
pub mod store;

pub use api::{
    net_key, parse_net_key, ApiError, Envelope, FieldError, Query, RecommendRequest, RecommendResponse, RecommenderInfo,
    UserMode, VisitedRegion,
};
pub use pipeline::{
    run_pipeline, synth_config, CompareStage, CorrelateStage, GridSpec, InetStage, InputSpec, InteractionSource,
    LevelSpec, PipelineConfig, PipelineReport, Stage, TrainStage, UpzonesStage,
};
pub use store::{sha256_hex, ArtifactEntry, ArtifactKind, ArtifactStore, Manifest, StoreLock};

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt store: {0}")]
    Corrupt(String),
    #[error("missing artifact {0}")]
    MissingArtifact(String),
    #[error("store is locked by another run ({})", .0.display())]
    Locked(PathBuf),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("stage {stage} failed: {source}")]
    Stage {
        stage: Stage,
        #[source]
        source: Box<ServiceError>,
    },
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Inet(#[from] InetError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Upzone(#[from] UpzoneError),
    #[error(transparent)]
    Recsys(#[from] RecsysError),
}

/// Artifact names shared by the pipeline and the query layer.
pub mod names {
    use crate::ingest::{Level, Platform};
    use crate::recsys::MobilityClass;

    pub const RECOMMENDER: &str = "recommender";

    pub fn regions(level: Level) -> String {
        format!("regions/{level}")
    }

    pub fn regions_geojson(level: Level) -> String {
        format!("regions/{level}/geojson")
    }

    pub fn regions_report(level: Level) -> String {
        format!("regions/{level}/report")
    }

    pub fn inet(platform: Platform, level: Level) -> String {
        format!("inet/{platform}/{level}")
    }

    pub fn compare(a: (Platform, Level), b: (Platform, Level)) -> String {
        format!("compare/{}:{}/{}:{}", a.0, a.1, b.0, b.1)
    }

    pub fn upzones(platform: Platform, level: Level) -> String {
        format!("upzones/{platform}/{level}")
    }

    pub fn upzone_similarity(a: Platform, b: Platform, level: Level) -> String {
        format!("upzones/similarity/{a}:{level}/{b}:{level}")
    }

    pub fn correlations(platform: Platform, level: Level) -> String {
        format!("correlations/{platform}/{level}")
    }

    pub const CORRELATION_TABLE: &str = "correlations/table";

    pub fn features(level: Level) -> String {
        format!("features/{level}")
    }

    pub fn model(level: Level, class: Option<MobilityClass>) -> String {
        match class {
            None => format!("model/{level}"),
            Some(MobilityClass::Returner) => format!("model/{level}/returner"),
            Some(MobilityClass::Explorer) => format!("model/{level}/explorer"),
        }
    }

    pub fn train_report(level: Level) -> String {
        format!("train_report/{level}")
    }

    pub fn stage(stage: super::Stage) -> String {
        format!("stages/{stage}")
    }
}
