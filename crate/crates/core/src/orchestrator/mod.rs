//! Experiment configuration, the staged pipeline, the uplift cache and the
//! run manifest.

mod cache;
mod config;
mod manifest;
mod pipeline;

pub use cache::{UpliftCache, CACHE_ENV};
pub use config::{
    CorrelationConfig, DatasetSource, DefenseConfig, EstimatorConfig, EstimatorKind, ExperimentConfig,
    Preprocess, TargetSelection,
};
pub use manifest::{tool_version, ArtifactRecord, RunManifest, StageRecord, MANIFEST_FILE};
pub use pipeline::{compare_runs, Pipeline, RunOutcome, Stage};
