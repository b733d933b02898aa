//! The experiment protocol: a scenes × iterations × models grid of caption
//! runs, per-image scoring, box-plot statistics, cost roll-up and reports.

mod config;
mod grid;
mod report;
mod stats;

use std::path::PathBuf;

use thiserror::Error;

use crate::agent::AgentError;
use crate::store::StoreError;

pub use config::{
    synthetic_scene_images, EmbeddingKind, GridConfig, SceneConfig, ScoringConfig, EMBEDDINGS_API_KEY_ENV,
};
pub use grid::{
    CellRecord, CellStatus, ExperimentGrid, GridEcho, GridRunner, ModelConfig, RunManifest, RunTotals, SceneEcho,
    SceneSpec, MANIFEST_FORMAT, MANIFEST_VERSION,
};
pub use report::{
    emit_reports, per_scene_model_means, per_scene_model_means_of, render_boxplot_svg, samples_by_model, MeansTable,
    Metric, ReportFiles, MEANS_CSV, SCORES_CSV, SUMMARY_CSV,
};
pub use stats::{box_stats, quantile_sorted, BoxStats, FENCE_FACTOR, QUARTILE_METHOD};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("grid config: {0}")]
    Config(String),
    #[error("{0}")]
    Domain(String),
    #[error("manifest totals do not match its cells: {0}")]
    Conservation(String),
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("manifest {path}: {reason}")]
    Manifest { path: PathBuf, reason: String },
    #[error(transparent)]
    Store(StoreError),
    #[error("cost: {0}")]
    Cost(#[source] AgentError),
}
