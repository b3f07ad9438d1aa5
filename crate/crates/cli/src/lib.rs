//! Pipeline orchestration for the `wmera` binary: configuration, scale
//! caches, per-scale models, JSON-lines metrics and run summaries.

pub mod commands;
pub mod config;
pub mod error;

pub use commands::{
    cmd_eval, cmd_finegrain, cmd_pipeline, cmd_preprocess, cmd_train, with_threads, FineGrainReport, Prepared,
    ScaleSummary, Summary,
};
pub use config::{Overrides, PipelineConfig};
pub use error::{CliError, CliResult};
