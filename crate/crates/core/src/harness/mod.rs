//! Experiment harness behind the command-line tool: configuration, seeded
//! training runs with checkpoints and manifests, and the report commands.
//!
//! Output layout for one variant:
//!
//! ```text
//! <out_dir>/<variant>/config.json      resolved config
//! <out_dir>/<variant>/vocab.txt
//! <out_dir>/<variant>/unigram.csv      training-split unigram
//! <out_dir>/<variant>/seed-<s>/checkpoint.json
//! <out_dir>/<variant>/seed-<s>/manifest.json
//! <out_dir>/<variant>/seed-<s>/snapshots.csv
//! ```

mod commands;
mod config;
mod train;

pub use commands::{
    cmd_ablate, cmd_compare, cmd_metrics, cmd_probe, cmd_train, cmd_unigram, load_manifests, AblateMode,
    AblationRow, ProbeSummary, TrainOptions,
};
pub use config::ExperimentConfig;
pub use train::{
    advance, run_seed, snapshot_interval, Dataset, RunManifest, Snapshot, TrainState, STREAM_BATCHES, STREAM_INIT,
    STREAM_PROBE,
};

use thiserror::Error;

use crate::corpus::CorpusError;
use crate::linalg::LinalgError;
use crate::metrics::MetricsError;
use crate::model::ModelError;
use crate::optim::OptimError;
use crate::probe::ProbeError;
use crate::stats::StatsError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("inputs do not match: {0}")]
    Mismatch(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Probe(#[from] ProbeError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("{0}")]
    Runtime(String),
}

impl HarnessError {
    /// 2 for invalid input or configuration, 1 for faults while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) | Self::Mismatch(_) | Self::Corpus(_) | Self::Stats(_) => 2,
            Self::Metrics(MetricsError::Benchmark { .. }) => 2,
            _ => 1,
        }
    }
}
