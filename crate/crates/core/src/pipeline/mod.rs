//! File-based stages behind the `salad` CLI.
//!
//! Every stage writes into its own directory under `output_dir`
//! (`tags/`, `pos/`, `neg/I<n>/`, `train/`, `eval/`, `cad/I<n>/`) together
//! with a `manifest.json`. Downstream stages check their upstream manifests
//! against the current config and warn, or fail under `--strict`, when an
//! upstream artifact is stale.

use std::path::PathBuf;

use thiserror::Error;

pub mod commands;
pub mod config;
pub mod manifest;

pub use commands::{Format, Pipeline};
pub use config::RunConfig;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("input file not found: {}", .0.display())]
    MissingInput(PathBuf),
    #[error("no tagging oracle: set tags.oracle_checkpoint to a trained checkpoint, or pass --train-oracle (tags.train_oracle = true) to fit one on the training split")]
    MissingOracle,
    #[error("stage {stage} has not been run yet (no manifest in {}); run `salad {command}` first", dir.display())]
    MissingUpstream {
        stage: String,
        command: &'static str,
        dir: PathBuf,
    },
    #[error("stale upstream artifacts:\n  {}", .0.join("\n  "))]
    Stale(Vec<String>),
    #[error(transparent)]
    Corpus(#[from] crate::corpus::CorpusError),
    #[error(transparent)]
    Tagger(#[from] crate::postag::TaggerError),
    #[error(transparent)]
    Discovery(#[from] crate::tagset::DiscoveryError),
    #[error(transparent)]
    Generation(#[from] crate::negative::GenerationError),
    #[error(transparent)]
    Client(#[from] crate::negative::client::ClientError),
    #[error(transparent)]
    Train(#[from] crate::train::TrainError),
    #[error(transparent)]
    Encoder(#[from] crate::encoder::EncoderError),
    #[error(transparent)]
    Eval(#[from] crate::eval::EvalError),
    #[error(transparent)]
    Cad(#[from] crate::cad::CadError),
}
