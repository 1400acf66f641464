//! Pipeline commands and the multi-seed fairness experiment.

mod commands;
mod config;
mod fairness;
mod pipeline;
mod segmenter;

pub use commands::{
    cmd_combine, cmd_decode, cmd_encode, cmd_evaluate, cmd_make_toy_data, cmd_sample_masks,
    cmd_train_control, cmd_train_diffusion, cmd_train_segmenter, parse_target, BatchSummary,
    CombineSummary,
};
pub use config::{ExperimentConfig, KvConfig};
pub use fairness::{run_experiment, run_seed, ExperimentSummary, SeedOutcome};
pub use pipeline::{
    evaluate, load_pair, stage_rng, stage_seed, train_control_block, train_registry,
    train_segmenter, training_pairs, write_evaluation, write_losses, Evaluation, Exclusion,
    SampleScore,
};
pub use segmenter::{SegmenterConfig, ToySegmenter, CLASSES};

use crate::codec::CodecError;
use crate::control::ControlError;
use crate::data::DataError;
use crate::diffusion::DiffusionError;
use crate::metrics::MetricsError;
use crate::nn::NnError;

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error("{0}")]
    Validation(String),
    #[error("non-finite values: {0}")]
    NonFinite(String),
    #[error("stage {stage} failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<ExperimentError>,
    },
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Diffusion(#[from] DiffusionError),
    #[error(transparent)]
    Control(#[from] ControlError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl ExperimentError {
    /// 1 for invalid input or configuration, 2 for failures while running.
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Validation(_) => 1,
            Self::Stage { source, .. } => source.exit_code(),
            Self::Data(
                DataError::Manifest { .. }
                | DataError::MissingAttribute { .. }
                | DataError::Spec(_)
                | DataError::Plan(_)
                | DataError::Diffusion(
                    DiffusionError::MissingModel { .. } | DiffusionError::UnknownAttribute(_),
                ),
            ) => 1,
            Self::Diffusion(
                DiffusionError::MissingModel { .. }
                | DiffusionError::UnknownAttribute(_)
                | DiffusionError::Config(_),
            ) => 1,
            Self::Codec(_) => 1,
            _ => 2,
        }
    }
}
