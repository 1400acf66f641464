//! Denoising diffusion over boundary point clouds.
//!
//! Forward noising uses the closed-form marginal of a linear-variance
//! Gaussian chain; the reverse chain is ancestral sampling with an
//! ε-predicting, permutation-equivariant per-point network. One model is
//! trained per sensitive group and kept in a [`GroupModelRegistry`].

mod denoiser;
mod registry;
mod sampler;
mod schedule;

pub use denoiser::{Denoiser, DenoiserConfig, LatentSource, NoisePredictor, ShapeLatent};
pub use registry::{
    model_stem, train_group_model, train_group_models, GroupModel, GroupModelRegistry, GroupSample,
    GroupTrainConfig,
};
pub use sampler::{
    p_sample_step, q_sample, sample, train_denoiser, training_loss, SampleSpec, TrainConfig,
    TrainReport, DEFAULT_MAX_RETRIES,
};
pub use schedule::{
    make_schedule, NoiseSchedule, DEFAULT_BETA_END, DEFAULT_BETA_START, DEFAULT_STEPS,
};

use crate::codec::CodecError;
use crate::nn::NnError;

#[derive(Debug, thiserror::Error)]
pub enum DiffusionError {
    #[error("invalid schedule: {0}")]
    Schedule(String),
    #[error("step {t} outside 1..={steps}")]
    StepOutOfRange { t: usize, steps: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("non-finite values at step {t}: {detail}")]
    NonFinite { t: usize, detail: String },
    #[error(
        "no decodable sample after {attempts} attempts (last had {cup} cup / {disc} disc points)"
    )]
    Undecodable {
        attempts: usize,
        cup: usize,
        disc: usize,
    },
    #[error("no trained model for {attribute}={group}")]
    MissingModel { attribute: String, group: String },
    #[error("attribute {0:?} not present in the data")]
    UnknownAttribute(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
