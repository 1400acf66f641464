//! Dataset manifests, toy-data generation and equal-scale combination of
//! real and synthetic samples.

mod combine;
mod manifest;
mod toy;

pub use combine::{
    execute_plan, group_clouds, plan_equal_scale, CombineConfig, CombinePlan, GroupAction,
    GroupPlan, TargetPolicy,
};
pub use manifest::{dataset_root, Manifest, ManifestRow, Provenance, Split, UNSPECIFIED};
pub use toy::{make_toy_dataset, safe_name, ShapeFamily, ToyDatasetSpec, ToyGroup};

use std::collections::BTreeMap;
use std::path::PathBuf;

use crate::codec::CodecError;
use crate::control::ControlError;
use crate::diffusion::DiffusionError;

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("invalid manifest {}: {}", path.display(), problems.join("; "))]
    Manifest {
        path: PathBuf,
        problems: Vec<String>,
    },
    #[error("attribute {attribute:?} missing on rows {ids:?}")]
    MissingAttribute { attribute: String, ids: Vec<String> },
    #[error("invalid dataset spec: {0}")]
    Spec(String),
    #[error("invalid plan: {0}")]
    Plan(String),
    #[error("synthesis failed; failures per group {failures:?}")]
    Synthesis { failures: BTreeMap<String, usize> },
    #[error(transparent)]
    Diffusion(#[from] DiffusionError),
    #[error(transparent)]
    Control(#[from] ControlError),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
