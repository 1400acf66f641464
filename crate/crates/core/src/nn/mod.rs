//! Dense and convolutional layers with tape-based reverse-mode gradients,
//! seeded initialization and an Adam optimizer. Everything runs in `f64`.

mod embed;
mod optim;
mod param;
mod tape;
mod tensor;

pub use embed::sinusoidal_embed;
pub use optim::Adam;
pub use param::{
    kaiming_normal, read_checkpoint, write_checkpoint, ParamId, ParamStore, Parameter,
    CHECKPOINT_MAGIC,
};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error("{op}: incompatible shapes {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("kernel {kernel:?} larger than padded input {padded:?}")]
    KernelTooLarge {
        kernel: [usize; 2],
        padded: [usize; 2],
    },
    #[error("loss must be scalar, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("non-finite gradient in parameter {0}")]
    NonFinite(String),
    #[error("embedding dimension must be even, got {0}")]
    OddDimension(usize),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
