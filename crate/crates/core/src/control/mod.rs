//! Mask-conditioned toy image synthesis with a zero-convolution control
//! branch around a frozen convolutional base.

mod block;
mod image;

pub use block::{mask_onehot, BaseNet, ControlBlock, ControlTrainConfig};
pub use image::{
    clean_intensity, make_toy_pairs, render_toy_image, render_toy_image_with, RenderStyle,
    ToyImage, BACKGROUND_LEVEL, CUP_LEVEL, DISC_LEVEL, ILLUMINATION, NOISE_SD,
};

use crate::codec::CodecError;
use crate::nn::NnError;

#[derive(Debug, thiserror::Error)]
pub enum ControlError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("frozen base parameters changed during training (checksum {before:#x} -> {after:#x})")]
    FrozenDrift { before: u64, after: u64 },
    #[error("need at least {need} training pairs, got {got}")]
    TooFewPairs { got: usize, need: usize },
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
