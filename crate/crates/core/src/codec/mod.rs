//! Mask ↔ boundary point-cloud codec.
//!
//! A cup/disc label map is reduced to its two outer contours, resampled at
//! equal arc length, and lifted to 3-D with the class carried by the sign of
//! `z`. Decoding goes the other way through angularly ordered polygons.

mod cloud;
mod contour;
mod mask;

pub use cloud::{
    angular_order, decode_point_cloud, denormalize_cloud, encode_mask, fill_polygon, is_cup,
    normalize_cloud, resample_closed, sample_point_cloud, BoundaryPointCloud, NormFrame,
    DEFAULT_POINTS, DEFAULT_Z0,
};
pub use contour::{extract_boundaries, largest_component, signed_area, Boundaries, Contour};
pub use mask::{decode_gray_png, encode_gray_png, Ellipse, MaskImage, BACKGROUND, CUP, DISC};

#[derive(Debug, thiserror::Error)]
pub enum CodecError {
    #[error("degenerate mask: {0}")]
    DegenerateMask(String),
    #[error("{class} has {count} points, at least 3 are needed to decode")]
    TooFewPoints { class: &'static str, count: usize },
    #[error("point set has zero spatial extent")]
    ZeroExtent,
    #[error("point count must be even and positive, got {0}")]
    OddPointCount(usize),
    #[error("invalid file: {0}")]
    Format(String),
    #[error("png: {0}")]
    Png(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
