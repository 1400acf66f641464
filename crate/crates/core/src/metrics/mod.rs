//! Segmentation fairness metrics and synthesis-quality metrics.

mod fairness;
mod report;
mod seg;
mod synthesis;

pub use fairness::{
    essp, fairness, group_stats, total_fairness, Equity, GroupReport, GroupRow, GroupStats,
};
pub use report::{bar_chart_svg, write_reports_csv, CSV_HEADER};
pub use seg::{dice, iou, MetricClass, SegScore, REPORT_CLASSES};
pub use synthesis::{
    cosine_distance, cov, fid, frechet_distance, gaussian_fit, mmd, DownsampleProjection,
    FeatureExtractor, FeatureSet, FlatPixels, Provenance,
};

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("masks differ in size: prediction {pred:?}, ground truth {gt:?}")]
    DimensionMismatch {
        pred: (usize, usize),
        gt: (usize, usize),
    },
    #[error("cosine distance is undefined for a zero vector")]
    ZeroVector,
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
