use crate::codec::{MaskImage, BACKGROUND, CUP};

use super::MetricsError;

/// Region scored by a segmentation metric.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MetricClass {
    Cup,
    /// Whole disc, cup included.
    Disc,
    /// Disc minus cup.
    Rim,
}

impl MetricClass {
    pub fn name(self) -> &'static str {
        match self {
            Self::Cup => "cup",
            Self::Disc => "disc",
            Self::Rim => "rim",
        }
    }

    pub fn contains(self, label: u8) -> bool {
        match self {
            Self::Cup => label == CUP,
            Self::Disc => label != BACKGROUND,
            Self::Rim => label != BACKGROUND && label != CUP,
        }
    }
}

impl std::str::FromStr for MetricClass {
    type Err = MetricsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "cup" => Ok(Self::Cup),
            "disc" => Ok(Self::Disc),
            "rim" => Ok(Self::Rim),
            other => Err(MetricsError::Invalid(format!("unknown class {other:?}"))),
        }
    }
}

/// Classes reported by default.
pub const REPORT_CLASSES: [MetricClass; 2] = [MetricClass::Cup, MetricClass::Rim];

fn counts(
    pred: &MaskImage,
    gt: &MaskImage,
    class: MetricClass,
) -> Result<(usize, usize, usize), MetricsError> {
    if pred.width() != gt.width() || pred.height() != gt.height() {
        return Err(MetricsError::DimensionMismatch {
            pred: (pred.width(), pred.height()),
            gt: (gt.width(), gt.height()),
        });
    }
    let (mut a, mut b, mut both) = (0, 0, 0);
    for (&p, &g) in pred.labels().iter().zip(gt.labels()) {
        let (ip, ig) = (class.contains(p), class.contains(g));
        a += ip as usize;
        b += ig as usize;
        both += (ip && ig) as usize;
    }
    Ok((a, b, both))
}

/// `2|A∩B| / (|A| + |B|)`, 1 when both are empty.
pub fn dice(pred: &MaskImage, gt: &MaskImage, class: MetricClass) -> Result<f64, MetricsError> {
    let (a, b, both) = counts(pred, gt, class)?;
    if a + b == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * both as f64 / (a + b) as f64)
}

/// `|A∩B| / |A∪B|`, 1 when both are empty.
pub fn iou(pred: &MaskImage, gt: &MaskImage, class: MetricClass) -> Result<f64, MetricsError> {
    let (a, b, both) = counts(pred, gt, class)?;
    let union = a + b - both;
    if union == 0 {
        return Ok(1.0);
    }
    Ok(both as f64 / union as f64)
}

/// Per-class Dice and IoU of one prediction.
#[derive(Clone, Debug, PartialEq)]
pub struct SegScore {
    pub classes: Vec<MetricClass>,
    pub dice: Vec<f64>,
    pub iou: Vec<f64>,
}

impl SegScore {
    pub fn compute(
        pred: &MaskImage,
        gt: &MaskImage,
        classes: &[MetricClass],
    ) -> Result<Self, MetricsError> {
        let mut dice_v = Vec::with_capacity(classes.len());
        let mut iou_v = Vec::with_capacity(classes.len());
        for &c in classes {
            dice_v.push(dice(pred, gt, c)?);
            iou_v.push(iou(pred, gt, c)?);
        }
        Ok(Self {
            classes: classes.to_vec(),
            dice: dice_v,
            iou: iou_v,
        })
    }

    fn index(&self, class: MetricClass) -> Option<usize> {
        self.classes.iter().position(|&c| c == class)
    }

    pub fn dice_of(&self, class: MetricClass) -> Option<f64> {
        self.index(class).map(|i| self.dice[i])
    }

    pub fn iou_of(&self, class: MetricClass) -> Option<f64> {
        self.index(class).map(|i| self.iou[i])
    }

    pub fn mean_dice(&self) -> f64 {
        self.dice.iter().sum::<f64>() / self.dice.len().max(1) as f64
    }

    pub fn mean_iou(&self) -> f64 {
        self.iou.iter().sum::<f64>() / self.iou.len().max(1) as f64
    }
}
