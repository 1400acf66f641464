use std::collections::BTreeMap;

use super::{MetricClass, MetricsError, SegScore};

/// Group means of one metric with population spread across groups.
#[derive(Clone, Debug, PartialEq)]
pub struct GroupStats {
    /// `(group, sample count, mean)` in group-name order.
    pub groups: Vec<(String, usize, f64)>,
    /// Mean over all samples.
    pub overall: f64,
    pub stdev: f64,
    pub variance: f64,
}

/// Unweighted per-group means; stdev and variance are population
/// statistics over the group means (0 for a single group).
pub fn group_stats<S: AsRef<str>>(values: &[(S, f64)]) -> Result<GroupStats, MetricsError> {
    if values.is_empty() {
        return Err(MetricsError::Invalid("no scores".into()));
    }
    // Means are taken around a shift value so that identical scores give
    // bit-identical means and a spread of exactly zero.
    let mut acc: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for (g, v) in values {
        if !v.is_finite() {
            return Err(MetricsError::NonFinite(format!(
                "score {v} in group {}",
                g.as_ref()
            )));
        }
        acc.entry(g.as_ref()).or_default().push(*v);
    }
    let groups: Vec<(String, usize, f64)> = acc
        .into_iter()
        .map(|(g, vs)| (g.to_string(), vs.len(), shifted_mean(&vs)))
        .collect();
    let all: Vec<f64> = values.iter().map(|(_, v)| *v).collect();
    let means: Vec<f64> = groups.iter().map(|g| g.2).collect();
    let mean_of_means = shifted_mean(&means);
    let variance = means
        .iter()
        .map(|m| (m - mean_of_means).powi(2))
        .sum::<f64>()
        / means.len() as f64;
    Ok(GroupStats {
        groups,
        overall: shifted_mean(&all),
        stdev: variance.sqrt(),
        variance,
    })
}

fn shifted_mean(values: &[f64]) -> f64 {
    let shift = values[0];
    shift + values.iter().map(|v| v - shift).sum::<f64>() / values.len() as f64
}

/// Equity-scaled performance `L / (1 + stdev)`.
pub fn essp(overall: f64, stdev: f64) -> f64 {
    overall / (1.0 + stdev)
}

/// Negated sum of per-attribute group variances.
pub fn fairness(variances: &[f64]) -> f64 {
    -variances.iter().sum::<f64>()
}

/// Spread and equity-scaled value of one metric across groups.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Equity {
    pub overall: f64,
    pub stdev: f64,
    pub variance: f64,
    pub essp: f64,
}

impl Equity {
    fn from_stats(s: &GroupStats) -> Self {
        Self {
            overall: s.overall,
            stdev: s.stdev,
            variance: s.variance,
            essp: essp(s.overall, s.stdev),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroupRow {
    pub group: String,
    pub n: usize,
    /// Mean Dice per class, in the report's class order.
    pub dice: Vec<f64>,
    pub iou: Vec<f64>,
}

/// Per-group segmentation results for one sensitive attribute.
///
/// The summary `dice` and `iou` entries use the per-sample mean over the
/// report classes; `fairness` is the negated group variance of that Dice.
#[derive(Clone, Debug, PartialEq)]
pub struct GroupReport {
    pub attribute: String,
    pub classes: Vec<MetricClass>,
    pub rows: Vec<GroupRow>,
    pub overall: GroupRow,
    pub class_dice: Vec<Equity>,
    pub class_iou: Vec<Equity>,
    pub dice: Equity,
    pub iou: Equity,
    pub fairness: f64,
}

impl GroupReport {
    /// `declared` groups with no samples are dropped with a warning.
    pub fn build<S: AsRef<str>>(
        attribute: &str,
        samples: &[(S, SegScore)],
        declared: &[&str],
    ) -> Result<Self, MetricsError> {
        let first = samples.first().ok_or_else(|| {
            MetricsError::Invalid(format!("no samples for attribute {attribute}"))
        })?;
        let classes = first.1.classes.clone();
        if samples.iter().any(|(_, s)| s.classes != classes) {
            return Err(MetricsError::Invalid(
                "samples scored on different classes".into(),
            ));
        }
        for g in declared {
            if !samples.iter().any(|(s, _)| s.as_ref() == *g) {
                log::warn!("{attribute}: group {g} has no samples and is excluded");
            }
        }
        let column = |f: &dyn Fn(&SegScore) -> f64| -> Result<GroupStats, MetricsError> {
            let v: Vec<(&str, f64)> = samples.iter().map(|(g, s)| (g.as_ref(), f(s))).collect();
            group_stats(&v)
        };
        let mut dice_stats = Vec::new();
        let mut iou_stats = Vec::new();
        for i in 0..classes.len() {
            dice_stats.push(column(&|s| s.dice[i])?);
            iou_stats.push(column(&|s| s.iou[i])?);
        }
        let mean_dice = column(&|s| s.mean_dice())?;
        let mean_iou = column(&|s| s.mean_iou())?;
        let rows = mean_dice
            .groups
            .iter()
            .enumerate()
            .map(|(gi, (g, n, _))| GroupRow {
                group: g.clone(),
                n: *n,
                dice: dice_stats.iter().map(|s| s.groups[gi].2).collect(),
                iou: iou_stats.iter().map(|s| s.groups[gi].2).collect(),
            })
            .collect();
        Ok(Self {
            attribute: attribute.to_string(),
            overall: GroupRow {
                group: "overall".into(),
                n: samples.len(),
                dice: dice_stats.iter().map(|s| s.overall).collect(),
                iou: iou_stats.iter().map(|s| s.overall).collect(),
            },
            class_dice: dice_stats.iter().map(Equity::from_stats).collect(),
            class_iou: iou_stats.iter().map(Equity::from_stats).collect(),
            dice: Equity::from_stats(&mean_dice),
            iou: Equity::from_stats(&mean_iou),
            fairness: fairness(&[mean_dice.variance]),
            classes,
            rows,
        })
    }

    pub fn class_index(&self, class: MetricClass) -> Option<usize> {
        self.classes.iter().position(|&c| c == class)
    }
}

/// Fairness summed over several attribute reports.
pub fn total_fairness(reports: &[GroupReport]) -> f64 {
    fairness(&reports.iter().map(|r| r.dice.variance).collect::<Vec<_>>())
}
