use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::codec::MaskImage;
use crate::control::{BaseNet, ControlBlock, ToyImage};
use crate::data::{group_clouds, Manifest, ManifestRow, Provenance, Split, UNSPECIFIED};
use crate::diffusion::{train_group_model, GroupModelRegistry};
use crate::metrics::{bar_chart_svg, write_reports_csv, GroupReport, SegScore, REPORT_CLASSES};

use super::{ExperimentConfig, ExperimentError, ToySegmenter};

/// Independent RNG stream for a named stage.
pub fn stage_seed(seed: u64, stage: &str) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64 ^ seed.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    for b in stage.bytes() {
        h = (h ^ b as u64).wrapping_mul(0x0100_0000_01b3);
    }
    h
}

pub fn stage_rng(seed: u64, stage: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(stage_seed(seed, stage))
}

/// Wraps a failure with the name of the stage that produced it.
pub fn stage<T, E: Into<ExperimentError>>(
    name: &'static str,
    r: Result<T, E>,
) -> Result<T, ExperimentError> {
    r.map_err(|e| ExperimentError::Stage {
        stage: name,
        source: Box::new(e.into()),
    })
}

pub fn load_pair(
    manifest: &Manifest,
    row: &ManifestRow,
) -> Result<(ToyImage, MaskImage), ExperimentError> {
    Ok((
        ToyImage::read_png(&manifest.resolve(&row.image))?,
        MaskImage::read_png(&manifest.resolve(&row.mask))?,
    ))
}

pub fn training_pairs(
    manifest: &Manifest,
    real_only: bool,
) -> Result<Vec<(ToyImage, MaskImage)>, ExperimentError> {
    manifest
        .split(Split::Train)
        .filter(|r| !real_only || r.provenance == Provenance::Real)
        .map(|r| load_pair(manifest, r))
        .collect()
}

/// Per-group diffusion models for `groups` (all groups when `None`).
pub fn train_registry(
    manifest: &Manifest,
    attribute: &str,
    groups: Option<&BTreeSet<String>>,
    config: &ExperimentConfig,
) -> Result<(GroupModelRegistry, BTreeMap<String, Vec<f64>>), ExperimentError> {
    let mut clouds = group_clouds(manifest, attribute, config.n_points, config.z0)?;
    if let Some(keep) = groups {
        clouds.retain(|g, _| keep.contains(g));
    }
    let mut losses = BTreeMap::new();
    let mut registry = GroupModelRegistry::new();
    for (g, c) in clouds {
        if c.len() < config.diffusion.min_rows {
            log::warn!(
                "{attribute}={g}: {} training masks, below the minimum of {}",
                c.len(),
                config.diffusion.min_rows
            );
            continue;
        }
        let (model, report) = train_group_model(attribute, &g, &c, &config.diffusion)?;
        registry.insert(model);
        losses.insert(g, report.losses);
    }
    Ok((registry, losses))
}

/// Autoencoder-pretrained base plus a control branch trained on the real
/// training pairs.
pub fn train_control_block(
    manifest: &Manifest,
    config: &ExperimentConfig,
    seed: u64,
) -> Result<(ControlBlock, Vec<f64>), ExperimentError> {
    let pairs: Vec<(MaskImage, ToyImage)> = training_pairs(manifest, true)?
        .into_iter()
        .map(|(i, m)| (m, i))
        .collect();
    let (m0, _) = pairs
        .first()
        .ok_or_else(|| ExperimentError::Validation("no real training pairs".into()))?;
    let mut rng = stage_rng(seed, "control");
    let mut base = BaseNet::new(m0.height(), m0.width(), &mut rng)?;
    let images: Vec<ToyImage> = pairs.iter().map(|p| p.1.clone()).collect();
    base.pretrain(&images, config.pretrain_steps, config.pretrain_lr, &mut rng)?;
    let mut block = ControlBlock::from_base(base, &mut rng);
    let losses = block.train_control(&pairs, &config.control, &mut rng)?;
    Ok((block, losses))
}

/// Untrained block sized for the manifest's images, for plans that
/// synthesize nothing.
pub fn placeholder_block(manifest: &Manifest) -> Result<ControlBlock, ExperimentError> {
    let first = manifest
        .rows
        .first()
        .ok_or_else(|| ExperimentError::Validation("empty manifest".into()))?;
    let mask = MaskImage::read_png(&manifest.resolve(&first.mask))?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let base = BaseNet::new(mask.height(), mask.width(), &mut rng)?;
    Ok(ControlBlock::from_base(base, &mut rng))
}

pub fn train_segmenter(
    pairs: &[(ToyImage, MaskImage)],
    config: &ExperimentConfig,
    seed: u64,
) -> Result<(ToySegmenter, Vec<f64>), ExperimentError> {
    let (img, _) = pairs
        .first()
        .ok_or_else(|| ExperimentError::Validation("training split is empty".into()))?;
    let mut rng = stage_rng(seed, "segmenter");
    let mut seg = ToySegmenter::new(img.height(), img.width(), config.segmenter.width, &mut rng)?;
    let losses = seg.train(pairs, &config.segmenter, &mut rng)?;
    Ok((seg, losses))
}

#[derive(Clone, Debug, PartialEq)]
pub struct SampleScore {
    pub id: String,
    pub attributes: BTreeMap<String, String>,
    pub score: SegScore,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Exclusion {
    pub id: String,
    /// `None` when the row is excluded from every attribute.
    pub attribute: Option<String>,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub reports: Vec<GroupReport>,
    pub samples: Vec<SampleScore>,
    pub excluded: Vec<Exclusion>,
}

/// Scores `predict` on the test rows of `manifest`. Synthetic rows never
/// count; rows without a real value for an attribute are left out of that
/// attribute's report. Every exclusion is itemized.
pub fn evaluate(
    manifest: &Manifest,
    attributes: &[String],
    predict: &dyn Fn(&ManifestRow, &ToyImage) -> Result<MaskImage, ExperimentError>,
) -> Result<Evaluation, ExperimentError> {
    let mut samples = Vec::new();
    let mut excluded = Vec::new();
    for r in manifest.split(Split::Test) {
        if r.provenance != Provenance::Real {
            excluded.push(Exclusion {
                id: r.id.clone(),
                attribute: None,
                reason: "synthetic".into(),
            });
            continue;
        }
        let (img, gt) = load_pair(manifest, r)?;
        let pred = predict(r, &img)?;
        samples.push(SampleScore {
            id: r.id.clone(),
            attributes: r.attributes.clone(),
            score: SegScore::compute(&pred, &gt, &REPORT_CLASSES)?,
        });
    }
    let mut reports = Vec::new();
    for a in attributes {
        let mut scored: Vec<(&str, SegScore)> = Vec::new();
        for s in &samples {
            match s.attributes.get(a).map(String::as_str) {
                Some(g) if g != UNSPECIFIED => scored.push((g, s.score.clone())),
                other => excluded.push(Exclusion {
                    id: s.id.clone(),
                    attribute: Some(a.clone()),
                    reason: if other.is_some() {
                        UNSPECIFIED.into()
                    } else {
                        "missing".into()
                    },
                }),
            }
        }
        if scored.is_empty() {
            log::warn!("attribute {a}: no test rows; report skipped");
            continue;
        }
        let report = GroupReport::build(a, &scored, &[])?;
        for e in [&report.dice, &report.iou]
            .into_iter()
            .chain(&report.class_dice)
            .chain(&report.class_iou)
        {
            if e.essp > e.overall + 1e-12 {
                return Err(ExperimentError::Validation(format!(
                    "equity-scaled value {} exceeds overall {} for {a}",
                    e.essp, e.overall
                )));
            }
        }
        reports.push(report);
    }
    Ok(Evaluation {
        reports,
        samples,
        excluded,
    })
}

/// `reports.csv`, `samples.csv`, `excluded.csv` and one SVG per attribute.
pub fn write_evaluation(dir: &Path, eval: &Evaluation) -> Result<(), ExperimentError> {
    fs::create_dir_all(dir)?;
    write_reports_csv(fs::File::create(dir.join("reports.csv"))?, &eval.reports)?;
    let attrs: BTreeSet<&String> = eval
        .samples
        .iter()
        .flat_map(|s| s.attributes.keys())
        .collect();
    let mut w = csv::Writer::from_path(dir.join("samples.csv"))
        .map_err(crate::metrics::MetricsError::from)?;
    let mut header = vec!["id".to_string()];
    header.extend(attrs.iter().map(|a| format!("attr:{a}")));
    for c in REPORT_CLASSES {
        header.push(format!("dice_{}", c.name()));
        header.push(format!("iou_{}", c.name()));
    }
    w.write_record(&header)
        .map_err(crate::metrics::MetricsError::from)?;
    for s in &eval.samples {
        let mut rec = vec![s.id.clone()];
        rec.extend(
            attrs
                .iter()
                .map(|a| s.attributes.get(*a).cloned().unwrap_or_default()),
        );
        for c in REPORT_CLASSES {
            rec.push(format!("{:.17e}", s.score.dice_of(c).unwrap_or(f64::NAN)));
            rec.push(format!("{:.17e}", s.score.iou_of(c).unwrap_or(f64::NAN)));
        }
        w.write_record(&rec)
            .map_err(crate::metrics::MetricsError::from)?;
    }
    w.flush()?;
    let mut text = String::from("id,attribute,reason\n");
    for e in &eval.excluded {
        text.push_str(&format!(
            "{},{},{}\n",
            e.id,
            e.attribute.as_deref().unwrap_or("*"),
            e.reason
        ));
    }
    fs::write(dir.join("excluded.csv"), text)?;
    for r in &eval.reports {
        fs::write(
            dir.join(format!("{}_dice.svg", r.attribute)),
            bar_chart_svg(r),
        )?;
    }
    Ok(())
}

pub fn write_losses(path: &Path, losses: &[f64]) -> Result<(), ExperimentError> {
    let mut text = String::from("step,loss\n");
    for (i, l) in losses.iter().enumerate() {
        text.push_str(&format!("{i},{l:.9e}\n"));
    }
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, text)?;
    Ok(())
}
