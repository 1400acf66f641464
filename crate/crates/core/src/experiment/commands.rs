use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::codec::{decode_point_cloud, encode_mask, BoundaryPointCloud, MaskImage};
use crate::control::ControlBlock;
use crate::data::{
    execute_plan, make_toy_dataset, plan_equal_scale, Manifest, ManifestRow, Split, TargetPolicy,
};
use crate::diffusion::GroupModelRegistry;
use crate::metrics::{dice, MetricClass};

use super::pipeline::{
    evaluate, placeholder_block, stage_rng, stage_seed, train_control_block, train_registry,
    train_segmenter, training_pairs, write_evaluation, write_losses, Evaluation,
};
use super::{ExperimentConfig, ExperimentError, ToySegmenter};

/// Outcome of a per-file batch conversion.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct BatchSummary {
    pub ok: Vec<String>,
    pub failed: Vec<(String, String)>,
    /// Per-file `(cup, disc)` Dice against a reference, when one was given.
    pub dice: BTreeMap<String, (f64, f64)>,
}

impl BatchSummary {
    pub fn render(&self) -> String {
        let mut s = format!("{} ok, {} failed\n", self.ok.len(), self.failed.len());
        for (f, e) in &self.failed {
            let _ = writeln!(s, "failed {f}: {e}");
        }
        for (f, (c, d)) in &self.dice {
            let _ = writeln!(s, "dice {f}: cup {c:.4} disc {d:.4}");
        }
        s
    }

    pub fn into_result(self) -> Result<Self, ExperimentError> {
        if self.failed.is_empty() {
            Ok(self)
        } else {
            Err(ExperimentError::Validation(self.render()))
        }
    }
}

fn files_with_ext(dir: &Path, ext: &str) -> Result<Vec<PathBuf>, ExperimentError> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| ExperimentError::Validation(format!("cannot read {}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case(ext)))
        .collect();
    out.sort();
    Ok(out)
}

fn stem(p: &Path) -> String {
    p.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// Every `.png` mask in `masks` to a `.fpc` cloud in `out`.
pub fn cmd_encode(
    masks: &Path,
    out: &Path,
    n_points: usize,
    z0: f64,
) -> Result<BatchSummary, ExperimentError> {
    fs::create_dir_all(out)?;
    let mut summary = BatchSummary::default();
    for p in files_with_ext(masks, "png")? {
        let name = stem(&p);
        let r = MaskImage::read_png(&p)
            .and_then(|m| encode_mask(&m, n_points, z0))
            .and_then(|c| c.write_fpc(&out.join(format!("{name}.fpc"))));
        match r {
            Ok(()) => summary.ok.push(name),
            Err(e) => summary.failed.push((name, e.to_string())),
        }
    }
    Ok(summary)
}

/// Every `.fpc` cloud in `clouds` to a `.png` mask in `out`; with a
/// reference directory the decoded masks are scored against same-named
/// masks there.
pub fn cmd_decode(
    clouds: &Path,
    out: &Path,
    width: usize,
    height: usize,
    reference: Option<&Path>,
) -> Result<BatchSummary, ExperimentError> {
    fs::create_dir_all(out)?;
    let mut summary = BatchSummary::default();
    for p in files_with_ext(clouds, "fpc")? {
        let name = stem(&p);
        let r = (|| -> Result<MaskImage, ExperimentError> {
            let cloud = BoundaryPointCloud::read_fpc(&p)?;
            let mask = decode_point_cloud(&cloud, width, height)?;
            mask.write_png(&out.join(format!("{name}.png")))?;
            Ok(mask)
        })();
        match r {
            Ok(mask) => {
                if let Some(dir) = reference {
                    match MaskImage::read_png(&dir.join(format!("{name}.png"))) {
                        Ok(gt) => {
                            let c = dice(&mask, &gt, MetricClass::Cup)?;
                            let d = dice(&mask, &gt, MetricClass::Disc)?;
                            summary.dice.insert(name.clone(), (c, d));
                        }
                        Err(e) => {
                            summary.failed.push((name, format!("reference: {e}")));
                            continue;
                        }
                    }
                }
                summary.ok.push(name);
            }
            Err(e) => summary.failed.push((name, e.to_string())),
        }
    }
    Ok(summary)
}

/// Trains one model per group of `attribute`; writes `models/` and
/// `losses/diffusion_<group>.csv` under `out`.
pub fn cmd_train_diffusion(
    manifest: &Path,
    attribute: &str,
    config: &ExperimentConfig,
    out: &Path,
) -> Result<Vec<String>, ExperimentError> {
    let m = Manifest::load(manifest)?;
    let (registry, losses) = train_registry(&m, attribute, None, config)?;
    registry.save(&out.join("models"))?;
    for (g, l) in &losses {
        write_losses(&out.join("losses").join(format!("diffusion_{g}.csv")), l)?;
    }
    Ok(losses.into_keys().collect())
}

/// Draws `count` masks from one group model into `out/masks` and
/// `out/pointclouds`.
pub fn cmd_sample_masks(
    models: &Path,
    attribute: &str,
    group: &str,
    count: usize,
    size: (usize, usize),
    seed: u64,
    out: &Path,
) -> Result<Vec<PathBuf>, ExperimentError> {
    let model = crate::diffusion::GroupModel::load(models, attribute, group)?;
    let mut rng = stage_rng(seed, "sample-masks");
    fs::create_dir_all(out.join("masks"))?;
    fs::create_dir_all(out.join("pointclouds"))?;
    let mut written = Vec::new();
    for i in 0..count {
        let s = model.sample(&mut rng)?;
        let mask = decode_point_cloud(&s.cloud, size.0, size.1)?;
        let id = format!("sample_{attribute}_{group}_{i:04}");
        s.cloud
            .write_fpc(&out.join("pointclouds").join(format!("{id}.fpc")))?;
        let p = out.join("masks").join(format!("{id}.png"));
        mask.write_png(&p)?;
        written.push(p);
    }
    Ok(written)
}

/// Base pretraining and control training on the real training pairs;
/// writes `control.fdnn` and `losses/control.csv`.
pub fn cmd_train_control(
    manifest: &Path,
    config: &ExperimentConfig,
    out: &Path,
) -> Result<PathBuf, ExperimentError> {
    let m = Manifest::load(manifest)?;
    let (block, losses) = train_control_block(&m, config, config.seed)?;
    fs::create_dir_all(out)?;
    let path = out.join("control.fdnn");
    let mut bytes = Vec::new();
    block.save(&mut bytes)?;
    fs::write(&path, bytes)?;
    write_losses(&out.join("losses").join("control.csv"), &losses)?;
    Ok(path)
}

/// Per-group train counts before and after combination.
#[derive(Clone, Debug, PartialEq)]
pub struct CombineSummary {
    pub before: BTreeMap<String, usize>,
    pub after: BTreeMap<String, usize>,
    pub synthesized: usize,
    pub manifest: PathBuf,
}

impl CombineSummary {
    pub fn render(&self, attribute: &str) -> String {
        let mut s = format!("{:<16} {:>8} {:>8}\n", attribute, "before", "after");
        for (g, a) in &self.after {
            let _ = writeln!(
                s,
                "{:<16} {:>8} {:>8}",
                g,
                self.before.get(g).copied().unwrap_or(0),
                a
            );
        }
        let _ = writeln!(
            s,
            "{} synthetic samples; manifest {}",
            self.synthesized,
            self.manifest.display()
        );
        s
    }
}

/// Equal-scale combination of the training split; the combined manifest
/// is written next to the input as `combined.csv`.
pub fn cmd_combine(
    manifest: &Path,
    attribute: &str,
    models: Option<&Path>,
    control: Option<&Path>,
    config: &ExperimentConfig,
) -> Result<CombineSummary, ExperimentError> {
    let m = Manifest::load(manifest)?;
    let train: Vec<ManifestRow> = m.split(Split::Train).cloned().collect();
    let plan = plan_equal_scale(
        &train,
        attribute,
        config.target,
        stage_seed(config.seed, "plan"),
    )?;
    let mut registry = GroupModelRegistry::new();
    let block = if plan.total_synthetic() > 0 {
        let models = models
            .ok_or_else(|| ExperimentError::Validation("synthesis needed: pass --models".into()))?;
        for g in plan.synthesis_groups() {
            registry.insert(crate::diffusion::GroupModel::load(
                models, attribute, &g.group,
            )?);
        }
        let control = control.ok_or_else(|| {
            ExperimentError::Validation("synthesis needed: pass --control".into())
        })?;
        ControlBlock::load(fs::File::open(control)?)?
    } else {
        placeholder_block(&m)?
    };
    let combined = execute_plan(&m, &plan, &registry, &block, &config.combine)?;
    let path = manifest.with_file_name("combined.csv");
    combined.write(&path)?;
    Ok(CombineSummary {
        before: m.group_counts(attribute, Split::Train),
        after: combined.group_counts(attribute, Split::Train),
        synthesized: plan.total_synthetic(),
        manifest: path,
    })
}

/// Trains on the manifest's training split; writes `segmenter.fdnn` and
/// `losses/segmenter.csv`. Returns the mean training-set Dice.
pub fn cmd_train_segmenter(
    manifest: &Path,
    real_only: bool,
    config: &ExperimentConfig,
    out: &Path,
) -> Result<f64, ExperimentError> {
    let m = Manifest::load(manifest)?;
    let pairs = training_pairs(&m, real_only)?;
    let (seg, losses) = train_segmenter(&pairs, config, config.seed)?;
    fs::create_dir_all(out)?;
    let mut bytes = Vec::new();
    seg.save(&mut bytes)?;
    fs::write(out.join("segmenter.fdnn"), bytes)?;
    write_losses(&out.join("losses").join("segmenter.csv"), &losses)?;
    let mut total = 0.0;
    for (img, gt) in &pairs {
        let pred = seg.predict(img)?;
        total += (dice(&pred, gt, MetricClass::Cup)? + dice(&pred, gt, MetricClass::Rim)?) / 2.0;
    }
    Ok(total / pairs.len() as f64)
}

/// Scores a saved segmenter on the test split and writes the reports.
pub fn cmd_evaluate(
    segmenter: &Path,
    manifest: &Path,
    attributes: &[String],
    out: &Path,
) -> Result<Evaluation, ExperimentError> {
    let seg = ToySegmenter::load(fs::File::open(segmenter)?)?;
    let m = Manifest::load(manifest)?;
    let attrs = if attributes.is_empty() {
        m.attributes()
    } else {
        attributes.to_vec()
    };
    let eval = evaluate(&m, &attrs, &|_, img| seg.predict(img))?;
    write_evaluation(out, &eval)?;
    Ok(eval)
}

/// Writes the configured two-group toy dataset under `out`.
pub fn cmd_make_toy_data(
    config: &ExperimentConfig,
    out: &Path,
) -> Result<Manifest, ExperimentError> {
    Ok(make_toy_dataset(
        &config.toy,
        out,
        &mut stage_rng(config.seed, "toy"),
    )?)
}

pub fn parse_target(s: &str) -> Result<TargetPolicy, ExperimentError> {
    s.parse().map_err(ExperimentError::Validation)
}
