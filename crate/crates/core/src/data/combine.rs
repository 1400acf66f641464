use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::codec::{decode_point_cloud, encode_mask, BoundaryPointCloud, MaskImage};
use crate::control::{ControlBlock, ToyImage};
use crate::diffusion::{DiffusionError, GroupModelRegistry};

use super::{DataError, Manifest, ManifestRow, Provenance, Split, UNSPECIFIED};

/// How the per-group target count is chosen.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TargetPolicy {
    /// Size of the largest group.
    Auto,
    Fixed(usize),
}

impl std::str::FromStr for TargetPolicy {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        if s.eq_ignore_ascii_case("auto") {
            return Ok(Self::Auto);
        }
        match s.parse::<usize>() {
            Ok(n) if n > 0 => Ok(Self::Fixed(n)),
            _ => Err(format!(
                "target must be AUTO or a positive count, got {s:?}"
            )),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum GroupAction {
    KeepAll,
    /// Real ids retained, in manifest order.
    Subsample {
        keep: Vec<String>,
    },
    Synthesize {
        count: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GroupPlan {
    pub group: String,
    pub real: usize,
    pub action: GroupAction,
}

impl GroupPlan {
    pub fn total(&self) -> usize {
        match &self.action {
            GroupAction::KeepAll => self.real,
            GroupAction::Subsample { keep } => keep.len(),
            GroupAction::Synthesize { count } => self.real + count,
        }
    }

    pub fn synthesize(&self) -> usize {
        match self.action {
            GroupAction::Synthesize { count } => count,
            _ => 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CombinePlan {
    pub attribute: String,
    pub target: usize,
    pub groups: Vec<GroupPlan>,
    pub seed: u64,
}

impl CombinePlan {
    pub fn synthesis_groups(&self) -> impl Iterator<Item = &GroupPlan> {
        self.groups.iter().filter(|g| g.synthesize() > 0)
    }

    pub fn total_synthetic(&self) -> usize {
        self.groups.iter().map(GroupPlan::synthesize).sum()
    }
}

fn group_seed(seed: u64, group: &str, salt: u64) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64 ^ seed.rotate_left(17) ^ salt;
    for b in group.bytes() {
        h = (h ^ b as u64).wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Per-group actions that bring every group of `attribute` to the same
/// count: larger groups are subsampled without replacement, smaller ones
/// are topped up with synthetic samples.
pub fn plan_equal_scale(
    rows: &[ManifestRow],
    attribute: &str,
    policy: TargetPolicy,
    seed: u64,
) -> Result<CombinePlan, DataError> {
    let missing: Vec<String> = rows
        .iter()
        .filter(|r| r.group(attribute).is_none())
        .map(|r| r.id.clone())
        .collect();
    if !missing.is_empty() {
        return Err(DataError::MissingAttribute {
            attribute: attribute.into(),
            ids: missing,
        });
    }
    let mut by_group: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for r in rows {
        by_group
            .entry(r.group(attribute).unwrap())
            .or_default()
            .push(&r.id);
    }
    if by_group.is_empty() {
        return Err(DataError::Plan("no rows to plan over".into()));
    }
    let target = match policy {
        TargetPolicy::Auto => by_group.values().map(Vec::len).max().unwrap(),
        TargetPolicy::Fixed(0) => return Err(DataError::Plan("target must be positive".into())),
        TargetPolicy::Fixed(n) => n,
    };
    let groups = by_group
        .into_iter()
        .map(|(g, ids)| {
            let real = ids.len();
            let action = if real == target {
                GroupAction::KeepAll
            } else if real > target {
                let mut rng = ChaCha8Rng::seed_from_u64(group_seed(seed, g, 1));
                let mut picked = index::sample(&mut rng, real, target).into_vec();
                picked.sort_unstable();
                GroupAction::Subsample {
                    keep: picked.into_iter().map(|i| ids[i].to_string()).collect(),
                }
            } else {
                GroupAction::Synthesize {
                    count: target - real,
                }
            };
            GroupPlan {
                group: g.to_string(),
                real,
                action,
            }
        })
        .collect();
    Ok(CombinePlan {
        attribute: attribute.into(),
        target,
        groups,
        seed,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CombineConfig {
    /// Sample-and-decode attempts per synthetic sample.
    pub max_attempts: usize,
    /// Gaussian noise added to synthesized images.
    pub image_noise_sd: f64,
}

impl Default for CombineConfig {
    fn default() -> Self {
        Self {
            max_attempts: 4,
            image_noise_sd: 0.0,
        }
    }
}

struct Synthesized {
    id: String,
    group: String,
    mask: MaskImage,
    image: ToyImage,
    cloud: BoundaryPointCloud,
}

fn synthesize_one(
    registry: &GroupModelRegistry,
    synth: &ControlBlock,
    attribute: &str,
    group: &str,
    idx: usize,
    seed: u64,
    config: &CombineConfig,
) -> Result<Synthesized, usize> {
    let model = registry.get(attribute, group).map_err(|_| 0usize)?;
    let mut rng = ChaCha8Rng::seed_from_u64(group_seed(seed, group, 2 + idx as u64));
    for attempt in 0..config.max_attempts.max(1) {
        let cloud = match model.sample(&mut rng) {
            Ok(s) => s.cloud,
            Err(DiffusionError::Undecodable { .. }) => continue,
            Err(e) => {
                log::warn!("{attribute}={group} sample {idx} attempt {attempt}: {e}");
                continue;
            }
        };
        let Ok(mask) = decode_point_cloud(&cloud, synth.width(), synth.height()) else {
            continue;
        };
        if mask.cup_area() == 0 || mask.disc_area() == 0 {
            continue;
        }
        let Ok(mut image) = synth.synth_image(&mask) else {
            continue;
        };
        if config.image_noise_sd > 0.0 {
            let noise = Normal::new(0.0, config.image_noise_sd).expect("positive sd");
            let px: Vec<f64> = image
                .pixels()
                .iter()
                .map(|v| (v + noise.sample(&mut rng)).clamp(0.0, 1.0))
                .collect();
            image = ToyImage::new(image.width(), image.height(), px).expect("clamped pixels");
        }
        return Ok(Synthesized {
            id: format!("syn_{attribute}_{group}_{idx:04}"),
            group: group.to_string(),
            mask,
            image,
            cloud,
        });
    }
    Err(config.max_attempts.max(1))
}

fn stage(dir: &Path, s: &Synthesized) -> Result<(), DataError> {
    s.mask
        .write_png(&dir.join("masks").join(format!("{}.png", s.id)))?;
    s.image
        .write_png(&dir.join("images").join(format!("{}.png", s.id)))?;
    s.cloud
        .write_fpc(&dir.join("pointclouds").join(format!("{}.fpc", s.id)))?;
    Ok(())
}

/// Applies `plan` to the training rows of `manifest`. Test rows pass
/// through untouched. Synthetic files are staged in a scratch directory
/// under the dataset root and only moved into place once every sample has
/// succeeded.
pub fn execute_plan(
    manifest: &Manifest,
    plan: &CombinePlan,
    registry: &GroupModelRegistry,
    synth: &ControlBlock,
    config: &CombineConfig,
) -> Result<Manifest, DataError> {
    for g in plan.synthesis_groups() {
        registry.get(&plan.attribute, &g.group)?;
    }
    let known: BTreeSet<&str> = plan.groups.iter().map(|g| g.group.as_str()).collect();
    let stray: Vec<String> = manifest
        .split(Split::Train)
        .filter(|r| r.group(&plan.attribute).is_none_or(|g| !known.contains(g)))
        .map(|r| r.id.clone())
        .collect();
    if !stray.is_empty() {
        return Err(DataError::Plan(format!(
            "training rows outside the plan: {stray:?}"
        )));
    }

    let jobs: Vec<(&str, usize)> = plan
        .synthesis_groups()
        .flat_map(|g| (0..g.synthesize()).map(move |i| (g.group.as_str(), i)))
        .collect();
    let results: Vec<Result<Synthesized, usize>> = jobs
        .par_iter()
        .map(|&(g, i)| synthesize_one(registry, synth, &plan.attribute, g, i, plan.seed, config))
        .collect();
    let mut failures: BTreeMap<String, usize> = BTreeMap::new();
    for (&(g, _), r) in jobs.iter().zip(&results) {
        if r.is_err() {
            *failures.entry(g.to_string()).or_default() += 1;
        }
    }
    if !failures.is_empty() {
        return Err(DataError::Synthesis { failures });
    }
    let samples: Vec<Synthesized> = results.into_iter().map(|r| r.ok().unwrap()).collect();
    let existing: BTreeSet<&str> = manifest.rows.iter().map(|r| r.id.as_str()).collect();
    if let Some(s) = samples.iter().find(|s| existing.contains(s.id.as_str())) {
        return Err(DataError::Plan(format!(
            "synthetic id {} already in the manifest",
            s.id
        )));
    }

    let mut synthetic_rows = Vec::with_capacity(samples.len());
    if !samples.is_empty() {
        fs::create_dir_all(&manifest.root)?;
        let staging = tempfile::Builder::new()
            .prefix(".staging-")
            .tempdir_in(&manifest.root)?;
        for sub in ["masks", "images", "pointclouds"] {
            fs::create_dir_all(staging.path().join(sub))?;
            fs::create_dir_all(manifest.root.join(sub))?;
        }
        samples
            .par_iter()
            .try_for_each(|s| stage(staging.path(), s))?;
        let others: BTreeSet<&String> = manifest
            .rows
            .iter()
            .flat_map(|r| r.attributes.keys())
            .filter(|a| **a != plan.attribute)
            .collect();
        for s in &samples {
            for (sub, ext) in [("masks", "png"), ("images", "png"), ("pointclouds", "fpc")] {
                let rel = PathBuf::from(sub).join(format!("{}.{ext}", s.id));
                fs::rename(staging.path().join(&rel), manifest.root.join(&rel))?;
            }
            let mut attributes: BTreeMap<String, String> = others
                .iter()
                .map(|a| ((*a).clone(), UNSPECIFIED.to_string()))
                .collect();
            attributes.insert(plan.attribute.clone(), s.group.clone());
            synthetic_rows.push(ManifestRow {
                id: s.id.clone(),
                image: PathBuf::from("images").join(format!("{}.png", s.id)),
                mask: PathBuf::from("masks").join(format!("{}.png", s.id)),
                split: Split::Train,
                provenance: Provenance::Synthetic,
                attributes,
            });
        }
    }

    let dropped: BTreeSet<&str> = plan
        .groups
        .iter()
        .filter_map(|g| match &g.action {
            GroupAction::Subsample { keep } => Some((g, keep)),
            _ => None,
        })
        .flat_map(|(g, keep)| {
            let keep: BTreeSet<&str> = keep.iter().map(String::as_str).collect();
            manifest
                .split(Split::Train)
                .filter(move |r| r.group(&plan.attribute) == Some(g.group.as_str()))
                .filter(move |r| !keep.contains(r.id.as_str()))
                .map(|r| r.id.as_str())
                .collect::<Vec<_>>()
        })
        .collect();
    let mut rows: Vec<ManifestRow> = manifest
        .rows
        .iter()
        .filter(|r| !(r.split == Split::Train && dropped.contains(r.id.as_str())))
        .cloned()
        .collect();
    rows.extend(synthetic_rows);
    Ok(Manifest::new(manifest.root.clone(), rows))
}

/// Encodes the real training masks of each group of `attribute`.
pub fn group_clouds(
    manifest: &Manifest,
    attribute: &str,
    n_points: usize,
    z0: f64,
) -> Result<BTreeMap<String, Vec<BoundaryPointCloud>>, DataError> {
    let mut out: BTreeMap<String, Vec<BoundaryPointCloud>> = BTreeMap::new();
    for r in manifest
        .split(Split::Train)
        .filter(|r| r.provenance == Provenance::Real)
    {
        let Some(g) = r.group(attribute) else {
            continue;
        };
        let mask = MaskImage::read_png(&manifest.resolve(&r.mask))?;
        out.entry(g.to_string())
            .or_default()
            .push(encode_mask(&mask, n_points, z0)?);
    }
    if out.is_empty() {
        return Err(DiffusionError::UnknownAttribute(attribute.into()).into());
    }
    Ok(out)
}
