use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::codec::{Ellipse, MaskImage};
use crate::control::{render_toy_image_with, RenderStyle};

use super::{DataError, Manifest, ManifestRow, Provenance, Split};

/// Distribution of ellipse-pair masks for one group.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ShapeFamily {
    /// Mean cup-to-disc area ratio.
    pub cup_disc_ratio: f64,
    pub ratio_sd: f64,
    /// Disc semi-axis range as a fraction of the image side.
    pub disc_radius: (f64, f64),
    /// Largest semi-axis ratio of the disc ellipse.
    pub max_aspect: f64,
    /// Uniform jitter of the disc centre, in pixels.
    pub center_jitter: f64,
}

impl ShapeFamily {
    pub fn with_ratio(cup_disc_ratio: f64) -> Self {
        Self {
            cup_disc_ratio,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let hi = self.cup_disc_ratio + 3.0 * self.ratio_sd;
        let ok = self.cup_disc_ratio > 0.0
            && hi < 1.0
            && self.ratio_sd >= 0.0
            && 0.0 < self.disc_radius.0
            && self.disc_radius.0 <= self.disc_radius.1
            && self.disc_radius.1 < 0.5
            && self.max_aspect >= 1.0
            && self.center_jitter >= 0.0;
        if !ok {
            return Err(DataError::Spec(format!(
                "invalid shape family {self:?}: the cup must stay smaller than the disc (mean + 3 sd of the area ratio below 1) and the disc inside the image"
            )));
        }
        Ok(())
    }

    pub fn sample<R: Rng + ?Sized>(&self, size: usize, rng: &mut R) -> MaskImage {
        let s = size as f64;
        let ratio = Normal::new(self.cup_disc_ratio, self.ratio_sd.max(1e-12)).expect("finite sd");
        loop {
            let r = rng.random_range(self.disc_radius.0..=self.disc_radius.1) * s;
            let aspect = rng.random_range(1.0 / self.max_aspect..=self.max_aspect);
            let angle = rng.random_range(0.0..PI);
            let cx = s / 2.0 + rng.random_range(-1.0..=1.0) * self.center_jitter;
            let cy = s / 2.0 + rng.random_range(-1.0..=1.0) * self.center_jitter;
            let q: f64 = ratio.sample(rng).clamp(0.03, 0.95);
            let k = q.sqrt();
            let slack = (1.0 - k) * r * 0.3;
            let (dx, dy) = (
                rng.random_range(-slack..=slack),
                rng.random_range(-slack..=slack),
            );
            let disc = Ellipse {
                cx,
                cy,
                a: r * aspect.sqrt(),
                b: r / aspect.sqrt(),
                angle,
            };
            let cup = Ellipse {
                cx: cx + dx,
                cy: cy + dy,
                a: k * disc.a,
                b: k * disc.b,
                angle,
            };
            let m = MaskImage::from_ellipses(size, size, &disc, &cup);
            if m.cup_area() > 0 && m.disc_area() > m.cup_area() {
                return m;
            }
        }
    }
}

impl Default for ShapeFamily {
    fn default() -> Self {
        Self {
            cup_disc_ratio: 0.3,
            ratio_sd: 0.04,
            disc_radius: (0.26, 0.34),
            max_aspect: 1.15,
            center_jitter: 3.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ToyGroup {
    pub name: String,
    pub train: usize,
    pub test: usize,
    pub family: ShapeFamily,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ToyDatasetSpec {
    pub attribute: String,
    pub groups: Vec<ToyGroup>,
    pub size: usize,
    pub style: RenderStyle,
    /// Further attributes assigned uniformly at random.
    pub extra_attributes: Vec<(String, Vec<String>)>,
}

impl ToyDatasetSpec {
    /// Two groups with cup/disc area ratios 0.3 and 0.6.
    pub fn imbalanced(train_a: usize, train_b: usize, test_each: usize) -> Self {
        Self {
            attribute: "group".into(),
            groups: vec![
                ToyGroup {
                    name: "A".into(),
                    train: train_a,
                    test: test_each,
                    family: ShapeFamily::with_ratio(0.3),
                },
                ToyGroup {
                    name: "B".into(),
                    train: train_b,
                    test: test_each,
                    family: ShapeFamily::with_ratio(0.6),
                },
            ],
            size: 64,
            style: RenderStyle::default(),
            extra_attributes: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<(), DataError> {
        if self.groups.len() < 2 {
            return Err(DataError::Spec(
                "a toy dataset needs at least two groups".into(),
            ));
        }
        if self.size < 16 || !self.size.is_multiple_of(4) {
            return Err(DataError::Spec(format!(
                "image side {} must be a multiple of 4, at least 16",
                self.size
            )));
        }
        let names = std::iter::once(&self.attribute)
            .chain(self.groups.iter().map(|g| &g.name))
            .chain(
                self.extra_attributes
                    .iter()
                    .flat_map(|(a, v)| std::iter::once(a).chain(v)),
            );
        for n in names {
            if !safe_name(n) {
                return Err(DataError::Spec(format!(
                    "name {n:?} must be non-empty [A-Za-z0-9_-]"
                )));
            }
        }
        for g in &self.groups {
            g.family.validate()?;
        }
        Ok(())
    }
}

pub fn safe_name(s: &str) -> bool {
    !s.is_empty()
        && s.chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
}

/// Writes `masks/`, `images/` and `manifests/manifest.csv` under `root`.
pub fn make_toy_dataset<R: Rng + ?Sized>(
    spec: &ToyDatasetSpec,
    root: &Path,
    rng: &mut R,
) -> Result<Manifest, DataError> {
    spec.validate()?;
    fs::create_dir_all(root.join("masks"))?;
    fs::create_dir_all(root.join("images"))?;
    let mut rows = Vec::new();
    for g in &spec.groups {
        for (split, count) in [(Split::Train, g.train), (Split::Test, g.test)] {
            for i in 0..count {
                let id = format!("toy_{}_{}_{split}_{i:04}", spec.attribute, g.name);
                let mask = g.family.sample(spec.size, rng);
                let image = render_toy_image_with(&mask, &spec.style, rng);
                let mask_rel = PathBuf::from("masks").join(format!("{id}.png"));
                let image_rel = PathBuf::from("images").join(format!("{id}.png"));
                mask.write_png(&root.join(&mask_rel))?;
                image.write_png(&root.join(&image_rel))?;
                let mut attributes = std::collections::BTreeMap::new();
                attributes.insert(spec.attribute.clone(), g.name.clone());
                for (a, values) in &spec.extra_attributes {
                    attributes.insert(a.clone(), values[rng.random_range(0..values.len())].clone());
                }
                rows.push(ManifestRow {
                    id,
                    image: image_rel,
                    mask: mask_rel,
                    split,
                    provenance: Provenance::Real,
                    attributes,
                });
            }
        }
    }
    let manifest = Manifest::new(root, rows);
    manifest.write(&root.join("manifests").join("manifest.csv"))?;
    Ok(manifest)
}
