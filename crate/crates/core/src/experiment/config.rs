use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use crate::control::{ControlTrainConfig, RenderStyle};
use crate::data::{CombineConfig, ShapeFamily, TargetPolicy, ToyDatasetSpec, ToyGroup};
use crate::diffusion::{
    DenoiserConfig, GroupTrainConfig, TrainConfig, DEFAULT_BETA_END, DEFAULT_BETA_START,
    DEFAULT_STEPS,
};

use super::{ExperimentError, SegmenterConfig};

/// Flat `key = value` text; `#` starts a comment line.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct KvConfig {
    entries: BTreeMap<String, String>,
}

impl KvConfig {
    pub fn parse(text: &str) -> Result<Self, ExperimentError> {
        let mut entries = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(ExperimentError::Validation(format!(
                    "config line {}: expected key=value",
                    n + 1
                )));
            };
            let k = k.trim();
            if k.is_empty()
                || entries
                    .insert(k.to_string(), v.trim().to_string())
                    .is_some()
            {
                return Err(ExperimentError::Validation(format!(
                    "config line {}: empty or repeated key {k:?}",
                    n + 1
                )));
            }
        }
        Ok(Self { entries })
    }

    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            ExperimentError::Validation(format!("cannot read config {}: {e}", path.display()))
        })?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: impl Display) {
        self.entries.insert(key.into(), value.to_string());
    }

    pub fn get<T: FromStr>(&self, key: &str, default: T) -> Result<T, ExperimentError>
    where
        T::Err: Display,
    {
        match self.entries.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|e| ExperimentError::Validation(format!("config key {key}: {v:?}: {e}"))),
        }
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn to_text(&self) -> String {
        self.entries
            .iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }
}

/// Every knob of the pipeline; each command reads the subset it needs.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub seeds: usize,
    pub attribute: String,
    pub toy: ToyDatasetSpec,
    pub n_points: usize,
    pub z0: f64,
    pub diffusion: GroupTrainConfig,
    pub pretrain_steps: usize,
    pub pretrain_lr: f64,
    pub control: ControlTrainConfig,
    pub combine: CombineConfig,
    pub target: TargetPolicy,
    pub segmenter: SegmenterConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::from_kv(&KvConfig::default()).expect("defaults are valid")
    }
}

const KEYS: &[&str] = &[
    "seed",
    "seeds",
    "attribute",
    "toy.train_a",
    "toy.train_b",
    "toy.test",
    "toy.ratio_a",
    "toy.ratio_b",
    "toy.ratio_sd",
    "toy.size",
    "toy.noise_sd",
    "toy.blur",
    "diffusion.points",
    "diffusion.z0",
    "diffusion.hidden",
    "diffusion.time_dim",
    "diffusion.latent_dim",
    "diffusion.steps",
    "diffusion.beta_start",
    "diffusion.beta_end",
    "diffusion.train_steps",
    "diffusion.batch",
    "diffusion.lr",
    "diffusion.train_points",
    "diffusion.min_rows",
    "control.pretrain_steps",
    "control.pretrain_lr",
    "control.steps",
    "control.batch",
    "control.lr",
    "combine.target",
    "combine.attempts",
    "combine.noise_sd",
    "seg.epochs",
    "seg.lr",
    "seg.batch",
    "seg.width",
];

impl ExperimentConfig {
    pub fn from_kv(kv: &KvConfig) -> Result<Self, ExperimentError> {
        if let Some(k) = kv.keys().find(|k| !KEYS.contains(k)) {
            return Err(ExperimentError::Validation(format!(
                "unknown config key {k:?}"
            )));
        }
        let seed = kv.get("seed", 0u64)?;
        let attribute: String = kv.get("attribute", "group".to_string())?;
        let ratio_sd = kv.get("toy.ratio_sd", 0.04)?;
        let family = |ratio| ShapeFamily {
            ratio_sd,
            ..ShapeFamily::with_ratio(ratio)
        };
        let test = kv.get("toy.test", 40usize)?;
        let toy = ToyDatasetSpec {
            attribute: attribute.clone(),
            groups: vec![
                ToyGroup {
                    name: "A".into(),
                    train: kv.get("toy.train_a", 90)?,
                    test,
                    family: family(kv.get("toy.ratio_a", 0.3)?),
                },
                ToyGroup {
                    name: "B".into(),
                    train: kv.get("toy.train_b", 10)?,
                    test,
                    family: family(kv.get("toy.ratio_b", 0.6)?),
                },
            ],
            size: kv.get("toy.size", 64)?,
            style: RenderStyle {
                noise_sd: kv.get("toy.noise_sd", 0.12)?,
                blur_sigma: kv.get("toy.blur", 2.5)?,
            },
            extra_attributes: Vec::new(),
        };
        let train_points: usize = kv.get("diffusion.train_points", 128)?;
        let diffusion = GroupTrainConfig {
            denoiser: DenoiserConfig {
                hidden: kv.get("diffusion.hidden", 128)?,
                time_dim: kv.get("diffusion.time_dim", 32)?,
                latent_dim: kv.get("diffusion.latent_dim", 0)?,
                ..DenoiserConfig::default()
            },
            steps: kv.get("diffusion.steps", DEFAULT_STEPS)?,
            beta_start: kv.get("diffusion.beta_start", DEFAULT_BETA_START)?,
            beta_end: kv.get("diffusion.beta_end", DEFAULT_BETA_END)?,
            train: TrainConfig {
                steps: kv.get("diffusion.train_steps", 2000)?,
                batch: kv.get("diffusion.batch", 8)?,
                lr: kv.get("diffusion.lr", 1e-3)?,
                train_points: (train_points > 0).then_some(train_points),
            },
            min_rows: kv.get("diffusion.min_rows", 2)?,
            seed,
        };
        // synthetic images get the real noise level unless told otherwise
        let synth_noise = kv.get("combine.noise_sd", toy.style.noise_sd)?;
        let cfg = Self {
            seed,
            seeds: kv.get("seeds", 5)?,
            attribute,
            toy,
            n_points: kv.get("diffusion.points", 512)?,
            z0: kv.get("diffusion.z0", 0.3)?,
            diffusion,
            pretrain_steps: kv.get("control.pretrain_steps", 200)?,
            pretrain_lr: kv.get("control.pretrain_lr", 2e-3)?,
            control: ControlTrainConfig {
                steps: kv.get("control.steps", 600)?,
                batch: kv.get("control.batch", 4)?,
                lr: kv.get("control.lr", 2e-3)?,
                ..ControlTrainConfig::default()
            },
            combine: CombineConfig {
                max_attempts: kv.get("combine.attempts", 4)?,
                image_noise_sd: synth_noise,
            },
            target: kv
                .get::<String>("combine.target", "auto".into())?
                .parse()
                .map_err(ExperimentError::Validation)?,
            segmenter: SegmenterConfig {
                epochs: kv.get("seg.epochs", 20)?,
                lr: kv.get("seg.lr", 3e-3)?,
                batch: kv.get("seg.batch", 4)?,
                width: kv.get("seg.width", 8)?,
            },
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |m: &str| Err(ExperimentError::Validation(m.into()));
        if self.seeds == 0 {
            return bad("seeds must be positive");
        }
        if self.n_points < 8 || !self.n_points.is_multiple_of(2) {
            return bad("diffusion.points must be even and at least 8");
        }
        if !(self.z0 > 0.0 && self.z0.is_finite()) {
            return bad("diffusion.z0 must be positive");
        }
        if self.segmenter.epochs == 0
            || self.segmenter.width == 0
            || self.segmenter.lr.is_nan()
            || self.segmenter.lr <= 0.0
        {
            return bad("seg.epochs, seg.width and seg.lr must be positive");
        }
        if self.combine.image_noise_sd < 0.0
            || self.toy.style.noise_sd < 0.0
            || self.toy.style.blur_sigma < 0.0
        {
            return bad("noise and blur must be non-negative");
        }
        self.toy
            .validate()
            .map_err(|e| ExperimentError::Validation(e.to_string()))
    }

    /// Fully expanded configuration, suitable for a run record.
    pub fn to_kv(&self) -> KvConfig {
        let mut kv = KvConfig::default();
        let (a, b) = (&self.toy.groups[0], &self.toy.groups[1]);
        kv.set("seed", self.seed);
        kv.set("seeds", self.seeds);
        kv.set("attribute", &self.attribute);
        kv.set("toy.train_a", a.train);
        kv.set("toy.train_b", b.train);
        kv.set("toy.test", a.test);
        kv.set("toy.ratio_a", a.family.cup_disc_ratio);
        kv.set("toy.ratio_b", b.family.cup_disc_ratio);
        kv.set("toy.ratio_sd", a.family.ratio_sd);
        kv.set("toy.size", self.toy.size);
        kv.set("toy.noise_sd", self.toy.style.noise_sd);
        kv.set("toy.blur", self.toy.style.blur_sigma);
        kv.set("diffusion.points", self.n_points);
        kv.set("diffusion.z0", self.z0);
        kv.set("diffusion.hidden", self.diffusion.denoiser.hidden);
        kv.set("diffusion.time_dim", self.diffusion.denoiser.time_dim);
        kv.set("diffusion.latent_dim", self.diffusion.denoiser.latent_dim);
        kv.set("diffusion.steps", self.diffusion.steps);
        kv.set("diffusion.beta_start", self.diffusion.beta_start);
        kv.set("diffusion.beta_end", self.diffusion.beta_end);
        kv.set("diffusion.train_steps", self.diffusion.train.steps);
        kv.set("diffusion.batch", self.diffusion.train.batch);
        kv.set("diffusion.lr", self.diffusion.train.lr);
        kv.set(
            "diffusion.train_points",
            self.diffusion.train.train_points.unwrap_or(0),
        );
        kv.set("diffusion.min_rows", self.diffusion.min_rows);
        kv.set("control.pretrain_steps", self.pretrain_steps);
        kv.set("control.pretrain_lr", self.pretrain_lr);
        kv.set("control.steps", self.control.steps);
        kv.set("control.batch", self.control.batch);
        kv.set("control.lr", self.control.lr);
        kv.set(
            "combine.target",
            match self.target {
                TargetPolicy::Auto => "auto".to_string(),
                TargetPolicy::Fixed(n) => n.to_string(),
            },
        );
        kv.set("combine.attempts", self.combine.max_attempts);
        kv.set("combine.noise_sd", self.combine.image_noise_sd);
        kv.set("seg.epochs", self.segmenter.epochs);
        kv.set("seg.lr", self.segmenter.lr);
        kv.set("seg.batch", self.segmenter.batch);
        kv.set("seg.width", self.segmenter.width);
        kv
    }

    /// Same configuration with a different base seed.
    pub fn with_seed(&self, seed: u64) -> Self {
        let mut c = self.clone();
        c.seed = seed;
        c.diffusion.seed = seed;
        c
    }
}
