use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::codec::{BoundaryPointCloud, NormFrame};
use crate::nn::{read_checkpoint, write_checkpoint, Tensor};

use super::{
    make_schedule, sample, train_denoiser, Denoiser, DenoiserConfig, DiffusionError, NoiseSchedule,
    SampleSpec, ShapeLatent, TrainConfig, TrainReport, DEFAULT_BETA_END, DEFAULT_BETA_START,
    DEFAULT_MAX_RETRIES, DEFAULT_STEPS,
};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GroupTrainConfig {
    pub denoiser: DenoiserConfig,
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub train: TrainConfig,
    /// Groups with fewer training clouds are skipped.
    pub min_rows: usize,
    pub seed: u64,
}

impl Default for GroupTrainConfig {
    fn default() -> Self {
        Self {
            denoiser: DenoiserConfig::default(),
            steps: DEFAULT_STEPS,
            beta_start: DEFAULT_BETA_START,
            beta_end: DEFAULT_BETA_END,
            train: TrainConfig::default(),
            min_rows: 2,
            seed: 0,
        }
    }
}

/// A trained per-group model plus what is needed to place samples in pixel
/// space: the training clouds' frames and, in encoder mode, their latents.
#[derive(Clone)]
pub struct GroupModel {
    pub attribute: String,
    pub group: String,
    pub denoiser: Denoiser,
    pub schedule: NoiseSchedule,
    pub n_points: usize,
    pub z0: f64,
    pub frames: Vec<NormFrame>,
    pub latents: Vec<Vec<f64>>,
}

/// A sampled cloud tagged with the group that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct GroupSample {
    pub attribute: String,
    pub group: String,
    pub cloud: BoundaryPointCloud,
}

impl GroupModel {
    /// Draws one cloud; the pixel frame and latent are taken from a random
    /// training example.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<GroupSample, DiffusionError> {
        let frame = self.frames[rng.random_range(0..self.frames.len())];
        let latent = (!self.latents.is_empty()).then(|| ShapeLatent {
            z: self.latents[rng.random_range(0..self.latents.len())].clone(),
            source: super::LatentSource::Encoder,
        });
        let spec = SampleSpec {
            max_retries: DEFAULT_MAX_RETRIES,
            ..SampleSpec::new(self.n_points, self.z0, frame)
        };
        let cloud = sample(&self.denoiser, &self.schedule, latent.as_ref(), &spec, rng)?;
        Ok(GroupSample {
            attribute: self.attribute.clone(),
            group: self.group.clone(),
            cloud,
        })
    }

    fn records(&self) -> Vec<(String, Tensor)> {
        let c = self.denoiser.config();
        let mut out: Vec<(String, Tensor)> = self
            .denoiser
            .params()
            .iter()
            .map(|(_, p)| (p.name.clone(), p.value.clone()))
            .collect();
        let cfg = [
            c.hidden,
            c.time_dim,
            c.latent_dim,
            c.encoder_hidden,
            self.n_points,
        ];
        out.push((
            "meta/config".into(),
            Tensor::vector(cfg.iter().map(|&v| v as f64).collect()),
        ));
        out.push(("meta/z0".into(), Tensor::vector(vec![self.z0])));
        let frames: Vec<f64> = self
            .frames
            .iter()
            .flat_map(|f| [f.cx, f.cy, f.scale])
            .collect();
        out.push((
            "meta/frames".into(),
            Tensor::new(&[self.frames.len(), 3], frames).expect("frame bank shape"),
        ));
        if !self.latents.is_empty() {
            let flat: Vec<f64> = self.latents.iter().flatten().copied().collect();
            out.push((
                "meta/latent_bank".into(),
                Tensor::new(&[self.latents.len(), c.latent_dim], flat).expect("latent bank shape"),
            ));
        }
        out
    }

    pub fn save(&self, dir: &Path) -> Result<(), DiffusionError> {
        fs::create_dir_all(dir)?;
        let stem = model_stem(&self.attribute, &self.group)?;
        let records = self.records();
        let mut bytes = Vec::new();
        write_checkpoint(&mut bytes, records.iter().map(|(n, t)| (n.as_str(), t)))?;
        fs::write(dir.join(format!("{stem}.fdnn")), bytes)?;
        fs::write(
            dir.join(format!("{stem}.sched")),
            self.schedule.to_sidecar(),
        )?;
        Ok(())
    }

    pub fn load(dir: &Path, attribute: &str, group: &str) -> Result<Self, DiffusionError> {
        let stem = model_stem(attribute, group)?;
        let path = dir.join(format!("{stem}.fdnn"));
        if !path.exists() {
            return Err(DiffusionError::MissingModel {
                attribute: attribute.into(),
                group: group.into(),
            });
        }
        let records: BTreeMap<String, Tensor> = read_checkpoint(fs::File::open(&path)?)?
            .into_iter()
            .collect();
        let schedule =
            NoiseSchedule::from_sidecar(&fs::read_to_string(dir.join(format!("{stem}.sched")))?)?;
        let meta = |name: &str| {
            records
                .get(name)
                .ok_or_else(|| DiffusionError::Config(format!("{} lacks {name}", path.display())))
        };
        let cfg = meta("meta/config")?.data().to_vec();
        if cfg.len() != 5 {
            return Err(DiffusionError::Config(
                "meta/config must hold 5 values".into(),
            ));
        }
        let config = DenoiserConfig {
            hidden: cfg[0] as usize,
            time_dim: cfg[1] as usize,
            latent_dim: cfg[2] as usize,
            encoder_hidden: cfg[3] as usize,
        };
        // weights are overwritten below; the init seed is irrelevant
        let mut denoiser = Denoiser::new(config, &mut ChaCha8Rng::seed_from_u64(0))?;
        let store = denoiser.params_mut();
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let p = store.get_mut(id);
            let t = records
                .get(&p.name)
                .ok_or_else(|| DiffusionError::Config(format!("checkpoint lacks {}", p.name)))?;
            if t.shape() != p.value.shape() {
                return Err(DiffusionError::Shape(format!(
                    "{}: stored {:?}, expected {:?}",
                    p.name,
                    t.shape(),
                    p.value.shape()
                )));
            }
            p.value = t.clone();
        }
        let frames = meta("meta/frames")?
            .data()
            .chunks_exact(3)
            .map(|f| NormFrame {
                cx: f[0],
                cy: f[1],
                scale: f[2],
            })
            .collect::<Vec<_>>();
        if frames.is_empty() {
            return Err(DiffusionError::Config("empty frame bank".into()));
        }
        let latents = match records.get("meta/latent_bank") {
            Some(t) => t
                .data()
                .chunks_exact(config.latent_dim.max(1))
                .map(<[f64]>::to_vec)
                .collect(),
            None => Vec::new(),
        };
        Ok(Self {
            attribute: attribute.into(),
            group: group.into(),
            denoiser,
            schedule,
            n_points: cfg[4] as usize,
            z0: meta("meta/z0")?.data()[0],
            frames,
            latents,
        })
    }
}

/// File stem `<attribute>__<group>`; names must be non-empty and free of
/// path separators, and the attribute must not contain `__`.
pub fn model_stem(attribute: &str, group: &str) -> Result<String, DiffusionError> {
    let ok = |s: &str| !s.is_empty() && !s.contains(['/', '\\']) && s != "." && s != "..";
    if !ok(attribute) || !ok(group) || attribute.contains("__") {
        return Err(DiffusionError::Config(format!(
            "cannot name a model file after {attribute:?}/{group:?}"
        )));
    }
    Ok(format!("{attribute}__{group}"))
}

fn group_seed(seed: u64, attribute: &str, group: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ seed;
    for b in attribute.bytes().chain([0]).chain(group.bytes()) {
        h ^= b as u64;
        h = h.wrapping_mul(0x100_0000_01b3);
    }
    h
}

/// Trains one model on one group's clouds.
pub fn train_group_model(
    attribute: &str,
    group: &str,
    clouds: &[BoundaryPointCloud],
    config: &GroupTrainConfig,
) -> Result<(GroupModel, TrainReport), DiffusionError> {
    let first = clouds
        .first()
        .ok_or_else(|| DiffusionError::Config(format!("group {group} has no clouds")))?;
    if let Some(c) = clouds.iter().find(|c| c.len() != first.len()) {
        return Err(DiffusionError::Shape(format!(
            "group {group} mixes {} and {} point clouds",
            first.len(),
            c.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(group_seed(config.seed, attribute, group));
    let schedule = make_schedule(config.steps, config.beta_start, config.beta_end)?;
    let mut denoiser = Denoiser::new(config.denoiser, &mut rng)?;
    let report = train_denoiser(&mut denoiser, clouds, &schedule, &config.train, &mut rng)?;
    let latents = if denoiser.has_encoder() {
        clouds
            .iter()
            .map(|c| denoiser.encode_shape(c).map(|z| z.z))
            .collect::<Result<_, _>>()?
    } else {
        Vec::new()
    };
    log::info!(
        "trained {attribute}={group} on {} clouds, final loss {:.4}",
        clouds.len(),
        report.losses.last().copied().unwrap_or(f64::NAN)
    );
    Ok((
        GroupModel {
            attribute: attribute.into(),
            group: group.into(),
            denoiser,
            schedule,
            n_points: first.len(),
            z0: first.z0,
            frames: clouds.iter().map(|c| c.frame).collect(),
            latents,
        },
        report,
    ))
}

/// One independently seeded model per group. Groups below
/// `config.min_rows` are skipped with a warning.
pub fn train_group_models(
    groups: &BTreeMap<String, Vec<BoundaryPointCloud>>,
    attribute: &str,
    config: &GroupTrainConfig,
) -> Result<GroupModelRegistry, DiffusionError> {
    let eligible: Vec<(&String, &Vec<BoundaryPointCloud>)> = groups
        .iter()
        .filter(|(g, clouds)| {
            let keep = clouds.len() >= config.min_rows.max(1);
            if !keep {
                log::warn!(
                    "skipping {attribute}={g}: {} clouds, minimum is {}",
                    clouds.len(),
                    config.min_rows
                );
            }
            keep
        })
        .collect();
    let models = eligible
        .par_iter()
        .map(|(g, clouds)| train_group_model(attribute, g, clouds, config).map(|(m, _)| m))
        .collect::<Result<Vec<_>, _>>()?;
    let mut reg = GroupModelRegistry::default();
    for m in models {
        reg.insert(m);
    }
    Ok(reg)
}

/// Trained models keyed by `(attribute, group)`.
#[derive(Default)]
pub struct GroupModelRegistry {
    models: BTreeMap<(String, String), GroupModel>,
}

impl GroupModelRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, model: GroupModel) {
        self.models
            .insert((model.attribute.clone(), model.group.clone()), model);
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }

    pub fn get(&self, attribute: &str, group: &str) -> Result<&GroupModel, DiffusionError> {
        self.models
            .get(&(attribute.to_string(), group.to_string()))
            .ok_or_else(|| DiffusionError::MissingModel {
                attribute: attribute.into(),
                group: group.into(),
            })
    }

    pub fn keys(&self) -> impl Iterator<Item = (&str, &str)> {
        self.models.keys().map(|(a, g)| (a.as_str(), g.as_str()))
    }

    pub fn save(&self, dir: &Path) -> Result<(), DiffusionError> {
        fs::create_dir_all(dir)?;
        for m in self.models.values() {
            m.save(dir)?;
        }
        Ok(())
    }

    /// Loads every `*.fdnn` checkpoint in `dir`.
    pub fn load(dir: &Path) -> Result<Self, DiffusionError> {
        let mut stems: Vec<String> = fs::read_dir(dir)?
            .filter_map(|e| e.ok())
            .filter_map(|e| {
                let name = e.file_name().into_string().ok()?;
                name.strip_suffix(".fdnn").map(str::to_string)
            })
            .collect();
        stems.sort();
        let mut reg = Self::default();
        for stem in stems {
            let (attr, group) = stem.split_once("__").ok_or_else(|| {
                DiffusionError::Config(format!("model file {stem}.fdnn lacks '__'"))
            })?;
            reg.insert(GroupModel::load(dir, attr, group)?);
        }
        Ok(reg)
    }
}
