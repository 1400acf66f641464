use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::codec::{is_cup, BoundaryPointCloud, NormFrame};
use crate::nn::{Adam, Tape, Tensor, Var};

use super::{Denoiser, DiffusionError, NoisePredictor, NoiseSchedule, ShapeLatent};

pub const DEFAULT_MAX_RETRIES: usize = 8;

fn gaussian<R: Rng + ?Sized>(len: usize, rng: &mut R) -> Vec<f64> {
    (0..len).map(|_| StandardNormal.sample(rng)).collect()
}

/// `x_t = sqrt(ᾱ_t) x0 + sqrt(1 - ᾱ_t) ε` over row-major `N x 3` data.
pub fn q_sample(
    x0: &[f64],
    t: usize,
    eps: &[f64],
    schedule: &NoiseSchedule,
) -> Result<Vec<f64>, DiffusionError> {
    schedule.check_step(t)?;
    if x0.len() != eps.len() {
        return Err(DiffusionError::Shape(format!(
            "x0 has {} values, noise has {}",
            x0.len(),
            eps.len()
        )));
    }
    let ab = schedule.alpha_bar(t);
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    Ok(x0.iter().zip(eps).map(|(x, e)| a * x + b * e).collect())
}

fn latent_var(
    tape: &mut Tape,
    predictor: &dyn NoisePredictor,
    z: Option<&ShapeLatent>,
) -> Result<Option<Var>, DiffusionError> {
    let dim = predictor.latent_dim();
    if dim == 0 {
        return Ok(None);
    }
    let z =
        z.ok_or_else(|| DiffusionError::Shape(format!("predictor expects a {dim}-wide latent")))?;
    if z.z.len() != dim {
        return Err(DiffusionError::Shape(format!(
            "latent has width {}, predictor expects {dim}",
            z.z.len()
        )));
    }
    Ok(Some(tape.constant(Tensor::vector(z.z.clone()))))
}

fn points_tensor(flat: &[f64]) -> Result<Tensor, DiffusionError> {
    if flat.is_empty() || !flat.len().is_multiple_of(3) {
        return Err(DiffusionError::Shape(format!(
            "expected N x 3 coordinates, got {} values",
            flat.len()
        )));
    }
    Ok(Tensor::new(&[flat.len() / 3, 3], flat.to_vec())?)
}

/// One draw of `‖ε - ε_θ(x_t, t, z)‖² / 3N` with `t ~ U{1..T}`.
pub fn training_loss<R: Rng + ?Sized>(
    x0: &BoundaryPointCloud,
    predictor: &dyn NoisePredictor,
    schedule: &NoiseSchedule,
    z: &ShapeLatent,
    rng: &mut R,
) -> Result<f64, DiffusionError> {
    let flat = x0.flat();
    let t = rng.random_range(1..=schedule.steps());
    let eps = gaussian(flat.len(), rng);
    let x_t = q_sample(&flat, t, &eps, schedule)?;
    let mut tape = Tape::new();
    let latent = latent_var(&mut tape, predictor, Some(z))?;
    let xv = tape.constant(points_tensor(&x_t)?);
    let target = tape.constant(points_tensor(&eps)?);
    let pred = predictor.predict_noise(&mut tape, xv, t, latent)?;
    let loss = tape.mse(pred, target)?;
    Ok(tape.value(loss).item())
}

/// Ancestral step `x_t -> x_{t-1}`:
/// `μ = (x_t - β_t / sqrt(1 - ᾱ_t) ε̂) / sqrt(α_t)`, plus `sqrt(β_t)` noise for
/// `t > 1`.
pub fn p_sample_step<R: Rng + ?Sized>(
    x_t: &[f64],
    t: usize,
    predictor: &dyn NoisePredictor,
    schedule: &NoiseSchedule,
    z: Option<&ShapeLatent>,
    rng: &mut R,
) -> Result<Vec<f64>, DiffusionError> {
    schedule.check_step(t)?;
    let mut tape = Tape::new();
    let latent = latent_var(&mut tape, predictor, z)?;
    let xv = tape.constant(points_tensor(x_t)?);
    let pred = predictor.predict_noise(&mut tape, xv, t, latent)?;
    let eps = tape.value(pred).data();
    if eps.len() != x_t.len() {
        return Err(DiffusionError::Shape(format!(
            "predicted noise has {} values for {} inputs",
            eps.len(),
            x_t.len()
        )));
    }
    if let Some(i) = eps.iter().position(|v| !v.is_finite()) {
        return Err(DiffusionError::NonFinite {
            t,
            detail: format!("predicted noise[{i}] = {}", eps[i]),
        });
    }
    let beta = schedule.beta(t);
    let coef = beta / (1.0 - schedule.alpha_bar(t)).sqrt();
    let inv = 1.0 / schedule.alpha(t).sqrt();
    let mut out: Vec<f64> = x_t
        .iter()
        .zip(eps)
        .map(|(x, e)| (x - coef * e) * inv)
        .collect();
    if t > 1 {
        let sd = beta.sqrt();
        for v in &mut out {
            let n: f64 = StandardNormal.sample(rng);
            *v += sd * n;
        }
    }
    if let Some(i) = out.iter().position(|v| !v.is_finite()) {
        return Err(DiffusionError::NonFinite {
            t,
            detail: format!("x_{}[{i}] = {}", t - 1, out[i]),
        });
    }
    Ok(out)
}

/// Output layout of a sampled cloud.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SampleSpec {
    pub n_points: usize,
    pub z0: f64,
    /// Pixel frame the normalized sample is attached to.
    pub frame: NormFrame,
    /// Extra chains run when a sample lacks 3 points of either class.
    pub max_retries: usize,
}

impl SampleSpec {
    pub fn new(n_points: usize, z0: f64, frame: NormFrame) -> Self {
        Self {
            n_points,
            z0,
            frame,
            max_retries: DEFAULT_MAX_RETRIES,
        }
    }
}

/// Runs the reverse chain from `N(0, I)` and snaps `z` to `±z0`.
pub fn sample<R: Rng + ?Sized>(
    predictor: &dyn NoisePredictor,
    schedule: &NoiseSchedule,
    z: Option<&ShapeLatent>,
    spec: &SampleSpec,
    rng: &mut R,
) -> Result<BoundaryPointCloud, DiffusionError> {
    if spec.n_points == 0 {
        return Err(DiffusionError::Config("n_points must be positive".into()));
    }
    let mut last = (0, 0);
    for _ in 0..=spec.max_retries {
        let mut x = gaussian(3 * spec.n_points, rng);
        for t in (1..=schedule.steps()).rev() {
            x = p_sample_step(&x, t, predictor, schedule, z, rng)?;
        }
        let mut cloud = BoundaryPointCloud::from_flat(&x, spec.frame, spec.z0);
        cloud.snap_z();
        let cup = cloud.points.iter().filter(|p| is_cup(p[2])).count();
        let disc = cloud.len() - cup;
        if cup >= 3 && disc >= 3 {
            return Ok(cloud);
        }
        log::debug!("rejected sample with {cup} cup / {disc} disc points");
        last = (cup, disc);
    }
    Err(DiffusionError::Undecodable {
        attempts: spec.max_retries + 1,
        cup: last.0,
        disc: last.1,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    /// Points drawn per cloud and step, split evenly between the classes.
    /// `None` trains on every point.
    pub train_points: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch: 8,
            lr: 1e-3,
            train_points: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    /// Mean batch loss per step.
    pub losses: Vec<f64>,
}

impl TrainReport {
    /// Mean of the losses in `range`.
    pub fn mean_loss(&self, range: std::ops::Range<usize>) -> f64 {
        let s = &self.losses[range];
        s.iter().sum::<f64>() / s.len().max(1) as f64
    }
}

fn subsample<R: Rng + ?Sized>(
    cloud: &BoundaryPointCloud,
    m: Option<usize>,
    rng: &mut R,
) -> Vec<f64> {
    let Some(m) = m.filter(|&m| m < cloud.len()) else {
        return cloud.flat();
    };
    let (cup, disc): (Vec<usize>, Vec<usize>) =
        (0..cloud.len()).partition(|&i| is_cup(cloud.points[i][2]));
    let mut out = Vec::with_capacity(3 * m);
    for (class, k) in [(&cup, m / 2), (&disc, m - m / 2)] {
        let k = k.min(class.len());
        for j in index::sample(rng, class.len(), k) {
            out.extend_from_slice(&cloud.points[class[j]]);
        }
    }
    out
}

/// Adam on the ε-prediction loss; with a shape encoder the latent of each
/// clean cloud is computed on the same tape and trained jointly.
pub fn train_denoiser<R: Rng + ?Sized>(
    denoiser: &mut Denoiser,
    clouds: &[BoundaryPointCloud],
    schedule: &NoiseSchedule,
    config: &TrainConfig,
    rng: &mut R,
) -> Result<TrainReport, DiffusionError> {
    if clouds.is_empty() || config.batch == 0 {
        return Err(DiffusionError::Config(
            "training needs clouds and a positive batch".into(),
        ));
    }
    let mut opt = Adam::new(config.lr);
    let mut report = TrainReport::default();
    let scale = 1.0 / config.batch as f64;
    for _ in 0..config.steps {
        let mut tape = Tape::new();
        let mut total: Option<Var> = None;
        for _ in 0..config.batch {
            let cloud = &clouds[rng.random_range(0..clouds.len())];
            let x0 = subsample(cloud, config.train_points, rng);
            let t = rng.random_range(1..=schedule.steps());
            let eps = gaussian(x0.len(), rng);
            let x_t = q_sample(&x0, t, &eps, schedule)?;
            let latent = if denoiser.has_encoder() {
                let clean = tape.constant(points_tensor(&x0)?);
                Some(denoiser.encode_var(&mut tape, clean)?)
            } else {
                None
            };
            let xv = tape.constant(points_tensor(&x_t)?);
            let target = tape.constant(points_tensor(&eps)?);
            let pred = denoiser.predict_noise(&mut tape, xv, t, latent)?;
            let l = tape.mse(pred, target)?;
            let l = tape.scale(l, scale);
            total = Some(match total {
                None => l,
                Some(acc) => tape.add(acc, l)?,
            });
        }
        let loss = total.expect("batch > 0");
        let value = tape.value(loss).item();
        if !value.is_finite() {
            return Err(DiffusionError::NonFinite {
                t: report.losses.len(),
                detail: format!("training loss {value}"),
            });
        }
        let grads = tape.backward(loss)?;
        let store = denoiser.params_mut();
        store.accumulate(&grads);
        opt.step(store)?;
        report.losses.push(value);
    }
    Ok(report)
}
