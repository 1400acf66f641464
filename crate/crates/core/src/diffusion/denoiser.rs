use rand::Rng;

use crate::codec::BoundaryPointCloud;
use crate::nn::{sinusoidal_embed, ParamId, ParamStore, Tape, Tensor, Var};

use super::DiffusionError;

/// Predicts the noise in a noised `N x 3` point set at step `t`.
pub trait NoisePredictor {
    fn predict_noise(
        &self,
        tape: &mut Tape,
        x_t: Var,
        t: usize,
        latent: Option<Var>,
    ) -> Result<Var, DiffusionError>;

    /// Width of the shape latent the predictor consumes (0 = none).
    fn latent_dim(&self) -> usize {
        0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DenoiserConfig {
    pub hidden: usize,
    pub time_dim: usize,
    /// 0 disables latent conditioning.
    pub latent_dim: usize,
    /// Hidden width of the per-point shape encoder.
    pub encoder_hidden: usize,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        Self {
            hidden: 128,
            time_dim: 32,
            latent_dim: 0,
            encoder_hidden: 64,
        }
    }
}

#[derive(Clone)]
struct Layer {
    w: ParamId,
    b: ParamId,
}

#[derive(Clone)]
struct Conditioned {
    layer: Layer,
    time: ParamId,
    latent: Option<ParamId>,
}

#[derive(Clone)]
struct Encoder {
    l1: Layer,
    l2: Layer,
    out: Layer,
}

/// Shared per-point MLP over (point, time embedding, latent, pooled
/// feature). Every layer is applied row-wise and the only cross-point
/// interaction is a mean over points, so the network is permutation
/// equivariant.
#[derive(Clone)]
pub struct Denoiser {
    config: DenoiserConfig,
    params: ParamStore,
    input: Conditioned,
    hidden2: Conditioned,
    global: ParamId,
    hidden3: Conditioned,
    output: Layer,
    encoder: Option<Encoder>,
}

/// Where a latent came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LatentSource {
    Encoder,
    Zero,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ShapeLatent {
    pub z: Vec<f64>,
    pub source: LatentSource,
}

impl ShapeLatent {
    pub fn zero(dim: usize) -> Self {
        Self {
            z: vec![0.0; dim],
            source: LatentSource::Zero,
        }
    }
}

fn layer<R: Rng + ?Sized>(
    store: &mut ParamStore,
    name: &str,
    fan_in: usize,
    out: usize,
    rng: &mut R,
) -> Layer {
    Layer {
        w: store.add_kaiming(&format!("{name}/w"), &[fan_in, out], fan_in, rng),
        b: store.add_zeros(&format!("{name}/b"), &[out]),
    }
}

impl Denoiser {
    pub fn new<R: Rng + ?Sized>(
        config: DenoiserConfig,
        rng: &mut R,
    ) -> Result<Self, DiffusionError> {
        if !config.time_dim.is_multiple_of(2) || config.hidden == 0 {
            return Err(DiffusionError::Config(format!(
                "time_dim must be even and hidden > 0, got {config:?}"
            )));
        }
        let h = config.hidden;
        let mut p = ParamStore::new();
        let cond = |p: &mut ParamStore, name: &str, fan_in: usize, rng: &mut R| Conditioned {
            layer: layer(p, name, fan_in, h, rng),
            time: p.add_kaiming(
                &format!("{name}/time"),
                &[config.time_dim, h],
                config.time_dim,
                rng,
            ),
            latent: (config.latent_dim > 0).then(|| {
                p.add_kaiming(
                    &format!("{name}/latent"),
                    &[config.latent_dim, h],
                    config.latent_dim,
                    rng,
                )
            }),
        };
        let input = cond(&mut p, "in", 3, rng);
        let hidden2 = cond(&mut p, "h2", h, rng);
        let global = p.add_kaiming("h2/global", &[h, h], h, rng);
        let hidden3 = cond(&mut p, "h3", h, rng);
        let output = layer(&mut p, "out", h, 3, rng);
        let encoder = (config.latent_dim > 0).then(|| {
            let e = config.encoder_hidden;
            Encoder {
                l1: layer(&mut p, "encoder/l1", 3, e, rng),
                l2: layer(&mut p, "encoder/l2", e, e, rng),
                out: layer(&mut p, "encoder/out", e, config.latent_dim, rng),
            }
        });
        Ok(Self {
            config,
            params: p,
            input,
            hidden2,
            global,
            hidden3,
            output,
            encoder,
        })
    }

    pub fn config(&self) -> DenoiserConfig {
        self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn cond_row(
        &self,
        tape: &mut Tape,
        c: &Conditioned,
        temb: Var,
        latent: Option<Var>,
    ) -> Result<Var, DiffusionError> {
        let tw = tape.param(&self.params, c.time);
        let b = tape.param(&self.params, c.layer.b);
        let tr = tape.matmul(temb, tw)?;
        let mut row = tape.add(tr, b)?;
        if let (Some(z), Some(zid)) = (latent, c.latent) {
            let zw = tape.param(&self.params, zid);
            let zr = tape.matmul(z, zw)?;
            row = tape.add(row, zr)?;
        }
        Ok(row)
    }

    /// Mean-pooled per-point features; permutation invariant.
    pub fn encode_var(&self, tape: &mut Tape, x0: Var) -> Result<Var, DiffusionError> {
        let enc = self
            .encoder
            .as_ref()
            .ok_or_else(|| DiffusionError::Config("denoiser has no shape encoder".into()))?;
        let dense = |tape: &mut Tape, x: Var, l: &Layer| -> Result<Var, DiffusionError> {
            let w = tape.param(&self.params, l.w);
            let b = tape.param(&self.params, l.b);
            Ok(tape.dense(x, w, b)?)
        };
        let h = dense(tape, x0, &enc.l1)?;
        let h = tape.silu(h);
        let h = dense(tape, h, &enc.l2)?;
        let h = tape.silu(h);
        let pooled = tape.mean_rows(h)?;
        dense(tape, pooled, &enc.out)
    }

    /// Latent of a clean cloud; the zero latent when no encoder is present.
    pub fn encode_shape(&self, cloud: &BoundaryPointCloud) -> Result<ShapeLatent, DiffusionError> {
        if self.encoder.is_none() {
            return Ok(ShapeLatent::zero(self.config.latent_dim));
        }
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::new(&[cloud.len(), 3], cloud.flat())?);
        let z = self.encode_var(&mut tape, x)?;
        Ok(ShapeLatent {
            z: tape.value(z).data().to_vec(),
            source: LatentSource::Encoder,
        })
    }

    pub fn has_encoder(&self) -> bool {
        self.encoder.is_some()
    }
}

impl NoisePredictor for Denoiser {
    fn predict_noise(
        &self,
        tape: &mut Tape,
        x_t: Var,
        t: usize,
        latent: Option<Var>,
    ) -> Result<Var, DiffusionError> {
        let latent = if self.config.latent_dim > 0 {
            latent
        } else {
            None
        };
        let temb = tape.constant(sinusoidal_embed(t, self.config.time_dim)?);

        let w1 = tape.param(&self.params, self.input.layer.w);
        let xw = tape.matmul(x_t, w1)?;
        let c1 = self.cond_row(tape, &self.input, temb, latent)?;
        let h1 = tape.add_row(xw, c1)?;
        let h1 = tape.silu(h1);

        let pooled = tape.mean_rows(h1)?;
        let wg = tape.param(&self.params, self.global);
        let g = tape.matmul(pooled, wg)?;
        let w2 = tape.param(&self.params, self.hidden2.layer.w);
        let hw = tape.matmul(h1, w2)?;
        let c2 = self.cond_row(tape, &self.hidden2, temb, latent)?;
        let c2 = tape.add(c2, g)?;
        let h2 = tape.add_row(hw, c2)?;
        let h2 = tape.silu(h2);

        let w3 = tape.param(&self.params, self.hidden3.layer.w);
        let hw = tape.matmul(h2, w3)?;
        let c3 = self.cond_row(tape, &self.hidden3, temb, latent)?;
        let h3 = tape.add_row(hw, c3)?;
        let h3 = tape.silu(h3);

        let wo = tape.param(&self.params, self.output.w);
        let bo = tape.param(&self.params, self.output.b);
        Ok(tape.dense(h3, wo, bo)?)
    }

    fn latent_dim(&self) -> usize {
        self.config.latent_dim
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn random_points(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..3 * n).map(|_| StandardNormal.sample(rng)).collect()
    }

    fn predict(d: &Denoiser, x: &[f64], t: usize, z: Option<&[f64]>) -> Vec<f64> {
        let mut tape = Tape::new();
        let xv = tape.constant(Tensor::new(&[x.len() / 3, 3], x.to_vec()).unwrap());
        let zv = z.map(|z| tape.constant(Tensor::vector(z.to_vec())));
        let out = d.predict_noise(&mut tape, xv, t, zv).unwrap();
        tape.value(out).data().to_vec()
    }

    #[test]
    fn permutation_equivariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let cfg = DenoiserConfig {
            hidden: 32,
            latent_dim: 4,
            ..Default::default()
        };
        let d = Denoiser::new(cfg, &mut rng).unwrap();
        for trial in 0..5 {
            let n = 20 + trial;
            let x = random_points(n, &mut rng);
            let z: Vec<f64> = (0..4).map(|_| StandardNormal.sample(&mut rng)).collect();
            let mut perm: Vec<usize> = (0..n).collect();
            rand::seq::SliceRandom::shuffle(perm.as_mut_slice(), &mut rng);
            let xp: Vec<f64> = perm
                .iter()
                .flat_map(|&i| x[3 * i..3 * i + 3].to_vec())
                .collect();
            let y = predict(&d, &x, 7, Some(&z));
            let yp = predict(&d, &xp, 7, Some(&z));
            for (k, &i) in perm.iter().enumerate() {
                for c in 0..3 {
                    assert!((yp[3 * k + c] - y[3 * i + c]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn encoder_is_permutation_invariant_and_zero_mode_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let d = Denoiser::new(
            DenoiserConfig {
                hidden: 16,
                latent_dim: 6,
                ..Default::default()
            },
            &mut rng,
        )
        .unwrap();
        let pts: Vec<[f64; 3]> = (0..30)
            .map(|i| {
                [
                    (i as f64).sin(),
                    (i as f64 * 0.3).cos(),
                    if i % 2 == 0 { 0.3 } else { -0.3 },
                ]
            })
            .collect();
        let frame = crate::codec::NormFrame {
            cx: 0.0,
            cy: 0.0,
            scale: 1.0,
        };
        let a = BoundaryPointCloud {
            points: pts.clone(),
            frame,
            z0: 0.3,
        };
        let mut rev = pts;
        rev.reverse();
        let b = BoundaryPointCloud {
            points: rev,
            frame,
            z0: 0.3,
        };
        let za = d.encode_shape(&a).unwrap();
        let zb = d.encode_shape(&b).unwrap();
        assert_eq!(za.source, LatentSource::Encoder);
        for (x, y) in za.z.iter().zip(&zb.z) {
            assert!((x - y).abs() < 1e-12);
        }

        let plain = Denoiser::new(DenoiserConfig::default(), &mut rng).unwrap();
        let z = plain.encode_shape(&a).unwrap();
        assert_eq!(z.source, LatentSource::Zero);
        assert!(z.z.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn time_changes_prediction() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let d = Denoiser::new(DenoiserConfig::default(), &mut rng).unwrap();
        let x = random_points(10, &mut rng);
        assert_ne!(predict(&d, &x, 1, None), predict(&d, &x, 50, None));
    }
}
