use std::io::{Read, Write};

use rand::{Rng, SeedableRng};

use crate::codec::{MaskImage, BACKGROUND, CUP, DISC};
use crate::nn::{read_checkpoint, Adam, ParamStore, Tape, Tensor, Var};

use super::{ControlError, ToyImage};

const HIDDEN: usize = 8;
const FEATURES: usize = 16;
const MASK_CHANNELS: usize = 3;

fn add_conv<R: Rng + ?Sized>(
    store: &mut ParamStore,
    name: &str,
    out: usize,
    inp: usize,
    k: usize,
    rng: &mut R,
) {
    store.add_kaiming(&format!("{name}/w"), &[out, inp, k, k], inp * k * k, rng);
    store.add_zeros(&format!("{name}/b"), &[out]);
}

fn conv(
    store: &ParamStore,
    tape: &mut Tape,
    name: &str,
    x: Var,
    stride: usize,
    pad: usize,
) -> Result<Var, ControlError> {
    let get = |suffix: &str| {
        store
            .id(&format!("{name}/{suffix}"))
            .ok_or_else(|| ControlError::Shape(format!("missing parameter {name}/{suffix}")))
    };
    let w = tape.param(store, get("w")?);
    let b = tape.param(store, get("b")?);
    Ok(tape.conv2d(x, w, b, stride, pad)?)
}

fn check_dims(height: usize, width: usize) -> Result<(), ControlError> {
    if height < 8 || width < 8 || !height.is_multiple_of(4) || !width.is_multiple_of(4) {
        return Err(ControlError::Shape(format!(
            "image sides must be multiples of 4 and at least 8, got {width}x{height}"
        )));
    }
    Ok(())
}

fn image_tensor(img: &ToyImage) -> Tensor {
    Tensor::new(&[1, img.height(), img.width()], img.pixels().to_vec()).expect("image shape")
}

/// One-hot `[3, H, W]` planes: background, rim, cup.
pub fn mask_onehot(mask: &MaskImage) -> Tensor {
    let (w, h) = (mask.width(), mask.height());
    let mut data = vec![0.0; MASK_CHANNELS * w * h];
    for (i, &l) in mask.labels().iter().enumerate() {
        let c = match l {
            BACKGROUND => 0,
            DISC => 1,
            CUP => 2,
            _ => continue,
        };
        data[c * w * h + i] = 1.0;
    }
    Tensor::new(&[MASK_CHANNELS, h, w], data).expect("one-hot shape")
}

/// Encoder, middle block `F` and decoder at a fixed resolution. Its
/// parameters live under `base/`; `base/canvas` is the input image that
/// conditional renders start from.
pub struct BaseNet {
    store: ParamStore,
    height: usize,
    width: usize,
}

fn encode(store: &ParamStore, tape: &mut Tape, image: Var) -> Result<Var, ControlError> {
    let h = conv(store, tape, "base/enc1", image, 2, 1)?;
    let h = tape.silu(h);
    let h = conv(store, tape, "base/enc2", h, 2, 1)?;
    Ok(tape.silu(h))
}

fn middle(store: &ParamStore, tape: &mut Tape, prefix: &str, x: Var) -> Result<Var, ControlError> {
    let h = conv(store, tape, &format!("{prefix}/mid1"), x, 1, 1)?;
    let h = tape.silu(h);
    let h = conv(store, tape, &format!("{prefix}/mid2"), h, 1, 1)?;
    Ok(tape.silu(h))
}

fn decode(store: &ParamStore, tape: &mut Tape, y: Var) -> Result<Var, ControlError> {
    let h = tape.upsample2x(y)?;
    let h = conv(store, tape, "base/dec1", h, 1, 1)?;
    let h = tape.silu(h);
    let h = tape.upsample2x(h)?;
    let h = conv(store, tape, "base/dec2", h, 1, 1)?;
    Ok(tape.sigmoid(h))
}

impl BaseNet {
    pub fn new<R: Rng + ?Sized>(
        height: usize,
        width: usize,
        rng: &mut R,
    ) -> Result<Self, ControlError> {
        check_dims(height, width)?;
        let mut store = ParamStore::new();
        add_conv(&mut store, "base/enc1", HIDDEN, 1, 3, rng);
        add_conv(&mut store, "base/enc2", FEATURES, HIDDEN, 3, rng);
        add_conv(&mut store, "base/mid1", FEATURES, FEATURES, 3, rng);
        add_conv(&mut store, "base/mid2", FEATURES, FEATURES, 3, rng);
        add_conv(&mut store, "base/dec1", HIDDEN, FEATURES, 3, rng);
        add_conv(&mut store, "base/dec2", 1, HIDDEN, 3, rng);
        store.add_buffer("base/canvas", Tensor::filled(&[1, height, width], 0.5));
        Ok(Self {
            store,
            height,
            width,
        })
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    fn check_image(&self, img: &ToyImage) -> Result<(), ControlError> {
        if img.width() != self.width || img.height() != self.height {
            return Err(ControlError::Shape(format!(
                "image is {}x{}, network expects {}x{}",
                img.width(),
                img.height(),
                self.width,
                self.height
            )));
        }
        Ok(())
    }

    /// Autoencoder pretraining on `images`; the canvas becomes their mean.
    pub fn pretrain<R: Rng + ?Sized>(
        &mut self,
        images: &[ToyImage],
        steps: usize,
        lr: f64,
        rng: &mut R,
    ) -> Result<Vec<f64>, ControlError> {
        if images.is_empty() {
            return Err(ControlError::TooFewPairs { got: 0, need: 1 });
        }
        for img in images {
            self.check_image(img)?;
        }
        let mut mean = vec![0.0; self.height * self.width];
        for img in images {
            for (m, v) in mean.iter_mut().zip(img.pixels()) {
                *m += v / images.len() as f64;
            }
        }
        let canvas = self.store.id("base/canvas").expect("canvas buffer");
        self.store.get_mut(canvas).value = Tensor::new(&[1, self.height, self.width], mean)?;

        let mut opt = Adam::new(lr);
        let mut losses = Vec::with_capacity(steps);
        for _ in 0..steps {
            let img = &images[rng.random_range(0..images.len())];
            let mut tape = Tape::new();
            let x = tape.constant(image_tensor(img));
            let h = encode(&self.store, &mut tape, x)?;
            let y = middle(&self.store, &mut tape, "base", h)?;
            let out = decode(&self.store, &mut tape, y)?;
            let loss = tape.mse(out, x)?;
            losses.push(tape.value(loss).item());
            let g = tape.backward(loss)?;
            self.store.accumulate(&g);
            opt.step(&mut self.store)?;
        }
        Ok(losses)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ControlTrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub min_pairs: usize,
}

impl Default for ControlTrainConfig {
    fn default() -> Self {
        Self {
            steps: 600,
            batch: 4,
            lr: 2e-3,
            min_pairs: 1,
        }
    }
}

/// Frozen base `F(.; Φ)`, trainable copy `Φ_c`, condition encoder `E` and
/// the two zero-initialized 1x1 convolutions:
///
/// `y_c = F(x; Φ) + Z2(F(x + Z1(E(c)); Φ_c))`
///
/// Parameter names are prefixed by section: `base/`, `copy/`, `encoder/`,
/// `z1/`, `z2/`.
pub struct ControlBlock {
    store: ParamStore,
    height: usize,
    width: usize,
}

impl ControlBlock {
    /// Freezes the base and clones its middle block into the trainable copy.
    pub fn from_base<R: Rng + ?Sized>(base: BaseNet, rng: &mut R) -> Self {
        let BaseNet {
            mut store,
            height,
            width,
        } = base;
        for layer in ["mid1", "mid2"] {
            for suffix in ["w", "b"] {
                let v = store
                    .by_name(&format!("base/{layer}/{suffix}"))
                    .expect("base middle block")
                    .value
                    .clone();
                store.add(&format!("copy/{layer}/{suffix}"), v);
            }
        }
        add_conv(&mut store, "encoder/e1", HIDDEN, MASK_CHANNELS, 3, rng);
        add_conv(&mut store, "encoder/e2", FEATURES, HIDDEN, 3, rng);
        for z in ["z1", "z2"] {
            store.add_zeros(&format!("{z}/w"), &[FEATURES, FEATURES, 1, 1]);
            store.add_zeros(&format!("{z}/b"), &[FEATURES]);
        }
        store.freeze_prefix("base/");
        Self {
            store,
            height,
            width,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    /// Mutable access for tests and tools; the base stays frozen.
    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    /// Checksum over `Φ` (everything under `base/`).
    pub fn base_checksum(&self) -> u64 {
        self.store.checksum_where(|p| p.name.starts_with("base/"))
    }

    pub fn canvas(&self) -> ToyImage {
        let t = self.store.by_name("base/canvas").expect("canvas buffer");
        let px = t.value.data().iter().map(|v| v.clamp(0.0, 1.0)).collect();
        ToyImage::new(self.width, self.height, px).expect("canvas shape")
    }

    /// Image features `x` fed to the middle block.
    pub fn features(&self, tape: &mut Tape, image: Var) -> Result<Var, ControlError> {
        encode(&self.store, tape, image)
    }

    /// `c_f = E(c)` from a one-hot mask.
    pub fn encode_condition(&self, tape: &mut Tape, onehot: Var) -> Result<Var, ControlError> {
        let h = conv(&self.store, tape, "encoder/e1", onehot, 2, 1)?;
        let h = tape.silu(h);
        conv(&self.store, tape, "encoder/e2", h, 2, 1)
    }

    /// `F(x; Φ)`.
    pub fn base_forward(&self, tape: &mut Tape, x: Var) -> Result<Var, ControlError> {
        middle(&self.store, tape, "base", x)
    }

    /// `y_c` for features `x` and encoded condition `c_f`.
    pub fn control_forward(&self, tape: &mut Tape, x: Var, c_f: Var) -> Result<Var, ControlError> {
        if tape.shape(x) != tape.shape(c_f) {
            return Err(ControlError::Shape(format!(
                "features {:?} vs condition {:?}",
                tape.shape(x),
                tape.shape(c_f)
            )));
        }
        let base = middle(&self.store, tape, "base", x)?;
        let zc = conv(&self.store, tape, "z1", c_f, 1, 0)?;
        let xc = tape.add(x, zc)?;
        let copy = middle(&self.store, tape, "copy", xc)?;
        let gated = conv(&self.store, tape, "z2", copy, 1, 0)?;
        Ok(tape.add(base, gated)?)
    }

    fn check_mask(&self, mask: &MaskImage) -> Result<(), ControlError> {
        if mask.width() != self.width || mask.height() != self.height {
            return Err(ControlError::Shape(format!(
                "mask is {}x{}, block expects {}x{}",
                mask.width(),
                mask.height(),
                self.width,
                self.height
            )));
        }
        Ok(())
    }

    /// Full conditional render of `image` under `mask`.
    pub fn render(
        &self,
        tape: &mut Tape,
        image: Var,
        mask: &MaskImage,
    ) -> Result<Var, ControlError> {
        self.check_mask(mask)?;
        let x = self.features(tape, image)?;
        let onehot = tape.constant(mask_onehot(mask));
        let c_f = self.encode_condition(tape, onehot)?;
        let y = self.control_forward(tape, x, c_f)?;
        decode(&self.store, tape, y)
    }

    /// Render through `F(.; Φ)` alone.
    pub fn render_base(&self, image: &ToyImage) -> Result<Vec<f64>, ControlError> {
        let mut tape = Tape::new();
        let x = tape.constant(image_tensor(image));
        let h = self.features(&mut tape, x)?;
        let y = self.base_forward(&mut tape, h)?;
        let out = decode(&self.store, &mut tape, y)?;
        Ok(tape.value(out).data().to_vec())
    }

    pub fn render_image(
        &self,
        image: &ToyImage,
        mask: &MaskImage,
    ) -> Result<Vec<f64>, ControlError> {
        let mut tape = Tape::new();
        let x = tape.constant(image_tensor(image));
        let out = self.render(&mut tape, x, mask)?;
        Ok(tape.value(out).data().to_vec())
    }

    fn is_untrained(&self) -> bool {
        ["z2/w", "z2/b"].iter().all(|n| {
            self.store
                .by_name(n)
                .is_some_and(|p| p.value.data().iter().all(|&v| v == 0.0))
        })
    }

    /// Deterministic render of `mask` starting from the canvas.
    pub fn synth_image(&self, mask: &MaskImage) -> Result<ToyImage, ControlError> {
        if self.is_untrained() {
            log::warn!("control branch is untrained; output is the base render of the canvas");
        }
        let px = self.render_image(&self.canvas(), mask)?;
        ToyImage::new(
            self.width,
            self.height,
            px.iter().map(|v| v.clamp(0.0, 1.0)).collect(),
        )
    }

    /// MSE of conditional renders against target images. Fails hard if the
    /// frozen base changes.
    pub fn train_control<R: Rng + ?Sized>(
        &mut self,
        pairs: &[(MaskImage, ToyImage)],
        config: &ControlTrainConfig,
        rng: &mut R,
    ) -> Result<Vec<f64>, ControlError> {
        if pairs.len() < config.min_pairs.max(1) {
            return Err(ControlError::TooFewPairs {
                got: pairs.len(),
                need: config.min_pairs.max(1),
            });
        }
        for (m, img) in pairs {
            self.check_mask(m)?;
            if img.width() != m.width() || img.height() != m.height() {
                return Err(ControlError::Shape("image and mask sizes differ".into()));
            }
        }
        let before = self.base_checksum();
        let canvas = image_tensor(&self.canvas());
        let mut opt = Adam::new(config.lr);
        let mut losses = Vec::with_capacity(config.steps);
        let scale = 1.0 / config.batch.max(1) as f64;
        for _ in 0..config.steps {
            let mut tape = Tape::new();
            let x = tape.constant(canvas.clone());
            let mut total: Option<Var> = None;
            for _ in 0..config.batch.max(1) {
                let (mask, target) = &pairs[rng.random_range(0..pairs.len())];
                let out = self.render(&mut tape, x, mask)?;
                let t = tape.constant(image_tensor(target));
                let l = tape.mse(out, t)?;
                let l = tape.scale(l, scale);
                total = Some(match total {
                    None => l,
                    Some(acc) => tape.add(acc, l)?,
                });
            }
            let loss = total.expect("non-empty batch");
            losses.push(tape.value(loss).item());
            let g = tape.backward(loss)?;
            self.store.accumulate(&g);
            opt.step(&mut self.store)?;
        }
        let after = self.base_checksum();
        if before != after {
            return Err(ControlError::FrozenDrift { before, after });
        }
        Ok(losses)
    }

    pub fn save<W: Write>(&self, writer: W) -> Result<(), ControlError> {
        Ok(self.store.save(writer)?)
    }

    /// Restores a block written by [`ControlBlock::save`]; the base comes
    /// back frozen.
    pub fn load<R: Read>(mut reader: R) -> Result<Self, ControlError> {
        let mut bytes = Vec::new();
        reader.read_to_end(&mut bytes)?;
        let records = read_checkpoint(&bytes[..])?;
        let canvas = records
            .iter()
            .find(|(n, _)| n == "base/canvas")
            .ok_or_else(|| ControlError::Shape("checkpoint lacks base/canvas".into()))?;
        let (h, w) = match canvas.1.shape() {
            [1, h, w] => (*h, *w),
            s => return Err(ControlError::Shape(format!("canvas shape {s:?}"))),
        };
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mut block = Self::from_base(BaseNet::new(h, w, &mut rng)?, &mut rng);
        block.store.load(&bytes[..])?;
        Ok(block)
    }
}
