use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::codec::MaskImage;
use crate::control::ToyImage;
use crate::nn::{read_checkpoint, Adam, ParamStore, Tape, Tensor, Var};

use super::ExperimentError;

pub const CLASSES: usize = 3;
const DICE_SMOOTH: f64 = 1.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SegmenterConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch: usize,
    /// Width of the first layer; later layers use twice this.
    pub width: usize,
}

impl Default for SegmenterConfig {
    fn default() -> Self {
        Self {
            epochs: 12,
            lr: 3e-3,
            batch: 4,
            width: 8,
        }
    }
}

/// Four 3x3 convolutions: full resolution, stride 2, half resolution, then
/// upsample and project to class logits. Two normalized coordinate planes
/// are appended to the image so the net can learn a location prior.
pub struct ToySegmenter {
    store: ParamStore,
    height: usize,
    width: usize,
}

const LAYERS: [&str; 4] = ["seg/c1", "seg/c2", "seg/c3", "seg/c4"];

impl ToySegmenter {
    pub fn new<R: Rng + ?Sized>(
        height: usize,
        width: usize,
        channels: usize,
        rng: &mut R,
    ) -> Result<Self, ExperimentError> {
        if !height.is_multiple_of(2)
            || !width.is_multiple_of(2)
            || height < 8
            || width < 8
            || channels == 0
        {
            return Err(ExperimentError::Validation(format!(
                "segmenter needs even sides of at least 8 and a positive width, got {width}x{height}/{channels}"
            )));
        }
        let dims = [
            (channels, 3),
            (2 * channels, channels),
            (2 * channels, 2 * channels),
            (CLASSES, 2 * channels),
        ];
        let mut store = ParamStore::new();
        for (name, (out, inp)) in LAYERS.iter().zip(dims) {
            store.add_kaiming(&format!("{name}/w"), &[out, inp, 3, 3], inp * 9, rng);
            store.add_zeros(&format!("{name}/b"), &[out]);
        }
        store.add_buffer(
            "seg/meta",
            Tensor::vector(vec![height as f64, width as f64, channels as f64]),
        );
        Ok(Self {
            store,
            height,
            width,
        })
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

    fn input(&self, image: &ToyImage) -> Result<Tensor, ExperimentError> {
        if image.width() != self.width || image.height() != self.height {
            return Err(ExperimentError::Validation(format!(
                "image is {}x{}, segmenter expects {}x{}",
                image.width(),
                image.height(),
                self.width,
                self.height
            )));
        }
        let (w, h) = (self.width, self.height);
        let mut data = image.pixels().to_vec();
        data.extend(
            (0..h).flat_map(|_| (0..w).map(move |x| 2.0 * x as f64 / (w - 1) as f64 - 1.0)),
        );
        data.extend(
            (0..h).flat_map(|y| (0..w).map(move |_| 2.0 * y as f64 / (h - 1) as f64 - 1.0)),
        );
        Ok(Tensor::new(&[3, h, w], data)?)
    }

    fn conv(
        &self,
        tape: &mut Tape,
        name: &str,
        x: Var,
        stride: usize,
    ) -> Result<Var, ExperimentError> {
        let w = tape.param(
            &self.store,
            self.store.id(&format!("{name}/w")).expect("layer weight"),
        );
        let b = tape.param(
            &self.store,
            self.store.id(&format!("{name}/b")).expect("layer bias"),
        );
        Ok(tape.conv2d(x, w, b, stride, 1)?)
    }

    /// Class logits `[3, H, W]`.
    pub fn logits(&self, tape: &mut Tape, image: &ToyImage) -> Result<Var, ExperimentError> {
        let x = tape.constant(self.input(image)?);
        let h = self.conv(tape, LAYERS[0], x, 1)?;
        let h = tape.relu(h);
        let h = self.conv(tape, LAYERS[1], h, 2)?;
        let h = tape.relu(h);
        let h = self.conv(tape, LAYERS[2], h, 1)?;
        let h = tape.relu(h);
        let h = tape.upsample2x(h)?;
        self.conv(tape, LAYERS[3], h, 1)
    }

    pub fn predict(&self, image: &ToyImage) -> Result<MaskImage, ExperimentError> {
        let mut tape = Tape::new();
        let l = self.logits(&mut tape, image)?;
        let data = tape.value(l).data();
        let hw = self.width * self.height;
        if !data.iter().all(|v| v.is_finite()) {
            return Err(ExperimentError::NonFinite("segmenter logits".into()));
        }
        let labels = (0..hw)
            .map(|p| {
                (0..CLASSES)
                    .max_by(|&a, &b| {
                        data[a * hw + p]
                            .total_cmp(&data[b * hw + p])
                            .then(b.cmp(&a))
                    })
                    .unwrap() as u8
            })
            .collect();
        Ok(MaskImage::from_labels(self.width, self.height, labels)?)
    }

    /// Cross-entropy plus soft-Dice for one sample.
    pub fn loss(
        &self,
        tape: &mut Tape,
        image: &ToyImage,
        mask: &MaskImage,
    ) -> Result<Var, ExperimentError> {
        let logits = self.logits(tape, image)?;
        let ce = tape.cross_entropy(logits, mask.labels())?;
        let probs = tape.softmax_channels(logits)?;
        let dice = tape.soft_dice_loss(probs, mask.labels(), DICE_SMOOTH)?;
        Ok(tape.add(ce, dice)?)
    }

    /// Mini-batch Adam over shuffled epochs; returns the loss of every step.
    pub fn train<R: Rng + ?Sized>(
        &mut self,
        samples: &[(ToyImage, MaskImage)],
        config: &SegmenterConfig,
        rng: &mut R,
    ) -> Result<Vec<f64>, ExperimentError> {
        if samples.is_empty() {
            return Err(ExperimentError::Validation(
                "training split is empty".into(),
            ));
        }
        let batch = config.batch.max(1);
        let mut opt = Adam::new(config.lr);
        let mut order: Vec<usize> = (0..samples.len()).collect();
        let mut losses = Vec::new();
        for epoch in 0..config.epochs {
            order.shuffle(rng);
            for chunk in order.chunks(batch) {
                let mut tape = Tape::new();
                let mut total: Option<Var> = None;
                for &i in chunk {
                    let (img, mask) = &samples[i];
                    let l = self.loss(&mut tape, img, mask)?;
                    let l = tape.scale(l, 1.0 / chunk.len() as f64);
                    total = Some(match total {
                        None => l,
                        Some(acc) => tape.add(acc, l)?,
                    });
                }
                let loss = total.expect("non-empty chunk");
                let value = tape.value(loss).item();
                if !value.is_finite() {
                    return Err(ExperimentError::NonFinite(format!(
                        "segmenter loss {value} at epoch {epoch}, step {}",
                        losses.len()
                    )));
                }
                losses.push(value);
                let g = tape.backward(loss)?;
                self.store.accumulate(&g);
                opt.step(&mut self.store)?;
            }
        }
        Ok(losses)
    }

    pub fn save<W: Write>(&self, writer: W) -> Result<(), ExperimentError> {
        self.store.save(writer)?;
        Ok(())
    }

    pub fn load<R: Read>(mut reader: R) -> Result<Self, ExperimentError> {
        let mut bytes = Vec::new();
        reader.read_to_end(&mut bytes)?;
        let records = read_checkpoint(&bytes[..])?;
        let meta = records
            .iter()
            .find(|(n, _)| n == "seg/meta")
            .map(|(_, t)| t.data().to_vec())
            .filter(|m| m.len() == 3)
            .ok_or_else(|| ExperimentError::Validation("checkpoint lacks seg/meta".into()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut seg = Self::new(
            meta[0] as usize,
            meta[1] as usize,
            meta[2] as usize,
            &mut rng,
        )?;
        seg.store.load(&bytes[..])?;
        Ok(seg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::render_toy_image;
    use crate::data::ShapeFamily;
    use crate::metrics::{SegScore, REPORT_CLASSES};

    fn samples(n: usize, seed: u64) -> Vec<(ToyImage, MaskImage)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let m = ShapeFamily::with_ratio(if i % 2 == 0 { 0.3 } else { 0.6 })
                    .sample(32, &mut rng);
                (render_toy_image(&m, &mut rng), m)
            })
            .collect()
    }

    #[test]
    fn output_matches_input_size() {
        let seg = ToySegmenter::new(32, 32, 4, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let (img, mask) = &samples(1, 0)[0];
        let mut tape = Tape::new();
        let l = seg.logits(&mut tape, img).unwrap();
        assert_eq!(tape.shape(l), &[CLASSES, 32, 32]);
        assert!(tape.value(l).all_finite());
        let loss = seg.loss(&mut tape, img, mask).unwrap();
        assert!(tape.value(loss).item() > 0.0);
        assert!(seg.predict(&ToyImage::filled(16, 16, 0.5)).is_err());
    }

    #[test]
    fn overfits_five_samples() {
        let data = samples(5, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut seg = ToySegmenter::new(32, 32, 8, &mut rng).unwrap();
        let cfg = SegmenterConfig {
            epochs: 150,
            lr: 5e-3,
            batch: 5,
            width: 8,
        };
        let losses = seg.train(&data, &cfg, &mut rng).unwrap();
        assert!(losses.iter().all(|&l| l > 0.0));
        let mean: f64 = data
            .iter()
            .map(|(img, m)| {
                SegScore::compute(&seg.predict(img).unwrap(), m, &REPORT_CLASSES)
                    .unwrap()
                    .mean_dice()
            })
            .sum::<f64>()
            / data.len() as f64;
        assert!(mean > 0.9, "train Dice {mean}");
    }

    #[test]
    fn seeded_training_is_reproducible() {
        let data = samples(3, 4);
        let cfg = SegmenterConfig {
            epochs: 2,
            ..Default::default()
        };
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            let mut seg = ToySegmenter::new(32, 32, 4, &mut rng).unwrap();
            seg.train(&data, &cfg, &mut rng).unwrap();
            let mut bytes = Vec::new();
            seg.save(&mut bytes).unwrap();
            bytes
        };
        let a = run();
        assert_eq!(a, run());
        let back = ToySegmenter::load(&a[..]).unwrap();
        let mut again = Vec::new();
        back.save(&mut again).unwrap();
        assert_eq!(a, again);
        assert_eq!((back.height(), back.width()), (32, 32));
    }
}
