use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::codec::{decode_gray_png, encode_gray_png, MaskImage, CUP, DISC};

use super::ControlError;

/// Grayscale raster with values in `[0, 1]`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ToyImage {
    width: usize,
    height: usize,
    pixels: Vec<f64>,
}

pub const BACKGROUND_LEVEL: f64 = 0.2;
pub const DISC_LEVEL: f64 = 0.55;
pub const CUP_LEVEL: f64 = 0.9;
/// Peak-to-peak amplitude of the diagonal illumination ramp.
pub const ILLUMINATION: f64 = 0.08;
pub const NOISE_SD: f64 = 0.03;

impl ToyImage {
    pub fn new(width: usize, height: usize, pixels: Vec<f64>) -> Result<Self, ControlError> {
        if pixels.len() != width * height {
            return Err(ControlError::Shape(format!(
                "{} pixels for a {width}x{height} image",
                pixels.len()
            )));
        }
        if let Some(v) = pixels.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(ControlError::Shape(format!(
                "pixel value {v} outside [0, 1]"
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Self {
            width,
            height,
            pixels: vec![value.clamp(0.0, 1.0); width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.pixels[y * self.width + x]
    }

    pub fn mean(&self) -> f64 {
        self.pixels.iter().sum::<f64>() / self.pixels.len().max(1) as f64
    }

    /// Quantized to 8 bits.
    pub fn to_png_bytes(&self) -> Result<Vec<u8>, ControlError> {
        let px: Vec<u8> = self
            .pixels
            .iter()
            .map(|v| (v * 255.0).round() as u8)
            .collect();
        Ok(encode_gray_png(self.width, self.height, &px)?)
    }

    pub fn from_png_bytes(bytes: &[u8]) -> Result<Self, ControlError> {
        let (w, h, px) = decode_gray_png(bytes)?;
        Self::new(w, h, px.iter().map(|&v| v as f64 / 255.0).collect())
    }

    pub fn read_png(path: &Path) -> Result<Self, ControlError> {
        Self::from_png_bytes(&std::fs::read(path)?)
    }

    pub fn write_png(&self, path: &Path) -> Result<(), ControlError> {
        std::fs::write(path, self.to_png_bytes()?)?;
        Ok(())
    }
}

/// Class level plus the illumination ramp, before noise.
pub fn clean_intensity(label: u8, x: usize, y: usize, width: usize, height: usize) -> f64 {
    let base = match label {
        CUP => CUP_LEVEL,
        DISC => DISC_LEVEL,
        _ => BACKGROUND_LEVEL,
    };
    let u = x as f64 / (width.max(2) - 1) as f64 + y as f64 / (height.max(2) - 1) as f64;
    base + ILLUMINATION * (u / 2.0 - 0.5)
}

/// Appearance knobs of the toy renderer.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RenderStyle {
    pub noise_sd: f64,
    /// Gaussian blur of the clean map in pixels; 0 keeps hard edges.
    pub blur_sigma: f64,
}

impl Default for RenderStyle {
    fn default() -> Self {
        Self {
            noise_sd: NOISE_SD,
            blur_sigma: 0.0,
        }
    }
}

fn blur(img: &mut [f64], w: usize, h: usize, sigma: f64) {
    if sigma <= 0.0 {
        return;
    }
    let r = (3.0 * sigma).ceil() as isize;
    let kernel: Vec<f64> = (-r..=r)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let norm: f64 = kernel.iter().sum();
    let mut tmp = vec![0.0; img.len()];
    // clamp-to-edge in both passes
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, wk) in kernel.iter().enumerate() {
                let xx = (x as isize + k as isize - r).clamp(0, w as isize - 1) as usize;
                acc += wk * img[y * w + xx];
            }
            tmp[y * w + x] = acc / norm;
        }
    }
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, wk) in kernel.iter().enumerate() {
                let yy = (y as isize + k as isize - r).clamp(0, h as isize - 1) as usize;
                acc += wk * tmp[yy * w + x];
            }
            img[y * w + x] = acc / norm;
        }
    }
}

/// Renders a fundus-like target for one mask: dark background, mid-gray
/// disc, bright cup, a smooth illumination ramp and Gaussian noise.
pub fn render_toy_image<R: Rng + ?Sized>(mask: &MaskImage, rng: &mut R) -> ToyImage {
    render_toy_image_with(mask, &RenderStyle::default(), rng)
}

pub fn render_toy_image_with<R: Rng + ?Sized>(
    mask: &MaskImage,
    style: &RenderStyle,
    rng: &mut R,
) -> ToyImage {
    let (w, h) = (mask.width(), mask.height());
    let mut pixels = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            pixels.push(clean_intensity(mask.get(x, y), x, y, w, h));
        }
    }
    blur(&mut pixels, w, h, style.blur_sigma);
    if style.noise_sd > 0.0 {
        let noise = Normal::new(0.0, style.noise_sd).expect("positive sd");
        for v in &mut pixels {
            *v += noise.sample(rng);
        }
    }
    for v in &mut pixels {
        *v = v.clamp(0.0, 1.0);
    }
    ToyImage {
        width: w,
        height: h,
        pixels,
    }
}

pub fn make_toy_pairs<R: Rng + ?Sized>(
    masks: &[MaskImage],
    rng: &mut R,
) -> Vec<(MaskImage, ToyImage)> {
    masks
        .iter()
        .map(|m| (m.clone(), render_toy_image(m, rng)))
        .collect()
}
