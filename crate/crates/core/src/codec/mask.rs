use std::fs::File;
use std::io::{BufWriter, Cursor, Write};
use std::path::Path;

use super::CodecError;

pub const BACKGROUND: u8 = 0;
pub const DISC: u8 = 1;
pub const CUP: u8 = 2;

/// Label map over a `width x height` raster. Pixel `(x, y)` has its center
/// at continuous coordinate `(x, y)`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct MaskImage {
    width: usize,
    height: usize,
    labels: Vec<u8>,
}

/// Closed ellipse used to draw toy masks.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ellipse {
    pub cx: f64,
    pub cy: f64,
    /// Semi-axis along the rotated x direction.
    pub a: f64,
    pub b: f64,
    /// Rotation in radians.
    pub angle: f64,
}

impl Ellipse {
    pub fn circle(cx: f64, cy: f64, r: f64) -> Self {
        Self {
            cx,
            cy,
            a: r,
            b: r,
            angle: 0.0,
        }
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (s, c) = self.angle.sin_cos();
        let dx = x - self.cx;
        let dy = y - self.cy;
        let u = (dx * c + dy * s) / self.a;
        let v = (-dx * s + dy * c) / self.b;
        u * u + v * v <= 1.0
    }

    pub fn area(&self) -> f64 {
        std::f64::consts::PI * self.a * self.b
    }
}

impl MaskImage {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            labels: vec![BACKGROUND; width * height],
        }
    }

    pub fn from_labels(width: usize, height: usize, labels: Vec<u8>) -> Result<Self, CodecError> {
        if labels.len() != width * height {
            return Err(CodecError::Format(format!(
                "{} labels for a {width}x{height} mask",
                labels.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&l| l > CUP) {
            return Err(CodecError::Format(format!("invalid label {bad}")));
        }
        Ok(Self {
            width,
            height,
            labels,
        })
    }

    /// Disc region `disc`, cup region `cup ∩ disc`.
    pub fn from_ellipses(width: usize, height: usize, disc: &Ellipse, cup: &Ellipse) -> Self {
        let mut m = Self::new(width, height);
        for y in 0..height {
            for x in 0..width {
                let (fx, fy) = (x as f64, y as f64);
                if disc.contains(fx, fy) {
                    m.labels[y * width + x] = if cup.contains(fx, fy) { CUP } else { DISC };
                }
            }
        }
        m
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.labels[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, label: u8) {
        assert!(label <= CUP);
        self.labels[y * self.width + x] = label;
    }

    pub fn count(&self, label: u8) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }

    /// Pixels of the cup region.
    pub fn cup_region(&self) -> Vec<bool> {
        self.labels.iter().map(|&l| l == CUP).collect()
    }

    /// Pixels of the whole disc (disc or cup label).
    pub fn disc_region(&self) -> Vec<bool> {
        self.labels.iter().map(|&l| l != BACKGROUND).collect()
    }

    pub fn cup_area(&self) -> usize {
        self.count(CUP)
    }

    pub fn disc_area(&self) -> usize {
        self.labels.len() - self.count(BACKGROUND)
    }

    /// Cup area over whole-disc area; `None` without disc pixels.
    pub fn cup_disc_ratio(&self) -> Option<f64> {
        let d = self.disc_area();
        (d > 0).then(|| self.cup_area() as f64 / d as f64)
    }

    pub fn to_png_bytes(&self) -> Result<Vec<u8>, CodecError> {
        let pixels: Vec<u8> = self
            .labels
            .iter()
            .map(|&l| match l {
                CUP => 255,
                DISC => 128,
                _ => 0,
            })
            .collect();
        encode_gray_png(self.width, self.height, &pixels)
    }

    /// Parses an 8-bit single-channel PNG holding only 0, 128 and 255.
    pub fn from_png_bytes(bytes: &[u8]) -> Result<Self, CodecError> {
        let (width, height, pixels) = decode_gray_png(bytes)?;
        let mut labels = Vec::with_capacity(pixels.len());
        for (i, &p) in pixels.iter().enumerate() {
            labels.push(match p {
                0 => BACKGROUND,
                128 => DISC,
                255 => CUP,
                other => {
                    return Err(CodecError::Format(format!(
                        "pixel ({}, {}) has value {other}; masks allow 0, 128, 255",
                        i % width,
                        i / width
                    )))
                }
            });
        }
        Ok(Self {
            width,
            height,
            labels,
        })
    }

    pub fn read_png(path: &Path) -> Result<Self, CodecError> {
        let bytes = std::fs::read(path)?;
        Self::from_png_bytes(&bytes)
    }

    pub fn write_png(&self, path: &Path) -> Result<(), CodecError> {
        let bytes = self.to_png_bytes()?;
        let mut f = BufWriter::new(File::create(path)?);
        f.write_all(&bytes)?;
        f.flush()?;
        Ok(())
    }
}

pub fn encode_gray_png(width: usize, height: usize, pixels: &[u8]) -> Result<Vec<u8>, CodecError> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, width as u32, height as u32);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc
            .write_header()
            .map_err(|e| CodecError::Png(e.to_string()))?;
        writer
            .write_image_data(pixels)
            .map_err(|e| CodecError::Png(e.to_string()))?;
    }
    Ok(out)
}

/// Returns `(width, height, pixels)` of an 8-bit grayscale PNG.
pub fn decode_gray_png(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>), CodecError> {
    let decoder = png::Decoder::new(Cursor::new(bytes));
    let mut reader = decoder
        .read_info()
        .map_err(|e| CodecError::Png(e.to_string()))?;
    let mut buf = vec![0; reader.output_buffer_size().unwrap_or(0)];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| CodecError::Png(e.to_string()))?;
    if info.color_type != png::ColorType::Grayscale || info.bit_depth != png::BitDepth::Eight {
        return Err(CodecError::Format(format!(
            "expected 8-bit grayscale PNG, got {:?} at {:?}",
            info.color_type, info.bit_depth
        )));
    }
    let (w, h) = (info.width as usize, info.height as usize);
    buf.truncate(info.buffer_size());
    if buf.len() != w * h {
        return Err(CodecError::Format("unexpected PNG row layout".into()));
    }
    Ok((w, h, buf))
}
