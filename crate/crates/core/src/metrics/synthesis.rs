use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::control::ToyImage;

use super::MetricsError;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Provenance {
    Real,
    Synthetic,
}

/// Fixed-width feature vectors with their origin.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSet {
    vectors: Vec<Vec<f64>>,
    dim: usize,
    pub provenance: Provenance,
    pub extractor: String,
}

impl FeatureSet {
    pub fn new(
        vectors: Vec<Vec<f64>>,
        provenance: Provenance,
        extractor: &str,
    ) -> Result<Self, MetricsError> {
        let dim = vectors.first().map_or(0, Vec::len);
        if dim == 0 {
            return Err(MetricsError::Invalid("feature set is empty".into()));
        }
        for (i, v) in vectors.iter().enumerate() {
            if v.len() != dim {
                return Err(MetricsError::Invalid(format!(
                    "vector {i} has width {}, expected {dim}",
                    v.len()
                )));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(MetricsError::NonFinite(format!("feature vector {i}")));
            }
        }
        Ok(Self {
            vectors,
            dim,
            provenance,
            extractor: extractor.to_string(),
        })
    }

    pub fn from_images(
        images: &[ToyImage],
        extractor: &dyn FeatureExtractor,
        provenance: Provenance,
    ) -> Result<Self, MetricsError> {
        let v = images.iter().map(|img| extractor.extract(img)).collect();
        Self::new(v, provenance, extractor.id())
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn vectors(&self) -> &[Vec<f64>] {
        &self.vectors
    }
}

/// Maps an image to a feature vector.
pub trait FeatureExtractor {
    fn id(&self) -> &str;
    fn extract(&self, image: &ToyImage) -> Vec<f64>;
}

/// Raw pixels, row-major.
pub struct FlatPixels;

impl FeatureExtractor for FlatPixels {
    fn id(&self) -> &str {
        "flat-pixels"
    }

    fn extract(&self, image: &ToyImage) -> Vec<f64> {
        image.pixels().to_vec()
    }
}

/// Box-filtered `side x side` thumbnail followed by a fixed Gaussian random
/// projection to `dim` values.
pub struct DownsampleProjection {
    side: usize,
    projection: Vec<f64>,
    id: String,
}

impl DownsampleProjection {
    pub fn new(side: usize, dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs = side * side;
        let scale = 1.0 / (inputs as f64).sqrt();
        let projection = (0..dim * inputs)
            .map(|_| scale * Distribution::<f64>::sample(&StandardNormal, &mut rng))
            .collect::<Vec<f64>>();
        Self {
            side,
            projection,
            id: format!("downsample{side}-proj{dim}-seed{seed}"),
        }
    }

    pub fn thumbnail(&self, image: &ToyImage) -> Vec<f64> {
        let (w, h, s) = (image.width(), image.height(), self.side);
        let mut out = vec![0.0; s * s];
        let mut counts = vec![0usize; s * s];
        for y in 0..h {
            for x in 0..w {
                let i = (y * s / h) * s + x * s / w;
                out[i] += image.get(x, y);
                counts[i] += 1;
            }
        }
        for (o, &c) in out.iter_mut().zip(&counts) {
            if c > 0 {
                *o /= c as f64;
            }
        }
        out
    }
}

impl Default for DownsampleProjection {
    fn default() -> Self {
        Self::new(16, 32, 0)
    }
}

impl FeatureExtractor for DownsampleProjection {
    fn id(&self) -> &str {
        &self.id
    }

    fn extract(&self, image: &ToyImage) -> Vec<f64> {
        let t = self.thumbnail(image);
        self.projection
            .chunks_exact(t.len())
            .map(|row| row.iter().zip(&t).map(|(a, b)| a * b).sum())
            .collect()
    }
}

/// `(1 - cos θ) / 2`.
pub fn cosine_distance(a: &[f64], b: &[f64]) -> Result<f64, MetricsError> {
    let na = a.iter().map(|v| v * v).sum::<f64>();
    let nb = b.iter().map(|v| v * v).sum::<f64>();
    if na == 0.0 || nb == 0.0 {
        return Err(MetricsError::ZeroVector);
    }
    // sqrt(s * s) == s exactly, so identical vectors give cos == 1.
    let cos = a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb).sqrt();
    Ok(((1.0 - cos.clamp(-1.0, 1.0)) / 2.0).max(0.0))
}

fn check_pair(a: &FeatureSet, b: &FeatureSet) -> Result<(), MetricsError> {
    if a.dim != b.dim {
        return Err(MetricsError::Invalid(format!(
            "feature widths {} and {} differ",
            a.dim, b.dim
        )));
    }
    Ok(())
}

/// Nearest real index and distance for every generated vector (ties go to
/// the lowest index).
fn nearest(generated: &FeatureSet, real: &FeatureSet) -> Result<Vec<(usize, f64)>, MetricsError> {
    check_pair(generated, real)?;
    generated
        .vectors
        .iter()
        .map(|g| {
            let mut best = (0, f64::INFINITY);
            for (j, r) in real.vectors.iter().enumerate() {
                let d = cosine_distance(g, r)?;
                if d < best.1 {
                    best = (j, d);
                }
            }
            Ok(best)
        })
        .collect()
}

/// Mean distance from each generated vector to its nearest real vector.
pub fn mmd(generated: &FeatureSet, real: &FeatureSet) -> Result<f64, MetricsError> {
    let nn = nearest(generated, real)?;
    Ok(nn.iter().map(|p| p.1).sum::<f64>() / nn.len() as f64)
}

/// Fraction of real vectors that are the nearest neighbour of some
/// generated vector.
pub fn cov(generated: &FeatureSet, real: &FeatureSet) -> Result<f64, MetricsError> {
    let nn = nearest(generated, real)?;
    let mut hit = vec![false; real.len()];
    for (j, _) in nn {
        hit[j] = true;
    }
    Ok(hit.iter().filter(|&&h| h).count() as f64 / real.len() as f64)
}

/// Mean and unbiased covariance.
pub fn gaussian_fit(set: &FeatureSet) -> (DVector<f64>, DMatrix<f64>) {
    let (n, d) = (set.len(), set.dim);
    let mut mu = DVector::zeros(d);
    for v in &set.vectors {
        mu += DVector::from_column_slice(v);
    }
    mu /= n as f64;
    let mut cov = DMatrix::zeros(d, d);
    for v in &set.vectors {
        let c = DVector::from_column_slice(v) - &mu;
        cov += &c * c.transpose();
    }
    cov /= (n.max(2) - 1) as f64;
    (mu, cov)
}

const RIDGE: f64 = 1e-6;

fn regularized(cov: &DMatrix<f64>, label: &str) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(cov.clone());
    let max = eig.eigenvalues.iter().cloned().fold(0.0f64, f64::max);
    let min = eig
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    if min <= 1e-12 * max.max(1e-300) {
        log::warn!("{label} covariance is singular or ill-conditioned (eigenvalues {min:e}..{max:e}); adding {RIDGE:e} I");
        cov + DMatrix::identity(cov.nrows(), cov.ncols()) * RIDGE
    } else {
        cov.clone()
    }
}

fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let vals = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose()
}

/// Fréchet distance between two Gaussians,
/// `‖μ1 - μ2‖² + Tr(Σ1 + Σ2 - 2 (Σ1^½ Σ2 Σ1^½)^½)`.
///
/// The trace term equals the sum of singular values of `Σ1^½ Σ2^½`, which
/// avoids taking square roots of rounding noise in near-null directions.
pub fn frechet_distance(
    mu1: &DVector<f64>,
    s1: &DMatrix<f64>,
    mu2: &DVector<f64>,
    s2: &DMatrix<f64>,
) -> f64 {
    let prod = psd_sqrt(s1) * psd_sqrt(s2);
    let tr_sqrt: f64 = prod.singular_values().iter().sum();
    let diff = mu1 - mu2;
    (diff.dot(&diff) + s1.trace() + s2.trace() - 2.0 * tr_sqrt).max(0.0)
}

pub fn fid(real: &FeatureSet, synthetic: &FeatureSet) -> Result<f64, MetricsError> {
    check_pair(real, synthetic)?;
    if real.len() <= real.dim || synthetic.len() <= synthetic.dim {
        log::warn!(
            "FID with {} and {} samples in {} dimensions; covariance estimates are rank deficient",
            real.len(),
            synthetic.len(),
            real.dim
        );
    }
    let (m1, s1) = gaussian_fit(real);
    let (m2, s2) = gaussian_fit(synthetic);
    Ok(frechet_distance(
        &m1,
        &regularized(&s1, "real"),
        &m2,
        &regularized(&s2, "synthetic"),
    ))
}
