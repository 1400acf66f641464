use std::fmt::Write as _;
use std::path::Path;

use super::contour::{Boundaries, Contour};
use super::mask::{MaskImage, CUP, DISC};
use super::CodecError;

pub const DEFAULT_POINTS: usize = 512;
pub const DEFAULT_Z0: f64 = 0.3;

/// Affine map from pixel space to normalized space: `(p - c) / scale`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormFrame {
    pub cx: f64,
    pub cy: f64,
    pub scale: f64,
}

impl NormFrame {
    pub fn to_normalized(&self, x: f64, y: f64) -> (f64, f64) {
        ((x - self.cx) / self.scale, (y - self.cy) / self.scale)
    }

    pub fn to_pixels(&self, x: f64, y: f64) -> (f64, f64) {
        (x * self.scale + self.cx, y * self.scale + self.cy)
    }
}

/// Boundary points of a cup/disc mask lifted to 3-D: `z = +z0` on the cup
/// boundary and `z = -z0` on the disc boundary.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundaryPointCloud {
    pub points: Vec<[f64; 3]>,
    pub frame: NormFrame,
    pub z0: f64,
}

impl BoundaryPointCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn cup_count(&self) -> usize {
        self.points.iter().filter(|p| is_cup(p[2])).count()
    }

    pub fn disc_count(&self) -> usize {
        self.len() - self.cup_count()
    }

    /// Row-major `N x 3` coordinates.
    pub fn flat(&self) -> Vec<f64> {
        self.points.iter().flat_map(|p| p.iter().copied()).collect()
    }

    pub fn from_flat(flat: &[f64], frame: NormFrame, z0: f64) -> Self {
        let points = flat.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
        Self { points, frame, z0 }
    }

    /// Replaces every `z` by `±z0` according to its sign.
    pub fn snap_z(&mut self) {
        let z0 = self.z0;
        for p in &mut self.points {
            p[2] = if is_cup(p[2]) { z0 } else { -z0 };
        }
    }

    /// Pixel-space points (z untouched).
    pub fn denormalized(&self) -> Vec<[f64; 3]> {
        denormalize_cloud(self)
    }

    /// Text form: header `FPC1 <N> <z0> <cx> <cy> <scale>`, then one
    /// `x y z` line per point.
    pub fn to_fpc(&self) -> String {
        let mut s = String::with_capacity(64 * (self.len() + 1));
        let _ = writeln!(
            s,
            "FPC1 {} {:.16e} {:.16e} {:.16e} {:.16e}",
            self.len(),
            self.z0,
            self.frame.cx,
            self.frame.cy,
            self.frame.scale
        );
        for p in &self.points {
            let _ = writeln!(s, "{:.16e} {:.16e} {:.16e}", p[0], p[1], p[2]);
        }
        s
    }

    pub fn from_fpc(text: &str) -> Result<Self, CodecError> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| CodecError::Format("empty point-cloud file".into()))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 6 || fields[0] != "FPC1" {
            return Err(CodecError::Format(format!("bad FPC1 header: {header}")));
        }
        let n: usize = parse(fields[1])?;
        let z0: f64 = parse(fields[2])?;
        let frame = NormFrame {
            cx: parse(fields[3])?,
            cy: parse(fields[4])?,
            scale: parse(fields[5])?,
        };
        let mut points = Vec::with_capacity(n);
        for line in lines {
            let v: Vec<&str> = line.split_whitespace().collect();
            if v.len() != 3 {
                return Err(CodecError::Format(format!("bad point line: {line}")));
            }
            points.push([parse(v[0])?, parse(v[1])?, parse(v[2])?]);
        }
        if points.len() != n {
            return Err(CodecError::Format(format!(
                "header announces {n} points, found {}",
                points.len()
            )));
        }
        Ok(Self { points, frame, z0 })
    }

    pub fn read_fpc(path: &Path) -> Result<Self, CodecError> {
        Self::from_fpc(&std::fs::read_to_string(path)?)
    }

    pub fn write_fpc(&self, path: &Path) -> Result<(), CodecError> {
        std::fs::write(path, self.to_fpc())?;
        Ok(())
    }
}

fn parse<T: std::str::FromStr>(s: &str) -> Result<T, CodecError> {
    s.parse()
        .map_err(|_| CodecError::Format(format!("cannot parse number {s:?}")))
}

/// `z >= 0` marks the cup.
pub fn is_cup(z: f64) -> bool {
    z >= 0.0
}

/// Places `n_points / 2` arc-length-uniform samples on each contour, lifts
/// them to `±z0` and normalizes.
///
/// Contour pixels are pushed half a pixel outward along the local normal
/// so the sampled curve follows the region edge rather than the centers of
/// its rim pixels.
pub fn sample_point_cloud(
    boundaries: &Boundaries,
    n_points: usize,
    z0: f64,
) -> Result<BoundaryPointCloud, CodecError> {
    if n_points == 0 || !n_points.is_multiple_of(2) {
        return Err(CodecError::OddPointCount(n_points));
    }
    let per_class = n_points / 2;
    let mut raw = Vec::with_capacity(n_points);
    for (contour, z) in [(&boundaries.cup, z0), (&boundaries.disc, -z0)] {
        if contour.points.len() < per_class {
            log::debug!(
                "contour with {} pixels sampled at {} positions",
                contour.points.len(),
                per_class
            );
        }
        for (x, y) in resample_closed(&outer_edge(contour), per_class) {
            raw.push([x, y, z]);
        }
    }
    normalize_cloud(&raw, z0)
}

/// Encodes a mask with the default frame conventions.
pub fn encode_mask(
    mask: &MaskImage,
    n_points: usize,
    z0: f64,
) -> Result<BoundaryPointCloud, CodecError> {
    let b = super::contour::extract_boundaries(mask)?;
    sample_point_cloud(&b, n_points, z0)
}

fn outer_edge(contour: &Contour) -> Vec<(f64, f64)> {
    let pts = &contour.points;
    let n = pts.len();
    if n < 3 {
        return pts.iter().map(|&(x, y)| (x as f64, y as f64)).collect();
    }
    // counterclockwise as displayed = negative raw area; the exterior lies
    // on the raw-frame left of travel
    let orient = if super::contour::signed_area(pts) < 0.0 {
        1.0
    } else {
        -1.0
    };
    (0..n)
        .map(|i| {
            let (px, py) = pts[(i + n - 1) % n];
            let (nx, ny) = pts[(i + 1) % n];
            let (tx, ty) = ((nx - px) as f64, (ny - py) as f64);
            let len = (tx * tx + ty * ty).sqrt();
            let (x, y) = (pts[i].0 as f64, pts[i].1 as f64);
            if len == 0.0 {
                return (x, y);
            }
            let (ox, oy) = (-ty / len * orient, tx / len * orient);
            (x + 0.5 * ox, y + 0.5 * oy)
        })
        .collect()
}

/// `count` points at equal arc-length spacing along the closed polyline,
/// starting at its first vertex.
pub fn resample_closed(poly: &[(f64, f64)], count: usize) -> Vec<(f64, f64)> {
    let n = poly.len();
    if n == 0 || count == 0 {
        return Vec::new();
    }
    let seg_len: Vec<f64> = (0..n)
        .map(|i| {
            let (a, b) = (poly[i], poly[(i + 1) % n]);
            ((b.0 - a.0).powi(2) + (b.1 - a.1).powi(2)).sqrt()
        })
        .collect();
    let total: f64 = seg_len.iter().sum();
    if total == 0.0 {
        return vec![poly[0]; count];
    }
    let mut out = Vec::with_capacity(count);
    let mut seg = 0;
    let mut seg_start = 0.0;
    for k in 0..count {
        let s = total * k as f64 / count as f64;
        while seg + 1 < n && seg_start + seg_len[seg] <= s {
            seg_start += seg_len[seg];
            seg += 1;
        }
        let (a, b) = (poly[seg], poly[(seg + 1) % n]);
        let f = if seg_len[seg] > 0.0 {
            ((s - seg_start) / seg_len[seg]).clamp(0.0, 1.0)
        } else {
            0.0
        };
        out.push((a.0 + f * (b.0 - a.0), a.1 + f * (b.1 - a.1)));
    }
    out
}

/// Centers pixel-space points on their xy centroid and scales so the largest
/// absolute xy coordinate is 1. `z` is left as given.
pub fn normalize_cloud(raw: &[[f64; 3]], z0: f64) -> Result<BoundaryPointCloud, CodecError> {
    if raw.is_empty() {
        return Err(CodecError::Format("empty point set".into()));
    }
    let n = raw.len() as f64;
    let cx = raw.iter().map(|p| p[0]).sum::<f64>() / n;
    let cy = raw.iter().map(|p| p[1]).sum::<f64>() / n;
    let scale = raw
        .iter()
        .map(|p| (p[0] - cx).abs().max((p[1] - cy).abs()))
        .fold(0.0, f64::max);
    if scale <= 0.0 || !scale.is_finite() {
        return Err(CodecError::ZeroExtent);
    }
    let frame = NormFrame { cx, cy, scale };
    let points = raw
        .iter()
        .map(|p| {
            let (x, y) = frame.to_normalized(p[0], p[1]);
            [x, y, p[2]]
        })
        .collect();
    Ok(BoundaryPointCloud { points, frame, z0 })
}

pub fn denormalize_cloud(cloud: &BoundaryPointCloud) -> Vec<[f64; 3]> {
    cloud
        .points
        .iter()
        .map(|p| {
            let (x, y) = cloud.frame.to_pixels(p[0], p[1]);
            [x, y, p[2]]
        })
        .collect()
}

/// Rebuilds a label map: each sign class is ordered by angle about its
/// centroid, filled even-odd, and the cup is clipped to the disc.
pub fn decode_point_cloud(
    cloud: &BoundaryPointCloud,
    width: usize,
    height: usize,
) -> Result<MaskImage, CodecError> {
    let pts = cloud.denormalized();
    let cup: Vec<(f64, f64)> = pts
        .iter()
        .filter(|p| is_cup(p[2]))
        .map(|p| (p[0], p[1]))
        .collect();
    let disc: Vec<(f64, f64)> = pts
        .iter()
        .filter(|p| !is_cup(p[2]))
        .map(|p| (p[0], p[1]))
        .collect();
    for (name, set) in [("cup", &cup), ("disc", &disc)] {
        if set.len() < 3 {
            return Err(CodecError::TooFewPoints {
                class: name,
                count: set.len(),
            });
        }
    }
    let cup_fill = fill_polygon(&angular_order(&cup), width, height);
    let disc_fill = fill_polygon(&angular_order(&disc), width, height);
    let labels = cup_fill
        .iter()
        .zip(&disc_fill)
        .map(|(&c, &d)| match (c, d) {
            (true, true) => CUP,
            (_, true) => DISC,
            _ => 0,
        })
        .collect();
    MaskImage::from_labels(width, height, labels)
}

/// Sorts points by polar angle about their centroid (ties by radius).
pub fn angular_order(points: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let n = points.len() as f64;
    let cx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let cy = points.iter().map(|p| p.1).sum::<f64>() / n;
    let mut keyed: Vec<(f64, f64, (f64, f64))> = points
        .iter()
        .map(|&(x, y)| {
            let (dx, dy) = (x - cx, y - cy);
            (dy.atan2(dx), dx * dx + dy * dy, (x, y))
        })
        .collect();
    keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    keyed.into_iter().map(|k| k.2).collect()
}

/// Even-odd scanline fill sampled at pixel centers.
pub fn fill_polygon(poly: &[(f64, f64)], width: usize, height: usize) -> Vec<bool> {
    let mut out = vec![false; width * height];
    let n = poly.len();
    if n < 3 {
        return out;
    }
    let mut xs = Vec::new();
    for y in 0..height {
        let fy = y as f64;
        xs.clear();
        for i in 0..n {
            let (a, b) = (poly[i], poly[(i + 1) % n]);
            // half-open in y so shared vertices are counted once
            if (a.1 <= fy && fy < b.1) || (b.1 <= fy && fy < a.1) {
                xs.push(a.0 + (fy - a.1) / (b.1 - a.1) * (b.0 - a.0));
            }
        }
        xs.sort_by(f64::total_cmp);
        for pair in xs.chunks_exact(2) {
            let start = pair[0].ceil().max(0.0);
            let end = pair[1].ceil().min(width as f64);
            let mut x = start;
            while x < end {
                out[y * width + x as usize] = true;
                x += 1.0;
            }
        }
    }
    out
}
