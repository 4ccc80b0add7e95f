//! Keypoint descriptors for local support.
//!
//! [`DogExtractor`] finds scale-space extrema of a difference-of-Gaussians
//! stack and describes each one with a 4×4 grid of 8-bin gradient orientation
//! histograms. Orientation is not normalized: digits and detector crops are
//! upright, and keeping the absolute orientation makes the descriptor more
//! selective between stroke styles.

use crate::raster::Raster;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Keypoint {
    pub x: f32,
    pub y: f32,
    pub sigma: f32,
    pub response: f32,
}

/// Descriptor vectors extracted from one token, all of the same length.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalDescriptor {
    pub method: String,
    pub keypoints: Vec<Keypoint>,
    pub vectors: Vec<Vec<f32>>,
}

impl LocalDescriptor {
    pub fn new(method: impl Into<String>, keypoints: Vec<Keypoint>, vectors: Vec<Vec<f32>>) -> Self {
        assert_eq!(keypoints.len(), vectors.len());
        if let Some(first) = vectors.first() {
            assert!(
                vectors.iter().all(|v| v.len() == first.len()),
                "descriptor vectors differ in length"
            );
        }
        Self {
            method: method.into(),
            keypoints,
            vectors,
        }
    }

    /// Descriptor from bare vectors, with keypoints at the origin.
    pub fn from_vectors(method: impl Into<String>, vectors: Vec<Vec<f32>>) -> Self {
        let keypoints = vectors
            .iter()
            .map(|_| Keypoint {
                x: 0.0,
                y: 0.0,
                sigma: 0.0,
                response: 0.0,
            })
            .collect();
        Self::new(method, keypoints, vectors)
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }
}

pub trait DescriptorExtractor: Send + Sync {
    fn method(&self) -> &str;
    fn describe(&self, image: &Raster) -> LocalDescriptor;
}

const SPATIAL_BINS: usize = 4;
const ORIENTATION_BINS: usize = 8;
pub const DESCRIPTOR_LEN: usize = SPATIAL_BINS * SPATIAL_BINS * ORIENTATION_BINS;

#[derive(Debug, Clone, PartialEq)]
pub struct DogExtractor {
    /// Blur of the first scale level, in pixels.
    pub base_sigma: f32,
    /// Scale levels per octave.
    pub levels_per_octave: usize,
    /// Minimum `|DoG|` of a keypoint, in intensity units.
    pub contrast_threshold: f32,
    /// Principal-curvature ratio above which an extremum is an edge.
    pub edge_ratio: f32,
    pub max_keypoints: usize,
    pub max_octaves: usize,
    /// Start from a bilinear 2× enlargement, which finds more keypoints on
    /// thin strokes.
    pub upsample: bool,
    /// Length of every descriptor vector after normalization.
    pub scale: f32,
}

impl Default for DogExtractor {
    fn default() -> Self {
        Self {
            base_sigma: 1.0,
            levels_per_octave: 3,
            contrast_threshold: 0.02,
            edge_ratio: 10.0,
            max_keypoints: 40,
            max_octaves: 4,
            upsample: true,
            scale: 13.5,
        }
    }
}

impl DescriptorExtractor for DogExtractor {
    fn method(&self) -> &str {
        "dog-ohist-4x4x8"
    }

    fn describe(&self, image: &Raster) -> LocalDescriptor {
        let mut found: Vec<(Keypoint, Vec<f32>)> = Vec::new();
        let (mut level_img, mut factor) = if self.upsample {
            (image.resize(image.width() * 2, image.height() * 2), 0.5f32)
        } else {
            (image.clone(), 1.0f32)
        };
        for octave in 0..self.max_octaves {
            if octave > 0 {
                if level_img.width() < 32 || level_img.height() < 32 {
                    break;
                }
                level_img = halve(&level_img);
                factor *= 2.0;
            }
            self.octave(&level_img, factor, &mut found);
        }
        found.sort_by(|a, b| {
            b.0.response
                .total_cmp(&a.0.response)
                .then(a.0.y.total_cmp(&b.0.y))
                .then(a.0.x.total_cmp(&b.0.x))
                .then(a.0.sigma.total_cmp(&b.0.sigma))
        });
        found.truncate(self.max_keypoints);
        let (keypoints, vectors) = found.into_iter().unzip();
        LocalDescriptor::new(self.method(), keypoints, vectors)
    }
}

impl DogExtractor {
    fn sigma(&self, level: usize) -> f32 {
        self.base_sigma * 2f32.powf(level as f32 / self.levels_per_octave as f32)
    }

    fn octave(&self, img: &Raster, factor: f32, out: &mut Vec<(Keypoint, Vec<f32>)>) {
        let levels = self.levels_per_octave + 3;
        let blurred: Vec<Raster> = (0..levels).map(|l| gaussian_blur(img, self.sigma(l))).collect();
        let dog: Vec<Raster> = blurred
            .windows(2)
            .map(|w| {
                let data = w[1].data().iter().zip(w[0].data()).map(|(a, b)| a - b).collect();
                Raster::new(img.width(), img.height(), data)
            })
            .collect();
        let (w, h) = (img.width(), img.height());
        if w < 3 || h < 3 {
            return;
        }
        for s in 1..dog.len() - 1 {
            let d = &dog[s];
            for y in 1..h - 1 {
                for x in 1..w - 1 {
                    let v = d.get(x, y);
                    if v.abs() < self.contrast_threshold {
                        continue;
                    }
                    if !is_extremum(&dog[s - 1..=s + 1], x, y, v) {
                        continue;
                    }
                    if self.is_edge(d, x, y) {
                        continue;
                    }
                    let sigma = self.sigma(s);
                    let vector = self.descriptor(&blurred[s], x as f32, y as f32, sigma);
                    if let Some(vector) = vector {
                        out.push((
                            Keypoint {
                                x: x as f32 * factor,
                                y: y as f32 * factor,
                                sigma: sigma * factor,
                                response: v.abs(),
                            },
                            vector,
                        ));
                    }
                }
            }
        }
    }

    fn is_edge(&self, d: &Raster, x: usize, y: usize) -> bool {
        let c = d.get(x, y);
        let dxx = d.get(x + 1, y) + d.get(x - 1, y) - 2.0 * c;
        let dyy = d.get(x, y + 1) + d.get(x, y - 1) - 2.0 * c;
        let dxy = (d.get(x + 1, y + 1) - d.get(x + 1, y - 1) - d.get(x - 1, y + 1)
            + d.get(x - 1, y - 1))
            / 4.0;
        let trace = dxx + dyy;
        let det = dxx * dyy - dxy * dxy;
        let r = self.edge_ratio;
        det <= 0.0 || trace * trace * r >= (r + 1.0) * (r + 1.0) * det
    }

    fn descriptor(&self, img: &Raster, kx: f32, ky: f32, sigma: f32) -> Option<Vec<f32>> {
        let cell = (2.0 * sigma).round().max(2.0);
        let half = cell * SPATIAL_BINS as f32 / 2.0;
        let weight_sigma = half;
        let mut hist = vec![0f32; DESCRIPTOR_LEN];
        let (w, h) = (img.width() as i64, img.height() as i64);
        let r = half.ceil() as i64;
        for dy in -r..r {
            for dx in -r..r {
                // Sample at pixel centers relative to the keypoint.
                let ox = dx as f32 + 0.5;
                let oy = dy as f32 + 0.5;
                if ox.abs() >= half || oy.abs() >= half {
                    continue;
                }
                let px = kx as i64 + dx;
                let py = ky as i64 + dy;
                if px < 1 || py < 1 || px >= w - 1 || py >= h - 1 {
                    continue;
                }
                let (px, py) = (px as usize, py as usize);
                let gx = img.get(px + 1, py) - img.get(px - 1, py);
                let gy = img.get(px, py + 1) - img.get(px, py - 1);
                let mag = (gx * gx + gy * gy).sqrt();
                if mag == 0.0 {
                    continue;
                }
                let g = (-(ox * ox + oy * oy) / (2.0 * weight_sigma * weight_sigma)).exp();
                let bx = (((ox + half) / cell) as usize).min(SPATIAL_BINS - 1);
                let by = (((oy + half) / cell) as usize).min(SPATIAL_BINS - 1);
                let angle = gy.atan2(gx).rem_euclid(std::f32::consts::TAU);
                let fbin = angle / std::f32::consts::TAU * ORIENTATION_BINS as f32;
                let b0 = (fbin.floor() as usize) % ORIENTATION_BINS;
                let b1 = (b0 + 1) % ORIENTATION_BINS;
                let t = fbin - fbin.floor();
                let base = (by * SPATIAL_BINS + bx) * ORIENTATION_BINS;
                hist[base + b0] += g * mag * (1.0 - t);
                hist[base + b1] += g * mag * t;
            }
        }
        normalize(&mut hist)?;
        for v in &mut hist {
            *v = v.min(0.2);
        }
        normalize(&mut hist)?;
        for v in &mut hist {
            *v *= self.scale;
        }
        Some(hist)
    }
}

fn normalize(v: &mut [f32]) -> Option<()> {
    let norm = v.iter().map(|x| x * x).sum::<f32>().sqrt();
    if norm <= 1e-12 {
        return None;
    }
    for x in v.iter_mut() {
        *x /= norm;
    }
    Some(())
}

fn is_extremum(stack: &[Raster], x: usize, y: usize, v: f32) -> bool {
    let greater = v > 0.0;
    for (si, layer) in stack.iter().enumerate() {
        for yy in y - 1..=y + 1 {
            for xx in x - 1..=x + 1 {
                if si == 1 && xx == x && yy == y {
                    continue;
                }
                let n = layer.get(xx, yy);
                if (greater && n >= v) || (!greater && n <= v) {
                    return false;
                }
            }
        }
    }
    true
}

fn gaussian_kernel(sigma: f32) -> Vec<f32> {
    let radius = (3.0 * sigma).ceil() as i32;
    let mut k: Vec<f32> = (-radius..=radius)
        .map(|i| (-(i * i) as f32 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f32 = k.iter().sum();
    for v in &mut k {
        *v /= sum;
    }
    k
}

/// Separable Gaussian blur with edge replication.
fn gaussian_blur(img: &Raster, sigma: f32) -> Raster {
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as i64;
    let (w, h) = (img.width(), img.height());
    let mut tmp = Raster::zeros(w, h);
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, &kv) in k.iter().enumerate() {
                let xx = (x as i64 + i as i64 - r).clamp(0, w as i64 - 1) as usize;
                acc += kv * img.get(xx, y);
            }
            tmp.set(x, y, acc);
        }
    }
    let mut out = Raster::zeros(w, h);
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, &kv) in k.iter().enumerate() {
                let yy = (y as i64 + i as i64 - r).clamp(0, h as i64 - 1) as usize;
                acc += kv * tmp.get(x, yy);
            }
            out.set(x, y, acc);
        }
    }
    out
}

fn halve(img: &Raster) -> Raster {
    let (w, h) = (img.width() / 2, img.height() / 2);
    let mut out = Raster::zeros(w, h);
    for y in 0..h {
        for x in 0..w {
            let s = img.get(2 * x, 2 * y)
                + img.get(2 * x + 1, 2 * y)
                + img.get(2 * x, 2 * y + 1)
                + img.get(2 * x + 1, 2 * y + 1);
            out.set(x, y, s / 4.0);
        }
    }
    out
}
