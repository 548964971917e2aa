//! Deterministic multi-channel feature maps (the stand-in for a pretrained
//! MVS feature CNN) plus differentiable bilinear sampling.
//!
//! The bank is a fixed seeded 3-stage convolution: 3x3 stride-2 (3->16),
//! GELU, 3x3 stride-2 (16->32), GELU, 3x3 stride-1 (32->32), then per-channel
//! standardization over the map. Kernels are Gram-Schmidt orthogonalized
//! across output channels. Convolutions use wrap (circular) padding, which
//! makes the bank exactly shift-equivariant on the pixel torus; a 4-pixel
//! cyclic shift of the image yields a 1-cell shift of the map.
//!
//! An optional on-disk cache stores maps as raw little-endian f32.

use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use crate::autodiff::SampleGrid;
use crate::cameras::Vec3;
use crate::num::{gelu, Real};
use crate::rngs::{normal, seeded, Stream};

pub const FEATURE_CHANNELS: usize = 32;
/// Feature maps live at quarter resolution.
pub const FEATURE_STRIDE: usize = 4;
const STAGE1_CHANNELS: usize = 16;
/// Variance floor: constant images standardize to exactly zero.
const VAR_FLOOR: f64 = 1e-12;

pub const CACHE_MAGIC: &[u8; 8] = b"SRFEAT\0\x01";

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    /// Row-major [h][w][c].
    pub data: Vec<f32>,
}

/// The fixed convolution bank; build once per run from a seed.
pub struct FeatureBank {
    k1: Vec<f64>, // [7*7][3][16]
    k2: Vec<f64>, // [5*5][16][32]
    k3: Vec<f64>, // [3*3][32][32]
}

const K1_SIZE: usize = 7;
const K2_SIZE: usize = 5;
const K3_SIZE: usize = 3;

impl FeatureBank {
    pub fn new(seed: u64) -> Self {
        let mut rng = seeded(seed, Stream::FeatureBank);
        // Kernels are a seeded random channel mixer riding on a gaussian
        // spatial envelope plus a small free random part. The envelopes
        // band-limit each stage below the stride-2 Nyquist rate; without
        // that, subsampled features alias and matched surface points seen
        // from different views stop agreeing, starving the consistency loss.
        let mut draw = |ksize: usize, sigma: f64, in_c: usize, out_c: usize| -> Vec<f64> {
            let spatial = gaussian_envelope(ksize, sigma);
            let fan = ksize * ksize * in_c;
            let scale = (2.0 / fan as f64).sqrt();
            let mut mixer = vec![0.0; in_c * out_c];
            for v in mixer.iter_mut() {
                *v = 3.0 * scale * normal(&mut rng) * (fan as f64).sqrt();
            }
            orthogonalize(&mut mixer, in_c, out_c);
            let mut k = vec![0.0; ksize * ksize * in_c * out_c];
            for ic in 0..in_c {
                for oc in 0..out_c {
                    for (si, &sp) in spatial.iter().enumerate() {
                        k[(si * in_c + ic) * out_c + oc] =
                            mixer[ic * out_c + oc] * sp + 0.05 * scale * normal(&mut rng);
                    }
                }
            }
            k
        };
        let k1 = draw(K1_SIZE, 1.2, 3, STAGE1_CHANNELS);
        let k2 = draw(K2_SIZE, 0.9, STAGE1_CHANNELS, FEATURE_CHANNELS);
        let k3 = draw(K3_SIZE, 0.6, FEATURE_CHANNELS, FEATURE_CHANNELS);
        FeatureBank { k1, k2, k3 }
    }

    /// Extract the feature map of one RGB image (values in [0,1]).
    pub fn extract(&self, image: &[[f64; 3]], width: usize, height: usize) -> FeatureMap {
        assert_eq!(image.len(), width * height);
        assert!(
            width % FEATURE_STRIDE == 0 && height % FEATURE_STRIDE == 0,
            "image {width}x{height} not divisible by the feature stride"
        );
        let flat: Vec<f64> = image.iter().flatten().copied().collect();
        let s1 = conv_wrap(&flat, width, height, 3, &self.k1, K1_SIZE, STAGE1_CHANNELS, 2);
        let s1 = s1.map(gelu);
        let s2 = conv_wrap(&s1.data, s1.w, s1.h, STAGE1_CHANNELS, &self.k2, K2_SIZE, FEATURE_CHANNELS, 2);
        let s2 = s2.map(gelu);
        let mut s3 = conv_wrap(&s2.data, s2.w, s2.h, FEATURE_CHANNELS, &self.k3, K3_SIZE, FEATURE_CHANNELS, 1);

        // per-channel standardization over the image
        let cells = s3.w * s3.h;
        for c in 0..FEATURE_CHANNELS {
            let mut mean = 0.0;
            for i in 0..cells {
                mean += s3.data[i * FEATURE_CHANNELS + c];
            }
            mean /= cells as f64;
            let mut var = 0.0;
            for i in 0..cells {
                let d = s3.data[i * FEATURE_CHANNELS + c] - mean;
                var += d * d;
            }
            var /= cells as f64;
            let inv = 1.0 / (var + VAR_FLOOR).sqrt();
            for i in 0..cells {
                let v = &mut s3.data[i * FEATURE_CHANNELS + c];
                *v = (*v - mean) * inv;
            }
        }
        FeatureMap {
            channels: FEATURE_CHANNELS,
            height: s3.h,
            width: s3.w,
            data: s3.data.iter().map(|&v| v as f32).collect(),
        }
    }
}

fn gaussian_envelope(ksize: usize, sigma: f64) -> Vec<f64> {
    let half = (ksize / 2) as f64;
    let mut w = Vec::with_capacity(ksize * ksize);
    for y in 0..ksize {
        for x in 0..ksize {
            let dx = x as f64 - half;
            let dy = y as f64 - half;
            w.push((-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp());
        }
    }
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= total);
    w
}

struct Plane {
    data: Vec<f64>, // [h][w][c]
    w: usize,
    h: usize,
}

impl Plane {
    fn map(mut self, f: impl Fn(f64) -> f64) -> Plane {
        self.data.iter_mut().for_each(|v| *v = f(*v));
        self
    }
}

/// Odd-sized convolution with circular padding. Kernel layout
/// [ky*ksize+kx][ic][oc].
#[allow(clippy::too_many_arguments)]
fn conv_wrap(
    input: &[f64],
    w: usize,
    h: usize,
    in_c: usize,
    kernel: &[f64],
    ksize: usize,
    out_c: usize,
    stride: usize,
) -> Plane {
    let ow = w / stride;
    let oh = h / stride;
    let pad = ksize / 2;
    let mut out = vec![0.0f64; ow * oh * out_c];
    for oy in 0..oh {
        for ox in 0..ow {
            let orow = &mut out[(oy * ow + ox) * out_c..(oy * ow + ox + 1) * out_c];
            for ky in 0..ksize {
                let iy = (oy * stride + ky + h - pad) % h;
                for kx in 0..ksize {
                    let ix = (ox * stride + kx + w - pad) % w;
                    let ivals = &input[(iy * w + ix) * in_c..(iy * w + ix + 1) * in_c];
                    let kbase = (ky * ksize + kx) * in_c * out_c;
                    for (ic, &iv) in ivals.iter().enumerate() {
                        let krow = &kernel[kbase + ic * out_c..kbase + (ic + 1) * out_c];
                        for (o, &kv) in orow.iter_mut().zip(krow) {
                            *o += iv * kv;
                        }
                    }
                }
            }
        }
    }
    Plane {
        data: out,
        w: ow,
        h: oh,
    }
}

/// Gram-Schmidt over output channels (columns), then rescale each column to
/// its pre-orthogonalization norm so magnitudes stay Kaiming-like.
fn orthogonalize(k: &mut [f64], rows: usize, cols: usize) {
    let norm_of = |k: &[f64], c: usize| -> f64 {
        (0..rows).map(|r| k[r * cols + c] * k[r * cols + c]).sum::<f64>().sqrt()
    };
    let targets: Vec<f64> = (0..cols).map(|c| norm_of(k, c)).collect();
    for c in 0..cols {
        for p in 0..c {
            let dot: f64 = (0..rows).map(|r| k[r * cols + c] * k[r * cols + p]).sum();
            let nn: f64 = (0..rows).map(|r| k[r * cols + p] * k[r * cols + p]).sum();
            if nn > 0.0 {
                for r in 0..rows {
                    let sub = dot / nn * k[r * cols + p];
                    k[r * cols + c] -= sub;
                }
            }
        }
        let n = norm_of(k, c);
        if n > 1e-12 {
            let s = targets[c] / n;
            for r in 0..rows {
                k[r * cols + c] *= s;
            }
        }
    }
}

impl FeatureMap {
    /// Full-image pixel coordinate -> feature-cell coordinate. The stride-2
    /// convolution stages center cell c on input pixel index 4c (pixel
    /// coordinate 4c + 0.5 with half-integer centers).
    pub fn pixel_to_cell(px: f64) -> f64 {
        (px - 0.5) / FEATURE_STRIDE as f64
    }

    /// Distance (in pixels) from an image coordinate to the nearest mask-off
    /// pixel, capped at `max_r`; used to reason about silhouette effects.
    pub fn rim_distance(mask: &[bool], w: usize, h: usize, px: f64, py: f64, max_r: isize) -> f64 {
        let cx = px as isize;
        let cy = py as isize;
        let mut best = max_r as f64;
        for dy in -max_r..=max_r {
            for dx in -max_r..=max_r {
                let (x, y) = (cx + dx, cy + dy);
                if x < 0 || y < 0 || x >= w as isize || y >= h as isize
                    || !mask[y as usize * w + x as usize]
                {
                    let d = ((dx * dx + dy * dy) as f64).sqrt();
                    if d < best {
                        best = d;
                    }
                }
            }
        }
        best
    }

    /// Whether a cell coordinate lies inside the valid interpolation square.
    pub fn cell_in_bounds(&self, u: f64, v: f64) -> bool {
        u >= 0.0 && v >= 0.0 && u <= (self.width - 1) as f64 && v <= (self.height - 1) as f64
    }

    pub fn cell(&self, row: usize, col: usize) -> &[f32] {
        let o = (row * self.width + col) * self.channels;
        &self.data[o..o + self.channels]
    }

    /// Plain bilinear sample at cell coordinates (reference-view features are
    /// constants in the loss).
    pub fn sample(&self, u: f64, v: f64) -> Vec<f64> {
        let uc = u.clamp(0.0, (self.width - 1) as f64);
        let vc = v.clamp(0.0, (self.height - 1) as f64);
        let u0 = (uc.floor() as usize).min(self.width - 2);
        let v0 = (vc.floor() as usize).min(self.height - 2);
        let fu = uc - u0 as f64;
        let fv = vc - v0 as f64;
        let (c00, c01) = (self.cell(v0, u0), self.cell(v0, u0 + 1));
        let (c10, c11) = (self.cell(v0 + 1, u0), self.cell(v0 + 1, u0 + 1));
        (0..self.channels)
            .map(|c| {
                let top = c00[c] as f64 * (1.0 - fu) + c01[c] as f64 * fu;
                let bot = c10[c] as f64 * (1.0 - fu) + c11[c] as f64 * fu;
                top * (1.0 - fv) + bot * fv
            })
            .collect()
    }

    /// Constant grid for the tape's differentiable bilinear sampler.
    pub fn to_sample_grid<T: Real>(&self) -> Arc<SampleGrid<T>> {
        Arc::new(SampleGrid {
            channels: self.channels,
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| T::from_f64(v as f64)).collect(),
        })
    }

    pub fn save_cache(&self, path: &Path) -> std::io::Result<()> {
        let mut w = BufWriter::new(fs::File::create(path)?);
        w.write_all(CACHE_MAGIC)?;
        w.write_all(&(self.channels as u32).to_le_bytes())?;
        w.write_all(&(self.height as u32).to_le_bytes())?;
        w.write_all(&(self.width as u32).to_le_bytes())?;
        for v in &self.data {
            w.write_all(&v.to_le_bytes())?;
        }
        w.flush()
    }

    pub fn load_cache(path: &Path) -> std::io::Result<FeatureMap> {
        let mut r = fs::File::open(path)?;
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != CACHE_MAGIC {
            return Err(std::io::Error::new(
                std::io::ErrorKind::InvalidData,
                format!("{}: bad feature cache magic", path.display()),
            ));
        }
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4)?;
        let channels = u32::from_le_bytes(b4) as usize;
        r.read_exact(&mut b4)?;
        let height = u32::from_le_bytes(b4) as usize;
        r.read_exact(&mut b4)?;
        let width = u32::from_le_bytes(b4) as usize;
        let mut data = vec![0f32; channels * height * width];
        let mut buf = vec![0u8; data.len() * 4];
        r.read_exact(&mut buf).map_err(|e| {
            std::io::Error::new(
                std::io::ErrorKind::InvalidData,
                format!("{}: truncated feature cache: {e}", path.display()),
            )
        })?;
        for (i, c) in buf.chunks_exact(4).enumerate() {
            data[i] = f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
        }
        Ok(FeatureMap {
            channels,
            height,
            width,
            data,
        })
    }
}

/// The n_s source views nearest to a reference view by camera-center
/// distance (ties broken by view index).
pub fn nearest_source_views(centers: &[Vec3], reference: usize, n_s: usize) -> Vec<usize> {
    let rc = centers[reference];
    let mut order: Vec<usize> = (0..centers.len()).filter(|&i| i != reference).collect();
    order.sort_by(|&a, &b| {
        let da = dist2(centers[a], rc);
        let db = dist2(centers[b], rc);
        da.partial_cmp(&db).unwrap().then(a.cmp(&b))
    });
    order.truncate(n_s);
    order
}

fn dist2(a: Vec3, b: Vec3) -> f64 {
    let d = [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
    d[0] * d[0] + d[1] * d[1] + d[2] * d[2]
}
