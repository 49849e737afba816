//! Image datasets: directories of PPM/PNG files, packed binaries, and a
//! procedural generator of correlated color images.

use std::fs;
use std::path::Path;

use qgan_quat::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::image::{from_u8, images_to_batch, read_png, read_ppm, rgb_bytes, write_all};
use crate::{HarnessError, Result};

pub const PACKED_MAGIC: &[u8; 4] = b"QGD1";

/// RGB images of one size, values in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub images: Vec<Tensor<f32>>,
    pub height: usize,
    pub width: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub n: usize,
    pub size: usize,
    pub seed: u64,
}

impl Dataset {
    pub fn new(images: Vec<Tensor<f32>>) -> Result<Self> {
        let first = images
            .first()
            .ok_or_else(|| HarnessError::Config("dataset is empty".into()))?;
        let (height, width) = match first.shape() {
            [3, h, w] => (*h, *w),
            s => {
                return Err(HarnessError::Config(format!(
                    "dataset images must be [3, H, W], got {s:?}"
                )))
            }
        };
        if let Some(bad) = images.iter().find(|i| i.shape() != first.shape()) {
            return Err(HarnessError::Config(format!(
                "mixed image sizes {:?} and {:?}",
                first.shape(),
                bad.shape()
            )));
        }
        Ok(Dataset { images, height, width })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// A directory of `.ppm`/`.png` files (sorted by name) or a packed file.
    pub fn load(path: &Path) -> Result<Self> {
        let meta = fs::metadata(path).map_err(|e| HarnessError::io(path, e))?;
        if !meta.is_dir() {
            return Self::load_packed(path);
        }
        let mut files: Vec<_> = fs::read_dir(path)
            .map_err(|e| HarnessError::io(path, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| matches!(p.extension().and_then(|e| e.to_str()), Some("ppm" | "png")))
            .collect();
        files.sort();
        let images = files
            .iter()
            .map(|p| {
                if p.extension().is_some_and(|e| e == "ppm") {
                    read_ppm(p)
                } else {
                    read_png(p)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        if images.is_empty() {
            return Err(HarnessError::Config(format!(
                "{} holds no .ppm or .png images",
                path.display()
            )));
        }
        Self::new(images)
    }

    /// Header `QGD1`, then `n`, `height`, `width` as little-endian u32, then
    /// `n` interleaved RGB frames of u8.
    pub fn encode_packed(&self) -> Result<Vec<u8>> {
        let mut out = PACKED_MAGIC.to_vec();
        for v in [self.len(), self.height, self.width] {
            out.extend((v as u32).to_le_bytes());
        }
        for img in &self.images {
            out.extend(rgb_bytes(img)?);
        }
        Ok(out)
    }

    pub fn save_packed(&self, path: &Path) -> Result<()> {
        write_all(path, &self.encode_packed()?)
    }

    pub fn decode_packed(bytes: &[u8]) -> Result<Self> {
        let err = |offset: usize, msg: String| HarnessError::Parse {
            what: "dataset",
            offset,
            msg,
        };
        if bytes.len() < 4 || &bytes[..4] != PACKED_MAGIC {
            return Err(err(0, "missing QGD1 magic".into()));
        }
        if bytes.len() < 16 {
            return Err(err(bytes.len(), "header truncated".into()));
        }
        let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
        let (n, h, w) = (word(0), word(1), word(2));
        let frame = 3 * h * w;
        if n == 0 || frame == 0 {
            return Err(err(4, format!("empty dataset {n}x{h}x{w}")));
        }
        let end = 16 + n * frame;
        if bytes.len() < end {
            return Err(err(bytes.len(), format!("frames truncated, expected {end} bytes")));
        }
        let images = bytes[16..end]
            .chunks(frame)
            .map(|f| crate::image::rgb_from_bytes(f, h, w))
            .collect::<Result<Vec<_>>>()?;
        Self::new(images)
    }

    pub fn load_packed(path: &Path) -> Result<Self> {
        Self::decode_packed(&fs::read(path).map_err(|e| HarnessError::io(path, e))?)
    }

    /// `batch` images drawn uniformly with replacement, as `[1, B, 4, H, W]`.
    pub fn sample_batch<R: Rng>(&self, rng: &mut R, batch: usize) -> Result<Tensor<f32>> {
        let picks: Vec<&Tensor<f32>> = (0..batch).map(|_| &self.images[rng.gen_range(0..self.len())]).collect();
        images_to_batch(&picks)
    }

    /// The first `n` images (cycling if needed) as one batch.
    pub fn head_batch(&self, n: usize) -> Result<Tensor<f32>> {
        let picks: Vec<&Tensor<f32>> = (0..n).map(|i| &self.images[i % self.len()]).collect();
        images_to_batch(&picks)
    }
}

/// Procedural color images: a shared luminance field (a linear gradient
/// plus filled discs and rectangles) mapped through per-image channel
/// gains and offsets, so the three channels move together.
pub fn synth_dataset(spec: SynthSpec) -> Result<Dataset> {
    if ![8, 16, 32].contains(&spec.size) {
        return Err(HarnessError::Config(format!(
            "synthetic size must be 8, 16 or 32, got {}",
            spec.size
        )));
    }
    if spec.n == 0 {
        return Err(HarnessError::Config("synthetic dataset needs n >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let s = spec.size;
    let images = (0..spec.n)
        .map(|_| {
            let angle: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            let (dx, dy) = (angle.cos(), angle.sin());
            let (lo, hi): (f64, f64) = (rng.gen_range(-1.0..-0.2), rng.gen_range(0.2..1.0));
            let mut lum = vec![0.0f64; s * s];
            for y in 0..s {
                for x in 0..s {
                    let t = ((x as f64 / s as f64 - 0.5) * dx + (y as f64 / s as f64 - 0.5) * dy) / 1.42 + 0.5;
                    lum[y * s + x] = lo + (hi - lo) * t;
                }
            }
            for _ in 0..rng.gen_range(1..=3) {
                let level: f64 = rng.gen_range(-1.0..1.0);
                let (cx, cy) = (rng.gen_range(0.0..s as f64), rng.gen_range(0.0..s as f64));
                let r = rng.gen_range(s as f64 / 8.0..s as f64 / 3.0);
                let disc = rng.gen_bool(0.5);
                for y in 0..s {
                    for x in 0..s {
                        let (ux, uy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
                        let inside = if disc {
                            ux * ux + uy * uy <= r * r
                        } else {
                            ux.abs() <= r && uy.abs() <= r
                        };
                        if inside {
                            lum[y * s + x] = level;
                        }
                    }
                }
            }
            let gains: [f64; 3] = std::array::from_fn(|_| rng.gen_range(0.5..1.0));
            let offsets: [f64; 3] = std::array::from_fn(|_| rng.gen_range(-0.3..0.3));
            let mut data = vec![0.0f32; 3 * s * s];
            for c in 0..3 {
                for (i, &l) in lum.iter().enumerate() {
                    let v = (gains[c] * l + offsets[c]).clamp(-1.0, 1.0);
                    data[c * s * s + i] = from_u8(crate::image::to_u8(v));
                }
            }
            Tensor::from_vec(&[3, s, s], data).map_err(HarnessError::from)
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(images)
}

/// Mean over images of the average pairwise Pearson correlation between
/// the R, G and B planes; constant planes are skipped.
pub fn mean_channel_correlation(images: &[Tensor<f32>]) -> f64 {
    let mut total = 0.0;
    let mut count = 0usize;
    for img in images {
        let n = img.numel() / 3;
        let planes: Vec<&[f32]> = img.data().chunks(n).collect();
        for (a, b) in [(0, 1), (0, 2), (1, 2)] {
            if let Some(r) = pearson(planes[a], planes[b]) {
                total += r;
                count += 1;
            }
        }
    }
    if count == 0 {
        0.0
    } else {
        total / count as f64
    }
}

fn pearson(a: &[f32], b: &[f32]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().map(|&v| v as f64).sum::<f64>() / n;
    let mb = b.iter().map(|&v| v as f64).sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x as f64 - ma, y as f64 - mb);
        sab += x * y;
        saa += x * x;
        sbb += y * y;
    }
    (saa > 0.0 && sbb > 0.0).then(|| sab / (saa * sbb).sqrt())
}
