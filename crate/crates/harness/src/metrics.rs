//! Fréchet distance and inception score over pluggable feature extractors.
//!
//! No pretrained network ships with this crate, so distances are only
//! comparable between runs that use the same extractor.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use qgan_quat::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::{HarnessError, Result};

/// Sample mean and biased sample covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct Gaussian {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

pub fn fit_gaussian(features: &[Vec<f64>]) -> Result<Gaussian> {
    if features.len() < 2 {
        return Err(HarnessError::Config(format!(
            "need at least 2 feature vectors, got {}",
            features.len()
        )));
    }
    let d = features[0].len();
    if features.iter().any(|f| f.len() != d) {
        return Err(HarnessError::Config("feature vectors differ in length".into()));
    }
    let n = features.len() as f64;
    let mut mean = DVector::zeros(d);
    for f in features {
        mean += DVector::from_column_slice(f);
    }
    mean /= n;
    let mut cov = DMatrix::zeros(d, d);
    for f in features {
        let c = DVector::from_column_slice(f) - &mean;
        cov.ger(1.0, &c, &c, 1.0);
    }
    cov /= n;
    Ok(Gaussian { mean, cov })
}

fn check_symmetric(name: &str, m: &DMatrix<f64>) -> Result<()> {
    if !m.is_square() {
        return Err(HarnessError::Config(format!("{name} is not square")));
    }
    let asym = (m - m.transpose()).abs().max();
    if asym > 1e-8 {
        return Err(HarnessError::Config(format!(
            "{name} is not symmetric (max asymmetry {asym:e})"
        )));
    }
    Ok(())
}

/// Square root of a symmetric positive semidefinite matrix, with negative
/// roundoff eigenvalues set to zero.
fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let roots = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

/// `|mu_g - mu_r|^2 + Tr(C_g + C_r - 2 (C_g C_r)^{1/2})`. The trace of the
/// root is taken from the symmetric product `C_g^{1/2} C_r C_g^{1/2}`,
/// which is similar to `C_g C_r`.
pub fn frechet_distance(
    mu_g: &DVector<f64>,
    cov_g: &DMatrix<f64>,
    mu_r: &DVector<f64>,
    cov_r: &DMatrix<f64>,
) -> Result<f64> {
    check_symmetric("generated covariance", cov_g)?;
    check_symmetric("reference covariance", cov_r)?;
    let d = mu_g.len();
    if mu_r.len() != d || cov_g.nrows() != d || cov_r.nrows() != d {
        return Err(HarnessError::Config("mean and covariance dimensions differ".into()));
    }
    let s = psd_sqrt(cov_g);
    let inner = &s * cov_r * &s;
    let cross = psd_sqrt(&inner).trace();
    let dist = (mu_g - mu_r).norm_squared() + cov_g.trace() + cov_r.trace() - 2.0 * cross;
    Ok(dist.max(0.0))
}

pub fn frechet_between(a: &Gaussian, b: &Gaussian) -> Result<f64> {
    frechet_distance(&a.mean, &a.cov, &b.mean, &b.cov)
}

/// Inception score of conditional label distributions, split into `splits`
/// contiguous groups: per group `exp(mean_x KL(p(y|x) | p(y)))` with `p(y)`
/// the group marginal. Returns the mean and standard deviation over groups.
pub fn inception_score(probs: &[Vec<f64>], splits: usize) -> Result<(f64, f64)> {
    if splits == 0 || probs.len() < splits {
        return Err(HarnessError::Config(format!(
            "{} rows cannot form {splits} splits",
            probs.len()
        )));
    }
    let k = probs[0].len();
    for (i, row) in probs.iter().enumerate() {
        let sum: f64 = row.iter().sum();
        if row.len() != k || row.iter().any(|&p| !(p >= 0.0)) || (sum - 1.0).abs() > 1e-6 {
            return Err(HarnessError::Config(format!("row {i} is not a probability vector")));
        }
    }
    let n = probs.len();
    let scores: Vec<f64> = (0..splits)
        .map(|s| {
            let part = &probs[s * n / splits..(s + 1) * n / splits];
            let m = part.len() as f64;
            let marginal: Vec<f64> = (0..k).map(|j| part.iter().map(|r| r[j]).sum::<f64>() / m).collect();
            let kl: f64 = part
                .iter()
                .map(|r| {
                    r.iter()
                        .zip(&marginal)
                        .filter(|(p, _)| **p > 0.0)
                        .map(|(p, q)| p * (p / q).ln())
                        .sum::<f64>()
                })
                .sum::<f64>()
                / m;
            kl.exp()
        })
        .collect();
    let mean = scores.iter().sum::<f64>() / splits as f64;
    let var = scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / splits as f64;
    Ok((mean, var.sqrt()))
}

/// Deterministic map from an image batch `[1, B, 4, H, W]` to one feature
/// vector per image.
pub trait FeatureExtractor {
    fn name(&self) -> &str;
    fn features(&self, batch: &Tensor<f32>) -> Result<Vec<Vec<f64>>>;
}

fn batch_dims(batch: &Tensor<f32>) -> Result<(usize, usize, usize)> {
    match batch.shape() {
        [1, b, 4, h, w] => Ok((*b, *h, *w)),
        s => Err(HarnessError::Config(format!(
            "expected an image batch [1, B, 4, H, W], got {s:?}"
        ))),
    }
}

/// RGB planes average-pooled to `size x size`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DownsampledPixels {
    pub size: usize,
}

impl FeatureExtractor for DownsampledPixels {
    fn name(&self) -> &str {
        "pixels"
    }

    fn features(&self, batch: &Tensor<f32>) -> Result<Vec<Vec<f64>>> {
        let (b, h, w) = batch_dims(batch)?;
        let s = self.size;
        if s == 0 || h % s != 0 || w % s != 0 {
            return Err(HarnessError::Config(format!("cannot pool {h}x{w} images to {s}x{s}")));
        }
        let (fh, fw) = (h / s, w / s);
        let norm = 1.0 / (fh * fw) as f64;
        Ok((0..b)
            .map(|i| {
                let img = &batch.data()[i * 4 * h * w..][..4 * h * w];
                let mut f = vec![0.0; 3 * s * s];
                for c in 0..3 {
                    let plane = &img[(c + 1) * h * w..][..h * w];
                    for y in 0..h {
                        for x in 0..w {
                            f[(c * s + y / fh) * s + x / fw] += plane[y * w + x] as f64 * norm;
                        }
                    }
                }
                f
            })
            .collect())
    }
}

/// Fixed Gaussian projection of the RGB pixels to `dim` features, followed
/// by `tanh`; the matrix is drawn from `seed`.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomProjection {
    pub dim: usize,
    pub seed: u64,
}

impl FeatureExtractor for RandomProjection {
    fn name(&self) -> &str {
        "projection"
    }

    fn features(&self, batch: &Tensor<f32>) -> Result<Vec<Vec<f64>>> {
        let (b, h, w) = batch_dims(batch)?;
        let n = 3 * h * w;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let scale = 1.0 / (n as f64).sqrt();
        let m: Vec<f64> = (0..self.dim * n).map(|_| StandardNormal.sample(&mut rng)).collect();
        Ok((0..b)
            .map(|i| {
                let px = &batch.data()[i * 4 * h * w + h * w..][..n];
                m.chunks(n)
                    .map(|row| (row.iter().zip(px).map(|(a, &p)| a * p as f64).sum::<f64>() * scale).tanh())
                    .collect()
            })
            .collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtractorKind {
    /// RGB planes pooled to 4x4 (48 features).
    Pixels,
    /// 32 random projections with a fixed seed.
    Projection,
}

impl ExtractorKind {
    pub fn build(self) -> Box<dyn FeatureExtractor> {
        match self {
            ExtractorKind::Pixels => Box::new(DownsampledPixels { size: 4 }),
            ExtractorKind::Projection => Box::new(RandomProjection { dim: 32, seed: 0x51ed }),
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "pixels" => Ok(ExtractorKind::Pixels),
            "projection" => Ok(ExtractorKind::Projection),
            _ => Err(HarnessError::Config(format!(
                "unknown extractor `{name}` (pixels, projection)"
            ))),
        }
    }
}

/// Fréchet distance between the feature Gaussians of two image batches.
pub fn batch_frechet(ex: &dyn FeatureExtractor, generated: &Tensor<f32>, reference: &Tensor<f32>) -> Result<f64> {
    frechet_between(
        &fit_gaussian(&ex.features(generated)?)?,
        &fit_gaussian(&ex.features(reference)?)?,
    )
}
