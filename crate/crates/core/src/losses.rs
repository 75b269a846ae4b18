//! Training objectives as pure functions: pixel MSE, perceptual and style
//! terms over feature pyramids, and multi-scale hinge adversarial terms.
//!
//! Expectations over score maps are means over every element of the map.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::discriminator::{MultiScaleDiscriminator, DISCRIMINATOR_SCALES};
use crate::fusion::extractor::{FeatureExtractor, FeaturePyramid};
use crate::fusion::tensor::{FeatureMap, Matrix};
use crate::image::ImageBuffer;

pub const SCALE_COUNT: usize = DISCRIMINATOR_SCALES.len();

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub mse: f64,
    pub perceptual: f64,
    pub style: f64,
    pub adversarial: f64,
    /// Per-scale generator weights for downsampling factors 1, 2, 4, 8.
    pub adversarial_scale: [f64; SCALE_COUNT],
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { mse: 300.0, perceptual: 10.0, style: 1.0, adversarial: 2.0, adversarial_scale: [4.0, 2.0, 1.0, 1.0] }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.mse, self.perceptual, self.style, self.adversarial].into_iter().chain(self.adversarial_scale);
        for v in all {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidConfig(format!("loss weight {v} must be finite and non-negative")));
            }
        }
        Ok(())
    }
}

/// Unweighted loss terms. `adversarial_scale[k]` is the generator term
/// `-E[D_r(G(x))]` at the k-th scale.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub mse: f64,
    pub perceptual: f64,
    pub style: f64,
    pub adversarial_scale: [f64; SCALE_COUNT],
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub mse: f64,
    pub perceptual: f64,
    pub style: f64,
    /// Per-scale generator terms, already multiplied by their scale weight.
    pub adversarial_scale: [f64; SCALE_COUNT],
    pub adversarial_g: f64,
    pub total: f64,
}

/// Mean squared error over all samples and its gradient with respect to
/// `restored`, laid out like the image data.
pub fn mse_loss(restored: &ImageBuffer, gt: &ImageBuffer) -> Result<(f64, Vec<f64>)> {
    if !restored.same_shape(gt) {
        return Err(Error::ShapeMismatch(format!(
            "mse of {}x{}x{} against {}x{}x{}",
            restored.width(),
            restored.height(),
            restored.channels(),
            gt.width(),
            gt.height(),
            gt.channels()
        )));
    }
    let n = restored.data().len() as f64;
    let mut loss = 0.0;
    let grad = restored
        .data()
        .iter()
        .zip(gt.data())
        .map(|(&r, &g)| {
            let d = r - g;
            loss += d * d;
            2.0 * d / n
        })
        .collect();
    Ok((loss / n, grad))
}

fn check_pyramids(a: &FeaturePyramid, b: &FeaturePyramid) -> Result<()> {
    for (k, (x, y)) in a.levels().iter().zip(b.levels()).enumerate() {
        if x.shape() != y.shape() {
            return Err(Error::PyramidMismatch(format!("level {k}: {:?} vs {:?}", x.shape(), y.shape())));
        }
    }
    Ok(())
}

fn level_size(f: &FeatureMap) -> f64 {
    let (c, h, w) = f.shape();
    (c * h * w) as f64
}

/// Sum over levels of `||a_l - b_l||^2 / (C_l H_l W_l)`.
pub fn perceptual_loss(restored: &FeaturePyramid, gt: &FeaturePyramid) -> Result<f64> {
    check_pyramids(restored, gt)?;
    Ok(restored
        .levels()
        .iter()
        .zip(gt.levels())
        .map(|(a, b)| {
            let sq: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum();
            sq / level_size(a)
        })
        .sum())
}

/// Channel Gram matrix `G[i][j] = sum_p F_i(p) F_j(p)`.
pub fn gram(f: &FeatureMap) -> Matrix {
    let c = f.channels();
    let mut g = vec![0.0; c * c];
    for i in 0..c {
        let fi = f.channel(i);
        for j in i..c {
            let v: f64 = fi.iter().zip(f.channel(j)).map(|(a, b)| a * b).sum();
            g[i * c + j] = v;
            g[j * c + i] = v;
        }
    }
    Matrix::new(c, c, g).expect("square gram")
}

/// Sum over levels of `||G(a_l) - G(b_l)||_F^2 / (C_l H_l W_l)`.
pub fn style_loss(restored: &FeaturePyramid, gt: &FeaturePyramid) -> Result<f64> {
    check_pyramids(restored, gt)?;
    Ok(restored
        .levels()
        .iter()
        .zip(gt.levels())
        .map(|(a, b)| {
            let (ga, gb) = (gram(a), gram(b));
            let sq: f64 = ga.data().iter().zip(gb.data()).map(|(x, y)| (x - y) * (x - y)).sum();
            sq / level_size(a)
        })
        .sum())
}

fn mean(v: &[f64]) -> Result<f64> {
    if v.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(v.iter().sum::<f64>() / v.len() as f64)
}

fn check_scales<S>(scores: &[S]) -> Result<()> {
    if scores.len() != SCALE_COUNT {
        return Err(Error::ScaleCountMismatch { expected: SCALE_COUNT, got: scores.len() });
    }
    Ok(())
}

fn hinge_d_term(real: &[f64], fake: &[f64]) -> Result<f64> {
    let r = mean(&real.iter().map(|&d| (1.0 - d).max(0.0)).collect::<Vec<_>>())?;
    let f = mean(&fake.iter().map(|&d| (1.0 + d).max(0.0)).collect::<Vec<_>>())?;
    Ok(r + f)
}

/// Discriminator hinge loss summed over the four scales.
pub fn hinge_d_loss<S: AsRef<[f64]>>(real: &[S], fake: &[S]) -> Result<f64> {
    check_scales(real)?;
    check_scales(fake)?;
    real.iter().zip(fake).map(|(r, f)| hinge_d_term(r.as_ref(), f.as_ref())).sum()
}

/// Generator adversarial loss `-sum_r lambda_r E[D_r]`.
pub fn hinge_g_loss<S: AsRef<[f64]>>(fake: &[S], weights: &LossWeights) -> Result<f64> {
    check_scales(fake)?;
    fake.iter().zip(weights.adversarial_scale).map(|(f, w)| Ok(-w * mean(f.as_ref())?)).sum()
}

/// Single-discriminator variant; returns `(d_loss, g_loss)`.
pub fn hinge_single_scale(real: &[f64], fake: &[f64]) -> Result<(f64, f64)> {
    Ok((hinge_d_term(real, fake)?, -mean(fake)?))
}

/// Weighted combination of the loss terms.
pub fn total_loss(parts: &LossParts, weights: &LossWeights) -> Result<LossBreakdown> {
    let scalars = [("mse", parts.mse), ("perceptual", parts.perceptual), ("style", parts.style)];
    for (name, v) in scalars {
        if !v.is_finite() {
            return Err(Error::NonFiniteInput(name));
        }
    }
    if parts.adversarial_scale.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput("adversarial"));
    }
    let adversarial_scale: [f64; SCALE_COUNT] =
        std::array::from_fn(|k| weights.adversarial_scale[k] * parts.adversarial_scale[k]);
    let adversarial_g: f64 = adversarial_scale.iter().sum();
    let total = weights.mse * parts.mse
        + weights.perceptual * parts.perceptual
        + weights.style * parts.style
        + weights.adversarial * adversarial_g;
    Ok(LossBreakdown {
        mse: parts.mse,
        perceptual: parts.perceptual,
        style: parts.style,
        adversarial_scale,
        adversarial_g,
        total,
    })
}

/// Average-pools an image by `factor` (floor sizing).
pub fn downsample(image: &ImageBuffer, factor: usize) -> Result<ImageBuffer> {
    if factor == 0 {
        return Err(Error::InvalidConfig("downsampling factor must be positive".into()));
    }
    let (w, h, c) = (image.width() / factor, image.height() / factor, image.channels());
    if w == 0 || h == 0 {
        return Err(Error::TooSmall(format!("{}x{} by {factor}", image.width(), image.height())));
    }
    let norm = (factor * factor) as f64;
    ImageBuffer::from_clamped(
        w,
        h,
        c,
        (0..w * h * c)
            .map(|i| {
                let (p, ch) = (i / c, i % c);
                let (x, y) = (p % w, p / w);
                let mut s = 0.0;
                for dy in 0..factor {
                    for dx in 0..factor {
                        s += image.get(x * factor + dx, y * factor + dy, ch);
                    }
                }
                s / norm
            })
            .collect(),
    )
}

/// Evaluates every unweighted term for a restored image against its
/// ground truth. Scores come from `disc` applied to the restored image.
pub fn evaluate_parts(
    restored: &ImageBuffer,
    gt: &ImageBuffer,
    extractor: &dyn FeatureExtractor,
    disc: &MultiScaleDiscriminator,
) -> Result<LossParts> {
    let (mse, _) = mse_loss(restored, gt)?;
    let (pr, pg) = (extractor.extract(restored)?, extractor.extract(gt)?);
    let scores = disc.score(restored)?;
    let mut adversarial_scale = [0.0; SCALE_COUNT];
    for (k, s) in scores.iter().enumerate() {
        adversarial_scale[k] = -mean(s.data())?;
    }
    Ok(LossParts { mse, perceptual: perceptual_loss(&pr, &pg)?, style: style_loss(&pr, &pg)?, adversarial_scale })
}
