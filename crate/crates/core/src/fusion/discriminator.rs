//! Patch discriminators with spectrally normalized weights, one per image
//! scale. Used to score images for the adversarial loss terms; there is no
//! training here.

use rand::Rng;

use crate::error::{Error, Result};
use crate::fusion::blocks::{spectral_normalize, LEAKY_SLOPE};
use crate::fusion::tensor::{conv2d, ConvKernel, ConvParams, FeatureMap};
use crate::fusion::weights::WeightStore;
use crate::image::ImageBuffer;

pub const DISCRIMINATOR_SCALES: [usize; 4] = [1, 2, 4, 8];
pub const DISCRIMINATOR_WIDTHS: [usize; 3] = [16, 32, 1];
pub const SN_POWER_ITERS: usize = 500;

#[derive(Clone, Debug)]
struct SnConv {
    kernel: ConvKernel,
    bias: Vec<f64>,
    stride: usize,
}

/// Three 3x3 convs: two stride-2 layers with leaky ReLU, then a one-channel
/// score map.
#[derive(Clone, Debug)]
pub struct PatchDiscriminator {
    layers: Vec<SnConv>,
    sigmas: Vec<f64>,
}

impl PatchDiscriminator {
    pub fn prefix(scale: usize) -> String {
        format!("disc.scale{scale}")
    }

    pub fn load(weights: &WeightStore, scale: usize) -> Result<Self> {
        let p = Self::prefix(scale);
        let mut layers = Vec::new();
        let mut sigmas = Vec::new();
        let mut in_ch = 3;
        for (i, &out_ch) in DISCRIMINATOR_WIDTHS.iter().enumerate() {
            let name = format!("{p}.conv{i}");
            let (kernel, bias) = weights.conv(&name)?;
            if kernel.in_channels != in_ch || kernel.out_channels != out_ch || kernel.kernel_h != 3 || kernel.kernel_w != 3 {
                return Err(Error::ShapeMismatch(format!(
                    "`{name}` is {}x{}x{}x{}, expected {out_ch}x{in_ch}x3x3",
                    kernel.out_channels, kernel.in_channels, kernel.kernel_h, kernel.kernel_w
                )));
            }
            let (normalized, sigma) = spectral_normalize(&kernel.as_matrix(), SN_POWER_ITERS)?;
            layers.push(SnConv {
                kernel: kernel.with_matrix(&normalized),
                bias,
                stride: if i + 1 < DISCRIMINATOR_WIDTHS.len() { 2 } else { 1 },
            });
            sigmas.push(sigma);
            in_ch = out_ch;
        }
        Ok(Self { layers, sigmas })
    }

    /// Spectral norms of the raw weight matrices, one per layer.
    pub fn sigmas(&self) -> &[f64] {
        &self.sigmas
    }

    pub fn score(&self, image: &ImageBuffer) -> Result<FeatureMap> {
        let mut x = FeatureMap::from_image(&image.to_rgb());
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let params = ConvParams { stride: layer.stride, dilation: 1, padding: 1 };
            x = conv2d(&x, &layer.kernel, Some(&layer.bias), params)?;
            if i < last {
                x = x.leaky_relu(LEAKY_SLOPE);
            }
        }
        Ok(x)
    }
}

/// Four patch discriminators applied to the image average-pooled by
/// 1, 2, 4 and 8.
#[derive(Clone, Debug)]
pub struct MultiScaleDiscriminator {
    scales: Vec<PatchDiscriminator>,
}

impl MultiScaleDiscriminator {
    pub fn load(weights: &WeightStore) -> Result<Self> {
        let scales = DISCRIMINATOR_SCALES.iter().map(|&r| PatchDiscriminator::load(weights, r)).collect::<Result<_>>()?;
        Ok(Self { scales })
    }

    pub fn init_weights(weights: &mut WeightStore, rng: &mut impl Rng) {
        for r in DISCRIMINATOR_SCALES {
            let mut in_ch = 3;
            for (i, &out_ch) in DISCRIMINATOR_WIDTHS.iter().enumerate() {
                let name = format!("{}.conv{i}", PatchDiscriminator::prefix(r));
                weights.insert_random_conv(&name, [out_ch, in_ch, 3, 3], 1.0, 0.0, rng);
                in_ch = out_ch;
            }
        }
    }

    pub fn discriminators(&self) -> &[PatchDiscriminator] {
        &self.scales
    }

    /// Score maps, finest scale first.
    pub fn score(&self, image: &ImageBuffer) -> Result<Vec<FeatureMap>> {
        let base = FeatureMap::from_image(&image.to_rgb());
        DISCRIMINATOR_SCALES
            .iter()
            .zip(&self.scales)
            .map(|(&r, d)| {
                let pooled = base.avg_pool(r)?;
                if pooled.height() == 0 || pooled.width() == 0 {
                    return Err(Error::TooSmall(format!("image too small for scale {r}")));
                }
                d.score(&feature_to_image(&pooled)?)
            })
            .collect()
    }
}

fn feature_to_image(f: &FeatureMap) -> Result<ImageBuffer> {
    let (c, h, w) = f.shape();
    let plane = h * w;
    let data = (0..plane * c).map(|i| f.data()[(i % c) * plane + i / c]).collect();
    ImageBuffer::new(w, h, c, data)
}
