//! The restoration network: an encoder of dilated residual blocks on the
//! coarsest degraded features, then a coarse-to-fine decoder that aligns,
//! fuses and modulates at every pyramid level before predicting a residual
//! image.
//!
//! Weight names:
//!
//! ```text
//! encoder.res{b}.conv{1,2}                 b = 0..3, dilation 2^b, c3 -> c3
//! decoder.level{l}.asff.conv1              3*c_l -> c_l
//! decoder.level{l}.asff.conv2              c_l -> 1 or c_l
//! decoder.level{l}.sft.{alpha,beta}.conv{1,2}   c_l -> c_l
//! decoder.level{l}.up                      c_l -> c_{l-1}, l = 1..3
//! head.conv1                               c0 -> c0
//! head.conv2                               c0 -> 3 (the residual)
//! ```

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::fusion::blocks::{adain, AsffBlock, ConvLayer, SftBlock, LEAKY_SLOPE};
use crate::fusion::discriminator::MultiScaleDiscriminator;
use crate::fusion::extractor::{FeatureExtractor, FeaturePyramid, PYRAMID_LEVELS};
use crate::fusion::tensor::FeatureMap;
use crate::fusion::weights::{Tensor, WeightStore};
use crate::image::ImageBuffer;

pub const ENCODER_DILATIONS: [usize; 4] = [1, 2, 4, 8];
pub const HEAD_RESIDUAL: &str = "head.conv2";

/// Input sides must be multiples of this.
pub const SIZE_MULTIPLE: usize = 16;

#[derive(Clone, Debug)]
struct ResBlock {
    conv1: ConvLayer,
    conv2: ConvLayer,
}

impl ResBlock {
    fn forward(&self, x: &FeatureMap) -> Result<FeatureMap> {
        let h = self.conv2.forward(&self.conv1.forward(x)?.leaky_relu(LEAKY_SLOPE))?;
        x.zip_map(&h, |a, b| a + b)
    }
}

#[derive(Clone, Debug)]
struct DecoderLevel {
    asff: AsffBlock,
    sft: SftBlock,
    up: Option<ConvLayer>,
}

/// Per-level intermediate maps, kept for inspection and tests.
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    pub encoded: FeatureMap,
    pub aligned_guide: Vec<FeatureMap>,
    pub fused: Vec<FeatureMap>,
    pub modulated: Vec<FeatureMap>,
    pub residual: FeatureMap,
}

#[derive(Clone, Debug)]
pub struct FusionNet {
    channels: [usize; PYRAMID_LEVELS],
    encoder: Vec<ResBlock>,
    levels: Vec<DecoderLevel>,
    head1: ConvLayer,
    head2: ConvLayer,
}

impl FusionNet {
    pub fn from_weights(weights: &WeightStore, channels: [usize; PYRAMID_LEVELS]) -> Result<Self> {
        let c3 = channels[3];
        let encoder = ENCODER_DILATIONS
            .iter()
            .enumerate()
            .map(|(b, &d)| {
                Ok(ResBlock {
                    conv1: ConvLayer::load_checked(weights, &format!("encoder.res{b}.conv1"), d, c3, c3)?,
                    conv2: ConvLayer::load_checked(weights, &format!("encoder.res{b}.conv2"), d, c3, c3)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let levels = (0..PYRAMID_LEVELS)
            .map(|l| {
                let c = channels[l];
                let asff = AsffBlock::load(weights, l)?;
                let (m_in, m_out) = (asff.conv1.in_channels(), asff.conv2.out_channels());
                if m_in != 3 * c || (m_out != 1 && m_out != c) {
                    return Err(Error::ShapeMismatch(format!(
                        "`{}` maps {m_in} -> {m_out} channels for level width {c}",
                        AsffBlock::prefix(l)
                    )));
                }
                let up = if l > 0 {
                    Some(ConvLayer::load_checked(weights, &format!("decoder.level{l}.up"), 1, c, channels[l - 1])?)
                } else {
                    None
                };
                Ok(DecoderLevel { asff, sft: SftBlock::load(weights, l, c)?, up })
            })
            .collect::<Result<Vec<_>>>()?;
        let c0 = channels[0];
        Ok(Self {
            channels,
            encoder,
            levels,
            head1: ConvLayer::load_checked(weights, "head.conv1", 1, c0, c0)?,
            head2: ConvLayer::load_checked(weights, HEAD_RESIDUAL, 1, c0, 3)?,
        })
    }

    pub fn channels(&self) -> [usize; PYRAMID_LEVELS] {
        self.channels
    }

    /// Seeded weights for the generator and the four discriminators.
    pub fn init_weights(channels: [usize; PYRAMID_LEVELS], seed: u64) -> WeightStore {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut w = WeightStore::new();
        let c3 = channels[3];
        for b in 0..ENCODER_DILATIONS.len() {
            w.insert_random_conv(&format!("encoder.res{b}.conv1"), [c3, c3, 3, 3], 1.0, 0.0, &mut rng);
            w.insert_random_conv(&format!("encoder.res{b}.conv2"), [c3, c3, 3, 3], 0.1, 0.0, &mut rng);
        }
        for l in (0..PYRAMID_LEVELS).rev() {
            let c = channels[l];
            let a = AsffBlock::prefix(l);
            w.insert_random_conv(&format!("{a}.conv1"), [c, 3 * c, 3, 3], 1.0, 0.0, &mut rng);
            w.insert_random_conv(&format!("{a}.conv2"), [1, c, 3, 3], 1.0, 0.0, &mut rng);
            let s = SftBlock::prefix(l);
            for (branch, bias) in [("alpha", 1.0), ("beta", 0.0)] {
                w.insert_random_conv(&format!("{s}.{branch}.conv1"), [c, c, 3, 3], 1.0, 0.0, &mut rng);
                w.insert_random_conv(&format!("{s}.{branch}.conv2"), [c, c, 3, 3], 0.1, bias, &mut rng);
            }
            if l > 0 {
                w.insert_random_conv(&format!("decoder.level{l}.up"), [channels[l - 1], c, 3, 3], 1.0, 0.0, &mut rng);
            }
        }
        let c0 = channels[0];
        w.insert_random_conv("head.conv1", [c0, c0, 3, 3], 1.0, 0.0, &mut rng);
        w.insert_random_conv(HEAD_RESIDUAL, [3, c0, 3, 3], 0.1, 0.0, &mut rng);
        MultiScaleDiscriminator::init_weights(&mut w, &mut rng);
        w
    }

    /// Zeroes the weight and bias of the residual-producing head conv.
    pub fn zero_residual(weights: &mut WeightStore) -> Result<()> {
        for suffix in ["weight", "bias"] {
            let name = format!("{HEAD_RESIDUAL}.{suffix}");
            let t = weights.get_mut(&name).ok_or(Error::MissingWeight(name))?;
            *t = Tensor::zeros(t.shape.clone());
        }
        Ok(())
    }

    /// Runs the decoder on pre-extracted pyramids and returns the residual
    /// along with per-level intermediates.
    pub fn forward_features(
        &self,
        degraded: &FeaturePyramid,
        guide: &FeaturePyramid,
        landmarks: &FeaturePyramid,
    ) -> Result<ForwardTrace> {
        for (what, p) in [("degraded", degraded), ("guide", guide), ("landmark", landmarks)] {
            if p.channels() != self.channels {
                return Err(Error::ShapeMismatch(format!(
                    "{what} pyramid has channels {:?}, network expects {:?}",
                    p.channels(),
                    self.channels
                )));
            }
        }
        let mut x = degraded.level(3).clone();
        for block in &self.encoder {
            x = block.forward(&x)?;
        }
        let encoded = x.clone();
        let (mut aligned_guide, mut fused_maps, mut modulated) = (Vec::new(), Vec::new(), Vec::new());
        for l in (0..PYRAMID_LEVELS).rev() {
            let level = &self.levels[l];
            let g_a = adain(guide.level(l), degraded.level(l))?;
            let fused = level.asff.forward(&x, &g_a, landmarks.level(l))?;
            x = level.sft.forward(&x, &fused)?;
            aligned_guide.push(g_a);
            fused_maps.push(fused);
            modulated.push(x.clone());
            if let Some(up) = &level.up {
                x = up.forward(&x.upsample2())?.leaky_relu(LEAKY_SLOPE);
            }
        }
        let h = self.head1.forward(&x.upsample2())?.leaky_relu(LEAKY_SLOPE);
        let residual = self.head2.forward(&h)?;
        Ok(ForwardTrace { encoded, aligned_guide, fused: fused_maps, modulated, residual })
    }

    /// Restores `degraded` guided by the warped reference and the landmark
    /// mask. Output is `clamp(degraded + residual, 0, 1)`.
    pub fn forward(
        &self,
        degraded: &ImageBuffer,
        warped_ref: &ImageBuffer,
        landmark_mask: &ImageBuffer,
        extractor: &dyn FeatureExtractor,
    ) -> Result<ImageBuffer> {
        Ok(self.forward_traced(degraded, warped_ref, landmark_mask, extractor)?.0)
    }

    pub fn forward_traced(
        &self,
        degraded: &ImageBuffer,
        warped_ref: &ImageBuffer,
        landmark_mask: &ImageBuffer,
        extractor: &dyn FeatureExtractor,
    ) -> Result<(ImageBuffer, ForwardTrace)> {
        let (w, h) = (degraded.width(), degraded.height());
        for (what, img) in [("warped reference", warped_ref), ("landmark mask", landmark_mask)] {
            if img.width() != w || img.height() != h {
                return Err(Error::ShapeMismatch(format!(
                    "{what} is {}x{}, degraded is {w}x{h}",
                    img.width(),
                    img.height()
                )));
            }
        }
        if w % SIZE_MULTIPLE != 0 || h % SIZE_MULTIPLE != 0 || w == 0 || h == 0 {
            return Err(Error::ShapeMismatch(format!("input {w}x{h} is not a multiple of {SIZE_MULTIPLE}")));
        }
        let deg = degraded.to_rgb();
        let (pd, (pg, pm)) = rayon::join(
            || extractor.extract(&deg),
            || rayon::join(|| extractor.extract(warped_ref), || extractor.extract(&landmark_mask.to_rgb())),
        );
        let (pg, pm) = (pg?, pm?);
        let trace = self.forward_features(&pd?, &pg, &pm)?;
        let data = deg.data().to_vec();
        let plane = w * h;
        let residual = trace.residual.data();
        let out: Vec<f64> = data
            .iter()
            .enumerate()
            .map(|(i, &d)| {
                // Image is interleaved HWC, residual is CHW.
                let (p, c) = (i / 3, i % 3);
                d + residual[c * plane + p]
            })
            .collect();
        Ok((ImageBuffer::from_clamped(w, h, 3, out)?, trace))
    }
}

/// One-shot restoration: builds the network from `weights` with the
/// extractor's channel counts and runs it.
pub fn restore_forward(
    degraded: &ImageBuffer,
    warped_ref: &ImageBuffer,
    landmark_mask: &ImageBuffer,
    extractor: &dyn FeatureExtractor,
    weights: &WeightStore,
) -> Result<ImageBuffer> {
    FusionNet::from_weights(weights, extractor.channels())?.forward(degraded, warped_ref, landmark_mask, extractor)
}
