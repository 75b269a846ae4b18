//! Multi-scale feature extraction.
//!
//! Any extractor returning four levels at downsampling factors 2, 4, 8 and
//! 16 can drive the network. [`ConvExtractor`] is a small conv/pool stack
//! whose weights come from a seed ([`test_extractor`]) or a weight file.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::fusion::blocks::ConvLayer;
use crate::fusion::tensor::FeatureMap;
use crate::fusion::weights::WeightStore;
use crate::image::ImageBuffer;

pub const PYRAMID_LEVELS: usize = 4;
pub const LEVEL_FACTORS: [usize; PYRAMID_LEVELS] = [2, 4, 8, 16];
pub const TEST_CHANNELS: [usize; PYRAMID_LEVELS] = [8, 16, 32, 32];

/// Four feature maps, finest first; each level halves (rounding down) the
/// spatial size of the previous one.
#[derive(Clone, Debug, PartialEq)]
pub struct FeaturePyramid {
    levels: [FeatureMap; PYRAMID_LEVELS],
}

impl FeaturePyramid {
    pub fn new(levels: [FeatureMap; PYRAMID_LEVELS]) -> Result<Self> {
        for k in 1..PYRAMID_LEVELS {
            let (prev, cur) = (&levels[k - 1], &levels[k]);
            if cur.height() != prev.height() / 2 || cur.width() != prev.width() / 2 {
                return Err(Error::PyramidMismatch(format!(
                    "level {k} is {}x{}, expected half of {}x{}",
                    cur.height(),
                    cur.width(),
                    prev.height(),
                    prev.width()
                )));
            }
        }
        Ok(Self { levels })
    }

    /// Checks the finest level against the input image size.
    pub fn for_input(levels: [FeatureMap; PYRAMID_LEVELS], height: usize, width: usize) -> Result<Self> {
        if levels[0].height() != height / 2 || levels[0].width() != width / 2 {
            return Err(Error::PyramidMismatch(format!(
                "finest level is {}x{} for a {height}x{width} input",
                levels[0].height(),
                levels[0].width()
            )));
        }
        Self::new(levels)
    }

    pub fn levels(&self) -> &[FeatureMap; PYRAMID_LEVELS] {
        &self.levels
    }

    pub fn level(&self, k: usize) -> &FeatureMap {
        &self.levels[k]
    }

    pub fn channels(&self) -> [usize; PYRAMID_LEVELS] {
        std::array::from_fn(|k| self.levels[k].channels())
    }

    pub fn map(&self, f: impl Fn(&FeatureMap) -> FeatureMap) -> Result<FeaturePyramid> {
        FeaturePyramid::new(std::array::from_fn(|k| f(&self.levels[k])))
    }
}

/// Deterministic multi-scale feature extractor.
pub trait FeatureExtractor: Send + Sync {
    /// Channel counts of the four levels.
    fn channels(&self) -> [usize; PYRAMID_LEVELS];

    fn extract(&self, image: &ImageBuffer) -> Result<FeaturePyramid>;
}

/// Four stages of 3x3 conv, ReLU and 2x2 average pooling. The last stage
/// skips the ReLU, so the coarsest level is a pre-activation tap.
#[derive(Clone, Debug)]
pub struct ConvExtractor {
    stages: [ConvLayer; PYRAMID_LEVELS],
}

impl ConvExtractor {
    pub fn stage_name(k: usize) -> String {
        format!("extractor.stage{k}")
    }

    /// Loads `extractor.stage{0..3}` from a weight store.
    pub fn from_weights(weights: &WeightStore) -> Result<Self> {
        let mut in_ch = 3;
        let mut stages = Vec::with_capacity(PYRAMID_LEVELS);
        for k in 0..PYRAMID_LEVELS {
            let layer = ConvLayer::load(weights, &Self::stage_name(k), 1)?;
            if layer.in_channels() != in_ch {
                return Err(Error::ShapeMismatch(format!(
                    "`{}` expects {} input channels, previous stage gives {in_ch}",
                    Self::stage_name(k),
                    layer.in_channels()
                )));
            }
            in_ch = layer.out_channels();
            stages.push(layer);
        }
        let stages: [ConvLayer; PYRAMID_LEVELS] = stages.try_into().expect("four stages");
        Ok(Self { stages })
    }

    /// Adds seeded `extractor.stage*` weights with the given channel counts.
    pub fn init_weights(weights: &mut WeightStore, channels: [usize; PYRAMID_LEVELS], seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut in_ch = 3;
        for (k, &c) in channels.iter().enumerate() {
            weights.insert_random_conv(&Self::stage_name(k), [c, in_ch, 3, 3], 2f64.sqrt(), 0.01, &mut rng);
            in_ch = c;
        }
    }

    pub fn seeded(seed: u64, channels: [usize; PYRAMID_LEVELS]) -> Self {
        let mut w = WeightStore::new();
        Self::init_weights(&mut w, channels, seed);
        Self::from_weights(&w).expect("freshly initialized extractor weights are complete")
    }
}

impl FeatureExtractor for ConvExtractor {
    fn channels(&self) -> [usize; PYRAMID_LEVELS] {
        std::array::from_fn(|k| self.stages[k].out_channels())
    }

    fn extract(&self, image: &ImageBuffer) -> Result<FeaturePyramid> {
        if image.width() < 16 || image.height() < 16 {
            return Err(Error::TooSmall(format!(
                "feature extraction needs at least 16x16, got {}x{}",
                image.width(),
                image.height()
            )));
        }
        let mut x = FeatureMap::from_image(&image.to_rgb());
        let mut levels = Vec::with_capacity(PYRAMID_LEVELS);
        for (k, stage) in self.stages.iter().enumerate() {
            let y = stage.forward(&x)?;
            let y = if k + 1 < PYRAMID_LEVELS { y.relu() } else { y };
            x = y.avg_pool(2)?;
            levels.push(x.clone());
        }
        let levels: [FeatureMap; PYRAMID_LEVELS] = levels.try_into().expect("four levels");
        FeaturePyramid::for_input(levels, image.height(), image.width())
    }
}

/// Seeded extractor with channels {8, 16, 32, 32}.
pub fn test_extractor(seed: u64) -> ConvExtractor {
    ConvExtractor::seeded(seed, TEST_CHANNELS)
}
