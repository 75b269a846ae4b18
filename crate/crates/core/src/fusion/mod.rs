//! Keyframe-guided fusion network and its building blocks.

pub mod blocks;
pub mod discriminator;
pub mod extractor;
pub mod network;
pub mod tensor;
pub mod weights;

pub use blocks::{adain, asff_fuse, sft_modulate, spectral_normalize, AsffBlock, ConvLayer, SftBlock};
pub use discriminator::{MultiScaleDiscriminator, PatchDiscriminator};
pub use extractor::{test_extractor, ConvExtractor, FeatureExtractor, FeaturePyramid};
pub use network::{restore_forward, FusionNet};
pub use tensor::{conv2d, ConvKernel, ConvParams, FeatureMap, Matrix};
pub use weights::{Tensor, WeightStore};
