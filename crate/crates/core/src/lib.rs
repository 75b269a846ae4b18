//! Keyframe-guided face restoration for compressed video streams.
//!
//! The engine keeps a bounded set of high-quality keyframes (I-frames),
//! picks the one whose facial landmarks best match each degraded frame,
//! warps it onto the degraded face with affine moving least squares, and
//! runs a multi-scale fusion network (AdaIN, attention-masked fusion and
//! spatial feature transform) that predicts a residual correction.

pub mod error;
pub mod fusion;
pub mod geometry;
pub mod image;
pub mod keyframe_store;
pub mod losses;
pub mod metrics;
pub mod pipeline;
pub mod synth;

pub use error::{Error, Result};
pub use geometry::{
    align_face, align_landmarks, landmark_distance, mls_build_field, mls_deform_point, render_landmark_mask, warp_image,
    AlignedFace, DeformationField, LandmarkSet, Point2, SimilarityTransform, LANDMARK_COUNT,
};
pub use fusion::{restore_forward, test_extractor, FeatureExtractor, FeatureMap, FeaturePyramid, FusionNet, WeightStore};
pub use image::ImageBuffer;
pub use keyframe_store::{KeyframeStore, Policy, PolicyTrace};
pub use losses::{LossBreakdown, LossParts, LossWeights};
pub use metrics::{psnr, ssim, MetricReport};
pub use pipeline::{load_manifest, run_stream, simulate_policy, FrameRecord, Pipeline, PipelineConfig, RunReport};
