//! Deterministic fixtures shared by the benchmarks.

use kfr::fusion::extractor::TEST_CHANNELS;
use kfr::keyframe_store::KeyframeStore;
use kfr::synth::{face_landmarks, render_face, FaceParams};
use kfr::{render_landmark_mask, FusionNet, ImageBuffer, LandmarkSet, Point2, Policy, WeightStore};

/// Face landmarks at `size`x`size` with the given expression offsets.
pub fn landmarks(size: usize, mouth_open: f64, brow_raise: f64) -> LandmarkSet {
    let c = size as f64 / 2.0;
    face_landmarks(&FaceParams { mouth_open, brow_raise, ..FaceParams::neutral(Point2::new(c, c), size as f64 * 0.7) })
}

/// A full LFU store holding `count` keyframes with varied expressions.
pub fn populated_store(count: usize) -> KeyframeStore<()> {
    let mut store = KeyframeStore::new(Policy::LfuDecay, count).expect("positive capacity");
    for i in 0..count {
        let t = i as f64 / count as f64;
        store.insert((), landmarks(512, t, 1.0 - 2.0 * t), i as u64);
    }
    store
}

/// Degraded crop, warped reference and landmark mask for one restoration.
pub struct RestoreInputs {
    pub degraded: ImageBuffer,
    pub warped: ImageBuffer,
    pub mask: ImageBuffer,
    pub weights: WeightStore,
}

pub fn restore_inputs(size: usize) -> RestoreInputs {
    let lms = landmarks(size, 0.3, 0.0);
    let warped = render_face(&lms, size, size, 1.0);
    let degraded = kfr::synth::degrade(&warped, 1, 1.0);
    let mask = render_landmark_mask(lms.points(), size, size, 1.0);
    RestoreInputs { degraded, warped, mask, weights: FusionNet::init_weights(TEST_CHANNELS, 0) }
}
