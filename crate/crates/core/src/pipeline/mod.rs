//! Stream runtime: manifest ingestion, per-frame orchestration (keyframe
//! update or restoration), reports, policy simulation and training-pair
//! enumeration.

mod composite;
mod config;
mod manifest;
mod pairing;
mod runner;

pub use composite::paste_back;
pub use config::{ExtractorChoice, PipelineConfig};
pub use manifest::{load_manifest, parse_manifest, FrameRecord};
pub use pairing::{pair_indices, pair_training_frames};
pub use runner::{
    crop_with, load_template, run_stream, run_with, simulate_policy, FrameOutcome, FrameReport, FrameStatus, FrameTiming,
    Pipeline, Reference, RunReport, RunSummary,
};
