use std::fs;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::discriminator::MultiScaleDiscriminator;
use crate::fusion::extractor::{test_extractor, ConvExtractor, FeatureExtractor};
use crate::fusion::network::FusionNet;
use crate::fusion::weights::WeightStore;
use crate::geometry::{
    align_face, align_landmarks, mls_build_field, render_landmark_mask, warp_image, DeformationField, LandmarkSet,
    Point2, SimilarityTransform,
};
use crate::image::ImageBuffer;
use crate::keyframe_store::{InsertReport, KeyframeStore, PolicyTrace};
use crate::losses::{evaluate_parts, total_loss, LossBreakdown};
use crate::metrics::{psnr, psnr_serde, ssim, ExternalMetrics};

use super::composite::paste_back;
use super::config::{ExtractorChoice, PipelineConfig};
use super::manifest::FrameRecord;

/// Stored keyframe payload: the aligned crop and where it came from.
#[derive(Clone, Debug)]
pub struct Reference {
    pub image: ImageBuffer,
    pub frame_index: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameStatus {
    Restored,
    Passthrough,
}

/// Report line for one non-keyframe frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameReport {
    pub frame_index: u64,
    pub status: FrameStatus,
    pub reason: Option<String>,
    pub reference_arrival: Option<u64>,
    pub reference_frame: Option<u64>,
    pub landmark_distance: Option<f64>,
    #[serde(with = "psnr_serde::option")]
    pub psnr: Option<f64>,
    pub ssim: Option<f64>,
    /// Aligned degraded input against aligned ground truth.
    #[serde(with = "psnr_serde::option")]
    pub baseline_psnr: Option<f64>,
    pub baseline_ssim: Option<f64>,
    #[serde(flatten)]
    pub external: ExternalMetrics,
    pub losses: Option<LossBreakdown>,
}

impl FrameReport {
    fn passthrough(frame_index: u64, reason: String) -> Self {
        Self {
            frame_index,
            status: FrameStatus::Passthrough,
            reason: Some(reason),
            reference_arrival: None,
            reference_frame: None,
            landmark_distance: None,
            psnr: None,
            ssim: None,
            baseline_psnr: None,
            baseline_ssim: None,
            external: ExternalMetrics::default(),
            losses: None,
        }
    }
}

/// Everything produced for one frame.
#[derive(Clone, Debug)]
pub struct FrameOutcome {
    pub frame_index: u64,
    /// `None` for keyframes.
    pub report: Option<FrameReport>,
    pub insert: Option<InsertReport>,
    pub aligned_input: Option<ImageBuffer>,
    pub restored_crop: Option<ImageBuffer>,
    /// Full frame after paste-back (or the input when nothing was restored).
    pub output_frame: ImageBuffer,
    pub elapsed_ms: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub frames: usize,
    pub keyframes: usize,
    pub keyframes_added: usize,
    pub evictions: usize,
    pub restored: usize,
    pub passthrough: usize,
    pub store_size: usize,
    #[serde(with = "psnr_serde::option")]
    pub mean_psnr: Option<f64>,
    pub mean_ssim: Option<f64>,
    #[serde(with = "psnr_serde::option")]
    pub mean_baseline_psnr: Option<f64>,
    pub mean_baseline_ssim: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameTiming {
    pub frame_index: u64,
    pub millis: f64,
}

#[derive(Clone, Debug)]
pub struct RunReport {
    pub records: Vec<FrameReport>,
    pub summary: RunSummary,
    pub trace: PolicyTrace,
    pub timings: Vec<FrameTiming>,
}

impl RunReport {
    pub fn records_jsonl(&self) -> String {
        jsonl(&self.records)
    }

    pub fn timings_jsonl(&self) -> String {
        jsonl(&self.timings)
    }
}

fn jsonl<T: Serialize>(items: &[T]) -> String {
    items.iter().map(|r| serde_json::to_string(r).expect("report serializes") + "\n").collect()
}

fn mean_of(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Resamples `img` into a `size` x `size` crop through `to_crop`.
pub fn crop_with(img: &ImageBuffer, to_crop: &SimilarityTransform, size: usize) -> Result<ImageBuffer> {
    let inv = to_crop.inverse();
    warp_image(img, &DeformationField::from_fn(size, size, |x, y| inv.apply(Point2::new(x as f64, y as f64))))
}

/// Loads the landmark template for a config, scaled to the crop size.
pub fn load_template(config: &PipelineConfig) -> Result<LandmarkSet> {
    match &config.template {
        None => Ok(LandmarkSet::canonical_template(config.crop_size)),
        Some(p) => {
            let s = config.crop_size as f64 / 512.0;
            LandmarkSet::load(p)?.map(|q| q * s)
        }
    }
}

fn landmark_problem(e: &Error) -> bool {
    matches!(e, Error::Parse { .. } | Error::InvalidLandmarks(_) | Error::DegenerateLandmarks(_) | Error::LengthMismatch { .. })
}

/// Stateful per-stream runtime: keyframe store plus restoration network.
pub struct Pipeline {
    config: PipelineConfig,
    template: LandmarkSet,
    store: KeyframeStore<Reference>,
    extractor: Box<dyn FeatureExtractor>,
    net: FusionNet,
    disc: Option<MultiScaleDiscriminator>,
}

impl Pipeline {
    /// Loads weights from `config.weights`, or seeds them from
    /// `config.weights_seed` when no file is given.
    pub fn new(config: PipelineConfig) -> Result<Self> {
        let weights = match &config.weights {
            Some(p) => WeightStore::load(p)?,
            None => {
                let channels = match config.extractor {
                    ExtractorChoice::Test => test_extractor(config.extractor_seed).channels(),
                    ExtractorChoice::File => {
                        return Err(Error::InvalidConfig("extractor = \"file\" needs a weights file".into()))
                    }
                };
                FusionNet::init_weights(channels, config.weights_seed)
            }
        };
        Self::with_weights(config, &weights)
    }

    pub fn with_weights(config: PipelineConfig, weights: &WeightStore) -> Result<Self> {
        config.validate()?;
        let extractor: Box<dyn FeatureExtractor> = match config.extractor {
            ExtractorChoice::Test => Box::new(test_extractor(config.extractor_seed)),
            ExtractorChoice::File => Box::new(ConvExtractor::from_weights(weights)?),
        };
        let net = FusionNet::from_weights(weights, extractor.channels())?;
        let disc = if config.report_losses { Some(MultiScaleDiscriminator::load(weights)?) } else { None };
        Ok(Self {
            template: load_template(&config)?,
            store: KeyframeStore::new(config.policy, config.max_cardinality)?,
            config,
            extractor,
            net,
            disc,
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn store(&self) -> &KeyframeStore<Reference> {
        &self.store
    }

    pub fn template(&self) -> &LandmarkSet {
        &self.template
    }

    pub fn process_frame(&mut self, rec: &FrameRecord) -> Result<FrameOutcome> {
        let start = Instant::now();
        let frame = ImageBuffer::load(&rec.image_path)?;
        let mut out = FrameOutcome {
            frame_index: rec.frame_index,
            report: None,
            insert: None,
            aligned_input: None,
            restored_crop: None,
            output_frame: frame.clone(),
            elapsed_ms: 0.0,
        };
        let aligned = LandmarkSet::load(&rec.landmarks_path).and_then(|l| align_face(&frame, &l, &self.template, self.config.crop_size));
        let aligned = match aligned {
            Ok(a) => a,
            Err(e) if landmark_problem(&e) => {
                log::warn!("frame {}: landmarks rejected: {e}", rec.frame_index);
                if !rec.is_keyframe {
                    out.report = Some(FrameReport::passthrough(rec.frame_index, format!("invalid_landmarks: {e}")));
                }
                out.elapsed_ms = start.elapsed().as_secs_f64() * 1e3;
                return Ok(out);
            }
            Err(e) => return Err(e),
        };

        if rec.is_keyframe {
            let reference = Reference { image: aligned.image.clone(), frame_index: rec.frame_index };
            out.insert = Some(self.store.insert(reference, aligned.landmarks, rec.frame_index));
            out.aligned_input = Some(aligned.image);
            out.elapsed_ms = start.elapsed().as_secs_f64() * 1e3;
            return Ok(out);
        }

        let size = self.config.crop_size;
        let (ref_image, ref_lms, reference_arrival, reference_frame, distance) =
            match self.store.select(&aligned.landmarks, rec.frame_index) {
                Ok(sel) => (
                    sel.entry.payload.image.clone(),
                    sel.entry.landmarks.clone(),
                    sel.entry.arrival_index,
                    sel.entry.payload.frame_index,
                    sel.distance,
                ),
                Err(Error::EmptyStore) => {
                    log::warn!("frame {}: no keyframe available yet", rec.frame_index);
                    out.report = Some(FrameReport::passthrough(rec.frame_index, "empty_store".into()));
                    out.aligned_input = Some(aligned.image);
                    out.elapsed_ms = start.elapsed().as_secs_f64() * 1e3;
                    return Ok(out);
                }
                Err(e) => return Err(e),
            };
        let field = mls_build_field(&ref_lms, &aligned.landmarks, size, size, self.config.grid_step)?;
        let warped = warp_image(&ref_image, &field)?;
        let mask = render_landmark_mask(&aligned.landmarks, size, size, self.config.landmark_radius);
        let restored = self.net.forward(&aligned.image, &warped, &mask, self.extractor.as_ref())?;

        let mut report = FrameReport {
            frame_index: rec.frame_index,
            status: FrameStatus::Restored,
            reason: None,
            reference_arrival: Some(reference_arrival),
            reference_frame: Some(reference_frame),
            landmark_distance: Some(distance),
            psnr: None,
            ssim: None,
            baseline_psnr: None,
            baseline_ssim: None,
            external: ExternalMetrics::default(),
            losses: None,
        };
        if let Some(gt_path) = &rec.gt_path {
            let gt = crop_with(&ImageBuffer::load(gt_path)?.to_rgb(), &aligned.transform, size)?;
            let input = aligned.image.to_rgb();
            report.psnr = Some(psnr(&restored, &gt, 1.0)?);
            report.ssim = Some(ssim(&restored, &gt)?);
            report.baseline_psnr = Some(psnr(&input, &gt, 1.0)?);
            report.baseline_ssim = Some(ssim(&input, &gt)?);
            if let Some(disc) = &self.disc {
                let parts = evaluate_parts(&restored, &gt, self.extractor.as_ref(), disc)?;
                report.losses = Some(total_loss(&parts, &self.config.loss_weights)?);
            }
        }
        if self.config.paste_back {
            out.output_frame = paste_back(&frame, &restored, &aligned.transform, self.config.feather)?;
        }
        out.report = Some(report);
        out.aligned_input = Some(aligned.image);
        out.restored_crop = Some(restored);
        out.elapsed_ms = start.elapsed().as_secs_f64() * 1e3;
        Ok(out)
    }
}

/// Processes a stream in order. When `out_dir` is given, writes
/// `{frame:06}.png` (full frame), `{frame:06}_crop.png` (restored crop),
/// `report.jsonl`, `summary.json`, `trace.jsonl` and `timings.jsonl`.
pub fn run_stream(records: &[FrameRecord], config: &PipelineConfig, out_dir: Option<&Path>) -> Result<RunReport> {
    run_with(Pipeline::new(config.clone())?, records, out_dir, |_| {})
}

/// [`run_stream`] with a prepared pipeline and a per-frame callback.
pub fn run_with(
    mut pipeline: Pipeline,
    records: &[FrameRecord],
    out_dir: Option<&Path>,
    mut on_frame: impl FnMut(&FrameOutcome),
) -> Result<RunReport> {
    if let Some(d) = out_dir {
        fs::create_dir_all(d)?;
    }
    let mut summary = RunSummary::default();
    let mut reports = Vec::new();
    let mut timings = Vec::new();
    for rec in records {
        let outcome = pipeline.process_frame(rec)?;
        debug_assert!(pipeline.store().len() <= pipeline.config().max_cardinality);
        summary.frames += 1;
        if rec.is_keyframe {
            summary.keyframes += 1;
        }
        if let Some(ins) = outcome.insert {
            summary.keyframes_added += usize::from(ins.added);
            summary.evictions += usize::from(ins.evicted.is_some());
        }
        if let Some(r) = &outcome.report {
            match r.status {
                FrameStatus::Restored => summary.restored += 1,
                FrameStatus::Passthrough => summary.passthrough += 1,
            }
            reports.push(r.clone());
        }
        if let Some(d) = out_dir {
            let idx = rec.frame_index;
            outcome.output_frame.save_png(d.join(format!("{idx:06}.png")))?;
            if let Some(c) = &outcome.restored_crop {
                c.save_png(d.join(format!("{idx:06}_crop.png")))?;
            }
        }
        timings.push(FrameTiming { frame_index: rec.frame_index, millis: outcome.elapsed_ms });
        on_frame(&outcome);
    }
    summary.store_size = pipeline.store().len();
    summary.mean_psnr = mean_of(reports.iter().map(|r| r.psnr));
    summary.mean_ssim = mean_of(reports.iter().map(|r| r.ssim));
    summary.mean_baseline_psnr = mean_of(reports.iter().map(|r| r.baseline_psnr));
    summary.mean_baseline_ssim = mean_of(reports.iter().map(|r| r.baseline_ssim));
    let report = RunReport { records: reports, summary, trace: pipeline.store().export_trace(), timings };
    if let Some(d) = out_dir {
        fs::write(d.join("report.jsonl"), report.records_jsonl())?;
        fs::write(d.join("summary.json"), serde_json::to_string_pretty(&report.summary)? + "\n")?;
        fs::write(d.join("trace.jsonl"), report.trace.to_jsonl())?;
        fs::write(d.join("timings.jsonl"), report.timings_jsonl())?;
    }
    Ok(report)
}

/// Runs only the keyframe-store logic over the stream's landmarks.
/// Frames with unusable landmarks and selections before the first
/// keyframe are skipped.
pub fn simulate_policy(records: &[FrameRecord], config: &PipelineConfig) -> Result<PolicyTrace> {
    let template = load_template(config)?;
    let mut store: KeyframeStore<()> = KeyframeStore::new(config.policy, config.max_cardinality)?;
    for rec in records {
        let aligned = match LandmarkSet::load(&rec.landmarks_path).and_then(|l| align_landmarks(&l, &template)) {
            Ok((a, _)) => a,
            Err(e) if matches!(e, Error::InvalidLandmarks(_) | Error::DegenerateLandmarks(_)) => {
                log::warn!("frame {}: landmarks rejected: {e}", rec.frame_index);
                continue;
            }
            Err(e) => return Err(e),
        };
        if rec.is_keyframe {
            store.insert((), aligned, rec.frame_index);
        } else {
            match store.select(&aligned, rec.frame_index) {
                Ok(_) | Err(Error::EmptyStore) => {}
                Err(e) => return Err(e),
            }
        }
    }
    Ok(store.export_trace())
}
