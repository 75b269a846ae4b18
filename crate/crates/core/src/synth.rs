//! Deterministic synthetic faces and frame streams for tests, benches and
//! demos. Faces are drawn from the canonical landmark template under a
//! similarity pose plus a few expression controls, rendered as smooth
//! shaded images, and degraded with blur, block averaging and noise.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::Result;
use crate::geometry::{LandmarkSet, Point2};
use crate::image::ImageBuffer;

const JAW: std::ops::RangeInclusive<usize> = 0..=16;
const CHIN: std::ops::RangeInclusive<usize> = 5..=11;
const BROWS: std::ops::RangeInclusive<usize> = 17..=26;
const LOWER_LIP: [usize; 8] = [55, 56, 57, 58, 59, 65, 66, 67];

/// Pose and expression of a synthetic face. Expression controls act in the
/// unit-size canonical frame before the pose is applied.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FaceParams {
    pub center: Point2,
    /// Side of the canonical frame in pixels.
    pub scale: f64,
    /// Radians.
    pub rotation: f64,
    /// Lowers the lower lip and chin; 1.0 is wide open.
    pub mouth_open: f64,
    /// Raises (positive) or lowers (negative) the brows.
    pub brow_raise: f64,
    /// Narrows the face horizontally; 1.0 removes 20% of the width.
    pub squash: f64,
}

impl FaceParams {
    pub fn neutral(center: Point2, scale: f64) -> Self {
        Self { center, scale, rotation: 0.0, mouth_open: 0.0, brow_raise: 0.0, squash: 0.0 }
    }
}

/// Landmarks of a synthetic face.
pub fn face_landmarks(p: &FaceParams) -> LandmarkSet {
    let unit = LandmarkSet::canonical_template(1);
    let c = unit.iter().fold(Point2::default(), |a, &q| a + q) * (1.0 / unit.len() as f64);
    let (sin, cos) = p.rotation.sin_cos();
    let points = unit
        .iter()
        .enumerate()
        .map(|(i, &q)| {
            let mut d = q - c;
            if LOWER_LIP.contains(&i) {
                d.y += 0.08 * p.mouth_open;
            }
            if CHIN.contains(&i) {
                d.y += 0.04 * p.mouth_open;
            }
            if BROWS.contains(&i) {
                d.y -= 0.04 * p.brow_raise;
            }
            d.x *= 1.0 - 0.2 * p.squash;
            let r = Point2::new(cos * d.x - sin * d.y, sin * d.x + cos * d.y);
            p.center + r * p.scale
        })
        .collect();
    LandmarkSet::new(points).expect("synthetic landmarks are finite")
}

fn smoothstep(e0: f64, e1: f64, x: f64) -> f64 {
    let t = ((x - e0) / (e1 - e0)).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

/// Renders a shaded face for `lms` on a gradient background. `tone`
/// shifts the skin brightness so different identities are distinguishable.
pub fn render_face(lms: &LandmarkSet, width: usize, height: usize, tone: f64) -> ImageBuffer {
    let n = lms.len() as f64;
    let center = lms.iter().fold(Point2::default(), |a, &q| a + q) * (1.0 / n);
    let jaw: Vec<Point2> = lms[JAW].to_vec();
    let span = jaw.iter().map(|&q| (q - center).norm()).fold(0.0, f64::max).max(1.0);
    // Face outline radius per direction, from the nearest-angle jaw point
    // mirrored upward for the forehead.
    let radius_at = |dir: Point2| -> f64 {
        let ang = dir.y.atan2(dir.x);
        let mut best = (f64::MAX, span);
        for &q in &jaw {
            let d = q - center;
            let r = d.norm();
            for a in [d.y.atan2(d.x), (-d.y).atan2(d.x)] {
                let diff = (a - ang).sin().abs() + (1.0 - (a - ang).cos());
                if diff < best.0 {
                    best = (diff, r);
                }
            }
        }
        best.1
    };
    let sigma = span * 0.045;
    let inv2s2 = 1.0 / (2.0 * sigma * sigma);
    let features: Vec<(Point2, f64)> =
        lms.iter().enumerate().filter(|(i, _)| *i > 16).map(|(i, &q)| (q, if i >= 48 { 0.55 } else { 0.45 })).collect();
    let skin = [0.86 * tone, 0.66 * tone, 0.55 * tone];
    let rows: Vec<Vec<f64>> = (0..height)
        .into_par_iter()
        .map(|y| {
            let mut row = Vec::with_capacity(width * 3);
            for x in 0..width {
                let p = Point2::new(x as f64, y as f64);
                let d = p - center;
                let r = d.norm();
                let edge = radius_at(d) * 1.02;
                let inside = 1.0 - smoothstep(edge - sigma, edge + sigma, r);
                let shade = 1.0 - 0.25 * (r / span).min(1.5).powi(2);
                let mut dark = 0.0;
                for &(q, s) in &features {
                    let dd = (p - q).norm_sq();
                    if dd < 9.0 * sigma * sigma {
                        dark += s * (-dd * inv2s2).exp();
                    }
                }
                let dark = dark.min(0.85);
                let bg = [
                    0.15 + 0.35 * x as f64 / width as f64,
                    0.25 + 0.2 * y as f64 / height as f64,
                    0.45 - 0.2 * x as f64 / width as f64,
                ];
                let texture = 0.03 * ((d.x * 0.9).sin() * (d.y * 0.7).cos());
                for c in 0..3 {
                    let face = skin[c] * shade * (1.0 - dark) + texture;
                    row.push((inside * face + (1.0 - inside) * bg[c]).clamp(0.0, 1.0));
                }
            }
            row
        })
        .collect();
    ImageBuffer::new(width, height, 3, rows.concat()).expect("rendered samples are clamped")
}

/// Blur, block averaging and seeded noise; `strength` in [0, 1].
pub fn degrade(img: &ImageBuffer, seed: u64, strength: f64) -> ImageBuffer {
    let (w, h, ch) = (img.width(), img.height(), img.channels());
    let blurred: Vec<f64> = (0..w * h * ch)
        .map(|i| {
            let (p, c) = (i / ch, i % ch);
            let (x, y) = ((p % w) as isize, (p / w) as isize);
            let mut s = 0.0;
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let xx = (x + dx).clamp(0, w as isize - 1) as usize;
                    let yy = (y + dy).clamp(0, h as isize - 1) as usize;
                    s += img.get(xx, yy, c);
                }
            }
            s / 9.0
        })
        .collect();
    const B: usize = 4;
    let mut block = vec![0.0; w * h * ch];
    for by in (0..h).step_by(B) {
        for bx in (0..w).step_by(B) {
            for c in 0..ch {
                let (mut s, mut n) = (0.0, 0.0);
                for y in by..(by + B).min(h) {
                    for x in bx..(bx + B).min(w) {
                        s += blurred[(y * w + x) * ch + c];
                        n += 1.0;
                    }
                }
                for y in by..(by + B).min(h) {
                    for x in bx..(bx + B).min(w) {
                        block[(y * w + x) * ch + c] = s / n;
                    }
                }
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mix = 0.6 * strength;
    let amp = 0.04 * strength;
    let data = blurred
        .iter()
        .zip(&block)
        .map(|(&b, &q)| (1.0 - mix) * b + mix * q + if amp > 0.0 { rng.random_range(-amp..amp) } else { 0.0 })
        .collect();
    ImageBuffer::from_clamped(w, h, ch, data).expect("degraded samples are clamped")
}

/// Layout of a generated stream.
#[derive(Clone, Debug)]
pub struct StreamSpec {
    pub frames: usize,
    /// Frame indices flagged as keyframes.
    pub keyframes: Vec<usize>,
    pub width: usize,
    pub height: usize,
    pub seed: u64,
    pub write_gt: bool,
}

impl StreamSpec {
    /// `frames` frames with a keyframe every `every` frames starting at 0.
    pub fn regular(frames: usize, every: usize, width: usize, height: usize, seed: u64) -> Self {
        Self {
            frames,
            keyframes: (0..frames).step_by(every.max(1)).collect(),
            width,
            height,
            seed,
            write_gt: true,
        }
    }
}

/// Smoothly varying pose and expression for frame `i`.
pub fn stream_params(i: usize, width: usize, height: usize, seed: u64) -> FaceParams {
    let t = i as f64;
    let phase = (seed % 97) as f64 * 0.37;
    let side = width.min(height) as f64;
    FaceParams {
        center: Point2::new(
            width as f64 / 2.0 + 0.04 * side * (0.21 * t + phase).sin(),
            height as f64 / 2.0 + 0.03 * side * (0.17 * t + phase).cos(),
        ),
        scale: side * (0.62 + 0.03 * (0.13 * t).sin()),
        rotation: 0.08 * (0.19 * t + phase).sin(),
        mouth_open: 0.5 + 0.5 * (0.7 * t + phase).sin(),
        brow_raise: 0.6 * (0.45 * t).cos(),
        squash: 0.3 * (0.31 * t + phase).sin(),
    }
}

#[derive(Serialize)]
struct ManifestLine<'a> {
    frame_index: u64,
    image: &'a str,
    landmarks: &'a str,
    keyframe: bool,
    gt: Option<&'a str>,
}

/// One manifest line in the format read by the pipeline.
pub fn manifest_line(frame_index: u64, image: &str, landmarks: &str, keyframe: bool, gt: Option<&str>) -> String {
    serde_json::to_string(&ManifestLine { frame_index, image, landmarks, keyframe, gt }).expect("manifest line serializes")
}

/// Writes a full stream (frames, ground truth, landmarks, manifest) under
/// `dir` and returns the manifest path. Keyframes are stored clean;
/// other frames are degraded copies.
pub fn write_stream(dir: &Path, spec: &StreamSpec) -> Result<PathBuf> {
    let params: Vec<FaceParams> = (0..spec.frames).map(|i| stream_params(i, spec.width, spec.height, spec.seed)).collect();
    write_stream_with(dir, spec, &params)
}

/// Like [`write_stream`] with explicit per-frame face parameters.
pub fn write_stream_with(dir: &Path, spec: &StreamSpec, params: &[FaceParams]) -> Result<PathBuf> {
    for sub in ["frames", "gt", "landmarks"] {
        fs::create_dir_all(dir.join(sub))?;
    }
    let lines: Vec<String> = params
        .par_iter()
        .enumerate()
        .map(|(i, p)| -> Result<String> {
            let lms = face_landmarks(p);
            let clean = render_face(&lms, spec.width, spec.height, 1.0);
            let key = spec.keyframes.contains(&i);
            let frame = if key { clean.clone() } else { degrade(&clean, spec.seed ^ (i as u64).wrapping_mul(0x9e37), 1.0) };
            let (img, lm, gt) = (format!("frames/{i:06}.png"), format!("landmarks/{i:06}.txt"), format!("gt/{i:06}.png"));
            frame.save_png(dir.join(&img))?;
            lms.save(dir.join(&lm))?;
            let gt = if spec.write_gt && !key {
                clean.save_png(dir.join(&gt))?;
                Some(gt)
            } else {
                None
            };
            Ok(manifest_line(i as u64, &img, &lm, key, gt.as_deref()))
        })
        .collect::<Result<_>>()?;
    let path = dir.join("manifest.jsonl");
    fs::write(&path, lines.join("\n") + "\n")?;
    Ok(path)
}

/// Writes a landmarks-only stream (no images) for policy simulation.
pub fn write_landmark_stream(dir: &Path, frames: &[(LandmarkSet, bool)]) -> Result<PathBuf> {
    fs::create_dir_all(dir.join("landmarks"))?;
    let mut text = String::new();
    for (i, (lms, key)) in frames.iter().enumerate() {
        let lm = format!("landmarks/{i:06}.txt");
        lms.save(dir.join(&lm))?;
        text.push_str(&manifest_line(i as u64, &format!("frames/{i:06}.png"), &lm, *key, None));
        text.push('\n');
    }
    let path = dir.join("manifest.jsonl");
    fs::write(&path, text)?;
    Ok(path)
}

/// Random keyframe/non-keyframe landmark stream for throughput tests.
pub fn random_landmark_stream(n: usize, keyframe_prob: f64, seed: u64) -> Vec<(LandmarkSet, bool)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let p = FaceParams {
                center: Point2::new(256.0 + rng.random_range(-20.0..20.0), 256.0 + rng.random_range(-20.0..20.0)),
                scale: rng.random_range(300.0..380.0),
                rotation: rng.random_range(-0.2..0.2),
                mouth_open: rng.random_range(0.0..1.0),
                brow_raise: rng.random_range(-1.0..1.0),
                squash: rng.random_range(-0.5..0.5),
            };
            (face_landmarks(&p), i == 0 || rng.random_bool(keyframe_prob))
        })
        .collect()
}

/// Frame index of the third keyframe in [`policy_contrast_stream`], where
/// the two policies evict different entries.
pub const POLICY_CONTRAST_EVENT_FRAME: u64 = 10;

/// The LFU hand trace as a stream: keyframe K1 then three frames matching
/// it, keyframe K2 then two frames matching it, then keyframe K3. With
/// capacity 2, K3's arrival evicts K1 (counts 0.75 vs 1).
pub fn hand_trace_stream(center: Point2, scale: f64) -> Vec<(FaceParams, bool)> {
    let k1 = FaceParams::neutral(center, scale);
    let k2 = FaceParams { mouth_open: 1.0, ..k1 };
    let k3 = FaceParams { brow_raise: 1.0, ..k1 };
    vec![(k1, true), (k1, false), (k1, false), (k1, false), (k2, true), (k2, false), (k2, false), (k3, true)]
}

/// A stream separating the two keyframe policies at capacity 2. Keyframe
/// A (neutral) is selected six times, keyframe B (brows down) twice, then
/// keyframe C (brows up) arrives at [`POLICY_CONTRAST_EVENT_FRAME`]. A lies
/// between B and C, so max-distance drops the frequently used A while
/// LFU-with-decay keeps it (1.5 vs 1) and evicts B.
pub fn policy_contrast_stream(center: Point2, scale: f64) -> Vec<(FaceParams, bool)> {
    let a = FaceParams::neutral(center, scale);
    let b = FaceParams { brow_raise: -1.0, ..a };
    let c = FaceParams { brow_raise: 1.0, ..a };
    let mut s = vec![(a, true)];
    s.extend(std::iter::repeat_n((a, false), 6));
    s.push((b, true));
    s.extend(std::iter::repeat_n((b, false), 2));
    s.push((c, true));
    s
}

/// Writes a rendered stream for explicit `(params, is_keyframe)` frames.
pub fn write_param_stream(dir: &Path, frames: &[(FaceParams, bool)], width: usize, height: usize, seed: u64) -> Result<PathBuf> {
    let spec = StreamSpec {
        frames: frames.len(),
        keyframes: frames.iter().enumerate().filter(|(_, f)| f.1).map(|(i, _)| i).collect(),
        width,
        height,
        seed,
        write_gt: true,
    };
    let params: Vec<FaceParams> = frames.iter().map(|f| f.0).collect();
    write_stream_with(dir, &spec, &params)
}
