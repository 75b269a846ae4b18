//! Landmark geometry: affine moving-least-squares deformation, similarity
//! face alignment, landmark distances and landmark mask rendering.

use std::fmt::Write as _;
use std::ops::{Add, Deref, Mul, Sub};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::ImageBuffer;

/// Number of points in a facial landmark set (iBUG 68-point layout).
pub const LANDMARK_COUNT: usize = 68;

/// Evaluation points closer than this to a source landmark snap to its target.
pub const SNAP_DISTANCE: f64 = 1e-8;

/// Relative determinant threshold below which a 2x2 covariance is treated as singular.
const SINGULAR_TOLERANCE: f64 = 1e-12;

const TEMPLATE_512: &str = include_str!("../data/template_512.txt");

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn norm_sq(self) -> f64 {
        self.x * self.x + self.y * self.y
    }

    pub fn norm(self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl Add for Point2 {
    type Output = Point2;
    fn add(self, o: Point2) -> Point2 {
        Point2::new(self.x + o.x, self.y + o.y)
    }
}

impl Sub for Point2 {
    type Output = Point2;
    fn sub(self, o: Point2) -> Point2 {
        Point2::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Point2 {
    type Output = Point2;
    fn mul(self, s: f64) -> Point2 {
        Point2::new(self.x * s, self.y * s)
    }
}

/// Exactly 68 finite landmark points in pixel coordinates
/// (origin top-left, x rightward, y downward).
#[derive(Clone, Debug, PartialEq)]
pub struct LandmarkSet {
    points: Vec<Point2>,
}

impl LandmarkSet {
    pub fn new(points: Vec<Point2>) -> Result<Self> {
        if points.len() != LANDMARK_COUNT {
            return Err(Error::LengthMismatch { expected: LANDMARK_COUNT, got: points.len() });
        }
        if let Some(i) = points.iter().position(|p| !p.is_finite()) {
            return Err(Error::InvalidLandmarks(format!("point {i} is not finite")));
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[Point2] {
        &self.points
    }

    pub fn map(&self, f: impl Fn(Point2) -> Point2) -> Result<LandmarkSet> {
        LandmarkSet::new(self.points.iter().map(|&p| f(p)).collect())
    }

    /// Parses the plain-text format: one `x y` pair per line.
    pub fn parse(text: &str) -> Result<Self> {
        let mut points = Vec::with_capacity(LANDMARK_COUNT);
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let mut fields = line.split_whitespace();
            let mut coord = || -> Result<f64> {
                fields
                    .next()
                    .ok_or_else(|| Error::Parse { line: i + 1, message: "expected two coordinates".into() })?
                    .parse::<f64>()
                    .map_err(|e| Error::Parse { line: i + 1, message: e.to_string() })
            };
            let (x, y) = (coord()?, coord()?);
            if fields.next().is_some() {
                return Err(Error::Parse { line: i + 1, message: "trailing fields".into() });
            }
            points.push(Point2::new(x, y));
        }
        Self::new(points)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for p in &self.points {
            let _ = writeln!(out, "{} {}", p.x, p.y);
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    /// Canonical mean face in a 512x512 frame, rescaled to `size`x`size`.
    pub fn canonical_template(size: usize) -> LandmarkSet {
        let base = LandmarkSet::parse(TEMPLATE_512).expect("bundled template is well-formed");
        let s = size as f64 / 512.0;
        base.map(|p| p * s).expect("scaling keeps points finite")
    }
}

impl Deref for LandmarkSet {
    type Target = [Point2];
    fn deref(&self) -> &[Point2] {
        &self.points
    }
}

/// Symmetric 2x2 matrix `[[a, b], [b, c]]`.
#[derive(Clone, Copy, Debug)]
struct Sym2 {
    a: f64,
    b: f64,
    c: f64,
}

impl Sym2 {
    fn det(self) -> f64 {
        self.a * self.c - self.b * self.b
    }

    fn is_singular(self) -> bool {
        let tr = self.a + self.c;
        tr.is_nan() || tr <= 0.0 || self.det() <= SINGULAR_TOLERANCE * tr * tr
    }
}

fn covariance(points: &[Point2], weights: impl Fn(usize) -> f64, center: Point2) -> Sym2 {
    let mut m = Sym2 { a: 0.0, b: 0.0, c: 0.0 };
    for (i, &p) in points.iter().enumerate() {
        let w = weights(i);
        let d = p - center;
        m.a += w * d.x * d.x;
        m.b += w * d.x * d.y;
        m.c += w * d.y * d.y;
    }
    m
}

fn check_collinear(points: &[Point2]) -> Result<()> {
    let n = points.len() as f64;
    let centroid = points.iter().fold(Point2::default(), |acc, &p| acc + p) * (1.0 / n);
    if covariance(points, |_| 1.0, centroid).is_singular() {
        return Err(Error::DegenerateLandmarks("landmarks are collinear or coincident".into()));
    }
    Ok(())
}

fn check_pair(p: &[Point2], q: &[Point2]) -> Result<()> {
    if p.len() != q.len() {
        return Err(Error::LengthMismatch { expected: p.len(), got: q.len() });
    }
    if p.len() < 3 {
        return Err(Error::DegenerateLandmarks(format!("need at least 3 landmarks, got {}", p.len())));
    }
    check_collinear(p)
}

/// Affine moving-least-squares deformation of `v` for control points `p -> q`.
///
/// Weights are `1 / |p_i - v|^2`; the weighted affine fit is evaluated in
/// closed form around the weighted centroids. Points within
/// [`SNAP_DISTANCE`] of a control point map to its target directly.
pub fn mls_deform_point(v: Point2, p: &[Point2], q: &[Point2]) -> Result<Point2> {
    check_pair(p, q)?;
    deform_unchecked(v, p, q)
}

fn deform_unchecked(v: Point2, p: &[Point2], q: &[Point2]) -> Result<Point2> {
    if p == q {
        return Ok(v);
    }
    let mut w_sum = 0.0;
    let mut p_star = Point2::default();
    let mut q_star = Point2::default();
    // Weights are recomputed in the covariance pass rather than stored; N is small.
    for (&pi, &qi) in p.iter().zip(q) {
        let d2 = (pi - v).norm_sq();
        if d2.sqrt() < SNAP_DISTANCE {
            return Ok(qi);
        }
        let w = 1.0 / d2;
        w_sum += w;
        p_star = p_star + pi * w;
        q_star = q_star + qi * w;
    }
    p_star = p_star * (1.0 / w_sum);
    q_star = q_star * (1.0 / w_sum);

    let weight = |i: usize| 1.0 / (p[i] - v).norm_sq();
    let mp = covariance(p, weight, p_star);
    if mp.is_singular() {
        return Err(Error::DegenerateLandmarks("weighted landmark covariance is singular".into()));
    }
    // mq = sum w_i p_hat_i^T q_hat_i (2x2, not symmetric)
    let (mut m11, mut m12, mut m21, mut m22) = (0.0, 0.0, 0.0, 0.0);
    for (i, (&pi, &qi)) in p.iter().zip(q).enumerate() {
        let w = weight(i);
        let ph = pi - p_star;
        let qh = qi - q_star;
        m11 += w * ph.x * qh.x;
        m12 += w * ph.x * qh.y;
        m21 += w * ph.y * qh.x;
        m22 += w * ph.y * qh.y;
    }
    // (v - p*) Mp^{-1} as a row vector.
    let d = v - p_star;
    let det = mp.det();
    let r = Point2::new((d.x * mp.c - d.y * mp.b) / det, (-d.x * mp.b + d.y * mp.a) / det);
    Ok(Point2::new(r.x * m11 + r.y * m21 + q_star.x, r.x * m12 + r.y * m22 + q_star.y))
}

/// Per-pixel source coordinates for backward resampling.
#[derive(Clone, Debug, PartialEq)]
pub struct DeformationField {
    width: usize,
    height: usize,
    coords: Vec<Point2>,
}

impl DeformationField {
    pub fn new(width: usize, height: usize, coords: Vec<Point2>) -> Result<Self> {
        if coords.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "field of {width}x{height} needs {} coordinates, got {}",
                width * height,
                coords.len()
            )));
        }
        Ok(Self { width, height, coords })
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> Point2) -> Self {
        let coords = (0..height).flat_map(|y| (0..width).map(move |x| (x, y))).map(|(x, y)| f(x, y)).collect();
        Self { width, height, coords }
    }

    pub fn identity(width: usize, height: usize) -> Self {
        Self::from_fn(width, height, |x, y| Point2::new(x as f64, y as f64))
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn coords(&self) -> &[Point2] {
        &self.coords
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> Point2 {
        self.coords[y * self.width + x]
    }
}

fn grid_nodes(len: usize, step: usize) -> Vec<usize> {
    let mut nodes: Vec<usize> = (0..len).step_by(step).collect();
    if *nodes.last().expect("len > 0") != len - 1 {
        nodes.push(len - 1);
    }
    nodes
}

/// Locates `x` between grid nodes; returns (left node index, interpolation weight).
fn grid_cell(nodes: &[usize], step: usize, x: usize) -> (usize, f64) {
    if nodes.len() == 1 {
        return (0, 0.0);
    }
    let i = (x / step).min(nodes.len() - 2);
    let (x0, x1) = (nodes[i], nodes[i + 1]);
    (i, (x - x0) as f64 / (x1 - x0) as f64)
}

/// Builds the backward map that warps a reference image (landmarks
/// `reference`) onto a degraded frame (landmarks `degraded`).
///
/// Each output pixel `u` gets the reference-image coordinate
/// `mls_deform_point(u, degraded, reference)`. MLS is evaluated on a grid of
/// spacing `grid_step` (the last row/column is always a node) and bilinearly
/// interpolated in between; `grid_step == 1` evaluates every pixel exactly.
pub fn mls_build_field(
    reference: &[Point2],
    degraded: &[Point2],
    width: usize,
    height: usize,
    grid_step: usize,
) -> Result<DeformationField> {
    if width == 0 || height == 0 {
        return Err(Error::DimensionMismatch(format!("empty field {width}x{height}")));
    }
    if grid_step == 0 {
        return Err(Error::InvalidConfig("grid_step must be at least 1".into()));
    }
    check_pair(degraded, reference)?;

    let xs = grid_nodes(width, grid_step);
    let ys = grid_nodes(height, grid_step);
    let nodes: Vec<Point2> = ys
        .par_iter()
        .map(|&y| {
            xs.iter()
                .map(|&x| deform_unchecked(Point2::new(x as f64, y as f64), degraded, reference))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    if grid_step == 1 {
        return DeformationField::new(width, height, nodes);
    }

    let nx = xs.len();
    let node = |i: usize, j: usize| nodes[j * nx + i];
    let cols: Vec<(usize, f64)> = (0..width).map(|x| grid_cell(&xs, grid_step, x)).collect();
    let coords = (0..height)
        .into_par_iter()
        .flat_map_iter(|y| {
            let (j, ty) = grid_cell(&ys, grid_step, y);
            let j1 = (j + 1).min(ys.len() - 1);
            let cols = &cols;
            (0..width).map(move |x| {
                let (i, tx) = cols[x];
                let i1 = (i + 1).min(nx - 1);
                let top = node(i, j) * (1.0 - tx) + node(i1, j) * tx;
                let bottom = node(i, j1) * (1.0 - tx) + node(i1, j1) * tx;
                top * (1.0 - ty) + bottom * ty
            })
        })
        .collect();
    DeformationField::new(width, height, coords)
}

/// Bilinear, clamp-to-edge sample of channel `c` at `(x, y)`.
#[inline]
pub fn sample_bilinear(src: &ImageBuffer, x: f64, y: f64, c: usize) -> f64 {
    let max_x = (src.width() - 1) as f64;
    let max_y = (src.height() - 1) as f64;
    let x = if x.is_nan() { 0.0 } else { x.clamp(0.0, max_x) };
    let y = if y.is_nan() { 0.0 } else { y.clamp(0.0, max_y) };
    let (x0, y0) = (x.floor() as usize, y.floor() as usize);
    let x1 = (x0 + 1).min(src.width() - 1);
    let y1 = (y0 + 1).min(src.height() - 1);
    let (fx, fy) = (x - x0 as f64, y - y0 as f64);
    let (a, b) = (src.get(x0, y0, c), src.get(x1, y0, c));
    let (d, e) = (src.get(x0, y1, c), src.get(x1, y1, c));
    let v = (1.0 - fy) * ((1.0 - fx) * a + fx * b) + fy * ((1.0 - fx) * d + fx * e);
    // Rounding must not leave the convex hull of the four taps.
    v.clamp(a.min(b).min(d).min(e), a.max(b).max(d).max(e))
}

/// Resamples `src` through a backward deformation field.
pub fn warp_image(src: &ImageBuffer, field: &DeformationField) -> Result<ImageBuffer> {
    let channels = src.channels();
    let data: Vec<f64> = field
        .coords()
        .par_chunks(field.width())
        .flat_map_iter(|row| row.iter().flat_map(move |&p| (0..channels).map(move |c| sample_bilinear(src, p.x, p.y, c))))
        .collect();
    ImageBuffer::new(field.width(), field.height(), channels, data)
}

/// Euclidean distance between two landmark sets viewed as flat vectors.
pub fn landmark_distance(a: &[Point2], b: &[Point2]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch { expected: a.len(), got: b.len() });
    }
    Ok(a.iter().zip(b).map(|(&p, &q)| (p - q).norm_sq()).sum::<f64>().sqrt())
}

/// 4-DOF similarity `x' = a x - b y + tx`, `y' = b x + a y + ty`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimilarityTransform {
    pub a: f64,
    pub b: f64,
    pub tx: f64,
    pub ty: f64,
}

impl SimilarityTransform {
    pub const IDENTITY: SimilarityTransform = SimilarityTransform { a: 1.0, b: 0.0, tx: 0.0, ty: 0.0 };

    pub fn apply(&self, p: Point2) -> Point2 {
        Point2::new(self.a * p.x - self.b * p.y + self.tx, self.b * p.x + self.a * p.y + self.ty)
    }

    pub fn scale(&self) -> f64 {
        self.a.hypot(self.b)
    }

    pub fn rotation(&self) -> f64 {
        self.b.atan2(self.a)
    }

    pub fn inverse(&self) -> SimilarityTransform {
        let n = self.a * self.a + self.b * self.b;
        let (a, b) = (self.a / n, -self.b / n);
        SimilarityTransform { a, b, tx: -(a * self.tx - b * self.ty), ty: -(b * self.tx + a * self.ty) }
    }

    /// Least-squares similarity mapping `src` onto `dst`.
    pub fn fit(src: &[Point2], dst: &[Point2]) -> Result<SimilarityTransform> {
        check_pair(src, dst)?;
        let n = src.len() as f64;
        let cs = src.iter().fold(Point2::default(), |acc, &p| acc + p) * (1.0 / n);
        let cd = dst.iter().fold(Point2::default(), |acc, &p| acc + p) * (1.0 / n);
        let (mut num_a, mut num_b, mut den) = (0.0, 0.0, 0.0);
        for (&s, &d) in src.iter().zip(dst) {
            let (s, d) = (s - cs, d - cd);
            num_a += s.x * d.x + s.y * d.y;
            num_b += s.x * d.y - s.y * d.x;
            den += s.norm_sq();
        }
        let (a, b) = (num_a / den, num_b / den);
        Ok(SimilarityTransform { a, b, tx: cd.x - (a * cs.x - b * cs.y), ty: cd.y - (b * cs.x + a * cs.y) })
    }
}

/// Result of aligning a face to the canonical frame.
#[derive(Clone, Debug)]
pub struct AlignedFace {
    pub image: ImageBuffer,
    pub landmarks: LandmarkSet,
    /// Maps source-image coordinates into the aligned crop.
    pub transform: SimilarityTransform,
}

/// Aligns landmarks only (no resampling).
pub fn align_landmarks(lms: &LandmarkSet, template: &LandmarkSet) -> Result<(LandmarkSet, SimilarityTransform)> {
    let t = SimilarityTransform::fit(lms, template)?;
    Ok((lms.map(|p| t.apply(p))?, t))
}

/// Crops and aligns a face: fits the similarity taking `lms` onto
/// `template` (given in the `out_size` canonical frame) and resamples.
pub fn align_face(img: &ImageBuffer, lms: &LandmarkSet, template: &LandmarkSet, out_size: usize) -> Result<AlignedFace> {
    let (landmarks, transform) = align_landmarks(lms, template)?;
    let inv = transform.inverse();
    let field = DeformationField::from_fn(out_size, out_size, |x, y| inv.apply(Point2::new(x as f64, y as f64)));
    Ok(AlignedFace { image: warp_image(img, &field)?, landmarks, transform })
}

/// Single-channel mask that is 1 within `radius` pixels of any landmark.
pub fn render_landmark_mask(lms: &[Point2], width: usize, height: usize, radius: f64) -> ImageBuffer {
    let mut data = vec![0.0; width * height];
    let r = radius.max(0.0);
    let r2 = r * r + 1e-9;
    for p in lms.iter().filter(|p| p.is_finite()) {
        let x_lo = (p.x - r).ceil().max(0.0);
        let y_lo = (p.y - r).ceil().max(0.0);
        let x_hi = (p.x + r).floor().min(width as f64 - 1.0);
        let y_hi = (p.y + r).floor().min(height as f64 - 1.0);
        if x_lo > x_hi || y_lo > y_hi {
            continue;
        }
        for y in y_lo as usize..=y_hi as usize {
            for x in x_lo as usize..=x_hi as usize {
                if (Point2::new(x as f64, y as f64) - *p).norm_sq() <= r2 {
                    data[y * width + x] = 1.0;
                }
            }
        }
    }
    ImageBuffer::new(width, height, 1, data).expect("binary mask is valid")
}
