use rayon::prelude::*;

use crate::error::Result;
use crate::geometry::{sample_bilinear, Point2, SimilarityTransform};
use crate::image::ImageBuffer;

/// Pastes an aligned crop back into the full frame. `to_crop` maps frame
/// coordinates into the crop; blending weight ramps from 0 at the crop
/// border to 1 at `feather` crop pixels inside it.
pub fn paste_back(frame: &ImageBuffer, crop: &ImageBuffer, to_crop: &SimilarityTransform, feather: f64) -> Result<ImageBuffer> {
    let frame = frame.to_rgb();
    let crop = crop.to_rgb();
    let (w, h) = (frame.width(), frame.height());
    let (cw, ch) = (crop.width() as f64 - 1.0, crop.height() as f64 - 1.0);
    let rows: Vec<Vec<f64>> = (0..h)
        .into_par_iter()
        .map(|y| {
            let mut row = Vec::with_capacity(w * 3);
            for x in 0..w {
                let c = to_crop.apply(Point2::new(x as f64, y as f64));
                let inset = c.x.min(c.y).min(cw - c.x).min(ch - c.y);
                let weight = if inset < 0.0 {
                    0.0
                } else if feather <= 0.0 {
                    1.0
                } else {
                    (inset / feather).min(1.0)
                };
                for k in 0..3 {
                    let base = frame.get(x, y, k);
                    row.push(if weight > 0.0 { weight * sample_bilinear(&crop, c.x, c.y, k) + (1.0 - weight) * base } else { base });
                }
            }
            row
        })
        .collect();
    ImageBuffer::from_clamped(w, h, 3, rows.concat())
}
