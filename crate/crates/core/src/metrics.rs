//! Full-reference quality metrics.

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::image::ImageBuffer;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

fn check_shapes(a: &ImageBuffer, b: &ImageBuffer) -> Result<()> {
    if !a.same_shape(b) {
        return Err(Error::ShapeMismatch(format!(
            "{}x{}x{} vs {}x{}x{}",
            a.width(),
            a.height(),
            a.channels(),
            b.width(),
            b.height(),
            b.channels()
        )));
    }
    Ok(())
}

/// Peak signal-to-noise ratio in dB over all channels. Identical images
/// give `f64::INFINITY`.
pub fn psnr(a: &ImageBuffer, b: &ImageBuffer, max_val: f64) -> Result<f64> {
    check_shapes(a, b)?;
    let n = a.data().len() as f64;
    let mse = a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / n;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (max_val * max_val / mse).log10())
}

/// Parameters for [`ssim_with`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SsimParams {
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        Self { window: SSIM_WINDOW, sigma: SSIM_SIGMA, k1: SSIM_K1, k2: SSIM_K2 }
    }
}

/// Normalized 1-D Gaussian taps.
pub fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let w: Vec<f64> = (0..size).map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Mean SSIM on the luma channel with the default window and constants.
pub fn ssim(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64> {
    ssim_with(a, b, SsimParams::default())
}

/// Mean SSIM over every fully contained window position.
pub fn ssim_with(a: &ImageBuffer, b: &ImageBuffer, params: SsimParams) -> Result<f64> {
    check_shapes(a, b)?;
    let win = params.window;
    if win == 0 || a.width() < win || a.height() < win {
        return Err(Error::TooSmall(format!("{}x{} is smaller than the {win}x{win} window", a.width(), a.height())));
    }
    let (la, lb) = (a.to_luma(), b.to_luma());
    let (w, h) = (a.width(), a.height());
    let (x, y) = (la.data(), lb.data());
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(y).map(|(p, q)| p * q).collect();
    let g = gaussian_window(win, params.sigma);
    let filt = |src: &[f64]| separable_valid(src, w, h, &g);
    let (mu_x, mu_y, e_xx, e_yy, e_xy) = (filt(x), filt(y), filt(&xx), filt(&yy), filt(&xy));
    let c1 = params.k1 * params.k1;
    let c2 = params.k2 * params.k2;
    let n = mu_x.len() as f64;
    let sum: f64 = (0..mu_x.len())
        .map(|i| {
            let (mx, my) = (mu_x[i], mu_y[i]);
            let vx = e_xx[i] - mx * mx;
            let vy = e_yy[i] - my * my;
            let cxy = e_xy[i] - mx * my;
            ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2))
        })
        .sum();
    Ok(sum / n)
}

fn separable_valid(src: &[f64], w: usize, h: usize, g: &[f64]) -> Vec<f64> {
    let k = g.len();
    let ow = w - k + 1;
    let oh = h - k + 1;
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        let line = &src[y * w..(y + 1) * w];
        for x in 0..ow {
            rows[y * ow + x] = g.iter().zip(&line[x..x + k]).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = g.iter().enumerate().map(|(j, gv)| gv * rows[(y + j) * ow + x]).sum();
        }
    }
    out
}

/// Metrics computed by external tools. Always serialized, `null` until
/// merged in from elsewhere.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ExternalMetrics {
    pub lpips: Option<f64>,
    pub brisque: Option<f64>,
    pub contrique: Option<f64>,
    pub contrique_fr: Option<f64>,
    pub vmaf: Option<f64>,
    pub vmaf_neg: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameMetrics {
    #[serde(with = "psnr_serde")]
    pub psnr: f64,
    pub ssim: f64,
    #[serde(flatten)]
    pub external: ExternalMetrics,
}

impl FrameMetrics {
    pub fn compute(restored: &ImageBuffer, gt: &ImageBuffer) -> Result<Self> {
        Ok(Self { psnr: psnr(restored, gt, 1.0)?, ssim: ssim(restored, gt)?, external: ExternalMetrics::default() })
    }
}

/// Per-frame metrics and their stream means.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub frames: Vec<FrameMetrics>,
}

impl MetricReport {
    pub fn push(&mut self, m: FrameMetrics) {
        self.frames.push(m);
    }

    pub fn mean_psnr(&self) -> Option<f64> {
        mean(self.frames.iter().map(|f| f.psnr))
    }

    pub fn mean_ssim(&self) -> Option<f64> {
        mean(self.frames.iter().map(|f| f.ssim))
    }
}

fn mean(values: impl ExactSizeIterator<Item = f64>) -> Option<f64> {
    let n = values.len();
    (n > 0).then(|| values.sum::<f64>() / n as f64)
}

/// Serializes PSNR with `"inf"` for identical frames, since JSON has no
/// infinity.
pub mod psnr_serde {
    use super::*;

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
        if v.is_infinite() && *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*v)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Str(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Str(s) if s == "inf" => Ok(f64::INFINITY),
            Repr::Str(s) => Err(serde::de::Error::custom(format!("invalid psnr `{s}`"))),
        }
    }

    /// Same encoding for optional values.
    pub mod option {
        use super::*;

        pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
            match v {
                Some(v) => super::serialize(v, s),
                None => s.serialize_none(),
            }
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Option<f64>, D::Error> {
            #[derive(Deserialize)]
            struct Wrap(#[serde(with = "super")] f64);
            Ok(Option::<Wrap>::deserialize(d)?.map(|w| w.0))
        }
    }
}
