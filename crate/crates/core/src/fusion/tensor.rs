//! Minimal CHW feature maps, dense matrices and 2-D convolution.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::ImageBuffer;

/// Channel-major (channel, row, column) feature map.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl FeatureMap {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::ShapeMismatch(format!("empty feature map {channels}x{height}x{width}")));
        }
        if data.len() != channels * height * width {
            return Err(Error::ShapeMismatch(format!(
                "data length {} does not match {channels}x{height}x{width}",
                data.len()
            )));
        }
        Ok(Self { channels, height, width, data })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self { channels, height, width, data: vec![0.0; channels * height * width] }
    }

    pub fn from_fn(channels: usize, height: usize, width: usize, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(channels * height * width);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, y, x));
                }
            }
        }
        Self { channels, height, width, data }
    }

    /// Planar copy of an image (channels become feature channels).
    pub fn from_image(img: &ImageBuffer) -> Self {
        Self::from_fn(img.channels(), img.height(), img.width(), |c, y, x| img.get(x, y, c))
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.plane_len();
        &self.data[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> FeatureMap {
        let data = self.data.iter().map(|&v| f(v)).collect();
        FeatureMap { channels: self.channels, height: self.height, width: self.width, data }
    }

    pub fn zip_map(&self, other: &FeatureMap, f: impl Fn(f64, f64) -> f64) -> Result<FeatureMap> {
        self.expect_shape(other, "elementwise op")?;
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Ok(FeatureMap { channels: self.channels, height: self.height, width: self.width, data })
    }

    pub fn expect_shape(&self, other: &FeatureMap, what: &str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::ShapeMismatch(format!("{what}: {:?} vs {:?}", self.shape(), other.shape())));
        }
        Ok(())
    }

    pub fn relu(&self) -> FeatureMap {
        self.map(|v| v.max(0.0))
    }

    pub fn leaky_relu(&self, slope: f64) -> FeatureMap {
        self.map(|v| if v >= 0.0 { v } else { slope * v })
    }

    pub fn sigmoid(&self) -> FeatureMap {
        self.map(logistic)
    }

    /// Stacks maps with equal spatial size along the channel axis.
    pub fn concat(maps: &[&FeatureMap]) -> Result<FeatureMap> {
        let first = maps.first().ok_or_else(|| Error::ShapeMismatch("concat of nothing".into()))?;
        let (h, w) = (first.height, first.width);
        if let Some(m) = maps.iter().find(|m| (m.height, m.width) != (h, w)) {
            return Err(Error::ShapeMismatch(format!(
                "concat: spatial {}x{} vs {}x{}",
                m.height, m.width, h, w
            )));
        }
        let channels = maps.iter().map(|m| m.channels).sum();
        let data = maps.iter().flat_map(|m| m.data.iter().copied()).collect();
        Ok(FeatureMap { channels, height: h, width: w, data })
    }

    /// Nearest-neighbour upsampling by 2.
    pub fn upsample2(&self) -> FeatureMap {
        let (h, w) = (self.height * 2, self.width * 2);
        Self::from_fn(self.channels, h, w, |c, y, x| self.get(c, y / 2, x / 2))
    }

    /// Average pooling with a `factor`x`factor` window and equal stride
    /// (trailing rows/columns that do not fill a window are dropped).
    pub fn avg_pool(&self, factor: usize) -> Result<FeatureMap> {
        let (h, w) = (self.height / factor, self.width / factor);
        if factor == 0 || h == 0 || w == 0 {
            return Err(Error::ShapeMismatch(format!(
                "cannot pool {}x{} by {factor}",
                self.height, self.width
            )));
        }
        let norm = 1.0 / (factor * factor) as f64;
        Ok(Self::from_fn(self.channels, h, w, |c, y, x| {
            let mut s = 0.0;
            for dy in 0..factor {
                for dx in 0..factor {
                    s += self.get(c, y * factor + dy, x * factor + dx);
                }
            }
            s * norm
        }))
    }

    /// Per-channel mean and population standard deviation over spatial dims.
    pub fn channel_moments(&self) -> Vec<(f64, f64)> {
        (0..self.channels)
            .map(|c| {
                let plane = self.channel(c);
                let n = plane.len() as f64;
                let mean = plane.iter().sum::<f64>() / n;
                let var = plane.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
                (mean, var.sqrt())
            })
            .collect()
    }
}

#[inline]
pub fn logistic(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// Dense row-major matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::ShapeMismatch(format!("matrix {rows}x{cols} from {} values", data.len())));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_fn(rows: usize, cols: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let data = (0..rows).flat_map(|r| (0..cols).map(move |c| (r, c))).map(|(r, c)| f(r, c)).collect();
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn scale(&self, s: f64) -> Matrix {
        Matrix { rows: self.rows, cols: self.cols, data: self.data.iter().map(|v| v * s).collect() }
    }

    /// `self * x`.
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.rows).map(|r| self.row(r).iter().zip(x).map(|(a, b)| a * b).sum()).collect()
    }

    /// `self^T * y`.
    pub fn tr_mul_vec(&self, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for (r, &yr) in y.iter().enumerate() {
            for (o, a) in out.iter_mut().zip(self.row(r)) {
                *o += a * yr;
            }
        }
        out
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }
}

/// OIHW convolution kernel.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvKernel {
    pub out_channels: usize,
    pub in_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub data: Vec<f64>,
}

impl ConvKernel {
    pub fn new(out_channels: usize, in_channels: usize, kernel_h: usize, kernel_w: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != out_channels * in_channels * kernel_h * kernel_w || data.is_empty() {
            return Err(Error::ShapeMismatch(format!(
                "kernel {out_channels}x{in_channels}x{kernel_h}x{kernel_w} from {} values",
                data.len()
            )));
        }
        Ok(Self { out_channels, in_channels, kernel_h, kernel_w, data })
    }

    #[inline]
    pub fn get(&self, o: usize, i: usize, ky: usize, kx: usize) -> f64 {
        self.data[((o * self.in_channels + i) * self.kernel_h + ky) * self.kernel_w + kx]
    }

    /// The kernel viewed as an `out x (in * kh * kw)` matrix.
    pub fn as_matrix(&self) -> Matrix {
        Matrix {
            rows: self.out_channels,
            cols: self.in_channels * self.kernel_h * self.kernel_w,
            data: self.data.clone(),
        }
    }

    pub fn with_matrix(&self, m: &Matrix) -> ConvKernel {
        ConvKernel { data: m.data.clone(), ..self.clone() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvParams {
    pub stride: usize,
    pub dilation: usize,
    pub padding: usize,
}

impl ConvParams {
    /// Stride 1 with the padding that preserves spatial size for odd kernels.
    pub fn same(kernel: usize, dilation: usize) -> Self {
        Self { stride: 1, dilation, padding: dilation * (kernel - 1) / 2 }
    }
}

impl Default for ConvParams {
    fn default() -> Self {
        Self { stride: 1, dilation: 1, padding: 0 }
    }
}

fn conv_out_len(len: usize, k: usize, p: ConvParams) -> Option<usize> {
    let span = p.dilation * (k - 1) + 1;
    (len + 2 * p.padding).checked_sub(span).map(|n| n / p.stride + 1)
}

/// Zero-padded 2-D cross-correlation.
/// Output size per axis is `floor((L + 2p - d(k - 1) - 1) / s) + 1`.
pub fn conv2d(input: &FeatureMap, kernel: &ConvKernel, bias: Option<&[f64]>, params: ConvParams) -> Result<FeatureMap> {
    if kernel.in_channels != input.channels {
        return Err(Error::ShapeMismatch(format!(
            "conv expects {} input channels, got {}",
            kernel.in_channels, input.channels
        )));
    }
    if let Some(b) = bias {
        if b.len() != kernel.out_channels {
            return Err(Error::ShapeMismatch(format!("bias has {} entries for {} outputs", b.len(), kernel.out_channels)));
        }
    }
    if params.stride == 0 || params.dilation == 0 {
        return Err(Error::ShapeMismatch("stride and dilation must be positive".into()));
    }
    let (oh, ow) = match (
        conv_out_len(input.height, kernel.kernel_h, params),
        conv_out_len(input.width, kernel.kernel_w, params),
    ) {
        (Some(h), Some(w)) if h > 0 && w > 0 => (h, w),
        _ => {
            return Err(Error::ShapeMismatch(format!(
                "kernel {}x{} does not fit {}x{} input",
                kernel.kernel_h, kernel.kernel_w, input.height, input.width
            )))
        }
    };
    let (ih, iw) = (input.height as isize, input.width as isize);
    let (s, d, p) = (params.stride as isize, params.dilation as isize, params.padding as isize);

    // Valid output-column range per kernel column: 0 <= ox*s + kx*d - p < iw.
    let col_range = |kx: usize| -> (usize, usize) {
        let off = kx as isize * d - p;
        let lo = if off >= 0 { 0 } else { (((-off) + s - 1) / s).min(ow as isize) };
        let hi = if iw - off <= 0 { 0 } else { ((iw - off - 1) / s + 1).min(ow as isize) };
        (lo as usize, hi.max(lo) as usize)
    };
    let col_ranges: Vec<(usize, usize)> = (0..kernel.kernel_w).map(col_range).collect();

    let mut out = vec![0.0; kernel.out_channels * oh * ow];
    out.par_chunks_mut(oh * ow).enumerate().for_each(|(o, plane)| {
        let b = bias.map_or(0.0, |b| b[o]);
        plane.iter_mut().for_each(|v| *v = b);
        for i in 0..kernel.in_channels {
            let src = input.channel(i);
            for ky in 0..kernel.kernel_h {
                for kx in 0..kernel.kernel_w {
                    let w = kernel.get(o, i, ky, kx);
                    if w == 0.0 {
                        continue;
                    }
                    let (lo, hi) = col_ranges[kx];
                    if lo >= hi {
                        continue;
                    }
                    let x_off = kx as isize * d - p;
                    for oy in 0..oh {
                        let iy = oy as isize * s + ky as isize * d - p;
                        if iy < 0 || iy >= ih {
                            continue;
                        }
                        let row = &src[iy as usize * input.width..(iy as usize + 1) * input.width];
                        let dst = &mut plane[oy * ow..(oy + 1) * ow];
                        if s == 1 {
                            let start = (lo as isize + x_off) as usize;
                            for (o_v, &i_v) in dst[lo..hi].iter_mut().zip(&row[start..start + (hi - lo)]) {
                                *o_v += w * i_v;
                            }
                        } else {
                            for ox in lo..hi {
                                dst[ox] += w * row[(ox as isize * s + x_off) as usize];
                            }
                        }
                    }
                }
            }
        }
    });
    FeatureMap::new(kernel.out_channels, oh, ow, out)
}
