//! Feature alignment and fusion blocks: AdaIN, ASFF, SFT, and spectral
//! normalization of weight matrices.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::fusion::tensor::{conv2d, ConvKernel, ConvParams, FeatureMap, Matrix};
use crate::fusion::weights::WeightStore;

/// Lower bound on the guide's per-channel standard deviation in [`adain`].
pub const ADAIN_EPSILON: f64 = 1e-5;

pub const LEAKY_SLOPE: f64 = 0.2;

/// Re-standardizes each channel of `guide` to the per-channel mean and
/// population standard deviation of `degraded`.
///
/// A guide channel whose deviation is below [`ADAIN_EPSILON`] is divided by
/// the epsilon instead, so constant channels map to the degraded mean.
pub fn adain(guide: &FeatureMap, degraded: &FeatureMap) -> Result<FeatureMap> {
    guide.expect_shape(degraded, "adain")?;
    let g = guide.channel_moments();
    let d = degraded.channel_moments();
    let plane = guide.plane_len();
    let data = guide
        .data()
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let c = i / plane;
            let (mu_g, sd_g) = g[c];
            let (mu_d, sd_d) = d[c];
            sd_d * (v - mu_g) / sd_g.max(ADAIN_EPSILON) + mu_d
        })
        .collect();
    FeatureMap::new(guide.channels(), guide.height(), guide.width(), data)
}

/// `alpha * restored + beta`, elementwise.
pub fn sft_modulate(restored: &FeatureMap, alpha: &FeatureMap, beta: &FeatureMap) -> Result<FeatureMap> {
    restored.expect_shape(alpha, "sft alpha")?;
    restored.expect_shape(beta, "sft beta")?;
    let data = restored
        .data()
        .iter()
        .zip(alpha.data())
        .zip(beta.data())
        .map(|((&r, &a), &b)| a * r + b)
        .collect();
    FeatureMap::new(restored.channels(), restored.height(), restored.width(), data)
}

/// Convolution with stride 1 and size-preserving padding.
#[derive(Clone, Debug)]
pub struct ConvLayer {
    pub kernel: ConvKernel,
    pub bias: Vec<f64>,
    pub dilation: usize,
}

impl ConvLayer {
    pub fn load(weights: &WeightStore, prefix: &str, dilation: usize) -> Result<Self> {
        let (kernel, bias) = weights.conv(prefix)?;
        if kernel.kernel_h % 2 == 0 || kernel.kernel_h != kernel.kernel_w {
            return Err(Error::ShapeMismatch(format!("`{prefix}` needs a square kernel of odd size")));
        }
        Ok(Self { kernel, bias, dilation })
    }

    /// Like [`ConvLayer::load`] but also checks the channel counts.
    pub fn load_checked(weights: &WeightStore, prefix: &str, dilation: usize, in_ch: usize, out_ch: usize) -> Result<Self> {
        let layer = Self::load(weights, prefix, dilation)?;
        if layer.kernel.in_channels != in_ch || layer.kernel.out_channels != out_ch {
            return Err(Error::ShapeMismatch(format!(
                "`{prefix}` maps {} -> {} channels, expected {in_ch} -> {out_ch}",
                layer.kernel.in_channels, layer.kernel.out_channels
            )));
        }
        Ok(layer)
    }

    pub fn in_channels(&self) -> usize {
        self.kernel.in_channels
    }

    pub fn out_channels(&self) -> usize {
        self.kernel.out_channels
    }

    pub fn forward(&self, x: &FeatureMap) -> Result<FeatureMap> {
        conv2d(x, &self.kernel, Some(&self.bias), ConvParams::same(self.kernel.kernel_h, self.dilation))
    }
}

/// Attention-masked fusion: a two-layer conv stack over
/// `concat(restored, guide, landmarks)` yields a logistic mask `m`, and the
/// output is `guide * m + restored * (1 - m)`. A single-channel mask is
/// broadcast over all feature channels.
#[derive(Clone, Debug)]
pub struct AsffBlock {
    pub conv1: ConvLayer,
    pub conv2: ConvLayer,
}

impl AsffBlock {
    pub fn prefix(level: usize) -> String {
        format!("decoder.level{level}.asff")
    }

    pub fn load(weights: &WeightStore, level: usize) -> Result<Self> {
        let p = Self::prefix(level);
        let conv1 = ConvLayer::load(weights, &format!("{p}.conv1"), 1)?;
        let conv2 = ConvLayer::load(weights, &format!("{p}.conv2"), 1)?;
        if conv2.in_channels() != conv1.out_channels() {
            return Err(Error::ShapeMismatch(format!("`{p}.conv2` input does not match `{p}.conv1` output")));
        }
        Ok(Self { conv1, conv2 })
    }

    pub fn mask(&self, restored: &FeatureMap, guide: &FeatureMap, landmarks: &FeatureMap) -> Result<FeatureMap> {
        let stacked = FeatureMap::concat(&[restored, guide, landmarks])?;
        if stacked.channels() != self.conv1.in_channels() {
            return Err(Error::ShapeMismatch(format!(
                "asff expects {} stacked channels, got {}",
                self.conv1.in_channels(),
                stacked.channels()
            )));
        }
        let hidden = self.conv1.forward(&stacked)?.leaky_relu(LEAKY_SLOPE);
        Ok(self.conv2.forward(&hidden)?.sigmoid())
    }

    pub fn forward(&self, restored: &FeatureMap, guide: &FeatureMap, landmarks: &FeatureMap) -> Result<FeatureMap> {
        restored.expect_shape(guide, "asff guide")?;
        let mask = self.mask(restored, guide, landmarks)?;
        let c = restored.channels();
        if mask.channels() != 1 && mask.channels() != c {
            return Err(Error::ShapeMismatch(format!("asff mask has {} channels for {c} features", mask.channels())));
        }
        let plane = restored.plane_len();
        let data = restored
            .data()
            .iter()
            .zip(guide.data())
            .enumerate()
            .map(|(i, (&r, &g))| {
                let m = if mask.channels() == 1 { mask.data()[i % plane] } else { mask.data()[i] };
                g * m + r * (1.0 - m)
            })
            .collect();
        FeatureMap::new(c, restored.height(), restored.width(), data)
    }
}

/// Fuses restored and aligned guide features at decoder `level` using the
/// `decoder.level{level}.asff.*` weights.
pub fn asff_fuse(
    restored: &FeatureMap,
    guide_aligned: &FeatureMap,
    landmark_feats: &FeatureMap,
    weights: &WeightStore,
    level: usize,
) -> Result<FeatureMap> {
    AsffBlock::load(weights, level)?.forward(restored, guide_aligned, landmark_feats)
}

/// Produces the SFT scale and shift maps from fused features through two
/// parallel conv / leaky-ReLU / conv branches.
#[derive(Clone, Debug)]
pub struct SftBlock {
    pub alpha: [ConvLayer; 2],
    pub beta: [ConvLayer; 2],
}

impl SftBlock {
    pub fn prefix(level: usize) -> String {
        format!("decoder.level{level}.sft")
    }

    pub fn load(weights: &WeightStore, level: usize, channels: usize) -> Result<Self> {
        let p = Self::prefix(level);
        let branch = |name: &str| -> Result<[ConvLayer; 2]> {
            Ok([
                ConvLayer::load_checked(weights, &format!("{p}.{name}.conv1"), 1, channels, channels)?,
                ConvLayer::load_checked(weights, &format!("{p}.{name}.conv2"), 1, channels, channels)?,
            ])
        };
        Ok(Self { alpha: branch("alpha")?, beta: branch("beta")? })
    }

    pub fn params(&self, fused: &FeatureMap) -> Result<(FeatureMap, FeatureMap)> {
        let run = |b: &[ConvLayer; 2]| -> Result<FeatureMap> { b[1].forward(&b[0].forward(fused)?.leaky_relu(LEAKY_SLOPE)) };
        Ok((run(&self.alpha)?, run(&self.beta)?))
    }

    pub fn forward(&self, restored: &FeatureMap, fused: &FeatureMap) -> Result<FeatureMap> {
        let (alpha, beta) = self.params(fused)?;
        sft_modulate(restored, &alpha, &beta)
    }
}

/// Divides `weight` by its largest singular value, estimated with
/// `power_iters` rounds of power iteration on `W^T W` from a fixed start
/// vector. Returns the normalized matrix and the estimate.
pub fn spectral_normalize(weight: &Matrix, power_iters: usize) -> Result<(Matrix, f64)> {
    if power_iters == 0 {
        return Err(Error::InvalidConfig("power_iters must be at least 1".into()));
    }
    if weight.data().iter().all(|&v| v == 0.0) || weight.rows() == 0 || weight.cols() == 0 {
        return Err(Error::ZeroMatrix);
    }
    let sigma = top_singular_value(weight, power_iters);
    if !sigma.is_finite() || sigma <= 0.0 {
        return Err(Error::ZeroMatrix);
    }
    Ok((weight.scale(1.0 / sigma), sigma))
}

fn normalize(v: &mut [f64]) -> f64 {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    n
}

fn top_singular_value(w: &Matrix, iters: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut u: Vec<f64> = (0..w.rows()).map(|_| rng.random_range(-1.0..1.0)).collect();
    normalize(&mut u);
    let mut sigma = 0.0;
    for _ in 0..iters {
        let mut v = w.tr_mul_vec(&u);
        if normalize(&mut v) == 0.0 {
            // Start vector orthogonal to the column space; restart from e_0.
            v = vec![0.0; w.cols()];
            v[0] = 1.0;
        }
        u = w.mul_vec(&v);
        sigma = normalize(&mut u);
    }
    sigma
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fusion::weights::Tensor;
    use rand::Rng;

    fn map(c: usize, h: usize, w: usize, v: &[f64]) -> FeatureMap {
        FeatureMap::new(c, h, w, v.to_vec()).unwrap()
    }

    /// Two-pass mean / population std over a slice.
    fn moments(v: &[f64]) -> (f64, f64) {
        let n = v.len() as f64;
        let mut s = 0.0;
        for x in v {
            s += x;
        }
        let m = s / n;
        let mut ss = 0.0;
        for x in v {
            ss += (x - m) * (x - m);
        }
        (m, (ss / n).sqrt())
    }

    #[test]
    fn adain_self_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let f = FeatureMap::from_fn(3, 4, 5, |_, _, _| rng.random_range(-2.0..2.0));
        let out = adain(&f, &f).unwrap();
        for (a, b) in out.data().iter().zip(f.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn adain_constant_guide_gives_degraded_mean() {
        let g = map(1, 2, 2, &[0.7; 4]);
        let d = map(1, 2, 2, &[1.0, 3.0, 5.0, 7.0]);
        let out = adain(&g, &d).unwrap();
        assert!(out.data().iter().all(|&v| v == 4.0));
    }

    #[test]
    fn adain_small_example_against_moments_oracle() {
        let g = [0.0, 1.0, 2.0, 3.0];
        let d = [10.0, 10.0, 14.0, 14.0];
        let (mg, sg) = moments(&g);
        let (md, sd) = moments(&d);
        assert_eq!((md, sd), (12.0, 2.0));
        let expected: Vec<f64> = g.iter().map(|v| sd * (v - mg) / sg + md).collect();
        let out = adain(&map(1, 1, 4, &g), &map(1, 1, 4, &d)).unwrap();
        for (a, b) in out.data().iter().zip(&expected) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((out.data()[0] - (12.0 - 2.0 * 1.5 / 1.25f64.sqrt())).abs() < 1e-12);
        let (m, s) = moments(out.data());
        assert!((m - 12.0).abs() < 1e-12 && (s - 2.0).abs() < 1e-12);
        assert!(adain(&map(1, 1, 4, &g), &map(1, 2, 2, &d)).is_err());
    }

    #[test]
    fn sft_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut rand_map = || FeatureMap::from_fn(2, 3, 3, |_, _, _| rng.random_range(-1.0..1.0));
        let (r, a, b) = (rand_map(), rand_map(), rand_map());
        let ones = r.map(|_| 1.0);
        let zeros = r.map(|_| 0.0);
        assert_eq!(sft_modulate(&r, &ones, &zeros).unwrap(), r);
        assert_eq!(sft_modulate(&r, &zeros, &b).unwrap(), b);
        let out = sft_modulate(&r, &a, &b).unwrap();
        for c in 0..2 {
            for y in 0..3 {
                for x in 0..3 {
                    assert_eq!(out.get(c, y, x), a.get(c, y, x) * r.get(c, y, x) + b.get(c, y, x));
                }
            }
        }
        assert!(sft_modulate(&r, &FeatureMap::zeros(1, 3, 3), &b).is_err());
    }

    fn asff_store(level: usize, c: usize, conv1_w: Vec<f32>, conv1_b: Vec<f32>, conv2_w: Vec<f32>, conv2_b: Vec<f32>, k: usize, mask_c: usize) -> WeightStore {
        let mut s = WeightStore::new();
        let p = AsffBlock::prefix(level);
        s.insert(format!("{p}.conv1.weight"), Tensor::new(vec![c, 3 * c, k, k], conv1_w).unwrap());
        s.insert(format!("{p}.conv1.bias"), Tensor::new(vec![c], conv1_b).unwrap());
        s.insert(format!("{p}.conv2.weight"), Tensor::new(vec![mask_c, c, k, k], conv2_w).unwrap());
        s.insert(format!("{p}.conv2.bias"), Tensor::new(vec![mask_c], conv2_b).unwrap());
        s
    }

    #[test]
    fn asff_saturated_masks() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut rand_map = || FeatureMap::from_fn(2, 4, 4, |_, _, _| rng.random_range(-1.0..1.0));
        let (r, g, l) = (rand_map(), rand_map(), rand_map());
        for (bias, target) in [(20.0f32, &g), (-20.0, &r)] {
            let s = asff_store(1, 2, vec![0.3; 2 * 6 * 9], vec![0.0; 2], vec![0.0; 2 * 2 * 9], vec![bias; 2], 3, 2);
            let out = asff_fuse(&r, &g, &l, &s, 1).unwrap();
            for (a, b) in out.data().iter().zip(target.data()) {
                assert!((a - b).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn asff_hand_evaluated_1x1() {
        // C = 1, 2x2 maps, 1x1 kernels.
        let r = map(1, 2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let g = map(1, 2, 2, &[0.0, 0.0, 1.0, 1.0]);
        let l = map(1, 2, 2, &[1.0, 0.0, 0.0, 1.0]);
        // hidden = lrelu(0.5 r - 1.0 g + 2.0 l - 1.0); mask = logistic(1.5 hidden + 0.1)
        let s = asff_store(0, 1, vec![0.5, -1.0, 2.0], vec![-1.0], vec![1.5], vec![0.1], 1, 1);
        let out = asff_fuse(&r, &g, &l, &s, 0).unwrap();
        for i in 0..4 {
            let (rv, gv, lv) = (r.data()[i], g.data()[i], l.data()[i]);
            let h: f64 = 0.5 * rv - 1.0 * gv + 2.0 * lv - 1.0;
            let h = if h >= 0.0 { h } else { 0.2 * h };
            let m = 1.0 / (1.0 + (-(1.5 * h + f64::from(0.1f32))).exp());
            let expected = gv * m + rv * (1.0 - m);
            assert!((out.data()[i] - expected).abs() < 1e-12, "pixel {i}");
        }
        assert!(matches!(asff_fuse(&r, &g, &l, &s, 3), Err(Error::MissingWeight(_))));
    }

    #[test]
    fn spectral_norm_cases() {
        let d = Matrix::new(2, 2, vec![3.0, 0.0, 0.0, 1.0]).unwrap();
        let (n, s) = spectral_normalize(&d, 30).unwrap();
        assert!((s - 3.0).abs() < 1e-9);
        assert!((n.get(0, 0) - 1.0).abs() < 1e-9 && (n.get(1, 1) - 1.0 / 3.0).abs() < 1e-9);
        let t = 0.4f64;
        let rot = Matrix::new(2, 2, vec![t.cos(), -t.sin(), t.sin(), t.cos()]).unwrap();
        let (n, s) = spectral_normalize(&rot, 1).unwrap();
        assert!((s - 1.0).abs() < 1e-5);
        for (a, b) in n.data().iter().zip(rot.data()) {
            assert!((a - b).abs() < 1e-5);
        }
        assert!(matches!(spectral_normalize(&Matrix::zeros(3, 2), 5), Err(Error::ZeroMatrix)));
    }
}
