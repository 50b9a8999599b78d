//! Layer kinds, shape inference and the per-kind numeric kernels.

use serde::{Deserialize, Serialize};

use super::linalg::{gemm, View};
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const DEFAULT_LEAKY_SLOPE: f64 = 0.2;
pub const BATCH_NORM_EPSILON: f64 = 1e-5;
pub const BATCH_NORM_MOMENTUM: f64 = 0.9;

fn default_true() -> bool {
    true
}

/// One stage of a sequential network. Sizes are per sample; the batch axis is implicit.
///
/// Convolutions use square odd kernels with zero padding `kernel / 2`, so a
/// stride-1 convolution keeps the spatial size and a stride-2 one produces
/// `ceil(size / 2)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Dense {
        inputs: usize,
        outputs: usize,
        #[serde(default = "default_true")]
        bias: bool,
    },
    ConvStride2 {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        #[serde(default = "default_true")]
        bias: bool,
    },
    ConvStride1 {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        #[serde(default = "default_true")]
        bias: bool,
    },
    /// Stride-1 convolution followed by a corner-aligned bilinear 2x upsample.
    ConvStride1Upsample2 {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        #[serde(default = "default_true")]
        bias: bool,
    },
    /// Per-feature (rank 2) or per-channel (rank 4) normalization.
    BatchNorm { channels: usize },
    Relu,
    LeakyRelu { slope: f64 },
    Sigmoid,
    Tanh,
    /// Per-sample target shape.
    Reshape { shape: Vec<usize> },
}

/// Convolution geometry shared by the three convolution kinds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Conv {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub bias: bool,
    pub upsample: bool,
}

impl LayerSpec {
    pub fn dense(inputs: usize, outputs: usize) -> Self {
        LayerSpec::Dense { inputs, outputs, bias: true }
    }

    pub fn leaky_relu() -> Self {
        LayerSpec::LeakyRelu { slope: DEFAULT_LEAKY_SLOPE }
    }

    pub(crate) fn conv(&self) -> Option<Conv> {
        let (in_channels, out_channels, kernel, bias, stride, upsample) = match *self {
            LayerSpec::ConvStride2 { in_channels, out_channels, kernel, bias } => {
                (in_channels, out_channels, kernel, bias, 2, false)
            }
            LayerSpec::ConvStride1 { in_channels, out_channels, kernel, bias } => {
                (in_channels, out_channels, kernel, bias, 1, false)
            }
            LayerSpec::ConvStride1Upsample2 { in_channels, out_channels, kernel, bias } => {
                (in_channels, out_channels, kernel, bias, 1, true)
            }
            _ => return None,
        };
        Some(Conv { in_channels, out_channels, kernel, stride, bias, upsample })
    }

    pub fn name(&self) -> &'static str {
        match self {
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::ConvStride2 { .. } => "conv_stride2",
            LayerSpec::ConvStride1 { .. } => "conv_stride1",
            LayerSpec::ConvStride1Upsample2 { .. } => "conv_stride1_upsample2",
            LayerSpec::BatchNorm { .. } => "batchnorm",
            LayerSpec::Relu => "relu",
            LayerSpec::LeakyRelu { .. } => "leaky_relu",
            LayerSpec::Sigmoid => "sigmoid",
            LayerSpec::Tanh => "tanh",
            LayerSpec::Reshape { .. } => "reshape",
        }
    }

    /// Checks the kind-specific size invariants.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Argument(format!("{}: {msg}", self.name())));
        match self {
            LayerSpec::Dense { inputs, outputs, .. } if *inputs == 0 || *outputs == 0 => {
                bad("sizes must be positive".into())
            }
            LayerSpec::BatchNorm { channels } if *channels == 0 => bad("channels must be positive".into()),
            LayerSpec::LeakyRelu { slope } if !(*slope > 0.0 && *slope < 1.0) => {
                bad(format!("slope {slope} outside (0, 1)"))
            }
            LayerSpec::Reshape { shape } if shape.is_empty() || shape.contains(&0) => {
                bad(format!("invalid target shape {shape:?}"))
            }
            _ => match self.conv() {
                Some(c) if c.in_channels == 0 || c.out_channels == 0 => bad("channels must be positive".into()),
                Some(c) if c.kernel % 2 == 0 => bad(format!("kernel {} must be odd", c.kernel)),
                _ => Ok(()),
            },
        }
    }

    /// Per-sample output shape for a per-sample input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        self.validate()?;
        let mismatch = |want: String| {
            Err(Error::Dimension(format!("{} expects {want}, got per-sample shape {input:?}", self.name())))
        };
        match self {
            LayerSpec::Dense { inputs, outputs, .. } => {
                if input != [*inputs] {
                    return mismatch(format!("[{inputs}]"));
                }
                Ok(vec![*outputs])
            }
            LayerSpec::BatchNorm { channels } => {
                if input.is_empty() || input[0] != *channels || !(input.len() == 1 || input.len() == 3) {
                    return mismatch(format!("[{channels}] or [{channels}, h, w]"));
                }
                Ok(input.to_vec())
            }
            LayerSpec::Reshape { shape } => {
                if shape.iter().product::<usize>() != input.iter().product::<usize>() {
                    return mismatch(format!("{} elements", shape.iter().product::<usize>()));
                }
                Ok(shape.clone())
            }
            LayerSpec::Relu | LayerSpec::LeakyRelu { .. } | LayerSpec::Sigmoid | LayerSpec::Tanh => Ok(input.to_vec()),
            _ => {
                let c = self.conv().expect("remaining kinds are convolutions");
                if input.len() != 3 || input[0] != c.in_channels {
                    return mismatch(format!("[{}, h, w]", c.in_channels));
                }
                let (h, w) = c.conv_output(input[1], input[2]);
                if c.upsample {
                    Ok(vec![c.out_channels, 2 * h, 2 * w])
                } else {
                    Ok(vec![c.out_channels, h, w])
                }
            }
        }
    }

    /// Shapes of the trainable tensors, in storage order.
    pub fn trainable_shapes(&self) -> Vec<Vec<usize>> {
        match self {
            LayerSpec::Dense { inputs, outputs, bias } => {
                let mut v = vec![vec![*outputs, *inputs]];
                if *bias {
                    v.push(vec![*outputs]);
                }
                v
            }
            LayerSpec::BatchNorm { channels } => vec![vec![*channels], vec![*channels]],
            _ => match self.conv() {
                Some(c) => {
                    let mut v = vec![vec![c.out_channels, c.in_channels, c.kernel, c.kernel]];
                    if c.bias {
                        v.push(vec![c.out_channels]);
                    }
                    v
                }
                None => Vec::new(),
            },
        }
    }

    /// Shapes of non-trainable state (batch-norm running mean and variance).
    pub fn running_shapes(&self) -> Vec<Vec<usize>> {
        match self {
            LayerSpec::BatchNorm { channels } => vec![vec![*channels], vec![*channels]],
            _ => Vec::new(),
        }
    }

    pub fn has_kink(&self) -> bool {
        matches!(self, LayerSpec::Relu | LayerSpec::LeakyRelu { .. })
    }
}

impl Conv {
    pub fn padding(&self) -> usize {
        self.kernel / 2
    }

    pub fn conv_output(&self, h: usize, w: usize) -> (usize, usize) {
        let p = self.padding();
        ((h + 2 * p - self.kernel) / self.stride + 1, (w + 2 * p - self.kernel) / self.stride + 1)
    }

    fn patch_len(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    /// Unfolds one `(C, h, w)` sample into a `(C*k*k) x (ho*wo)` matrix.
    fn im2col(&self, x: &[f64], h: usize, w: usize, cols: &mut [f64]) {
        let (ho, wo) = self.conv_output(h, w);
        let (k, s, p) = (self.kernel, self.stride, self.padding() as isize);
        let npix = ho * wo;
        for c in 0..self.in_channels {
            let plane = &x[c * h * w..(c + 1) * h * w];
            for ki in 0..k {
                for kj in 0..k {
                    let row = &mut cols[((c * k + ki) * k + kj) * npix..][..npix];
                    for oi in 0..ho {
                        let ii = (oi * s + ki) as isize - p;
                        let out = &mut row[oi * wo..(oi + 1) * wo];
                        if ii < 0 || ii >= h as isize {
                            out.fill(0.0);
                            continue;
                        }
                        let src = &plane[ii as usize * w..(ii as usize + 1) * w];
                        for (oj, o) in out.iter_mut().enumerate() {
                            let jj = (oj * s + kj) as isize - p;
                            *o = if jj < 0 || jj >= w as isize { 0.0 } else { src[jj as usize] };
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of [`Conv::im2col`]: accumulates columns back into an image.
    fn col2im(&self, cols: &[f64], h: usize, w: usize, dx: &mut [f64]) {
        let (ho, wo) = self.conv_output(h, w);
        let (k, s, p) = (self.kernel, self.stride, self.padding() as isize);
        let npix = ho * wo;
        for c in 0..self.in_channels {
            let plane = &mut dx[c * h * w..(c + 1) * h * w];
            for ki in 0..k {
                for kj in 0..k {
                    let row = &cols[((c * k + ki) * k + kj) * npix..][..npix];
                    for oi in 0..ho {
                        let ii = (oi * s + ki) as isize - p;
                        if ii < 0 || ii >= h as isize {
                            continue;
                        }
                        let dst = &mut plane[ii as usize * w..(ii as usize + 1) * w];
                        for oj in 0..wo {
                            let jj = (oj * s + kj) as isize - p;
                            if jj >= 0 && jj < w as isize {
                                dst[jj as usize] += row[oi * wo + oj];
                            }
                        }
                    }
                }
            }
        }
    }

    /// Convolution of a `(n, C, h, w)` batch (upsampling is applied separately).
    pub fn forward(&self, x: &Tensor, weight: &Tensor, bias: Option<&Tensor>) -> Tensor {
        let (n, h, w) = (x.shape()[0], x.shape()[2], x.shape()[3]);
        let (ho, wo) = self.conv_output(h, w);
        let (npix, plen, oc) = (ho * wo, self.patch_len(), self.out_channels);
        let mut out = vec![0.0; n * oc * npix];
        let mut cols = vec![0.0; plen * npix];
        for i in 0..n {
            self.im2col(x.sample(i), h, w, &mut cols);
            let dst = &mut out[i * oc * npix..(i + 1) * oc * npix];
            if let Some(b) = bias {
                for (o, chunk) in dst.chunks_mut(npix).enumerate() {
                    chunk.fill(b.data()[o]);
                }
            }
            gemm(
                weight.data(),
                View::row_major(oc, plen),
                &cols,
                View::row_major(plen, npix),
                if bias.is_some() { 1.0 } else { 0.0 },
                dst,
                View::row_major(oc, npix),
            );
        }
        Tensor::from_parts(vec![n, oc, ho, wo], out)
    }

    /// Returns `(d_input, d_weight, d_bias)`.
    pub fn backward(&self, x: &Tensor, weight: &Tensor, grad: &Tensor) -> (Tensor, Tensor, Option<Tensor>) {
        let (n, h, w) = (x.shape()[0], x.shape()[2], x.shape()[3]);
        let (ho, wo) = self.conv_output(h, w);
        let (npix, plen, oc) = (ho * wo, self.patch_len(), self.out_channels);
        let mut dx = vec![0.0; x.len()];
        let mut dw = vec![0.0; weight.len()];
        let mut db = vec![0.0; oc];
        let mut cols = vec![0.0; plen * npix];
        let mut dcols = vec![0.0; plen * npix];
        let sample_len = x.sample_len();
        for i in 0..n {
            let g = &grad.data()[i * oc * npix..(i + 1) * oc * npix];
            self.im2col(x.sample(i), h, w, &mut cols);
            gemm(g, View::row_major(oc, npix), &cols, View::transposed(plen, npix), 1.0, &mut dw, View::row_major(oc, plen));
            if self.bias {
                for (o, chunk) in g.chunks(npix).enumerate() {
                    db[o] += chunk.iter().sum::<f64>();
                }
            }
            gemm(
                weight.data(),
                View::transposed(oc, plen),
                g,
                View::row_major(oc, npix),
                0.0,
                &mut dcols,
                View::row_major(plen, npix),
            );
            self.col2im(&dcols, h, w, &mut dx[i * sample_len..(i + 1) * sample_len]);
        }
        (
            Tensor::from_parts(x.shape().to_vec(), dx),
            Tensor::from_parts(weight.shape().to_vec(), dw),
            self.bias.then(|| Tensor::from_parts(vec![oc], db)),
        )
    }
}

/// `(lower index, upper index, weight of upper)` for each output coordinate of a
/// corner-aligned resample from `src` to `dst` samples.
pub(crate) fn bilinear_taps(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    (0..dst)
        .map(|o| {
            if src == 1 || dst == 1 {
                return (0, 0, 0.0);
            }
            let pos = o as f64 * (src - 1) as f64 / (dst - 1) as f64;
            let lo = (pos.floor() as usize).min(src - 1);
            let hi = (lo + 1).min(src - 1);
            (lo, hi, pos - lo as f64)
        })
        .collect()
}

/// Corner-aligned bilinear resample of every `(h, w)` plane in `data` to `(ho, wo)`.
pub(crate) fn resample_planes(data: &[f64], planes: usize, h: usize, w: usize, ho: usize, wo: usize) -> Vec<f64> {
    let rows = bilinear_taps(h, ho);
    let cols = bilinear_taps(w, wo);
    let mut out = vec![0.0; planes * ho * wo];
    for p in 0..planes {
        let src = &data[p * h * w..(p + 1) * h * w];
        let dst = &mut out[p * ho * wo..(p + 1) * ho * wo];
        for (oi, &(r0, r1, fr)) in rows.iter().enumerate() {
            for (oj, &(c0, c1, fc)) in cols.iter().enumerate() {
                let top = src[r0 * w + c0] * (1.0 - fc) + src[r0 * w + c1] * fc;
                let bottom = src[r1 * w + c0] * (1.0 - fc) + src[r1 * w + c1] * fc;
                dst[oi * wo + oj] = top * (1.0 - fr) + bottom * fr;
            }
        }
    }
    out
}

/// Adjoint of [`resample_planes`].
fn resample_planes_adjoint(grad: &[f64], planes: usize, h: usize, w: usize, ho: usize, wo: usize) -> Vec<f64> {
    let rows = bilinear_taps(h, ho);
    let cols = bilinear_taps(w, wo);
    let mut out = vec![0.0; planes * h * w];
    for p in 0..planes {
        let g = &grad[p * ho * wo..(p + 1) * ho * wo];
        let dst = &mut out[p * h * w..(p + 1) * h * w];
        for (oi, &(r0, r1, fr)) in rows.iter().enumerate() {
            for (oj, &(c0, c1, fc)) in cols.iter().enumerate() {
                let v = g[oi * wo + oj];
                dst[r0 * w + c0] += v * (1.0 - fr) * (1.0 - fc);
                dst[r0 * w + c1] += v * (1.0 - fr) * fc;
                dst[r1 * w + c0] += v * fr * (1.0 - fc);
                dst[r1 * w + c1] += v * fr * fc;
            }
        }
    }
    out
}

/// Doubles height and width of a rank-4 tensor by corner-aligned bilinear interpolation.
///
/// Output pixel `o` samples the source at `o * (n - 1) / (2n - 1)`, so the four
/// corners are reproduced exactly.
pub fn bilinear_upsample(input: &Tensor, factor: usize) -> Result<Tensor> {
    if factor != 2 {
        return Err(Error::Argument(format!("only 2x upsampling is supported, got {factor}")));
    }
    let s = input.shape();
    if s.len() != 4 {
        return Err(Error::Dimension(format!("bilinear upsample needs a rank-4 tensor, got {s:?}")));
    }
    let (planes, h, w) = (s[0] * s[1], s[2], s[3]);
    let data = resample_planes(input.data(), planes, h, w, 2 * h, 2 * w);
    Ok(Tensor::from_parts(vec![s[0], s[1], 2 * h, 2 * w], data))
}

/// Gradient of [`bilinear_upsample`] with respect to its input.
pub fn bilinear_upsample_backward(grad: &Tensor) -> Result<Tensor> {
    let s = grad.shape();
    if s.len() != 4 || s[2] % 2 != 0 || s[3] % 2 != 0 {
        return Err(Error::Dimension(format!("not an upsampled gradient shape: {s:?}")));
    }
    let (planes, h, w) = (s[0] * s[1], s[2] / 2, s[3] / 2);
    let data = resample_planes_adjoint(grad.data(), planes, h, w, s[2], s[3]);
    Ok(Tensor::from_parts(vec![s[0], s[1], h, w], data))
}

/// Saved batch-norm quantities for the backward pass.
#[derive(Debug, Clone)]
pub(crate) struct BatchNormCache {
    pub xhat: Vec<f64>,
    pub inv_std: Vec<f64>,
    pub batch_mean: Vec<f64>,
    pub batch_var: Vec<f64>,
    pub count: usize,
    pub train: bool,
}

/// `(batch, channels, spatial)` layout of a batch-norm input.
fn bn_layout(shape: &[usize]) -> (usize, usize, usize) {
    let spatial = shape[2..].iter().product::<usize>();
    (shape[0], shape[1], spatial)
}

pub(crate) fn batchnorm_forward(
    x: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    running_mean: &Tensor,
    running_var: &Tensor,
    train: bool,
) -> Result<(Tensor, BatchNormCache)> {
    let (n, c, s) = bn_layout(x.shape());
    let count = n * s;
    let (mean, var) = if train {
        if count < 2 {
            return Err(Error::Argument("batch norm in train mode needs at least two values per channel".into()));
        }
        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        for ch in 0..c {
            let mut sum = 0.0;
            for b in 0..n {
                sum += x.data()[(b * c + ch) * s..][..s].iter().sum::<f64>();
            }
            let m = sum / count as f64;
            let mut sq = 0.0;
            for b in 0..n {
                sq += x.data()[(b * c + ch) * s..][..s].iter().map(|v| (v - m) * (v - m)).sum::<f64>();
            }
            mean[ch] = m;
            var[ch] = sq / count as f64;
        }
        (mean, var)
    } else {
        (running_mean.data().to_vec(), running_var.data().to_vec())
    };
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BATCH_NORM_EPSILON).sqrt()).collect();
    let mut xhat = vec![0.0; x.len()];
    let mut y = vec![0.0; x.len()];
    for b in 0..n {
        for ch in 0..c {
            let base = (b * c + ch) * s;
            for k in base..base + s {
                let h = (x.data()[k] - mean[ch]) * inv_std[ch];
                xhat[k] = h;
                y[k] = gamma.data()[ch] * h + beta.data()[ch];
            }
        }
    }
    let cache = BatchNormCache { xhat, inv_std, batch_mean: mean, batch_var: var, count, train };
    Ok((Tensor::from_parts(x.shape().to_vec(), y), cache))
}

/// Returns `(d_input, d_gamma, d_beta)`.
pub(crate) fn batchnorm_backward(grad: &Tensor, gamma: &Tensor, cache: &BatchNormCache) -> (Tensor, Tensor, Tensor) {
    let (n, c, s) = bn_layout(grad.shape());
    let g = grad.data();
    let mut dgamma = vec![0.0; c];
    let mut dbeta = vec![0.0; c];
    for b in 0..n {
        for ch in 0..c {
            let base = (b * c + ch) * s;
            for k in base..base + s {
                dgamma[ch] += g[k] * cache.xhat[k];
                dbeta[ch] += g[k];
            }
        }
    }
    let mut dx = vec![0.0; grad.len()];
    let m = cache.count as f64;
    for ch in 0..c {
        let scale = gamma.data()[ch] * cache.inv_std[ch];
        for b in 0..n {
            let base = (b * c + ch) * s;
            for k in base..base + s {
                dx[k] = if cache.train {
                    // dxhat = g * gamma; sums of dxhat and dxhat*xhat are gamma*dbeta and gamma*dgamma.
                    scale * (g[k] - dbeta[ch] / m - cache.xhat[k] * dgamma[ch] / m)
                } else {
                    scale * g[k]
                };
            }
        }
    }
    (
        Tensor::from_parts(grad.shape().to_vec(), dx),
        Tensor::from_parts(vec![c], dgamma),
        Tensor::from_parts(vec![c], dbeta),
    )
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_inference() {
        let conv = LayerSpec::ConvStride2 { in_channels: 1, out_channels: 4, kernel: 3, bias: true };
        assert_eq!(conv.output_shape(&[1, 16, 16]).unwrap(), vec![4, 8, 8]);
        let up = LayerSpec::ConvStride1Upsample2 { in_channels: 4, out_channels: 2, kernel: 5, bias: false };
        assert_eq!(up.output_shape(&[4, 4, 4]).unwrap(), vec![2, 8, 8]);
        assert!(conv.output_shape(&[2, 16, 16]).is_err());
        assert!(LayerSpec::dense(3, 2).output_shape(&[4]).is_err());
        let r = LayerSpec::Reshape { shape: vec![2, 2, 2] };
        assert_eq!(r.output_shape(&[8]).unwrap(), vec![2, 2, 2]);
        assert!(r.output_shape(&[7]).is_err());
    }

    #[test]
    fn rejects_invalid_specs() {
        assert!(LayerSpec::ConvStride2 { in_channels: 1, out_channels: 1, kernel: 4, bias: true }.validate().is_err());
        assert!(LayerSpec::LeakyRelu { slope: 1.5 }.validate().is_err());
        assert!(LayerSpec::dense(0, 3).validate().is_err());
        assert!(LayerSpec::leaky_relu().validate().is_ok());
    }

    #[test]
    fn upsample_constant_and_single_pixel() {
        let t = Tensor::full(&[2, 3, 3, 5], 1.75);
        let u = bilinear_upsample(&t, 2).unwrap();
        assert_eq!(u.shape(), &[2, 3, 6, 10]);
        assert!(u.data().iter().all(|v| (v - 1.75).abs() < 1e-15));

        let one = Tensor::new(vec![1, 1, 1, 1], vec![4.5]).unwrap();
        let u = bilinear_upsample(&one, 2).unwrap();
        assert_eq!(u.data(), &[4.5; 4]);
        assert!(bilinear_upsample(&one, 3).is_err());
        assert!(bilinear_upsample(&Tensor::zeros(&[1, 4]), 2).is_err());
    }

    #[test]
    fn upsample_two_by_two_hand_values() {
        // Corner-aligned: output coordinate o samples source position o/3.
        let t = Tensor::new(vec![1, 1, 2, 2], vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let u = bilinear_upsample(&t, 2).unwrap();
        let f = |r: f64, c: f64| 2.0 * r + c; // the source is the plane 2r + c
        for i in 0..4 {
            for j in 0..4 {
                let want = f(i as f64 / 3.0, j as f64 / 3.0);
                assert!((u.data()[i * 4 + j] - want).abs() < 1e-12, "({i},{j})");
            }
        }
        assert_eq!(u.data()[0], 0.0);
        assert_eq!(u.data()[3], 1.0);
        assert_eq!(u.data()[12], 2.0);
        assert_eq!(u.data()[15], 3.0);
    }

    #[test]
    fn upsample_adjoint_identity() {
        // <up(x), g> == <x, up^T(g)>
        let x: Vec<f64> = (0..18).map(|v| (v as f64 * 0.37).sin()).collect();
        let g: Vec<f64> = (0..72).map(|v| (v as f64 * 0.11).cos()).collect();
        let xt = Tensor::new(vec![2, 1, 3, 3], x.clone()).unwrap();
        let gt = Tensor::new(vec![2, 1, 6, 6], g.clone()).unwrap();
        let up = bilinear_upsample(&xt, 2).unwrap();
        let back = bilinear_upsample_backward(&gt).unwrap();
        let lhs: f64 = up.data().iter().zip(&g).map(|(a, b)| a * b).sum();
        let rhs: f64 = back.data().iter().zip(&x).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn conv_stride2_window_sums() {
        let conv = LayerSpec::ConvStride2 { in_channels: 1, out_channels: 1, kernel: 3, bias: true }.conv().unwrap();
        let x = Tensor::full(&[1, 1, 4, 4], 1.0);
        let w = Tensor::full(&[1, 1, 3, 3], 1.0);
        let b = Tensor::zeros(&[1]);
        let y = conv.forward(&x, &w, Some(&b));
        assert_eq!(y.shape(), &[1, 1, 2, 2]);
        // Oracle: count padded-window cells that land inside the 4x4 image.
        let mut want = [0.0; 4];
        for (idx, (oi, oj)) in [(0, 0), (0, 1), (1, 0), (1, 1)].into_iter().enumerate() {
            for di in -1i32..=1 {
                for dj in -1i32..=1 {
                    let (r, c) = (2 * oi + di, 2 * oj + dj);
                    if (0..4).contains(&r) && (0..4).contains(&c) {
                        want[idx] += 1.0;
                    }
                }
            }
        }
        assert_eq!(want, [4.0, 6.0, 6.0, 9.0]);
        assert_eq!(y.data(), &want);
    }

    #[test]
    fn sigmoid_is_stable() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0);
        assert_eq!(sigmoid(800.0), 1.0);
    }
}
