use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};

/// Gradients produced by [`conv2d_backward`].
#[derive(Clone, Debug)]
pub struct Conv2dGrads {
    pub input: Tensor,
    pub kernel: Tensor,
    pub bias: Tensor,
}

struct ConvGeometry {
    batch: usize,
    in_ch: usize,
    out_ch: usize,
    height: usize,
    width: usize,
    kh: usize,
    kw: usize,
    out_h: usize,
    out_w: usize,
    padding: usize,
}

impl ConvGeometry {
    fn new(input: &Tensor, kernel: &Tensor, padding: usize) -> Result<Self> {
        let [batch, in_ch, height, width] = input.dims4("conv2d input")?;
        let [out_ch, k_in, kh, kw] = kernel.dims4("conv2d kernel")?;
        if k_in != in_ch {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                left: input.shape().to_vec(),
                right: kernel.shape().to_vec(),
            });
        }
        if kh == 0 || kw == 0 || height + 2 * padding < kh || width + 2 * padding < kw {
            return Err(Error::ShapeMismatch {
                op: "conv2d (kernel larger than padded input)",
                left: input.shape().to_vec(),
                right: kernel.shape().to_vec(),
            });
        }
        Ok(Self {
            batch,
            in_ch,
            out_ch,
            height,
            width,
            kh,
            kw,
            out_h: height + 2 * padding - kh + 1,
            out_w: width + 2 * padding - kw + 1,
            padding,
        })
    }

    /// Output rows touched by kernel row `ky`, with the matching input row offset.
    fn row_span(&self, ky: usize) -> (usize, usize) {
        span(ky, self.padding, self.height, self.out_h)
    }

    fn col_span(&self, kx: usize) -> (usize, usize) {
        span(kx, self.padding, self.width, self.out_w)
    }
}

/// Range of output positions `o` such that `o + k - padding` lies inside `[0, extent)`.
fn span(k: usize, padding: usize, extent: usize, out_extent: usize) -> (usize, usize) {
    let lo = padding.saturating_sub(k);
    let hi = (extent + padding).saturating_sub(k).min(out_extent);
    (lo, hi.max(lo))
}

/// 2-D cross-correlation with zero padding and stride 1.
///
/// `input` is `[B, Cin, H, W]`, `kernel` is `[Cout, Cin, kh, kw]`, `bias` is `[Cout]`.
pub fn conv2d(input: &Tensor, kernel: &Tensor, bias: &Tensor, padding: usize) -> Result<Tensor> {
    let g = ConvGeometry::new(input, kernel, padding)?;
    if bias.shape() != [g.out_ch] {
        return Err(Error::ShapeMismatch {
            op: "conv2d bias",
            left: kernel.shape().to_vec(),
            right: bias.shape().to_vec(),
        });
    }
    let x = input.data();
    let k = kernel.data();
    let plane_in = g.height * g.width;
    let plane_out = g.out_h * g.out_w;
    let mut out = vec![0.0; g.batch * g.out_ch * plane_out];

    for b in 0..g.batch {
        for co in 0..g.out_ch {
            let o_base = (b * g.out_ch + co) * plane_out;
            let o_plane = &mut out[o_base..o_base + plane_out];
            o_plane.fill(bias.data()[co]);
            for ci in 0..g.in_ch {
                let i_plane = &x[(b * g.in_ch + ci) * plane_in..][..plane_in];
                for ky in 0..g.kh {
                    let (oy0, oy1) = g.row_span(ky);
                    for kx in 0..g.kw {
                        let w = k[((co * g.in_ch + ci) * g.kh + ky) * g.kw + kx];
                        let (ox0, ox1) = g.col_span(kx);
                        let ix0 = ox0 + kx - g.padding;
                        for oy in oy0..oy1 {
                            let iy = oy + ky - g.padding;
                            let src = &i_plane[iy * g.width + ix0..][..ox1 - ox0];
                            let dst = &mut o_plane[oy * g.out_w + ox0..][..ox1 - ox0];
                            for (d, s) in dst.iter_mut().zip(src) {
                                *d += w * s;
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![g.batch, g.out_ch, g.out_h, g.out_w], out)
}

/// Backward pass of [`conv2d`] given the upstream gradient `grad_out`.
pub fn conv2d_backward(
    input: &Tensor,
    kernel: &Tensor,
    padding: usize,
    grad_out: &Tensor,
) -> Result<Conv2dGrads> {
    let g = ConvGeometry::new(input, kernel, padding)?;
    let expected = [g.batch, g.out_ch, g.out_h, g.out_w];
    if grad_out.shape() != expected {
        return Err(Error::ShapeMismatch {
            op: "conv2d_backward",
            left: expected.to_vec(),
            right: grad_out.shape().to_vec(),
        });
    }
    let x = input.data();
    let k = kernel.data();
    let go = grad_out.data();
    let plane_in = g.height * g.width;
    let plane_out = g.out_h * g.out_w;
    let mut gx = vec![0.0; x.len()];
    let mut gk = vec![0.0; k.len()];
    let mut gb = vec![0.0; g.out_ch];

    for b in 0..g.batch {
        for co in 0..g.out_ch {
            let go_plane = &go[(b * g.out_ch + co) * plane_out..][..plane_out];
            gb[co] += go_plane.iter().sum::<f64>();
            for ci in 0..g.in_ch {
                let i_base = (b * g.in_ch + ci) * plane_in;
                for ky in 0..g.kh {
                    let (oy0, oy1) = g.row_span(ky);
                    for kx in 0..g.kw {
                        let widx = ((co * g.in_ch + ci) * g.kh + ky) * g.kw + kx;
                        let w = k[widx];
                        let (ox0, ox1) = g.col_span(kx);
                        let ix0 = ox0 + kx - g.padding;
                        let mut acc = 0.0;
                        for oy in oy0..oy1 {
                            let iy = oy + ky - g.padding;
                            let grow = &go_plane[oy * g.out_w + ox0..][..ox1 - ox0];
                            let start = i_base + iy * g.width + ix0;
                            let xrow = &x[start..][..ox1 - ox0];
                            acc += grow.iter().zip(xrow).map(|(a, b)| a * b).sum::<f64>();
                            let gxrow = &mut gx[start..][..ox1 - ox0];
                            for (d, s) in gxrow.iter_mut().zip(grow) {
                                *d += w * s;
                            }
                        }
                        gk[widx] += acc;
                    }
                }
            }
        }
    }
    Ok(Conv2dGrads {
        input: Tensor::new(input.shape().to_vec(), gx)?,
        kernel: Tensor::new(kernel.shape().to_vec(), gk)?,
        bias: Tensor::new(vec![g.out_ch], gb)?,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum NormMode {
    /// Normalize with batch statistics and update the running statistics.
    Train,
    /// Normalize with the running statistics only.
    Eval,
}

/// Per-channel batch normalization parameters and running statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormState {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running_mean: Tensor,
    pub running_var: Tensor,
    pub eps: f64,
    pub stat_momentum: f64,
}

impl BatchNormState {
    pub const DEFAULT_EPS: f64 = 1e-5;
    pub const DEFAULT_STAT_MOMENTUM: f64 = 0.1;

    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Tensor::full(&[channels], 1.0),
            beta: Tensor::zeros(&[channels]),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::full(&[channels], 1.0),
            eps: Self::DEFAULT_EPS,
            stat_momentum: Self::DEFAULT_STAT_MOMENTUM,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }
}

/// Values saved by [`batchnorm`] for the backward pass.
#[derive(Clone, Debug)]
pub struct BatchNormCache {
    mode: NormMode,
    normalized: Tensor,
    inv_std: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct BatchNormGrads {
    pub input: Tensor,
    pub gamma: Tensor,
    pub beta: Tensor,
}

/// Batch normalization over `[B, C, H, W]`.
///
/// Train mode uses the biased batch variance (divide by `B*H*W`) and blends the
/// batch statistics into the running statistics with `stat_momentum`.
pub fn batchnorm(
    input: &Tensor,
    state: &mut BatchNormState,
    mode: NormMode,
) -> Result<(Tensor, BatchNormCache)> {
    let [b, c, h, w] = input.dims4("batchnorm")?;
    if state.channels() != c
        || state.beta.len() != c
        || state.running_mean.len() != c
        || state.running_var.len() != c
    {
        return Err(Error::ShapeMismatch {
            op: "batchnorm",
            left: input.shape().to_vec(),
            right: state.gamma.shape().to_vec(),
        });
    }
    let plane = h * w;
    let count = b * plane;
    if mode == NormMode::Train && count < 2 {
        return Err(Error::InvalidArgument(format!(
            "batchnorm in train mode needs at least 2 values per channel, got {count}"
        )));
    }
    let x = input.data();
    let mut out = vec![0.0; x.len()];
    let mut normalized = vec![0.0; x.len()];
    let mut inv_std = vec![0.0; c];

    for ch in 0..c {
        let (mean, var) = match mode {
            NormMode::Train => {
                let mut sum = 0.0;
                for bi in 0..b {
                    sum += x[(bi * c + ch) * plane..][..plane].iter().sum::<f64>();
                }
                let mean = sum / count as f64;
                let mut sq = 0.0;
                for bi in 0..b {
                    sq += x[(bi * c + ch) * plane..][..plane]
                        .iter()
                        .map(|v| (v - mean) * (v - mean))
                        .sum::<f64>();
                }
                let var = sq / count as f64;
                let m = state.stat_momentum;
                let rm = &mut state.running_mean.data_mut()[ch];
                *rm = (1.0 - m) * *rm + m * mean;
                let rv = &mut state.running_var.data_mut()[ch];
                *rv = (1.0 - m) * *rv + m * var;
                (mean, var)
            }
            NormMode::Eval => (state.running_mean.data()[ch], state.running_var.data()[ch]),
        };
        let istd = 1.0 / (var + state.eps).sqrt();
        inv_std[ch] = istd;
        let gamma = state.gamma.data()[ch];
        let beta = state.beta.data()[ch];
        for bi in 0..b {
            let base = (bi * c + ch) * plane;
            for i in base..base + plane {
                let xh = (x[i] - mean) * istd;
                normalized[i] = xh;
                out[i] = gamma * xh + beta;
            }
        }
    }
    let out = Tensor::new(input.shape().to_vec(), out)?;
    out.ensure_finite("batchnorm output")?;
    Ok((
        out,
        BatchNormCache {
            mode,
            normalized: Tensor::new(input.shape().to_vec(), normalized)?,
            inv_std,
        },
    ))
}

pub fn batchnorm_backward(
    cache: &BatchNormCache,
    gamma: &Tensor,
    grad_out: &Tensor,
) -> Result<BatchNormGrads> {
    cache.normalized.expect_same_shape("batchnorm_backward", grad_out)?;
    let [b, c, h, w] = grad_out.dims4("batchnorm_backward")?;
    let plane = h * w;
    let n = (b * plane) as f64;
    let g = grad_out.data();
    let xh = cache.normalized.data();
    let mut gx = vec![0.0; g.len()];
    let mut g_gamma = vec![0.0; c];
    let mut g_beta = vec![0.0; c];

    for ch in 0..c {
        let (mut sum_g, mut sum_gx) = (0.0, 0.0);
        for bi in 0..b {
            let base = (bi * c + ch) * plane;
            for i in base..base + plane {
                sum_g += g[i];
                sum_gx += g[i] * xh[i];
            }
        }
        g_beta[ch] = sum_g;
        g_gamma[ch] = sum_gx;
        let scale = gamma.data()[ch] * cache.inv_std[ch];
        for bi in 0..b {
            let base = (bi * c + ch) * plane;
            for i in base..base + plane {
                gx[i] = match cache.mode {
                    NormMode::Train => scale * (g[i] - sum_g / n - xh[i] * sum_gx / n),
                    NormMode::Eval => scale * g[i],
                };
            }
        }
    }
    Ok(BatchNormGrads {
        input: Tensor::new(grad_out.shape().to_vec(), gx)?,
        gamma: Tensor::new(vec![c], g_gamma)?,
        beta: Tensor::new(vec![c], g_beta)?,
    })
}

pub fn relu(input: &Tensor) -> Tensor {
    input.map(|v| v.max(0.0))
}

/// Gradient of [`relu`]; the subgradient at exactly zero is taken as 0.
pub fn relu_backward(input: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    input.zip_map(grad_out, |x, g| if x > 0.0 { g } else { 0.0 })
}

pub fn sigmoid(input: &Tensor) -> Tensor {
    input.map(|v| 1.0 / (1.0 + (-v).exp()))
}

/// Gradient of [`sigmoid`] expressed through its output.
pub fn sigmoid_backward(output: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    output.zip_map(grad_out, |s, g| g * s * (1.0 - s))
}
