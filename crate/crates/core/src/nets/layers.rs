//! Layer primitives over candle tensors. Every layer borrows its tensors
//! from a [`ParamStore`](super::ParamStore) built by a
//! [`ParamBuilder`](super::ParamBuilder), so optimizer updates to the store
//! are visible to the layer.

use candle_core::{Tensor, Var, D};

use super::params::{Init, ParamBuilder};
use super::Result;

/// Forward-pass mode. `Train` normalizes with batch statistics and updates
/// running statistics; `Eval` uses the running statistics only.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone)]
pub struct Linear {
    weight: Tensor,
    bias: Tensor,
}

impl Linear {
    pub fn new(b: &mut ParamBuilder, name: &str, inputs: usize, outputs: usize) -> Result<Self> {
        b.scoped(name, |b| {
            Ok(Self {
                weight: b.param(
                    "weight",
                    &[outputs, inputs],
                    Init::Uniform { fan_in: inputs },
                )?,
                bias: b.param("bias", &[outputs], Init::Uniform { fan_in: inputs })?,
            })
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(x.matmul(&self.weight.t()?)?.broadcast_add(&self.bias)?)
    }

    pub fn in_features(&self) -> usize {
        self.weight.dims()[1]
    }

    pub fn bias(&self) -> &Tensor {
        &self.bias
    }
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    weight: Tensor,
    bias: Option<Tensor>,
    stride: usize,
    padding: usize,
    groups: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct ConvOpts {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
    pub bias: bool,
}

impl ConvOpts {
    pub fn new(kernel: usize, stride: usize, padding: usize) -> Self {
        Self {
            kernel,
            stride,
            padding,
            groups: 1,
            bias: false,
        }
    }

    pub fn groups(self, groups: usize) -> Self {
        Self { groups, ..self }
    }

    pub fn with_bias(self) -> Self {
        Self { bias: true, ..self }
    }
}

impl Conv2d {
    pub fn new(
        b: &mut ParamBuilder,
        name: &str,
        cin: usize,
        cout: usize,
        o: ConvOpts,
    ) -> Result<Self> {
        let per_group = cin / o.groups;
        let fan_in = per_group * o.kernel * o.kernel;
        b.scoped(name, |b| {
            Ok(Self {
                weight: b.param(
                    "weight",
                    &[cout, per_group, o.kernel, o.kernel],
                    Init::HeNormal { fan_in },
                )?,
                bias: if o.bias {
                    Some(b.param("bias", &[cout], Init::Const(0.0))?)
                } else {
                    None
                },
                stride: o.stride,
                padding: o.padding,
                groups: o.groups,
            })
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = x.conv2d(&self.weight, self.padding, self.stride, 1, self.groups)?;
        add_channel_bias(y, self.bias.as_ref())
    }

    pub fn weight(&self) -> &Tensor {
        &self.weight
    }
}

fn add_channel_bias(y: Tensor, bias: Option<&Tensor>) -> Result<Tensor> {
    match bias {
        None => Ok(y),
        Some(b) => {
            let mut shape = vec![1; y.rank()];
            shape[1] = b.dims()[0];
            Ok(y.broadcast_add(&b.reshape(shape)?)?)
        }
    }
}

/// Transposed convolution; kernel layout is (in, out, k, k).
#[derive(Debug, Clone)]
pub struct ConvTranspose2d {
    weight: Tensor,
    bias: Tensor,
    stride: usize,
    padding: usize,
}

impl ConvTranspose2d {
    pub fn new(
        b: &mut ParamBuilder,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Result<Self> {
        // Each output pixel sees roughly cin * (k / stride)^2 inputs.
        let fan_in = (cin * kernel * kernel / (stride * stride)).max(1);
        b.scoped(name, |b| {
            Ok(Self {
                weight: b.param(
                    "weight",
                    &[cin, cout, kernel, kernel],
                    Init::HeNormal { fan_in },
                )?,
                bias: b.param("bias", &[cout], Init::Const(0.0))?,
                stride,
                padding,
            })
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = x.conv_transpose2d(&self.weight, self.padding, 0, self.stride, 1)?;
        add_channel_bias(y, Some(&self.bias))
    }
}

/// Per-channel k x k convolution computed from stacked shifted views, which
/// avoids one convolution call per channel.
#[derive(Debug, Clone)]
pub struct DepthwiseConv2d {
    weight: Tensor,
    kernel: usize,
    stride: usize,
}

impl DepthwiseConv2d {
    pub fn new(
        b: &mut ParamBuilder,
        name: &str,
        channels: usize,
        kernel: usize,
        stride: usize,
    ) -> Result<Self> {
        b.scoped(name, |b| {
            Ok(Self {
                weight: b.param(
                    "weight",
                    &[channels, kernel * kernel],
                    Init::HeNormal {
                        fan_in: kernel * kernel,
                    },
                )?,
                kernel,
                stride,
            })
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let k = self.kernel;
        let pad = k / 2;
        let x = x.pad_with_zeros(2, pad, pad)?.pad_with_zeros(3, pad, pad)?;
        let (n, c, hp, wp) = x.dims4()?;
        let (hf, wf) = (hp + 1 - k, wp + 1 - k);
        let mut taps = Vec::with_capacity(k * k);
        for i in 0..k {
            for j in 0..k {
                taps.push(x.narrow(2, i, hf)?.narrow(3, j, wf)?);
            }
        }
        let stacked = Tensor::stack(&taps, 2)?;
        let w = self.weight.reshape((1, c, k * k, 1, 1))?;
        let y = stacked.broadcast_mul(&w)?.sum(2)?;
        if self.stride == 1 {
            return Ok(y);
        }
        let rows: Vec<u32> = (0..hf).step_by(self.stride).map(|v| v as u32).collect();
        let cols: Vec<u32> = (0..wf).step_by(self.stride).map(|v| v as u32).collect();
        let rows = Tensor::from_vec(rows, (hf.div_ceil(self.stride),), y.device())?;
        let cols = Tensor::from_vec(cols, (wf.div_ceil(self.stride),), y.device())?;
        debug_assert_eq!(y.dims4()?.0, n);
        Ok(y.index_select(&rows, 2)?.index_select(&cols, 3)?)
    }
}

/// Volumetric convolution over (N, C, D, H, W). Depth taps are folded into
/// the channel axis so one 2-D convolution evaluates the whole kernel.
#[derive(Debug, Clone)]
pub struct Conv3d {
    weight: Tensor,
    kernel: (usize, usize),
    stride: (usize, usize),
    padding: (usize, usize),
}

impl Conv3d {
    /// `kernel`, `stride` and `padding` are (depth, in-plane).
    pub fn new(
        b: &mut ParamBuilder,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: (usize, usize),
        stride: (usize, usize),
        padding: (usize, usize),
    ) -> Result<Self> {
        let fan_in = cin * kernel.0 * kernel.1 * kernel.1;
        b.scoped(name, |b| {
            Ok(Self {
                weight: b.param(
                    "weight",
                    &[cout, cin, kernel.0, kernel.1, kernel.1],
                    Init::HeNormal { fan_in },
                )?,
                kernel,
                stride,
                padding,
            })
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (n, c, d, _, _) = x.dims5()?;
        let (kd, kh) = self.kernel;
        let (sd, sh) = self.stride;
        let (pd, ph) = self.padding;
        let x = x.pad_with_zeros(2, pd, pd)?;
        let d_out = (d + 2 * pd - kd) / sd + 1;
        let mut taps = Vec::with_capacity(kd);
        for t in 0..kd {
            let idx: Vec<u32> = (0..d_out).map(|o| (t + sd * o) as u32).collect();
            let idx = Tensor::from_vec(idx, (d_out,), x.device())?;
            taps.push(x.index_select(&idx, 2)?);
        }
        // (N, C, Do, kd, H, W) -> (N, Do, C, kd, H, W) -> (N*Do, C*kd, H, W)
        let stacked = Tensor::stack(&taps, 3)?
            .permute((0, 2, 1, 3, 4, 5))?
            .contiguous()?;
        let (h, w) = (stacked.dims()[4], stacked.dims()[5]);
        let planes = stacked.reshape((n * d_out, c * kd, h, w))?;
        let cout = self.weight.dims()[0];
        let kernel = self.weight.reshape((cout, c * kd, kh, kh))?;
        let y = planes.conv2d(&kernel, ph, sh, 1, 1)?;
        let (_, _, ho, wo) = y.dims4()?;
        Ok(y.reshape((n, d_out, cout, ho, wo))?
            .permute((0, 2, 1, 3, 4))?
            .contiguous()?)
    }
}

/// Batch normalization over channel axis 1 for 2-D and 3-D feature maps.
#[derive(Debug, Clone)]
pub struct BatchNorm {
    gamma: Tensor,
    beta: Tensor,
    running_mean: Var,
    running_var: Var,
    momentum: f64,
    eps: f64,
}

impl BatchNorm {
    pub fn new(b: &mut ParamBuilder, name: &str, channels: usize) -> Result<Self> {
        b.scoped(name, |b| {
            Ok(Self {
                gamma: b.param("weight", &[channels], Init::Const(1.0))?,
                beta: b.param("bias", &[channels], Init::Const(0.0))?,
                running_mean: b.buffer("running_mean", &[channels], 0.0)?,
                running_var: b.buffer("running_var", &[channels], 1.0)?,
                momentum: 0.1,
                eps: 1e-5,
            })
        })
    }

    pub fn forward(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let dims = x.dims().to_vec();
        let (n, c) = (dims[0], dims[1]);
        let x3 = x.reshape((n, c, ()))?;
        let (mean, var) = match mode {
            Mode::Train => {
                let mean = x3.mean_keepdim(2)?.mean_keepdim(0)?;
                let centered = x3.broadcast_sub(&mean)?;
                let var = centered.sqr()?.mean_keepdim(2)?.mean_keepdim(0)?;
                let count = (x3.elem_count() / c) as f64;
                let unbiased = if count > 1.0 {
                    count / (count - 1.0)
                } else {
                    1.0
                };
                let m = self.momentum;
                let new_mean = ((self.running_mean.as_tensor() * (1.0 - m))?
                    + (mean.detach().flatten_all()? * m)?)?;
                let new_var = ((self.running_var.as_tensor() * (1.0 - m))?
                    + (var.detach().flatten_all()? * (m * unbiased))?)?;
                self.running_mean.set(&new_mean)?;
                self.running_var.set(&new_var)?;
                (mean, var)
            }
            Mode::Eval => (
                self.running_mean.as_tensor().reshape((1, c, 1))?,
                self.running_var.as_tensor().reshape((1, c, 1))?,
            ),
        };
        let xhat = x3
            .broadcast_sub(&mean)?
            .broadcast_div(&(var + self.eps)?.sqrt()?)?;
        let y = xhat
            .broadcast_mul(&self.gamma.reshape((1, c, 1))?)?
            .broadcast_add(&self.beta.reshape((1, c, 1))?)?;
        Ok(y.reshape(dims)?)
    }
}

pub fn leaky_relu(x: &Tensor, slope: f64) -> Result<Tensor> {
    Ok(x.maximum(&(x * slope)?)?)
}

fn strided(len: usize, start: usize, count: usize, device: &candle_core::Device) -> Result<Tensor> {
    let idx: Vec<u32> = (0..count).map(|k| (start + 2 * k) as u32).collect();
    debug_assert!(idx.last().is_none_or(|&l| (l as usize) < len));
    Ok(Tensor::from_vec(idx, (count,), device)?)
}

/// 3x3 stride-2 max pooling with one pixel of padding, as the elementwise
/// maximum of nine strided views. Only valid on non-negative inputs (zero
/// padding stands in for -inf).
pub fn max_pool_3x3_s2(x: &Tensor) -> Result<Tensor> {
    let (_, _, h, w) = x.dims4()?;
    let (ho, wo) = ((h - 1) / 2 + 1, (w - 1) / 2 + 1);
    let padded = x.pad_with_zeros(2, 1, 1)?.pad_with_zeros(3, 1, 1)?;
    let mut out: Option<Tensor> = None;
    for i in 0..3 {
        let rows = padded.index_select(&strided(h + 2, i, ho, x.device())?, 2)?;
        for j in 0..3 {
            let view = rows.index_select(&strided(w + 2, j, wo, x.device())?, 3)?;
            out = Some(match out {
                None => view,
                Some(acc) => acc.maximum(&view)?,
            });
        }
    }
    Ok(out.expect("nine views"))
}

/// Mean over every axis after the channel axis.
pub fn global_avg_pool(x: &Tensor) -> Result<Tensor> {
    Ok(x.flatten_from(2)?.mean(D::Minus1)?)
}
