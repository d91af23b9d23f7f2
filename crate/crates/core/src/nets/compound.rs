//! Compound-scaled encoder at the B3 point: mobile inverted bottleneck
//! blocks with squeeze-and-excitation and swish activations.

use candle_core::Tensor;

use super::layers::{global_avg_pool, BatchNorm, Conv2d, ConvOpts, DepthwiseConv2d, Linear, Mode};
use super::params::ParamBuilder;
use super::spec::NetworkSpec;
use super::Result;

const WIDTH_MULT: f64 = 1.2;
const DEPTH_MULT: f64 = 1.4;
/// Width of the unscaled stem; `base_width` rescales relative to the B3
/// stem width of 40.
const B3_STEM: f64 = 40.0;

/// (expand ratio, kernel, stride, output channels, repeats) of the base
/// network, before compound scaling.
const STAGES: [(usize, usize, usize, usize, usize); 7] = [
    (1, 3, 1, 16, 1),
    (6, 3, 2, 24, 2),
    (6, 5, 2, 40, 2),
    (6, 3, 2, 80, 3),
    (6, 5, 1, 112, 3),
    (6, 5, 2, 192, 4),
    (6, 3, 1, 320, 1),
];

fn round_channels(c: f64, mult: f64) -> usize {
    let divisor = 8.0;
    let scaled = c * mult;
    let mut rounded = ((scaled + divisor / 2.0) / divisor).floor() * divisor;
    rounded = rounded.max(divisor);
    if rounded < 0.9 * scaled {
        rounded += divisor;
    }
    rounded as usize
}

pub(crate) fn scaled_repeats(r: usize) -> usize {
    (r as f64 * DEPTH_MULT).ceil() as usize
}

fn swish(x: &Tensor) -> Result<Tensor> {
    Ok(x.silu()?)
}

#[derive(Debug, Clone)]
struct SqueezeExcite {
    reduce: Conv2d,
    expand: Conv2d,
}

impl SqueezeExcite {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let s = x.mean_keepdim(3)?.mean_keepdim(2)?;
        let s = swish(&self.reduce.forward(&s)?)?;
        let gate = candle_nn::ops::sigmoid(&self.expand.forward(&s)?)?;
        Ok(x.broadcast_mul(&gate)?)
    }
}

#[derive(Debug, Clone)]
struct MbConv {
    expand: Option<(Conv2d, BatchNorm)>,
    depthwise: DepthwiseConv2d,
    dw_bn: BatchNorm,
    se: SqueezeExcite,
    project: Conv2d,
    project_bn: BatchNorm,
    residual: bool,
}

impl MbConv {
    fn new(
        b: &mut ParamBuilder,
        name: &str,
        cin: usize,
        cout: usize,
        expand_ratio: usize,
        kernel: usize,
        stride: usize,
    ) -> Result<Self> {
        b.scoped(name, |b| {
            let mid = cin * expand_ratio;
            let expand = if expand_ratio != 1 {
                Some((
                    Conv2d::new(b, "expand", cin, mid, ConvOpts::new(1, 1, 0))?,
                    BatchNorm::new(b, "expand_bn", mid)?,
                ))
            } else {
                None
            };
            let squeezed = (cin / 4).max(1);
            Ok(Self {
                expand,
                depthwise: DepthwiseConv2d::new(b, "depthwise", mid, kernel, stride)?,
                dw_bn: BatchNorm::new(b, "depthwise_bn", mid)?,
                se: SqueezeExcite {
                    reduce: Conv2d::new(
                        b,
                        "se_reduce",
                        mid,
                        squeezed,
                        ConvOpts::new(1, 1, 0).with_bias(),
                    )?,
                    expand: Conv2d::new(
                        b,
                        "se_expand",
                        squeezed,
                        mid,
                        ConvOpts::new(1, 1, 0).with_bias(),
                    )?,
                },
                project: Conv2d::new(b, "project", mid, cout, ConvOpts::new(1, 1, 0))?,
                project_bn: BatchNorm::new(b, "project_bn", cout)?,
                residual: stride == 1 && cin == cout,
            })
        })
    }

    fn forward(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let mut h = x.clone();
        if let Some((conv, bn)) = &self.expand {
            h = swish(&bn.forward(&conv.forward(&h)?, mode)?)?;
        }
        h = swish(&self.dw_bn.forward(&self.depthwise.forward(&h)?, mode)?)?;
        h = self.se.forward(&h)?;
        h = self.project_bn.forward(&self.project.forward(&h)?, mode)?;
        if self.residual {
            h = (h + x)?;
        }
        Ok(h)
    }
}

#[derive(Debug, Clone)]
pub struct CompoundEncoder {
    stem: Conv2d,
    stem_bn: BatchNorm,
    blocks: Vec<MbConv>,
    head: Conv2d,
    head_bn: BatchNorm,
    projection: Linear,
}

impl CompoundEncoder {
    pub fn new(b: &mut ParamBuilder, spec: &NetworkSpec) -> Result<Self> {
        let mult = WIDTH_MULT * spec.width() as f64 / B3_STEM;
        let (slices, _, _) = spec.input_shape;
        let stem_width = round_channels(32.0, mult);
        let stem = Conv2d::new(b, "stem", slices, stem_width, ConvOpts::new(3, 2, 1))?;
        let stem_bn = BatchNorm::new(b, "stem_bn", stem_width)?;
        let mut blocks = Vec::new();
        let mut cin = stem_width;
        for (stage, &(expand, kernel, stride, out, repeats)) in STAGES.iter().enumerate() {
            let cout = round_channels(out as f64, mult);
            for i in 0..scaled_repeats(repeats) {
                let name = format!("stage{}.{i}", stage + 1);
                let s = if i == 0 { stride } else { 1 };
                blocks.push(MbConv::new(b, &name, cin, cout, expand, kernel, s)?);
                cin = cout;
            }
        }
        let head_width = round_channels(1280.0, mult);
        Ok(Self {
            stem,
            stem_bn,
            blocks,
            head: Conv2d::new(b, "head", cin, head_width, ConvOpts::new(1, 1, 0))?,
            head_bn: BatchNorm::new(b, "head_bn", head_width)?,
            projection: Linear::new(b, "projection", head_width, spec.latent())?,
        })
    }

    pub fn forward(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let mut h = swish(&self.stem_bn.forward(&self.stem.forward(x)?, mode)?)?;
        for block in &self.blocks {
            h = block.forward(&h, mode)?;
        }
        h = swish(&self.head_bn.forward(&self.head.forward(&h)?, mode)?)?;
        self.projection.forward(&global_avg_pool(&h)?)
    }
}
