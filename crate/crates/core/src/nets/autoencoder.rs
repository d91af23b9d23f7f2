//! Convolutional autoencoder: stride-2 convolution encoder, affine
//! bottleneck, mirrored transposed-convolution decoder with a Tanh output.

use candle_core::Tensor;

use super::layers::{leaky_relu, Conv2d, ConvOpts, ConvTranspose2d, Linear};
use super::params::ParamBuilder;
use super::spec::NetworkSpec;
use super::Result;

const SLOPE: f64 = 0.2;

fn stage_channels(spec: &NetworkSpec) -> Vec<usize> {
    (0..spec.downsamples).map(|i| spec.width() << i).collect()
}

/// Spatial side of the feature map entering the bottleneck.
pub fn bottleneck_side(spec: &NetworkSpec) -> usize {
    spec.input_shape.1 >> spec.downsamples
}

#[derive(Debug, Clone)]
pub struct ConvEncoder {
    convs: Vec<Conv2d>,
    mean: Linear,
    log_var: Option<Linear>,
}

impl ConvEncoder {
    pub fn new(b: &mut ParamBuilder, spec: &NetworkSpec) -> Result<Self> {
        let channels = stage_channels(spec);
        let mut convs = Vec::new();
        let mut cin = spec.input_shape.0;
        for (i, &c) in channels.iter().enumerate() {
            convs.push(Conv2d::new(
                b,
                &format!("down{i}"),
                cin,
                c,
                ConvOpts::new(4, 2, 1).with_bias(),
            )?);
            cin = c;
        }
        let side = bottleneck_side(spec);
        let flat = cin * side * side;
        Ok(Self {
            convs,
            mean: Linear::new(b, "mean", flat, spec.latent())?,
            log_var: if spec.variational {
                Some(Linear::new(b, "log_var", flat, spec.latent())?)
            } else {
                None
            },
        })
    }

    /// Feature map before flattening, (N, C, H / 2^D, W / 2^D).
    pub fn features(&self, x: &Tensor) -> Result<Tensor> {
        let mut h = x.clone();
        for conv in &self.convs {
            h = leaky_relu(&conv.forward(&h)?, SLOPE)?;
        }
        Ok(h)
    }

    /// Point code (or posterior mean for the variational variant) and, for
    /// the variational variant, the log-variance.
    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, Option<Tensor>)> {
        let flat = self.features(x)?.flatten_from(1)?;
        let mean = self.mean.forward(&flat)?;
        let log_var = match &self.log_var {
            Some(l) => Some(l.forward(&flat)?),
            None => None,
        };
        Ok((mean, log_var))
    }
}

#[derive(Debug, Clone)]
pub struct ConvDecoder {
    expand: Linear,
    deconvs: Vec<ConvTranspose2d>,
    bottleneck: (usize, usize),
}

impl ConvDecoder {
    pub fn new(b: &mut ParamBuilder, spec: &NetworkSpec) -> Result<Self> {
        let channels = stage_channels(spec);
        let side = bottleneck_side(spec);
        let last = *channels.last().expect("validated spec has downsamples");
        let expand = Linear::new(b, "expand", spec.latent(), last * side * side)?;
        let mut targets: Vec<usize> = channels.iter().rev().skip(1).copied().collect();
        targets.push(spec.input_shape.0);
        let mut deconvs = Vec::new();
        let mut cin = last;
        for (i, &c) in targets.iter().enumerate() {
            deconvs.push(ConvTranspose2d::new(b, &format!("up{i}"), cin, c, 4, 2, 1)?);
            cin = c;
        }
        Ok(Self {
            expand,
            deconvs,
            bottleneck: (last, side),
        })
    }

    pub fn forward(&self, z: &Tensor) -> Result<Tensor> {
        let n = z.dims()[0];
        let (c, side) = self.bottleneck;
        let mut h = leaky_relu(&self.expand.forward(z)?, SLOPE)?.reshape((n, c, side, side))?;
        let last = self.deconvs.len() - 1;
        for (i, deconv) in self.deconvs.iter().enumerate() {
            h = deconv.forward(&h)?;
            h = if i == last {
                h.tanh()?
            } else {
                leaky_relu(&h, SLOPE)?
            };
        }
        Ok(h)
    }
}
