//! Residual encoders: 18-layer basic-block networks in 2-D and 3-D, and the
//! 50-layer bottleneck network with grouped 3x3 convolutions.

use candle_core::Tensor;

use super::layers::{
    global_avg_pool, max_pool_3x3_s2, BatchNorm, Conv2d, Conv3d, ConvOpts, Linear, Mode,
};
use super::params::ParamBuilder;
use super::spec::{Family, NetworkSpec};
use super::Result;

#[derive(Debug, Clone)]
enum Conv {
    Flat(Conv2d),
    Volumetric(Conv3d),
}

impl Conv {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        match self {
            Conv::Flat(c) => c.forward(x),
            Conv::Volumetric(c) => c.forward(x),
        }
    }
}

/// Convolution + batch norm pair.
#[derive(Debug, Clone)]
struct ConvBn {
    conv: Conv,
    bn: BatchNorm,
}

impl ConvBn {
    fn flat(
        b: &mut ParamBuilder,
        name: &str,
        cin: usize,
        cout: usize,
        opts: ConvOpts,
    ) -> Result<Self> {
        b.scoped(name, |b| {
            Ok(Self {
                conv: Conv::Flat(Conv2d::new(b, "conv", cin, cout, opts)?),
                bn: BatchNorm::new(b, "bn", cout)?,
            })
        })
    }

    /// `kernel`, `stride` and `padding` are (depth, in-plane) pairs.
    fn volumetric(
        b: &mut ParamBuilder,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: (usize, usize),
        stride: (usize, usize),
        padding: (usize, usize),
    ) -> Result<Self> {
        b.scoped(name, |b| {
            Ok(Self {
                conv: Conv::Volumetric(Conv3d::new(b, "conv", cin, cout, kernel, stride, padding)?),
                bn: BatchNorm::new(b, "bn", cout)?,
            })
        })
    }

    fn forward(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        self.bn.forward(&self.conv.forward(x)?, mode)
    }
}

#[derive(Debug, Clone)]
enum Block {
    Basic {
        a: ConvBn,
        b: ConvBn,
        shortcut: Option<ConvBn>,
    },
    Bottleneck {
        reduce: ConvBn,
        grouped: ConvBn,
        expand: ConvBn,
        shortcut: Option<ConvBn>,
    },
}

impl Block {
    fn basic(
        bld: &mut ParamBuilder,
        name: &str,
        cin: usize,
        cout: usize,
        stride: usize,
        volumetric: bool,
    ) -> Result<Self> {
        bld.scoped(name, |bld| {
            let needs_shortcut = stride != 1 || cin != cout;
            if volumetric {
                Ok(Block::Basic {
                    a: ConvBn::volumetric(bld, "a", cin, cout, (3, 3), (stride, stride), (1, 1))?,
                    b: ConvBn::volumetric(bld, "b", cout, cout, (3, 3), (1, 1), (1, 1))?,
                    shortcut: if needs_shortcut {
                        Some(ConvBn::volumetric(
                            bld,
                            "shortcut",
                            cin,
                            cout,
                            (1, 1),
                            (stride, stride),
                            (0, 0),
                        )?)
                    } else {
                        None
                    },
                })
            } else {
                Ok(Block::Basic {
                    a: ConvBn::flat(bld, "a", cin, cout, ConvOpts::new(3, stride, 1))?,
                    b: ConvBn::flat(bld, "b", cout, cout, ConvOpts::new(3, 1, 1))?,
                    shortcut: if needs_shortcut {
                        Some(ConvBn::flat(
                            bld,
                            "shortcut",
                            cin,
                            cout,
                            ConvOpts::new(1, stride, 0),
                        )?)
                    } else {
                        None
                    },
                })
            }
        })
    }

    fn bottleneck(
        bld: &mut ParamBuilder,
        name: &str,
        cin: usize,
        width: usize,
        cout: usize,
        stride: usize,
        groups: usize,
    ) -> Result<Self> {
        bld.scoped(name, |bld| {
            Ok(Block::Bottleneck {
                reduce: ConvBn::flat(bld, "reduce", cin, width, ConvOpts::new(1, 1, 0))?,
                grouped: ConvBn::flat(
                    bld,
                    "grouped",
                    width,
                    width,
                    ConvOpts::new(3, stride, 1).groups(groups),
                )?,
                expand: ConvBn::flat(bld, "expand", width, cout, ConvOpts::new(1, 1, 0))?,
                shortcut: if stride != 1 || cin != cout {
                    Some(ConvBn::flat(
                        bld,
                        "shortcut",
                        cin,
                        cout,
                        ConvOpts::new(1, stride, 0),
                    )?)
                } else {
                    None
                },
            })
        })
    }

    fn forward(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let (body, shortcut) = match self {
            Block::Basic { a, b, shortcut } => {
                (b.forward(&a.forward(x, mode)?.relu()?, mode)?, shortcut)
            }
            Block::Bottleneck {
                reduce,
                grouped,
                expand,
                shortcut,
            } => {
                let h = reduce.forward(x, mode)?.relu()?;
                let h = grouped.forward(&h, mode)?.relu()?;
                (expand.forward(&h, mode)?, shortcut)
            }
        };
        let skip = match shortcut {
            Some(s) => s.forward(x, mode)?,
            None => x.clone(),
        };
        Ok((body + skip)?.relu()?)
    }
}

/// Stem, four residual stages, global average pooling and (when the pooled
/// width differs from the latent size) an affine projection.
#[derive(Debug, Clone)]
pub struct ResidualEncoder {
    stem: ConvBn,
    volumetric: bool,
    blocks: Vec<Block>,
    projection: Option<Linear>,
}

impl ResidualEncoder {
    pub fn new(b: &mut ParamBuilder, spec: &NetworkSpec) -> Result<Self> {
        let (slices, _, _) = spec.input_shape;
        let w = spec.width();
        let mut blocks = Vec::new();
        let (stem, volumetric, features) = match spec.family {
            Family::Residual18 | Family::Residual18_3d => {
                let volumetric = spec.family == Family::Residual18_3d;
                let stem = if volumetric {
                    ConvBn::volumetric(b, "stem", 1, w, (3, 7), (1, 2), (1, 3))?
                } else {
                    ConvBn::flat(b, "stem", slices, w, ConvOpts::new(7, 2, 3))?
                };
                let mut cin = w;
                for stage in 0..4 {
                    let cout = w << stage;
                    for i in 0..2 {
                        let stride = if stage > 0 && i == 0 { 2 } else { 1 };
                        let name = format!("stage{}.{i}", stage + 1);
                        blocks.push(Block::basic(b, &name, cin, cout, stride, volumetric)?);
                        cin = cout;
                    }
                }
                (stem, volumetric, cin)
            }
            Family::GroupedResidual50 => {
                let stem = ConvBn::flat(b, "stem", slices, w, ConvOpts::new(7, 2, 3))?;
                let mut cin = w;
                for (stage, repeats) in [3, 4, 6, 3].into_iter().enumerate() {
                    let planes = w << stage;
                    let width = spec.grouped_widths()[stage];
                    for i in 0..repeats {
                        let stride = if stage > 0 && i == 0 { 2 } else { 1 };
                        let name = format!("stage{}.{i}", stage + 1);
                        blocks.push(Block::bottleneck(
                            b,
                            &name,
                            cin,
                            width,
                            4 * planes,
                            stride,
                            spec.cardinality,
                        )?);
                        cin = 4 * planes;
                    }
                }
                (stem, false, cin)
            }
            other => unreachable!("{other} is not a residual family"),
        };
        let projection = if features == spec.latent() {
            None
        } else {
            Some(Linear::new(b, "projection", features, spec.latent())?)
        };
        Ok(Self {
            stem,
            volumetric,
            blocks,
            projection,
        })
    }

    /// `x` is (N, S, H, W); the 3-D family treats S as depth.
    pub fn forward(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let mut h = if self.volumetric {
            self.stem.forward(&x.unsqueeze(1)?, mode)?.relu()?
        } else {
            max_pool_3x3_s2(&self.stem.forward(x, mode)?.relu()?)?
        };
        for block in &self.blocks {
            h = block.forward(&h, mode)?;
        }
        let pooled = global_avg_pool(&h)?;
        match &self.projection {
            Some(p) => p.forward(&pooled),
            None => Ok(pooled),
        }
    }
}
