use serde::{Deserialize, Serialize};

use super::{NetError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Residual18,
    CompoundB3,
    GroupedResidual50,
    #[serde(rename = "residual18_3d")]
    Residual18_3d,
    Autoencoder,
    Discriminator,
}

impl Family {
    pub const ENCODERS: [Family; 4] = [
        Family::Residual18,
        Family::CompoundB3,
        Family::GroupedResidual50,
        Family::Residual18_3d,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Family::Residual18 => "residual18",
            Family::CompoundB3 => "compound_b3",
            Family::GroupedResidual50 => "grouped_residual50",
            Family::Residual18_3d => "residual18_3d",
            Family::Autoencoder => "autoencoder",
            Family::Discriminator => "discriminator",
        }
    }

    fn default_width(self) -> usize {
        match self {
            Family::CompoundB3 => 40,
            Family::Autoencoder => 32,
            _ => 64,
        }
    }

    fn default_latent(self) -> usize {
        match self {
            Family::Autoencoder => 128,
            _ => 512,
        }
    }
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Declarative description of one network. Optional fields fall back to
/// per-family defaults, see the accessor methods.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    pub family: Family,
    /// (slices, height, width) of one input sample. Ignored by the
    /// discriminator, whose input is a latent vector.
    #[serde(default = "default_input_shape")]
    pub input_shape: (usize, usize, usize),
    #[serde(default)]
    pub latent_dim: Option<usize>,
    /// Group count of the grouped bottleneck convolutions.
    #[serde(default = "default_cardinality")]
    pub cardinality: usize,
    /// Channel width of the first stage (stem width for `compound_b3`, first
    /// convolution width for `autoencoder`).
    #[serde(default)]
    pub base_width: Option<usize>,
    /// Number of stride-2 stages of the autoencoder.
    #[serde(default = "default_downsamples")]
    pub downsamples: usize,
    /// Autoencoder only: emit (mean, log-variance) instead of a point code.
    #[serde(default)]
    pub variational: bool,
    /// Hidden widths of the discriminator perceptron.
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    /// Load externally pretrained weights. No weights are bundled, so `true`
    /// is rejected.
    #[serde(default)]
    pub pretrained: bool,
    #[serde(default)]
    pub param_seed: u64,
}

fn default_input_shape() -> (usize, usize, usize) {
    (10, 256, 256)
}

fn default_cardinality() -> usize {
    32
}

fn default_downsamples() -> usize {
    5
}

fn default_hidden() -> Vec<usize> {
    vec![512, 256]
}

impl NetworkSpec {
    pub fn new(family: Family, input_shape: (usize, usize, usize)) -> Self {
        Self {
            family,
            input_shape,
            latent_dim: None,
            cardinality: default_cardinality(),
            base_width: None,
            downsamples: default_downsamples(),
            variational: false,
            hidden: default_hidden(),
            pretrained: false,
            param_seed: 0,
        }
    }

    pub fn discriminator(latent_dim: usize) -> Self {
        Self::new(Family::Discriminator, default_input_shape()).with_latent(latent_dim)
    }

    pub fn with_latent(mut self, latent_dim: usize) -> Self {
        self.latent_dim = Some(latent_dim);
        self
    }

    pub fn with_width(mut self, base_width: usize) -> Self {
        self.base_width = Some(base_width);
        self
    }

    pub fn with_cardinality(mut self, cardinality: usize) -> Self {
        self.cardinality = cardinality;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.param_seed = seed;
        self
    }

    pub fn with_downsamples(mut self, downsamples: usize) -> Self {
        self.downsamples = downsamples;
        self
    }

    pub fn variational(mut self, variational: bool) -> Self {
        self.variational = variational;
        self
    }

    pub fn latent(&self) -> usize {
        self.latent_dim
            .unwrap_or_else(|| self.family.default_latent())
    }

    pub fn width(&self) -> usize {
        self.base_width
            .unwrap_or_else(|| self.family.default_width())
    }

    /// Bottleneck (grouped) widths of the four grouped_residual50 stages.
    pub fn grouped_widths(&self) -> [usize; 4] {
        let w = self.width();
        [2 * w, 4 * w, 8 * w, 16 * w]
    }

    pub fn validate(&self) -> Result<()> {
        let err = |msg: String| Err(NetError::Spec(format!("{}: {msg}", self.family)));
        if self.pretrained {
            return err("pretrained weights are not available; train from scratch".into());
        }
        if self.latent() == 0 {
            return err("latent_dim must be positive".into());
        }
        if self.family == Family::Discriminator {
            if self.hidden.contains(&0) {
                return err("hidden widths must be positive".into());
            }
            return Ok(());
        }
        let (s, h, w) = self.input_shape;
        if s == 0 {
            return err("slice count must be positive".into());
        }
        if self.width() == 0 {
            return err("base_width must be positive".into());
        }
        match self.family {
            Family::Residual18 | Family::CompoundB3 | Family::GroupedResidual50 => {
                if h < 32 || w < 32 {
                    return err(format!("input {h}x{w} below the 32x32 minimum"));
                }
            }
            Family::Residual18_3d => {
                if h < 16 || w < 16 {
                    return err(format!("input {h}x{w} below the 16x16 minimum"));
                }
            }
            Family::Autoencoder => {
                if h != w || !h.is_power_of_two() || h < 32 {
                    return err(format!(
                        "input {h}x{w} must be square, a power of two and at least 32"
                    ));
                }
                if self.downsamples == 0 || (1usize << self.downsamples.min(63)) > h {
                    return err(format!(
                        "{} downsamples do not fit a {h}x{w} input",
                        self.downsamples
                    ));
                }
            }
            Family::Discriminator => unreachable!(),
        }
        if self.family == Family::GroupedResidual50 {
            let g = self.cardinality;
            if g == 0 {
                return err("cardinality must be at least 1".into());
            }
            if let Some(bad) = self.grouped_widths().into_iter().find(|c| c % g != 0) {
                return err(format!(
                    "cardinality {g} does not divide bottleneck width {bad}"
                ));
            }
        }
        Ok(())
    }
}
