//! Network builders: four classifier encoder families, a two-class head,
//! convolutional autoencoders (point-code and variational) and a latent
//! domain discriminator.
//!
//! Every network owns a [`ParamStore`] of named candle variables. Encoders
//! take (N, S, H, W) inputs and return (N, latent) codes.

mod autoencoder;
mod checkpoint;
mod compound;
pub mod layers;
mod params;
mod residual;
mod spec;

use std::path::PathBuf;

use candle_core::{DType, Tensor};

pub use autoencoder::bottleneck_side;
pub use checkpoint::{
    loss_curve_digest, Checkpoint, TrainingMeta, CHECKPOINT_MAGIC, FORMAT_VERSION,
};
pub use layers::Mode;
pub use params::{Entry, EntryKind, Init, ParamBuilder, ParamStore};
pub use spec::{Family, NetworkSpec};

use autoencoder::{ConvDecoder, ConvEncoder};
use compound::CompoundEncoder;
use layers::{leaky_relu, Linear};
use residual::ResidualEncoder;

#[derive(Debug, thiserror::Error)]
pub enum NetError {
    #[error("invalid network spec: {0}")]
    Spec(String),
    #[error("tensor error: {0}")]
    Candle(#[from] candle_core::Error),
    #[error("shape or name mismatch: {0}")]
    Mismatch(String),
    #[error("corrupt checkpoint {path}: {reason}")]
    Checkpoint { path: PathBuf, reason: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, NetError>;

/// Seed offset for the second store of two-part networks, so the decoder
/// does not replay the encoder's random stream.
const DECODER_SEED_OFFSET: u64 = 0x9e37_79b9;

#[derive(Debug, Clone)]
enum EncoderBody {
    Residual(ResidualEncoder),
    Compound(CompoundEncoder),
    Conv(ConvEncoder),
}

/// Maps a slice stack batch (N, S, H, W) to latent vectors (N, latent_dim).
#[derive(Debug, Clone)]
pub struct Encoder {
    spec: NetworkSpec,
    dtype: DType,
    store: ParamStore,
    body: EncoderBody,
}

fn encoder_body(b: &mut ParamBuilder, spec: &NetworkSpec) -> Result<EncoderBody> {
    Ok(match spec.family {
        Family::Residual18 | Family::GroupedResidual50 | Family::Residual18_3d => {
            EncoderBody::Residual(ResidualEncoder::new(b, spec)?)
        }
        Family::CompoundB3 => EncoderBody::Compound(CompoundEncoder::new(b, spec)?),
        Family::Autoencoder => EncoderBody::Conv(ConvEncoder::new(b, spec)?),
        Family::Discriminator => {
            return Err(NetError::Spec(
                "discriminator is not an encoder family".into(),
            ));
        }
    })
}

pub fn build_encoder(spec: &NetworkSpec) -> Result<Encoder> {
    build_encoder_with(spec, DType::F32)
}

/// As [`build_encoder`], with an explicit parameter dtype (F64 is used for
/// finite-difference checks).
pub fn build_encoder_with(spec: &NetworkSpec, dtype: DType) -> Result<Encoder> {
    spec.validate()?;
    let mut b = ParamBuilder::new(spec.param_seed, dtype);
    let body = encoder_body(&mut b, spec)?;
    Ok(Encoder {
        spec: spec.clone(),
        dtype,
        store: b.finish(),
        body,
    })
}

impl Encoder {
    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn latent_dim(&self) -> usize {
        self.spec.latent()
    }

    /// Latent code; the posterior mean for a variational encoder.
    pub fn forward(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        match &self.body {
            EncoderBody::Residual(r) => r.forward(x, mode),
            EncoderBody::Compound(c) => c.forward(x, mode),
            EncoderBody::Conv(c) => Ok(c.forward(x)?.0),
        }
    }

    /// Mean and (variational autoencoders only) log-variance.
    pub fn forward_dist(&self, x: &Tensor, mode: Mode) -> Result<(Tensor, Option<Tensor>)> {
        match &self.body {
            EncoderBody::Conv(c) => c.forward(x),
            _ => Ok((self.forward(x, mode)?, None)),
        }
    }

    /// Independent copy with identical parameter and buffer values.
    pub fn duplicate(&self) -> Result<Encoder> {
        let copy = build_encoder_with(&self.spec, self.dtype)?;
        copy.store.copy_from(&self.store)?;
        Ok(copy)
    }
}

/// Affine map from latent vectors to two class logits.
#[derive(Debug, Clone)]
pub struct ClassifierHead {
    store: ParamStore,
    linear: Linear,
}

pub fn build_classifier_head(latent_dim: usize, seed: u64) -> Result<ClassifierHead> {
    build_classifier_head_with(latent_dim, seed, DType::F32)
}

pub fn build_classifier_head_with(
    latent_dim: usize,
    seed: u64,
    dtype: DType,
) -> Result<ClassifierHead> {
    if latent_dim == 0 {
        return Err(NetError::Spec(
            "classifier head needs latent_dim > 0".into(),
        ));
    }
    let mut b = ParamBuilder::new(seed, dtype);
    let linear = Linear::new(&mut b, "linear", latent_dim, 2)?;
    Ok(ClassifierHead {
        store: b.finish(),
        linear,
    })
}

fn check_width(z: &Tensor, expected: usize, what: &str) -> Result<()> {
    let dims = z.dims();
    if dims.len() != 2 || dims[1] != expected {
        return Err(NetError::Mismatch(format!(
            "{what} expects (N, {expected}) input, got {dims:?}"
        )));
    }
    Ok(())
}

impl ClassifierHead {
    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn forward(&self, z: &Tensor) -> Result<Tensor> {
        check_width(z, self.linear.in_features(), "classifier head")?;
        self.linear.forward(z)
    }

    pub fn bias(&self) -> &Tensor {
        self.linear.bias()
    }
}

/// Encoder followed by a two-class head.
#[derive(Debug, Clone)]
pub struct Classifier {
    pub encoder: Encoder,
    pub head: ClassifierHead,
}

pub fn build_classifier(spec: &NetworkSpec) -> Result<Classifier> {
    build_classifier_with(spec, DType::F32)
}

pub fn build_classifier_with(spec: &NetworkSpec, dtype: DType) -> Result<Classifier> {
    let encoder = build_encoder_with(spec, dtype)?;
    let head = build_classifier_head_with(
        spec.latent(),
        spec.param_seed.wrapping_add(DECODER_SEED_OFFSET),
        dtype,
    )?;
    Ok(Classifier { encoder, head })
}

impl Classifier {
    pub fn forward(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        self.head.forward(&self.encoder.forward(x, mode)?)
    }

    pub fn parts(&self) -> [(&'static str, &ParamStore); 2] {
        [
            ("encoder", self.encoder.store()),
            ("head", self.head.store()),
        ]
    }

    pub fn trainable(&self) -> Vec<candle_core::Var> {
        let mut vars = self.encoder.store().trainable();
        vars.extend(self.head.store().trainable());
        vars
    }

    pub fn checkpoint(&self, meta: TrainingMeta) -> Result<Checkpoint> {
        Checkpoint::capture(self.encoder.spec(), meta, &self.parts())
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Classifier> {
        let net = build_classifier(&ckpt.spec)?;
        for (prefix, store) in net.parts() {
            ckpt.restore(prefix, store)?;
        }
        Ok(net)
    }
}

#[derive(Debug, Clone)]
pub struct Decoder {
    store: ParamStore,
    body: ConvDecoder,
}

impl Decoder {
    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    /// Reconstruction (N, S, H, W) with every value in [-1, 1].
    pub fn forward(&self, z: &Tensor) -> Result<Tensor> {
        self.body.forward(z)
    }
}

/// Encoder and mirrored decoder of the `autoencoder` family.
#[derive(Debug, Clone)]
pub struct Autoencoder {
    pub encoder: Encoder,
    pub decoder: Decoder,
}

pub fn build_autoencoder(spec: &NetworkSpec) -> Result<Autoencoder> {
    build_autoencoder_with(spec, DType::F32)
}

pub fn build_autoencoder_with(spec: &NetworkSpec, dtype: DType) -> Result<Autoencoder> {
    if spec.family != Family::Autoencoder {
        return Err(NetError::Spec(format!(
            "{} is not the autoencoder family",
            spec.family
        )));
    }
    let encoder = build_encoder_with(spec, dtype)?;
    let mut b = ParamBuilder::new(spec.param_seed.wrapping_add(DECODER_SEED_OFFSET), dtype);
    let body = ConvDecoder::new(&mut b, spec)?;
    Ok(Autoencoder {
        encoder,
        decoder: Decoder {
            store: b.finish(),
            body,
        },
    })
}

impl Autoencoder {
    pub fn spec(&self) -> &NetworkSpec {
        self.encoder.spec()
    }

    /// Encoder feature map just before flattening into the bottleneck.
    pub fn bottleneck_features(&self, x: &Tensor) -> Result<Tensor> {
        match &self.encoder.body {
            EncoderBody::Conv(c) => c.features(x),
            _ => unreachable!("autoencoders hold a convolutional encoder"),
        }
    }

    /// Deterministic reconstruction through the latent mean.
    pub fn reconstruct(&self, x: &Tensor) -> Result<Tensor> {
        self.decoder.forward(&self.encoder.forward(x, Mode::Eval)?)
    }

    pub fn parts(&self) -> [(&'static str, &ParamStore); 2] {
        [
            ("encoder", self.encoder.store()),
            ("decoder", self.decoder.store()),
        ]
    }

    pub fn checkpoint(&self, meta: TrainingMeta) -> Result<Checkpoint> {
        Checkpoint::capture(self.spec(), meta, &self.parts())
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Autoencoder> {
        let net = build_autoencoder(&ckpt.spec)?;
        for (prefix, store) in net.parts() {
            ckpt.restore(prefix, store)?;
        }
        Ok(net)
    }
}

/// Perceptron from a latent vector to one logit, LeakyReLU(0.2) between
/// layers.
#[derive(Debug, Clone)]
pub struct Discriminator {
    spec: NetworkSpec,
    dtype: DType,
    store: ParamStore,
    layers: Vec<Linear>,
}

pub fn build_discriminator(spec: &NetworkSpec) -> Result<Discriminator> {
    build_discriminator_with(spec, DType::F32)
}

pub fn build_discriminator_with(spec: &NetworkSpec, dtype: DType) -> Result<Discriminator> {
    if spec.family != Family::Discriminator {
        return Err(NetError::Spec(format!(
            "{} is not the discriminator family",
            spec.family
        )));
    }
    spec.validate()?;
    let mut b = ParamBuilder::new(spec.param_seed, dtype);
    let layers = discriminator_layers(&mut b, spec)?;
    Ok(Discriminator {
        spec: spec.clone(),
        dtype,
        store: b.finish(),
        layers,
    })
}

fn discriminator_layers(b: &mut ParamBuilder, spec: &NetworkSpec) -> Result<Vec<Linear>> {
    let mut widths = vec![spec.latent()];
    widths.extend(&spec.hidden);
    widths.push(1);
    widths
        .windows(2)
        .enumerate()
        .map(|(i, w)| Linear::new(b, &format!("fc{i}"), w[0], w[1]))
        .collect()
}

impl Discriminator {
    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    /// (N, latent) -> (N,) logits.
    pub fn forward(&self, z: &Tensor) -> Result<Tensor> {
        check_width(z, self.spec.latent(), "discriminator")?;
        let mut h = z.clone();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(&h)?;
            if i != last {
                h = leaky_relu(&h, 0.2)?;
            }
        }
        Ok(h.squeeze(1)?)
    }

    pub fn duplicate(&self) -> Result<Discriminator> {
        let copy = build_discriminator_with(&self.spec, self.dtype)?;
        copy.store.copy_from(&self.store)?;
        Ok(copy)
    }
}

/// Exact number of trainable scalars of the network `spec` describes
/// (encoder plus decoder for autoencoders).
pub fn parameter_count(spec: &NetworkSpec) -> Result<usize> {
    spec.validate()?;
    let mut b = ParamBuilder::zeroed(DType::F32);
    match spec.family {
        Family::Discriminator => {
            discriminator_layers(&mut b, spec)?;
        }
        Family::Autoencoder => {
            encoder_body(&mut b, spec)?;
            b.scoped("decoder", |b| ConvDecoder::new(b, spec).map(drop))?;
        }
        _ => {
            encoder_body(&mut b, spec)?;
        }
    }
    Ok(b.finish().parameter_count())
}

/// Parameter count of a two-logit head on `latent_dim` features.
pub fn head_parameter_count(latent_dim: usize) -> Result<usize> {
    Ok(build_classifier_head(latent_dim, 0)?
        .store()
        .parameter_count())
}
