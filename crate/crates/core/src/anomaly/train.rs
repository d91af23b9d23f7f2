use candle_core::{DType, Device, Tensor};
use candle_nn::Optimizer;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataio::{Label, SliceStack};
use crate::nets::{
    build_autoencoder, build_discriminator, loss_curve_digest, Autoencoder, Checkpoint, Mode,
    NetworkSpec, TrainingMeta,
};
use crate::trainsup::{adam, batch_tensor, AdamConfig, Batches};

use super::losses::{adversarial_generator_loss, critic_loss, reconstruction_mse, vae_loss};
use super::{AnomalyError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReconModel {
    AdversarialAe,
    VariationalAe,
}

impl ReconModel {
    pub fn name(self) -> &'static str {
        match self {
            ReconModel::AdversarialAe => "adversarial_ae",
            ReconModel::VariationalAe => "variational_ae",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReconTrainConfig {
    pub model: ReconModel,
    pub learning_rate: f64,
    pub epochs: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    /// Weight of the per-voxel KL term; variational model only.
    #[serde(default = "default_kl_weight")]
    pub kl_weight: f64,
    /// Weight of the latent adversarial term; adversarial model only.
    #[serde(default = "default_adversarial_weight")]
    pub adversarial_weight: f64,
    /// Learning rate of the latent critic; defaults to `learning_rate`.
    #[serde(default)]
    pub critic_lr: Option<f64>,
    /// Hidden width of the two-layer latent critic.
    #[serde(default = "default_critic_hidden")]
    pub critic_hidden: usize,
    #[serde(default)]
    pub adam: AdamConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub dataset_id: String,
}

fn default_batch_size() -> usize {
    16
}

fn default_kl_weight() -> f64 {
    1.0
}

fn default_adversarial_weight() -> f64 {
    0.01
}

fn default_critic_hidden() -> usize {
    128
}

impl ReconTrainConfig {
    pub fn new(model: ReconModel, learning_rate: f64, epochs: usize) -> Self {
        Self {
            model,
            learning_rate,
            epochs,
            batch_size: default_batch_size(),
            kl_weight: default_kl_weight(),
            adversarial_weight: default_adversarial_weight(),
            critic_lr: None,
            critic_hidden: default_critic_hidden(),
            adam: AdamConfig::default(),
            seed: 0,
            dataset_id: String::new(),
        }
    }

    pub fn validate(&self, spec: &NetworkSpec) -> Result<()> {
        let bad = |m: String| Err(AnomalyError::Config(m));
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.learning_rate) || !self.critic_lr.is_none_or(positive) {
            return bad("learning rates must be positive".into());
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch_size must be at least 1".into());
        }
        if !(self.kl_weight >= 0.0 && self.adversarial_weight >= 0.0) {
            return bad("loss weights must be non-negative".into());
        }
        if self.critic_hidden == 0 {
            return bad("critic_hidden must be positive".into());
        }
        if spec.variational != (self.model == ReconModel::VariationalAe) {
            return bad(format!(
                "model {} needs a spec with variational = {}",
                self.model.name(),
                !spec.variational
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct ReconResult {
    pub autoencoder: Autoencoder,
    pub checkpoint: Checkpoint,
    /// Mean total loss per epoch.
    pub loss_curve: Vec<f64>,
    /// Mean reconstruction MSE per epoch.
    pub mse_curve: Vec<f64>,
    /// Mean latent-critic loss per epoch (adversarial model only).
    pub critic_curve: Vec<f64>,
}

fn normal_tensor(rng: &mut ChaCha8Rng, shape: (usize, usize), dtype: DType) -> Result<Tensor> {
    let values: Vec<f64> = (0..shape.0 * shape.1)
        .map(|_| StandardNormal.sample(rng))
        .collect();
    Ok(Tensor::from_vec(values, shape, &Device::Cpu)?.to_dtype(dtype)?)
}

pub(crate) fn check_shapes(stacks: &[SliceStack], spec: &NetworkSpec) -> Result<()> {
    for s in stacks {
        if s.shape() != spec.input_shape {
            return Err(AnomalyError::Shape {
                subject: s.subject_id.clone(),
                found: s.shape(),
                expected: spec.input_shape,
            });
        }
    }
    Ok(())
}

/// Trains an autoencoder on `normals`, which must all be labeled normal and
/// already mapped into [-1, 1].
pub fn train_reconstructor(
    normals: &[SliceStack],
    spec: &NetworkSpec,
    cfg: &ReconTrainConfig,
) -> Result<ReconResult> {
    cfg.validate(spec)?;
    if normals.is_empty() {
        return Err(AnomalyError::EmptyPartition("reconstructor training"));
    }
    if let Some(bad) = normals.iter().find(|s| s.label != Label::Normal) {
        return Err(AnomalyError::DementedInTraining(bad.subject_id.clone()));
    }
    check_shapes(normals, spec)?;
    let ae = build_autoencoder(spec)?;
    let mut vars = ae.encoder.store().trainable();
    vars.extend(ae.decoder.store().trainable());
    let mut opt = adam(vars, cfg.learning_rate, cfg.adam)?;
    let critic = if cfg.model == ReconModel::AdversarialAe {
        let critic_spec = NetworkSpec {
            hidden: vec![cfg.critic_hidden],
            ..NetworkSpec::discriminator(spec.latent()).with_seed(spec.param_seed.wrapping_add(1))
        };
        let critic = build_discriminator(&critic_spec)?;
        let critic_opt = adam(
            critic.store().trainable(),
            cfg.critic_lr.unwrap_or(cfg.learning_rate),
            cfg.adam,
        )?;
        Some((critic, critic_opt))
    } else {
        None
    };
    let mut critic = critic;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (mut loss_curve, mut mse_curve, mut critic_curve) = (Vec::new(), Vec::new(), Vec::new());
    for epoch in 1..=cfg.epochs {
        let batches = Batches::shuffled(normals.len(), cfg.batch_size, &mut rng);
        let (mut total, mut total_mse, mut total_critic) = (0.0, 0.0, 0.0);
        for (b, idx) in batches.iter().enumerate() {
            let items: Vec<&SliceStack> = idx.iter().map(|&i| &normals[i]).collect();
            let n = items.len();
            let x = batch_tensor(&items, DType::F32)?;
            let (loss, mse, critic_value) = match &mut critic {
                None => {
                    let eps = normal_tensor(&mut rng, (n, spec.latent()), DType::F32)?;
                    let (loss, mse) = vae_loss(&ae, &x, &eps, cfg.kl_weight)?;
                    (loss, mse, 0.0)
                }
                Some((critic, critic_opt)) => {
                    let z = ae.encoder.forward(&x, Mode::Train)?;
                    let prior = normal_tensor(&mut rng, (n, spec.latent()), DType::F32)?;
                    let c_loss = critic_loss(critic, &prior, &z.detach())?;
                    let c_value = c_loss.to_scalar::<f32>()? as f64;
                    critic_opt.backward_step(&c_loss)?;
                    let mse = reconstruction_mse(&ae.decoder.forward(&z)?, &x)?;
                    let adv = adversarial_generator_loss(critic, &z)?;
                    ((&mse + (adv * cfg.adversarial_weight)?)?, mse, c_value)
                }
            };
            let value = loss.to_scalar::<f32>()? as f64;
            if !value.is_finite() || !critic_value.is_finite() {
                log::error!("epoch {epoch} batch {b}: loss {value}, critic {critic_value}");
                return Err(AnomalyError::Divergence {
                    epoch,
                    batch: b,
                    loss: if value.is_finite() {
                        critic_value
                    } else {
                        value
                    },
                });
            }
            opt.backward_step(&loss)?;
            total += value * n as f64;
            total_mse += mse.to_scalar::<f32>()? as f64 * n as f64;
            total_critic += critic_value * n as f64;
        }
        let count = normals.len() as f64;
        loss_curve.push(total / count);
        mse_curve.push(total_mse / count);
        if critic.is_some() {
            critic_curve.push(total_critic / count);
        }
        log::debug!(
            "epoch {epoch}/{}: loss {:.6}, mse {:.6}",
            cfg.epochs,
            total / count,
            total_mse / count
        );
    }
    let checkpoint = ae.checkpoint(TrainingMeta {
        dataset_id: cfg.dataset_id.clone(),
        epochs: cfg.epochs,
        learning_rate: cfg.learning_rate,
        loss_curve_digest: loss_curve_digest(&loss_curve),
    })?;
    Ok(ReconResult {
        autoencoder: ae,
        checkpoint,
        loss_curve,
        mse_curve,
        critic_curve,
    })
}
