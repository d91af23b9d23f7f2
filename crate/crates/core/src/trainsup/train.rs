use std::collections::BTreeMap;

use candle_core::{DType, Var};
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataio::{DatasetSplit, Label, SliceStack};
use crate::nets::{
    build_classifier, loss_curve_digest, Checkpoint, Classifier, Mode, NetworkSpec, TrainingMeta,
};

use super::batch::{batch_tensor, labels_tensor, Batches};
use super::evaluate::class_scores;
use super::{Result, TrainError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam (no weight decay) over `vars`.
pub fn adam(vars: Vec<Var>, learning_rate: f64, cfg: AdamConfig) -> Result<AdamW> {
    Ok(AdamW::new(
        vars,
        ParamsAdamW {
            lr: learning_rate,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.eps,
            weight_decay: 0.0,
        },
    )?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default)]
    pub adam: AdamConfig,
    #[serde(default)]
    pub seed: u64,
    /// Recorded in checkpoint provenance.
    #[serde(default)]
    pub dataset_id: String,
    /// Epochs after which a checkpoint is kept in addition to the final one.
    #[serde(default)]
    pub snapshot_epochs: Vec<usize>,
}

fn default_batch_size() -> usize {
    16
}

impl TrainConfig {
    pub fn new(learning_rate: f64, epochs: usize) -> Self {
        Self {
            learning_rate,
            epochs,
            batch_size: default_batch_size(),
            adam: AdamConfig::default(),
            seed: 0,
            dataset_id: String::new(),
            snapshot_epochs: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(TrainError::Config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.epochs == 0 {
            return Err(TrainError::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch_size must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainResult {
    pub checkpoint: Checkpoint,
    /// Mean training loss of each epoch.
    pub loss_curve: Vec<f64>,
    /// Validation accuracy after each epoch; empty when the split has no
    /// validation samples.
    pub val_accuracy_curve: Vec<f64>,
    /// Checkpoints after the epochs listed in `snapshot_epochs`.
    pub snapshots: BTreeMap<usize, Checkpoint>,
}

pub(crate) fn require_both_classes(stacks: &[SliceStack]) -> Result<()> {
    for label in [Label::Normal, Label::Demented] {
        if !stacks.iter().any(|s| s.label == label) {
            let other = if label == Label::Normal {
                Label::Demented
            } else {
                Label::Normal
            };
            return Err(TrainError::SingleClass(other));
        }
    }
    Ok(())
}

fn accuracy(net: &Classifier, stacks: &[SliceStack]) -> Result<f64> {
    let scores = class_scores(net, stacks)?;
    let correct = scores
        .iter()
        .zip(stacks)
        .filter(|(score, s)| (**score > 0.0) == s.label.is_positive())
        .count();
    Ok(correct as f64 / stacks.len() as f64)
}

/// Mean cross-entropy training of `spec`'s encoder plus a two-class head on
/// `split.train`. Batches are reshuffled every epoch from one seeded stream.
pub fn train_classifier(
    split: &DatasetSplit,
    spec: &NetworkSpec,
    cfg: &TrainConfig,
) -> Result<TrainResult> {
    cfg.validate()?;
    let train = &split.train;
    if train.is_empty() {
        return Err(TrainError::EmptyPartition("train"));
    }
    require_both_classes(train)?;
    let net = build_classifier(spec)?;
    let mut opt = adam(net.trainable(), cfg.learning_rate, cfg.adam)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut loss_curve = Vec::with_capacity(cfg.epochs);
    let mut val_accuracy_curve = Vec::new();
    let mut snapshots = BTreeMap::new();
    let meta = |epochs: usize, curve: &[f64]| TrainingMeta {
        dataset_id: cfg.dataset_id.clone(),
        epochs,
        learning_rate: cfg.learning_rate,
        loss_curve_digest: loss_curve_digest(curve),
    };
    for epoch in 1..=cfg.epochs {
        let batches = Batches::shuffled(train.len(), cfg.batch_size, &mut rng);
        let mut total = 0.0;
        for (b, idx) in batches.iter().enumerate() {
            let items: Vec<&SliceStack> = idx.iter().map(|&i| &train[i]).collect();
            let x = batch_tensor(&items, DType::F32)?;
            let y = labels_tensor(&items)?;
            let logits = net.forward(&x, Mode::Train)?;
            let loss = candle_nn::loss::cross_entropy(&logits, &y)?;
            let value = loss.to_scalar::<f32>()? as f64;
            if !value.is_finite() {
                log::error!("epoch {epoch} batch {b}: loss {value}");
                return Err(TrainError::Divergence {
                    epoch,
                    batch: b,
                    loss: value,
                });
            }
            opt.backward_step(&loss)?;
            total += value * items.len() as f64;
        }
        let mean = total / train.len() as f64;
        loss_curve.push(mean);
        if !split.val.is_empty() {
            val_accuracy_curve.push(accuracy(&net, &split.val)?);
        }
        log::debug!(
            "epoch {epoch}/{}: loss {mean:.5}{}",
            cfg.epochs,
            val_accuracy_curve
                .last()
                .map(|a| format!(", val acc {a:.4}"))
                .unwrap_or_default()
        );
        if cfg.snapshot_epochs.contains(&epoch) {
            snapshots.insert(epoch, net.checkpoint(meta(epoch, &loss_curve))?);
        }
    }
    Ok(TrainResult {
        checkpoint: net.checkpoint(meta(cfg.epochs, &loss_curve))?,
        loss_curve,
        val_accuracy_curve,
        snapshots,
    })
}
