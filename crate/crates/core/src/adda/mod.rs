//! Adversarial discriminative domain adaptation. A frozen source encoder
//! defines the latent distribution the target encoder learns to imitate;
//! a latent critic tells the two apart. The task head (classifier head or
//! decoder) stays frozen and is reused on target latents.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use candle_core::DType;
use candle_nn::Optimizer;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::anomaly::{
    adversarial_generator_loss, anomaly_auc, critic_loss, score_with, AnomalyError,
};
use crate::dataio::{Label, SliceStack};
use crate::metrics::MetricsReport;
use crate::nets::{
    build_discriminator, build_encoder, Autoencoder, Checkpoint, Classifier, ClassifierHead,
    Decoder, Discriminator, Encoder, Mode, NetError, NetworkSpec, ParamStore, TrainingMeta,
};
use crate::trainsup::{adam, batch_tensor, AdamConfig, Batches, TrainError};

/// Default milestone epochs at which target checkpoints are kept.
pub const MILESTONES: [usize; 5] = [10, 20, 30, 50, 100];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AddaVariant {
    /// Adapt a classifier encoder on all target samples.
    #[default]
    Classifier,
    /// Adapt an autoencoder's encoder on cognitively normal target samples.
    AnomalySupervised,
    /// Adapt an autoencoder's encoder on all target samples.
    AnomalyUnsupervised,
}

impl AddaVariant {
    pub fn name(self) -> &'static str {
        match self {
            AddaVariant::Classifier => "classifier",
            AddaVariant::AnomalySupervised => "anomaly_supervised",
            AddaVariant::AnomalyUnsupervised => "anomaly_unsupervised",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AddaConfig {
    #[serde(default)]
    pub variant: AddaVariant,
    #[serde(default = "default_critic_lr")]
    pub critic_lr: f64,
    #[serde(default = "default_target_lr")]
    pub target_lr: f64,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default)]
    pub seed: u64,
    /// Critic updates per batch, before the target-encoder updates.
    #[serde(default = "one")]
    pub critic_steps: usize,
    /// Target-encoder updates per batch.
    #[serde(default = "one")]
    pub target_steps: usize,
    /// Start the target encoder from the source weights (otherwise from a
    /// fresh seeded initialization).
    #[serde(default = "yes")]
    pub init_from_source: bool,
    #[serde(default = "default_critic_hidden")]
    pub critic_hidden: Vec<usize>,
    #[serde(default = "default_milestones")]
    pub milestones: Vec<usize>,
    #[serde(default)]
    pub adam: AdamConfig,
}

fn default_critic_lr() -> f64 {
    1e-5
}

fn default_target_lr() -> f64 {
    1e-6
}

fn default_epochs() -> usize {
    20
}

fn default_batch_size() -> usize {
    16
}

fn one() -> usize {
    1
}

fn yes() -> bool {
    true
}

fn default_critic_hidden() -> Vec<usize> {
    vec![512, 256]
}

fn default_milestones() -> Vec<usize> {
    MILESTONES.to_vec()
}

impl AddaConfig {
    pub fn new(variant: AddaVariant) -> Self {
        Self {
            variant,
            critic_lr: default_critic_lr(),
            target_lr: default_target_lr(),
            epochs: default_epochs(),
            batch_size: default_batch_size(),
            seed: 0,
            critic_steps: 1,
            target_steps: 1,
            init_from_source: true,
            critic_hidden: default_critic_hidden(),
            milestones: default_milestones(),
            adam: AdamConfig::default(),
        }
    }

    /// Zero epochs is accepted and leaves the target encoder equal to its
    /// initialization.
    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.critic_lr) || !positive(self.target_lr) {
            return Err(AddaError::Config(
                "critic_lr and target_lr must be positive".into(),
            ));
        }
        if self.batch_size == 0 || self.critic_steps == 0 || self.target_steps == 0 {
            return Err(AddaError::Config(
                "batch_size and step counts must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum AddaError {
    #[error("invalid adaptation config: {0}")]
    Config(String),
    #[error("no target samples admitted for variant {0}")]
    EmptyTarget(&'static str),
    #[error("empty partition: {0}")]
    EmptyPartition(&'static str),
    #[error("variant {variant} cannot run with a {head} head")]
    HeadMismatch {
        variant: &'static str,
        head: &'static str,
    },
    #[error("non-finite adversarial loss {loss} at epoch {epoch}, batch {batch}")]
    Divergence {
        epoch: usize,
        batch: usize,
        loss: f64,
        /// Target encoder and head after the last completed epoch.
        last_good: Box<Checkpoint>,
    },
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Anomaly(#[from] AnomalyError),
}

impl From<candle_core::Error> for AddaError {
    fn from(e: candle_core::Error) -> Self {
        AddaError::Net(NetError::Candle(e))
    }
}

pub type Result<T> = std::result::Result<T, AddaError>;

#[derive(Debug, Clone)]
pub enum TaskHead {
    Classifier(ClassifierHead),
    Decoder(Decoder),
}

impl TaskHead {
    fn name(&self) -> &'static str {
        match self {
            TaskHead::Classifier(_) => "classifier",
            TaskHead::Decoder(_) => "decoder",
        }
    }

    fn part(&self) -> (&'static str, &ParamStore) {
        match self {
            TaskHead::Classifier(h) => ("head", h.store()),
            TaskHead::Decoder(d) => ("decoder", d.store()),
        }
    }

    pub fn store(&self) -> &ParamStore {
        self.part().1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochHistory {
    pub epoch: usize,
    pub critic_loss: f64,
    pub target_loss: f64,
}

/// `epoch,critic_loss,target_loss` rows.
pub fn history_csv(history: &[EpochHistory]) -> String {
    let mut out = String::from("epoch,critic_loss,target_loss\n");
    for h in history {
        let _ = writeln!(out, "{},{},{}", h.epoch, h.critic_loss, h.target_loss);
    }
    out
}

#[derive(Debug, Clone)]
pub struct AdaptationBundle {
    pub source_encoder: Encoder,
    pub target_encoder: Encoder,
    pub head: TaskHead,
    pub discriminator: Discriminator,
    pub history: Vec<EpochHistory>,
    /// Target encoder plus head after each milestone epoch reached.
    pub milestones: BTreeMap<usize, Checkpoint>,
}

fn critic_spec(latent: usize, cfg: &AddaConfig) -> NetworkSpec {
    NetworkSpec {
        hidden: cfg.critic_hidden.clone(),
        ..NetworkSpec::discriminator(latent).with_seed(cfg.seed)
    }
}

impl AdaptationBundle {
    fn assemble(source_encoder: Encoder, head: TaskHead, cfg: &AddaConfig) -> Result<Self> {
        let target_encoder = if cfg.init_from_source {
            source_encoder.duplicate()?
        } else {
            let spec = source_encoder
                .spec()
                .clone()
                .with_seed(cfg.seed.wrapping_add(0x5151));
            build_encoder(&spec)?
        };
        let discriminator = build_discriminator(&critic_spec(source_encoder.latent_dim(), cfg))?;
        Ok(Self {
            source_encoder,
            target_encoder,
            head,
            discriminator,
            history: Vec::new(),
            milestones: BTreeMap::new(),
        })
    }

    /// Bundle around a trained classifier; the classifier itself is cloned,
    /// not mutated.
    pub fn from_classifier(source: &Classifier, cfg: &AddaConfig) -> Result<Self> {
        if cfg.variant != AddaVariant::Classifier {
            return Err(AddaError::HeadMismatch {
                variant: cfg.variant.name(),
                head: "classifier",
            });
        }
        Self::assemble(
            source.encoder.duplicate()?,
            TaskHead::Classifier(source.head.clone()),
            cfg,
        )
    }

    pub fn from_autoencoder(source: &Autoencoder, cfg: &AddaConfig) -> Result<Self> {
        if cfg.variant == AddaVariant::Classifier {
            return Err(AddaError::HeadMismatch {
                variant: cfg.variant.name(),
                head: "decoder",
            });
        }
        Self::assemble(
            source.encoder.duplicate()?,
            TaskHead::Decoder(source.decoder.clone()),
            cfg,
        )
    }

    /// Target encoder with the frozen head, loadable as a classifier or
    /// autoencoder checkpoint.
    pub fn target_checkpoint(&self, meta: TrainingMeta) -> Result<Checkpoint> {
        Ok(Checkpoint::capture(
            self.target_encoder.spec(),
            meta,
            &[("encoder", self.target_encoder.store()), self.head.part()],
        )?)
    }

    pub fn source_checkpoint(&self, meta: TrainingMeta) -> Result<Checkpoint> {
        Ok(Checkpoint::capture(
            self.source_encoder.spec(),
            meta,
            &[("encoder", self.source_encoder.store()), self.head.part()],
        )?)
    }
}

/// Samples the adversarial loop sees. Only the supervised anomaly variant
/// reads labels, to keep cognitively normal samples.
pub fn admitted_targets(target: &[SliceStack], variant: AddaVariant) -> Vec<&SliceStack> {
    match variant {
        AddaVariant::AnomalySupervised => {
            target.iter().filter(|s| s.label == Label::Normal).collect()
        }
        AddaVariant::Classifier | AddaVariant::AnomalyUnsupervised => target.iter().collect(),
    }
}

/// Runs `cfg.epochs` epochs of alternating critic / target-encoder updates.
/// Each epoch visits every admitted target sample once; source samples are
/// drawn from a shuffled stream that wraps around as needed.
pub fn adapt(
    source: &[SliceStack],
    target: &[SliceStack],
    mut bundle: AdaptationBundle,
    cfg: &AddaConfig,
) -> Result<AdaptationBundle> {
    cfg.validate()?;
    let expected = match cfg.variant {
        AddaVariant::Classifier => "classifier",
        _ => "decoder",
    };
    if bundle.head.name() != expected {
        return Err(AddaError::HeadMismatch {
            variant: cfg.variant.name(),
            head: bundle.head.name(),
        });
    }
    if source.is_empty() {
        return Err(AddaError::EmptyPartition("source"));
    }
    let admitted = admitted_targets(target, cfg.variant);
    if admitted.is_empty() {
        return Err(AddaError::EmptyTarget(cfg.variant.name()));
    }
    let dtype = DType::F32;
    let mut critic_opt = adam(
        bundle.discriminator.store().trainable(),
        cfg.critic_lr,
        cfg.adam,
    )?;
    let mut target_opt = adam(
        bundle.target_encoder.store().trainable(),
        cfg.target_lr,
        cfg.adam,
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut source_order: Vec<usize> = (0..source.len()).collect();
    let mut source_cursor = source.len();
    let start = bundle.history.len();
    let meta = |epoch: usize| TrainingMeta {
        dataset_id: String::new(),
        epochs: epoch,
        learning_rate: cfg.target_lr,
        loss_curve_digest: String::new(),
    };
    let mut last_good = bundle.target_checkpoint(meta(start))?;
    for epoch in start + 1..=start + cfg.epochs {
        let batches = Batches::shuffled(admitted.len(), cfg.batch_size, &mut rng);
        let (mut critic_total, mut target_total) = (0.0, 0.0);
        for (b, idx) in batches.iter().enumerate() {
            let tgt: Vec<&SliceStack> = idx.iter().map(|&i| admitted[i]).collect();
            let mut src = Vec::with_capacity(tgt.len());
            while src.len() < tgt.len() {
                if source_cursor == source.len() {
                    source_order.shuffle(&mut rng);
                    source_cursor = 0;
                }
                src.push(&source[source_order[source_cursor]]);
                source_cursor += 1;
            }
            let xs = batch_tensor(&src, dtype)?;
            let xt = batch_tensor(&tgt, dtype)?;
            let zs = bundle.source_encoder.forward(&xs, Mode::Eval)?.detach();
            let mut zt = bundle.target_encoder.forward(&xt, Mode::Train)?;
            let mut c_value = 0.0;
            for _ in 0..cfg.critic_steps {
                let c_loss = critic_loss(&bundle.discriminator, &zs, &zt.detach())?;
                c_value = c_loss.to_scalar::<f32>()? as f64;
                critic_opt.backward_step(&c_loss)?;
            }
            let mut t_value = 0.0;
            for step in 0..cfg.target_steps {
                if step > 0 {
                    zt = bundle.target_encoder.forward(&xt, Mode::Train)?;
                }
                let t_loss = adversarial_generator_loss(&bundle.discriminator, &zt)?;
                t_value = t_loss.to_scalar::<f32>()? as f64;
                if !t_value.is_finite() {
                    break;
                }
                target_opt.backward_step(&t_loss)?;
            }
            if !c_value.is_finite() || !t_value.is_finite() {
                log::error!("adaptation diverged at epoch {epoch} batch {b}: critic {c_value}, target {t_value}");
                return Err(AddaError::Divergence {
                    epoch,
                    batch: b,
                    loss: if c_value.is_finite() {
                        t_value
                    } else {
                        c_value
                    },
                    last_good: Box::new(last_good),
                });
            }
            critic_total += c_value * tgt.len() as f64;
            target_total += t_value * tgt.len() as f64;
        }
        let n = admitted.len() as f64;
        let record = EpochHistory {
            epoch,
            critic_loss: critic_total / n,
            target_loss: target_total / n,
        };
        log::debug!(
            "adapt epoch {epoch}: critic {:.5}, target {:.5}",
            record.critic_loss,
            record.target_loss
        );
        bundle.history.push(record);
        last_good = bundle.target_checkpoint(meta(epoch))?;
        if cfg.milestones.contains(&epoch) {
            bundle.milestones.insert(epoch, last_good.clone());
        }
    }
    Ok(bundle)
}

fn evaluate_with(
    bundle: &AdaptationBundle,
    encoder: &Encoder,
    target: &[SliceStack],
    dataset: &str,
) -> Result<MetricsReport> {
    if target.is_empty() {
        return Err(AddaError::EmptyPartition("target evaluation"));
    }
    match &bundle.head {
        TaskHead::Classifier(head) => Ok(crate::trainsup::evaluate::evaluate_parts(
            encoder, head, target, dataset,
        )?),
        TaskHead::Decoder(decoder) => {
            let scores = score_with(encoder, decoder, target)?;
            Ok(
                MetricsReport::new("", dataset, encoder.spec().family.name())
                    .with_auc(anomaly_auc(&scores)),
            )
        }
    }
}

/// Target samples through the unadapted source encoder and frozen head.
pub fn evaluate_no_da(
    bundle: &AdaptationBundle,
    target: &[SliceStack],
    dataset: &str,
) -> Result<MetricsReport> {
    evaluate_with(bundle, &bundle.source_encoder, target, dataset)
}

/// Target samples through the adapted target encoder and frozen head.
pub fn evaluate_adapted(
    bundle: &AdaptationBundle,
    target: &[SliceStack],
    dataset: &str,
) -> Result<MetricsReport> {
    evaluate_with(bundle, &bundle.target_encoder, target, dataset)
}
