use candle_core::{DType, D};

use crate::dataio::SliceStack;
use crate::metrics::{confusion, rates, roc_auc, MetricsReport};
use crate::nets::{Checkpoint, Classifier, ClassifierHead, Encoder, Mode};

use super::batch::{batch_tensor, Batches};
use super::{Result, TrainError};

const EVAL_BATCH: usize = 32;

/// Demented-minus-normal logit margin of every sample, in eval mode.
/// Positive margin means a demented prediction.
pub fn class_scores(net: &Classifier, stacks: &[SliceStack]) -> Result<Vec<f64>> {
    margins(&net.encoder, &net.head, stacks)
}

pub(crate) fn margins(
    encoder: &Encoder,
    head: &ClassifierHead,
    stacks: &[SliceStack],
) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(stacks.len());
    for idx in Batches::sequential(stacks.len(), EVAL_BATCH).iter() {
        let items: Vec<&SliceStack> = idx.iter().map(|&i| &stacks[i]).collect();
        let x = batch_tensor(&items, encoder.dtype())?;
        let logits = head.forward(&encoder.forward(&x, Mode::Eval)?)?;
        let margin = logits
            .narrow(D::Minus1, 1, 1)?
            .sub(&logits.narrow(D::Minus1, 0, 1)?)?;
        out.extend(
            margin
                .flatten_all()?
                .to_dtype(DType::F64)?
                .to_vec1::<f64>()?,
        );
    }
    Ok(out)
}

/// Full metric suite from margins (positive = demented) and true labels
/// (true = demented). AUC is marked undefined when a class is missing.
pub fn report_from_scores(
    scores: &[f64],
    labels: &[bool],
    dataset: &str,
    model: &str,
) -> Result<MetricsReport> {
    let predictions: Vec<bool> = scores.iter().map(|&s| s > 0.0).collect();
    let counts = confusion(labels, &predictions)?;
    Ok(MetricsReport::new("", dataset, model)
        .with_auc(roc_auc(scores, labels))
        .with_rates(&rates(&counts)))
}

/// Evaluates a built classifier on `stacks`. The report's experiment id is
/// left empty for the caller to fill in.
pub fn evaluate_model(
    net: &Classifier,
    stacks: &[SliceStack],
    dataset: &str,
) -> Result<MetricsReport> {
    evaluate_parts(&net.encoder, &net.head, stacks, dataset)
}

pub(crate) fn evaluate_parts(
    encoder: &Encoder,
    head: &ClassifierHead,
    stacks: &[SliceStack],
    dataset: &str,
) -> Result<MetricsReport> {
    if stacks.is_empty() {
        return Err(TrainError::EmptyPartition("evaluation"));
    }
    let scores = margins(encoder, head, stacks)?;
    let labels: Vec<bool> = stacks.iter().map(|s| s.label.is_positive()).collect();
    report_from_scores(&scores, &labels, dataset, encoder.spec().family.name())
}

pub fn evaluate_classifier(
    checkpoint: &Checkpoint,
    stacks: &[SliceStack],
    dataset: &str,
) -> Result<MetricsReport> {
    evaluate_model(&Classifier::from_checkpoint(checkpoint)?, stacks, dataset)
}
