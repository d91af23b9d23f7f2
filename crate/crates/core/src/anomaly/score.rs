use std::fmt::Write as _;

use candle_core::{DType, D};
use serde::{Deserialize, Serialize};

use crate::dataio::{Label, SliceStack};
use crate::metrics::roc_auc;
use crate::nets::{Autoencoder, Checkpoint, Decoder, Encoder, Mode};
use crate::trainsup::{batch_tensor, Batches};

use super::train::check_shapes;
use super::Result;

const SCORE_BATCH: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalyScore {
    pub subject_id: String,
    /// Mean squared reconstruction error over all S x H x W voxels.
    pub reconstruction_mse: f64,
    /// Ground truth, used for evaluation only.
    pub label: Label,
}

/// Scores `samples` by encoding with `encoder` (posterior mean for the
/// variational model) and decoding with `decoder`.
pub fn score_with(
    encoder: &Encoder,
    decoder: &Decoder,
    samples: &[SliceStack],
) -> Result<Vec<AnomalyScore>> {
    check_shapes(samples, encoder.spec())?;
    let mut out = Vec::with_capacity(samples.len());
    for idx in Batches::sequential(samples.len(), SCORE_BATCH).iter() {
        let items: Vec<&SliceStack> = idx.iter().map(|&i| &samples[i]).collect();
        let x = batch_tensor(&items, encoder.dtype())?;
        let recon = decoder.forward(&encoder.forward(&x, Mode::Eval)?)?;
        let mse = (recon - &x)?.sqr()?.flatten_from(1)?.mean(D::Minus1)?;
        let mse = mse.to_dtype(DType::F64)?.to_vec1::<f64>()?;
        for (s, m) in items.iter().zip(mse) {
            out.push(AnomalyScore {
                subject_id: s.subject_id.clone(),
                reconstruction_mse: m,
                label: s.label,
            });
        }
    }
    Ok(out)
}

pub fn score_reconstruction(
    checkpoint: &Checkpoint,
    samples: &[SliceStack],
) -> Result<Vec<AnomalyScore>> {
    let ae = Autoencoder::from_checkpoint(checkpoint)?;
    score_with(&ae.encoder, &ae.decoder, samples)
}

/// ROC-AUC with higher error meaning more anomalous and demented positive;
/// `None` unless both labels are present.
pub fn anomaly_auc(scores: &[AnomalyScore]) -> Option<f64> {
    let values: Vec<f64> = scores.iter().map(|s| s.reconstruction_mse).collect();
    let labels: Vec<bool> = scores.iter().map(|s| s.label.is_positive()).collect();
    roc_auc(&values, &labels)
}

/// `subject_id,mse,label` rows.
pub fn scores_csv(scores: &[AnomalyScore]) -> String {
    let mut out = String::from("subject_id,mse,label\n");
    for s in scores {
        let _ = writeln!(out, "{},{},{}", s.subject_id, s.reconstruction_mse, s.label);
    }
    out
}
