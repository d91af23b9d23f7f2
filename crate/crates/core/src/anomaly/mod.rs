//! Reconstruction-based anomaly detection: autoencoders trained on
//! cognitively normal samples only, scored by per-sample reconstruction
//! error, summarized by ROC-AUC with demented as the positive class.

mod losses;
mod score;
mod train;

use std::path::PathBuf;

use crate::nets::NetError;

pub use losses::{
    adversarial_generator_loss, critic_loss, kl_divergence, reconstruction_mse, vae_loss,
};
pub use score::{anomaly_auc, score_reconstruction, score_with, scores_csv, AnomalyScore};
pub use train::{train_reconstructor, ReconModel, ReconResult, ReconTrainConfig};

#[derive(Debug, thiserror::Error)]
pub enum AnomalyError {
    #[error("invalid reconstruction config: {0}")]
    Config(String),
    #[error(
        "training sample {0} is labeled demented; reconstructors train on normal samples only"
    )]
    DementedInTraining(String),
    #[error("empty partition: {0}")]
    EmptyPartition(&'static str),
    #[error("non-finite loss {loss} at epoch {epoch}, batch {batch}")]
    Divergence {
        epoch: usize,
        batch: usize,
        loss: f64,
    },
    #[error("sample {subject} has shape {found:?}, network expects {expected:?}")]
    Shape {
        subject: String,
        found: (usize, usize, usize),
        expected: (usize, usize, usize),
    },
    #[error(transparent)]
    Net(#[from] NetError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl From<candle_core::Error> for AnomalyError {
    fn from(e: candle_core::Error) -> Self {
        AnomalyError::Net(NetError::Candle(e))
    }
}

impl From<crate::trainsup::TrainError> for AnomalyError {
    fn from(e: crate::trainsup::TrainError) -> Self {
        match e {
            crate::trainsup::TrainError::Net(n) => AnomalyError::Net(n),
            other => AnomalyError::Config(other.to_string()),
        }
    }
}

pub type Result<T> = std::result::Result<T, AnomalyError>;
