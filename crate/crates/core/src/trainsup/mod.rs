//! Supervised classifier training with cross-entropy and Adam, grid search
//! over learning rate and epoch budget, and evaluation.

mod batch;
pub(crate) mod evaluate;
mod grid;
mod train;

use crate::nets::NetError;

pub use batch::{batch_tensor, labels_tensor, Batches};
pub use evaluate::{class_scores, evaluate_classifier, evaluate_model, report_from_scores};
pub use grid::{
    grid_search, select_best, GridAxes, GridCell, GridOutcome, GridReport, GridSummary,
};
pub use train::{adam, train_classifier, AdamConfig, TrainConfig, TrainResult};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("training partition holds only {0} samples; both classes are required")]
    SingleClass(crate::dataio::Label),
    #[error("empty partition: {0}")]
    EmptyPartition(&'static str),
    #[error("non-finite loss {loss} at epoch {epoch}, batch {batch}")]
    Divergence {
        epoch: usize,
        batch: usize,
        loss: f64,
    },
    #[error(transparent)]
    Net(#[from] NetError),
    #[error("metric error: {0}")]
    Metrics(#[from] crate::metrics::MetricsError),
    #[error("grid cell ({model}, lr {learning_rate}, {epochs} epochs): {source}")]
    Cell {
        model: String,
        learning_rate: f64,
        epochs: usize,
        #[source]
        source: Box<TrainError>,
    },
    #[error("malformed grid table: {0}")]
    Table(String),
}

impl From<candle_core::Error> for TrainError {
    fn from(e: candle_core::Error) -> Self {
        TrainError::Net(NetError::Candle(e))
    }
}

pub type Result<T> = std::result::Result<T, TrainError>;
