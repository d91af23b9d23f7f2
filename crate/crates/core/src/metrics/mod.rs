//! Metric kernels: confusion-matrix rates, rank-based ROC-AUC and the 1-D
//! earth mover's distance.
//!
//! Every kernel here is pure. Metrics that cannot be computed (zero
//! denominators, single-class inputs) come back as `None` and are listed by
//! name in [`MetricsReport::undefined`]; a NaN never leaves this module.

mod confusion;
mod emd;
mod report;
mod roc;

pub use confusion::{confusion, rates, ConfusionCounts, Rates};
pub use emd::{
    emd_1d, emd_report, EmdReport, EmpiricalDistribution, IntensityMap, MAX_POOLED_VALUES,
};
pub use report::{MetricValues, MetricsReport};
pub use roc::roc_auc;

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("length mismatch: {left} labels vs {right} predictions")]
    LengthMismatch { left: usize, right: usize },
    #[error("empty input")]
    Empty,
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("slice geometry mismatch: {0:?} vs {1:?}")]
    Geometry((usize, usize, usize), (usize, usize, usize)),
}
