use serde::{Deserialize, Serialize};

use super::MetricsError;

/// Binary confusion counts. The positive class is "demented" throughout the
/// crate (see [`crate::dataio::Label::is_positive`]).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }
}

/// Derived rates; `None` marks a zero denominator.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Rates {
    pub accuracy: Option<f64>,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub precision: Option<f64>,
    pub f1: Option<f64>,
}

pub fn confusion(labels: &[bool], predictions: &[bool]) -> Result<ConfusionCounts, MetricsError> {
    if labels.len() != predictions.len() {
        return Err(MetricsError::LengthMismatch {
            left: labels.len(),
            right: predictions.len(),
        });
    }
    if labels.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut c = ConfusionCounts::default();
    for (&truth, &pred) in labels.iter().zip(predictions) {
        match (truth, pred) {
            (true, true) => c.tp += 1,
            (true, false) => c.fn_ += 1,
            (false, true) => c.fp += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn rates(c: &ConfusionCounts) -> Rates {
    let precision = ratio(c.tp, c.tp + c.fp);
    let sensitivity = ratio(c.tp, c.tp + c.fn_);
    let f1 = match (precision, sensitivity) {
        (Some(p), Some(s)) if p + s > 0.0 => Some(2.0 * p * s / (p + s)),
        _ => None,
    };
    Rates {
        accuracy: ratio(c.tp + c.tn, c.total()),
        sensitivity,
        specificity: ratio(c.tn, c.tn + c.fp),
        precision,
        f1,
    }
}
