use serde::{Deserialize, Serialize};

use super::{EmdReport, Rates};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricValues {
    pub auc: Option<f64>,
    pub accuracy: Option<f64>,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub precision: Option<f64>,
    pub f1: Option<f64>,
    pub emd_generated: Option<f64>,
    pub emd_reconstructed: Option<f64>,
}

/// Persisted metric record. A metric that was computed but has no defined
/// value is `null` in `metrics` and named in `undefined`; metrics a pipeline
/// does not produce are `null` and absent from `undefined`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsReport {
    pub experiment_id: String,
    pub dataset: String,
    pub model: String,
    pub metrics: MetricValues,
    pub undefined: Vec<String>,
}

impl MetricsReport {
    pub fn new(
        experiment_id: impl Into<String>,
        dataset: impl Into<String>,
        model: impl Into<String>,
    ) -> Self {
        Self {
            experiment_id: experiment_id.into(),
            dataset: dataset.into(),
            model: model.into(),
            ..Default::default()
        }
    }

    fn record(&mut self, name: &str, value: Option<f64>) -> Option<f64> {
        if value.is_none() && !self.undefined.iter().any(|n| n == name) {
            self.undefined.push(name.to_string());
        }
        value
    }

    pub fn with_auc(mut self, auc: Option<f64>) -> Self {
        self.metrics.auc = self.record("auc", auc);
        self
    }

    pub fn with_rates(mut self, r: &Rates) -> Self {
        self.metrics.accuracy = self.record("accuracy", r.accuracy);
        self.metrics.sensitivity = self.record("sensitivity", r.sensitivity);
        self.metrics.specificity = self.record("specificity", r.specificity);
        self.metrics.precision = self.record("precision", r.precision);
        self.metrics.f1 = self.record("f1", r.f1);
        self
    }

    pub fn with_emd(mut self, emd: &EmdReport) -> Self {
        self.metrics.emd_generated = Some(emd.generated);
        self.metrics.emd_reconstructed = Some(emd.reconstructed);
        self
    }

    /// Named metric values in schema order, for table emission.
    pub fn named_values(&self) -> [(&'static str, Option<f64>); 8] {
        let m = &self.metrics;
        [
            ("auc", m.auc),
            ("accuracy", m.accuracy),
            ("sensitivity", m.sensitivity),
            ("specificity", m.specificity),
            ("precision", m.precision),
            ("f1", m.f1),
            ("emd_generated", m.emd_generated),
            ("emd_reconstructed", m.emd_reconstructed),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn undefined_markers_serialize_as_null() {
        let report = MetricsReport::new("id", "source", "net")
            .with_auc(None)
            .with_rates(&Rates {
                accuracy: Some(0.5),
                ..Default::default()
            });
        let json = serde_json::to_value(&report).unwrap();
        assert!(json["metrics"]["auc"].is_null());
        assert_eq!(json["metrics"]["accuracy"], 0.5);
        assert_eq!(
            report.undefined,
            vec!["auc", "sensitivity", "specificity", "precision", "f1"]
        );
        let back: MetricsReport = serde_json::from_value(json).unwrap();
        assert_eq!(back, report);
    }
}
