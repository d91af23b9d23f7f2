use std::fmt;
use std::path::Path;

use crate::adda::AddaError;
use crate::anomaly::AnomalyError;
use crate::dataio::DataError;
use crate::metrics::MetricsError;
use crate::nets::NetError;
use crate::trainsup::TrainError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Divergence,
    Internal,
}

impl ErrorKind {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorKind::Config => 2,
            ErrorKind::Data => 3,
            ErrorKind::Divergence => 4,
            ErrorKind::Internal => 5,
        }
    }
}

/// Failure of a run, classified for the process exit code.
#[derive(Debug)]
pub struct ExpError {
    pub kind: ErrorKind,
    pub stage: Option<String>,
    pub message: String,
}

impl fmt::Display for ExpError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.stage {
            Some(stage) => write!(f, "stage {stage}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

impl std::error::Error for ExpError {}

pub type Result<T> = std::result::Result<T, ExpError>;

impl ExpError {
    pub fn new(kind: ErrorKind, message: impl Into<String>) -> Self {
        Self {
            kind,
            stage: None,
            message: message.into(),
        }
    }

    pub fn config(message: impl Into<String>) -> Self {
        Self::new(ErrorKind::Config, message)
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(ErrorKind::Internal, message)
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        Self::internal(format!("{}: {e}", path.display()))
    }

    pub fn exit_code(&self) -> i32 {
        self.kind.exit_code()
    }

    /// Tags the error with the stage that raised it, keeping an inner tag.
    pub fn in_stage(mut self, stage: &str) -> Self {
        if self.stage.is_none() {
            self.stage = Some(stage.to_string());
        }
        self
    }
}

fn net_kind(e: &NetError) -> ErrorKind {
    match e {
        NetError::Spec(_) => ErrorKind::Config,
        NetError::Checkpoint { .. } => ErrorKind::Data,
        _ => ErrorKind::Internal,
    }
}

fn train_kind(e: &TrainError) -> ErrorKind {
    match e {
        TrainError::Config(_) => ErrorKind::Config,
        TrainError::SingleClass(_) | TrainError::EmptyPartition(_) | TrainError::Table(_) => {
            ErrorKind::Data
        }
        TrainError::Divergence { .. } => ErrorKind::Divergence,
        TrainError::Net(n) => net_kind(n),
        TrainError::Metrics(_) => ErrorKind::Internal,
        TrainError::Cell { source, .. } => train_kind(source),
    }
}

fn anomaly_kind(e: &AnomalyError) -> ErrorKind {
    match e {
        AnomalyError::Config(_) => ErrorKind::Config,
        AnomalyError::DementedInTraining(_)
        | AnomalyError::EmptyPartition(_)
        | AnomalyError::Shape { .. } => ErrorKind::Data,
        AnomalyError::Divergence { .. } => ErrorKind::Divergence,
        AnomalyError::Net(n) => net_kind(n),
        AnomalyError::Io { .. } => ErrorKind::Internal,
    }
}

fn adda_kind(e: &AddaError) -> ErrorKind {
    match e {
        AddaError::Config(_) | AddaError::HeadMismatch { .. } => ErrorKind::Config,
        AddaError::EmptyTarget(_) | AddaError::EmptyPartition(_) => ErrorKind::Data,
        AddaError::Divergence { .. } => ErrorKind::Divergence,
        AddaError::Net(n) => net_kind(n),
        AddaError::Train(t) => train_kind(t),
        AddaError::Anomaly(a) => anomaly_kind(a),
    }
}

impl From<DataError> for ExpError {
    fn from(e: DataError) -> Self {
        let kind = match e {
            DataError::Config(_) => ErrorKind::Config,
            _ => ErrorKind::Data,
        };
        Self::new(kind, e.to_string())
    }
}

impl From<NetError> for ExpError {
    fn from(e: NetError) -> Self {
        Self::new(net_kind(&e), e.to_string())
    }
}

impl From<TrainError> for ExpError {
    fn from(e: TrainError) -> Self {
        Self::new(train_kind(&e), e.to_string())
    }
}

impl From<AnomalyError> for ExpError {
    fn from(e: AnomalyError) -> Self {
        Self::new(anomaly_kind(&e), e.to_string())
    }
}

impl From<AddaError> for ExpError {
    fn from(e: AddaError) -> Self {
        Self::new(adda_kind(&e), e.to_string())
    }
}

impl From<MetricsError> for ExpError {
    fn from(e: MetricsError) -> Self {
        Self::internal(e.to_string())
    }
}

impl From<serde_json::Error> for ExpError {
    fn from(e: serde_json::Error) -> Self {
        Self::internal(e.to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        let codes: Vec<i32> = [
            ErrorKind::Config,
            ErrorKind::Data,
            ErrorKind::Divergence,
            ErrorKind::Internal,
        ]
        .iter()
        .map(|k| k.exit_code())
        .collect();
        assert_eq!(codes, vec![2, 3, 4, 5]);
        let nested = TrainError::Cell {
            model: "m".into(),
            learning_rate: 1e-3,
            epochs: 1,
            source: Box::new(TrainError::Divergence {
                epoch: 0,
                batch: 0,
                loss: f64::NAN,
            }),
        };
        assert_eq!(ExpError::from(nested).kind, ErrorKind::Divergence);
        let e = ExpError::config("x").in_stage("inner").in_stage("outer");
        assert_eq!(e.to_string(), "stage inner: x");
    }
}
