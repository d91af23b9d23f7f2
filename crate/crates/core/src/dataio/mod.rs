//! Data ingestion and preprocessing: manifests, the raw volume container,
//! z-score normalization, sagittal slicing, subject-level splits and the
//! synthetic two-domain benchmark.

mod dataset;
mod manifest;
mod preprocess;
mod synth;
mod volume;

pub use dataset::{
    build_dataset, split_subjects, ClassCounts, DatasetConfig, DatasetSplit, Partition,
    SplitFractions,
};
pub use manifest::{load_manifest, DomainTag, Label, Manifest, QuarantineEntry, SubjectRecord};
pub use preprocess::{
    normalize_volume, resize_bilinear, sagittal_indices, slice_sagittal, standardize_slices,
    NormStats, SliceStack, UnitRange,
};
pub use synth::{synth_generate, synth_volumes, DomainShift, SynthConfig, SynthSubject};
pub use volume::{read_volume, write_volume, VolumeSample, VOLUME_MAGIC};

use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: malformed manifest header {found:?}, expected \"subject_id,domain,cdr,age\"")]
    MalformedHeader { path: PathBuf, found: String },
    #[error("{path}: line {line}: {reason}")]
    MalformedRow {
        path: PathBuf,
        line: u64,
        reason: String,
    },
    #[error("duplicate subject_id {0:?}")]
    DuplicateSubject(String),
    #[error("{path}: invalid volume file: {reason}")]
    InvalidVolume { path: PathBuf, reason: String },
    #[error("volume {0:?} has zero variance")]
    Degenerate(String),
    #[error("requested {requested} slices but the sagittal extent is {extent}")]
    TooManySlices { requested: usize, extent: usize },
    #[error("missing volume file for subject {subject}: {path}")]
    MissingVolume { subject: String, path: PathBuf },
    #[error("no {0} subjects remain after filtering")]
    EmptyClass(Label),
    #[error("invalid configuration: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, DataError>;
