use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DataError, Result};

/// Binary diagnosis derived from the Clinical Dementia Rating.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Normal,
    Demented,
}

impl Label {
    /// CDR 0 is cognitively normal; any positive rating is demented.
    pub fn from_cdr(cdr: f64) -> Self {
        if cdr > 0.0 {
            Label::Demented
        } else {
            Label::Normal
        }
    }

    /// The positive class for every metric in the crate.
    pub fn is_positive(self) -> bool {
        self == Label::Demented
    }

    pub fn from_positive(positive: bool) -> Self {
        if positive {
            Label::Demented
        } else {
            Label::Normal
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Normal => "normal",
            Label::Demented => "demented",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DomainTag {
    Source,
    Target,
    Named(String),
}

impl DomainTag {
    pub fn parse(s: &str) -> Self {
        match s {
            "source" => DomainTag::Source,
            "target" => DomainTag::Target,
            other => DomainTag::Named(other.to_string()),
        }
    }
}

impl fmt::Display for DomainTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DomainTag::Source => f.write_str("source"),
            DomainTag::Target => f.write_str("target"),
            DomainTag::Named(n) => f.write_str(n),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubjectRecord {
    pub subject_id: String,
    pub domain: DomainTag,
    /// `None` for quarantined rows.
    pub cdr: Option<f64>,
    pub age: Option<f64>,
}

impl SubjectRecord {
    pub fn label(&self) -> Option<Label> {
        self.cdr.map(Label::from_cdr)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuarantineEntry {
    pub subject_id: String,
    pub line: u64,
    pub reason: String,
}

/// Every manifest row, plus the rows held back from labeled use.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Manifest {
    pub records: Vec<SubjectRecord>,
    pub quarantined: Vec<QuarantineEntry>,
}

impl Manifest {
    pub fn from_records(records: Vec<SubjectRecord>) -> Result<Self> {
        check_unique(&records)?;
        let quarantined = records
            .iter()
            .filter(|r| r.cdr.is_none())
            .map(|r| QuarantineEntry {
                subject_id: r.subject_id.clone(),
                line: 0,
                reason: "missing cdr".into(),
            })
            .collect();
        Ok(Self {
            records,
            quarantined,
        })
    }

    pub fn admitted(&self) -> impl Iterator<Item = &SubjectRecord> {
        self.records.iter().filter(|r| r.cdr.is_some())
    }

    pub fn for_domain(&self, domain: &DomainTag) -> Manifest {
        let keep = |id: &str| {
            self.records
                .iter()
                .any(|r| r.subject_id == id && &r.domain == domain)
        };
        Manifest {
            records: self
                .records
                .iter()
                .filter(|r| &r.domain == domain)
                .cloned()
                .collect(),
            quarantined: self
                .quarantined
                .iter()
                .filter(|q| keep(&q.subject_id))
                .cloned()
                .collect(),
        }
    }
}

pub(super) fn check_unique(records: &[SubjectRecord]) -> Result<()> {
    let mut seen = HashSet::new();
    for r in records {
        if !seen.insert(r.subject_id.as_str()) {
            return Err(DataError::DuplicateSubject(r.subject_id.clone()));
        }
    }
    Ok(())
}

const CDR_LEVELS: [f64; 5] = [0.0, 0.5, 1.0, 2.0, 3.0];
const HEADER: [&str; 4] = ["subject_id", "domain", "cdr", "age"];

fn parse_cdr(raw: &str) -> std::result::Result<f64, String> {
    let raw = raw.trim();
    if raw.is_empty() {
        return Err("missing cdr".into());
    }
    let v: f64 = raw.parse().map_err(|_| format!("unparsable cdr {raw:?}"))?;
    if CDR_LEVELS.contains(&v) {
        Ok(v)
    } else {
        Err(format!("cdr {raw} is not one of 0, 0.5, 1, 2, 3"))
    }
}

/// Reads a `subject_id,domain,cdr,age` CSV manifest. Rows whose CDR is
/// missing or invalid are kept with `cdr = None` and listed in
/// [`Manifest::quarantined`].
pub fn load_manifest(path: &Path) -> Result<Manifest> {
    let io_err = |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = std::fs::File::open(path).map_err(io_err)?;
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(file);

    let header = reader.headers().map_err(|e| DataError::MalformedHeader {
        path: path.to_path_buf(),
        found: e.to_string(),
    })?;
    if header.iter().ne(HEADER) {
        return Err(DataError::MalformedHeader {
            path: path.to_path_buf(),
            found: header.iter().collect::<Vec<_>>().join(","),
        });
    }

    let mut manifest = Manifest::default();
    for row in reader.records() {
        let row = row.map_err(|e| DataError::MalformedRow {
            path: path.to_path_buf(),
            line: e.position().map_or(0, |p| p.line()),
            reason: e.to_string(),
        })?;
        let line = row.position().map_or(0, |p| p.line());
        let malformed = |reason: String| DataError::MalformedRow {
            path: path.to_path_buf(),
            line,
            reason,
        };
        let subject_id = row[0].to_string();
        if subject_id.is_empty() {
            return Err(malformed("empty subject_id".into()));
        }
        let age = match row[3].trim() {
            "" => None,
            raw => Some(
                raw.parse::<f64>()
                    .map_err(|_| malformed(format!("unparsable age {raw:?}")))?,
            ),
        };
        let cdr = match parse_cdr(&row[2]) {
            Ok(v) => Some(v),
            Err(reason) => {
                manifest.quarantined.push(QuarantineEntry {
                    subject_id: subject_id.clone(),
                    line,
                    reason,
                });
                None
            }
        };
        manifest.records.push(SubjectRecord {
            subject_id,
            domain: DomainTag::parse(row[1].trim()),
            cdr,
            age,
        });
    }
    check_unique(&manifest.records)?;
    if !manifest.quarantined.is_empty() {
        log::warn!(
            "{}: {} row(s) quarantined for missing or invalid cdr",
            path.display(),
            manifest.quarantined.len()
        );
    }
    Ok(manifest)
}
