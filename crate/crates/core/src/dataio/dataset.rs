use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::manifest::check_unique;
use super::{
    normalize_volume, read_volume, resize_bilinear, slice_sagittal, standardize_slices, DataError,
    Label, Manifest, Result, SliceStack, VolumeSample,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self {
            train: 0.7,
            val: 0.1,
            test: 0.2,
        }
    }
}

impl SplitFractions {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.val, self.test];
        if parts.iter().any(|f| !(0.0..=1.0).contains(f))
            || (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return Err(DataError::Config(format!(
                "split fractions must be in [0, 1] and sum to 1, got {parts:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub slices: usize,
    pub height: usize,
    pub width: usize,
    pub fractions: SplitFractions,
    pub split_seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            slices: 10,
            height: 256,
            width: 256,
            fractions: SplitFractions::default(),
            split_seed: 0,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.slices == 0 || self.height == 0 || self.width == 0 {
            return Err(DataError::Config(
                "slices, height and width must be positive".into(),
            ));
        }
        self.fractions.validate()
    }

    /// Full preprocessing chain for one volume: z-score, sagittal slicing,
    /// in-plane resampling and stack re-standardization.
    pub fn stack_from_volume(&self, volume: &VolumeSample, label: Label) -> Result<SliceStack> {
        let (normalized, stats) = normalize_volume(volume)?;
        let (slices, _) = slice_sagittal(&normalized, self.slices)?;
        let mut slices = resize_bilinear(&slices, self.height, self.width);
        standardize_slices(&mut slices, &volume.subject_id)?;
        Ok(SliceStack {
            slices,
            label,
            subject_id: volume.subject_id.clone(),
            normalization_stats: (stats.mean, stats.std),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Partition {
    Train,
    Val,
    Test,
}

impl Partition {
    pub const ALL: [Partition; 3] = [Partition::Train, Partition::Val, Partition::Test];
}

impl fmt::Display for Partition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Partition::Train => "train",
            Partition::Val => "val",
            Partition::Test => "test",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ClassCounts {
    pub normal: usize,
    pub demented: usize,
}

/// Subject-level train/val/test partitions.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<SliceStack>,
    pub val: Vec<SliceStack>,
    pub test: Vec<SliceStack>,
    pub split_seed: u64,
    /// Subjects held back for missing or invalid CDR.
    pub quarantined: Vec<String>,
}

impl DatasetSplit {
    pub fn partition(&self, p: Partition) -> &[SliceStack] {
        match p {
            Partition::Train => &self.train,
            Partition::Val => &self.val,
            Partition::Test => &self.test,
        }
    }

    pub fn all(&self) -> impl Iterator<Item = &SliceStack> {
        self.train.iter().chain(&self.val).chain(&self.test)
    }

    pub fn class_counts(&self, p: Partition) -> ClassCounts {
        let part = self.partition(p);
        let demented = part.iter().filter(|s| s.label.is_positive()).count();
        ClassCounts {
            normal: part.len() - demented,
            demented,
        }
    }

    /// Sorted (subject, partition) pairs.
    pub fn assignment(&self) -> Vec<(String, Partition)> {
        let mut out: Vec<_> = Partition::ALL
            .iter()
            .flat_map(|&p| {
                self.partition(p)
                    .iter()
                    .map(move |s| (s.subject_id.clone(), p))
            })
            .collect();
        out.sort();
        out
    }

    pub(crate) fn from_stacks(
        stacks: Vec<SliceStack>,
        fractions: SplitFractions,
        seed: u64,
        quarantined: Vec<String>,
    ) -> Result<Self> {
        let subjects: Vec<(String, Label)> = stacks
            .iter()
            .map(|s| (s.subject_id.clone(), s.label))
            .collect();
        let assignment = split_subjects(&subjects, fractions, seed)?;
        let mut split = DatasetSplit {
            train: Vec::new(),
            val: Vec::new(),
            test: Vec::new(),
            split_seed: seed,
            quarantined,
        };
        for stack in stacks {
            match assignment[&stack.subject_id] {
                Partition::Train => split.train.push(stack),
                Partition::Val => split.val.push(stack),
                Partition::Test => split.test.push(stack),
            }
        }
        for p in Partition::ALL {
            let c = split.class_counts(p);
            log::info!("{p}: {} normal, {} demented", c.normal, c.demented);
        }
        Ok(split)
    }
}

/// Largest-remainder allocation of `n` items over the three fractions.
fn allocate(n: usize, f: SplitFractions) -> [usize; 3] {
    let raw = [n as f64 * f.train, n as f64 * f.val, n as f64 * f.test];
    let mut counts = raw.map(|r| r.floor() as usize);
    let mut left = n - counts.iter().sum::<usize>();
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| (raw[b] - raw[b].floor()).total_cmp(&(raw[a] - raw[a].floor())));
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        counts[i] += 1;
        left -= 1;
    }
    counts
}

/// Seeded, class-stratified subject-level assignment. Each class's subjects
/// are sorted, shuffled and cut according to `fractions`.
pub fn split_subjects(
    subjects: &[(String, Label)],
    fractions: SplitFractions,
    seed: u64,
) -> Result<BTreeMap<String, Partition>> {
    fractions.validate()?;
    let mut by_class: BTreeMap<Label, Vec<&str>> = BTreeMap::new();
    for (id, label) in subjects {
        by_class.entry(*label).or_default().push(id);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = BTreeMap::new();
    for ids in by_class.values_mut() {
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            let dup = ids.windows(2).find(|w| w[0] == w[1]).unwrap()[0];
            return Err(DataError::DuplicateSubject(dup.to_string()));
        }
        ids.shuffle(&mut rng);
        let [n_train, n_val, _] = allocate(ids.len(), fractions);
        for (i, id) in ids.iter().enumerate() {
            let p = if i < n_train {
                Partition::Train
            } else if i < n_train + n_val {
                Partition::Val
            } else {
                Partition::Test
            };
            out.insert(id.to_string(), p);
        }
    }
    if out.len() != subjects.len() {
        return Err(DataError::DuplicateSubject(
            "(subject appears under two labels)".into(),
        ));
    }
    Ok(out)
}

/// Loads every admitted subject's `<subject_id>.vol` from `volume_dir`,
/// preprocesses it and splits at the subject level.
pub fn build_dataset(
    manifest: &Manifest,
    volume_dir: &Path,
    cfg: &DatasetConfig,
) -> Result<DatasetSplit> {
    cfg.validate()?;
    check_unique(&manifest.records)?;
    let admitted: Vec<_> = manifest.admitted().collect();
    for label in [Label::Normal, Label::Demented] {
        if !admitted.iter().any(|r| r.label() == Some(label)) {
            return Err(DataError::EmptyClass(label));
        }
    }
    let mut stacks = Vec::with_capacity(admitted.len());
    for record in admitted {
        let path = volume_dir.join(format!("{}.vol", record.subject_id));
        if !path.is_file() {
            return Err(DataError::MissingVolume {
                subject: record.subject_id.clone(),
                path,
            });
        }
        let mut volume = read_volume(&path)?;
        volume.subject_id = record.subject_id.clone();
        let label = record.label().expect("admitted records carry a cdr");
        stacks.push(cfg.stack_from_volume(&volume, label)?);
    }
    let quarantined = manifest
        .quarantined
        .iter()
        .map(|q| q.subject_id.clone())
        .collect();
    DatasetSplit::from_stacks(stacks, cfg.fractions, cfg.split_seed, quarantined)
}
