use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ExpError, Result};
use crate::adda::{AddaConfig, AddaVariant};
use crate::anomaly::{ReconModel, ReconTrainConfig};
use crate::dataio::{DatasetConfig, SynthConfig};
use crate::nets::{Family, NetworkSpec};
use crate::trainsup::TrainConfig;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pipeline {
    Classify,
    Tune,
    Adapt,
    Reconstruct,
    Anomaly,
    AdaptAnomaly,
}

impl Pipeline {
    pub fn name(self) -> &'static str {
        match self {
            Pipeline::Classify => "classify",
            Pipeline::Tune => "tune",
            Pipeline::Adapt => "adapt",
            Pipeline::Reconstruct => "reconstruct",
            Pipeline::Anomaly => "anomaly",
            Pipeline::AdaptAnomaly => "adapt_anomaly",
        }
    }

    fn needs_target(self) -> bool {
        matches!(self, Pipeline::Adapt | Pipeline::AdaptAnomaly)
    }

    fn uses_autoencoder(self) -> bool {
        matches!(
            self,
            Pipeline::Reconstruct | Pipeline::Anomaly | Pipeline::AdaptAnomaly
        )
    }
}

/// One domain read from disk: a manifest plus a directory of `.vol` files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainFiles {
    pub manifest: PathBuf,
    pub volume_dir: PathBuf,
    /// Manifest `domain` value to keep; defaults to `source` / `target`.
    #[serde(default)]
    pub domain: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileData {
    pub source: DomainFiles,
    #[serde(default)]
    pub target: Option<DomainFiles>,
    #[serde(default)]
    pub preprocess: DatasetConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DataConfig {
    Synth(SynthConfig),
    Files(FileData),
}

impl DataConfig {
    /// (slices, height, width) of every stack this block yields.
    pub fn geometry(&self) -> (usize, usize, usize) {
        match self {
            DataConfig::Synth(s) => (s.slices, s.image_size, s.image_size),
            DataConfig::Files(f) => (f.preprocess.slices, f.preprocess.height, f.preprocess.width),
        }
    }
}

/// Grid search block: either a precomputed accuracy table or the axes to
/// train over.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TuneConfig {
    /// CSV in the `model,learning_rate,<epochs>...` layout.
    #[serde(default)]
    pub fixture: Option<PathBuf>,
    #[serde(default)]
    pub models: Vec<NetworkSpec>,
    #[serde(default = "default_learning_rates")]
    pub learning_rates: Vec<f64>,
    #[serde(default = "default_epoch_budgets")]
    pub epoch_budgets: Vec<usize>,
    #[serde(default)]
    pub exact_retraining: bool,
}

fn default_learning_rates() -> Vec<f64> {
    vec![2e-4, 2e-5]
}

fn default_epoch_budgets() -> Vec<usize> {
    vec![10, 20, 50, 100]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub pipeline: Pipeline,
    /// When set, overrides every component seed.
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    /// Not needed by a tune run that replays a fixture table.
    #[serde(default)]
    pub data: Option<DataConfig>,
    #[serde(default)]
    pub model: Option<NetworkSpec>,
    #[serde(default)]
    pub train: Option<TrainConfig>,
    #[serde(default)]
    pub tune: Option<TuneConfig>,
    #[serde(default)]
    pub adda: Option<AddaConfig>,
    #[serde(default)]
    pub recon: Option<ReconTrainConfig>,
}

/// Reads, resolves and validates a TOML config. Relative paths are taken
/// relative to the config file's directory.
pub fn parse_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ExpError::config(format!("{}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut cfg = parse_config_str(&text, base)?;
    cfg.resolve(None)?;
    Ok(cfg)
}

/// Parses without resolving; paths are anchored at `base`.
pub fn parse_config_str(text: &str, base: &Path) -> Result<ExperimentConfig> {
    let mut cfg: ExperimentConfig =
        toml::from_str(text).map_err(|e| ExpError::config(e.to_string()))?;
    cfg.anchor_paths(base);
    Ok(cfg)
}

fn anchor(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

fn required<T: Clone>(block: &Option<T>, name: &str, pipeline: Pipeline) -> Result<T> {
    block.clone().ok_or_else(|| {
        ExpError::config(format!(
            "pipeline {} needs a [{name}] block",
            pipeline.name()
        ))
    })
}

impl ExperimentConfig {
    fn anchor_paths(&mut self, base: &Path) {
        if let Some(DataConfig::Files(f)) = &mut self.data {
            for d in std::iter::once(&mut f.source).chain(f.target.as_mut()) {
                anchor(base, &mut d.manifest);
                anchor(base, &mut d.volume_dir);
            }
        }
        if let Some(fixture) = self.tune.as_mut().and_then(|t| t.fixture.as_mut()) {
            anchor(base, fixture);
        }
        if let Some(out) = self.output_dir.as_mut() {
            anchor(base, out);
        }
    }

    /// Fills every default the pipeline relies on, applies the seed
    /// override and validates. Idempotent.
    pub fn resolve(&mut self, seed_override: Option<u64>) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(ExpError::config(format!(
                "unsupported schema_version {}, expected {SCHEMA_VERSION}",
                self.schema_version
            )));
        }
        if seed_override.is_some() {
            self.seed = seed_override;
        }
        let p = self.pipeline;
        let replays_fixture =
            p == Pipeline::Tune && self.tune.as_ref().is_some_and(|t| t.fixture.is_some());
        if self.data.is_none() && !replays_fixture {
            return Err(ExpError::config(format!(
                "pipeline {} needs a [data] block",
                p.name()
            )));
        }
        match &mut self.data {
            None => {}
            Some(DataConfig::Synth(s)) => s.validate()?,
            Some(DataConfig::Files(f)) => {
                f.preprocess.validate()?;
                f.source.domain.get_or_insert_with(|| "source".into());
                if let Some(t) = f.target.as_mut() {
                    t.domain.get_or_insert_with(|| "target".into());
                }
                if p.needs_target() && f.target.is_none() {
                    return Err(ExpError::config(format!(
                        "pipeline {} needs [data.files.target]",
                        p.name()
                    )));
                }
                for d in std::iter::once(&f.source).chain(f.target.as_ref()) {
                    if !d.manifest.is_file() {
                        return Err(ExpError::config(format!(
                            "manifest {} does not exist",
                            d.manifest.display()
                        )));
                    }
                    if !d.volume_dir.is_dir() {
                        return Err(ExpError::config(format!(
                            "volume_dir {} does not exist",
                            d.volume_dir.display()
                        )));
                    }
                }
            }
        }

        match p {
            Pipeline::Tune => {
                let tune = required(&self.tune, "tune", p)?;
                match &tune.fixture {
                    Some(f) if !f.is_file() => {
                        return Err(ExpError::config(format!(
                            "fixture {} does not exist",
                            f.display()
                        )));
                    }
                    Some(_) => {}
                    None => {
                        if tune.models.is_empty()
                            || tune.learning_rates.is_empty()
                            || tune.epoch_budgets.is_empty()
                        {
                            return Err(ExpError::config("[tune] needs a fixture or nonempty models, learning_rates and epoch_budgets"));
                        }
                        let max = *tune.epoch_budgets.iter().max().unwrap_or(&1);
                        self.train
                            .get_or_insert_with(|| TrainConfig::new(tune.learning_rates[0], max));
                    }
                }
            }
            _ => {
                let model = required(&self.model, "model", p)?;
                let autoencoder = model.family == Family::Autoencoder;
                if autoencoder != p.uses_autoencoder() {
                    return Err(ExpError::config(format!(
                        "pipeline {} cannot use model family {}",
                        p.name(),
                        model.family.name()
                    )));
                }
                if p.uses_autoencoder() {
                    required(&self.recon, "recon", p)?;
                } else {
                    required(&self.train, "train", p)?;
                }
                if p.needs_target() {
                    required(&self.adda, "adda", p)?;
                }
            }
        }
        if let Some(adda) = self.adda.as_mut() {
            match p {
                Pipeline::Adapt if adda.variant != AddaVariant::Classifier => {
                    return Err(ExpError::config(
                        "pipeline adapt runs the classifier variant only",
                    ));
                }
                // both anomaly variants run; the block records the first
                Pipeline::AdaptAnomaly if adda.variant == AddaVariant::Classifier => {
                    adda.variant = AddaVariant::AnomalySupervised;
                }
                _ => {}
            }
        }

        if let Some(seed) = self.seed {
            match &mut self.data {
                Some(DataConfig::Synth(s)) => s.seed = seed,
                Some(DataConfig::Files(f)) => f.preprocess.split_seed = seed,
                None => {}
            }
            for spec in self
                .model
                .iter_mut()
                .chain(self.tune.iter_mut().flat_map(|t| t.models.iter_mut()))
            {
                spec.param_seed = seed;
            }
            if let Some(t) = self.train.as_mut() {
                t.seed = seed;
            }
            if let Some(a) = self.adda.as_mut() {
                a.seed = seed;
            }
            if let Some(r) = self.recon.as_mut() {
                r.seed = seed;
            }
        }

        let geometry = self.data.as_ref().map(DataConfig::geometry);
        for spec in self
            .model
            .iter()
            .chain(self.tune.iter().flat_map(|t| t.models.iter()))
        {
            spec.validate()?;
            if geometry.is_some_and(|g| g != spec.input_shape) {
                return Err(ExpError::config(format!(
                    "model input_shape {:?} does not match the data geometry {:?}",
                    spec.input_shape,
                    geometry.unwrap_or_default()
                )));
            }
        }
        let dataset_id = self.dataset_id()?;
        if let Some(t) = self.train.as_mut() {
            if t.dataset_id.is_empty() {
                t.dataset_id = dataset_id.clone();
            }
            t.validate()?;
        }
        if let Some(r) = self.recon.as_mut() {
            if r.dataset_id.is_empty() {
                r.dataset_id = dataset_id;
            }
            if let Some(spec) = &self.model {
                r.validate(spec)?;
            }
            if r.model == ReconModel::VariationalAe
                && !self.model.as_ref().is_some_and(|m| m.variational)
            {
                return Err(ExpError::config(
                    "variational_ae needs model.variational = true",
                ));
            }
        }
        if let Some(a) = &self.adda {
            a.validate()?;
        }
        Ok(())
    }

    /// Short content hash of the data block, recorded as checkpoint
    /// provenance.
    pub fn dataset_id(&self) -> Result<String> {
        Ok(format!("data-{}", &digest(&self.data)?[..16]))
    }

    /// Content hash of the resolved config. The output location and key
    /// order do not contribute.
    pub fn experiment_id(&self) -> Result<String> {
        let mut c = self.clone();
        c.output_dir = None;
        digest(&c)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self)
            .map_err(|e| ExpError::internal(format!("config snapshot: {e}")))
    }
}

/// sha256 of the canonical JSON rendering.
pub fn digest<T: Serialize>(value: &T) -> Result<String> {
    let json = serde_json::to_string(&serde_json::to_value(value)?)?;
    Ok(hex::encode(Sha256::digest(json.as_bytes())))
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
schema_version = 1
pipeline = "classify"

[data.synth]
image_size = 64
slices = 8

[model]
family = "residual18"
input_shape = [8, 64, 64]

[train]
learning_rate = 0.001
epochs = 3
"#;

    fn parse(text: &str) -> Result<ExperimentConfig> {
        let mut c = parse_config_str(text, Path::new("/"))?;
        c.resolve(None)?;
        Ok(c)
    }

    #[test]
    fn minimal_config_gets_defaults() {
        let c = parse(MINIMAL).unwrap();
        let train = c.train.as_ref().unwrap();
        assert_eq!(train.batch_size, 16);
        assert!(train.dataset_id.starts_with("data-"));
        let snapshot = c.to_toml().unwrap();
        assert!(snapshot.contains("batch_size = 16"));
        assert!(snapshot.contains("subjects_per_class = 100"));
        let mut again = parse_config_str(&snapshot, Path::new("/")).unwrap();
        again.resolve(None).unwrap();
        assert_eq!(again, c);
        assert_eq!(again.experiment_id().unwrap(), c.experiment_id().unwrap());
    }

    #[test]
    fn unknown_key_is_named() {
        let text = MINIMAL.replace("epochs = 3", "epochz = 3");
        let err = parse(&text).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.message.contains("epochz"), "{}", err.message);
    }

    #[test]
    fn key_order_does_not_change_identity() {
        let reordered = r#"
pipeline = "classify"
schema_version = 1

[train]
epochs = 3
learning_rate = 0.001

[model]
input_shape = [8, 64, 64]
family = "residual18"

[data.synth]
slices = 8
image_size = 64
"#;
        assert_eq!(
            parse(MINIMAL).unwrap().experiment_id().unwrap(),
            parse(reordered).unwrap().experiment_id().unwrap()
        );
        let other = parse(&MINIMAL.replace("epochs = 3", "epochs = 4")).unwrap();
        assert_ne!(
            other.experiment_id().unwrap(),
            parse(MINIMAL).unwrap().experiment_id().unwrap()
        );
    }

    #[test]
    fn version_and_pipeline_requirements() {
        assert!(
            parse(&MINIMAL.replace("schema_version = 1", "schema_version = 2"))
                .unwrap_err()
                .message
                .contains("schema_version")
        );
        let no_train = MINIMAL.replace("[train]\nlearning_rate = 0.001\nepochs = 3\n", "");
        assert!(parse(&no_train).unwrap_err().message.contains("[train]"));
        let wrong_geometry =
            MINIMAL.replace("input_shape = [8, 64, 64]", "input_shape = [10, 64, 64]");
        assert!(parse(&wrong_geometry)
            .unwrap_err()
            .message
            .contains("geometry"));
        let adapt = MINIMAL.replace("\"classify\"", "\"adapt\"");
        assert!(parse(&adapt).unwrap_err().message.contains("[adda]"));
    }

    #[test]
    fn seed_override_reaches_every_component() {
        let mut c = parse_config_str(MINIMAL, Path::new("/")).unwrap();
        c.resolve(Some(7)).unwrap();
        assert_eq!(c.seed, Some(7));
        assert_eq!(c.model.as_ref().unwrap().param_seed, 7);
        assert_eq!(c.train.as_ref().unwrap().seed, 7);
        match &c.data {
            Some(DataConfig::Synth(s)) => assert_eq!(s.seed, 7),
            _ => unreachable!(),
        }
    }

    #[test]
    fn missing_paths_are_config_errors() {
        let text = r#"
schema_version = 1
pipeline = "tune"
[data.files.source]
manifest = "nope.csv"
volume_dir = "vols"
[tune]
fixture = "grid.csv"
"#;
        let err = parse(text).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.message.contains("nope.csv"));
    }
}
