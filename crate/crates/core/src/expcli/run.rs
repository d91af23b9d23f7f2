use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use candle_core::{DType, Device, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::config::{digest, DataConfig, ExperimentConfig, Pipeline, TuneConfig};
use super::{ErrorKind, ExpError, Result};
use crate::adda::{adapt, AdaptationBundle, AddaConfig, AddaError, AddaVariant, EpochHistory};
use crate::anomaly::{
    anomaly_auc, score_reconstruction, scores_csv, train_reconstructor, AnomalyScore,
};
use crate::dataio::{
    build_dataset, load_manifest, synth_generate, DatasetSplit, DomainTag, Label, SliceStack,
    UnitRange,
};
use crate::metrics::{emd_report, IntensityMap, MetricsReport};
use crate::nets::{Autoencoder, Checkpoint, Classifier, TrainingMeta};
use crate::trainsup::{
    batch_tensor, evaluate_classifier, grid_search, train_classifier, Batches, GridAxes, GridReport,
};

const CHUNK: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedReport {
    pub name: String,
    pub report: MetricsReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    pub name: String,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    pub key: String,
    pub cached: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub experiment_id: String,
    pub pipeline: Pipeline,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub config: ExperimentConfig,
    pub stages: Vec<StageRecord>,
    pub reports: Vec<NamedReport>,
    pub curves: Vec<Curve>,
    pub grid: Option<GridReport>,
    /// Files written into the run directory, relative to it.
    pub artifacts: Vec<PathBuf>,
}

impl RunRecord {
    pub fn report(&self, name: &str) -> Option<&MetricsReport> {
        self.reports
            .iter()
            .find(|r| r.name == name)
            .map(|r| &r.report)
    }

    pub fn curve(&self, name: &str) -> Option<&[f64]> {
        self.curves
            .iter()
            .find(|c| c.name == name)
            .map(|c| c.values.as_slice())
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Root holding `cache/` and one directory per experiment.
    pub output_root: PathBuf,
    pub force: bool,
}

pub struct Domains {
    pub source: DatasetSplit,
    pub target: Option<DatasetSplit>,
}

pub fn load_data(data: &DataConfig) -> Result<Domains> {
    match data {
        DataConfig::Synth(s) => {
            let (source, target) = synth_generate(s)?;
            Ok(Domains {
                source,
                target: Some(target),
            })
        }
        DataConfig::Files(f) => {
            let manifest = load_manifest(&f.source.manifest)?;
            let tag = DomainTag::parse(f.source.domain.as_deref().unwrap_or("source"));
            let source = build_dataset(
                &manifest.for_domain(&tag),
                &f.source.volume_dir,
                &f.preprocess,
            )?;
            let target = match &f.target {
                Some(t) => {
                    let manifest = load_manifest(&t.manifest)?;
                    let tag = DomainTag::parse(t.domain.as_deref().unwrap_or("target"));
                    Some(build_dataset(
                        &manifest.for_domain(&tag),
                        &t.volume_dir,
                        &f.preprocess,
                    )?)
                }
                None => None,
            };
            Ok(Domains { source, target })
        }
    }
}

/// Clips and rescales every partition into [-1, 1] using the train
/// partition's percentile range.
pub fn to_unit_range(split: &DatasetSplit) -> Result<DatasetSplit> {
    let range = UnitRange::fit(&split.train)?;
    Ok(DatasetSplit {
        train: range.apply_all(&split.train),
        val: range.apply_all(&split.val),
        test: range.apply_all(&split.test),
        split_seed: split.split_seed,
        quarantined: split.quarantined.clone(),
    })
}

fn now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| ExpError::io(path, e))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| ExpError::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write(path, serde_json::to_string_pretty(value)?)
}

/// Exclusive ownership of a run directory; released on drop.
struct RunLock(PathBuf);

impl RunLock {
    fn acquire(dir: &Path) -> Result<Self> {
        let path = dir.join(".lock");
        match fs::OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
        {
            Ok(_) => Ok(Self(path)),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                Err(ExpError::internal(format!(
                    "{} is locked by another run (remove the lock file if it is stale)",
                    dir.display()
                )))
            }
            Err(e) => Err(ExpError::io(&path, e)),
        }
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.0);
    }
}

/// Content-addressed stage outputs shared by every run under one root.
struct StageCache {
    root: PathBuf,
    force: bool,
    log: Vec<StageRecord>,
}

impl StageCache {
    /// Runs `compute` into a fresh directory unless a completed entry for
    /// `key_material` exists, then loads the result from disk either way.
    fn stage<T>(
        &mut self,
        name: &str,
        key_material: &impl Serialize,
        compute: impl FnOnce(&Path) -> Result<()>,
        load: impl FnOnce(&Path) -> Result<T>,
    ) -> Result<(T, PathBuf)> {
        let key = digest(&(name, key_material))?;
        let dir = self.root.join(format!("{name}-{}", &key[..16]));
        let done = dir.join("complete");
        let cached = !self.force && done.is_file();
        if !cached {
            log::info!("stage {name}: computing");
            let partial = self.root.join(format!("{name}-{}.partial", &key[..16]));
            for d in [&partial, &dir] {
                if d.exists() {
                    fs::remove_dir_all(d).map_err(|e| ExpError::io(d, e))?;
                }
            }
            fs::create_dir_all(&partial).map_err(|e| ExpError::io(&partial, e))?;
            compute(&partial).map_err(|e| e.in_stage(name))?;
            write(&partial.join("complete"), &key)?;
            fs::rename(&partial, &dir).map_err(|e| ExpError::io(&dir, e))?;
        } else {
            log::info!("stage {name}: cached at {}", dir.display());
        }
        self.log.push(StageRecord {
            name: name.to_string(),
            key,
            cached,
        });
        let value = load(&dir).map_err(|e| e.in_stage(name))?;
        Ok((value, dir))
    }
}

struct Ctx<'a> {
    cfg: &'a ExperimentConfig,
    experiment_id: String,
    run_dir: PathBuf,
    cache: StageCache,
    reports: Vec<NamedReport>,
    curves: Vec<Curve>,
    grid: Option<GridReport>,
    artifacts: Vec<PathBuf>,
}

impl Ctx<'_> {
    fn add_report(&mut self, name: &str, mut report: MetricsReport) {
        report.experiment_id = self.experiment_id.clone();
        self.reports.push(NamedReport {
            name: name.to_string(),
            report,
        });
    }

    fn add_curve(&mut self, name: &str, values: Vec<f64>) {
        if !values.is_empty() {
            self.curves.push(Curve {
                name: name.to_string(),
                values,
            });
        }
    }

    fn artifact(&mut self, name: &str, contents: impl AsRef<[u8]>) -> Result<()> {
        write(&self.run_dir.join(name), contents)?;
        self.artifacts.push(PathBuf::from(name));
        Ok(())
    }

    fn copy_artifact(&mut self, from: &Path, name: &str) -> Result<()> {
        let to = self.run_dir.join(name);
        fs::copy(from, &to).map_err(|e| ExpError::io(&to, e))?;
        self.artifacts.push(PathBuf::from(name));
        Ok(())
    }

    fn data(&self) -> &DataConfig {
        self.cfg
            .data
            .as_ref()
            .expect("resolved configs carry data for this pipeline")
    }
}

#[derive(Serialize, Deserialize)]
struct Curves(Vec<Curve>);

fn curve_pairs(pairs: &[(&str, &[f64])]) -> Curves {
    Curves(
        pairs
            .iter()
            .map(|(n, v)| Curve {
                name: n.to_string(),
                values: v.to_vec(),
            })
            .collect(),
    )
}

/// Executes the configured pipeline; `cfg` must already be resolved.
pub fn run(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<RunRecord> {
    let started_unix = now();
    let experiment_id = cfg.experiment_id()?;
    let run_dir = opts.output_root.join(&experiment_id[..16]);
    fs::create_dir_all(&run_dir).map_err(|e| ExpError::io(&run_dir, e))?;
    let _lock = RunLock::acquire(&run_dir)?;
    let cache_root = opts.output_root.join("cache");
    fs::create_dir_all(&cache_root).map_err(|e| ExpError::io(&cache_root, e))?;

    let mut ctx = Ctx {
        cfg,
        experiment_id: experiment_id.clone(),
        run_dir: run_dir.clone(),
        cache: StageCache {
            root: cache_root,
            force: opts.force,
            log: Vec::new(),
        },
        reports: Vec::new(),
        curves: Vec::new(),
        grid: None,
        artifacts: Vec::new(),
    };
    ctx.artifact("config.toml", cfg.to_toml()?)?;
    match cfg.pipeline {
        Pipeline::Classify => classify(&mut ctx)?,
        Pipeline::Tune => tune(&mut ctx)?,
        Pipeline::Adapt => adapt_classifier(&mut ctx)?,
        Pipeline::Reconstruct => reconstruct(&mut ctx)?,
        Pipeline::Anomaly => anomaly(&mut ctx)?,
        Pipeline::AdaptAnomaly => adapt_anomaly(&mut ctx)?,
    }
    let mut record = RunRecord {
        experiment_id,
        pipeline: cfg.pipeline,
        started_unix,
        finished_unix: 0,
        config: cfg.clone(),
        stages: ctx.cache.log,
        reports: ctx.reports,
        curves: ctx.curves,
        grid: ctx.grid,
        artifacts: ctx.artifacts,
    };
    for path in super::report::emit_report(&record, &run_dir, &super::report::ReportFormat::ALL)? {
        record.artifacts.push(path);
    }
    record.artifacts.push(PathBuf::from("run.json"));
    record.finished_unix = now();
    write_json(&run_dir.join("run.json"), &record)?;
    Ok(record)
}

/// Reads a persisted run record.
pub fn load_record(run_dir: &Path) -> Result<RunRecord> {
    read_json(&run_dir.join("run.json")).map_err(|e| ExpError::new(ErrorKind::Config, e.message))
}

fn meta(dataset_id: &str, epochs: usize, lr: f64, losses: &[f64]) -> TrainingMeta {
    TrainingMeta {
        dataset_id: dataset_id.to_string(),
        epochs,
        learning_rate: lr,
        loss_curve_digest: crate::nets::loss_curve_digest(losses),
    }
}

/// Trains (or reuses) the source classifier.
fn source_classifier(ctx: &mut Ctx, domains: &Domains) -> Result<(Checkpoint, PathBuf)> {
    let spec = ctx.cfg.model.clone().expect("resolved");
    let train = ctx.cfg.train.clone().expect("resolved");
    let key = (ctx.data().clone(), &spec, &train);
    let ((ckpt, curves), dir) = ctx.cache.stage(
        "classifier",
        &key,
        |dir| {
            let result = train_classifier(&domains.source, &spec, &train)?;
            result.checkpoint.save(&dir.join("model.ckpt"))?;
            write_json(
                &dir.join("curves.json"),
                &curve_pairs(&[
                    ("train_loss", &result.loss_curve),
                    ("val_accuracy", &result.val_accuracy_curve),
                ]),
            )
        },
        |dir| {
            Ok((
                Checkpoint::load(&dir.join("model.ckpt"))?,
                read_json::<Curves>(&dir.join("curves.json"))?,
            ))
        },
    )?;
    for c in curves.0 {
        ctx.add_curve(&c.name, c.values);
    }
    Ok((ckpt, dir.join("model.ckpt")))
}

fn model_name(ckpt: &Checkpoint) -> &'static str {
    ckpt.spec.family.name()
}

fn classify(ctx: &mut Ctx) -> Result<()> {
    let domains = load_data(ctx.data())?;
    let (ckpt, path) = source_classifier(ctx, &domains)?;
    ctx.copy_artifact(&path, "model.ckpt")?;
    let report = evaluate_classifier(&ckpt, &domains.source.test, "source/test")?;
    ctx.add_report("source_test", report);
    Ok(())
}

fn tune(ctx: &mut Ctx) -> Result<()> {
    let tune: TuneConfig = ctx.cfg.tune.clone().expect("resolved");
    let grid = match &tune.fixture {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| ExpError::new(ErrorKind::Data, format!("{}: {e}", path.display())))?;
            GridReport::from_csv(&text)?
        }
        None => {
            let domains = load_data(ctx.data())?;
            let base = ctx.cfg.train.clone().expect("resolved");
            let key = (ctx.data().clone(), &tune, &base);
            let axes = GridAxes {
                specs: tune.models.clone(),
                learning_rates: tune.learning_rates.clone(),
                epoch_budgets: tune.epoch_budgets.clone(),
            };
            let ((grid, ckpt, curves), dir) = ctx.cache.stage(
                "grid",
                &key,
                |dir| {
                    let outcome =
                        grid_search(&domains.source, &axes, &base, tune.exact_retraining)?;
                    write(&dir.join("grid.csv"), outcome.report.to_csv())?;
                    write_json(&dir.join("grid.json"), &outcome.report)?;
                    outcome.best_checkpoint.save(&dir.join("best.ckpt"))?;
                    write_json(
                        &dir.join("curves.json"),
                        &curve_pairs(&[("train_loss", &outcome.best_loss_curve)]),
                    )
                },
                |dir| {
                    Ok((
                        read_json::<GridReport>(&dir.join("grid.json"))?,
                        Checkpoint::load(&dir.join("best.ckpt"))?,
                        read_json::<Curves>(&dir.join("curves.json"))?,
                    ))
                },
            )?;
            ctx.copy_artifact(&dir.join("best.ckpt"), "model.ckpt")?;
            for c in curves.0 {
                ctx.add_curve(&c.name, c.values);
            }
            let report = evaluate_classifier(&ckpt, &domains.source.test, "source/test")?;
            ctx.add_report("source_test", report);
            grid
        }
    };
    let summary = grid
        .summary()
        .ok_or_else(|| ExpError::new(ErrorKind::Data, "grid has no cells"))?;
    let mut best = MetricsReport::new(
        ctx.experiment_id.clone(),
        "source/val",
        summary.best.model.clone(),
    );
    best.metrics.accuracy = Some(summary.best.val_accuracy);
    ctx.reports.insert(
        0,
        NamedReport {
            name: "grid_best".into(),
            report: best,
        },
    );
    ctx.artifact("grid_summary.json", serde_json::to_string_pretty(&summary)?)?;
    ctx.grid = Some(grid);
    Ok(())
}

fn target_of(domains: &Domains) -> Result<&DatasetSplit> {
    domains
        .target
        .as_ref()
        .ok_or_else(|| ExpError::config("this pipeline needs a target domain"))
}

/// Saves the last good checkpoint of a diverged adaptation into the run
/// directory before reporting the failure.
fn adaptation_failure(ctx: &mut Ctx, e: AddaError, name: &str) -> ExpError {
    if let AddaError::Divergence { last_good, .. } = &e {
        let file = format!("{name}_last_good.ckpt");
        if last_good.save(&ctx.run_dir.join(&file)).is_ok() {
            ctx.artifacts.push(PathBuf::from(file));
        }
    }
    ExpError::from(e)
}

#[derive(Serialize, Deserialize)]
struct Adapted {
    history: Vec<EpochHistory>,
}

/// Runs (or reuses) one adaptation and returns the target checkpoint and
/// per-epoch history.
fn adaptation_stage(
    ctx: &mut Ctx,
    name: &str,
    source_key: &str,
    bundle: impl FnOnce() -> Result<AdaptationBundle>,
    source: &[SliceStack],
    target: &[SliceStack],
    adda: &AddaConfig,
) -> Result<(Checkpoint, Vec<EpochHistory>, PathBuf)> {
    let key = (ctx.data().clone(), source_key, adda);
    let dataset_id = ctx.cfg.dataset_id()?;
    let mut failure = None;
    let staged = ctx.cache.stage(
        name,
        &key,
        |dir| {
            let adapted = match adapt(source, target, bundle()?, adda) {
                Ok(b) => b,
                Err(e) => {
                    failure = Some(e);
                    return Err(ExpError::internal("adaptation failed"));
                }
            };
            let losses: Vec<f64> = adapted.history.iter().map(|h| h.target_loss).collect();
            let m = meta(&dataset_id, adda.epochs, adda.target_lr, &losses);
            adapted
                .target_checkpoint(m)?
                .save(&dir.join("target.ckpt"))?;
            for (epoch, ckpt) in &adapted.milestones {
                ckpt.save(&dir.join(format!("target_epoch{epoch}.ckpt")))?;
            }
            write(
                &dir.join("history.csv"),
                crate::adda::history_csv(&adapted.history),
            )?;
            write_json(
                &dir.join("history.json"),
                &Adapted {
                    history: adapted.history,
                },
            )
        },
        |dir| {
            Ok((
                Checkpoint::load(&dir.join("target.ckpt"))?,
                read_json::<Adapted>(&dir.join("history.json"))?,
            ))
        },
    );
    match staged {
        Ok(((ckpt, adapted), dir)) => Ok((ckpt, adapted.history, dir)),
        Err(e) => match failure {
            Some(inner) => Err(adaptation_failure(ctx, inner, name).in_stage(name)),
            None => Err(e),
        },
    }
}

fn add_history(ctx: &mut Ctx, prefix: &str, history: &[EpochHistory], dir: &Path) -> Result<()> {
    ctx.add_curve(
        &format!("{prefix}critic_loss"),
        history.iter().map(|h| h.critic_loss).collect(),
    );
    ctx.add_curve(
        &format!("{prefix}target_loss"),
        history.iter().map(|h| h.target_loss).collect(),
    );
    ctx.copy_artifact(&dir.join("history.csv"), &format!("{prefix}history.csv"))
}

fn adapt_classifier(ctx: &mut Ctx) -> Result<()> {
    let domains = load_data(ctx.data())?;
    let target = target_of(&domains)?;
    let (source_ckpt, path) = source_classifier(ctx, &domains)?;
    ctx.copy_artifact(&path, "source_model.ckpt")?;
    let adda = ctx.cfg.adda.clone().expect("resolved");
    let source_key = digest(&(ctx.data().clone(), &ctx.cfg.model, &ctx.cfg.train))?;
    let (target_ckpt, history, dir) = adaptation_stage(
        ctx,
        "adda",
        &source_key,
        || {
            Ok(AdaptationBundle::from_classifier(
                &Classifier::from_checkpoint(&source_ckpt)?,
                &adda,
            )?)
        },
        &domains.source.train,
        &target.train,
        &adda,
    )?;
    ctx.copy_artifact(&dir.join("target.ckpt"), "target_model.ckpt")?;
    add_history(ctx, "", &history, &dir)?;
    ctx.add_report(
        "source_test",
        evaluate_classifier(&source_ckpt, &domains.source.test, "source/test")?,
    );
    ctx.add_report(
        "target_no_da",
        evaluate_classifier(&source_ckpt, &target.test, "target/test")?,
    );
    ctx.add_report(
        "target_adda",
        evaluate_classifier(&target_ckpt, &target.test, "target/test")?,
    );
    Ok(())
}

fn normals(stacks: &[SliceStack]) -> Vec<SliceStack> {
    stacks
        .iter()
        .filter(|s| s.label == Label::Normal)
        .cloned()
        .collect()
}

/// Trains (or reuses) the autoencoder on the source domain's normal
/// training samples.
fn source_autoencoder(ctx: &mut Ctx, source: &DatasetSplit) -> Result<(Checkpoint, PathBuf)> {
    let spec = ctx.cfg.model.clone().expect("resolved");
    let recon = ctx.cfg.recon.clone().expect("resolved");
    let key = (ctx.data().clone(), &spec, &recon);
    let train = normals(&source.train);
    let ((ckpt, curves), dir) = ctx.cache.stage(
        "autoencoder",
        &key,
        |dir| {
            let result = train_reconstructor(&train, &spec, &recon)?;
            result.checkpoint.save(&dir.join("model.ckpt"))?;
            write_json(
                &dir.join("curves.json"),
                &curve_pairs(&[
                    ("train_loss", &result.loss_curve),
                    ("reconstruction_mse", &result.mse_curve),
                    ("latent_critic_loss", &result.critic_curve),
                ]),
            )
        },
        |dir| {
            Ok((
                Checkpoint::load(&dir.join("model.ckpt"))?,
                read_json::<Curves>(&dir.join("curves.json"))?,
            ))
        },
    )?;
    for c in curves.0 {
        ctx.add_curve(&c.name, c.values);
    }
    Ok((ckpt, dir.join("model.ckpt")))
}

fn auc_report(scores: &[AnomalyScore], dataset: &str, model: &str) -> MetricsReport {
    MetricsReport::new("", dataset, model).with_auc(anomaly_auc(scores))
}

fn tensor_to_stacks(t: &Tensor, prefix: &str, offset: usize) -> Result<Vec<SliceStack>> {
    let (n, s, h, w) = t.dims4().map_err(|e| ExpError::internal(e.to_string()))?;
    let flat: Vec<f32> = t
        .to_dtype(DType::F32)
        .and_then(|t| t.flatten_all())
        .and_then(|t| t.to_vec1())
        .map_err(|e| ExpError::internal(e.to_string()))?;
    let per = s * h * w;
    (0..n)
        .map(|i| {
            let slices =
                ndarray::Array3::from_shape_vec((s, h, w), flat[i * per..(i + 1) * per].to_vec())
                    .map_err(|e| ExpError::internal(e.to_string()))?;
            Ok(SliceStack {
                slices,
                label: Label::Normal,
                subject_id: format!("{prefix}{}", offset + i),
                normalization_stats: (0.0, 1.0),
            })
        })
        .collect()
}

/// Reconstructions of `real` and an equal number of samples decoded from
/// standard-normal latents.
fn generate_and_reconstruct(
    ae: &Autoencoder,
    real: &[SliceStack],
    seed: u64,
) -> Result<(Vec<SliceStack>, Vec<SliceStack>)> {
    let candle = |e: candle_core::Error| ExpError::internal(e.to_string());
    let latent = ae.encoder.latent_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut generated, mut reconstructed) = (Vec::new(), Vec::new());
    for idx in Batches::sequential(real.len(), CHUNK).iter() {
        let items: Vec<&SliceStack> = idx.iter().map(|&i| &real[i]).collect();
        let x = batch_tensor(&items, DType::F32)?;
        let r = ae.reconstruct(&x)?;
        reconstructed.extend(tensor_to_stacks(&r, "reconstructed-", idx[0])?);
        let z: Vec<f32> = (0..items.len() * latent)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        let z = Tensor::from_vec(z, (items.len(), latent), &Device::Cpu).map_err(candle)?;
        let g = ae.decoder.forward(&z)?;
        generated.extend(tensor_to_stacks(&g, "generated-", idx[0])?);
    }
    Ok((generated, reconstructed))
}

fn reconstruct(ctx: &mut Ctx) -> Result<()> {
    let domains = load_data(ctx.data())?;
    let source = to_unit_range(&domains.source)?;
    let (ckpt, path) = source_autoencoder(ctx, &source)?;
    ctx.copy_artifact(&path, "model.ckpt")?;
    let ae = Autoencoder::from_checkpoint(&ckpt)?;
    let real = normals(&source.test);
    let seed = ctx.cfg.recon.as_ref().map_or(0, |r| r.seed);
    let (generated, reconstructed) = generate_and_reconstruct(&ae, &real, seed)?;
    let emd = emd_report(
        &real,
        &generated,
        &reconstructed,
        IntensityMap::unit_to_byte(),
    )?;
    let report = MetricsReport::new("", "source/test/normal", model_name(&ckpt)).with_emd(&emd);
    ctx.add_report("source_test", report);
    Ok(())
}

fn anomaly(ctx: &mut Ctx) -> Result<()> {
    let domains = load_data(ctx.data())?;
    let source = to_unit_range(&domains.source)?;
    let (ckpt, path) = source_autoencoder(ctx, &source)?;
    ctx.copy_artifact(&path, "model.ckpt")?;
    let model = model_name(&ckpt);
    let scores = score_reconstruction(&ckpt, &source.test)?;
    ctx.artifact("scores_source.csv", scores_csv(&scores))?;
    ctx.add_report("source_test", auc_report(&scores, "source/test", model));
    if let Some(target) = &domains.target {
        let target = to_unit_range(target)?;
        let scores = score_reconstruction(&ckpt, &target.test)?;
        ctx.artifact("scores_target_no_da.csv", scores_csv(&scores))?;
        ctx.add_report("target_no_da", auc_report(&scores, "target/test", model));
    }
    Ok(())
}

fn adapt_anomaly(ctx: &mut Ctx) -> Result<()> {
    let domains = load_data(ctx.data())?;
    let source = to_unit_range(&domains.source)?;
    let target = to_unit_range(target_of(&domains)?)?;
    let (ckpt, path) = source_autoencoder(ctx, &source)?;
    ctx.copy_artifact(&path, "model.ckpt")?;
    let model = model_name(&ckpt);
    let source_scores = score_reconstruction(&ckpt, &source.test)?;
    ctx.add_report(
        "source_test",
        auc_report(&source_scores, "source/test", model),
    );
    let no_da = score_reconstruction(&ckpt, &target.test)?;
    ctx.artifact("scores_target_no_da.csv", scores_csv(&no_da))?;
    ctx.add_report("target_no_da", auc_report(&no_da, "target/test", model));

    let source_normals = normals(&source.train);
    let source_key = digest(&(ctx.data().clone(), &ctx.cfg.model, &ctx.cfg.recon))?;
    let base = ctx.cfg.adda.clone().expect("resolved");
    for variant in [
        AddaVariant::AnomalySupervised,
        AddaVariant::AnomalyUnsupervised,
    ] {
        let adda = AddaConfig {
            variant,
            ..base.clone()
        };
        let tag = match variant {
            AddaVariant::AnomalySupervised => "supervised",
            _ => "unsupervised",
        };
        let name = format!("adda_{tag}");
        let (target_ckpt, history, dir) = adaptation_stage(
            ctx,
            &name,
            &source_key,
            || {
                Ok(AdaptationBundle::from_autoencoder(
                    &Autoencoder::from_checkpoint(&ckpt)?,
                    &adda,
                )?)
            },
            &source_normals,
            &target.train,
            &adda,
        )?;
        ctx.copy_artifact(
            &dir.join("target.ckpt"),
            &format!("target_model_{tag}.ckpt"),
        )?;
        add_history(ctx, &format!("{tag}_"), &history, &dir)?;
        let scores = score_reconstruction(&target_ckpt, &target.test)?;
        ctx.artifact(&format!("scores_target_{tag}.csv"), scores_csv(&scores))?;
        ctx.add_report(
            &format!("target_adda_{tag}"),
            auc_report(&scores, "target/test", model),
        );
    }
    Ok(())
}
