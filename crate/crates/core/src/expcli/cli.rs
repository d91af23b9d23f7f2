use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use super::config::{parse_config_str, DataConfig, ExperimentConfig, Pipeline};
use super::report::{emit_report, ReportFormat};
use super::run::{load_data, load_record, run, RunOptions};
use super::{ExpError, Result};
use crate::dataio::{synth_volumes, write_volume, Partition, SynthConfig};

pub const OUTPUT_ENV: &str = "SHIFTADAPT_OUTPUT";
const DEFAULT_OUTPUT: &str = "runs";

#[derive(Debug, Parser)]
#[command(
    name = "shiftadapt",
    version,
    about = "Train, adapt and evaluate classifiers and anomaly detectors on sliced brain volumes"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Experiment config (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides every seed in the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Recompute cached stages.
    #[arg(long, global = true)]
    pub force: bool,
    /// Output root; defaults to the config's output_dir, then $SHIFTADAPT_OUTPUT, then ./runs.
    #[arg(long, global = true)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Load and split the configured data and write the split assignment.
    Prepare,
    /// Write the synthetic two-domain benchmark as a manifest plus volume files.
    Synth,
    /// Train a classifier on the source domain.
    Train,
    /// Grid search over model, learning rate and epochs (or replay a table).
    Tune,
    /// Adapt a source classifier to the target domain.
    Adapt,
    /// Train an autoencoder on normal source samples.
    Reconstruct,
    /// Reconstruction-error anomaly detection.
    Anomaly,
    /// Adapt an autoencoder to the target domain, both anomaly variants.
    AdaptAnomaly,
    /// Re-emit tables and plots from a finished run directory.
    Report {
        run_dir: PathBuf,
        /// text, csv, json or svg; repeatable. All formats by default.
        #[arg(long)]
        format: Vec<String>,
    },
}

impl Command {
    fn pipeline(&self) -> Option<Pipeline> {
        match self {
            Command::Train => Some(Pipeline::Classify),
            Command::Tune => Some(Pipeline::Tune),
            Command::Adapt => Some(Pipeline::Adapt),
            Command::Reconstruct => Some(Pipeline::Reconstruct),
            Command::Anomaly => Some(Pipeline::Anomaly),
            Command::AdaptAnomaly => Some(Pipeline::AdaptAnomaly),
            _ => None,
        }
    }
}

/// Parses and resolves the config named on the command line, switching
/// its pipeline to `pipeline` when given.
fn load_config(global: &GlobalArgs, pipeline: Option<Pipeline>) -> Result<ExperimentConfig> {
    let path = global
        .config
        .as_ref()
        .ok_or_else(|| ExpError::config("--config is required for this command"))?;
    let text = fs::read_to_string(path)
        .map_err(|e| ExpError::config(format!("{}: {e}", path.display())))?;
    let mut cfg = parse_config_str(&text, path.parent().unwrap_or(Path::new(".")))?;
    if let Some(p) = pipeline {
        if p != cfg.pipeline {
            log::info!(
                "running pipeline {} (config says {})",
                p.name(),
                cfg.pipeline.name()
            );
            cfg.pipeline = p;
        }
    }
    cfg.resolve(global.seed)?;
    Ok(cfg)
}

fn output_root(global: &GlobalArgs, cfg: Option<&ExperimentConfig>) -> PathBuf {
    global
        .output
        .clone()
        .or_else(|| cfg.and_then(|c| c.output_dir.clone()))
        .or_else(|| std::env::var_os(OUTPUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT))
}

fn mkdir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| ExpError::io(dir, e))
}

fn prepare(global: &GlobalArgs) -> Result<PathBuf> {
    let cfg = load_config(global, None)?;
    let data = cfg
        .data
        .as_ref()
        .ok_or_else(|| ExpError::config("prepare needs a [data] block"))?;
    let dir = output_root(global, Some(&cfg)).join(cfg.dataset_id()?);
    mkdir(&dir)?;
    let domains = load_data(data)?;
    let mut summary = serde_json::Map::new();
    for (name, split) in std::iter::once(("source", &domains.source))
        .chain(domains.target.as_ref().map(|t| ("target", t)))
    {
        let mut csv = String::from("subject_id,partition,label\n");
        let labels: std::collections::HashMap<&str, String> = split
            .all()
            .map(|s| (s.subject_id.as_str(), s.label.to_string()))
            .collect();
        for (id, p) in split.assignment() {
            csv.push_str(&format!("{id},{p},{}\n", labels[id.as_str()]));
        }
        let path = dir.join(format!("split_{name}.csv"));
        fs::write(&path, csv).map_err(|e| ExpError::io(&path, e))?;
        let counts: serde_json::Map<String, serde_json::Value> = Partition::ALL
            .iter()
            .map(|&p| {
                (
                    p.to_string(),
                    serde_json::to_value(split.class_counts(p)).unwrap_or_default(),
                )
            })
            .collect();
        summary.insert(
            name.to_string(),
            serde_json::json!({ "counts": counts, "quarantined": split.quarantined }),
        );
    }
    let path = dir.join("summary.json");
    fs::write(&path, serde_json::to_string_pretty(&summary)?)
        .map_err(|e| ExpError::io(&path, e))?;
    Ok(dir)
}

fn synth(global: &GlobalArgs) -> Result<PathBuf> {
    let mut synth_cfg = match &global.config {
        Some(_) => {
            let cfg = load_config(global, None)?;
            match cfg.data {
                Some(DataConfig::Synth(s)) => s,
                _ => return Err(ExpError::config("synth needs a [data.synth] block")),
            }
        }
        None => SynthConfig::default(),
    };
    if let Some(seed) = global.seed {
        synth_cfg.seed = seed;
    }
    let dir = global
        .output
        .clone()
        .unwrap_or_else(|| output_root(global, None).join(format!("synth-{}", synth_cfg.seed)));
    let volumes = dir.join("volumes");
    mkdir(&volumes)?;
    let mut manifest = String::from("subject_id,domain,cdr,age\n");
    for subject in synth_volumes(&synth_cfg)? {
        let r = &subject.record;
        let cdr = r.cdr.map(|c| c.to_string()).unwrap_or_default();
        let age = r.age.map(|a| a.to_string()).unwrap_or_default();
        manifest.push_str(&format!("{},{},{cdr},{age}\n", r.subject_id, r.domain));
        write_volume(
            &volumes.join(format!("{}.vol", r.subject_id)),
            &subject.volume,
        )?;
    }
    let path = dir.join("manifest.csv");
    fs::write(&path, manifest).map_err(|e| ExpError::io(&path, e))?;
    Ok(dir)
}

fn report(run_dir: &Path, formats: &[String]) -> Result<()> {
    let record = load_record(run_dir)?;
    let formats: Vec<ReportFormat> = if formats.is_empty() {
        ReportFormat::ALL.to_vec()
    } else {
        formats.iter().map(|f| f.parse()).collect::<Result<_>>()?
    };
    for path in emit_report(&record, run_dir, &formats)? {
        println!("{}", run_dir.join(path).display());
    }
    Ok(())
}

fn dispatch(cli: &Cli) -> Result<()> {
    let g = &cli.global;
    match &cli.command {
        Command::Prepare => println!("{}", prepare(g)?.display()),
        Command::Synth => println!("{}", synth(g)?.display()),
        Command::Report { run_dir, format } => report(run_dir, format)?,
        other => {
            let cfg = load_config(g, other.pipeline())?;
            let root = output_root(g, Some(&cfg));
            let record = run(
                &cfg,
                &RunOptions {
                    output_root: root.clone(),
                    force: g.force,
                },
            )?;
            let dir = root.join(&record.experiment_id[..16]);
            let table = fs::read_to_string(dir.join("metrics.txt")).unwrap_or_default();
            print!("{table}");
            println!("run directory: {}", dir.display());
        }
    }
    Ok(())
}

/// Entry point shared by the binary and tests; returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
