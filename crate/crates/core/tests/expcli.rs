use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use shiftadapt::expcli::{
    load_record, main_with_args, parse_config, run, ExperimentConfig, RunOptions, RunRecord,
};
use shiftadapt::trainsup::GridReport;
use tempfile::TempDir;

const SYNTH: &str = r#"
[data.synth]
image_size = 32
slices = 2
subjects_per_class = 10
"#;

const CLASSIFIER: &str = r#"
[model]
family = "residual18"
input_shape = [2, 32, 32]
base_width = 2
latent_dim = 8

[train]
learning_rate = 0.01
epochs = 2
batch_size = 8
"#;

const AUTOENCODER: &str = r#"
[model]
family = "autoencoder"
input_shape = [2, 32, 32]
base_width = 4
latent_dim = 8
downsamples = 3

[recon]
model = "adversarial_ae"
learning_rate = 0.001
epochs = 2
batch_size = 8
"#;

fn adda_block(epochs: usize) -> String {
    format!("\n[adda]\nepochs = {epochs}\nbatch_size = 8\ncritic_lr = 0.001\ntarget_lr = 0.0001\ncritic_hidden = [16]\n")
}

fn write_config(dir: &Path, pipeline: &str, body: &str) -> PathBuf {
    let path = dir.join(format!("{pipeline}.toml"));
    fs::write(
        &path,
        format!("schema_version = 1\npipeline = \"{pipeline}\"\nseed = 4\n{body}"),
    )
    .unwrap();
    path
}

fn run_in(root: &Path, cfg: &ExperimentConfig, force: bool) -> RunRecord {
    run(
        cfg,
        &RunOptions {
            output_root: root.to_path_buf(),
            force,
        },
    )
    .unwrap()
}

fn run_dir(root: &Path, record: &RunRecord) -> PathBuf {
    root.join(&record.experiment_id[..16])
}

/// Every file under `dir`, keyed by relative path.
fn tree(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.insert(
                    path.strip_prefix(dir).unwrap().to_path_buf(),
                    fs::read(&path).unwrap(),
                );
            }
        }
    }
    out
}

fn args(list: &[&str]) -> Vec<String> {
    std::iter::once("shiftadapt")
        .chain(list.iter().copied())
        .map(String::from)
        .collect()
}

#[test]
fn classify_run_emits_all_artifacts() {
    let tmp = TempDir::new().unwrap();
    let cfg = parse_config(&write_config(
        tmp.path(),
        "classify",
        &format!("{SYNTH}{CLASSIFIER}"),
    ))
    .unwrap();
    let record = run_in(tmp.path(), &cfg, false);
    let dir = run_dir(tmp.path(), &record);
    for file in [
        "config.toml",
        "run.json",
        "model.ckpt",
        "metrics.txt",
        "metrics.csv",
        "metrics.json",
        "loss.csv",
        "loss.svg",
    ] {
        assert!(dir.join(file).is_file(), "{file} missing");
    }
    assert!(!dir.join(".lock").exists());
    assert_eq!(record.experiment_id, cfg.experiment_id().unwrap());
    let loss = fs::read_to_string(dir.join("loss.csv")).unwrap();
    assert_eq!(loss.lines().count(), 1 + 2);
    let report = &record.report("source_test").unwrap();
    let accuracy = report.metrics.accuracy.unwrap();
    assert!((0.0..=1.0).contains(&accuracy));
    // the text and CSV tables print the persisted value verbatim
    for table in ["metrics.txt", "metrics.csv"] {
        let text = fs::read_to_string(dir.join(table)).unwrap();
        assert!(text.contains(&accuracy.to_string()), "{table}: {text}");
    }
    let snapshot = fs::read_to_string(dir.join("config.toml")).unwrap();
    assert!(
        snapshot.contains("sagittal_extent"),
        "defaults echoed: {snapshot}"
    );
}

#[test]
fn cached_stages_match_forced_recomputation() {
    let tmp = TempDir::new().unwrap();
    let cfg = parse_config(&write_config(
        tmp.path(),
        "classify",
        &format!("{SYNTH}{CLASSIFIER}"),
    ))
    .unwrap();
    let first = run_in(tmp.path(), &cfg, false);
    assert!(first.stages.iter().all(|s| !s.cached));
    let cache = tree(&tmp.path().join("cache"));

    let second = run_in(tmp.path(), &cfg, false);
    assert!(second.stages.iter().all(|s| s.cached));
    assert_eq!(second.reports, first.reports);

    let forced = run_in(tmp.path(), &cfg, true);
    assert!(forced.stages.iter().all(|s| !s.cached));
    assert_eq!(tree(&tmp.path().join("cache")), cache);
    assert_eq!(forced.reports, first.reports);
}

#[test]
fn same_config_reproduces_reports_in_a_fresh_root() {
    let tmp = TempDir::new().unwrap();
    let cfg = parse_config(&write_config(
        tmp.path(),
        "classify",
        &format!("{SYNTH}{CLASSIFIER}"),
    ))
    .unwrap();
    let a = run_in(&tmp.path().join("a"), &cfg, false);
    let b = run_in(&tmp.path().join("b"), &cfg, false);
    assert_eq!(a.reports, b.reports);
    assert_eq!(a.curves, b.curves);
}

#[test]
fn zero_epoch_adaptation_reports_the_baseline() {
    let tmp = TempDir::new().unwrap();
    let cfg = parse_config(&write_config(
        tmp.path(),
        "adapt",
        &format!("{SYNTH}{CLASSIFIER}{}", adda_block(0)),
    ))
    .unwrap();
    let record = run_in(tmp.path(), &cfg, false);
    let no_da = &record.report("target_no_da").unwrap();
    let adapted = &record.report("target_adda").unwrap();
    assert_eq!(adapted.metrics, no_da.metrics);
    assert!(record.report("source_test").is_some());
}

#[test]
fn adapt_anomaly_reports_three_aucs() {
    let tmp = TempDir::new().unwrap();
    let cfg = parse_config(&write_config(
        tmp.path(),
        "adapt_anomaly",
        &format!("{SYNTH}{AUTOENCODER}{}", adda_block(1)),
    ))
    .unwrap();
    let record = run_in(tmp.path(), &cfg, false);
    for name in [
        "target_no_da",
        "target_adda_supervised",
        "target_adda_unsupervised",
    ] {
        let auc = record
            .report(name)
            .unwrap_or_else(|| panic!("{name} missing"))
            .metrics
            .auc;
        assert!(
            auc.is_some_and(|a| (0.0..=1.0).contains(&a)),
            "{name}: {auc:?}"
        );
    }
    let table = fs::read_to_string(run_dir(tmp.path(), &record).join("metrics.txt")).unwrap();
    for name in [
        "target_no_da",
        "target_adda_supervised",
        "target_adda_unsupervised",
    ] {
        assert!(table.contains(name), "{table}");
    }
}

#[test]
fn tune_fixture_selects_the_best_cell() {
    let tmp = TempDir::new().unwrap();
    let fixture = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/grid_accuracy.csv");
    let path = write_config(
        tmp.path(),
        "tune",
        &format!("[tune]\nfixture = {:?}\n", fixture.display().to_string()),
    );
    let record = run_in(tmp.path(), &parse_config(&path).unwrap(), false);
    let dir = run_dir(tmp.path(), &record);

    let grid = GridReport::from_csv(&fs::read_to_string(dir.join("grid.csv")).unwrap()).unwrap();
    let best = grid.summary().unwrap().best;
    assert_eq!(best.model, "grouped_residual50");
    assert_eq!(best.learning_rate, 2e-4);
    assert_eq!(best.epochs, 50);
    assert_eq!(best.val_accuracy, 0.85306);
    assert_eq!(
        record.report("grid_best").unwrap().metrics.accuracy,
        Some(0.85306)
    );

    let text = fs::read_to_string(dir.join("grid.txt")).unwrap();
    let header = text.lines().next().unwrap();
    for budget in ["10", "20", "50", "100"] {
        assert!(header.split_whitespace().any(|c| c == budget), "{header}");
    }
    assert!(text.contains("0.85306"));
}

#[test]
fn report_verb_reemits_requested_formats() {
    let tmp = TempDir::new().unwrap();
    let cfg = parse_config(&write_config(
        tmp.path(),
        "classify",
        &format!("{SYNTH}{CLASSIFIER}"),
    ))
    .unwrap();
    let record = run_in(tmp.path(), &cfg, false);
    let dir = run_dir(tmp.path(), &record);
    fs::remove_file(dir.join("metrics.csv")).unwrap();
    fs::remove_file(dir.join("metrics.json")).unwrap();
    let d = dir.to_str().unwrap();
    assert_eq!(
        main_with_args(args(&["report", d, "--format", "csv", "--format", "json"])),
        0
    );
    let csv = fs::read_to_string(dir.join("metrics.csv")).unwrap();
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("metrics.json")).unwrap()).unwrap();
    let accuracy = json[0]["metrics"]["accuracy"].as_f64().unwrap();
    assert!(csv.contains(&accuracy.to_string()));
    assert_eq!(load_record(&dir).unwrap().reports, record.reports);
    assert_eq!(main_with_args(args(&["report", d, "--format", "pdf"])), 2);
}

#[test]
fn exit_codes_follow_error_kind() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("out");
    let o = out.to_str().unwrap();
    assert_eq!(main_with_args(args(&["--help"])), 0);
    assert_eq!(main_with_args(args(&["bogus-verb"])), 2);
    assert_eq!(main_with_args(args(&["train"])), 2);

    let typo = write_config(
        tmp.path(),
        "classify",
        &format!("{SYNTH}{CLASSIFIER}").replace("epochs = 2", "epochz = 2"),
    );
    assert_eq!(
        main_with_args(args(&[
            "train",
            "--config",
            typo.to_str().unwrap(),
            "--output",
            o
        ])),
        2
    );

    let manifest = tmp.path().join("manifest.csv");
    fs::write(&manifest, "subject_id,domain,cdr,age\nbad,source,zero,70\n").unwrap();
    let files = format!(
        "[data.files.source]\nmanifest = \"manifest.csv\"\nvolume_dir = \".\"\n\n[data.files.preprocess]\nslices = 2\nheight = 32\nwidth = 32\n{CLASSIFIER}"
    );
    let broken = write_config(tmp.path(), "classify", &files);
    assert_eq!(
        main_with_args(args(&[
            "train",
            "--config",
            broken.to_str().unwrap(),
            "--output",
            o
        ])),
        3
    );

    let good = write_config(tmp.path(), "classify", &format!("{SYNTH}{CLASSIFIER}"));
    let g = good.to_str().unwrap();
    assert_eq!(
        main_with_args(args(&["train", "--config", g, "--output", o])),
        0
    );
}

#[test]
fn locked_run_directory_is_refused() {
    let tmp = TempDir::new().unwrap();
    let cfg = parse_config(&write_config(
        tmp.path(),
        "classify",
        &format!("{SYNTH}{CLASSIFIER}"),
    ))
    .unwrap();
    let dir = tmp.path().join(&cfg.experiment_id().unwrap()[..16]);
    fs::create_dir_all(&dir).unwrap();
    fs::write(dir.join(".lock"), "").unwrap();
    let err = run(
        &cfg,
        &RunOptions {
            output_root: tmp.path().to_path_buf(),
            force: false,
        },
    )
    .unwrap_err();
    assert!(err.message.contains("locked"), "{err}");
    assert!(dir.join(".lock").exists());
}

#[test]
fn seed_flag_changes_identity_and_verb_picks_pipeline() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("out");
    let path = write_config(tmp.path(), "classify", &format!("{SYNTH}{CLASSIFIER}"));
    let p = path.to_str().unwrap();
    let o = out.to_str().unwrap();
    assert_eq!(
        main_with_args(args(&["train", "--config", p, "--output", o])),
        0
    );
    assert_eq!(
        main_with_args(args(&[
            "train", "--config", p, "--output", o, "--seed", "9"
        ])),
        0
    );
    let runs: Vec<_> = fs::read_dir(&out)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n != "cache")
        .collect();
    assert_eq!(runs.len(), 2, "{runs:?}");
    for name in &runs {
        let record = load_record(&out.join(name)).unwrap();
        assert_eq!(record.pipeline.name(), "classify");
    }
    // an autoencoder verb on a classifier config is a config error
    assert_eq!(
        main_with_args(args(&["reconstruct", "--config", p, "--output", o])),
        2
    );
}

#[test]
fn synth_verb_writes_a_loadable_dataset() {
    let tmp = TempDir::new().unwrap();
    let cfg_path = write_config(tmp.path(), "classify", &format!("{SYNTH}{CLASSIFIER}"));
    let out = tmp.path().join("synth");
    assert_eq!(
        main_with_args(args(&[
            "synth",
            "--config",
            cfg_path.to_str().unwrap(),
            "--output",
            out.to_str().unwrap()
        ])),
        0
    );
    let manifest = fs::read_to_string(out.join("manifest.csv")).unwrap();
    assert_eq!(manifest.lines().count(), 1 + 2 * 2 * 10);
    assert_eq!(fs::read_dir(out.join("volumes")).unwrap().count(), 40);

    let files = format!(
        "[data.files.source]\nmanifest = \"synth/manifest.csv\"\nvolume_dir = \"synth/volumes\"\n\n[data.files.preprocess]\nslices = 2\nheight = 32\nwidth = 32\n"
    );
    let prep = write_config(tmp.path(), "classify", &format!("{files}{CLASSIFIER}"));
    let prep_out = tmp.path().join("prep");
    assert_eq!(
        main_with_args(args(&[
            "prepare",
            "--config",
            prep.to_str().unwrap(),
            "--output",
            prep_out.to_str().unwrap()
        ])),
        0
    );
    let dataset = fs::read_dir(&prep_out)
        .unwrap()
        .next()
        .unwrap()
        .unwrap()
        .path();
    let split = fs::read_to_string(dataset.join("split_source.csv")).unwrap();
    assert_eq!(split.lines().next(), Some("subject_id,partition,label"));
    assert_eq!(split.lines().count(), 1 + 20);
}
