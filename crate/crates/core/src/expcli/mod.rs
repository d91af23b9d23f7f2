//! Config-driven experiment runner: TOML configs, pipeline orchestration
//! with a content-addressed stage cache, run records and report emission.

mod cli;
mod config;
mod error;
mod report;
mod run;

pub use cli::{main_with_args, Cli, Command};
pub use config::{
    digest, parse_config, parse_config_str, DataConfig, DomainFiles, ExperimentConfig, FileData,
    Pipeline, TuneConfig, SCHEMA_VERSION,
};
pub use error::{ErrorKind, ExpError, Result};
pub use report::{aligned_table, csv_table, curves_csv, curves_svg, emit_report, ReportFormat};
pub use run::{
    load_data, load_record, run, to_unit_range, Curve, Domains, NamedReport, RunOptions, RunRecord,
    StageRecord,
};
