//! Reproduction harness: batches of seeded client steps and attacks, the
//! encoder-depth sweep, the ablation, and report verification.

mod config;
mod report;
mod run;

use std::path::PathBuf;

pub use config::{DatasetSpec, ExperimentConfig, IMAGE_SIZES};
pub use report::{
    ablation_table, aggregate, mean, median, read_csv, sweep_table, verify_report, write_csv, AblationRow, Arm,
    ExperimentReport, ReportRow, SweepRow, Verification, ABLATION_FILE, MEAN, MEDIAN, REPORT_FILE, SWEEP_FILE,
};
pub use run::{
    image_extension, make_leak, run_ablation, run_attack, run_modes, run_one, run_sweep, RunRecord, RunSpec, Victim,
};

use crate::attack::AttackError;
use crate::client::ClientError;
use crate::data::DataError;
use crate::metrics::MetricsError;
use crate::model::ModelError;

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error("invalid experiment configuration: {0}")]
    Config(String),
    #[error("{0}: {1}")]
    Io(PathBuf, #[source] std::io::Error),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Client(#[from] ClientError),
    #[error(transparent)]
    Attack(#[from] AttackError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("could not start the worker pool: {0}")]
    Pool(String),
}
