//! Experiment harness: datasets, configuration, method comparison runs and
//! plot-ready CSV output.

pub mod config;
pub mod curves;
pub mod dataset;
pub mod experiment;
pub mod idx;

pub use config::{DatasetConfig, ExperimentConfig, FileConfig, MethodSpec, ModelConfig, TrainParams};
pub use curves::{emit_loss_curves, loss_curve_rows, loss_curves_csv};
pub use dataset::{generate_dataset, standardize, Dataset};
pub use experiment::{execute, run_experiment, ExperimentOutput, MethodResult, MetricsRecord, CSV_HEADER};
pub use idx::{load_idx, parse_idx_pair};
