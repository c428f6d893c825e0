//! Configuration and experiment orchestration behind the command line.

pub mod config;
pub mod experiment;

pub use config::{TrainConfig, PROVENANCE, SEED_ENV};
pub use experiment::{
    compare_csv, load_or_generate_data, loss_csv, metrics_csv, metrics_file_name, ode_samples, parse_compare_csv,
    parse_metrics_csv, run_eval, run_pretrain, run_train, ClassReport, CompareRow, EvalReport, TrainOptions,
    TrainOutcome, COMPARE_HEADER, PRETRAINED_TAG,
};
