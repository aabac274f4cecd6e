//! Experiment plumbing: data ingestion and scaling, synthetic surfaces,
//! likelihood surfaces, configuration and benchmark recipes.

pub mod config;
pub mod dataset;
pub mod experiment;
pub mod explore;
pub mod simulate;

pub use dataset::{ingest_csv, Dataset, ResponseColumn, ResponseTransform, ScaleMap};
pub use simulate::{gen_exp2d, gen_friedman, gen_linear, Simulated};
pub use config::{DataSource, ExperimentConfig, ModelKind, QuerySpec};
pub use experiment::{likelihood_ratio_study, recipe, run_experiment, ExperimentOutput, Report};
