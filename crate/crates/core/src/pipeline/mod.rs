//! Experiment configuration, QIPF fitting over classifier features, the
//! end-to-end run, file output and the timing benchmark.

pub mod bench;
pub mod config;
pub mod experiment;
pub mod export;
pub mod fields;
pub mod ften;

pub use bench::{bench, BenchCase, BenchReport};
pub use config::{ExperimentConfig, Granularity, QipfSettings};
pub use experiment::{
    evaluate_external, export_dataset_features, generate_dataset, run_experiment, Dataset,
    FactorScore, MethodReport, PhaseTimings, RunOutput, RunReport,
};
pub use export::{export, read_pgm, write_pgm};
pub use fields::{
    fit_fields, fit_qipf_per_class, fit_qipf_per_pixel, qipf_uncertainty_map, QipfFields,
};
pub use ften::{load_features, read_tensor, store_features, write_tensor};
