//! Experiment harness: configuration, replicated runs and suites, the
//! on-disk record store, and report generation.

pub mod config;
pub mod experiment;
pub mod report;
pub mod store;

pub use config::{DynamicsSpec, ExperimentConfig, SchemeSpec, SuiteSection};
pub use experiment::{
    empirical_phase_means, oracle_from_config, oracle_summary_json, run_experiment, run_scheme,
    run_suite,
};
pub use report::{diagnose_store, emit_report, RunDiagnosis};
pub use store::{RecordStore, ReplicateRecords, RunManifest};
