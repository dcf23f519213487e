//! Data ingestion, synthetic scenarios, baselines and experiments.

pub mod baseline;
pub mod config;
pub mod experiments;
pub mod ingest;
pub mod report;
pub mod synth;

pub use config::ExperimentConfig;
pub use experiments::{
    load_data, run_longterm_experiment, run_shortterm_experiment, run_update_experiment, ExperimentData,
};
pub use ingest::{export, ingest, Dataset, Extents, FlowRecord, LoadReport};
pub use report::{Report, Table};
pub use synth::{generate_synthetic, SyntheticData, SyntheticSpec};
