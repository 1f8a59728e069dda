//! Experiment runner for the range query engines: sweeps, CSV metrics and
//! saturation throughput.

pub mod experiment;
pub mod run;
pub mod system;
pub mod throughput;

pub use experiment::{Backend, EngineKind, Experiment, Measure, QueueCaps, SweepPoint, Sweeps};
pub use run::{run_batches, run_experiment, run_point, workload_batches, MetricsRow, RunMeasurement};
pub use system::{make_system, System};
pub use throughput::{QueueModel, QueueTrace, ServiceProfile, TickCost};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("invalid experiment: {0}")]
    Invalid(String),
    #[error(transparent)]
    Config(#[from] ddi_core::config::ConfigError),
    #[error(transparent)]
    Workload(#[from] ddi_core::workload::WorkloadError),
    #[error("engine failed: {0}")]
    Engine(String),
    #[error(transparent)]
    Cluster(#[from] ddi_cluster::ClusterError),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("writing csv: {0}")]
    Csv(#[from] csv::Error),
}

impl From<ddi_core::EngineError> for BenchError {
    fn from(e: ddi_core::EngineError) -> Self {
        BenchError::Engine(e.to_string())
    }
}
