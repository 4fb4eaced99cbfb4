//! Experiment orchestration: configs, realization loops, sweeps, the
//! regularization ablation, persisted artifacts and replay.

mod config;
mod output;
mod replay;
mod run;

pub use config::{
    merge, overlay, parse_tree, read_tree, take_sweep, AxisValues, BoundaryAllocation, DataSection, ExperimentConfig, InitScheme, NetworkSection,
    Overrides, ProblemSection, RunSection, SplitPolicy, SweepAxis, SweepSpec,
};
pub use output::{emit_outputs, figdata_text, preflight, write_aggregate_csv, AGGREGATE_HEADER};
pub use replay::{replay_record, ReplayedMetrics};
pub use run::{
    ablate_regularization, aggregate_records, run_experiment, run_realization, run_sweep, stream_seed, Ablation, Aggregate, CellResult, MetricSummary,
    RunOutput, RunRecord, RunStatus, SeedStream, SweepResult,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    TomlRead(#[from] toml::de::Error),
    #[error(transparent)]
    TomlWrite(#[from] toml::ser::Error),
    #[error(transparent)]
    Sampling(#[from] crate::sampling::SamplingError),
    #[error(transparent)]
    Net(#[from] crate::network::NetError),
    #[error(transparent)]
    Loss(#[from] crate::loss::LossError),
    #[error(transparent)]
    Metric(#[from] crate::metrics::MetricError),
    #[error("{0}")]
    Replay(String),
}
