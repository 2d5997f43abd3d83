//! Scenario loading, traces, metrics and the preset experiments.

pub mod experiments;
pub mod handover;
pub mod metrics;
pub mod output;
pub mod scenario;
pub mod trace;

use std::path::PathBuf;

use thiserror::Error;

pub use handover::{measure_handover, HandoverEstimate};
pub use metrics::MetricSet;
pub use scenario::{load_scenario, parse_scenario, Scenario, ScenarioInvalid};
pub use trace::Trace;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Invalid(#[from] ScenarioInvalid),
    #[error("{}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("flow {0} never changed interface")]
    NoHandoverObserved(String),
    #[error("no flow with selector {0}")]
    UnknownFlow(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("experiment: {0}")]
    Experiment(String),
}
