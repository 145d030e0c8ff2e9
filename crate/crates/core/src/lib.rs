//! Coupled diffusion for distributed constrained stochastic optimization over
//! networks whose agents share only parts of a block-partitioned parameter
//! vector.
//!
//! The pipeline is [`topology`] (graph, blocks, clusters) →
//! [`weights`] (per-cluster combination matrices and Perron scalings) →
//! [`objective`] (risks, constraints, penalties) → [`engine`] (the
//! recursions) → [`metrics`]; [`harness`] wires them into reproducible
//! experiments driven by a TOML config.

pub mod engine;
pub mod harness;
pub mod metrics;
pub mod objective;
pub mod problem;
pub mod rng;
pub mod topology;
pub mod weights;

use thiserror::Error;

pub use problem::Problem;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Topology(#[from] topology::TopologyError),
    #[error(transparent)]
    Weights(#[from] weights::WeightError),
    #[error(transparent)]
    Objective(#[from] objective::ObjectiveError),
    #[error(transparent)]
    Engine(#[from] engine::EngineError),
    #[error(transparent)]
    Metrics(#[from] metrics::MetricsError),
    #[error("config: {0}")]
    Config(String),
    #[error("{context}: {source}")]
    Scenario {
        context: String,
        #[source]
        source: Box<Error>,
    },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Stable machine-readable kind, used by the CLI error line.
    pub fn kind(&self) -> &'static str {
        match self {
            Self::Topology(_) => "topology",
            Self::Weights(_) => "weights",
            Self::Objective(_) => "objective",
            Self::Engine(_) => "engine",
            Self::Metrics(_) => "metrics",
            Self::Config(_) => "config",
            Self::Scenario { source, .. } => source.kind(),
            Self::Io(_) => "io",
        }
    }

    pub(crate) fn context(self, context: impl Into<String>) -> Self {
        Self::Scenario { context: context.into(), source: Box::new(self) }
    }
}
