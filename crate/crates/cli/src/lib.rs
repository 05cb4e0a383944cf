//! Command-line driver: configuration, training with early stopping,
//! checkpoints, evaluation, flow inspection and metric plots.

pub mod checkpoint;
pub mod config;
pub mod error;
pub mod inspect;
pub mod metrics;
pub mod plot;
pub mod streams;
pub mod train;

pub use checkpoint::Checkpoint;
pub use config::{Dataset, LearningRate, RunConfig};
pub use error::{CliError, Result};
pub use metrics::MetricsRecord;
pub use train::{cmd_eval, cmd_train, EvalReport, TrainOptions, TrainSummary};
pub use inspect::cmd_inspect_flow;
