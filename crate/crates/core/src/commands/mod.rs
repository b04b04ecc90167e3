//! The operations behind the command-line subcommands.

mod config;
mod score;
mod train;

pub use config::RunConfig;
pub use score::{eval, score};
pub use train::{train, StepRecord, TrainSummary};
