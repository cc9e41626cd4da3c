//! Metrics, synthetic tasks and the experiment harnesses built on them.

pub mod harness;
pub mod metrics;
pub mod planted;

use thiserror::Error;

use crate::env::EnvError;
use crate::graph::GraphError;
use crate::policy::PolicyError;
use crate::trainer::TrainError;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("invalid task: {0}")]
    Task(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error("writing report: {0}")]
    Io(#[from] std::io::Error),
}
