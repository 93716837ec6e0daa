//! Recurrent offline RL: model contract and network, the five losses, target
//! updates, training, evaluation against an environment and gradient checks.

mod checkpoint;
mod config;
mod eval;
mod gradcheck;
pub mod losses;
pub mod model;
mod optim;
mod train;

use serde::{Deserialize, Serialize};

pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC};
pub use config::{parse_pairs, RunConfig, TrainConfig};
pub use eval::{evaluate, select_action, ActionRule, EvalEpisode};
pub use gradcheck::{grad_check, GradCheckReport};
pub use losses::{
    awac_losses, bc_loss, bootstrap_values, cql_loss, iql_losses, rem_loss, td_targets, BootstrapRule, LossBatch,
    LossOutput, LossReport, PreparedLoss,
};
pub use model::{ConvLayer, HeadOutputs, HeadSpec, ModelConfig, ModelContract, RecurrentNet, RecurrentState, SeqInput};
pub use optim::{soft_update, AdamW};
pub use train::{
    render_inputs, train, CheckpointSink, DirCheckpoints, JsonLinesSink, MetricSink, NullSink, TrainResult,
};

use crate::env::EnvError;
use crate::loader::LoaderError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Bc,
    Cql,
    Iql,
    Awac,
    Rem,
}

impl Algorithm {
    pub const ALL: [Algorithm; 5] = [Algorithm::Bc, Algorithm::Cql, Algorithm::Iql, Algorithm::Awac, Algorithm::Rem];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Bc => "bc",
            Algorithm::Cql => "cql",
            Algorithm::Iql => "iql",
            Algorithm::Awac => "awac",
            Algorithm::Rem => "rem",
        }
    }

    pub fn parse(text: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|a| a.name().eq_ignore_ascii_case(text.trim()))
    }

    /// Whether the loss reads a target network.
    pub fn uses_target(self) -> bool {
        self != Algorithm::Bc
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum AlgoError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("non-finite loss at iteration {iteration}: {snapshot}")]
    NonFiniteLoss { iteration: u64, snapshot: String },
    #[error("bad checkpoint: {0}")]
    Checkpoint(String),
    #[error("environment adapter failed: {0}")]
    AdapterFailure(#[from] EnvError),
    #[error(transparent)]
    Loader(#[from] LoaderError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
