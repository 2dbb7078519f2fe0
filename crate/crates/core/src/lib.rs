//! Continual learning with adaptive memory replay.
//!
//! Every past task is kept in memory as one cluster. While training on a new
//! task, a Boltzmann bandit estimates how much each cluster is being
//! forgotten and draws replay examples accordingly. Replay replaces part of
//! each new-task batch, so a replay run costs the same number of gradient
//! passes as plain fine-tuning; the zero-cost variant additionally trims
//! iterations to pay for the selection probes.
//!
//! Modules:
//!
//! - [`model`]: small MLP with analytic gradients and SGD.
//! - [`memory`]: per-task clusters and uniform sampling.
//! - [`forgetting`]: baseline snapshot and the forgetting score.
//! - [`bandit`]: moving-average means, tempered softmax, replay sampling.
//! - [`trainer`]: strategies, batch composition, the cost-bounded loop.
//! - [`metrics`]: final loss, forgetting, normalized time.
//! - [`data`]: synthetic task sequences and CSV/manifest files.
//! - [`harness`]: config-driven `run` / `compare` / `sweep`.

pub mod bandit;
pub mod data;
pub mod error;
pub mod forgetting;
pub mod harness;
pub mod ledger;
pub mod memory;
pub mod metrics;
pub mod model;
pub mod trainer;

pub use bandit::{BanditState, ReplayBuffer};
pub use data::TaskDataset;
pub use error::{Error, Result};
pub use forgetting::BaselineSnapshot;
pub use ledger::CostLedger;
pub use memory::{Cluster, MemoryStore};
pub use metrics::ExperimentResult;
pub use model::{Activation, Example, Head, ModelParams, Target};
pub use trainer::{StrategyKind, TrainConfig};
