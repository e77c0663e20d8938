//! Discovery of bottleneck (subgoal) states in stochastic gridworlds.
//!
//! An agent learns action values with tabular SARSA while, at every state it
//! enters, choosing between two representations of the world: the *main* space
//! (raw states) and an *aggregation* space (each state pooled with its local
//! neighborhood). The choice minimizes a free-energy score built from
//! confidence-interval Thompson policies. Whenever the chosen space flips
//! between consecutive states, a per-state *model change* counter is
//! incremented; Otsu thresholding plus non-maximum suppression on that counter
//! matrix yields the detected bottleneck cells (doorways, transfer states).
//!
//! The crate is organized along the pipeline:
//!
//! - [`env`](mod@env): seeded stochastic gridworld environments and the layout catalog
//! - [`learner`]: SARSA with per-pair running statistics and schedules
//! - [`space`]: neighborhoods, aggregated Q-values, pooled statistics
//! - [`free_energy`]: Thompson policies, utilities, closed-form optimal
//!   policies, free energy, and per-state space selection
//! - [`bottleneck`]: model-change accounting, Otsu, NMS, detection
//! - [`experiment`]: configs, the episode loop, multi-seed runs, artifacts

pub mod bottleneck;
pub mod env;
pub mod experiment;
pub mod free_energy;
pub mod grid;
pub mod learner;
pub mod space;

use std::path::PathBuf;

pub use bottleneck::{detect, frequency_baseline, nms, otsu_threshold, BottleneckMask};
pub use env::{Action, Cell, GridWorld, Layout, StartRule, TransferMode, Transition};
pub use experiment::{run_experiment, RunConfig, RunSummary};
pub use free_energy::{select_space, BeliefInterval, FeParams, SpacePolicyReport, SpaceSelection};
pub use grid::{Grid, GridPos};
pub use learner::{epsilon_greedy, select_action, QStats, QTable, Schedules};
pub use space::{neighborhood, AggregationSpec, Metric, Neighborhood, SpaceId};

/// Errors surfaced by the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("unknown layout `{0}` (not a built-in name or readable file)")]
    UnknownLayout(String),
    #[error("layout `{0}` has no goal cell")]
    MissingGoal(String),
    #[error("layout `{name}` has {count} goal cells, expected exactly one")]
    MultipleGoals { name: String, count: usize },
    #[error("goal is unreachable from start {0}")]
    UnreachableGoal(GridPos),
    #[error("malformed layout: {0}")]
    MalformedLayout(String),
    #[error("action {action:?} is not valid in state {state}")]
    InvalidAction { state: GridPos, action: Action },
    #[error("no recorded samples to aggregate at {state} for action {action:?}")]
    ZeroSamples { state: GridPos, action: Action },
    #[error("confidence interval needs at least 2 samples, got {0}")]
    InsufficientSamples(u64),
    #[error("policy vector must be a probability simplex (sum was {0})")]
    NonNormalizedPolicy(f64),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("malformed snapshot or matrix file {path}: {reason}")]
    MalformedFile { path: PathBuf, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
