//! Point-mass tasks, the theory bandit, scripted behavior policies and offline
//! datasets.
//!
//! Point-mass dynamics (`dt = 0.05`, `damping = 0.05`):
//!
//! ```text
//! p' = p + dt * v
//! v' = (1 - damping) * v + dt * clip(a, -1, 1)
//! ```
//!
//! `done` marks goal attainment only. Reaching the horizon truncates the
//! episode without marking it terminal, so bootstrapping stays on.

mod dataset;
mod env;
mod policy;
mod transition;

pub use dataset::{generate_offline, DatasetHeader, OfflineDataset, DATASET_MAGIC};
pub use env::{
    bandit_env, reset, step, Dynamics, EnvSpec, PointMass, RewardKind, StepOutcome, Wall,
    ENV_NAMES, WALL_BAND,
};
pub use policy::{
    run_episode, Behavior, EpisodeStats, MixWeights, Policy, PolicyKind, ScriptedPolicy,
    POLICY_NAMES,
};
pub use transition::{Source, Transition};
