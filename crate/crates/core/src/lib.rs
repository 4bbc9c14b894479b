//! Core library for avstress: a deterministic 2D traffic simulator in which a
//! group of NPC vehicles is trained with multi-agent Q-learning to provoke
//! front-end collisions with a rule-based autonomous driver.
//!
//! Modules:
//! - [`sim`]: vehicle kinematics, collision detection, observations, and the
//!   counterfactual agent-removal operator.
//! - [`reward`]: crash rewards, the global/local decomposition, and
//!   potential-based shaping terms.
//! - [`nn`]: a small from-scratch feed-forward Q-network with Adam.
//! - [`ego`]: the driver under test (IDM car-following + MOBIL lane changes)
//!   behind a pluggable policy trait.
//! - [`train`]: the training loop with three credit-assignment schemes.
//! - [`eval`]: greedy-rollout evaluation and box-plot statistics.
//! - [`config`]: run configuration loading and overrides.

pub mod config;
pub mod ego;
pub mod eval;
pub mod geometry;
pub mod nn;
pub mod reward;
pub mod seed;
pub mod sim;
pub mod train;

pub use config::RunConfig;
pub use ego::{EgoParams, NetworkEgo, RuleBasedEgo};
pub use nn::{QNetwork, TrainHyper};
pub use reward::{RewardParams, RewardScheme};
pub use sim::{
    AgentAction, CrashEvent, EgoPolicy, MapConfig, MapKind, Observation, Simulator, VehicleState,
    WorldState,
};
pub use train::{ReplayBuffer, TrainConfig, TrainOutcome, TransitionRecord};
