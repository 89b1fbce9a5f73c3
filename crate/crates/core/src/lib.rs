//! Predictive optimal control of a differential-drive robot.
//!
//! Three receding-horizon controllers share one code path:
//!
//! - **MPC**: minimizes the discounted sum of quadratic running costs over
//!   the predicted horizon.
//! - **RQL** (rollout Q-learning): running costs over the first `N - 1`
//!   stages plus a learned Q-function at the terminal stage.
//! - **SQL** (stacked Q-learning): the sum of learned Q-function values at
//!   every predicted stage.
//!
//! The learned Q-function is quadratic in the stacked state/action vector
//! and is refit every control step by regularized least squares over a
//! small experience-replay buffer of temporal-difference residuals.
//!
//! [`harness`] runs closed-loop episodes and benchmarks, and [`export`]
//! persists them as CSV/JSON so reports can be regenerated offline.

pub mod actors;
pub mod config;
pub mod costs;
pub mod critic;
pub mod dynamics;
mod error;
pub mod export;
pub mod harness;
pub mod optimizer;

pub use actors::{Controller, ControllerSpec, Method};
pub use config::ExperimentConfig;
pub use costs::{CostMatrix, StageRecord};
pub use critic::{CriticSettings, CriticWeights, FeatureVector, ReplayBuffer, Transition};
pub use dynamics::{Action, ActionBounds, ActionSequence, Frame, Pose, State};
pub use error::{Error, Result};
pub use harness::{BenchmarkReport, EpisodeLog};
