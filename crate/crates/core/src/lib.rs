//! Sequential anomaly detection among correlated binary processes.
//!
//! A decision maker observes one process per step through a binary flipping
//! channel, tracks per-process beliefs with a pairwise-conditional marginal
//! recursion, and learns where to look next with an online actor-critic.
//! Exact joint-posterior and naive marginal trackers are provided as
//! baselines, together with the experiment harness that compares them.

pub mod agent;
pub mod belief;
pub mod error;
pub mod exec;
pub mod experiment;
pub mod model;
pub mod nn;
pub mod rng;
pub mod sim;

pub use agent::{Algorithm, Checkpoint, EpisodeTrace, Policy, SelectionMode, Setup};
pub use belief::{BeliefModel, JointBelief, UpdateRule};
pub use error::{Error, Result};
pub use exec::Execution;
pub use experiment::{CellResult, SweepSpec};
pub use model::{BeliefVector, DependencyModel, ExperimentConfig, ObservationChannel, ProcessStateVector};
