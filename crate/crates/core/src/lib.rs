//! Discrete-state active inference.
//!
//! Agents infer hidden states by minimizing variational free energy and pick
//! actions by scoring policies with expected free energy, or with one of its
//! reduced forms: expected information gain alone (optimal Bayesian design)
//! or expected utility alone (Bayesian decision theory). The [`tmaze`] and
//! [`harness`] modules reproduce the classic T-maze foraging comparison.

pub mod error;
pub mod harness;
pub mod inference;
pub mod model;
pub mod numerics;
pub mod planning;
pub mod tmaze;

pub use error::{Error, Result};
pub use inference::{bma_beliefs, infer_states, vfe, BeliefEnsemble, Observation, StateInference};
pub use model::{load_spec, save_spec, GenerativeModel, Matrix, Policy, PolicySet, Violation};
pub use numerics::{entropy, kl_divergence, normalize, softmax, Categorical};
pub use planning::{EfeBreakdown, ObjectiveKind, PlanContext};
