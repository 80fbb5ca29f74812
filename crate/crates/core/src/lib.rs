//! Actor-critic reinforcement learning without target networks.
//!
//! The crate is organised bottom-up:
//!
//! * [`autodiff`] – dense `f64` tensors, a define-by-run reverse-mode graph and Adam.
//! * [`networks`] – tanh-squashed Gaussian actor and twin Q critics.
//! * [`replay`] – uniform ring-buffer replay.
//! * [`cem`] – cross-entropy search over the action box.
//! * [`grac`] – max-min targets, the self-regularized critic loop and the actor update.
//! * [`tabular`] – finite-MDP versions of the update rules checked against exact DP.
//! * [`envs`] – small deterministic continuous-control tasks.
//! * [`harness`] – configuration, training runs, evaluation, CSV metrics and SVG plots.

pub mod autodiff;
pub mod cem;
pub mod envs;
pub mod error;
pub mod grac;
pub mod harness;
pub mod networks;
pub mod replay;
pub mod tabular;

pub use error::{Error, Result};
