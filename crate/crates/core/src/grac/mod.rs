//! The actor-critic update: max-min double-Q targets, the self-regularized
//! critic inner loop and the combined Q-loss / CEM-loss actor step.
//!
//! Every component can be switched off through [`AblationFlags`] so the
//! ablation variants (clipped double-Q, target networks, single actor loss)
//! share one code path.

mod actor;
mod critic;
mod target;
mod trainer;

pub use actor::{
    actor_cem_loss, actor_q_loss, actor_update, cem_loss_from_outputs, q_loss_from_outputs, select_behavior_action,
    ActorReport, ActionMode,
};
pub use critic::{critic_loss, critic_loss_graph, critic_update_loop, CriticLoopReport};
pub use target::{clipped_target, compute_target, maxmin_target, warm_start, TargetBundle};
pub use trainer::{Agent, StepMetrics, Trainer, UpdateMetrics};

use crate::cem::CemConfig;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AblationFlags {
    /// Penalize changes of `Q(s', a†)` in the critic loss.
    pub use_target_regularization: bool,
    /// `false` falls back to the clipped double-Q target at the actor's action.
    pub use_maxmin: bool,
    pub use_cem_loss: bool,
    pub use_q_loss: bool,
    /// Polyak-averaged target critics (only for the DDPG-style baselines).
    pub use_target_network: bool,
    pub target_network_tau: f64,
}

impl Default for AblationFlags {
    fn default() -> Self {
        Self {
            use_target_regularization: true,
            use_maxmin: true,
            use_cem_loss: true,
            use_q_loss: true,
            use_target_network: false,
            target_network_tau: 0.005,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GracConfig {
    pub gamma: f64,
    pub batch_size: usize,
    pub lr_critic: f64,
    pub lr_actor: f64,
    /// Maximum critic iterations per update (`K`).
    pub critic_iters: usize,
    pub alpha_start: f64,
    pub alpha_end: f64,
    pub cem: CemConfig,
    pub cem_loss_weight: f64,
    pub reward_scale: f64,
    pub warmup_steps: u64,
    /// Horizon of the `alpha` schedule.
    pub total_steps: u64,
    pub flags: AblationFlags,
}

impl Default for GracConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            batch_size: 256,
            lr_critic: 3e-4,
            lr_actor: 2e-4,
            critic_iters: 20,
            alpha_start: 0.7,
            alpha_end: 0.85,
            cem: CemConfig::default(),
            cem_loss_weight: 1.0,
            reward_scale: 1.0,
            warmup_steps: 1000,
            total_steps: 100_000,
            flags: AblationFlags::default(),
        }
    }
}

impl GracConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return fail(format!("gamma must be in (0, 1], got {}", self.gamma));
        }
        for (name, a) in [("alpha_start", self.alpha_start), ("alpha_end", self.alpha_end)] {
            if !(a > 0.0 && a < 1.0) {
                return fail(format!("{name} must be in (0, 1), got {a}"));
            }
        }
        if self.critic_iters == 0 {
            return fail("critic_iters (K) must be >= 1".into());
        }
        if self.batch_size == 0 {
            return fail("batch_size must be >= 1".into());
        }
        if !(self.lr_critic > 0.0) || !(self.lr_actor > 0.0) {
            return fail("learning rates must be > 0".into());
        }
        if !(0.0..=1.0).contains(&self.flags.target_network_tau) {
            return fail("target_network_tau must be in [0, 1]".into());
        }
        self.cem.validate().map_err(|e| Error::Config(e.to_string()))
    }

    pub fn alpha_at(&self, step: u64) -> f64 {
        alpha_schedule(step.min(self.total_steps), self.total_steps, self.alpha_start, self.alpha_end)
    }
}

/// Linear interpolation from `a_start` at step 0 to `a_end` at `total_steps`.
pub fn alpha_schedule(step: u64, total_steps: u64, a_start: f64, a_end: f64) -> f64 {
    if total_steps == 0 {
        return a_start;
    }
    a_start + (a_end - a_start) * step as f64 / total_steps as f64
}
