use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Adam;
use crate::envs::{make_env, Env, EnvSpec};
use crate::error::{Error, Result};
use crate::grac::actor::{actor_update, select_behavior_action, ActionMode, ActorReport};
use crate::grac::critic::{critic_update_loop, CriticLoopReport};
use crate::grac::target::compute_target;
use crate::grac::GracConfig;
use crate::networks::{ActorParams, CriticParams, Parameters};
use crate::replay::{Batch, ReplayBuffer, Transition};

/// Networks and optimizer state.
#[derive(Clone, Debug)]
pub struct Agent {
    pub actor: ActorParams,
    pub critics: CriticParams,
    pub target_critics: Option<CriticParams>,
    pub actor_opt: Adam,
    pub critic_opt: Adam,
    pub cfg: GracConfig,
}

#[derive(Clone, Debug, PartialEq)]
pub struct UpdateMetrics {
    /// Batch mean of `y′1`.
    pub q1_mean: f64,
    /// Batch mean of `y′1 − y′2`.
    pub q_gap_mean: f64,
    pub critic: CriticLoopReport,
    pub actor: ActorReport,
    pub cem_pick_fraction: f64,
}

impl Agent {
    pub fn new<R: Rng + ?Sized>(spec: &EnvSpec, hidden: usize, cfg: GracConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let actor = ActorParams::new(spec.state_dim, spec.action_dim, hidden, spec.max_action, rng);
        let critics = CriticParams::new(spec.state_dim, spec.action_dim, hidden, rng);
        let target_critics = cfg.flags.use_target_network.then(|| critics.clone());
        Ok(Self {
            actor_opt: Adam::new(cfg.lr_actor, actor.tensors()),
            critic_opt: Adam::new(cfg.lr_critic, critics.tensors()),
            actor,
            critics,
            target_critics,
            cfg,
        })
    }

    /// Targets, critic inner loop, then one actor step.
    pub fn update<R: Rng + ?Sized>(&mut self, batch: &Batch, step: u64, rng: &mut R) -> Result<UpdateMetrics> {
        let cfg = &self.cfg;
        let alpha = cfg.alpha_at(step);
        let target_params = self.target_critics.as_ref().unwrap_or(&self.critics);
        let bundle = compute_target(batch, target_params, &self.critics, &self.actor, cfg, rng)?;
        let critic = critic_update_loop(batch, &bundle, &mut self.critics, &mut self.critic_opt, cfg, alpha)?;
        if let Some(t) = self.target_critics.as_mut() {
            t.soft_update_from(&self.critics, cfg.flags.target_network_tau);
        }
        let actor = actor_update(&batch.states, &mut self.actor, &mut self.actor_opt, &self.critics.q1, cfg, rng)?;
        let picked = bundle.picked_cem.iter().filter(|p| **p).count();
        Ok(UpdateMetrics {
            q1_mean: bundle.q1_mean(),
            q_gap_mean: bundle.q_gap_mean(),
            critic,
            actor,
            cem_pick_fraction: picked as f64 / batch.len() as f64,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepMetrics {
    /// Environment steps completed, including this one.
    pub step: u64,
    pub reward: f64,
    /// Undiscounted return of the current episode so far.
    pub episode_return: f64,
    pub episode_finished: bool,
    pub alpha: f64,
    /// `None` during warmup.
    pub update: Option<UpdateMetrics>,
}

/// Environment, replay and agent driven one interaction at a time.
pub struct Trainer {
    env: Box<dyn Env>,
    pub buffer: ReplayBuffer,
    pub agent: Agent,
    obs: Vec<f64>,
    rng: ChaCha8Rng,
    step: u64,
    episode_return: f64,
}

impl Trainer {
    pub fn new(env_name: &str, hidden: usize, buffer_capacity: usize, cfg: GracConfig, seed: u64) -> Result<Self> {
        let mut env = make_env(env_name)?;
        let mut init_rng = ChaCha8Rng::seed_from_u64(seed);
        let agent = Agent::new(env.spec(), hidden, cfg, &mut init_rng)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        let obs = env.reset(rng.gen());
        Ok(Self {
            env,
            buffer: ReplayBuffer::new(buffer_capacity),
            agent,
            obs,
            rng,
            step: 0,
            episode_return: 0.0,
        })
    }

    pub fn spec(&self) -> &EnvSpec {
        self.env.spec()
    }

    pub fn steps_done(&self) -> u64 {
        self.step
    }

    pub fn train_step(&mut self) -> Result<StepMetrics> {
        let cfg = self.agent.cfg.clone();
        let step = self.step;
        let mode = if step < cfg.warmup_steps { ActionMode::Warmup } else { ActionMode::Train };
        let action = select_behavior_action(&self.obs, &self.agent.actor, &self.agent.critics, &cfg, mode, &mut self.rng)
            .map_err(|e| diverged(step, e))?;
        let out = self.env.step(&action)?;
        self.buffer.push(Transition {
            state: std::mem::take(&mut self.obs),
            action,
            reward: out.reward * cfg.reward_scale,
            next_state: out.observation.clone(),
            done: out.done,
        })?;
        self.episode_return += out.reward;
        let episode_return = self.episode_return;
        let finished = out.done || out.truncated;
        if finished {
            self.obs = self.env.reset(self.rng.gen());
            self.episode_return = 0.0;
        } else {
            self.obs = out.observation;
        }

        let update = if step >= cfg.warmup_steps {
            let batch = self.buffer.sample_batch(cfg.batch_size, &mut self.rng)?;
            Some(self.agent.update(&batch, step, &mut self.rng).map_err(|e| diverged(step, e))?)
        } else {
            None
        };
        self.step += 1;
        Ok(StepMetrics {
            step: self.step,
            reward: out.reward,
            episode_return,
            episode_finished: finished,
            alpha: cfg.alpha_at(step),
            update,
        })
    }
}

fn diverged(step: u64, e: Error) -> Error {
    match e {
        Error::NonFinite { what } => Error::Diverged { step, reason: what },
        other => other,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::QUADRATIC_BANDIT;

    fn tiny_cfg() -> GracConfig {
        let mut cfg = GracConfig {
            batch_size: 8,
            critic_iters: 3,
            warmup_steps: 20,
            total_steps: 60,
            ..GracConfig::default()
        };
        cfg.cem.n_pop = 16;
        cfg
    }

    fn run(seed: u64) -> Vec<StepMetrics> {
        let mut t = Trainer::new(QUADRATIC_BANDIT, 8, 1000, tiny_cfg(), seed).unwrap();
        (0..60).map(|_| t.train_step().unwrap()).collect()
    }

    #[test]
    fn updates_start_after_warmup_with_finite_metrics() {
        let steps = run(1);
        for m in &steps {
            match &m.update {
                None => assert!(m.step <= 20),
                Some(u) => {
                    assert!(m.step > 20);
                    assert!(u.q1_mean.is_finite() && u.q_gap_mean.is_finite());
                    assert!((1..=3).contains(&u.critic.iterations));
                    assert!(u.actor.updated);
                }
            }
        }
        assert_eq!(steps.last().unwrap().step, 60);
    }

    #[test]
    fn same_seed_same_trajectory() {
        assert_eq!(run(7), run(7));
        assert_ne!(run(7), run(8));
    }
}
