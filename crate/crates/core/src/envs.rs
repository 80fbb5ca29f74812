//! Small deterministic continuous-control tasks.
//!
//! All rewards are negated costs, so every return is `<= 0`.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{ensure_finite, Error, Result};

pub const QUADRATIC_BANDIT: &str = "quadratic-bandit";
pub const DOUBLE_INTEGRATOR: &str = "double-integrator";
pub const PENDULUM: &str = "pendulum";
pub const ENV_NAMES: [&str; 3] = [QUADRATIC_BANDIT, DOUBLE_INTEGRATOR, PENDULUM];

#[derive(Clone, Debug, PartialEq)]
pub struct EnvSpec {
    pub name: &'static str,
    pub state_dim: usize,
    pub action_dim: usize,
    pub max_action: f64,
    pub max_episode_steps: usize,
    /// Upper bound on `|return|` of one episode.
    pub max_abs_return: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    pub observation: Vec<f64>,
    pub reward: f64,
    /// True termination.
    pub done: bool,
    /// Time limit reached.
    pub truncated: bool,
}

pub trait Env: Send {
    fn spec(&self) -> &EnvSpec;
    fn reset(&mut self, seed: u64) -> Vec<f64>;
    /// Actions outside the box are clipped.
    fn step(&mut self, action: &[f64]) -> Result<StepOutcome>;
    fn steps_elapsed(&self) -> usize;
}

pub fn make_env(name: &str) -> Result<Box<dyn Env>> {
    match name {
        QUADRATIC_BANDIT => Ok(Box::new(QuadraticBandit::new())),
        DOUBLE_INTEGRATOR => Ok(Box::new(DoubleIntegrator::new())),
        PENDULUM => Ok(Box::new(Pendulum::new())),
        _ => Err(Error::UnknownEnv {
            name: name.to_string(),
            known: ENV_NAMES.join(", "),
        }),
    }
}

pub fn env_spec(name: &str) -> Result<EnvSpec> {
    make_env(name).map(|e| e.spec().clone())
}

/// Maps an angle to `[-π, π)`.
pub fn wrap_angle(theta: f64) -> f64 {
    (theta + PI).rem_euclid(2.0 * PI) - PI
}

/// Shared episode bookkeeping.
#[derive(Clone, Debug)]
struct Clock {
    steps: usize,
    limit: usize,
    finished: bool,
}

impl Clock {
    fn new(limit: usize) -> Self {
        Self {
            steps: 0,
            limit,
            finished: true,
        }
    }

    fn restart(&mut self) {
        self.steps = 0;
        self.finished = false;
    }

    fn begin_step(&self) -> Result<()> {
        if self.finished {
            Err(Error::EpisodeFinished)
        } else {
            Ok(())
        }
    }

    /// Returns the truncation flag.
    fn end_step(&mut self) -> bool {
        self.steps += 1;
        let truncated = self.steps >= self.limit;
        self.finished = truncated;
        truncated
    }
}

fn clip_action(spec: &EnvSpec, action: &[f64]) -> Result<f64> {
    if action.len() != spec.action_dim {
        return Err(Error::Shape {
            op: "env.step",
            left: vec![spec.action_dim],
            right: vec![action.len()],
        });
    }
    ensure_finite(action, || format!("{} action", spec.name))?;
    Ok(action[0].clamp(-spec.max_action, spec.max_action))
}

// ---------------------------------------------------------------------------

/// One-step episodes with reward `-(a - 0.3)²`.
#[derive(Clone, Debug)]
pub struct QuadraticBandit {
    spec: EnvSpec,
    clock: Clock,
}

impl QuadraticBandit {
    pub const OPTIMUM: f64 = 0.3;

    pub fn new() -> Self {
        Self {
            spec: EnvSpec {
                name: QUADRATIC_BANDIT,
                state_dim: 1,
                action_dim: 1,
                max_action: 1.0,
                max_episode_steps: 1,
                max_abs_return: (1.0 + Self::OPTIMUM).powi(2),
            },
            clock: Clock::new(1),
        }
    }
}

impl Default for QuadraticBandit {
    fn default() -> Self {
        Self::new()
    }
}

impl Env for QuadraticBandit {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, _seed: u64) -> Vec<f64> {
        self.clock.restart();
        vec![1.0]
    }

    fn step(&mut self, action: &[f64]) -> Result<StepOutcome> {
        self.clock.begin_step()?;
        let a = clip_action(&self.spec, action)?;
        let truncated = self.clock.end_step();
        Ok(StepOutcome {
            observation: vec![1.0],
            reward: -(a - Self::OPTIMUM).powi(2),
            done: false,
            truncated,
        })
    }

    fn steps_elapsed(&self) -> usize {
        self.clock.steps
    }
}

// ---------------------------------------------------------------------------

/// Point mass on a line driven by bounded acceleration.
#[derive(Clone, Debug)]
pub struct DoubleIntegrator {
    spec: EnvSpec,
    clock: Clock,
    x: f64,
    v: f64,
}

impl DoubleIntegrator {
    pub const DT: f64 = 0.05;
    pub const V_MAX: f64 = 2.0;
    const STEPS: usize = 200;

    pub fn new() -> Self {
        // |x| can grow by at most V_MAX·DT per step from |x0| <= 1.
        let x_max = 1.0 + Self::V_MAX * Self::DT * Self::STEPS as f64;
        let worst = x_max * x_max + 0.1 * Self::V_MAX * Self::V_MAX + 0.001;
        Self {
            spec: EnvSpec {
                name: DOUBLE_INTEGRATOR,
                state_dim: 2,
                action_dim: 1,
                max_action: 1.0,
                max_episode_steps: Self::STEPS,
                max_abs_return: worst * Self::STEPS as f64,
            },
            clock: Clock::new(Self::STEPS),
            x: 0.0,
            v: 0.0,
        }
    }

    pub fn set_state(&mut self, x: f64, v: f64) {
        self.clock.restart();
        self.x = x;
        self.v = v;
    }

    pub fn state(&self) -> (f64, f64) {
        (self.x, self.v)
    }
}

impl Default for DoubleIntegrator {
    fn default() -> Self {
        Self::new()
    }
}

impl Env for DoubleIntegrator {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.set_state(rng.gen_range(-1.0..=1.0), 0.0);
        vec![self.x, self.v]
    }

    fn step(&mut self, action: &[f64]) -> Result<StepOutcome> {
        self.clock.begin_step()?;
        let a = clip_action(&self.spec, action)?;
        let reward = -(self.x * self.x + 0.1 * self.v * self.v + 0.001 * a * a);
        self.x += self.v * Self::DT;
        self.v = (self.v + a * Self::DT).clamp(-Self::V_MAX, Self::V_MAX);
        let truncated = self.clock.end_step();
        Ok(StepOutcome {
            observation: vec![self.x, self.v],
            reward,
            done: false,
            truncated,
        })
    }

    fn steps_elapsed(&self) -> usize {
        self.clock.steps
    }
}

// ---------------------------------------------------------------------------

/// Torque-limited pendulum swing-up; `θ = 0` is upright.
#[derive(Clone, Debug)]
pub struct Pendulum {
    spec: EnvSpec,
    clock: Clock,
    theta: f64,
    theta_dot: f64,
}

impl Pendulum {
    pub const G: f64 = 10.0;
    pub const MASS: f64 = 1.0;
    pub const LENGTH: f64 = 1.0;
    pub const DT: f64 = 0.05;
    pub const MAX_SPEED: f64 = 8.0;
    pub const MAX_TORQUE: f64 = 2.0;
    const STEPS: usize = 200;

    pub fn new() -> Self {
        let worst = PI * PI + 0.1 * Self::MAX_SPEED.powi(2) + 0.001 * Self::MAX_TORQUE.powi(2);
        Self {
            spec: EnvSpec {
                name: PENDULUM,
                state_dim: 3,
                action_dim: 1,
                max_action: Self::MAX_TORQUE,
                max_episode_steps: Self::STEPS,
                max_abs_return: worst * Self::STEPS as f64,
            },
            clock: Clock::new(Self::STEPS),
            theta: 0.0,
            theta_dot: 0.0,
        }
    }

    pub fn set_state(&mut self, theta: f64, theta_dot: f64) -> Vec<f64> {
        self.clock.restart();
        self.theta = theta;
        self.theta_dot = theta_dot;
        self.observation()
    }

    pub fn state(&self) -> (f64, f64) {
        (self.theta, self.theta_dot)
    }

    fn observation(&self) -> Vec<f64> {
        vec![self.theta.cos(), self.theta.sin(), self.theta_dot]
    }
}

impl Default for Pendulum {
    fn default() -> Self {
        Self::new()
    }
}

impl Env for Pendulum {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let theta = rng.gen_range(-PI..PI);
        let theta_dot = rng.gen_range(-1.0..=1.0);
        self.set_state(theta, theta_dot)
    }

    fn step(&mut self, action: &[f64]) -> Result<StepOutcome> {
        self.clock.begin_step()?;
        let u = clip_action(&self.spec, action)?;
        let th = wrap_angle(self.theta);
        let reward = -(th * th + 0.1 * self.theta_dot * self.theta_dot + 0.001 * u * u);
        let (g, m, l) = (Self::G, Self::MASS, Self::LENGTH);
        let accel = 3.0 * g / (2.0 * l) * self.theta.sin() + 3.0 / (m * l * l) * u;
        self.theta_dot = (self.theta_dot + accel * Self::DT).clamp(-Self::MAX_SPEED, Self::MAX_SPEED);
        self.theta += self.theta_dot * Self::DT;
        let truncated = self.clock.end_step();
        Ok(StepOutcome {
            observation: self.observation(),
            reward,
            done: false,
            truncated,
        })
    }

    fn steps_elapsed(&self) -> usize {
        self.clock.steps
    }
}
