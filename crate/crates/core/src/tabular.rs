//! Finite-MDP versions of the max-min double-Q update and of the two policy
//! improvement rules, with exact dynamic-programming oracles.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct TabularMdp {
    pub n_states: usize,
    pub n_actions: usize,
    /// `[s][a][s']`, flattened.
    transitions: Vec<f64>,
    /// Mean reward `[s][a]`, flattened.
    rewards: Vec<f64>,
    pub reward_noise_std: f64,
    pub gamma: f64,
}

impl TabularMdp {
    pub fn new(
        n_states: usize,
        n_actions: usize,
        transitions: Vec<f64>,
        rewards: Vec<f64>,
        reward_noise_std: f64,
        gamma: f64,
    ) -> Result<Self> {
        if n_states == 0 || n_actions == 0 {
            return Err(Error::InvalidArgument("mdp needs at least one state and action".into()));
        }
        if transitions.len() != n_states * n_actions * n_states || rewards.len() != n_states * n_actions {
            return Err(Error::Shape {
                op: "TabularMdp::new",
                left: vec![n_states, n_actions, n_states],
                right: vec![transitions.len(), rewards.len()],
            });
        }
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::InvalidArgument(format!("gamma must be in [0, 1), got {gamma}")));
        }
        for (i, row) in transitions.chunks(n_states).enumerate() {
            let sum: f64 = row.iter().sum();
            if row.iter().any(|p| *p < 0.0) || (sum - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidArgument(format!(
                    "P[{}][{}] is not a distribution (sum {sum})",
                    i / n_actions,
                    i % n_actions
                )));
            }
        }
        if rewards.iter().any(|r| !r.is_finite()) || !(reward_noise_std >= 0.0) {
            return Err(Error::InvalidArgument("rewards must be finite and noise std >= 0".into()));
        }
        Ok(Self {
            n_states,
            n_actions,
            transitions,
            rewards,
            reward_noise_std,
            gamma,
        })
    }

    /// Dense random MDP: `P[s][a]` normalized uniform draws, `R` uniform in `[-1, 1]`.
    pub fn random<R: Rng + ?Sized>(
        n_states: usize,
        n_actions: usize,
        gamma: f64,
        reward_noise_std: f64,
        rng: &mut R,
    ) -> Self {
        let mut transitions = Vec::with_capacity(n_states * n_actions * n_states);
        for _ in 0..n_states * n_actions {
            let row: Vec<f64> = (0..n_states).map(|_| rng.gen_range(0.05..1.0)).collect();
            let total: f64 = row.iter().sum();
            let mut row: Vec<f64> = row.iter().map(|p| p / total).collect();
            // push rounding residue into the last entry so rows sum to 1 exactly enough
            let drift: f64 = 1.0 - row.iter().sum::<f64>();
            *row.last_mut().unwrap() += drift;
            transitions.extend(row);
        }
        let rewards = (0..n_states * n_actions).map(|_| rng.gen_range(-1.0..=1.0)).collect();
        Self::new(n_states, n_actions, transitions, rewards, reward_noise_std, gamma).expect("valid random mdp")
    }

    pub fn p(&self, s: usize, a: usize, next: usize) -> f64 {
        self.transitions[(s * self.n_actions + a) * self.n_states + next]
    }

    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.rewards[s * self.n_actions + a]
    }

    pub fn with_gamma(&self, gamma: f64) -> Result<Self> {
        Self::new(
            self.n_states,
            self.n_actions,
            self.transitions.clone(),
            self.rewards.clone(),
            self.reward_noise_std,
            gamma,
        )
    }

    /// Samples `(reward, next_state)`.
    pub fn sample_step<R: Rng + ?Sized>(&self, s: usize, a: usize, rng: &mut R) -> (f64, usize) {
        let mut reward = self.reward(s, a);
        if self.reward_noise_std > 0.0 {
            reward += Normal::new(0.0, self.reward_noise_std).expect("std >= 0").sample(rng);
        }
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let row = &self.transitions[(s * self.n_actions + a) * self.n_states..][..self.n_states];
        for (next, p) in row.iter().enumerate() {
            acc += p;
            if u < acc {
                return (reward, next);
            }
        }
        (reward, self.n_states - 1)
    }

    /// `Σ_{s'} P(s'|s,a) f(s')`.
    fn expect_next(&self, s: usize, a: usize, value: &[f64]) -> f64 {
        let row = &self.transitions[(s * self.n_actions + a) * self.n_states..][..self.n_states];
        row.iter().zip(value).map(|(p, v)| p * v).sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct QTable {
    pub n_states: usize,
    pub n_actions: usize,
    pub values: Vec<f64>,
    pub visits: Vec<u64>,
}

impl QTable {
    pub fn zeros(n_states: usize, n_actions: usize) -> Self {
        Self {
            n_states,
            n_actions,
            values: vec![0.0; n_states * n_actions],
            visits: vec![0; n_states * n_actions],
        }
    }

    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.values[s * self.n_actions + a]
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.values[s * self.n_actions..(s + 1) * self.n_actions]
    }

    /// Greedy action; ties go to the lowest index.
    pub fn argmax(&self, s: usize) -> usize {
        argmax(self.row(s))
    }

    pub fn max(&self, s: usize) -> f64 {
        self.row(s).iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn sup_distance(&self, other: &QTable) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// `(T Q)(s,a) = R(s,a) + γ Σ P(s'|s,a) max_a' Q(s',a')`.
pub fn bellman_optimality(mdp: &TabularMdp, q: &QTable) -> QTable {
    let v: Vec<f64> = (0..mdp.n_states).map(|s| q.max(s)).collect();
    apply_backup(mdp, &v)
}

fn apply_backup(mdp: &TabularMdp, v: &[f64]) -> QTable {
    let mut out = QTable::zeros(mdp.n_states, mdp.n_actions);
    for s in 0..mdp.n_states {
        for a in 0..mdp.n_actions {
            out.values[s * mdp.n_actions + a] = mdp.reward(s, a) + mdp.gamma * mdp.expect_next(s, a, v);
        }
    }
    out
}

/// Q* with `‖T Q − Q‖∞ < tol`, plus the residual of every sweep.
pub fn value_iteration_trace(mdp: &TabularMdp, tol: f64) -> Result<(QTable, Vec<f64>)> {
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tol must be > 0, got {tol}")));
    }
    let mut q = QTable::zeros(mdp.n_states, mdp.n_actions);
    let mut residuals = Vec::new();
    loop {
        let next = bellman_optimality(mdp, &q);
        let res = next.sup_distance(&q);
        residuals.push(res);
        q = next;
        // the residual of `next` is at most γ·res
        if res < tol {
            return Ok((q, residuals));
        }
    }
}

pub fn value_iteration(mdp: &TabularMdp, tol: f64) -> Result<QTable> {
    value_iteration_trace(mdp, tol).map(|(q, _)| q)
}

/// Row-stochastic policy `[s][a]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Policy {
    pub n_states: usize,
    pub n_actions: usize,
    pub probs: Vec<f64>,
}

impl Policy {
    pub fn new(n_states: usize, n_actions: usize, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != n_states * n_actions {
            return Err(Error::Shape {
                op: "Policy::new",
                left: vec![n_states, n_actions],
                right: vec![probs.len()],
            });
        }
        for row in probs.chunks(n_actions) {
            let sum: f64 = row.iter().sum();
            if row.iter().any(|p| *p < 0.0) || (sum - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidArgument(format!("policy row does not sum to 1: {row:?}")));
            }
        }
        Ok(Self {
            n_states,
            n_actions,
            probs,
        })
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        Self {
            n_states,
            n_actions,
            probs: vec![1.0 / n_actions as f64; n_states * n_actions],
        }
    }

    pub fn random<R: Rng + ?Sized>(n_states: usize, n_actions: usize, rng: &mut R) -> Self {
        let mut probs = Vec::with_capacity(n_states * n_actions);
        for _ in 0..n_states {
            let row: Vec<f64> = (0..n_actions).map(|_| rng.gen_range(0.01..1.0)).collect();
            let total: f64 = row.iter().sum();
            probs.extend(row.iter().map(|p| p / total));
        }
        Self {
            n_states,
            n_actions,
            probs,
        }
    }

    pub fn greedy(q: &QTable) -> Self {
        let mut probs = vec![0.0; q.n_states * q.n_actions];
        for s in 0..q.n_states {
            probs[s * q.n_actions + q.argmax(s)] = 1.0;
        }
        Self {
            n_states: q.n_states,
            n_actions: q.n_actions,
            probs,
        }
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.probs[s * self.n_actions..(s + 1) * self.n_actions]
    }

    fn row_mut(&mut self, s: usize) -> &mut [f64] {
        &mut self.probs[s * self.n_actions..(s + 1) * self.n_actions]
    }
}

pub const POLICY_EVAL_TOL: f64 = 1e-12;

/// `Q^π` as the fixed point of `Q = R + γ P Π Q`, iterated to a residual below [`POLICY_EVAL_TOL`].
pub fn exact_policy_evaluation(mdp: &TabularMdp, policy: &Policy) -> Result<QTable> {
    if policy.n_states != mdp.n_states || policy.n_actions != mdp.n_actions {
        return Err(Error::Shape {
            op: "exact_policy_evaluation",
            left: vec![mdp.n_states, mdp.n_actions],
            right: vec![policy.n_states, policy.n_actions],
        });
    }
    let mut q = QTable::zeros(mdp.n_states, mdp.n_actions);
    loop {
        let v: Vec<f64> = (0..mdp.n_states)
            .map(|s| policy.row(s).iter().zip(q.row(s)).map(|(p, x)| p * x).sum())
            .collect();
        let next = apply_backup(mdp, &v);
        let res = next.sup_distance(&q);
        q = next;
        if res < POLICY_EVAL_TOL {
            return Ok(q);
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ImprovementMode {
    /// Maximize `E_{a~π'} Q^π(s, a)` over the simplex.
    QLoss,
    /// Repeated likelihood-weighted moves toward `argmax_a Q^π(s, a)`.
    Cem,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImprovementOutcome {
    pub policy: Policy,
    /// `Q^{π_new} ≥ Q^π − 1e-8` everywhere.
    pub dominated: bool,
    pub q_old: QTable,
    pub q_new: QTable,
    /// Update rounds used by the CEM mode (0 for Q-loss).
    pub rounds: usize,
}

pub const DOMINANCE_TOL: f64 = 1e-8;
const CEM_STEP: f64 = 0.5;
const CEM_DETERMINISM_TOL: f64 = 1e-6;

pub fn policy_improvement_check(mdp: &TabularMdp, policy: &Policy, mode: ImprovementMode) -> Result<ImprovementOutcome> {
    let q_old = exact_policy_evaluation(mdp, policy)?;
    let mut rounds = 0;
    let new_policy = match mode {
        ImprovementMode::QLoss => Policy::greedy(&q_old),
        ImprovementMode::Cem => {
            let mut pi = policy.clone();
            for s in 0..mdp.n_states {
                let best = q_old.argmax(s);
                let q_star = q_old.get(s, best);
                loop {
                    // E_{a~π}[Q(s,a*) − Q(s,a)]_+ gates the update
                    let weight: f64 = pi
                        .row(s)
                        .iter()
                        .zip(q_old.row(s))
                        .map(|(p, q)| p * (q_star - q).max(0.0))
                        .sum();
                    if weight <= 0.0 || pi.row(s)[best] >= 1.0 - CEM_DETERMINISM_TOL {
                        break;
                    }
                    let row = pi.row_mut(s);
                    for (a, p) in row.iter_mut().enumerate() {
                        let target = if a == best { 1.0 } else { 0.0 };
                        *p = (1.0 - CEM_STEP) * *p + CEM_STEP * target;
                    }
                    rounds += 1;
                }
            }
            pi
        }
    };
    let q_new = exact_policy_evaluation(mdp, &new_policy)?;
    let dominated = q_new.values.iter().zip(&q_old.values).all(|(n, o)| *n >= o - DOMINANCE_TOL);
    Ok(ImprovementOutcome {
        policy: new_policy,
        dominated,
        q_old,
        q_new,
        rounds,
    })
}

pub const DEFAULT_LR_EXPONENT: f64 = 0.7;

/// Max-min double Q-learning on a single behavior trajectory with uniform random actions.
///
/// Both tables receive the same target
/// `y = r + γ max_{a' ∈ {a^π, a*}} min_i Q_i(s', a')` with `a^π` uniform and
/// `a* = argmax Q2(s', ·)`. Step size is `1 / (1 + n(s,a))^lr_exponent`.
pub fn maxmin_double_q_run<R: Rng + ?Sized>(
    mdp: &TabularMdp,
    steps: usize,
    lr_exponent: f64,
    rng: &mut R,
) -> Result<(QTable, QTable)> {
    if !(lr_exponent > 0.5 && lr_exponent <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "lr_exponent must be in (0.5, 1] for Robbins-Monro step sizes, got {lr_exponent}"
        )));
    }
    let (ns, na) = (mdp.n_states, mdp.n_actions);
    let mut q1 = QTable::zeros(ns, na);
    let mut q2 = QTable::zeros(ns, na);
    for i in 0..ns * na {
        q1.values[i] = rng.gen_range(-1.0..1.0);
        q2.values[i] = rng.gen_range(-1.0..1.0);
    }
    let mut s = rng.gen_range(0..ns);
    for _ in 0..steps {
        let a = rng.gen_range(0..na);
        let (r, next) = mdp.sample_step(s, a, rng);
        let a_pi = rng.gen_range(0..na);
        let a_star = q2.argmax(next);
        let m_pi = q1.get(next, a_pi).min(q2.get(next, a_pi));
        let m_star = q1.get(next, a_star).min(q2.get(next, a_star));
        let y = r + mdp.gamma * m_pi.max(m_star);

        let idx = s * na + a;
        let lr = 1.0 / (1.0 + q1.visits[idx] as f64).powf(lr_exponent);
        q1.values[idx] += lr * (y - q1.values[idx]);
        q2.values[idx] += lr * (y - q2.values[idx]);
        q1.visits[idx] += 1;
        q2.visits[idx] += 1;
        s = next;
    }
    Ok((q1, q2))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvergenceReport {
    pub seed: u64,
    /// `‖Q2 − Q*‖∞`.
    pub q2_error: f64,
    /// `‖Q1 − Q2‖∞`.
    pub q_gap: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConvergenceSuite {
    pub n_states: usize,
    pub n_actions: usize,
    pub gamma: f64,
    pub reward_noise_std: f64,
    pub steps: usize,
    pub lr_exponent: f64,
}

impl Default for ConvergenceSuite {
    fn default() -> Self {
        Self {
            n_states: 5,
            n_actions: 3,
            gamma: 0.9,
            reward_noise_std: 0.1,
            steps: 500_000,
            lr_exponent: DEFAULT_LR_EXPONENT,
        }
    }
}

impl ConvergenceSuite {
    /// One random MDP per seed; MDP and learning stream are both derived from the seed.
    pub fn run_seed(&self, seed: u64) -> Result<ConvergenceReport> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mdp = TabularMdp::random(self.n_states, self.n_actions, self.gamma, self.reward_noise_std, &mut rng);
        let q_star = value_iteration(&mdp, 1e-12)?;
        let (q1, q2) = maxmin_double_q_run(&mdp, self.steps, self.lr_exponent, &mut rng)?;
        Ok(ConvergenceReport {
            seed,
            q2_error: q2.sup_distance(&q_star),
            q_gap: q1.sup_distance(&q2),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImprovementSummary {
    pub pairs: usize,
    pub q_loss_dominated: usize,
    pub cem_dominated: usize,
    /// Smallest `Q^{π_new} − Q^π` seen over all pairs, modes and entries.
    pub worst_margin: f64,
}

/// Random (MDP, stochastic policy) pairs with 2–6 states, 2–4 actions and γ in `[0, 0.95]`.
pub fn improvement_suite(pairs: usize, seed: u64) -> Result<ImprovementSummary> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut summary = ImprovementSummary {
        pairs,
        q_loss_dominated: 0,
        cem_dominated: 0,
        worst_margin: f64::INFINITY,
    };
    for _ in 0..pairs {
        let ns = rng.gen_range(2..=6);
        let na = rng.gen_range(2..=4);
        let gamma = rng.gen_range(0.0..=0.95);
        let mdp = TabularMdp::random(ns, na, gamma, 0.0, &mut rng);
        let policy = Policy::random(ns, na, &mut rng);
        for mode in [ImprovementMode::QLoss, ImprovementMode::Cem] {
            let out = policy_improvement_check(&mdp, &policy, mode)?;
            let margin = out
                .q_new
                .values
                .iter()
                .zip(&out.q_old.values)
                .map(|(n, o)| n - o)
                .fold(f64::INFINITY, f64::min);
            summary.worst_margin = summary.worst_margin.min(margin);
            if out.dominated {
                match mode {
                    ImprovementMode::QLoss => summary.q_loss_dominated += 1,
                    ImprovementMode::Cem => summary.cem_dominated += 1,
                }
            }
        }
    }
    Ok(summary)
}
