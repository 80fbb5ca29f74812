use rand::Rng;
use rand_distr::StandardNormal;

use crate::autodiff::Tensor;
use crate::cem::cem_search_batch;
use crate::error::{ensure_finite, Result};
use crate::grac::GracConfig;
use crate::networks::{ActorParams, CriticParams, QNetwork};
use crate::replay::Batch;

/// Frozen quantities for one critic update.
#[derive(Clone, Debug, PartialEq)]
pub struct TargetBundle {
    pub y: Vec<f64>,
    /// Candidate attaining the outer max, `[B, A]`.
    pub a_dagger: Tensor,
    /// `Q(s', a†; θ1)` before the update.
    pub y1_prime: Vec<f64>,
    /// `Q(s', a†; θ2)` before the update.
    pub y2_prime: Vec<f64>,
    /// Per row: whether the CEM candidate won the max.
    pub picked_cem: Vec<bool>,
}

impl TargetBundle {
    pub fn q1_mean(&self) -> f64 {
        mean(&self.y1_prime)
    }

    pub fn q_gap_mean(&self) -> f64 {
        mean(&self.y1_prime.iter().zip(&self.y2_prime).map(|(a, b)| a - b).collect::<Vec<_>>())
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn bootstrap(reward: f64, gamma: f64, done: bool, value: f64) -> f64 {
    let mask = if done { 0.0 } else { 1.0 };
    reward + gamma * mask * value
}

/// `r + γ(1 − done) · max(min_j Q_j(â), min_j Q_j(ã))`.
///
/// Returns the target and whether `ã` attains the max (ties go to `â`).
pub fn maxmin_target(
    reward: f64,
    gamma: f64,
    done: bool,
    q1_hat: f64,
    q2_hat: f64,
    q1_tilde: f64,
    q2_tilde: f64,
) -> (f64, bool) {
    let m_hat = q1_hat.min(q2_hat);
    let m_tilde = q1_tilde.min(q2_tilde);
    let pick_tilde = m_tilde > m_hat;
    let best = if pick_tilde { m_tilde } else { m_hat };
    (bootstrap(reward, gamma, done, best), pick_tilde)
}

/// `r + γ(1 − done) · min_j Q_j(â)`.
pub fn clipped_target(reward: f64, gamma: f64, done: bool, q1_hat: f64, q2_hat: f64) -> f64 {
    bootstrap(reward, gamma, done, q1_hat.min(q2_hat))
}

/// Maps the actor's pre-squash Gaussian to a CEM proposal in action space.
pub fn warm_start(mean_u: &Tensor, sigma_u: &Tensor, max_action: f64) -> (Tensor, Tensor) {
    (
        mean_u.map(|m| max_action * m.tanh()),
        sigma_u.map(|s| max_action * s),
    )
}

pub(crate) fn repeat_rows(t: &Tensor, times: usize) -> Tensor {
    let (r, c) = t.dims2();
    let mut data = Vec::with_capacity(r * c * times);
    for i in 0..r {
        for _ in 0..times {
            data.extend_from_slice(t.row(i));
        }
    }
    Tensor::new(vec![r * times, c], data).expect("shape")
}

pub(crate) fn stack_rows(a: &Tensor, b: &Tensor) -> Tensor {
    let (r, c) = a.dims2();
    let mut data = a.data().to_vec();
    data.extend_from_slice(b.data());
    Tensor::new(vec![r + b.rows(), c], data).expect("shape")
}

/// Reparameterized actor samples for a batch of states (detached).
pub(crate) fn sample_actions<R: Rng + ?Sized>(
    actor: &ActorParams,
    mean_u: &Tensor,
    sigma_u: &Tensor,
    rng: &mut R,
) -> Tensor {
    let max_a = actor.max_action;
    let data = mean_u
        .data()
        .iter()
        .zip(sigma_u.data())
        .map(|(m, s)| {
            let z: f64 = rng.sample(StandardNormal);
            max_a * (m + s * z).tanh()
        })
        .collect();
    Tensor::new(vec![mean_u.rows(), mean_u.cols()], data).expect("shape")
}

/// CEM on `q` for each state row, warm-started from the actor.
pub(crate) fn cem_actions<R: Rng + ?Sized>(
    q: &QNetwork,
    states: &Tensor,
    mean_u: &Tensor,
    sigma_u: &Tensor,
    max_action: f64,
    cfg: &GracConfig,
    rng: &mut R,
) -> Result<Tensor> {
    let (means, sigmas) = warm_start(mean_u, sigma_u, max_action);
    let repeated = repeat_rows(states, cfg.cem.n_pop);
    let outcomes = cem_search_batch(|acts| q.evaluate(&repeated, acts), &means, &sigmas, max_action, &cfg.cem, rng)?;
    let rows: Vec<Vec<f64>> = outcomes.into_iter().map(|o| o.best_action).collect();
    Tensor::from_rows(&rows)
}

/// Builds `y`, `a†`, `y′1`, `y′2` for a batch.
///
/// `target_critics` produce the bootstrap values (the live critics unless a
/// target network is enabled); `live_critics` produce `y′`.
pub fn compute_target<R: Rng + ?Sized>(
    batch: &Batch,
    target_critics: &CriticParams,
    live_critics: &CriticParams,
    actor: &ActorParams,
    cfg: &GracConfig,
    rng: &mut R,
) -> Result<TargetBundle> {
    let n = batch.len();
    let max_a = actor.max_action;
    let next = &batch.next_states;
    let (mean_u, sigma_u) = actor.predict(next)?;
    let a_hat = sample_actions(actor, &mean_u, &sigma_u, rng);

    let mut y = Vec::with_capacity(n);
    let mut picked_cem = vec![false; n];
    let a_dagger;
    let (mut q1_dagger, mut q2_dagger);

    if cfg.flags.use_maxmin {
        let a_tilde = cem_actions(&target_critics.q2, next, &mean_u, &sigma_u, max_a, cfg, rng)?;
        let both_states = stack_rows(next, next);
        let both_actions = stack_rows(&a_hat, &a_tilde);
        let q1 = target_critics.q1.evaluate(&both_states, &both_actions)?;
        let q2 = target_critics.q2.evaluate(&both_states, &both_actions)?;
        ensure_finite(&q1, || "target Q1".into())?;
        ensure_finite(&q2, || "target Q2".into())?;
        let mut rows = Vec::with_capacity(n);
        q1_dagger = Vec::with_capacity(n);
        q2_dagger = Vec::with_capacity(n);
        for i in 0..n {
            let (yi, tilde) = maxmin_target(batch.rewards[i], cfg.gamma, batch.dones[i], q1[i], q2[i], q1[n + i], q2[n + i]);
            y.push(yi);
            picked_cem[i] = tilde;
            let j = if tilde { n + i } else { i };
            rows.push(both_actions.row(j).to_vec());
            q1_dagger.push(q1[j]);
            q2_dagger.push(q2[j]);
        }
        a_dagger = Tensor::from_rows(&rows)?;
    } else {
        let q1 = target_critics.q1.evaluate(next, &a_hat)?;
        let q2 = target_critics.q2.evaluate(next, &a_hat)?;
        ensure_finite(&q1, || "target Q1".into())?;
        ensure_finite(&q2, || "target Q2".into())?;
        for i in 0..n {
            y.push(clipped_target(batch.rewards[i], cfg.gamma, batch.dones[i], q1[i], q2[i]));
        }
        q1_dagger = q1;
        q2_dagger = q2;
        a_dagger = a_hat;
    }

    if cfg.flags.use_target_network {
        q1_dagger = live_critics.q1.evaluate(next, &a_dagger)?;
        q2_dagger = live_critics.q2.evaluate(next, &a_dagger)?;
    }

    Ok(TargetBundle {
        y,
        a_dagger,
        y1_prime: q1_dagger,
        y2_prime: q2_dagger,
        picked_cem,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn worked_example() {
        let (y, tilde) = maxmin_target(1.0, 0.99, false, 2.0, 1.0, 3.0, 1.5);
        assert_eq!(y, 1.0 + 0.99 * 1.5);
        assert!((y - 2.485).abs() < 1e-12);
        assert!(tilde);
    }

    #[test]
    fn terminal_ignores_q() {
        let (y, _) = maxmin_target(0.7, 0.99, true, 1e6, -3.0, 42.0, 8.0);
        assert_eq!(y, 0.7);
        assert_eq!(clipped_target(0.7, 0.99, true, 5.0, 6.0), 0.7);
    }

    #[test]
    fn tie_prefers_actor_candidate() {
        let (_, tilde) = maxmin_target(0.0, 0.9, false, 1.0, 2.0, 1.0, 3.0);
        assert!(!tilde);
    }

    #[test]
    fn warm_start_maps_to_action_space() {
        let (m, s) = warm_start(&Tensor::vector(vec![0.0, 100.0]), &Tensor::vector(vec![0.5, 1.0]), 2.0);
        assert_eq!(m.data(), &[0.0, 2.0]);
        assert_eq!(s.data(), &[1.0, 2.0]);
    }

    fn random_batch(rng: &mut ChaCha8Rng, n: usize) -> Batch {
        let t = |rng: &mut ChaCha8Rng, c: usize| {
            Tensor::new(vec![n, c], (0..n * c).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
        };
        Batch {
            states: t(rng, 3),
            actions: t(rng, 1),
            rewards: (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            next_states: t(rng, 3),
            dones: (0..n).map(|i| i % 5 == 0).collect(),
        }
    }

    fn small_cfg(use_maxmin: bool) -> GracConfig {
        let mut cfg = GracConfig::default();
        cfg.cem.n_pop = 16;
        cfg.flags.use_maxmin = use_maxmin;
        cfg
    }

    #[test]
    fn maxmin_bundle_bootstraps_through_a_dagger() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let actor = ActorParams::new(3, 1, 8, 2.0, &mut rng);
        let critics = CriticParams::new(3, 1, 8, &mut rng);
        let batch = random_batch(&mut rng, 20);
        let cfg = small_cfg(true);
        let b = compute_target(&batch, &critics, &critics, &actor, &cfg, &mut rng).unwrap();
        let q1 = critics.q1.evaluate(&batch.next_states, &b.a_dagger).unwrap();
        let q2 = critics.q2.evaluate(&batch.next_states, &b.a_dagger).unwrap();
        assert_eq!(b.y1_prime, q1);
        assert_eq!(b.y2_prime, q2);
        for i in 0..20 {
            assert_eq!(b.y[i], bootstrap(batch.rewards[i], cfg.gamma, batch.dones[i], q1[i].min(q2[i])));
            assert!(b.a_dagger.row(i)[0].abs() <= 2.0);
        }
    }

    #[test]
    fn clipped_mode_uses_actor_sample() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let actor = ActorParams::new(3, 1, 8, 2.0, &mut rng);
        let critics = CriticParams::new(3, 1, 8, &mut rng);
        let batch = random_batch(&mut rng, 10);
        let cfg = small_cfg(false);
        let mut replay = ChaCha8Rng::seed_from_u64(9);
        let b = compute_target(&batch, &critics, &critics, &actor, &cfg, &mut replay).unwrap();
        let mut replay = ChaCha8Rng::seed_from_u64(9);
        let (mean_u, sigma_u) = actor.predict(&batch.next_states).unwrap();
        let a_hat = sample_actions(&actor, &mean_u, &sigma_u, &mut replay);
        assert_eq!(b.a_dagger, a_hat);
        assert!(b.picked_cem.iter().all(|p| !p));
        let q1 = critics.q1.evaluate(&batch.next_states, &a_hat).unwrap();
        let q2 = critics.q2.evaluate(&batch.next_states, &a_hat).unwrap();
        for i in 0..10 {
            assert_eq!(b.y[i], clipped_target(batch.rewards[i], cfg.gamma, batch.dones[i], q1[i], q2[i]));
        }
    }

    #[test]
    fn target_network_only_changes_bootstrap() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let actor = ActorParams::new(3, 1, 8, 2.0, &mut rng);
        let live = CriticParams::new(3, 1, 8, &mut rng);
        let target = CriticParams::zeros(3, 1, 8);
        let batch = random_batch(&mut rng, 6);
        let mut cfg = small_cfg(true);
        cfg.flags.use_target_network = true;
        let b = compute_target(&batch, &target, &live, &actor, &cfg, &mut rng).unwrap();
        assert_eq!(b.y, batch.rewards);
        assert_eq!(b.y1_prime, live.q1.evaluate(&batch.next_states, &b.a_dagger).unwrap());
    }

    proptest! {
        #[test]
        fn target_is_symmetric_in_candidates(
            r in -10.0f64..10.0, gamma in 0.0f64..1.0, done: bool,
            q in proptest::array::uniform4(-100.0f64..100.0),
        ) {
            let (y, _) = maxmin_target(r, gamma, done, q[0], q[1], q[2], q[3]);
            let (y_swapped, _) = maxmin_target(r, gamma, done, q[2], q[3], q[0], q[1]);
            prop_assert_eq!(y, y_swapped);
        }

        #[test]
        fn target_dominates_clipped(
            r in -10.0f64..10.0, gamma in 0.0f64..1.0, done: bool,
            q in proptest::array::uniform4(-100.0f64..100.0),
        ) {
            let (y, _) = maxmin_target(r, gamma, done, q[0], q[1], q[2], q[3]);
            prop_assert!(y >= clipped_target(r, gamma, done, q[0], q[1]));
        }

        #[test]
        fn picked_candidate_attains_the_max(
            q in proptest::array::uniform4(-100.0f64..100.0),
        ) {
            let (y, tilde) = maxmin_target(0.0, 1.0, false, q[0], q[1], q[2], q[3]);
            let picked = if tilde { q[2].min(q[3]) } else { q[0].min(q[1]) };
            prop_assert_eq!(y, picked);
            prop_assert_eq!(y, q[0].min(q[1]).max(q[2].min(q[3])));
        }
    }

    #[test]
    fn repeat_rows_layout() {
        let t = Tensor::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap();
        let r = repeat_rows(&t, 2);
        assert_eq!(r.data(), &[1.0, 2.0, 1.0, 2.0, 3.0, 4.0, 3.0, 4.0]);
    }
}
