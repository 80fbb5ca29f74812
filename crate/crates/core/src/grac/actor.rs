use rand::Rng;
use rand_distr::StandardNormal;

use crate::autodiff::{Adam, Graph, Tensor, Var};
use crate::error::{ensure_finite, Result};
use crate::grac::target::{cem_actions, sample_actions, stack_rows};
use crate::grac::GracConfig;
use crate::networks::{
    actor_forward, critic_forward, log_prob_of, sample_action, ActorOutput, ActorParams, BoundActor, BoundQ, CriticParams,
    Parameters, QNetwork,
};

/// `−mean Q1(s, â)` with `â` the reparameterized sample; `q1` should be bound as constants.
pub fn q_loss_from_outputs(g: &mut Graph, q1: &BoundQ, states: Var, actions: Var) -> Result<Var> {
    let q = critic_forward(g, q1, states, actions)?;
    let m = g.mean(q);
    Ok(g.neg(m))
}

/// `−weight · mean(w_t · log π(ā_t | s_t))` with detached improvement weights `w_t`.
pub fn cem_loss_from_outputs(
    g: &mut Graph,
    out: &ActorOutput,
    cem_actions: &Tensor,
    weights: &[f64],
    cem_loss_weight: f64,
    max_action: f64,
) -> Result<Var> {
    let logp = log_prob_of(g, out, cem_actions, max_action)?;
    let w = g.constant(Tensor::new(vec![weights.len(), 1], weights.to_vec())?);
    let weighted = g.mul(w, logp)?;
    let m = g.mean(weighted);
    Ok(g.scale(m, -cem_loss_weight))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ActorReport {
    pub q_loss: f64,
    pub cem_loss: f64,
    /// Rows where CEM found a strictly better action than the actor sample.
    pub improved_rows: usize,
    pub updated: bool,
}

struct Objective {
    loss: Option<Var>,
    q_loss: f64,
    cem_loss: f64,
    improved_rows: usize,
}

fn draw_noise<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect();
    Tensor::new(vec![rows, cols], data).expect("shape")
}

fn build_objective<R: Rng + ?Sized>(
    g: &mut Graph,
    actor: &BoundActor,
    states: &Tensor,
    q1: &QNetwork,
    cfg: &GracConfig,
    use_q: bool,
    use_cem: bool,
    rng: &mut R,
) -> Result<Objective> {
    let max_a = actor.max_action;
    let s = g.constant(states.clone());
    let out = actor_forward(g, actor, s)?;
    let (b, a) = g.value(out.mean).dims2();
    let noise = draw_noise(b, a, rng);
    let (a_hat, _) = sample_action(g, &out, &noise, max_a)?;

    let bq1 = q1.bind(g, false);
    let mut loss = None;
    let mut q_loss = 0.0;
    let mut cem_loss = 0.0;
    let mut improved_rows = 0;

    if use_q {
        let l = q_loss_from_outputs(g, &bq1, s, a_hat)?;
        q_loss = g.value(l).item();
        loss = Some(l);
    }
    if use_cem {
        let mean_u = g.value(out.mean).clone();
        let sigma_u = g.value(out.sigma).clone();
        let a_bar = cem_actions(q1, states, &mean_u, &sigma_u, max_a, cfg, rng)?;
        let a_hat_vals = g.value(a_hat).clone();
        let q = q1.evaluate(&stack_rows(states, states), &stack_rows(&a_bar, &a_hat_vals))?;
        ensure_finite(&q, || "actor Q1".into())?;
        let weights: Vec<f64> = (0..b).map(|i| (q[i] - q[b + i]).max(0.0)).collect();
        improved_rows = weights.iter().filter(|w| **w > 0.0).count();
        let l = cem_loss_from_outputs(g, &out, &a_bar, &weights, cfg.cem_loss_weight, max_a)?;
        cem_loss = g.value(l).item();
        loss = Some(match loss {
            Some(prev) => g.add(prev, l)?,
            None => l,
        });
    }
    Ok(Objective {
        loss,
        q_loss,
        cem_loss,
        improved_rows,
    })
}

/// Value of the Q-loss term for a batch of states.
pub fn actor_q_loss<R: Rng + ?Sized>(states: &Tensor, actor: &ActorParams, q1: &QNetwork, rng: &mut R) -> Result<f64> {
    let mut g = Graph::new();
    let bound = actor.bind(&mut g, false);
    let cfg = GracConfig::default();
    Ok(build_objective(&mut g, &bound, states, q1, &cfg, true, false, rng)?.q_loss)
}

/// Value of the CEM-loss term for a batch of states.
pub fn actor_cem_loss<R: Rng + ?Sized>(
    states: &Tensor,
    actor: &ActorParams,
    q1: &QNetwork,
    cfg: &GracConfig,
    rng: &mut R,
) -> Result<f64> {
    let mut g = Graph::new();
    let bound = actor.bind(&mut g, false);
    Ok(build_objective(&mut g, &bound, states, q1, cfg, false, true, rng)?.cem_loss)
}

/// One Adam step on the actor for `use_q_loss · Q-loss + use_cem_loss · CEM-loss`.
pub fn actor_update<R: Rng + ?Sized>(
    states: &Tensor,
    actor: &mut ActorParams,
    opt: &mut Adam,
    q1: &QNetwork,
    cfg: &GracConfig,
    rng: &mut R,
) -> Result<ActorReport> {
    let (use_q, use_cem) = (cfg.flags.use_q_loss, cfg.flags.use_cem_loss);
    if !use_q && !use_cem {
        return Ok(ActorReport {
            q_loss: 0.0,
            cem_loss: 0.0,
            improved_rows: 0,
            updated: false,
        });
    }
    let mut g = Graph::new();
    let bound = actor.bind(&mut g, true);
    let obj = build_objective(&mut g, &bound, states, q1, cfg, use_q, use_cem, rng)?;
    let loss = obj.loss.expect("at least one actor loss enabled");
    let grads = g.backward(loss)?;
    let grads = bound.gradients(&grads);
    let names: Vec<String> = actor.named_tensors().into_iter().map(|(n, _)| n).collect();
    opt.step(names.iter().map(String::as_str).zip(actor.tensors_mut()), &grads)?;
    Ok(ActorReport {
        q_loss: obj.q_loss,
        cem_loss: obj.cem_loss,
        improved_rows: obj.improved_rows,
        updated: true,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ActionMode {
    /// Uniform random in the action box.
    Warmup,
    /// Better of the actor sample and a CEM search on `Q2`, by `min_j Q_j`.
    Train,
    /// `max_action · tanh(mean)`.
    Eval,
}

pub fn select_behavior_action<R: Rng + ?Sized>(
    state: &[f64],
    actor: &ActorParams,
    critics: &CriticParams,
    cfg: &GracConfig,
    mode: ActionMode,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let max_a = actor.max_action;
    match mode {
        ActionMode::Eval => actor.act_deterministic(state),
        ActionMode::Warmup => Ok((0..actor.action_dim()).map(|_| rng.gen_range(-max_a..=max_a)).collect()),
        ActionMode::Train => {
            let s = Tensor::new(vec![1, state.len()], state.to_vec())?;
            let (mean_u, sigma_u) = actor.predict(&s)?;
            let a_hat = sample_actions(actor, &mean_u, &sigma_u, rng);
            let a_tilde = cem_actions(&critics.q2, &s, &mean_u, &sigma_u, max_a, cfg, rng)?;
            let states = stack_rows(&s, &s);
            let acts = stack_rows(&a_hat, &a_tilde);
            let q1 = critics.q1.evaluate(&states, &acts)?;
            let q2 = critics.q2.evaluate(&states, &acts)?;
            Ok(pick_by_min_q(&a_hat, &a_tilde, [q1[0], q2[0]], [q1[1], q2[1]]))
        }
    }
}

/// `â` unless `min_j Q_j(ã)` is strictly larger.
pub(crate) fn pick_by_min_q(a_hat: &Tensor, a_tilde: &Tensor, q_hat: [f64; 2], q_tilde: [f64; 2]) -> Vec<f64> {
    if q_tilde[0].min(q_tilde[1]) > q_hat[0].min(q_hat[1]) {
        a_tilde.data().to_vec()
    } else {
        a_hat.data().to_vec()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grac::AblationFlags;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn states(rng: &mut ChaCha8Rng, n: usize) -> Tensor {
        Tensor::new(vec![n, 3], (0..n * 3).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn both_losses_off_leaves_actor_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut actor = ActorParams::new(3, 1, 8, 2.0, &mut rng);
        let critics = CriticParams::new(3, 1, 8, &mut rng);
        let before = actor.clone();
        let mut opt = Adam::new(1e-2, actor.tensors());
        let cfg = GracConfig {
            flags: AblationFlags { use_q_loss: false, use_cem_loss: false, ..AblationFlags::default() },
            ..GracConfig::default()
        };
        let s = states(&mut rng, 4);
        let r = actor_update(&s, &mut actor, &mut opt, &critics.q1, &cfg, &mut rng).unwrap();
        assert!(!r.updated);
        assert_eq!(actor, before);
    }

    #[test]
    fn zero_critic_gives_zero_q_loss_and_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let actor = ActorParams::new(3, 1, 8, 2.0, &mut rng);
        let q = QNetwork::zeros(3, 1, 8);
        let s = states(&mut rng, 4);
        assert_eq!(actor_q_loss(&s, &actor, &q, &mut rng).unwrap(), 0.0);

        let mut g = Graph::new();
        let bound = actor.bind(&mut g, true);
        let cfg = GracConfig::default();
        let obj = build_objective(&mut g, &bound, &s, &q, &cfg, true, false, &mut rng).unwrap();
        let grads = g.backward(obj.loss.unwrap()).unwrap();
        assert!(bound.gradients(&grads).iter().all(|t| t.data().iter().all(|x| *x == 0.0)));
    }

    #[test]
    fn zero_weights_give_zero_cem_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let actor = ActorParams::new(3, 2, 8, 1.0, &mut rng);
        let s = states(&mut rng, 3);
        let mut g = Graph::new();
        let bound = actor.bind(&mut g, true);
        let sv = g.constant(s);
        let out = actor_forward(&mut g, &bound, sv).unwrap();
        let target = Tensor::full(&[3, 2], 0.5);
        let loss = cem_loss_from_outputs(&mut g, &out, &target, &[0.0; 3], 1.0, 1.0).unwrap();
        assert_eq!(g.value(loss).item(), 0.0);
        let grads = g.backward(loss).unwrap();
        assert!(bound.gradients(&grads).iter().all(|t| t.data().iter().all(|x| *x == 0.0)));
    }

    #[test]
    fn cem_step_raises_density_of_target_action() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut actor = ActorParams::new(3, 1, 8, 2.0, &mut rng);
        let s = Tensor::new(vec![1, 3], vec![0.3, -0.2, 0.5]).unwrap();
        let a_bar = Tensor::new(vec![1, 1], vec![1.2]).unwrap();
        let log_density = |actor: &ActorParams| {
            let mut g = Graph::new();
            let bound = actor.bind(&mut g, false);
            let sv = g.constant(s.clone());
            let out = actor_forward(&mut g, &bound, sv).unwrap();
            let lp = log_prob_of(&mut g, &out, &a_bar, 2.0).unwrap();
            g.value(lp).item()
        };
        let before = log_density(&actor);
        let mut g = Graph::new();
        let bound = actor.bind(&mut g, true);
        let sv = g.constant(s.clone());
        let out = actor_forward(&mut g, &bound, sv).unwrap();
        let loss = cem_loss_from_outputs(&mut g, &out, &a_bar, &[0.7], 1.0, 2.0).unwrap();
        let grads = bound.gradients(&g.backward(loss).unwrap());
        let mut opt = Adam::new(1e-3, actor.tensors());
        let names: Vec<String> = actor.named_tensors().into_iter().map(|(n, _)| n).collect();
        opt.step(names.iter().map(String::as_str).zip(actor.tensors_mut()), &grads).unwrap();
        assert!(log_density(&actor) > before);
    }

    #[test]
    fn eval_mode_zero_actor_acts_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let actor = ActorParams::zeros(3, 2, 8, 1.0);
        let critics = CriticParams::new(3, 2, 8, &mut rng);
        let a = select_behavior_action(&[0.1, 0.2, 0.3], &actor, &critics, &GracConfig::default(), ActionMode::Eval, &mut rng)
            .unwrap();
        assert_eq!(a, vec![0.0, 0.0]);
    }

    #[test]
    fn warmup_actions_fill_the_box() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let actor = ActorParams::zeros(3, 1, 8, 2.0);
        let critics = CriticParams::zeros(3, 1, 8);
        let acts: Vec<f64> = (0..200)
            .map(|_| select_behavior_action(&[0.0; 3], &actor, &critics, &GracConfig::default(), ActionMode::Warmup, &mut rng).unwrap()[0])
            .collect();
        assert!(acts.iter().all(|a| a.abs() <= 2.0));
        assert!(acts.iter().any(|a| *a > 1.5) && acts.iter().any(|a| *a < -1.5));
    }

    #[test]
    fn behavior_pick_rule() {
        let a_hat = Tensor::vector(vec![0.1]);
        let a_tilde = Tensor::vector(vec![0.9]);
        assert_eq!(pick_by_min_q(&a_hat, &a_tilde, [1.0, 2.0], [3.0, 1.5]), vec![0.9]);
        assert_eq!(pick_by_min_q(&a_hat, &a_tilde, [1.0, 2.0], [3.0, 1.0]), vec![0.1]);
        assert_eq!(pick_by_min_q(&a_hat, &a_hat, [1.0, 1.0], [1.0, 1.0]), vec![0.1]);
    }
}
