use crate::autodiff::{Adam, Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::grac::{GracConfig, TargetBundle};
use crate::networks::{critic_forward, BoundQ, CriticParams, Parameters};
use crate::replay::Batch;

#[derive(Clone, Debug, PartialEq)]
pub struct CriticLoopReport {
    pub iterations: usize,
    /// `L_1`.
    pub first_loss: f64,
    /// Loss measured at the last performed iteration.
    pub last_loss: f64,
    pub alpha: f64,
}

fn column(values: &[f64]) -> Tensor {
    Tensor::new(vec![values.len(), 1], values.to_vec()).expect("shape")
}

/// Batch mean of
/// `(y − Q1(s,a))² + (y − Q2(s,a))² + reg·[(y′1 − Q1(s′,a†))² + (y′2 − Q2(s′,a†))²]`.
pub fn critic_loss_graph(
    g: &mut Graph,
    q1: &BoundQ,
    q2: &BoundQ,
    batch: &Batch,
    bundle: &TargetBundle,
    regularize: bool,
) -> Result<Var> {
    let s = g.constant(batch.states.clone());
    let a = g.constant(batch.actions.clone());
    let y = g.constant(column(&bundle.y));

    let q1_sa = critic_forward(g, q1, s, a)?;
    let q2_sa = critic_forward(g, q2, s, a)?;
    let d1 = g.sub(y, q1_sa)?;
    let d2 = g.sub(y, q2_sa)?;
    let t1 = g.square(d1);
    let t2 = g.square(d2);
    let mut per_row = g.add(t1, t2)?;

    if regularize {
        let sn = g.constant(batch.next_states.clone());
        let ad = g.constant(bundle.a_dagger.clone());
        let y1p = g.constant(column(&bundle.y1_prime));
        let y2p = g.constant(column(&bundle.y2_prime));
        let q1_next = critic_forward(g, q1, sn, ad)?;
        let q2_next = critic_forward(g, q2, sn, ad)?;
        let r1 = g.sub(y1p, q1_next)?;
        let r2 = g.sub(y2p, q2_next)?;
        let r1 = g.square(r1);
        let r2 = g.square(r2);
        per_row = g.add(per_row, r1)?;
        per_row = g.add(per_row, r2)?;
    }
    Ok(g.mean(per_row))
}

/// Value of the critic loss at the current parameters.
pub fn critic_loss(batch: &Batch, bundle: &TargetBundle, critics: &CriticParams, regularize: bool) -> Result<f64> {
    let mut g = Graph::new();
    let q1 = critics.q1.bind(&mut g, false);
    let q2 = critics.q2.bind(&mut g, false);
    let loss = critic_loss_graph(&mut g, &q1, &q2, batch, bundle, regularize)?;
    Ok(g.value(loss).item())
}

/// Up to `K` joint Adam steps on both critics against the frozen `bundle`.
///
/// Stops after the first iteration `k` with `L_k < alpha · L_1`.
pub fn critic_update_loop(
    batch: &Batch,
    bundle: &TargetBundle,
    critics: &mut CriticParams,
    opt: &mut Adam,
    cfg: &GracConfig,
    alpha: f64,
) -> Result<CriticLoopReport> {
    let regularize = cfg.flags.use_target_regularization;
    let mut first_loss = f64::NAN;
    let mut last_loss = f64::NAN;
    let mut iterations = 0;
    for k in 1..=cfg.critic_iters {
        let mut g = Graph::new();
        let q1 = critics.q1.bind(&mut g, true);
        let q2 = critics.q2.bind(&mut g, true);
        let loss = critic_loss_graph(&mut g, &q1, &q2, batch, bundle, regularize)?;
        let value = g.value(loss).item();
        if !value.is_finite() {
            return Err(Error::NonFinite {
                what: format!("critic loss at inner iteration {k}"),
            });
        }
        let grads = g.backward(loss)?;
        let mut all = q1.gradients(&grads);
        all.extend(q2.gradients(&grads));
        let names: Vec<String> = critics.named_tensors().into_iter().map(|(n, _)| n).collect();
        let params = critics.tensors_mut();
        opt.step(names.iter().map(String::as_str).zip(params), &all)?;

        iterations = k;
        last_loss = value;
        if k == 1 {
            first_loss = value;
        }
        if value < alpha * first_loss {
            break;
        }
    }
    Ok(CriticLoopReport {
        iterations,
        first_loss,
        last_loss,
        alpha,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grac::AblationFlags;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
        Tensor::new(vec![rows, cols], (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    fn setup(seed: u64, n: usize) -> (Batch, TargetBundle, CriticParams) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let batch = Batch {
            states: random(&mut rng, n, 3),
            actions: random(&mut rng, n, 1),
            rewards: (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            next_states: random(&mut rng, n, 3),
            dones: vec![false; n],
        };
        let bundle = TargetBundle {
            y: (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect(),
            a_dagger: random(&mut rng, n, 1),
            y1_prime: (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            y2_prime: (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            picked_cem: vec![false; n],
        };
        (batch, bundle, CriticParams::new(3, 1, 16, &mut rng))
    }

    #[test]
    fn perfect_fit_has_zero_loss() {
        let (batch, mut bundle, _) = setup(1, 4);
        let zero = CriticParams::zeros(3, 1, 8);
        bundle.y = vec![0.0; 4];
        bundle.y1_prime = vec![0.0; 4];
        bundle.y2_prime = vec![0.0; 4];
        assert_eq!(critic_loss(&batch, &bundle, &zero, true).unwrap(), 0.0);
    }

    #[test]
    fn unregularized_loss_is_twin_td() {
        let (batch, bundle, critics) = setup(2, 5);
        let q1 = critics.q1.evaluate(&batch.states, &batch.actions).unwrap();
        let q2 = critics.q2.evaluate(&batch.states, &batch.actions).unwrap();
        let td: f64 = (0..5).map(|i| (bundle.y[i] - q1[i]).powi(2) + (bundle.y[i] - q2[i]).powi(2)).sum::<f64>() / 5.0;
        assert!((critic_loss(&batch, &bundle, &critics, false).unwrap() - td).abs() < 1e-12);

        let p1 = critics.q1.evaluate(&batch.next_states, &bundle.a_dagger).unwrap();
        let p2 = critics.q2.evaluate(&batch.next_states, &bundle.a_dagger).unwrap();
        let reg: f64 = (0..5)
            .map(|i| (bundle.y1_prime[i] - p1[i]).powi(2) + (bundle.y2_prime[i] - p2[i]).powi(2))
            .sum::<f64>()
            / 5.0;
        assert!((critic_loss(&batch, &bundle, &critics, true).unwrap() - td - reg).abs() < 1e-12);
    }

    #[test]
    fn regularizer_gradient_is_live() {
        // zero TD residual, nonzero residual at (s', a†): only the regularizer pulls
        let (batch, mut bundle, critics) = setup(3, 4);
        let q = critics.q1.evaluate(&batch.states, &batch.actions).unwrap();
        let q2 = critics.q2.evaluate(&batch.states, &batch.actions).unwrap();
        bundle.y = q.iter().zip(&q2).map(|(a, b)| 0.5 * (a + b)).collect();
        let grad_norm = |reg: bool| {
            let mut g = Graph::new();
            let b1 = critics.q1.bind(&mut g, true);
            let b2 = critics.q2.bind(&mut g, true);
            let loss = critic_loss_graph(&mut g, &b1, &b2, &batch, &bundle, reg).unwrap();
            let grads = g.backward(loss).unwrap();
            b1.gradients(&grads).iter().flat_map(|t| t.data().to_vec()).map(|x| x * x).sum::<f64>()
        };
        assert!(grad_norm(true) > grad_norm(false) + 1e-9);
    }

    fn loop_cfg(k: usize) -> GracConfig {
        GracConfig {
            critic_iters: k,
            lr_critic: 1e-2,
            ..GracConfig::default()
        }
    }

    #[test]
    fn single_iteration_bound() {
        let (batch, bundle, mut critics) = setup(4, 8);
        let mut opt = Adam::new(1e-2, critics.tensors());
        let r = critic_update_loop(&batch, &bundle, &mut critics, &mut opt, &loop_cfg(1), 0.99).unwrap();
        assert_eq!(r.iterations, 1);
        assert_eq!(r.first_loss, r.last_loss);
    }

    #[test]
    fn easy_target_stops_early() {
        let (batch, bundle, mut critics) = setup(5, 8);
        let mut opt = Adam::new(1e-2, critics.tensors());
        let r = critic_update_loop(&batch, &bundle, &mut critics, &mut opt, &loop_cfg(50), 0.99).unwrap();
        assert!(r.iterations < 50, "{r:?}");
        assert!(r.last_loss < 0.99 * r.first_loss);
    }

    #[test]
    fn tiny_alpha_runs_all_iterations() {
        let (batch, bundle, mut critics) = setup(6, 8);
        let mut opt = Adam::new(1e-5, critics.tensors());
        let r = critic_update_loop(&batch, &bundle, &mut critics, &mut opt, &loop_cfg(5), 1e-9).unwrap();
        assert_eq!(r.iterations, 5);
    }

    #[test]
    fn targets_stay_frozen() {
        let (batch, bundle, mut critics) = setup(7, 8);
        let before = bundle.clone();
        let mut opt = Adam::new(1e-2, critics.tensors());
        critic_update_loop(&batch, &bundle, &mut critics, &mut opt, &loop_cfg(10), 0.5).unwrap();
        assert_eq!(bundle, before);
    }

    #[test]
    fn non_finite_loss_is_an_error() {
        let (batch, mut bundle, mut critics) = setup(8, 4);
        bundle.y[0] = f64::INFINITY;
        let mut opt = Adam::new(1e-2, critics.tensors());
        let err = critic_update_loop(&batch, &bundle, &mut critics, &mut opt, &loop_cfg(3), 0.5).unwrap_err();
        assert!(matches!(err, Error::NonFinite { .. }));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn loop_respects_its_stopping_rule(seed in 0u64..1000, k in 1usize..12, alpha in 0.3f64..0.99, reg: bool) {
            let (batch, bundle, mut critics) = setup(seed, 6);
            let cfg = GracConfig {
                flags: AblationFlags { use_target_regularization: reg, ..AblationFlags::default() },
                ..loop_cfg(k)
            };
            let mut opt = Adam::new(cfg.lr_critic, critics.tensors());
            let r = critic_update_loop(&batch, &bundle, &mut critics, &mut opt, &cfg, alpha).unwrap();
            prop_assert!(r.iterations >= 1 && r.iterations <= k);
            if r.iterations < k {
                prop_assert!(r.last_loss < alpha * r.first_loss);
            }
        }
    }
}
