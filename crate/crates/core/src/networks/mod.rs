//! Tanh-squashed Gaussian actor and twin Q critics.

mod checkpoint;

pub use checkpoint::{load_checkpoint, save_checkpoint};

use rand::Rng;

use crate::autodiff::{gemm, Gradients, Graph, Tensor, Var};
use crate::error::{Error, Result};

pub const DEFAULT_HIDDEN: usize = 256;
pub const LOG_SIGMA_MIN: f64 = -20.0;
pub const LOG_SIGMA_MAX: f64 = 2.0;
/// Margin used when inverting the squash for actions on the box boundary.
pub const ATANH_CLAMP: f64 = 1e-6;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// A parameter set that can be bound into a graph and updated in place.
pub trait Parameters {
    fn named_tensors(&self) -> Vec<(String, &Tensor)>;
    fn tensors_mut(&mut self) -> Vec<&mut Tensor>;

    fn tensors(&self) -> Vec<&Tensor> {
        self.named_tensors().into_iter().map(|(_, t)| t).collect()
    }

    fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Overwrites every tensor from `source` by name.
    fn load_named(&mut self, source: &[(String, Tensor)]) -> Result<()> {
        let names: Vec<String> = self.named_tensors().into_iter().map(|(n, _)| n).collect();
        let targets = self.tensors_mut();
        for (name, target) in names.iter().zip(targets) {
            let (_, t) = source
                .iter()
                .find(|(n, _)| n == name)
                .ok_or_else(|| Error::InvalidArgument(format!("missing tensor {name}")))?;
            if t.shape() != target.shape() {
                return Err(Error::Shape {
                    op: "load_named",
                    left: target.shape().to_vec(),
                    right: t.shape().to_vec(),
                });
            }
            *target = t.clone();
        }
        Ok(())
    }
}

/// Dense layer `y = x W + b` with `W: in × out`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    /// Uniform init in `[-1/√fan_in, 1/√fan_in]`.
    pub fn init<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.gen_range(-bound..=bound)).collect() };
        let weight = Tensor::new(vec![fan_in, fan_out], draw(fan_in * fan_out)).expect("shape");
        let bias = Tensor::vector(draw(fan_out));
        Self { weight, bias }
    }

    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            weight: Tensor::zeros(&[fan_in, fan_out]),
            bias: Tensor::zeros(&[fan_out]),
        }
    }

    /// `x W + b` (optionally followed by ReLU) on raw row-major data, outside any graph.
    fn apply(&self, x: &[f64], rows: usize, relu: bool) -> Vec<f64> {
        let (k, n) = self.weight.dims2();
        let mut out = vec![0.0; rows * n];
        gemm(x, false, self.weight.data(), false, rows, k, n, &mut out);
        let b = self.bias.data();
        for chunk in out.chunks_mut(n) {
            for (v, bias) in chunk.iter_mut().zip(b) {
                *v += bias;
                if relu {
                    *v = v.max(0.0);
                }
            }
        }
        out
    }

    fn bind(&self, g: &mut Graph, trainable: bool) -> BoundLinear {
        let leaf = |g: &mut Graph, t: &Tensor| if trainable { g.param(t.clone()) } else { g.constant(t.clone()) };
        BoundLinear {
            weight: leaf(g, &self.weight),
            bias: leaf(g, &self.bias),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct BoundLinear {
    pub weight: Var,
    pub bias: Var,
}

impl BoundLinear {
    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let xw = g.matmul(x, self.weight)?;
        g.add_row(xw, self.bias)
    }

    fn vars(&self) -> [Var; 2] {
        [self.weight, self.bias]
    }
}

fn check_input(what: &'static str, t: &Tensor, expected_cols: usize) -> Result<()> {
    if t.shape().len() > 2 || t.cols() != expected_cols {
        return Err(Error::Shape {
            op: what,
            left: t.shape().to_vec(),
            right: vec![expected_cols],
        });
    }
    Ok(())
}

fn as_matrix(t: &Tensor) -> Tensor {
    let (r, c) = t.dims2();
    t.clone().reshape(vec![r, c]).expect("same size")
}

// ---------------------------------------------------------------------------
// Actor

#[derive(Clone, Debug, PartialEq)]
pub struct ActorParams {
    pub l1: Linear,
    pub l2: Linear,
    pub mean_head: Linear,
    pub log_sigma_head: Linear,
    pub max_action: f64,
}

impl ActorParams {
    pub fn new<R: Rng + ?Sized>(
        state_dim: usize,
        action_dim: usize,
        hidden: usize,
        max_action: f64,
        rng: &mut R,
    ) -> Self {
        Self {
            l1: Linear::init(state_dim, hidden, rng),
            l2: Linear::init(hidden, hidden, rng),
            mean_head: Linear::init(hidden, action_dim, rng),
            log_sigma_head: Linear::init(hidden, action_dim, rng),
            max_action,
        }
    }

    pub fn zeros(state_dim: usize, action_dim: usize, hidden: usize, max_action: f64) -> Self {
        Self {
            l1: Linear::zeros(state_dim, hidden),
            l2: Linear::zeros(hidden, hidden),
            mean_head: Linear::zeros(hidden, action_dim),
            log_sigma_head: Linear::zeros(hidden, action_dim),
            max_action,
        }
    }

    pub fn state_dim(&self) -> usize {
        self.l1.weight.rows()
    }

    pub fn action_dim(&self) -> usize {
        self.mean_head.weight.cols()
    }

    pub fn bind(&self, g: &mut Graph, trainable: bool) -> BoundActor {
        BoundActor {
            l1: self.l1.bind(g, trainable),
            l2: self.l2.bind(g, trainable),
            mean_head: self.mean_head.bind(g, trainable),
            log_sigma_head: self.log_sigma_head.bind(g, trainable),
            state_dim: self.state_dim(),
            max_action: self.max_action,
        }
    }

    /// Pre-squash `(mean, sigma)` for a batch of states, without recording gradients.
    pub fn predict(&self, states: &Tensor) -> Result<(Tensor, Tensor)> {
        let x = as_matrix(states);
        check_input("actor_forward", &x, self.state_dim())?;
        let b = x.rows();
        let h = self.l1.apply(x.data(), b, true);
        let h = self.l2.apply(&h, b, true);
        let a = self.action_dim();
        let mean = self.mean_head.apply(&h, b, false);
        let sigma = self
            .log_sigma_head
            .apply(&h, b, false)
            .into_iter()
            .map(|l| l.clamp(LOG_SIGMA_MIN, LOG_SIGMA_MAX).exp())
            .collect();
        Ok((Tensor::new(vec![b, a], mean)?, Tensor::new(vec![b, a], sigma)?))
    }

    /// Deterministic action `max_action · tanh(mean)` used at evaluation time.
    pub fn act_deterministic(&self, state: &[f64]) -> Result<Vec<f64>> {
        let (mean, _) = self.predict(&Tensor::vector(state.to_vec()))?;
        Ok(mean.data().iter().map(|m| self.max_action * m.tanh()).collect())
    }
}

impl Parameters for ActorParams {
    fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (name, l) in [
            ("actor.l1", &self.l1),
            ("actor.l2", &self.l2),
            ("actor.mean", &self.mean_head),
            ("actor.log_sigma", &self.log_sigma_head),
        ] {
            out.push((format!("{name}.weight"), &l.weight));
            out.push((format!("{name}.bias"), &l.bias));
        }
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for l in [&mut self.l1, &mut self.l2, &mut self.mean_head, &mut self.log_sigma_head] {
            out.push(&mut l.weight);
            out.push(&mut l.bias);
        }
        out
    }
}

#[derive(Clone, Copy, Debug)]
pub struct BoundActor {
    pub l1: BoundLinear,
    pub l2: BoundLinear,
    pub mean_head: BoundLinear,
    pub log_sigma_head: BoundLinear,
    pub state_dim: usize,
    pub max_action: f64,
}

impl BoundActor {
    /// Rebuilds a bound actor from leaf vars ordered as [`BoundActor::vars`].
    pub fn from_vars(vars: &[Var], state_dim: usize, max_action: f64) -> Self {
        let l = |i: usize| BoundLinear {
            weight: vars[2 * i],
            bias: vars[2 * i + 1],
        };
        Self {
            l1: l(0),
            l2: l(1),
            mean_head: l(2),
            log_sigma_head: l(3),
            state_dim,
            max_action,
        }
    }

    /// Leaf vars in the same order as [`Parameters::tensors_mut`].
    pub fn vars(&self) -> Vec<Var> {
        [self.l1, self.l2, self.mean_head, self.log_sigma_head]
            .iter()
            .flat_map(|l| l.vars())
            .collect()
    }

    pub fn gradients(&self, grads: &Gradients) -> Vec<Tensor> {
        self.vars().into_iter().map(|v| grads.get(v)).collect()
    }
}

/// Graph outputs of the actor for a batch of states.
#[derive(Clone, Copy, Debug)]
pub struct ActorOutput {
    pub mean: Var,
    /// Clamped to `[LOG_SIGMA_MIN, LOG_SIGMA_MAX]`.
    pub log_sigma: Var,
    pub sigma: Var,
}

pub fn actor_forward(g: &mut Graph, actor: &BoundActor, states: Var) -> Result<ActorOutput> {
    check_input("actor_forward", g.value(states), actor.state_dim)?;
    let h = actor.l1.forward(g, states)?;
    let h = g.relu(h);
    let h = actor.l2.forward(g, h)?;
    let h = g.relu(h);
    let mean = actor.mean_head.forward(g, h)?;
    let raw = actor.log_sigma_head.forward(g, h)?;
    let log_sigma = g.clamp(raw, LOG_SIGMA_MIN, LOG_SIGMA_MAX);
    let sigma = g.exp(log_sigma);
    Ok(ActorOutput {
        mean,
        log_sigma,
        sigma,
    })
}

/// Per-element `-log(max_action · (1 - tanh²(u)))`, built so that large |u| stays finite.
fn squash_correction(g: &mut Graph, u: Var, max_action: f64) -> Var {
    // log(1 - tanh²u) = 2 (ln 2 - u - softplus(-2u))
    let neg2u = g.scale(u, -2.0);
    let sp = g.softplus(neg2u);
    let two_sp = g.scale(sp, 2.0);
    let two_u = g.scale(u, 2.0);
    let s = g.add(two_u, two_sp).expect("same shape");
    g.add_scalar(s, -(max_action.ln() + 2.0 * std::f64::consts::LN_2))
}

/// Reparameterized sample `max_action · tanh(mean + sigma · noise)` and its log-density.
///
/// Returns `(action [B, A], log_prob [B, 1])`.
pub fn sample_action(
    g: &mut Graph,
    out: &ActorOutput,
    noise: &Tensor,
    max_action: f64,
) -> Result<(Var, Var)> {
    let (b, a) = g.value(out.mean).dims2();
    if noise.len() != b * a {
        return Err(Error::Shape {
            op: "sample_action",
            left: vec![b, a],
            right: noise.shape().to_vec(),
        });
    }
    let eps = g.constant(noise.clone().reshape(vec![b, a])?);
    let scaled = g.mul(out.sigma, eps)?;
    let u = g.add(out.mean, scaled)?;
    let t = g.tanh(u);
    let action = g.scale(t, max_action);

    // Gaussian term: -ε²/2 - log σ - ½ log 2π
    let half_eps_sq = Tensor::new(vec![b, a], noise.data().iter().map(|e| -0.5 * e * e - HALF_LN_2PI).collect())?;
    let gauss_const = g.constant(half_eps_sq);
    let gauss = g.sub(gauss_const, out.log_sigma)?;
    let corr = squash_correction(g, u, max_action);
    let per_dim = g.add(gauss, corr)?;
    let log_prob = g.sum_cols(per_dim)?;
    Ok((action, log_prob))
}

/// Inverts the squash: `atanh(clamp(a / max_action, ±(1 - 1e-6)))`.
pub fn unsquash(action: f64, max_action: f64) -> f64 {
    let y = (action / max_action).clamp(-1.0 + ATANH_CLAMP, 1.0 - ATANH_CLAMP);
    y.atanh()
}

/// Log-density under the squashed policy of externally supplied actions `[B, A]`.
///
/// Differentiable in the actor outputs only.
pub fn log_prob_of(g: &mut Graph, out: &ActorOutput, actions: &Tensor, max_action: f64) -> Result<Var> {
    let (b, a) = g.value(out.mean).dims2();
    if actions.len() != b * a {
        return Err(Error::Shape {
            op: "log_prob_of",
            left: vec![b, a],
            right: actions.shape().to_vec(),
        });
    }
    let u_vals: Vec<f64> = actions.data().iter().map(|&x| unsquash(x, max_action)).collect();
    let u = g.constant(Tensor::new(vec![b, a], u_vals)?);
    let diff = g.sub(u, out.mean)?;
    let neg_ls = g.neg(out.log_sigma);
    let inv_sigma = g.exp(neg_ls);
    let z = g.mul(diff, inv_sigma)?;
    let z2 = g.square(z);
    let half = g.scale(z2, -0.5);
    let gauss = g.sub(half, out.log_sigma)?;
    let gauss = g.add_scalar(gauss, -HALF_LN_2PI);
    let corr = squash_correction(g, u, max_action);
    let per_dim = g.add(gauss, corr)?;
    g.sum_cols(per_dim)
}

// ---------------------------------------------------------------------------
// Critics

/// `concat(state, action) → relu → relu → scalar`.
#[derive(Clone, Debug, PartialEq)]
pub struct QNetwork {
    pub l1: Linear,
    pub l2: Linear,
    pub l3: Linear,
}

impl QNetwork {
    pub fn new<R: Rng + ?Sized>(state_dim: usize, action_dim: usize, hidden: usize, rng: &mut R) -> Self {
        Self {
            l1: Linear::init(state_dim + action_dim, hidden, rng),
            l2: Linear::init(hidden, hidden, rng),
            l3: Linear::init(hidden, 1, rng),
        }
    }

    pub fn zeros(state_dim: usize, action_dim: usize, hidden: usize) -> Self {
        Self {
            l1: Linear::zeros(state_dim + action_dim, hidden),
            l2: Linear::zeros(hidden, hidden),
            l3: Linear::zeros(hidden, 1),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.l1.weight.rows()
    }

    pub fn bind(&self, g: &mut Graph, trainable: bool) -> BoundQ {
        BoundQ {
            l1: self.l1.bind(g, trainable),
            l2: self.l2.bind(g, trainable),
            l3: self.l3.bind(g, trainable),
            input_dim: self.input_dim(),
        }
    }

    /// Q values for a batch, without recording gradients.
    pub fn evaluate(&self, states: &Tensor, actions: &Tensor) -> Result<Vec<f64>> {
        let (b, sd) = states.dims2();
        let (ba, ad) = actions.dims2();
        if b != ba || sd + ad != self.input_dim() {
            return Err(Error::Shape {
                op: "QNetwork::evaluate",
                left: states.shape().to_vec(),
                right: actions.shape().to_vec(),
            });
        }
        let mut x = Vec::with_capacity(b * (sd + ad));
        for i in 0..b {
            x.extend_from_slice(states.row(i));
            x.extend_from_slice(actions.row(i));
        }
        let h = self.l1.apply(&x, b, true);
        let h = self.l2.apply(&h, b, true);
        Ok(self.l3.apply(&h, b, false))
    }

    fn named(&self, prefix: &str) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (name, l) in [("l1", &self.l1), ("l2", &self.l2), ("l3", &self.l3)] {
            out.push((format!("{prefix}.{name}.weight"), &l.weight));
            out.push((format!("{prefix}.{name}.bias"), &l.bias));
        }
        out
    }

    fn tensors_mut_inner(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for l in [&mut self.l1, &mut self.l2, &mut self.l3] {
            out.push(&mut l.weight);
            out.push(&mut l.bias);
        }
        out
    }
}

impl Parameters for QNetwork {
    fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        self.named("q")
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.tensors_mut_inner()
    }
}

#[derive(Clone, Copy, Debug)]
pub struct BoundQ {
    pub l1: BoundLinear,
    pub l2: BoundLinear,
    pub l3: BoundLinear,
    pub input_dim: usize,
}

impl BoundQ {
    /// Rebuilds a bound critic from leaf vars ordered as [`BoundQ::vars`].
    pub fn from_vars(vars: &[Var], input_dim: usize) -> Self {
        let l = |i: usize| BoundLinear {
            weight: vars[2 * i],
            bias: vars[2 * i + 1],
        };
        Self {
            l1: l(0),
            l2: l(1),
            l3: l(2),
            input_dim,
        }
    }

    pub fn vars(&self) -> Vec<Var> {
        [self.l1, self.l2, self.l3].iter().flat_map(|l| l.vars()).collect()
    }

    pub fn gradients(&self, grads: &Gradients) -> Vec<Tensor> {
        self.vars().into_iter().map(|v| grads.get(v)).collect()
    }
}

/// `Q(s, a)` for a batch: `[B, S] × [B, A] → [B, 1]`.
pub fn critic_forward(g: &mut Graph, q: &BoundQ, states: Var, actions: Var) -> Result<Var> {
    let x = g.concat_cols(states, actions)?;
    check_input("critic_forward", g.value(x), q.input_dim)?;
    let h = q.l1.forward(g, x)?;
    let h = g.relu(h);
    let h = q.l2.forward(g, h)?;
    let h = g.relu(h);
    q.l3.forward(g, h)
}

/// Twin critics `θ1`, `θ2`, initialized from independent draws.
#[derive(Clone, Debug, PartialEq)]
pub struct CriticParams {
    pub q1: QNetwork,
    pub q2: QNetwork,
}

impl CriticParams {
    pub fn new<R: Rng + ?Sized>(state_dim: usize, action_dim: usize, hidden: usize, rng: &mut R) -> Self {
        Self {
            q1: QNetwork::new(state_dim, action_dim, hidden, rng),
            q2: QNetwork::new(state_dim, action_dim, hidden, rng),
        }
    }

    pub fn zeros(state_dim: usize, action_dim: usize, hidden: usize) -> Self {
        Self {
            q1: QNetwork::zeros(state_dim, action_dim, hidden),
            q2: QNetwork::zeros(state_dim, action_dim, hidden),
        }
    }

    /// Polyak averaging `self ← τ·source + (1 − τ)·self`.
    pub fn soft_update_from(&mut self, source: &CriticParams, tau: f64) {
        let src = source.tensors();
        for (dst, s) in self.tensors_mut().into_iter().zip(src) {
            for (d, &x) in dst.data_mut().iter_mut().zip(s.data()) {
                *d = tau * x + (1.0 - tau) * *d;
            }
        }
    }
}

impl Parameters for CriticParams {
    fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = self.q1.named("critic.q1");
        out.extend(self.q2.named("critic.q2"));
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = self.q1.tensors_mut_inner();
        out.extend(self.q2.tensors_mut_inner());
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::grad_check_many;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_actor_outputs_unit_sigma() {
        let actor = ActorParams::zeros(3, 2, 8, 1.0);
        let (mean, sigma) = actor.predict(&Tensor::vector(vec![0.4, -1.0, 2.0])).unwrap();
        assert_eq!(mean.data(), &[0.0, 0.0]);
        assert_eq!(sigma.data(), &[1.0, 1.0]);
    }

    #[test]
    fn actor_batch_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let actor = ActorParams::new(3, 2, 16, 1.0, &mut rng);
        let states = Tensor::full(&[5, 3], 0.2);
        let (mean, sigma) = actor.predict(&states).unwrap();
        assert_eq!(mean.shape(), &[5, 2]);
        assert_eq!(sigma.shape(), &[5, 2]);
        assert!(sigma.data().iter().all(|&s| s > 0.0));
    }

    #[test]
    fn actor_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let actor = ActorParams::new(3, 1, 16, 2.0, &mut rng);
        let s = Tensor::vector(vec![0.1, 0.2, 0.3]);
        assert_eq!(actor.predict(&s).unwrap(), actor.predict(&s).unwrap());
    }

    #[test]
    fn actor_rejects_wrong_state_dim() {
        let actor = ActorParams::zeros(3, 1, 4, 1.0);
        assert!(actor.predict(&Tensor::vector(vec![0.0; 2])).is_err());
    }

    #[test]
    fn zero_noise_zero_mean_gives_zero_action() {
        let actor = ActorParams::zeros(2, 2, 4, 1.5);
        let mut g = Graph::new();
        let b = actor.bind(&mut g, true);
        let s = g.constant(Tensor::zeros(&[1, 2]));
        let out = actor_forward(&mut g, &b, s).unwrap();
        let (a, _) = sample_action(&mut g, &out, &Tensor::zeros(&[1, 2]), 1.5).unwrap();
        assert_eq!(g.value(a).data(), &[0.0, 0.0]);
    }

    #[test]
    fn reparameterization_gradient_at_origin_is_max_action() {
        // d action / d mean at mean = 0, noise = 0 is max_action · tanh'(0).
        let max_action = 2.0;
        let mut g = Graph::new();
        let mean = g.param(Tensor::zeros(&[1, 1]));
        let log_sigma = g.constant(Tensor::zeros(&[1, 1]));
        let sigma = g.exp(log_sigma);
        let out = ActorOutput { mean, log_sigma, sigma };
        let (a, _) = sample_action(&mut g, &out, &Tensor::zeros(&[1, 1]), max_action).unwrap();
        let s = g.sum(a);
        let grads = g.backward(s).unwrap();
        assert!((grads.get(mean).item() - max_action).abs() < 1e-12);
        // and a numerical check of the same derivative
        let h: f64 = 1e-6;
        let numeric = (max_action * h.tanh() - max_action * (-h).tanh()) / (2.0 * h);
        assert!((numeric - max_action).abs() < 1e-6);
    }

    #[test]
    fn sampled_log_prob_matches_direct_density() {
        let (m, ls, eps, max_a) = (0.3, -0.4_f64, 0.7, 2.0);
        let mut g = Graph::new();
        let mean = g.constant(Tensor::full(&[1, 1], m));
        let log_sigma = g.constant(Tensor::full(&[1, 1], ls));
        let sigma = g.exp(log_sigma);
        let out = ActorOutput { mean, log_sigma, sigma };
        let (a, lp) = sample_action(&mut g, &out, &Tensor::full(&[1, 1], eps), max_a).unwrap();
        let acts = g.value(a).clone();
        let lp_again = log_prob_of(&mut g, &out, &acts, max_a).unwrap();
        let u: f64 = m + ls.exp() * eps;
        let action = max_a * u.tanh();
        let expected = -0.5 * eps * eps - ls - HALF_LN_2PI - (max_a * (1.0 - u.tanh().powi(2))).ln();
        assert!((g.value(a).item() - action).abs() < 1e-14);
        assert!((g.value(lp).item() - expected).abs() < 1e-12);
        assert!((g.value(lp_again).item() - expected).abs() < 1e-9);
    }

    fn random_states(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
        Tensor::new(vec![rows, cols], (0..rows * cols).map(|_| rng.gen_range(-2.0..2.0)).collect()).unwrap()
    }

    #[test]
    fn predict_matches_graph_forward() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let actor = ActorParams::new(4, 2, 16, 1.5, &mut rng);
        let states = random_states(&mut rng, 7, 4);
        let (mean, sigma) = actor.predict(&states).unwrap();
        let mut g = Graph::new();
        let bound = actor.bind(&mut g, false);
        let s = g.constant(states);
        let out = actor_forward(&mut g, &bound, s).unwrap();
        assert_eq!(g.value(out.mean).data(), mean.data());
        assert_eq!(g.value(out.sigma).data(), sigma.data());
    }

    #[test]
    fn evaluate_matches_graph_forward() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let q = QNetwork::new(3, 2, 16, &mut rng);
        let states = random_states(&mut rng, 9, 3);
        let actions = random_states(&mut rng, 9, 2);
        let direct = q.evaluate(&states, &actions).unwrap();
        let mut g = Graph::new();
        let bound = q.bind(&mut g, false);
        let (s, a) = (g.constant(states), g.constant(actions));
        let out = critic_forward(&mut g, &bound, s, a).unwrap();
        assert_eq!(g.value(out).data(), &direct[..]);
    }

    #[test]
    fn evaluate_rejects_mismatched_batches() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let q = QNetwork::new(3, 2, 8, &mut rng);
        assert!(q.evaluate(&Tensor::full(&[4, 3], 0.0), &Tensor::full(&[3, 2], 0.0)).is_err());
        assert!(q.evaluate(&Tensor::full(&[4, 3], 0.0), &Tensor::full(&[4, 1], 0.0)).is_err());
    }

    #[test]
    fn zero_critic_outputs_zero() {
        let q = QNetwork::zeros(3, 2, 8);
        let v = q.evaluate(&Tensor::full(&[4, 3], 1.0), &Tensor::full(&[4, 2], -0.5)).unwrap();
        assert_eq!(v, vec![0.0; 4]);
    }

    #[test]
    fn critic_batch_shape_and_dim_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let q = QNetwork::new(3, 1, 8, &mut rng);
        let mut g = Graph::new();
        let b = q.bind(&mut g, false);
        let s = g.constant(Tensor::zeros(&[6, 3]));
        let a = g.constant(Tensor::zeros(&[6, 1]));
        let out = critic_forward(&mut g, &b, s, a).unwrap();
        assert_eq!(g.value(out).shape(), &[6, 1]);
        assert!(q.evaluate(&Tensor::zeros(&[2, 2]), &Tensor::zeros(&[2, 1])).is_err());
    }

    #[test]
    fn twin_critics_differ_after_init() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let c = CriticParams::new(3, 1, 8, &mut rng);
        assert_ne!(c.q1, c.q2);
    }

    #[test]
    fn critic_action_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let q = QNetwork::new(3, 2, 16, &mut rng);
        let states = Tensor::from_rows(&[[0.1, -0.3, 0.8], [1.0, 0.2, -0.5]]).unwrap();
        let actions = Tensor::from_rows(&[[0.25, -0.6], [0.9, 0.05]]).unwrap();
        let err = grad_check_many(
            |g, vars| {
                let b = q.bind(g, false);
                let s = g.constant(states.clone());
                let out = critic_forward(g, &b, s, vars[0])?;
                Ok(g.sum(out))
            },
            &[actions],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn soft_update_interpolates() {
        let mut a = CriticParams::zeros(1, 1, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let b = CriticParams::new(1, 1, 2, &mut rng);
        a.soft_update_from(&b, 0.25);
        let (ta, tb) = (a.tensors(), b.tensors());
        for (x, y) in ta.iter().zip(tb) {
            for (u, v) in x.data().iter().zip(y.data()) {
                assert!((u - 0.25 * v).abs() < 1e-15);
            }
        }
    }
}
