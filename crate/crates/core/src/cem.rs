//! Cross-entropy search over a box-bounded action space.
//!
//! Each search starts from a diagonal Gaussian (usually the actor's
//! prediction), draws a population, keeps the top-scoring elites and refits
//! the Gaussian to them. Several independent searches can be run in lockstep
//! so their populations are scored with one batched call.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

pub const SIGMA_FLOOR: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CemConfig {
    pub n_pop: usize,
    pub n_elite: usize,
    pub n_iter: usize,
    /// Return the best elite seen in any iteration rather than only the final one.
    pub track_running_best: bool,
}

impl Default for CemConfig {
    fn default() -> Self {
        Self {
            n_pop: 256,
            n_elite: 5,
            n_iter: 2,
            track_running_best: true,
        }
    }
}

impl CemConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_elite == 0 || self.n_elite > self.n_pop || self.n_iter == 0 {
            return Err(Error::InvalidArgument(format!(
                "cem requires 1 <= n_elite <= n_pop and n_iter >= 1, got {self:?}"
            )));
        }
        Ok(())
    }
}

/// Proposal and last population of one search.
#[derive(Clone, Debug, PartialEq)]
pub struct CemState {
    pub mean: Vec<f64>,
    pub sigma: Vec<f64>,
    /// `n_pop × A`, row-major.
    pub population: Vec<f64>,
    pub scores: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CemOutcome {
    pub best_action: Vec<f64>,
    pub best_score: f64,
    /// Best elite score of each iteration.
    pub iteration_best: Vec<f64>,
    pub state: CemState,
}

/// Indices of the `k` best scores in descending order; ties keep population order.
fn top_k(scores: &[f64], k: usize) -> Vec<usize> {
    let cmp = |a: &usize, b: &usize| scores[*b].total_cmp(&scores[*a]).then(a.cmp(b));
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    if k < idx.len() {
        idx.select_nth_unstable_by(k, cmp);
        idx.truncate(k);
    }
    idx.sort_unstable_by(cmp);
    idx
}

/// Mean and population standard deviation of the `n_elite` best rows.
pub fn elite_refit(
    population: &[f64],
    action_dim: usize,
    scores: &[f64],
    n_elite: usize,
) -> (Vec<f64>, Vec<f64>) {
    let elites = top_k(scores, n_elite);
    let k = elites.len() as f64;
    let mut mean = vec![0.0; action_dim];
    for &e in &elites {
        for (m, x) in mean.iter_mut().zip(&population[e * action_dim..(e + 1) * action_dim]) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= k);
    let mut var = vec![0.0; action_dim];
    for &e in &elites {
        for ((v, m), x) in var
            .iter_mut()
            .zip(&mean)
            .zip(&population[e * action_dim..(e + 1) * action_dim])
        {
            *v += (x - m) * (x - m);
        }
    }
    let sigma = var.iter().map(|v| (v / k).sqrt().max(SIGMA_FLOOR)).collect();
    (mean, sigma)
}

/// Single search; `score` receives an `n_pop × A` tensor and returns one value per row.
pub fn cem_search<R, F>(
    score: F,
    init_mean: &[f64],
    init_sigma: &[f64],
    max_action: f64,
    cfg: &CemConfig,
    rng: &mut R,
) -> Result<CemOutcome>
where
    R: Rng + ?Sized,
    F: FnMut(&Tensor) -> Result<Vec<f64>>,
{
    let a = init_mean.len();
    let means = Tensor::new(vec![1, a], init_mean.to_vec())?;
    let sigmas = Tensor::new(vec![1, a], init_sigma.to_vec())?;
    let mut out = cem_search_batch(score, &means, &sigmas, max_action, cfg, rng)?;
    Ok(out.pop().expect("one search"))
}

/// `n` independent searches, one per row of `init_means`.
///
/// `score` receives an `(n · n_pop) × A` tensor laid out search-major (rows
/// `i·n_pop .. (i+1)·n_pop` belong to search `i`).
pub fn cem_search_batch<R, F>(
    mut score: F,
    init_means: &Tensor,
    init_sigmas: &Tensor,
    max_action: f64,
    cfg: &CemConfig,
    rng: &mut R,
) -> Result<Vec<CemOutcome>>
where
    R: Rng + ?Sized,
    F: FnMut(&Tensor) -> Result<Vec<f64>>,
{
    cfg.validate()?;
    let (n, a) = init_means.dims2();
    if init_sigmas.dims2() != (n, a) {
        return Err(Error::Shape {
            op: "cem_search",
            left: init_means.shape().to_vec(),
            right: init_sigmas.shape().to_vec(),
        });
    }
    if let Some(bad) = init_sigmas.data().iter().find(|s| !(**s > 0.0)) {
        return Err(Error::InvalidArgument(format!("cem init sigma must be > 0, got {bad}")));
    }
    let pop = cfg.n_pop;
    let mut states: Vec<CemState> = (0..n)
        .map(|i| CemState {
            mean: init_means.row(i).to_vec(),
            sigma: init_sigmas.row(i).iter().map(|s| s.max(SIGMA_FLOOR)).collect(),
            population: vec![0.0; pop * a],
            scores: vec![0.0; pop],
        })
        .collect();
    let mut best: Vec<(f64, Vec<f64>)> = vec![(f64::NEG_INFINITY, Vec::new()); n];
    let mut history: Vec<Vec<f64>> = vec![Vec::with_capacity(cfg.n_iter); n];

    let mut flat = vec![0.0; n * pop * a];
    for _ in 0..cfg.n_iter {
        for (i, st) in states.iter_mut().enumerate() {
            for p in 0..pop {
                for d in 0..a {
                    let z: f64 = rng.sample(StandardNormal);
                    let x = (st.mean[d] + st.sigma[d] * z).clamp(-max_action, max_action);
                    st.population[p * a + d] = x;
                }
            }
            flat[i * pop * a..(i + 1) * pop * a].copy_from_slice(&st.population);
        }
        let scores = score(&Tensor::new(vec![n * pop, a], flat.clone())?)?;
        if scores.len() != n * pop {
            return Err(Error::Shape {
                op: "cem_search scores",
                left: vec![n * pop],
                right: vec![scores.len()],
            });
        }
        for (i, st) in states.iter_mut().enumerate() {
            st.scores.copy_from_slice(&scores[i * pop..(i + 1) * pop]);
            if let Some(p) = st.scores.iter().position(|s| !s.is_finite()) {
                return Err(Error::NonFinite {
                    what: format!("cem score {} for action {:?}", st.scores[p], &st.population[p * a..(p + 1) * a]),
                });
            }
            let top = top_k(&st.scores, 1)[0];
            let top_score = st.scores[top];
            history[i].push(top_score);
            let replace = if cfg.track_running_best {
                top_score > best[i].0
            } else {
                true
            };
            if replace {
                best[i] = (top_score, st.population[top * a..(top + 1) * a].to_vec());
            }
            let (mean, sigma) = elite_refit(&st.population, a, &st.scores, cfg.n_elite);
            st.mean = mean;
            st.sigma = sigma;
        }
    }

    Ok(states
        .into_iter()
        .zip(best)
        .zip(history)
        .map(|((state, (best_score, best_action)), iteration_best)| CemOutcome {
            best_action,
            best_score,
            iteration_best,
            state,
        })
        .collect())
}
