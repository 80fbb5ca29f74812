use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::envs::Env;
use crate::error::{Error, Result};
use crate::networks::ActorParams;

/// Mean and population std of undiscounted returns under `max_action · tanh(mean)`.
///
/// Start states come from a generator seeded with `seed`, so repeated calls agree.
pub fn evaluate(actor: &ActorParams, env: &mut dyn Env, episodes: usize, seed: u64) -> Result<(f64, f64)> {
    if episodes == 0 {
        return Err(Error::InvalidArgument("evaluation needs at least one episode".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut returns = Vec::with_capacity(episodes);
    for _ in 0..episodes {
        let mut obs = env.reset(rng.gen());
        let mut total = 0.0;
        loop {
            let action = actor.act_deterministic(&obs)?;
            let out = env.step(&action)?;
            total += out.reward;
            if out.done || out.truncated {
                break;
            }
            obs = out.observation;
        }
        returns.push(total);
    }
    let n = returns.len() as f64;
    let mean = returns.iter().sum::<f64>() / n;
    let var = returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    Ok((mean, var.sqrt()))
}
