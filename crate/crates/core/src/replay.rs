//! Fixed-capacity uniform replay.

use rand::Rng;

use crate::autodiff::Tensor;
use crate::error::{ensure_finite, Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    /// Already multiplied by the reward scale.
    pub reward: f64,
    pub next_state: Vec<f64>,
    /// True termination only; time-limit truncation is stored as `false`.
    pub done: bool,
}

impl Transition {
    fn validate(&self) -> Result<()> {
        ensure_finite(&self.state, || "transition state".into())?;
        ensure_finite(&self.action, || "transition action".into())?;
        ensure_finite(&[self.reward], || "transition reward".into())?;
        ensure_finite(&self.next_state, || "transition next_state".into())
    }
}

/// Ring buffer; once full, each push overwrites the oldest entry.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    storage: Vec<Transition>,
    write_index: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            capacity,
            storage: Vec::with_capacity(capacity.min(1 << 16)),
            write_index: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.storage.len()
    }

    pub fn is_empty(&self) -> bool {
        self.storage.is_empty()
    }

    pub fn push(&mut self, t: Transition) -> Result<()> {
        t.validate()?;
        if self.storage.len() < self.capacity {
            self.storage.push(t);
        } else {
            self.storage[self.write_index] = t;
        }
        self.write_index = (self.write_index + 1) % self.capacity;
        Ok(())
    }

    /// Contents from oldest to newest.
    pub fn iter_ordered(&self) -> impl Iterator<Item = &Transition> {
        let split = if self.storage.len() < self.capacity { 0 } else { self.write_index };
        self.storage[split..].iter().chain(&self.storage[..split])
    }

    /// `n` draws, uniform with replacement.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<&Transition>> {
        if self.storage.is_empty() {
            return Err(Error::EmptyBuffer);
        }
        if n == 0 {
            return Err(Error::InvalidArgument("sample size must be >= 1".into()));
        }
        let len = self.storage.len();
        Ok((0..n).map(|_| &self.storage[rng.gen_range(0..len)]).collect())
    }

    pub fn sample_batch<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Batch> {
        Batch::from_transitions(&self.sample(n, rng)?)
    }
}

/// Column-major view of a sampled minibatch.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub states: Tensor,
    pub actions: Tensor,
    pub rewards: Vec<f64>,
    pub next_states: Tensor,
    pub dones: Vec<bool>,
}

impl Batch {
    pub fn from_transitions(ts: &[&Transition]) -> Result<Self> {
        let rows = |f: fn(&Transition) -> &[f64]| Tensor::from_rows(&ts.iter().map(|t| f(t)).collect::<Vec<_>>());
        Ok(Self {
            states: rows(|t| &t.state)?,
            actions: rows(|t| &t.action)?,
            rewards: ts.iter().map(|t| t.reward).collect(),
            next_states: rows(|t| &t.next_state)?,
            dones: ts.iter().map(|t| t.done).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tr(i: usize) -> Transition {
        Transition {
            state: vec![i as f64],
            action: vec![0.0],
            reward: i as f64,
            next_state: vec![i as f64 + 1.0],
            done: false,
        }
    }

    #[test]
    fn ring_evicts_oldest() {
        let mut b = ReplayBuffer::new(2);
        for i in 0..3 {
            b.push(tr(i)).unwrap();
        }
        assert_eq!(b.len(), 2);
        let rewards: Vec<f64> = b.iter_ordered().map(|t| t.reward).collect();
        assert_eq!(rewards, vec![1.0, 2.0]);
    }

    #[test]
    fn single_push() {
        let mut b = ReplayBuffer::new(5);
        b.push(tr(0)).unwrap();
        assert_eq!(b.len(), 1);
    }

    #[test]
    fn full_buffer_keeps_order() {
        let mut b = ReplayBuffer::new(10);
        for i in 0..10 {
            b.push(tr(i)).unwrap();
        }
        let got: Vec<Transition> = b.iter_ordered().cloned().collect();
        let want: Vec<Transition> = (0..10).map(tr).collect();
        assert_eq!(got, want);
    }

    #[test]
    fn rejects_non_finite() {
        let mut b = ReplayBuffer::new(2);
        let mut t = tr(0);
        t.reward = f64::NAN;
        assert!(matches!(b.push(t), Err(Error::NonFinite { .. })));
        assert!(b.is_empty());
    }

    #[test]
    fn empty_sample_errors() {
        let b = ReplayBuffer::new(2);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(b.sample(4, &mut rng), Err(Error::EmptyBuffer)));
    }

    #[test]
    fn single_element_repeats() {
        let mut b = ReplayBuffer::new(3);
        b.push(tr(7)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = b.sample(4, &mut rng).unwrap();
        assert_eq!(s.len(), 4);
        assert!(s.iter().all(|t| **t == tr(7)));
    }

    #[test]
    fn sampling_is_deterministic_under_seed() {
        let mut b = ReplayBuffer::new(50);
        for i in 0..50 {
            b.push(tr(i)).unwrap();
        }
        let a = b.sample_batch(16, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let c = b.sample_batch(16, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(a, c);
    }

    #[test]
    fn uniform_frequencies_within_three_sigma() {
        let mut b = ReplayBuffer::new(10);
        for i in 0..10 {
            b.push(tr(i)).unwrap();
        }
        let n = 100_000;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut counts = [0usize; 10];
        for t in b.sample(n, &mut rng).unwrap() {
            counts[t.reward as usize] += 1;
        }
        let p = 0.1;
        let sd = (n as f64 * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!((c as f64 - n as f64 * p).abs() < 3.0 * sd, "{counts:?}");
        }
        // chi-square with 9 dof, 99.9% quantile ≈ 27.88
        let chi2: f64 = counts
            .iter()
            .map(|&c| (c as f64 - n as f64 * p).powi(2) / (n as f64 * p))
            .sum();
        assert!(chi2 < 27.88, "{chi2}");
    }
}
