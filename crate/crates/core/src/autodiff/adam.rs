use crate::autodiff::tensor::Tensor;
use crate::error::{Error, Result};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// First/second moment estimates for one parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Tensor,
    pub v: Tensor,
    pub t: u64,
}

impl AdamState {
    pub fn new(shape: &[usize]) -> Self {
        Self {
            m: Tensor::zeros(shape),
            v: Tensor::zeros(shape),
            t: 0,
        }
    }
}

/// One bias-corrected Adam update of `param` in place.
pub fn adam_step(
    name: &str,
    param: &mut Tensor,
    grad: &Tensor,
    state: &mut AdamState,
    lr: f64,
) -> Result<()> {
    if param.shape() != grad.shape() || param.shape() != state.m.shape() {
        return Err(Error::Shape {
            op: "adam_step",
            left: param.shape().to_vec(),
            right: grad.shape().to_vec(),
        });
    }
    if !(lr > 0.0) {
        return Err(Error::InvalidArgument(format!("learning rate must be > 0, got {lr}")));
    }
    if !grad.is_finite() {
        return Err(Error::NonFinite {
            what: format!("gradient of {name}"),
        });
    }
    state.t += 1;
    let t = state.t as f64;
    let bc1 = 1.0 - BETA1.powf(t);
    let bc2 = 1.0 - BETA2.powf(t);
    let p = param.data_mut();
    let m = state.m.data_mut();
    let v = state.v.data_mut();
    for (((p, m), v), &g) in p.iter_mut().zip(m.iter_mut()).zip(v.iter_mut()).zip(grad.data()) {
        *m = BETA1 * *m + (1.0 - BETA1) * g;
        *v = BETA2 * *v + (1.0 - BETA2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p -= lr * m_hat / (v_hat.sqrt() + EPSILON);
    }
    Ok(())
}

/// Adam states for an ordered list of parameter tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    states: Vec<AdamState>,
}

impl Adam {
    pub fn new<'a>(lr: f64, params: impl IntoIterator<Item = &'a Tensor>) -> Self {
        Self {
            lr,
            states: params.into_iter().map(|p| AdamState::new(p.shape())).collect(),
        }
    }

    pub fn states(&self) -> &[AdamState] {
        &self.states
    }

    pub fn step<'a>(
        &mut self,
        params: impl IntoIterator<Item = (&'a str, &'a mut Tensor)>,
        grads: &[Tensor],
    ) -> Result<()> {
        let mut count = 0;
        for (((name, p), g), s) in params.into_iter().zip(grads).zip(self.states.iter_mut()) {
            adam_step(name, p, g, s, self.lr)?;
            count += 1;
        }
        if count != self.states.len() || count != grads.len() {
            return Err(Error::InvalidArgument(format!(
                "adam: {} states, {} grads, {count} params",
                self.states.len(),
                grads.len()
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = Tensor::vector(vec![1.0, -2.0]);
        let mut s = AdamState::new(&[2]);
        adam_step("p", &mut p, &Tensor::zeros(&[2]), &mut s, 1e-3).unwrap();
        assert_eq!(p.data(), &[1.0, -2.0]);
        assert_eq!(s.t, 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = Tensor::scalar(0.0);
        let mut s = AdamState::new(&[1]);
        adam_step("p", &mut p, &Tensor::scalar(1.0), &mut s, 1e-3).unwrap();
        // m̂ = 1, v̂ = 1 → Δ = -lr / (1 + ε)
        let expected = -1e-3 / (1.0 + EPSILON);
        assert!((p.item() - expected).abs() < 1e-15);
    }

    #[test]
    fn constant_gradient_descends() {
        let mut p = Tensor::vector(vec![0.0, 0.0]);
        let mut s = AdamState::new(&[2]);
        let g = Tensor::vector(vec![0.5, -3.0]);
        for _ in 0..100 {
            adam_step("p", &mut p, &g, &mut s, 1e-2).unwrap();
        }
        assert!(p.data()[0] < 0.0);
        assert!(p.data()[1] > 0.0);
        assert_eq!(s.t, 100);
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut p = Tensor::scalar(0.0);
        let mut s = AdamState::new(&[1]);
        let err = adam_step("critic.l1.w", &mut p, &Tensor::scalar(f64::NAN), &mut s, 1e-3)
            .unwrap_err();
        assert!(err.to_string().contains("critic.l1.w"));
        assert_eq!(s.t, 0);
    }
}
