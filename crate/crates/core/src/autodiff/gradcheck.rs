use crate::autodiff::graph::{Graph, Var};
use crate::autodiff::tensor::Tensor;
use crate::error::{Error, Result};

/// Compares reverse-mode gradients against central differences.
///
/// `f` builds a scalar loss from one leaf per tensor in `params`. Returns the
/// maximum over all coordinates of
/// `|analytic − numeric| / max(1e-8, |analytic| + |numeric|)`.
pub fn grad_check_many<F>(f: F, params: &[Tensor], h: f64) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    if !(h > 0.0) {
        return Err(Error::InvalidArgument(format!("step h must be > 0, got {h}")));
    }
    let eval = |values: &[Tensor], trainable: bool| -> Result<(Graph, Vec<Var>, Var)> {
        let mut g = Graph::new();
        let vars: Vec<Var> = values
            .iter()
            .map(|t| if trainable { g.param(t.clone()) } else { g.constant(t.clone()) })
            .collect();
        let loss = f(&mut g, &vars)?;
        let out = g.value(loss);
        if out.len() != 1 {
            return Err(Error::NonScalarLoss(out.shape().to_vec()));
        }
        if !out.item().is_finite() {
            return Err(Error::NonFinite {
                what: "grad_check objective".into(),
            });
        }
        Ok((g, vars, loss))
    };

    let (g, vars, loss) = eval(params, true)?;
    let grads = g.backward(loss)?;
    let mut worst = 0.0f64;
    let mut probe = params.to_vec();
    for (pi, var) in vars.iter().enumerate() {
        let analytic = grads.get(*var);
        for i in 0..params[pi].len() {
            let orig = params[pi].data()[i];
            probe[pi].data_mut()[i] = orig + h;
            let (gp, _, lp) = eval(&probe, false)?;
            let up = gp.value(lp).item();
            probe[pi].data_mut()[i] = orig - h;
            let (gm, _, lm) = eval(&probe, false)?;
            let down = gm.value(lm).item();
            probe[pi].data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic.data()[i];
            let rel = (a - numeric).abs() / f64::max(1e-8, a.abs() + numeric.abs());
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}

/// Single-tensor form of [`grad_check_many`].
pub fn grad_check<F>(f: F, params: &Tensor, h: f64) -> Result<f64>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    grad_check_many(|g, vars| f(g, vars[0]), std::slice::from_ref(params), h)
}
