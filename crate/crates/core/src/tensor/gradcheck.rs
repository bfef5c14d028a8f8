//! Central finite-difference checks of autodiff gradients.

use super::{Graph, Tensor, Var};
use crate::error::Result;

/// Denominator floor for relative errors; gradients smaller than this are
/// compared on an absolute scale, where finite-difference round-off
/// (about `eps·|f|/h`) dominates any real discrepancy.
pub const REL_ERROR_FLOOR: f64 = 1e-4;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub name: String,
    pub max_rel_error: f64,
    pub checked: usize,
}

impl std::fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{:<28} max_rel_error={:.3e} (entries={})",
            self.name, self.max_rel_error, self.checked
        )
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

/// Compares `∂f/∂inputs` from [`Graph::backward`] with central differences,
/// step `h = 1e-6·(1+|x|)`. `f` must build a scalar loss from leaf vars bound
/// to `inputs` (in order).
pub fn check<F>(name: &str, inputs: &[Tensor], f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let eval = |ts: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = ts.iter().map(|t| g.constant(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        Ok(g.value(out).item())
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let loss = f(&mut g, &vars)?;
    let grads = g.backward(loss)?;

    let mut work = inputs.to_vec();
    let mut max_err: f64 = 0.0;
    let mut checked = 0;
    for (ti, &v) in vars.iter().enumerate() {
        let analytic = grads.get(&g, v);
        for j in 0..inputs[ti].numel() {
            let x0 = inputs[ti].data()[j];
            let h = 1e-6 * (1.0 + x0.abs());
            work[ti].data_mut()[j] = x0 + h;
            let fp = eval(&work)?;
            work[ti].data_mut()[j] = x0 - h;
            let fm = eval(&work)?;
            work[ti].data_mut()[j] = x0;
            let numeric = (fp - fm) / (2.0 * h);
            max_err = max_err.max(relative_error(analytic.data()[j], numeric));
            checked += 1;
        }
    }
    Ok(GradCheckReport {
        name: name.to_string(),
        max_rel_error: max_err,
        checked,
    })
}

/// Reduces any tensor to a scalar through a fixed random weighting so that
/// every output entry contributes a distinct sensitivity.
pub fn weighted_sum(g: &mut Graph, v: Var, weights: &Tensor) -> Result<Var> {
    let n = g.value(v).numel();
    let flat = g.reshape(v, vec![1, n])?;
    let w = g.constant(weights.clone().reshaped(vec![n, 1])?);
    let dotted = g.matmul(flat, w)?;
    Ok(g.sum(dotted))
}
