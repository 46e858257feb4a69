//! Central finite-difference gradient checking in 64-bit precision.

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

/// Outcome of [`grad_check`].
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// Largest relative error per parameter, in input order.
    pub max_rel_error: Vec<f64>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn worst(&self) -> f64 {
        self.max_rel_error.iter().copied().fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_rel_error.iter().all(|&e| e < self.tolerance)
    }
}

/// Relative error between an analytic and a numeric derivative.
///
/// The denominator is floored at `1e-3` so derivatives that are zero up to
/// rounding are compared absolutely.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-3)
}

/// Compares the tape's gradients of `f` against central differences with
/// step `eps`, perturbing every element of every parameter.
///
/// `f` receives the graph and one leaf per parameter and must return a
/// scalar node. It is called once per perturbation, so any randomness it
/// uses has to be fixed up front.
pub fn grad_check<F>(f: F, params: &[Tensor<f64>], eps: f64, tolerance: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Tensor<f64>]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = values.iter().map(|t| g.constant(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        Ok(g.value(out).data()[0])
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|t| g.param(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    let grads = g.backward(out)?;

    let mut values = params.to_vec();
    let mut max_rel_error = Vec::with_capacity(params.len());
    for (p, &var) in vars.iter().enumerate() {
        let analytic = grads.wrt(var);
        let mut worst: f64 = 0.0;
        for i in 0..params[p].len() {
            let orig = values[p].data()[i];
            values[p].data_mut()[i] = orig + eps;
            let up = eval(&values)?;
            values[p].data_mut()[i] = orig - eps;
            let down = eval(&values)?;
            values[p].data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * eps);
            worst = worst.max(relative_error(analytic.data()[i], numeric));
        }
        max_rel_error.push(worst);
    }
    Ok(GradCheckReport {
        max_rel_error,
        tolerance,
    })
}
