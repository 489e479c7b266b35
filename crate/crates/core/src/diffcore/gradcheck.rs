use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Relative error with a small absolute floor so that near-zero gradients
/// are compared absolutely.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Worst elementwise relative error between the reverse-mode gradient of a
/// scalar function and central differences `(f(x+h) − f(x−h)) / 2h`.
///
/// `f` receives a fresh graph and a differentiable leaf holding `x` and must
/// return a single-element node.
pub fn finite_difference_check<F>(f: F, x: &Tensor, h: f64) -> Result<f64>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    if h <= 0.0 {
        return Err(Error::Config(format!("step h must be positive, got {h}")));
    }
    let eval = |t: &Tensor| -> Result<f64> {
        let mut g = Graph::new();
        let v = g.input(t.clone());
        let out = f(&mut g, v)?;
        Ok(g.scalar_value(out))
    };

    let mut g = Graph::new();
    let leaf = g.param(x);
    let out = f(&mut g, leaf)?;
    let grads = g.backward(out)?;
    let zeros = vec![0.0; x.len()];
    let analytic = grads.get(leaf).unwrap_or(&zeros);

    let mut worst = 0.0f64;
    let mut probe = x.detached();
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let fp = eval(&probe)?;
        probe.data_mut()[i] = orig - h;
        let fm = eval(&probe)?;
        probe.data_mut()[i] = orig;
        let numeric = (fp - fm) / (2.0 * h);
        worst = worst.max(relative_error(analytic[i], numeric));
    }
    Ok(worst)
}
