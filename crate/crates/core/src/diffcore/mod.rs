//! Dense-tensor compute core: tape-based reverse-mode differentiation,
//! a GRU built from primitive ops, Adam, and a finite-difference harness.
//!
//! Everything runs in `f64`. Graphs are single-threaded; independent graphs
//! over frozen parameters can be evaluated concurrently.

mod adam;
mod gradcheck;
mod graph;
mod gru;
mod params;
mod tensor;

pub use adam::{adam_step, AdamState};
pub use gradcheck::{finite_difference_check, relative_error};
pub use graph::{Gradients, Graph, Var};
pub use gru::{gru_forward, init_gru, GruVars};
pub use params::{uniform_init, BoundParams, ParamSet};
pub use tensor::Tensor;

use crate::error::Result;

impl Graph {
    /// Per-channel mean and population standard deviation over the last axis.
    pub fn instance_stats(&mut self, x: Var) -> (Var, Var) {
        (self.mean_last(x), self.std_last(x))
    }
}

/// Worst relative error between reverse-mode and central-difference
/// gradients of a scalar loss with respect to every parameter in `params`.
///
/// `loss` builds the scalar on a fresh graph from the bound parameters. At
/// most `max_per_tensor` evenly spaced entries of each tensor are probed.
pub fn param_gradient_check<F>(
    params: &ParamSet,
    loss: F,
    h: f64,
    max_per_tensor: usize,
) -> Result<f64>
where
    F: Fn(&mut Graph, &BoundParams) -> Result<Var>,
{
    let eval = |p: &ParamSet| -> Result<f64> {
        let mut g = Graph::new();
        let b = p.bind(&mut g);
        let out = loss(&mut g, &b)?;
        Ok(g.scalar_value(out))
    };
    let mut g = Graph::new();
    let bound = params.bind(&mut g);
    let out = loss(&mut g, &bound)?;
    let grads = g.backward(out)?;

    let mut probe = params.clone();
    let mut worst = 0.0f64;
    for (ti, &v) in bound.vars().iter().enumerate() {
        let n = params.tensors()[ti].len();
        let zeros = vec![0.0; n];
        let analytic = grads.get(v).unwrap_or(&zeros).to_vec();
        let stride = n.div_ceil(max_per_tensor.max(1));
        for i in (0..n).step_by(stride.max(1)) {
            let orig = probe.tensors()[ti].data()[i];
            probe.tensors_mut()[ti].data_mut()[i] = orig + h;
            let fp = eval(&probe)?;
            probe.tensors_mut()[ti].data_mut()[i] = orig - h;
            let fm = eval(&probe)?;
            probe.tensors_mut()[ti].data_mut()[i] = orig;
            worst = worst.max(relative_error(analytic[i], (fp - fm) / (2.0 * h)));
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests;
