//! Adam with bias-corrected moment estimates.

use serde::{Deserialize, Serialize};

use super::params::ParamSet;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step_count: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    first_moment: Vec<Vec<f64>>,
    second_moment: Vec<Vec<f64>>,
}

impl AdamState {
    /// Zero moments shaped like `params`, with β₁ = 0.9, β₂ = 0.999, ε = 1e-8.
    pub fn new(params: &ParamSet) -> Self {
        AdamState::with_hyper(params, 0.9, 0.999, 1e-8)
    }

    pub fn with_hyper(params: &ParamSet, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        let zeros: Vec<Vec<f64>> = params.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
        AdamState {
            step_count: 0,
            beta1,
            beta2,
            epsilon,
            first_moment: zeros.clone(),
            second_moment: zeros,
        }
    }

    pub fn first_moment(&self) -> &[Vec<f64>] {
        &self.first_moment
    }

    pub fn second_moment(&self) -> &[Vec<f64>] {
        &self.second_moment
    }
}

/// One Adam update using the gradients stored in each parameter's grad slot.
///
/// Every gradient is checked before anything is modified, so a non-finite
/// gradient leaves both parameters and state untouched.
pub fn adam_step(params: &mut ParamSet, state: &mut AdamState, lr: f64) -> Result<()> {
    if state.first_moment.len() != params.len()
        || state
            .first_moment
            .iter()
            .zip(params.tensors())
            .any(|(m, t)| m.len() != t.len())
    {
        return Err(Error::Dimension(
            "optimizer state does not match parameter shapes".into(),
        ));
    }
    for (name, t) in params.iter() {
        let g = t
            .grad()
            .ok_or_else(|| Error::Training(format!("parameter `{name}` has no gradient slot")))?;
        if let Some(i) = g.iter().position(|v| !v.is_finite()) {
            return Err(Error::Training(format!(
                "non-finite gradient {} at element {i} of parameter `{name}`",
                g[i]
            )));
        }
    }

    state.step_count += 1;
    let t = state.step_count as i32;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.epsilon);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for ((tensor, m), v) in params
        .tensors_mut()
        .iter_mut()
        .zip(&mut state.first_moment)
        .zip(&mut state.second_moment)
    {
        let g = tensor.grad().unwrap().to_vec();
        for (((p, m), v), g) in tensor.data_mut().iter_mut().zip(m).zip(v).zip(g) {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
