use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, Var};
use super::params::{uniform_init, BoundParams, ParamSet};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Parameter handles of one GRU layer.
///
/// Gate blocks inside the stacked matrices are ordered reset, update, candidate:
/// `weight_ih [C_in × 3H]`, `weight_hh [H × 3H]`, `bias_ih [3H]`, `bias_hh [3H]`.
#[derive(Debug, Clone, Copy)]
pub struct GruVars {
    pub weight_ih: Var,
    pub weight_hh: Var,
    pub bias_ih: Var,
    pub bias_hh: Var,
}

impl GruVars {
    pub fn from_bound(bound: &BoundParams, prefix: &str) -> Self {
        GruVars {
            weight_ih: bound.var(&format!("{prefix}.weight_ih")),
            weight_hh: bound.var(&format!("{prefix}.weight_hh")),
            bias_ih: bound.var(&format!("{prefix}.bias_ih")),
            bias_hh: bound.var(&format!("{prefix}.bias_hh")),
        }
    }
}

/// Adds `<prefix>.{weight_ih, weight_hh, bias_ih, bias_hh}` to `params`.
pub fn init_gru(
    params: &mut ParamSet,
    prefix: &str,
    input: usize,
    hidden: usize,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    params.insert(
        format!("{prefix}.weight_ih"),
        uniform_init(&[input, 3 * hidden], input, rng),
    )?;
    params.insert(
        format!("{prefix}.weight_hh"),
        uniform_init(&[hidden, 3 * hidden], hidden, rng),
    )?;
    params.insert(format!("{prefix}.bias_ih"), Tensor::zeros([3 * hidden]))?;
    params.insert(format!("{prefix}.bias_hh"), Tensor::zeros([3 * hidden]))?;
    Ok(())
}

/// Runs a GRU left to right over `x [..., C_in, T]` and returns the hidden
/// sequence `[..., H, T]`.
///
/// ```text
/// r = σ(x Wᵢᵣ + bᵢᵣ + h Wₕᵣ + bₕᵣ)
/// z = σ(x Wᵢ𝓏 + bᵢ𝓏 + h Wₕ𝓏 + bₕ𝓏)
/// n = tanh(x Wᵢₙ + bᵢₙ + r ⊙ (h Wₕₙ + bₕₙ))
/// h' = (1 − z) ⊙ n + z ⊙ h
/// ```
///
/// `h0`, when given, has shape `[..., H]`; otherwise the state starts at zero.
pub fn gru_forward(g: &mut Graph, x: Var, p: &GruVars, h0: Option<Var>) -> Result<Var> {
    let xs = g.shape(x).to_vec();
    let whh = g.shape(p.weight_hh).to_vec();
    if xs.len() < 2 || whh.len() != 2 || whh[1] != 3 * whh[0] {
        return Err(Error::Dimension(format!(
            "gru: input {xs:?}, weight_hh {whh:?}"
        )));
    }
    let hidden = whh[0];
    let t_len = xs[xs.len() - 1];
    let lead = &xs[..xs.len() - 2];
    let mut hshape = lead.to_vec();
    hshape.push(hidden);
    if hshape.is_empty() {
        hshape.push(hidden);
    }

    // Input projections for every step at once: [..., T, 3H].
    let xt = g.swap_last_two(x)?;
    let gi_all = g.affine(xt, p.weight_ih, p.bias_ih)?;

    let mut h = match h0 {
        Some(h0) => {
            if g.shape(h0) != hshape.as_slice() {
                return Err(Error::Dimension(format!(
                    "gru: h0 {:?} does not match hidden shape {hshape:?}",
                    g.shape(h0)
                )));
            }
            h0
        }
        None => g.input(Tensor::zeros(hshape.clone())),
    };

    let mut outputs = Vec::with_capacity(t_len);
    for t in 0..t_len {
        let gi = g.select(gi_all, t)?;
        let gh = g.affine(h, p.weight_hh, p.bias_hh)?;
        let (ir, iz, inn) = (
            g.slice_last(gi, 0, hidden)?,
            g.slice_last(gi, hidden, hidden)?,
            g.slice_last(gi, 2 * hidden, hidden)?,
        );
        let (hr, hz, hn) = (
            g.slice_last(gh, 0, hidden)?,
            g.slice_last(gh, hidden, hidden)?,
            g.slice_last(gh, 2 * hidden, hidden)?,
        );
        let r = g.add(ir, hr)?;
        let r = g.sigmoid(r);
        let z = g.add(iz, hz)?;
        let z = g.sigmoid(z);
        let rn = g.mul(r, hn)?;
        let n = g.add(inn, rn)?;
        let n = g.tanh(n);
        // h' = n + z ⊙ (h − n)
        let d = g.sub(h, n)?;
        let zd = g.mul(z, d)?;
        h = g.add(n, zd)?;
        outputs.push(h);
    }
    g.stack_last(&outputs)
}
