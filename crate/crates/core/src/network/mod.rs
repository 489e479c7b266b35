//! TSA-SAN: multi-scale depthwise convolution, self-adaptive instance
//! normalization, GRU, temporal-spatial attention and a linear classifier.
//!
//! Channel flow for `v` input variables: `v → 4v → 4v → 2v → 2v → classes`.
//!
//! Parameter names are stable and appear verbatim in checkpoints:
//!
//! | block | names |
//! |---|---|
//! | MSDC | `msdc.k{3,5,7,9}.{kernel,bias}` |
//! | SAIN | `sain.{gamma,beta}.{fc1,fc2}.{weight,bias}` |
//! | GRU | `gru.{weight_ih,weight_hh,bias_ih,bias_hh}` |
//! | TSAM | `tsam.{temporal,spatial}.{avg,std}.{fc1,fc2}.{weight,bias}`, `tsam.{temporal,spatial}.conv.{weight,bias}` |
//! | head | `classifier.{weight,bias}` |

mod checkpoint;
mod scaler;

pub use checkpoint::{load_checkpoint, save_checkpoint, ModelCheckpoint, NamedArray, CHECKPOINT_SCHEMA_VERSION};
pub use scaler::{InputScaler, InputSpace};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{gru_forward, init_gru, uniform_init, BoundParams, Graph, GruVars, ParamSet, Tensor, Var};
use crate::error::{Error, Result};

/// Normalization applied after the convolution block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SainMode {
    /// Scale and shift generated from each instance's channel statistics.
    Adaptive,
    /// Instance normalization with unit scale and zero shift.
    PlainIn,
    /// No normalization.
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchConfig {
    pub v: usize,
    pub t_len: usize,
    pub kernel_sizes: Vec<usize>,
    pub gru_hidden: usize,
    pub tsam_reduction: usize,
    pub n_classes: usize,
    pub sain_epsilon: f64,
    pub sain: SainMode,
    /// `false` replaces attention with a plain sum over time.
    pub tsam: bool,
}

impl Default for ArchConfig {
    fn default() -> Self {
        ArchConfig::new(7, 10)
    }
}

impl ArchConfig {
    pub fn new(v: usize, n_classes: usize) -> Self {
        ArchConfig {
            v,
            t_len: 64,
            kernel_sizes: vec![3, 5, 7, 9],
            gru_hidden: 2 * v,
            tsam_reduction: 16,
            n_classes,
            sain_epsilon: 1e-5,
            sain: SainMode::Adaptive,
            tsam: true,
        }
    }

    /// Channels after the convolution block.
    pub fn conv_channels(&self) -> usize {
        self.kernel_sizes.len() * self.v
    }

    fn reduced(&self, n: usize) -> usize {
        (n / self.tsam_reduction).max(1)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("architecture: {m}")));
        if self.v == 0 || self.t_len == 0 || self.gru_hidden == 0 || self.tsam_reduction == 0 {
            return bad("v, t_len, gru_hidden and tsam_reduction must be ≥ 1".into());
        }
        if self.n_classes < 2 {
            return bad(format!("need at least 2 classes, got {}", self.n_classes));
        }
        if self.kernel_sizes.is_empty() || self.kernel_sizes.iter().any(|k| k % 2 == 0) {
            return bad(format!("kernel sizes must be odd and non-empty, got {:?}", self.kernel_sizes));
        }
        if !(self.sain_epsilon > 0.0) {
            return bad("sain_epsilon must be positive".into());
        }
        Ok(())
    }
}

fn insert_fc(p: &mut ParamSet, prefix: &str, d_in: usize, d_out: usize, rng: &mut ChaCha8Rng) -> Result<()> {
    p.insert(format!("{prefix}.weight"), uniform_init(&[d_in, d_out], d_in, rng))?;
    p.insert(format!("{prefix}.bias"), Tensor::zeros([d_out]))
}

fn fill_ones(p: &mut ParamSet, name: &str) {
    if let Some(t) = p.get_mut(name) {
        t.data_mut().iter_mut().for_each(|x| *x = 1.0);
    }
}

/// Seeded parameter initialization: `uniform(±1/√fan_in)` weights, zero biases.
///
/// Two biases start at one instead: the SAIN scale generator, so that SAIN
/// begins as plain instance normalization, and the kernel-1 attention
/// convolutions, so that both attention maps begin near all-ones. With zero
/// there, `a_S ⊗ a_T` starts at a saddle of the product (and is exactly zero
/// whenever the one-unit spatial bottleneck is inactive).
pub fn init_params(arch: &ArchConfig, seed: u64) -> Result<ParamSet> {
    arch.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = ParamSet::new();
    let v = arch.v;
    for &k in &arch.kernel_sizes {
        p.insert(format!("msdc.k{k}.kernel"), uniform_init(&[v, k], k, &mut rng))?;
        p.insert(format!("msdc.k{k}.bias"), Tensor::zeros([v]))?;
    }
    let c = arch.conv_channels();
    if arch.sain == SainMode::Adaptive {
        for branch in ["gamma", "beta"] {
            insert_fc(&mut p, &format!("sain.{branch}.fc1"), c, c, &mut rng)?;
            insert_fc(&mut p, &format!("sain.{branch}.fc2"), c, c, &mut rng)?;
        }
        fill_ones(&mut p, "sain.gamma.fc2.bias");
    }
    init_gru(&mut p, "gru", c, arch.gru_hidden, &mut rng)?;
    let h = arch.gru_hidden;
    let t = arch.t_len;
    if arch.tsam {
        for (axis, n) in [("temporal", t), ("spatial", h)] {
            for stat in ["avg", "std"] {
                insert_fc(&mut p, &format!("tsam.{axis}.{stat}.fc1"), n, arch.reduced(n), &mut rng)?;
                insert_fc(&mut p, &format!("tsam.{axis}.{stat}.fc2"), arch.reduced(n), n, &mut rng)?;
            }
            insert_fc(&mut p, &format!("tsam.{axis}.conv"), 2, 1, &mut rng)?;
            fill_ones(&mut p, &format!("tsam.{axis}.conv.bias"));
        }
    }
    insert_fc(&mut p, "classifier", h, arch.n_classes, &mut rng)?;
    check_params(arch, &p)?;
    Ok(p)
}

/// Expected name and shape of every parameter.
pub fn expected_shapes(arch: &ArchConfig) -> Vec<(String, Vec<usize>)> {
    let mut out = Vec::new();
    let (v, c, h, t) = (arch.v, arch.conv_channels(), arch.gru_hidden, arch.t_len);
    for &k in &arch.kernel_sizes {
        out.push((format!("msdc.k{k}.kernel"), vec![v, k]));
        out.push((format!("msdc.k{k}.bias"), vec![v]));
    }
    let fc = |out: &mut Vec<(String, Vec<usize>)>, name: String, i: usize, o: usize| {
        out.push((format!("{name}.weight"), vec![i, o]));
        out.push((format!("{name}.bias"), vec![o]));
    };
    if arch.sain == SainMode::Adaptive {
        for b in ["gamma", "beta"] {
            fc(&mut out, format!("sain.{b}.fc1"), c, c);
            fc(&mut out, format!("sain.{b}.fc2"), c, c);
        }
    }
    out.push(("gru.weight_ih".into(), vec![c, 3 * h]));
    out.push(("gru.weight_hh".into(), vec![h, 3 * h]));
    out.push(("gru.bias_ih".into(), vec![3 * h]));
    out.push(("gru.bias_hh".into(), vec![3 * h]));
    if arch.tsam {
        for (axis, n) in [("temporal", t), ("spatial", h)] {
            for stat in ["avg", "std"] {
                fc(&mut out, format!("tsam.{axis}.{stat}.fc1"), n, arch.reduced(n));
                fc(&mut out, format!("tsam.{axis}.{stat}.fc2"), arch.reduced(n), n);
            }
            fc(&mut out, format!("tsam.{axis}.conv"), 2, 1);
        }
    }
    fc(&mut out, "classifier".into(), h, arch.n_classes);
    out
}

/// Every architecture parameter is present exactly once with its expected shape.
pub fn check_params(arch: &ArchConfig, p: &ParamSet) -> Result<()> {
    let expected = expected_shapes(arch);
    if expected.len() != p.len() {
        return Err(Error::Dimension(format!(
            "architecture expects {} parameter arrays, found {}",
            expected.len(),
            p.len()
        )));
    }
    for (name, shape) in expected {
        match p.get(&name) {
            Some(t) if t.shape() == shape.as_slice() => {}
            Some(t) => {
                return Err(Error::Dimension(format!(
                    "parameter `{name}` has shape {:?}, architecture expects {shape:?}",
                    t.shape()
                )))
            }
            None => return Err(Error::Dimension(format!("parameter `{name}` is missing"))),
        }
    }
    Ok(())
}

fn finite(g: &Graph, v: Var, stage: &'static str) -> Result<Var> {
    if g.value(v).all_finite() {
        Ok(v)
    } else {
        Err(Error::Inference {
            stage,
            detail: format!("non-finite activation in output of shape {:?}", g.shape(v)),
        })
    }
}

fn fc(g: &mut Graph, b: &BoundParams, prefix: &str, x: Var) -> Result<Var> {
    g.affine(x, b.var(&format!("{prefix}.weight")), b.var(&format!("{prefix}.bias")))
}

fn fc2(g: &mut Graph, b: &BoundParams, prefix: &str, x: Var) -> Result<Var> {
    let h = fc(g, b, &format!("{prefix}.fc1"), x)?;
    let h = g.relu(h);
    fc(g, b, &format!("{prefix}.fc2"), h)
}

/// `[N, v, T] → [N, 4v, T]`: depthwise convolutions concatenated in kernel order.
pub fn msdc_forward(g: &mut Graph, b: &BoundParams, arch: &ArchConfig, x: Var) -> Result<Var> {
    let branches = arch
        .kernel_sizes
        .iter()
        .map(|k| {
            g.depthwise_conv1d(x, b.var(&format!("msdc.k{k}.kernel")), b.var(&format!("msdc.k{k}.bias")))
        })
        .collect::<Result<Vec<_>>>()?;
    let axis = g.shape(x).len() - 2;
    g.concat(&branches, axis)
}

/// Instance normalization with adaptive scale and shift, `[N, C, T] → [N, C, T]`.
pub fn sain_forward(g: &mut Graph, b: &BoundParams, arch: &ArchConfig, f: Var) -> Result<Var> {
    if arch.sain == SainMode::None {
        return Ok(f);
    }
    let (mu, sigma) = g.instance_stats(f);
    let var = g.var_last(f);
    let centred = g.sub_last(f, mu)?;
    let den = g.add_scalar(var, arch.sain_epsilon);
    let den = g.sqrt(den);
    let normed = g.div_last(centred, den)?;
    if arch.sain == SainMode::PlainIn {
        return Ok(normed);
    }
    let gamma = fc2(g, b, "sain.gamma", mu)?;
    let beta = fc2(g, b, "sain.beta", sigma)?;
    let scaled = g.mul_last(normed, gamma)?;
    g.add_last(scaled, beta)
}

/// Attention output: fused features `[N, C]` and the map `a_TS` `[N, C, T]`
/// (absent when attention is disabled).
pub struct TsamOutput {
    pub fused: Var,
    pub attention: Option<Var>,
}

/// Temporal-spatial attention over `f [N, C, T]`.
pub fn tsam_forward(g: &mut Graph, b: &BoundParams, arch: &ArchConfig, f: Var) -> Result<TsamOutput> {
    if !arch.tsam {
        let fused = g.sum_last(f);
        return Ok(TsamOutput { fused, attention: None });
    }
    // Statistics over channels (per timestep) and over time (per channel).
    let ft = g.swap_last_two(f)?;
    let t_avg = g.mean_last(ft);
    let t_std = g.std_last(ft);
    let s_avg = g.mean_last(f);
    let s_std = g.std_last(f);

    let a_tap = fc2(g, b, "tsam.temporal.avg", t_avg)?;
    let a_tsd = fc2(g, b, "tsam.temporal.std", t_std)?;
    let a_sap = fc2(g, b, "tsam.spatial.avg", s_avg)?;
    let a_ssd = fc2(g, b, "tsam.spatial.std", s_std)?;

    // Kernel-1 convolutions over the two stacked maps.
    let fuse = |g: &mut Graph, prefix: &str, a: Var, s: Var| -> Result<Var> {
        let stacked = g.stack_last(&[a, s])?;
        let out = fc(g, b, prefix, stacked)?;
        let shape = g.shape(a).to_vec();
        g.reshape(out, &shape)
    };
    let a_t = fuse(g, "tsam.temporal.conv", a_tap, a_tsd)?;
    let a_s = fuse(g, "tsam.spatial.conv", a_sap, a_ssd)?;
    let a_ts = g.outer(a_s, a_t)?;
    let weighted = g.mul(a_ts, f)?;
    let fused = g.sum_last(weighted);
    Ok(TsamOutput {
        fused,
        attention: Some(a_ts),
    })
}

/// Full pipeline up to the classifier logits, `[N, v, T] → [N, classes]`.
///
/// Each stage's output is checked for non-finite values.
pub fn logits_forward(g: &mut Graph, b: &BoundParams, arch: &ArchConfig, x: Var) -> Result<Var> {
    let xs = g.shape(x);
    if xs.len() != 3 || xs[1] != arch.v || xs[2] != arch.t_len {
        return Err(Error::Dimension(format!(
            "model input must be [N, {}, {}], got {:?}",
            arch.v, arch.t_len, xs
        )));
    }
    let f = msdc_forward(g, b, arch, x)?;
    let f = finite(g, f, "msdc")?;
    let f = sain_forward(g, b, arch, f)?;
    let f = finite(g, f, "sain")?;
    let f = gru_forward(g, f, &GruVars::from_bound(b, "gru"), None)?;
    let f = finite(g, f, "gru")?;
    let fused = tsam_forward(g, b, arch, f)?.fused;
    let fused = finite(g, fused, "tsam")?;
    let logits = fc(g, b, "classifier", fused)?;
    finite(g, logits, "classifier")
}

/// A model: architecture plus parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub arch: ArchConfig,
    pub params: ParamSet,
}

impl Model {
    pub fn new(arch: ArchConfig, seed: u64) -> Result<Model> {
        let params = init_params(&arch, seed)?;
        Ok(Model { arch, params })
    }

    pub fn from_parts(arch: ArchConfig, params: ParamSet) -> Result<Model> {
        arch.validate()?;
        check_params(&arch, &params)?;
        Ok(Model { arch, params })
    }

    /// Class probabilities for a batch `[N, v, T]`.
    pub fn forward(&self, x: Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let b = self.params.bind(&mut g);
        let xv = g.input(x);
        let logits = logits_forward(&mut g, &b, &self.arch, xv)?;
        let p = g.softmax(logits);
        Ok(g.value(p).clone())
    }

    /// Mean cross-entropy of a batch, with gradients accumulated into the
    /// parameters' grad slots.
    pub fn loss_and_grad(&mut self, x: Tensor, labels: &[usize]) -> Result<f64> {
        let mut g = Graph::new();
        let b = self.params.bind(&mut g);
        let xv = g.input(x);
        let logits = logits_forward(&mut g, &b, &self.arch, xv)?;
        let loss = g.softmax_cross_entropy(logits, labels)?;
        let value = g.scalar_value(loss);
        if !value.is_finite() {
            return Err(Error::Training(format!("non-finite loss {value}")));
        }
        let grads = g.backward(loss)?;
        self.params.accumulate(&b, &grads);
        Ok(value)
    }
}

/// Mean cross-entropy of probability rows against labels.
pub fn loss(probabilities: &Tensor, labels: &[usize]) -> Result<f64> {
    let mut g = Graph::new();
    let p = g.input(probabilities.clone());
    let l = g.cross_entropy(p, labels)?;
    Ok(g.scalar_value(l))
}

#[cfg(test)]
mod tests;
