//! Tape-based reverse-mode differentiation over dense tensors.
//!
//! A [`Graph`] records every operation applied to its [`Var`] handles. Leaves
//! are registered with [`Graph::input`] (constant) or [`Graph::param`]
//! (differentiable); calling [`Graph::backward`] on a scalar node walks the
//! tape in reverse and returns gradients for every node that needs one.
//!
//! Ops that reduce or broadcast do so along the *last* axis, treating all
//! leading axes as batch. Matrix products flatten leading axes into rows.

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy)]
enum Binary {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    /// Elementwise binary on equal shapes.
    Elementwise(Binary, Var, Var),
    /// `x (op) v` where `v` has shape `x.shape[..rank-1]`, broadcast along the last axis.
    BroadcastLast(Binary, Var, Var),
    /// `x + b` where `b` has shape `[x.last_dim()]`, broadcast over all leading axes.
    AddRow(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Sqrt(Var),
    SumLast(Var),
    MeanLast(Var),
    VarLast(Var),
    StdLast(Var),
    SwapLastTwo(Var),
    Reshape(Var),
    Concat(Vec<Var>, usize),
    SliceLast(Var, usize),
    Select(Var, usize),
    StackLast(Vec<Var>),
    DepthwiseConv(Var, Var, Var),
    Outer(Var, Var),
    Softmax(Var),
    CrossEntropy(Var, Vec<usize>),
    SoftmaxCrossEntropy(Var, Vec<usize>, Vec<f64>),
    SumAll(Var),
    Square(Var),
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Computation tape. Single-threaded and append-only.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn take(&mut self, v: Var) -> Option<Vec<f64>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

fn dim_err(op: &str, a: &[usize], b: &[usize]) -> Error {
    Error::Dimension(format!("{op}: incompatible shapes {a:?} and {b:?}"))
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// `a [rows×k] · b [k×m]`, accumulated into `out [rows×m]`.
fn gemm_acc(a: &[f64], b: &[f64], out: &mut [f64], rows: usize, k: usize, m: usize) {
    for r in 0..rows {
        let orow = &mut out[r * m..(r + 1) * m];
        let arow = &a[r * k..(r + 1) * k];
        for (p, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * m..(p + 1) * m];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, vs: &[Var]) -> bool {
        vs.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    /// Constant leaf; no gradient is tracked.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t.detached(), Op::Leaf, false)
    }

    /// Differentiable leaf.
    pub fn param(&mut self, t: &Tensor) -> Var {
        self.push(t.detached(), Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn scalar_value(&self, v: Var) -> f64 {
        self.nodes[v.0].value.data()[0]
    }

    // ---------------------------------------------------------------- ops

    /// `x [..., k] · w [k×m] → [..., m]`.
    pub fn matmul(&mut self, x: Var, w: Var) -> Result<Var> {
        let (xs, ws) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if ws.len() != 2 || *xs.last().unwrap() != ws[0] {
            return Err(dim_err("matmul", &xs, &ws));
        }
        let (k, m) = (ws[0], ws[1]);
        let rows = self.value(x).len() / k;
        let mut out = vec![0.0; rows * m];
        gemm_acc(self.value(x).data(), self.value(w).data(), &mut out, rows, k, m);
        let mut shape = xs;
        *shape.last_mut().unwrap() = m;
        let ng = self.ng(&[x, w]);
        Ok(self.push(Tensor::new(shape, out)?, Op::MatMul(x, w), ng))
    }

    /// `x + b` with `b` of shape `[x.last_dim()]`.
    pub fn add_row(&mut self, x: Var, b: Var) -> Result<Var> {
        let (xs, bs) = (self.shape(x).to_vec(), self.shape(b).to_vec());
        let m = *xs.last().unwrap();
        if bs != [m] {
            return Err(dim_err("add_row", &xs, &bs));
        }
        let bd = self.value(b).data().to_vec();
        let mut out = self.value(x).data().to_vec();
        for row in out.chunks_mut(m) {
            add_into(row, &bd);
        }
        let ng = self.ng(&[x, b]);
        Ok(self.push(Tensor::new(xs, out)?, Op::AddRow(x, b), ng))
    }

    /// `x · w + b`: the fully connected layer.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let h = self.matmul(x, w)?;
        self.add_row(h, b)
    }

    fn elementwise(&mut self, op: Binary, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(dim_err("elementwise", sa, sb));
        }
        let shape = sa.to_vec();
        let (ad, bd) = (self.value(a).data(), self.value(b).data());
        let out: Vec<f64> = match op {
            Binary::Add => ad.iter().zip(bd).map(|(x, y)| x + y).collect(),
            Binary::Sub => ad.iter().zip(bd).map(|(x, y)| x - y).collect(),
            Binary::Mul => ad.iter().zip(bd).map(|(x, y)| x * y).collect(),
            Binary::Div => ad.iter().zip(bd).map(|(x, y)| x / y).collect(),
        };
        let ng = self.ng(&[a, b]);
        Ok(self.push(Tensor::new(shape, out)?, Op::Elementwise(op, a, b), ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(Binary::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(Binary::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(Binary::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(Binary::Div, a, b)
    }

    fn broadcast_last(&mut self, op: Binary, x: Var, v: Var) -> Result<Var> {
        let (xs, vs) = (self.shape(x).to_vec(), self.shape(v).to_vec());
        let lead = if xs.len() > 1 { &xs[..xs.len() - 1] } else { &[1][..] };
        if vs != lead {
            return Err(dim_err("broadcast_last", &xs, &vs));
        }
        let t = *xs.last().unwrap();
        let vd = self.value(v).data().to_vec();
        let mut out = self.value(x).data().to_vec();
        for (row, &s) in out.chunks_mut(t).zip(&vd) {
            for o in row.iter_mut() {
                *o = match op {
                    Binary::Add => *o + s,
                    Binary::Sub => *o - s,
                    Binary::Mul => *o * s,
                    Binary::Div => *o / s,
                };
            }
        }
        let ng = self.ng(&[x, v]);
        Ok(self.push(Tensor::new(xs, out)?, Op::BroadcastLast(op, x, v), ng))
    }

    /// `x[..., t] + v[...]`.
    pub fn add_last(&mut self, x: Var, v: Var) -> Result<Var> {
        self.broadcast_last(Binary::Add, x, v)
    }

    pub fn sub_last(&mut self, x: Var, v: Var) -> Result<Var> {
        self.broadcast_last(Binary::Sub, x, v)
    }

    pub fn mul_last(&mut self, x: Var, v: Var) -> Result<Var> {
        self.broadcast_last(Binary::Mul, x, v)
    }

    pub fn div_last(&mut self, x: Var, v: Var) -> Result<Var> {
        self.broadcast_last(Binary::Div, x, v)
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let t = self.value(x);
        let out = Tensor::new(t.shape().to_vec(), t.data().iter().map(|&v| f(v)).collect())
            .unwrap();
        let ng = self.ng(&[x]);
        self.push(out, op, ng)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, |v| v * c, Op::Scale(x, c))
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, |v| v + c, Op::AddScalar(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, f64::tanh, Op::Tanh(x))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.max(0.0), Op::Relu(x))
    }

    pub fn sqrt(&mut self, x: Var) -> Var {
        self.unary(x, f64::sqrt, Op::Sqrt(x))
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(x, |v| v * v, Op::Square(x))
    }

    fn reduce_last(&mut self, x: Var, f: impl Fn(&[f64]) -> f64, op: Op) -> Var {
        let t = self.value(x);
        let n = t.last_dim();
        let out: Vec<f64> = t.data().chunks(n).map(f).collect();
        let shape = if t.rank() > 1 {
            t.shape()[..t.rank() - 1].to_vec()
        } else {
            vec![1]
        };
        let ng = self.ng(&[x]);
        self.push(Tensor::new(shape, out).unwrap(), op, ng)
    }

    pub fn sum_last(&mut self, x: Var) -> Var {
        self.reduce_last(x, |r| r.iter().sum(), Op::SumLast(x))
    }

    pub fn mean_last(&mut self, x: Var) -> Var {
        self.reduce_last(x, |r| r.iter().sum::<f64>() / r.len() as f64, Op::MeanLast(x))
    }

    /// Population variance along the last axis.
    pub fn var_last(&mut self, x: Var) -> Var {
        self.reduce_last(x, population_var, Op::VarLast(x))
    }

    /// Population standard deviation along the last axis. The gradient at
    /// zero spread is taken as zero.
    pub fn std_last(&mut self, x: Var) -> Var {
        self.reduce_last(x, |r| population_var(r).sqrt(), Op::StdLast(x))
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let s: f64 = self.value(x).data().iter().sum();
        let ng = self.ng(&[x]);
        self.push(Tensor::scalar(s), Op::SumAll(x), ng)
    }

    /// Swaps the last two axes: `[..., a, b] → [..., b, a]`.
    pub fn swap_last_two(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        if t.rank() < 2 {
            return Err(Error::Dimension(format!(
                "swap_last_two needs rank ≥ 2, got {:?}",
                t.shape()
            )));
        }
        let r = t.rank();
        let (a, b) = (t.shape()[r - 2], t.shape()[r - 1]);
        let mut shape = t.shape().to_vec();
        shape.swap(r - 2, r - 1);
        let out = transpose_blocks(t.data(), a, b);
        let ng = self.ng(&[x]);
        Ok(self.push(Tensor::new(shape, out)?, Op::SwapLastTwo(x), ng))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).detached().reshape(shape.to_vec())?;
        let ng = self.ng(&[x]);
        Ok(self.push(t, Op::Reshape(x), ng))
    }

    /// Concatenates along `axis`; all other extents must agree.
    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = self.shape(xs[0]).to_vec();
        if axis >= first.len() {
            return Err(Error::Dimension(format!("concat axis {axis} for {first:?}")));
        }
        let mut total = 0;
        for &v in xs {
            let s = self.shape(v);
            if s.len() != first.len()
                || s.iter()
                    .zip(&first)
                    .enumerate()
                    .any(|(i, (a, b))| i != axis && a != b)
            {
                return Err(dim_err("concat", &first, s));
            }
            total += s[axis];
        }
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in xs {
                let t = self.value(v);
                let block = t.shape()[axis] * inner;
                out.extend_from_slice(&t.data()[o * block..(o + 1) * block]);
            }
        }
        let mut shape = first;
        shape[axis] = total;
        let ng = self.ng(xs);
        Ok(self.push(Tensor::new(shape, out)?, Op::Concat(xs.to_vec(), axis), ng))
    }

    /// Columns `start..start+len` of the last axis.
    pub fn slice_last(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(x);
        let m = t.last_dim();
        if start + len > m || len == 0 {
            return Err(Error::Dimension(format!(
                "slice {start}..{} of last axis {m}",
                start + len
            )));
        }
        let out: Vec<f64> = t
            .data()
            .chunks(m)
            .flat_map(|row| row[start..start + len].iter().copied())
            .collect();
        let mut shape = t.shape().to_vec();
        *shape.last_mut().unwrap() = len;
        let ng = self.ng(&[x]);
        Ok(self.push(Tensor::new(shape, out)?, Op::SliceLast(x, start), ng))
    }

    /// Index `i` of the second-to-last axis: `[..., a, b] → [..., b]`.
    pub fn select(&mut self, x: Var, i: usize) -> Result<Var> {
        let t = self.value(x);
        if t.rank() < 2 || i >= t.shape()[t.rank() - 2] {
            return Err(Error::Index(format!("select {i} from {:?}", t.shape())));
        }
        let r = t.rank();
        let (a, b) = (t.shape()[r - 2], t.shape()[r - 1]);
        let out: Vec<f64> = t
            .data()
            .chunks(a * b)
            .flat_map(|blk| blk[i * b..(i + 1) * b].iter().copied())
            .collect();
        let mut shape = t.shape()[..r - 2].to_vec();
        shape.push(b);
        let ng = self.ng(&[x]);
        Ok(self.push(Tensor::new(shape, out)?, Op::Select(x, i), ng))
    }

    /// Stacks equal-shape tensors along a new last axis: `k × [...] → [..., k]`.
    pub fn stack_last(&mut self, xs: &[Var]) -> Result<Var> {
        let shape0 = self.shape(xs[0]).to_vec();
        for &v in xs {
            if self.shape(v) != shape0.as_slice() {
                return Err(dim_err("stack_last", &shape0, self.shape(v)));
            }
        }
        let n = self.value(xs[0]).len();
        let k = xs.len();
        let mut out = vec![0.0; n * k];
        for (j, &v) in xs.iter().enumerate() {
            for (i, &val) in self.value(v).data().iter().enumerate() {
                out[i * k + j] = val;
            }
        }
        let mut shape = shape0;
        shape.push(k);
        let ng = self.ng(xs);
        Ok(self.push(Tensor::new(shape, out)?, Op::StackLast(xs.to_vec()), ng))
    }

    /// Per-channel 1-D convolution with zero same-padding and stride 1.
    ///
    /// `x [..., C, T]`, `kernel [C, k]` (k odd), `bias [C]` → `[..., C, T]`.
    pub fn depthwise_conv1d(&mut self, x: Var, kernel: Var, bias: Var) -> Result<Var> {
        let (xs, ks, bs) = (
            self.shape(x).to_vec(),
            self.shape(kernel).to_vec(),
            self.shape(bias).to_vec(),
        );
        if ks.len() != 2 || ks[1] % 2 == 0 {
            return Err(Error::Config(format!(
                "depthwise kernel must be [C, odd k], got {ks:?}"
            )));
        }
        let r = xs.len();
        if r < 2 || xs[r - 2] != ks[0] || bs != [ks[0]] {
            return Err(Error::Dimension(format!(
                "depthwise_conv1d: input {xs:?}, kernel {ks:?}, bias {bs:?}"
            )));
        }
        let (c, t, k) = (xs[r - 2], xs[r - 1], ks[1]);
        let half = k / 2;
        let (xd, kd, bd) = (
            self.value(x).data(),
            self.value(kernel).data(),
            self.value(bias).data(),
        );
        let mut out = vec![0.0; xd.len()];
        for (blk, oblk) in xd.chunks(c * t).zip(out.chunks_mut(c * t)) {
            for ch in 0..c {
                let xrow = &blk[ch * t..(ch + 1) * t];
                let orow = &mut oblk[ch * t..(ch + 1) * t];
                let kr = &kd[ch * k..(ch + 1) * k];
                for (ti, o) in orow.iter_mut().enumerate() {
                    let mut acc = bd[ch];
                    for (j, &w) in kr.iter().enumerate() {
                        let src = ti as isize + j as isize - half as isize;
                        if src >= 0 && (src as usize) < t {
                            acc += w * xrow[src as usize];
                        }
                    }
                    *o = acc;
                }
            }
        }
        let ng = self.ng(&[x, kernel, bias]);
        Ok(self.push(Tensor::new(xs, out)?, Op::DepthwiseConv(x, kernel, bias), ng))
    }

    /// Batched outer product: `a [..., m]`, `b [..., n]` → `[..., m, n]`.
    pub fn outer(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != sb.len() || sa[..sa.len() - 1] != sb[..sb.len() - 1] {
            return Err(dim_err("outer", &sa, &sb));
        }
        let (m, n) = (*sa.last().unwrap(), *sb.last().unwrap());
        let (ad, bd) = (self.value(a).data(), self.value(b).data());
        let mut out = Vec::with_capacity(ad.len() * n);
        for (ar, br) in ad.chunks(m).zip(bd.chunks(n)) {
            for &av in ar {
                out.extend(br.iter().map(|&bv| av * bv));
            }
        }
        let mut shape = sa;
        shape.push(n);
        let ng = self.ng(&[a, b]);
        Ok(self.push(Tensor::new(shape, out)?, Op::Outer(a, b), ng))
    }

    /// Row-wise softmax along the last axis, max-shifted.
    pub fn softmax(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let out = softmax_rows(t.data(), t.last_dim());
        let shape = t.shape().to_vec();
        let ng = self.ng(&[x]);
        self.push(Tensor::new(shape, out).unwrap(), Op::Softmax(x), ng)
    }

    /// Mean over rows of `−ln p[i, yᵢ]` for probability rows `p [N×K]`.
    pub fn cross_entropy(&mut self, p: Var, labels: &[usize]) -> Result<Var> {
        let (rows, k) = self.check_labels(p, labels)?;
        let pd = self.value(p).data();
        let loss = (0..rows).map(|i| -pd[i * k + labels[i]].ln()).sum::<f64>() / rows as f64;
        let ng = self.ng(&[p]);
        Ok(self.push(Tensor::scalar(loss), Op::CrossEntropy(p, labels.to_vec()), ng))
    }

    /// Fused softmax + cross-entropy on logits; gradient is `(p − onehot)/N`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (rows, k) = self.check_labels(logits, labels)?;
        let probs = softmax_rows(self.value(logits).data(), k);
        let ld = self.value(logits).data();
        let mut loss = 0.0;
        for i in 0..rows {
            let row = &ld[i * k..(i + 1) * k];
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = mx + row.iter().map(|v| (v - mx).exp()).sum::<f64>().ln();
            loss += lse - row[labels[i]];
        }
        loss /= rows as f64;
        let ng = self.ng(&[logits]);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::SoftmaxCrossEntropy(logits, labels.to_vec(), probs),
            ng,
        ))
    }

    fn check_labels(&self, p: Var, labels: &[usize]) -> Result<(usize, usize)> {
        let t = self.value(p);
        if t.rank() != 2 || t.shape()[0] != labels.len() {
            return Err(Error::Dimension(format!(
                "cross entropy expects [N×K] with N = {} labels, got {:?}",
                labels.len(),
                t.shape()
            )));
        }
        let k = t.shape()[1];
        if let Some((i, &y)) = labels.iter().enumerate().find(|(_, &y)| y >= k) {
            return Err(Error::Index(format!(
                "label {y} at row {i} out of range for {k} classes"
            )));
        }
        Ok((t.shape()[0], k))
    }

    // ----------------------------------------------------------- backward

    /// Reverse pass from a single-element node.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        if self.value(root).len() != 1 {
            return Err(Error::Dimension(format!(
                "backward needs a scalar root, got {:?}",
                self.shape(root)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; root.0 + 1];
        grads[root.0] = Some(vec![1.0]);
        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(gout) = grads[i].take() else { continue };
            self.backprop_node(node, &gout, &mut grads);
            grads[i] = Some(gout);
        }
        Ok(Gradients { grads })
    }

    fn backprop_node(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let val = |v: Var| &self.nodes[v.0].value;
        let needs = |v: Var| self.nodes[v.0].needs_grad;
        let mut acc = |v: Var, f: &dyn Fn(&mut [f64])| {
            if !needs(v) {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; val(v).len()]);
            f(slot);
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(x, w) => {
                let (xt, wt) = (val(*x), val(*w));
                let (k, m) = (wt.shape()[0], wt.shape()[1]);
                let rows = xt.len() / k;
                // dx = g · wᵀ
                acc(*x, &|dx| {
                    let wd = wt.data();
                    for r in 0..rows {
                        let grow = &g[r * m..(r + 1) * m];
                        let drow = &mut dx[r * k..(r + 1) * k];
                        for (p, d) in drow.iter_mut().enumerate() {
                            let wrow = &wd[p * m..(p + 1) * m];
                            *d += grow.iter().zip(wrow).map(|(a, b)| a * b).sum::<f64>();
                        }
                    }
                });
                // dw = xᵀ · g
                acc(*w, &|dw| {
                    let xd = xt.data();
                    for r in 0..rows {
                        let grow = &g[r * m..(r + 1) * m];
                        for p in 0..k {
                            let xv = xd[r * k + p];
                            if xv == 0.0 {
                                continue;
                            }
                            for (d, &gv) in dw[p * m..(p + 1) * m].iter_mut().zip(grow) {
                                *d += xv * gv;
                            }
                        }
                    }
                });
            }
            Op::Elementwise(op, a, b) => {
                let (ad, bd) = (val(*a).data(), val(*b).data());
                match op {
                    Binary::Add => {
                        acc(*a, &|d| add_into(d, g));
                        acc(*b, &|d| add_into(d, g));
                    }
                    Binary::Sub => {
                        acc(*a, &|d| add_into(d, g));
                        acc(*b, &|d| d.iter_mut().zip(g).for_each(|(d, g)| *d -= g));
                    }
                    Binary::Mul => {
                        acc(*a, &|d| {
                            for i in 0..d.len() {
                                d[i] += g[i] * bd[i];
                            }
                        });
                        acc(*b, &|d| {
                            for i in 0..d.len() {
                                d[i] += g[i] * ad[i];
                            }
                        });
                    }
                    Binary::Div => {
                        acc(*a, &|d| {
                            for i in 0..d.len() {
                                d[i] += g[i] / bd[i];
                            }
                        });
                        acc(*b, &|d| {
                            for i in 0..d.len() {
                                d[i] -= g[i] * ad[i] / (bd[i] * bd[i]);
                            }
                        });
                    }
                }
            }
            Op::BroadcastLast(op, x, v) => {
                let t = node.value.last_dim();
                let (xd, vd) = (val(*x).data(), val(*v).data());
                match op {
                    Binary::Add | Binary::Sub => {
                        let sign = if matches!(op, Binary::Add) { 1.0 } else { -1.0 };
                        acc(*x, &|d| add_into(d, g));
                        acc(*v, &|d| {
                            for (dv, gr) in d.iter_mut().zip(g.chunks(t)) {
                                *dv += sign * gr.iter().sum::<f64>();
                            }
                        });
                    }
                    Binary::Mul => {
                        acc(*x, &|d| {
                            for ((dr, gr), &s) in d.chunks_mut(t).zip(g.chunks(t)).zip(vd) {
                                dr.iter_mut().zip(gr).for_each(|(d, g)| *d += g * s);
                            }
                        });
                        acc(*v, &|d| {
                            for ((dv, gr), xr) in d.iter_mut().zip(g.chunks(t)).zip(xd.chunks(t))
                            {
                                *dv += gr.iter().zip(xr).map(|(g, x)| g * x).sum::<f64>();
                            }
                        });
                    }
                    Binary::Div => {
                        acc(*x, &|d| {
                            for ((dr, gr), &s) in d.chunks_mut(t).zip(g.chunks(t)).zip(vd) {
                                dr.iter_mut().zip(gr).for_each(|(d, g)| *d += g / s);
                            }
                        });
                        acc(*v, &|d| {
                            for (((dv, gr), xr), &s) in
                                d.iter_mut().zip(g.chunks(t)).zip(xd.chunks(t)).zip(vd)
                            {
                                *dv -= gr.iter().zip(xr).map(|(g, x)| g * x).sum::<f64>()
                                    / (s * s);
                            }
                        });
                    }
                }
            }
            Op::AddRow(x, b) => {
                let m = node.value.last_dim();
                acc(*x, &|d| add_into(d, g));
                acc(*b, &|d| {
                    for gr in g.chunks(m) {
                        add_into(d, gr);
                    }
                });
            }
            Op::Scale(x, c) => acc(*x, &|d| d.iter_mut().zip(g).for_each(|(d, g)| *d += c * g)),
            Op::AddScalar(x) => acc(*x, &|d| add_into(d, g)),
            Op::Sigmoid(x) => {
                let y = node.value.data();
                acc(*x, &|d| {
                    for i in 0..d.len() {
                        d[i] += g[i] * y[i] * (1.0 - y[i]);
                    }
                });
            }
            Op::Tanh(x) => {
                let y = node.value.data();
                acc(*x, &|d| {
                    for i in 0..d.len() {
                        d[i] += g[i] * (1.0 - y[i] * y[i]);
                    }
                });
            }
            Op::Relu(x) => {
                let xd = val(*x).data();
                acc(*x, &|d| {
                    for i in 0..d.len() {
                        if xd[i] > 0.0 {
                            d[i] += g[i];
                        }
                    }
                });
            }
            Op::Sqrt(x) => {
                let y = node.value.data();
                acc(*x, &|d| {
                    for i in 0..d.len() {
                        d[i] += g[i] * 0.5 / y[i];
                    }
                });
            }
            Op::Square(x) => {
                let xd = val(*x).data();
                acc(*x, &|d| {
                    for i in 0..d.len() {
                        d[i] += g[i] * 2.0 * xd[i];
                    }
                });
            }
            Op::SumLast(x) => {
                let t = val(*x).last_dim();
                acc(*x, &|d| {
                    for (dr, &gv) in d.chunks_mut(t).zip(g) {
                        dr.iter_mut().for_each(|d| *d += gv);
                    }
                });
            }
            Op::MeanLast(x) => {
                let t = val(*x).last_dim();
                acc(*x, &|d| {
                    for (dr, &gv) in d.chunks_mut(t).zip(g) {
                        dr.iter_mut().for_each(|d| *d += gv / t as f64);
                    }
                });
            }
            Op::VarLast(x) => {
                let xt = val(*x);
                let t = xt.last_dim();
                acc(*x, &|d| {
                    for ((dr, xr), &gv) in d.chunks_mut(t).zip(xt.data().chunks(t)).zip(g) {
                        let mu = xr.iter().sum::<f64>() / t as f64;
                        for (d, &xv) in dr.iter_mut().zip(xr) {
                            *d += gv * 2.0 * (xv - mu) / t as f64;
                        }
                    }
                });
            }
            Op::StdLast(x) => {
                let xt = val(*x);
                let t = xt.last_dim();
                let sd = node.value.data();
                acc(*x, &|d| {
                    for (((dr, xr), &gv), &s) in
                        d.chunks_mut(t).zip(xt.data().chunks(t)).zip(g).zip(sd)
                    {
                        if s == 0.0 {
                            continue;
                        }
                        let mu = xr.iter().sum::<f64>() / t as f64;
                        for (d, &xv) in dr.iter_mut().zip(xr) {
                            *d += gv * (xv - mu) / (t as f64 * s);
                        }
                    }
                });
            }
            Op::SumAll(x) => acc(*x, &|d| d.iter_mut().for_each(|d| *d += g[0])),
            Op::SwapLastTwo(x) => {
                let s = node.value.shape();
                let r = s.len();
                // node is [..., b, a]; transposing back gives [..., a, b]
                let back = transpose_blocks(g, s[r - 2], s[r - 1]);
                acc(*x, &|d| add_into(d, &back));
            }
            Op::Reshape(x) => acc(*x, &|d| add_into(d, g)),
            Op::Concat(xs, axis) => {
                let s = node.value.shape();
                let outer: usize = s[..*axis].iter().product();
                let inner: usize = s[axis + 1..].iter().product();
                let total = s[*axis] * inner;
                let mut off = 0;
                for &v in xs {
                    let block = val(v).shape()[*axis] * inner;
                    acc(v, &|d| {
                        for o in 0..outer {
                            let src = &g[o * total + off..o * total + off + block];
                            add_into(&mut d[o * block..(o + 1) * block], src);
                        }
                    });
                    off += block;
                }
            }
            Op::SliceLast(x, start) => {
                let m = val(*x).last_dim();
                let len = node.value.last_dim();
                acc(*x, &|d| {
                    for (dr, gr) in d.chunks_mut(m).zip(g.chunks(len)) {
                        add_into(&mut dr[*start..start + len], gr);
                    }
                });
            }
            Op::Select(x, i) => {
                let s = val(*x).shape();
                let r = s.len();
                let (a, b) = (s[r - 2], s[r - 1]);
                acc(*x, &|d| {
                    for (blk, gr) in d.chunks_mut(a * b).zip(g.chunks(b)) {
                        add_into(&mut blk[i * b..(i + 1) * b], gr);
                    }
                });
            }
            Op::StackLast(xs) => {
                let k = xs.len();
                for (j, &v) in xs.iter().enumerate() {
                    acc(v, &|d| {
                        for (i, dv) in d.iter_mut().enumerate() {
                            *dv += g[i * k + j];
                        }
                    });
                }
            }
            Op::DepthwiseConv(x, kernel, bias) => {
                let xt = val(*x);
                let kt = val(*kernel);
                let r = xt.rank();
                let (c, t) = (xt.shape()[r - 2], xt.shape()[r - 1]);
                let k = kt.shape()[1];
                let half = k / 2;
                let (xd, kd) = (xt.data(), kt.data());
                let tap = |ti: usize, j: usize| -> Option<usize> {
                    let src = ti as isize + j as isize - half as isize;
                    (src >= 0 && (src as usize) < t).then_some(src as usize)
                };
                acc(*x, &|dx| {
                    for (dblk, gblk) in dx.chunks_mut(c * t).zip(g.chunks(c * t)) {
                        for ch in 0..c {
                            let kr = &kd[ch * k..(ch + 1) * k];
                            for ti in 0..t {
                                let gv = gblk[ch * t + ti];
                                for (j, &w) in kr.iter().enumerate() {
                                    if let Some(s) = tap(ti, j) {
                                        dblk[ch * t + s] += gv * w;
                                    }
                                }
                            }
                        }
                    }
                });
                acc(*kernel, &|dk| {
                    for (xblk, gblk) in xd.chunks(c * t).zip(g.chunks(c * t)) {
                        for ch in 0..c {
                            for ti in 0..t {
                                let gv = gblk[ch * t + ti];
                                for j in 0..k {
                                    if let Some(s) = tap(ti, j) {
                                        dk[ch * k + j] += gv * xblk[ch * t + s];
                                    }
                                }
                            }
                        }
                    }
                });
                acc(*bias, &|db| {
                    for gblk in g.chunks(c * t) {
                        for ch in 0..c {
                            db[ch] += gblk[ch * t..(ch + 1) * t].iter().sum::<f64>();
                        }
                    }
                });
            }
            Op::Outer(a, b) => {
                let (at, bt) = (val(*a), val(*b));
                let (m, n) = (at.last_dim(), bt.last_dim());
                acc(*a, &|da| {
                    for ((dr, gblk), br) in da
                        .chunks_mut(m)
                        .zip(g.chunks(m * n))
                        .zip(bt.data().chunks(n))
                    {
                        for (i, d) in dr.iter_mut().enumerate() {
                            let grow = &gblk[i * n..(i + 1) * n];
                            *d += grow.iter().zip(br).map(|(g, b)| g * b).sum::<f64>();
                        }
                    }
                });
                acc(*b, &|db| {
                    for ((dr, gblk), ar) in db
                        .chunks_mut(n)
                        .zip(g.chunks(m * n))
                        .zip(at.data().chunks(m))
                    {
                        for (i, &av) in ar.iter().enumerate() {
                            let grow = &gblk[i * n..(i + 1) * n];
                            dr.iter_mut().zip(grow).for_each(|(d, g)| *d += av * g);
                        }
                    }
                });
            }
            Op::Softmax(x) => {
                let k = node.value.last_dim();
                let y = node.value.data();
                acc(*x, &|d| {
                    for ((dr, yr), gr) in d.chunks_mut(k).zip(y.chunks(k)).zip(g.chunks(k)) {
                        let dot: f64 = yr.iter().zip(gr).map(|(y, g)| y * g).sum();
                        for i in 0..k {
                            dr[i] += yr[i] * (gr[i] - dot);
                        }
                    }
                });
            }
            Op::CrossEntropy(p, labels) => {
                let pt = val(*p);
                let k = pt.last_dim();
                let n = labels.len() as f64;
                acc(*p, &|d| {
                    for (i, &y) in labels.iter().enumerate() {
                        d[i * k + y] -= g[0] / (n * pt.data()[i * k + y]);
                    }
                });
            }
            Op::SoftmaxCrossEntropy(logits, labels, probs) => {
                let k = val(*logits).last_dim();
                let n = labels.len() as f64;
                acc(*logits, &|d| {
                    for (i, &y) in labels.iter().enumerate() {
                        for j in 0..k {
                            let onehot = if j == y { 1.0 } else { 0.0 };
                            d[i * k + j] += g[0] * (probs[i * k + j] - onehot) / n;
                        }
                    }
                });
            }
        }
    }
}

fn population_var(r: &[f64]) -> f64 {
    let n = r.len() as f64;
    let mu = r.iter().sum::<f64>() / n;
    r.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n
}

/// Transposes every trailing `a×b` block of `data` into `b×a`.
fn transpose_blocks(data: &[f64], a: usize, b: usize) -> Vec<f64> {
    let mut out = vec![0.0; data.len()];
    for (src, dst) in data.chunks(a * b).zip(out.chunks_mut(a * b)) {
        for i in 0..a {
            for j in 0..b {
                dst[j * a + i] = src[i * b + j];
            }
        }
    }
    out
}

pub(crate) fn softmax_rows(data: &[f64], k: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(data.len());
    for row in data.chunks(k) {
        let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let start = out.len();
        let mut sum = 0.0;
        for &v in row {
            let e = (v - mx).exp();
            sum += e;
            out.push(e);
        }
        out[start..].iter_mut().for_each(|e| *e /= sum);
    }
    out
}
