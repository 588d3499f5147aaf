//! Append-only differentiation tape.
//!
//! Every operation appends a node whose inputs already live on the tape, so
//! node ids are a topological order and [`Graph::backward`] is a single
//! reverse sweep. A fresh graph is built for each forward pass.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::spectral::{FreqMask, Plan2d};

use super::Tensor;

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

/// Sparse row mixing: output row `m` is `Σ_j weight[m][j] · input[index[m][j]]`.
///
/// Used for bilinear resampling of a feature lattice onto a finer grid.
#[derive(Debug, Clone, PartialEq)]
pub struct RowMix {
    pub input_rows: usize,
    pub index: Vec<[u32; 4]>,
    pub weight: Vec<[f64; 4]>,
}

impl RowMix {
    pub fn output_rows(&self) -> usize {
        self.index.len()
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul { a: Var, b: Var, m: usize, k: usize, n: usize },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    MulScalar { x: Var, s: Var },
    AddBias { x: Var, b: Var },
    Sum(Var),
    Mean(Var),
    Reshape(Var),
    Transpose { x: Var, rows: usize, cols: usize },
    Concat { parts: Vec<Var>, outer: usize, inner: usize, lens: Vec<usize> },
    Slice { x: Var, outer: usize, inner: usize, axis_len: usize, start: usize, len: usize },
    Relu(Var),
    Sin { x: Var, dydx: Vec<f64> },
    Softmax { x: Var, outer: usize, axis_len: usize, inner: usize },
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Vec<f64>, inv_std: Vec<f64> },
    SpectralFilter { x: Var, mask: Arc<FreqMask>, channels: usize },
    SpectralL1 { x: Var, dldx: Vec<f64>, sign_hash: u64 },
    RowMix { x: Var, mix: Arc<RowMix>, channels: usize },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul { .. } => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::MulScalar { .. } => "mul_scalar",
            Op::AddBias { .. } => "add_bias",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::Reshape(_) => "reshape",
            Op::Transpose { .. } => "transpose",
            Op::Concat { .. } => "concat",
            Op::Slice { .. } => "slice",
            Op::Relu(_) => "relu",
            Op::Sin { .. } => "sin",
            Op::Softmax { .. } => "softmax",
            Op::LayerNorm { .. } => "layer_norm",
            Op::SpectralFilter { .. } => "spectral_filter",
            Op::SpectralL1 { .. } => "spectral_l1",
            Op::RowMix { .. } => "row_mix",
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
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

    /// All nodes in append order.
    pub fn vars(&self) -> impl Iterator<Item = Var> {
        (0..self.nodes.len()).map(Var)
    }

    /// Adds a leaf; it participates in backward iff `t.requires_grad()`.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    pub fn constant(&mut self, shape: &[usize], data: Vec<f64>) -> Result<Var> {
        Ok(self.leaf(Tensor::new(shape, data)?))
    }

    /// Adds a trainable copy of `t` (gradient starts empty).
    pub fn param(&mut self, t: &Tensor) -> Var {
        let mut copy = t.clone().with_grad();
        copy.zero_grad();
        self.leaf(copy)
    }

    pub fn tensor(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn value(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.data()
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].value.requires_grad()
    }

    /// Accumulated gradient of a leaf after [`Graph::backward`].
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].value.grad()
    }

    pub fn zero_grads(&mut self) {
        for node in &mut self.nodes {
            node.value.zero_grad();
        }
    }

    /// Name of the operation that produced `v`.
    pub fn op_name(&self, v: Var) -> &'static str {
        self.nodes[v.0].op.name()
    }

    /// Input ids of a node; always smaller than the node's own id.
    pub fn inputs(&self, v: Var) -> Vec<Var> {
        match &self.nodes[v.0].op {
            Op::Leaf => vec![],
            Op::MatMul { a, b, .. } => vec![*a, *b],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => vec![*a, *b],
            Op::MulScalar { x, s } => vec![*x, *s],
            Op::AddBias { x, b } => vec![*x, *b],
            Op::LayerNorm { x, gain, bias, .. } => vec![*x, *gain, *bias],
            Op::Concat { parts, .. } => parts.clone(),
            Op::Scale(x, _)
            | Op::Sum(x)
            | Op::Mean(x)
            | Op::Reshape(x)
            | Op::Relu(x)
            | Op::Transpose { x, .. }
            | Op::Slice { x, .. }
            | Op::Sin { x, .. }
            | Op::Softmax { x, .. }
            | Op::SpectralFilter { x, .. }
            | Op::SpectralL1 { x, .. }
            | Op::RowMix { x, .. } => vec![*x],
        }
    }

    /// Hash of every branch decision taken by non-smooth operations (ReLU
    /// signs, magnitude-difference signs). Two evaluations with equal
    /// signatures lie on the same smooth piece.
    pub fn kink_signature(&self) -> u64 {
        let mut h = Fnv::new();
        for node in &self.nodes {
            match &node.op {
                Op::Relu(x) => {
                    for &v in self.nodes[x.0].value.data() {
                        h.write_u8((v > 0.0) as u8);
                    }
                }
                Op::SpectralL1 { sign_hash, .. } => h.write_u64(*sign_hash),
                _ => {}
            }
        }
        h.finish()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn push_result(&mut self, shape: &[usize], data: Vec<f64>, inputs: &[Var], op: Op) -> Var {
        let rg = inputs.iter().any(|v| self.requires_grad(*v));
        let mut t = Tensor::new(shape, data).expect("op produced consistent shape");
        if rg {
            t = t.with_grad();
        }
        self.push(t, op)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    // ---- linear algebra -------------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.value(a), (k, 1), self.value(b), (n, 1), &mut out, (n, 1), 0.0);
        Ok(self.push_result(&[m, n], out, &[a, b], Op::MatMul { a, b, m, k, n }))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x);
        if s.len() != 2 {
            return Err(Error::shape("transpose", s, &[0, 0]));
        }
        let (rows, cols) = (s[0], s[1]);
        let src = self.value(x);
        let mut out = vec![0.0; rows * cols];
        for r in 0..rows {
            for c in 0..cols {
                out[c * rows + r] = src[r * cols + c];
            }
        }
        Ok(self.push_result(&[cols, rows], out, &[x], Op::Transpose { x, rows, cols }))
    }

    // ---- elementwise ----------------------------------------------------

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = zip_map(self.value(a), self.value(b), |x, y| x + y);
        let shape = self.shape(a).to_vec();
        Ok(self.push_result(&shape, out, &[a, b], Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let out = zip_map(self.value(a), self.value(b), |x, y| x - y);
        let shape = self.shape(a).to_vec();
        Ok(self.push_result(&shape, out, &[a, b], Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let out = zip_map(self.value(a), self.value(b), |x, y| x * y);
        let shape = self.shape(a).to_vec();
        Ok(self.push_result(&shape, out, &[a, b], Op::Mul(a, b)))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let out = self.value(x).iter().map(|v| v * c).collect();
        let shape = self.shape(x).to_vec();
        self.push_result(&shape, out, &[x], Op::Scale(x, c))
    }

    /// `s · x` for a single-element node `s`.
    pub fn mul_scalar(&mut self, x: Var, s: Var) -> Result<Var> {
        if self.value(s).len() != 1 {
            return Err(Error::shape("mul_scalar", self.shape(x), self.shape(s)));
        }
        let c = self.value(s)[0];
        let out = self.value(x).iter().map(|v| v * c).collect();
        let shape = self.shape(x).to_vec();
        Ok(self.push_result(&shape, out, &[x, s], Op::MulScalar { x, s }))
    }

    /// Adds `b` (length = last dim of `x`) to every row of `x`.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let sx = self.shape(x);
        let n = *sx.last().expect("non-empty shape");
        let sb = self.shape(b);
        let ok = match sb {
            [len] => *len == n,
            [1, len] => *len == n,
            _ => false,
        };
        if !ok {
            return Err(Error::shape("add_bias", sx, sb));
        }
        let bias = self.value(b);
        let out = self
            .value(x)
            .chunks(n)
            .flat_map(|row| row.iter().zip(bias).map(|(v, c)| v + c))
            .collect();
        let shape = sx.to_vec();
        Ok(self.push_result(&shape, out, &[x, b], Op::AddBias { x, b }))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).iter().map(|&v| v.max(0.0)).collect();
        let shape = self.shape(x).to_vec();
        self.push_result(&shape, out, &[x], Op::Relu(x))
    }

    /// Elementwise `sin(omega0 · x)`.
    pub fn sin_act(&mut self, x: Var, omega0: f64) -> Result<Var> {
        if !(omega0 > 0.0) {
            return Err(Error::config(format!("omega0 must be positive, got {omega0}")));
        }
        let src = self.value(x);
        let mut out = vec![0.0; src.len()];
        let mut dydx = vec![0.0; src.len()];
        super::fastmath::sin_slice(src, omega0, &mut out, &mut dydx);
        let shape = self.shape(x).to_vec();
        Ok(self.push_result(&shape, out, &[x], Op::Sin { x, dydx }))
    }

    // ---- reductions & layout ---------------------------------------------

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).iter().sum();
        self.push_result(&[1], vec![s], &[x], Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let m = v.iter().sum::<f64>() / v.len() as f64;
        self.push_result(&[1], vec![m], &[x], Op::Mean(x))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let n: usize = shape.iter().product();
        if n != self.value(x).len() || shape.contains(&0) {
            return Err(Error::shape("reshape", self.shape(x), shape));
        }
        let out = self.value(x).to_vec();
        Ok(self.push_result(shape, out, &[x], Op::Reshape(x)))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Contract("concat of zero tensors".into()))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(Error::shape("concat", &base, &[axis]));
        }
        let mut lens = Vec::with_capacity(parts.len());
        for p in parts {
            let s = self.shape(*p);
            let compatible = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(d, (a, b))| d == axis || a == b);
            if !compatible {
                return Err(Error::shape("concat", &base, s));
            }
            lens.push(s[axis]);
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let total: usize = lens.iter().sum();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (p, &len) in parts.iter().zip(&lens) {
                let src = self.value(*p);
                out.extend_from_slice(&src[o * len * inner..(o + 1) * len * inner]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let op = Op::Concat {
            parts: parts.to_vec(),
            outer,
            inner,
            lens,
        };
        Ok(self.push_result(&shape, out, parts, op))
    }

    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() || len == 0 || start + len > s[axis] {
            return Err(Error::shape("slice", &s, &[axis, start, len]));
        }
        let outer: usize = s[..axis].iter().product();
        let inner: usize = s[axis + 1..].iter().product();
        let axis_len = s[axis];
        let src = self.value(x);
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * axis_len + start) * inner;
            out.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut shape = s;
        shape[axis] = len;
        let op = Op::Slice {
            x,
            outer,
            inner,
            axis_len,
            start,
            len,
        };
        Ok(self.push_result(&shape, out, &[x], op))
    }

    // ---- normalization ----------------------------------------------------

    /// Max-subtracted softmax along `axis`.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() {
            return Err(Error::shape("softmax", &s, &[axis]));
        }
        let outer: usize = s[..axis].iter().product();
        let inner: usize = s[axis + 1..].iter().product();
        let axis_len = s[axis];
        let src = self.value(x);
        let mut out = vec![0.0; src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |l: usize| (o * axis_len + l) * inner + i;
                let max = (0..axis_len).map(|l| src[at(l)]).fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for l in 0..axis_len {
                    let e = (src[at(l)] - max).exp();
                    out[at(l)] = e;
                    total += e;
                }
                for l in 0..axis_len {
                    out[at(l)] /= total;
                }
            }
        }
        let op = Op::Softmax {
            x,
            outer,
            axis_len,
            inner,
        };
        Ok(self.push_result(&s, out, &[x], op))
    }

    /// Normalizes over the last axis, then applies `gain ⊙ x̂ + bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        if !(eps > 0.0) {
            return Err(Error::config(format!("layer norm eps must be positive, got {eps}")));
        }
        let s = self.shape(x).to_vec();
        let n = *s.last().expect("non-empty shape");
        if self.value(gain).len() != n || self.value(bias).len() != n {
            return Err(Error::shape("layer_norm", &s, self.shape(gain)));
        }
        let src = self.value(x);
        let (g, b) = (self.value(gain), self.value(bias));
        let rows = src.len() / n;
        let mut out = vec![0.0; src.len()];
        let mut xhat = vec![0.0; src.len()];
        let mut inv_std = vec![0.0; rows];
        for r in 0..rows {
            let row = &src[r * n..(r + 1) * n];
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[r] = is;
            for j in 0..n {
                let xh = (row[j] - mean) * is;
                xhat[r * n + j] = xh;
                out[r * n + j] = g[j] * xh + b[j];
            }
        }
        let op = Op::LayerNorm {
            x,
            gain,
            bias,
            xhat,
            inv_std,
        };
        Ok(self.push_result(&s, out, &[x, gain, bias], op))
    }

    // ---- spectral -----------------------------------------------------------

    /// Applies an ideal frequency mask to every column of a
    /// `[mask.height * mask.width, C]` matrix.
    pub fn spectral_filter(&mut self, x: Var, mask: Arc<FreqMask>) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 || s[0] != mask.height * mask.width {
            return Err(Error::shape("spectral_filter", &s, &[mask.height, mask.width]));
        }
        let channels = s[1];
        let out = crate::spectral::filter_channels(self.value(x), channels, &mask)?;
        Ok(self.push_result(&s, out, &[x], Op::SpectralFilter { x, mask, channels }))
    }

    /// `Σ_k | |X_k| − |T_k| | / (HW)` where `X`, `T` are the unnormalized
    /// 2D spectra of `x` and `target` read as `height × width` grids.
    pub fn spectral_l1(&mut self, x: Var, target: &[f64], height: usize, width: usize) -> Result<Var> {
        let cells = height * width;
        if self.value(x).len() != cells || target.len() != cells {
            return Err(Error::shape("spectral_l1", self.shape(x), &[height, width]));
        }
        let plan = Plan2d::new(height, width);
        let xs = plan.forward_real(self.value(x));
        let ts = plan.forward_real(target);
        let norm = 1.0 / cells as f64;
        let mut loss = 0.0;
        let mut dir = crate::spectral::ComplexGrid::zeros(height, width);
        let mut hash = Fnv::new();
        for k in 0..cells {
            let mx = xs.re[k].hypot(xs.im[k]);
            let mt = ts.re[k].hypot(ts.im[k]);
            let d = mx - mt;
            loss += d.abs();
            let sign = if d > 0.0 {
                1.0
            } else if d < 0.0 {
                -1.0
            } else {
                0.0
            };
            hash.write_u8((sign + 1.0) as u8);
            if mx > 0.0 && sign != 0.0 {
                let w = sign * norm / mx;
                dir.re[k] = w * xs.re[k];
                dir.im[k] = w * xs.im[k];
            }
        }
        // dL/dx_n = Re(Σ_k G_k e^{+2πi kn/N}): an unnormalized inverse.
        plan.process(&mut dir, true);
        let dldx = dir.re;
        let op = Op::SpectralL1 {
            x,
            dldx,
            sign_hash: hash.finish(),
        };
        Ok(self.push_result(&[1], vec![loss * norm], &[x], op))
    }

    /// `[N, C]` → `[M, C]` by sparse row mixing.
    pub fn row_mix(&mut self, x: Var, mix: Arc<RowMix>) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 || s[0] != mix.input_rows {
            return Err(Error::shape("row_mix", &s, &[mix.input_rows]));
        }
        let c = s[1];
        let src = self.value(x);
        let mut out = vec![0.0; mix.output_rows() * c];
        for (m, (idx, w)) in mix.index.iter().zip(&mix.weight).enumerate() {
            let dst = &mut out[m * c..(m + 1) * c];
            for j in 0..4 {
                if w[j] == 0.0 {
                    continue;
                }
                let row = &src[idx[j] as usize * c..(idx[j] as usize + 1) * c];
                dst.iter_mut().zip(row).for_each(|(d, v)| *d += w[j] * v);
            }
        }
        let rows = mix.output_rows();
        Ok(self.push_result(&[rows, c], out, &[x], Op::RowMix { x, mix, channels: c }))
    }

    // ---- backward -------------------------------------------------------------

    /// Reverse sweep from a scalar `loss`. Leaf gradients accumulate across
    /// calls until [`Graph::zero_grads`].
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        if !self.requires_grad(loss) {
            return Ok(());
        }
        let mut adj: Vec<Option<Vec<f64>>> = (0..=loss.0).map(|_| None).collect();
        adj[loss.0] = Some(vec![1.0]);
        let mut leaf_grads = Vec::new();
        for i in (0..=loss.0).rev() {
            let Some(gy) = adj[i].take() else { continue };
            if matches!(self.nodes[i].op, Op::Leaf) {
                leaf_grads.push((i, gy));
                continue;
            }
            self.backward_node(i, &gy, &mut adj)?;
        }
        for (i, g) in leaf_grads {
            self.nodes[i].value.accumulate_grad(&g);
        }
        Ok(())
    }

    fn backward_node(&self, i: usize, gy: &[f64], adj: &mut [Option<Vec<f64>>]) -> Result<()> {
        let node = &self.nodes[i];
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !self.requires_grad(v) {
                return;
            }
            let slot = adj[v.0].get_or_insert_with(|| vec![0.0; self.value(v).len()]);
            f(slot);
        };
        match &node.op {
            Op::Leaf => {}
            &Op::MatMul { a, b, m, k, n } => {
                acc(a, &mut |da| {
                    gemm(m, n, k, gy, (n, 1), self.value(b), (1, n), da, (k, 1), 1.0)
                });
                acc(b, &mut |db| {
                    gemm(k, m, n, self.value(a), (1, k), gy, (n, 1), db, (n, 1), 1.0)
                });
            }
            &Op::Add(a, b) => {
                acc(a, &mut |d| add_into(d, gy));
                acc(b, &mut |d| add_into(d, gy));
            }
            &Op::Sub(a, b) => {
                acc(a, &mut |d| add_into(d, gy));
                acc(b, &mut |d| d.iter_mut().zip(gy).for_each(|(d, g)| *d -= g));
            }
            &Op::Mul(a, b) => {
                let (va, vb) = (self.value(a), self.value(b));
                acc(a, &mut |d| {
                    for j in 0..d.len() {
                        d[j] += gy[j] * vb[j];
                    }
                });
                acc(b, &mut |d| {
                    for j in 0..d.len() {
                        d[j] += gy[j] * va[j];
                    }
                });
            }
            &Op::Scale(x, c) => acc(x, &mut |d| d.iter_mut().zip(gy).for_each(|(d, g)| *d += c * g)),
            &Op::MulScalar { x, s } => {
                let c = self.value(s)[0];
                let vx = self.value(x);
                acc(x, &mut |d| d.iter_mut().zip(gy).for_each(|(d, g)| *d += c * g));
                acc(s, &mut |d| d[0] += vx.iter().zip(gy).map(|(v, g)| v * g).sum::<f64>());
            }
            &Op::AddBias { x, b } => {
                acc(x, &mut |d| add_into(d, gy));
                acc(b, &mut |d| {
                    let n = d.len();
                    for row in gy.chunks(n) {
                        add_into(d, row);
                    }
                });
            }
            &Op::Sum(x) => acc(x, &mut |d| d.iter_mut().for_each(|v| *v += gy[0])),
            &Op::Mean(x) => {
                let n = self.value(x).len() as f64;
                acc(x, &mut |d| d.iter_mut().for_each(|v| *v += gy[0] / n))
            }
            &Op::Reshape(x) => acc(x, &mut |d| add_into(d, gy)),
            &Op::Transpose { x, rows, cols } => acc(x, &mut |d| {
                for r in 0..rows {
                    for c in 0..cols {
                        d[r * cols + c] += gy[c * rows + r];
                    }
                }
            }),
            Op::Concat {
                parts,
                outer,
                inner,
                lens,
            } => {
                let total: usize = lens.iter().sum();
                let mut offset = 0;
                for (p, &len) in parts.iter().zip(lens) {
                    acc(*p, &mut |d| {
                        for o in 0..*outer {
                            let src = (o * total + offset) * inner;
                            let dst = o * len * inner;
                            add_into(&mut d[dst..dst + len * inner], &gy[src..src + len * inner]);
                        }
                    });
                    offset += len;
                }
            }
            &Op::Slice {
                x,
                outer,
                inner,
                axis_len,
                start,
                len,
            } => acc(x, &mut |d| {
                for o in 0..outer {
                    let dst = (o * axis_len + start) * inner;
                    let src = o * len * inner;
                    add_into(&mut d[dst..dst + len * inner], &gy[src..src + len * inner]);
                }
            }),
            &Op::Relu(x) => {
                let vx = self.value(x);
                acc(x, &mut |d| {
                    for j in 0..d.len() {
                        if vx[j] > 0.0 {
                            d[j] += gy[j];
                        }
                    }
                })
            }
            Op::Sin { x, dydx } => acc(*x, &mut |d| {
                for j in 0..d.len() {
                    d[j] += gy[j] * dydx[j];
                }
            }),
            &Op::Softmax {
                x,
                outer,
                axis_len,
                inner,
            } => {
                let y = node.value.data();
                acc(x, &mut |d| {
                    for o in 0..outer {
                        for ii in 0..inner {
                            let at = |l: usize| (o * axis_len + l) * inner + ii;
                            let dot: f64 = (0..axis_len).map(|l| gy[at(l)] * y[at(l)]).sum();
                            for l in 0..axis_len {
                                d[at(l)] += y[at(l)] * (gy[at(l)] - dot);
                            }
                        }
                    }
                })
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let g = self.value(*gain);
                let n = g.len();
                acc(*x, &mut |d| {
                    let mut dxhat = vec![0.0; n];
                    for (r, &is) in inv_std.iter().enumerate() {
                        let span = r * n..(r + 1) * n;
                        for j in 0..n {
                            dxhat[j] = gy[span.start + j] * g[j];
                        }
                        let xh = &xhat[span.clone()];
                        let mean_d = dxhat.iter().sum::<f64>() / n as f64;
                        let mean_dx = dxhat.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / n as f64;
                        for j in 0..n {
                            d[span.start + j] += is * (dxhat[j] - mean_d - xh[j] * mean_dx);
                        }
                    }
                });
                acc(*gain, &mut |d| {
                    for (row_g, row_x) in gy.chunks(n).zip(xhat.chunks(n)) {
                        for j in 0..n {
                            d[j] += row_g[j] * row_x[j];
                        }
                    }
                });
                acc(*bias, &mut |d| {
                    for row in gy.chunks(n) {
                        add_into(d, row);
                    }
                });
            }
            Op::SpectralFilter { x, mask, channels } => {
                // An ideal real symmetric mask is self-adjoint.
                let back = crate::spectral::filter_channels(gy, *channels, mask)?;
                acc(*x, &mut |d| add_into(d, &back));
            }
            Op::SpectralL1 { x, dldx, .. } => acc(*x, &mut |d| {
                for j in 0..d.len() {
                    d[j] += gy[0] * dldx[j];
                }
            }),
            Op::RowMix { x, mix, channels } => {
                let c = *channels;
                acc(*x, &mut |d| {
                    for (m, (idx, w)) in mix.index.iter().zip(&mix.weight).enumerate() {
                        let g = &gy[m * c..(m + 1) * c];
                        for j in 0..4 {
                            if w[j] == 0.0 {
                                continue;
                            }
                            let base = idx[j] as usize * c;
                            for (dv, gv) in d[base..base + c].iter_mut().zip(g) {
                                *dv += w[j] * gv;
                            }
                        }
                    }
                })
            }
        }
        Ok(())
    }
}

fn zip_map(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| f(*x, *y)).collect()
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
}

/// `c = a·b + beta·c` for strided `m×k` and `k×n` operands.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    c: &mut [f64],
    (rsc, csc): (usize, usize),
    beta: f64,
) {
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    // SAFETY: the slices cover every element addressed by the given
    // dimensions and strides, and `c` does not alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

struct Fnv(u64);

impl Fnv {
    fn new() -> Self {
        Fnv(0xcbf2_9ce4_8422_2325)
    }

    fn write_u8(&mut self, b: u8) {
        self.0 ^= b as u64;
        self.0 = self.0.wrapping_mul(0x0100_0000_01b3);
    }

    fn write_u64(&mut self, v: u64) {
        for b in v.to_le_bytes() {
            self.write_u8(b);
        }
    }

    fn finish(&self) -> u64 {
        self.0
    }
}
