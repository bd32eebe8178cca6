//! Reverse-mode tape over dense row-major tensors.
//!
//! The tape is an arena of nodes; every operation appends one node that
//! records its inputs by index, so node order is already a topological order
//! and the backward sweep visits each node exactly once in reverse. All
//! reductions run left to right so forward results are bit-identical across
//! runs. There is no broadcasting beyond the shapes each op documents and no
//! graph rewriting: the model this engine serves is small and fixed, and
//! checkability matters more than throughput.

use crate::error::{HopeError, Result};
use crate::real::Real;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TensorId(pub(crate) usize);

/// One recorded value: data, shape, and the op that produced it.
#[derive(Debug, Clone)]
pub struct Tensor<T> {
    pub shape: Vec<usize>,
    pub data: Vec<T>,
    pub requires_grad: bool,
    pub grad: Option<Vec<T>>,
    op: Op<T>,
}

impl<T: Real> Tensor<T> {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    Matmul { a: usize, b: usize },
    Add { a: usize, b: usize },
    AddBias { x: usize, bias: usize },
    Mul { a: usize, b: usize },
    MulConst { x: usize, c: Vec<T> },
    ScaleConst { x: usize, k: T },
    MulScalar { x: usize, s: usize },
    Neg { x: usize },
    Exp { x: usize },
    Relu { x: usize },
    Sigmoid { x: usize },
    LayerNorm { x: usize, gamma: usize, beta: usize, eps: T },
    CosineRows { x: usize, p: usize, eps: T },
    ConcatCols { parts: Vec<usize> },
    ScaleRows { x: usize, w: usize },
    SoftmaxRows { x: usize },
    SelectCol { x: usize, col: usize },
    SumAll { x: usize },
    MeanAll { x: usize },
    CrossEntropy { logits: usize, labels: Vec<usize> },
    GatherRows { x: usize, rows: Vec<usize> },
    ScatterRows { x: usize, rows: Vec<usize> },
}

fn sigmoid_stable<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Interpret a tensor as rows x cols: rank-2 as is, rank-1 as a single row.
fn as_rows<T: Real>(t: &Tensor<T>) -> Option<(usize, usize)> {
    match t.shape.len() {
        1 => Some((1, t.shape[0])),
        2 => Some((t.shape[0], t.shape[1])),
        _ => None,
    }
}

pub struct Tape<T> {
    nodes: Vec<Tensor<T>>,
    inject_backward_fault: bool,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            inject_backward_fault: false,
        }
    }

    /// Negative-control hook for the gradient checker: corrupts one backward
    /// rule (the matmul right-operand adjoint) so a checker that cannot
    /// detect it is itself broken.
    pub fn inject_backward_fault(&mut self, on: bool) {
        self.inject_backward_fault = on;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, data: Vec<T>, shape: Vec<usize>, requires_grad: bool) -> TensorId {
        let numel: usize = shape.iter().product();
        assert_eq!(data.len(), numel, "leaf data length must match shape");
        self.push(data, shape, requires_grad, Op::Leaf)
    }

    pub fn zeros(&mut self, shape: Vec<usize>) -> TensorId {
        let numel: usize = shape.iter().product();
        self.leaf(vec![T::zero(); numel], shape, false)
    }

    pub fn tensor(&self, id: TensorId) -> &Tensor<T> {
        &self.nodes[id.0]
    }

    pub fn value(&self, id: TensorId) -> &[T] {
        &self.nodes[id.0].data
    }

    pub fn scalar_value(&self, id: TensorId) -> T {
        debug_assert_eq!(self.nodes[id.0].numel(), 1);
        self.nodes[id.0].data[0]
    }

    pub fn shape(&self, id: TensorId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    pub fn grad(&self, id: TensorId) -> Option<&[T]> {
        self.nodes[id.0].grad.as_deref()
    }

    fn push(&mut self, data: Vec<T>, shape: Vec<usize>, requires_grad: bool, op: Op<T>) -> TensorId {
        self.nodes.push(Tensor {
            shape,
            data,
            requires_grad,
            grad: None,
            op,
        });
        TensorId(self.nodes.len() - 1)
    }

    fn derived(&mut self, data: Vec<T>, shape: Vec<usize>, op: Op<T>, inputs: &[usize]) -> TensorId {
        let requires_grad = inputs.iter().any(|&i| self.nodes[i].requires_grad);
        self.push(data, shape, requires_grad, op)
    }

    // ── forward ops ──────────────────────────────────────────────────

    /// a[m,k] @ b[k,n] -> [m,n]
    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (sa, sb) = (&self.nodes[a.0].shape, &self.nodes[b.0].shape);
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(HopeError::ShapeMismatch {
                op: "matmul",
                lhs: sa.clone(),
                rhs: sb.clone(),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let da = &self.nodes[a.0].data;
        let db = &self.nodes[b.0].data;
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            for j in 0..n {
                let mut s = T::zero();
                for p in 0..k {
                    s += da[i * k + p] * db[p * n + j];
                }
                out[i * n + j] = s;
            }
        }
        Ok(self.derived(out, vec![m, n], Op::Matmul { a: a.0, b: b.0 }, &[a.0, b.0]))
    }

    /// Elementwise sum of two same-shape tensors.
    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        if self.nodes[a.0].shape != self.nodes[b.0].shape {
            return Err(HopeError::ShapeMismatch {
                op: "add",
                lhs: self.nodes[a.0].shape.clone(),
                rhs: self.nodes[b.0].shape.clone(),
            });
        }
        let data: Vec<T> = self.nodes[a.0]
            .data
            .iter()
            .zip(&self.nodes[b.0].data)
            .map(|(&x, &y)| x + y)
            .collect();
        let shape = self.nodes[a.0].shape.clone();
        Ok(self.derived(data, shape, Op::Add { a: a.0, b: b.0 }, &[a.0, b.0]))
    }

    /// x[b,d] + bias[d], bias added to every row.
    pub fn add_bias(&mut self, x: TensorId, bias: TensorId) -> Result<TensorId> {
        let sx = self.nodes[x.0].shape.clone();
        let sb = self.nodes[bias.0].shape.clone();
        if sx.len() != 2 || sb.len() != 1 || sx[1] != sb[0] {
            return Err(HopeError::ShapeMismatch {
                op: "add_bias",
                lhs: sx,
                rhs: sb,
            });
        }
        let (b, d) = (sx[0], sx[1]);
        let mut data = self.nodes[x.0].data.clone();
        for v in 0..b {
            for j in 0..d {
                data[v * d + j] += self.nodes[bias.0].data[j];
            }
        }
        Ok(self.derived(data, sx, Op::AddBias { x: x.0, bias: bias.0 }, &[x.0, bias.0]))
    }

    /// Elementwise product of two same-shape tensors.
    pub fn mul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        if self.nodes[a.0].shape != self.nodes[b.0].shape {
            return Err(HopeError::ShapeMismatch {
                op: "mul",
                lhs: self.nodes[a.0].shape.clone(),
                rhs: self.nodes[b.0].shape.clone(),
            });
        }
        let data: Vec<T> = self.nodes[a.0]
            .data
            .iter()
            .zip(&self.nodes[b.0].data)
            .map(|(&x, &y)| x * y)
            .collect();
        let shape = self.nodes[a.0].shape.clone();
        Ok(self.derived(data, shape, Op::Mul { a: a.0, b: b.0 }, &[a.0, b.0]))
    }

    /// Elementwise product with a constant array (not a tape node).
    /// The constant is treated as having zero gradient; this is how the
    /// detached selection mask enters the graph.
    pub fn mul_const(&mut self, x: TensorId, c: Vec<T>) -> Result<TensorId> {
        if self.nodes[x.0].data.len() != c.len() {
            return Err(HopeError::ShapeMismatch {
                op: "mul_const",
                lhs: self.nodes[x.0].shape.clone(),
                rhs: vec![c.len()],
            });
        }
        let data: Vec<T> = self.nodes[x.0]
            .data
            .iter()
            .zip(&c)
            .map(|(&x, &y)| x * y)
            .collect();
        let shape = self.nodes[x.0].shape.clone();
        Ok(self.derived(data, shape, Op::MulConst { x: x.0, c }, &[x.0]))
    }

    /// Multiply every element by a compile-time-known scalar constant.
    pub fn scale_const(&mut self, x: TensorId, k: T) -> TensorId {
        let data: Vec<T> = self.nodes[x.0].data.iter().map(|&v| v * k).collect();
        let shape = self.nodes[x.0].shape.clone();
        self.derived(data, shape, Op::ScaleConst { x: x.0, k }, &[x.0])
    }

    /// Multiply every element of x by a one-element tensor s (differentiable
    /// in both arguments).
    pub fn mul_scalar(&mut self, x: TensorId, s: TensorId) -> Result<TensorId> {
        if self.nodes[s.0].numel() != 1 {
            return Err(HopeError::ShapeMismatch {
                op: "mul_scalar",
                lhs: self.nodes[x.0].shape.clone(),
                rhs: self.nodes[s.0].shape.clone(),
            });
        }
        let sv = self.nodes[s.0].data[0];
        let data: Vec<T> = self.nodes[x.0].data.iter().map(|&v| v * sv).collect();
        let shape = self.nodes[x.0].shape.clone();
        Ok(self.derived(data, shape, Op::MulScalar { x: x.0, s: s.0 }, &[x.0, s.0]))
    }

    pub fn neg(&mut self, x: TensorId) -> TensorId {
        let data: Vec<T> = self.nodes[x.0].data.iter().map(|&v| -v).collect();
        let shape = self.nodes[x.0].shape.clone();
        self.derived(data, shape, Op::Neg { x: x.0 }, &[x.0])
    }

    pub fn exp(&mut self, x: TensorId) -> TensorId {
        let data: Vec<T> = self.nodes[x.0].data.iter().map(|&v| v.exp()).collect();
        let shape = self.nodes[x.0].shape.clone();
        self.derived(data, shape, Op::Exp { x: x.0 }, &[x.0])
    }

    pub fn relu(&mut self, x: TensorId) -> TensorId {
        let data: Vec<T> = self.nodes[x.0]
            .data
            .iter()
            .map(|&v| if v > T::zero() { v } else { T::zero() })
            .collect();
        let shape = self.nodes[x.0].shape.clone();
        self.derived(data, shape, Op::Relu { x: x.0 }, &[x.0])
    }

    pub fn sigmoid(&mut self, x: TensorId) -> TensorId {
        let data: Vec<T> = self.nodes[x.0].data.iter().map(|&v| sigmoid_stable(v)).collect();
        let shape = self.nodes[x.0].shape.clone();
        self.derived(data, shape, Op::Sigmoid { x: x.0 }, &[x.0])
    }

    /// Per-row normalization of x[b,d] to mean 0 / variance 1, then affine
    /// gamma/beta. Population variance (divide by d), eps inside the sqrt.
    pub fn layer_norm(&mut self, x: TensorId, gamma: TensorId, beta: TensorId, eps: T) -> Result<TensorId> {
        let sx = self.nodes[x.0].shape.clone();
        if sx.len() != 2 {
            return Err(HopeError::ShapeMismatch {
                op: "layer_norm",
                lhs: sx,
                rhs: vec![],
            });
        }
        let (b, d) = (sx[0], sx[1]);
        for other in [gamma, beta] {
            let so = &self.nodes[other.0].shape;
            if so.len() != 1 || so[0] != d {
                return Err(HopeError::ShapeMismatch {
                    op: "layer_norm",
                    lhs: sx.clone(),
                    rhs: so.clone(),
                });
            }
        }
        let dd = T::from_f64(d as f64);
        let mut out = vec![T::zero(); b * d];
        for v in 0..b {
            let row = &self.nodes[x.0].data[v * d..(v + 1) * d];
            let mut mean = T::zero();
            for &e in row {
                mean += e;
            }
            mean = mean / dd;
            let mut var = T::zero();
            for &e in row {
                let c = e - mean;
                var += c * c;
            }
            var = var / dd;
            let inv_std = T::one() / (var + eps).sqrt();
            for j in 0..d {
                let xhat = (row[j] - mean) * inv_std;
                out[v * d + j] = self.nodes[gamma.0].data[j] * xhat + self.nodes[beta.0].data[j];
            }
        }
        Ok(self.derived(
            out,
            sx,
            Op::LayerNorm {
                x: x.0,
                gamma: gamma.0,
                beta: beta.0,
                eps,
            },
            &[x.0, gamma.0, beta.0],
        ))
    }

    /// Cosine of every row of x[b,d] (rank-1 x is treated as one row)
    /// against p[d], with eps added to both norms. Zero vectors score ~0.
    pub fn cosine_rows(&mut self, x: TensorId, p: TensorId, eps: T) -> Result<TensorId> {
        let (b, d) = as_rows(&self.nodes[x.0]).ok_or_else(|| HopeError::ShapeMismatch {
            op: "cosine_rows",
            lhs: self.nodes[x.0].shape.clone(),
            rhs: self.nodes[p.0].shape.clone(),
        })?;
        let sp = &self.nodes[p.0].shape;
        if sp.len() != 1 || sp[0] != d {
            return Err(HopeError::ShapeMismatch {
                op: "cosine_rows",
                lhs: self.nodes[x.0].shape.clone(),
                rhs: sp.clone(),
            });
        }
        let pdat = &self.nodes[p.0].data;
        let mut pn = T::zero();
        for &e in pdat {
            pn += e * e;
        }
        let pn = pn.sqrt();
        let mut out = vec![T::zero(); b];
        for v in 0..b {
            let row = &self.nodes[x.0].data[v * d..(v + 1) * d];
            let mut dot = T::zero();
            let mut xn = T::zero();
            for j in 0..d {
                dot += row[j] * pdat[j];
                xn += row[j] * row[j];
            }
            let xn = xn.sqrt();
            out[v] = dot / ((xn + eps) * (pn + eps));
        }
        Ok(self.derived(
            out,
            vec![b],
            Op::CosineRows {
                x: x.0,
                p: p.0,
                eps,
            },
            &[x.0, p.0],
        ))
    }

    /// Column-concatenate tensors [b,d_i] into [b, sum d_i], blocks in
    /// argument order.
    pub fn concat_cols(&mut self, parts: &[TensorId]) -> Result<TensorId> {
        if parts.is_empty() {
            return Err(HopeError::Contract("concat_cols of zero tensors".into()));
        }
        let b = self.nodes[parts[0].0].shape[0];
        let mut total = 0;
        for &p in parts {
            let sp = &self.nodes[p.0].shape;
            if sp.len() != 2 || sp[0] != b {
                return Err(HopeError::ShapeMismatch {
                    op: "concat_cols",
                    lhs: self.nodes[parts[0].0].shape.clone(),
                    rhs: sp.clone(),
                });
            }
            total += sp[1];
        }
        let mut out = vec![T::zero(); b * total];
        for v in 0..b {
            let mut off = 0;
            for &p in parts {
                let d = self.nodes[p.0].shape[1];
                for j in 0..d {
                    out[v * total + off + j] = self.nodes[p.0].data[v * d + j];
                }
                off += d;
            }
        }
        let idx: Vec<usize> = parts.iter().map(|p| p.0).collect();
        Ok(self.derived(out, vec![b, total], Op::ConcatCols { parts: idx.clone() }, &idx))
    }

    /// Scale row v of x[b,d] by w[v].
    pub fn scale_rows(&mut self, x: TensorId, w: TensorId) -> Result<TensorId> {
        let sx = self.nodes[x.0].shape.clone();
        let sw = self.nodes[w.0].shape.clone();
        if sx.len() != 2 || sw.len() != 1 || sw[0] != sx[0] {
            return Err(HopeError::ShapeMismatch {
                op: "scale_rows",
                lhs: sx,
                rhs: sw,
            });
        }
        let (b, d) = (sx[0], sx[1]);
        let mut out = vec![T::zero(); b * d];
        for v in 0..b {
            let wv = self.nodes[w.0].data[v];
            for j in 0..d {
                out[v * d + j] = self.nodes[x.0].data[v * d + j] * wv;
            }
        }
        Ok(self.derived(out, sx, Op::ScaleRows { x: x.0, w: w.0 }, &[x.0, w.0]))
    }

    /// Row-wise softmax of x[b,m], stabilized by row-max subtraction.
    pub fn softmax_rows(&mut self, x: TensorId) -> Result<TensorId> {
        let sx = self.nodes[x.0].shape.clone();
        if sx.len() != 2 {
            return Err(HopeError::ShapeMismatch {
                op: "softmax_rows",
                lhs: sx,
                rhs: vec![],
            });
        }
        let (b, m) = (sx[0], sx[1]);
        let mut out = vec![T::zero(); b * m];
        for v in 0..b {
            let row = &self.nodes[x.0].data[v * m..(v + 1) * m];
            let mut mx = row[0];
            for &e in row {
                mx = mx.max(e);
            }
            let mut z = T::zero();
            for &e in row {
                z += (e - mx).exp();
            }
            for j in 0..m {
                out[v * m + j] = (row[j] - mx).exp() / z;
            }
        }
        Ok(self.derived(out, sx, Op::SoftmaxRows { x: x.0 }, &[x.0]))
    }

    /// Column j of x[b,m] as a [b] tensor.
    pub fn select_col(&mut self, x: TensorId, col: usize) -> Result<TensorId> {
        let sx = self.nodes[x.0].shape.clone();
        if sx.len() != 2 || col >= sx[1] {
            return Err(HopeError::ShapeMismatch {
                op: "select_col",
                lhs: sx,
                rhs: vec![col],
            });
        }
        let (b, m) = (sx[0], sx[1]);
        let data: Vec<T> = (0..b).map(|v| self.nodes[x.0].data[v * m + col]).collect();
        Ok(self.derived(data, vec![b], Op::SelectCol { x: x.0, col }, &[x.0]))
    }

    /// Sum of all elements -> scalar [1].
    pub fn sum(&mut self, x: TensorId) -> TensorId {
        let mut s = T::zero();
        for &v in &self.nodes[x.0].data {
            s += v;
        }
        self.derived(vec![s], vec![1], Op::SumAll { x: x.0 }, &[x.0])
    }

    /// Mean of all elements -> scalar [1].
    pub fn mean(&mut self, x: TensorId) -> TensorId {
        let n = self.nodes[x.0].data.len();
        let mut s = T::zero();
        for &v in &self.nodes[x.0].data {
            s += v;
        }
        let m = s / T::from_f64(n as f64);
        self.derived(vec![m], vec![1], Op::MeanAll { x: x.0 }, &[x.0])
    }

    /// Mean over the batch of -log softmax(logits)[label], stabilized by
    /// row-max subtraction.
    pub fn cross_entropy(&mut self, logits: TensorId, labels: &[usize]) -> Result<TensorId> {
        let sl = self.nodes[logits.0].shape.clone();
        if sl.len() != 2 || sl[0] != labels.len() {
            return Err(HopeError::ShapeMismatch {
                op: "cross_entropy",
                lhs: sl,
                rhs: vec![labels.len()],
            });
        }
        let (b, c) = (sl[0], sl[1]);
        for &l in labels {
            if l >= c {
                return Err(HopeError::LabelOutOfRange { label: l, classes: c });
            }
        }
        let mut total = T::zero();
        for v in 0..b {
            let row = &self.nodes[logits.0].data[v * c..(v + 1) * c];
            let mut mx = row[0];
            for &e in row {
                mx = mx.max(e);
            }
            let mut lse = T::zero();
            for &e in row {
                lse += (e - mx).exp();
            }
            let lse = lse.ln() + mx;
            total += lse - row[labels[v]];
        }
        let loss = total / T::from_f64(b as f64);
        Ok(self.derived(
            vec![loss],
            vec![1],
            Op::CrossEntropy {
                logits: logits.0,
                labels: labels.to_vec(),
            },
            &[logits.0],
        ))
    }

    /// Gather rows of x[b,d] into [rows.len(), d].
    pub fn gather_rows(&mut self, x: TensorId, rows: &[usize]) -> Result<TensorId> {
        let sx = self.nodes[x.0].shape.clone();
        if sx.len() != 2 {
            return Err(HopeError::ShapeMismatch {
                op: "gather_rows",
                lhs: sx,
                rhs: vec![rows.len()],
            });
        }
        let (b, d) = (sx[0], sx[1]);
        for &r in rows {
            if r >= b {
                return Err(HopeError::IndexOutOfRange { index: r, len: b });
            }
        }
        let mut out = vec![T::zero(); rows.len() * d];
        for (i, &r) in rows.iter().enumerate() {
            out[i * d..(i + 1) * d].copy_from_slice(&self.nodes[x.0].data[r * d..(r + 1) * d]);
        }
        Ok(self.derived(
            out,
            vec![rows.len(), d],
            Op::GatherRows {
                x: x.0,
                rows: rows.to_vec(),
            },
            &[x.0],
        ))
    }

    /// Scatter rows of x[k,d] into a zero [out_rows, d] tensor at the given
    /// (distinct) row indices.
    pub fn scatter_rows(&mut self, x: TensorId, rows: &[usize], out_rows: usize) -> Result<TensorId> {
        let sx = self.nodes[x.0].shape.clone();
        if sx.len() != 2 || sx[0] != rows.len() {
            return Err(HopeError::ShapeMismatch {
                op: "scatter_rows",
                lhs: sx,
                rhs: vec![rows.len()],
            });
        }
        let d = sx[1];
        for &r in rows {
            if r >= out_rows {
                return Err(HopeError::IndexOutOfRange {
                    index: r,
                    len: out_rows,
                });
            }
        }
        let mut out = vec![T::zero(); out_rows * d];
        for (i, &r) in rows.iter().enumerate() {
            out[r * d..(r + 1) * d].copy_from_slice(&self.nodes[x.0].data[i * d..(i + 1) * d]);
        }
        Ok(self.derived(
            out,
            vec![out_rows, d],
            Op::ScatterRows {
                x: x.0,
                rows: rows.to_vec(),
            },
            &[x.0],
        ))
    }

    // ── backward ─────────────────────────────────────────────────────

    /// Accumulate gradients of a scalar loss into every node. Multiple uses
    /// of a node sum their contributions; calling backward twice on the same
    /// tape keeps accumulating.
    pub fn backward(&mut self, loss: TensorId) -> Result<()> {
        if self.nodes[loss.0].numel() != 1 {
            return Err(HopeError::Contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.nodes[loss.0].shape
            )));
        }
        for node in &mut self.nodes {
            if node.grad.is_none() {
                node.grad = Some(vec![T::zero(); node.data.len()]);
            }
        }
        if let Some(g) = self.nodes[loss.0].grad.as_mut() {
            g[0] += T::one();
        }

        for i in (0..self.nodes.len()).rev() {
            let grad = self.nodes[i].grad.clone().expect("allocated above");
            if grad.iter().all(|g| *g == T::zero()) {
                continue;
            }
            let op = self.nodes[i].op.clone();
            match op {
                Op::Leaf => {}
                Op::Matmul { a, b } => {
                    let (m, k) = (self.nodes[a].shape[0], self.nodes[a].shape[1]);
                    let n = self.nodes[b].shape[1];
                    // da = g @ b^T
                    let mut da = vec![T::zero(); m * k];
                    for ii in 0..m {
                        for pp in 0..k {
                            let mut s = T::zero();
                            for jj in 0..n {
                                s += grad[ii * n + jj] * self.nodes[b].data[pp * n + jj];
                            }
                            da[ii * k + pp] = s;
                        }
                    }
                    // db = a^T @ g
                    let fault = if self.inject_backward_fault { -T::one() } else { T::one() };
                    let mut db = vec![T::zero(); k * n];
                    for pp in 0..k {
                        for jj in 0..n {
                            let mut s = T::zero();
                            for ii in 0..m {
                                s += self.nodes[a].data[ii * k + pp] * grad[ii * n + jj];
                            }
                            db[pp * n + jj] = s * fault;
                        }
                    }
                    self.accumulate(a, &da);
                    self.accumulate(b, &db);
                }
                Op::Add { a, b } => {
                    self.accumulate(a, &grad);
                    self.accumulate(b, &grad);
                }
                Op::AddBias { x, bias } => {
                    self.accumulate(x, &grad);
                    let d = self.nodes[bias].data.len();
                    let rows = grad.len() / d;
                    let mut db = vec![T::zero(); d];
                    for j in 0..d {
                        for v in 0..rows {
                            db[j] += grad[v * d + j];
                        }
                    }
                    self.accumulate(bias, &db);
                }
                Op::Mul { a, b } => {
                    let da: Vec<T> = grad
                        .iter()
                        .zip(&self.nodes[b].data)
                        .map(|(&g, &y)| g * y)
                        .collect();
                    let db: Vec<T> = grad
                        .iter()
                        .zip(&self.nodes[a].data)
                        .map(|(&g, &x)| g * x)
                        .collect();
                    self.accumulate(a, &da);
                    self.accumulate(b, &db);
                }
                Op::MulConst { x, c } => {
                    let dx: Vec<T> = grad.iter().zip(&c).map(|(&g, &y)| g * y).collect();
                    self.accumulate(x, &dx);
                }
                Op::ScaleConst { x, k } => {
                    let dx: Vec<T> = grad.iter().map(|&g| g * k).collect();
                    self.accumulate(x, &dx);
                }
                Op::MulScalar { x, s } => {
                    let sv = self.nodes[s].data[0];
                    let dx: Vec<T> = grad.iter().map(|&g| g * sv).collect();
                    let mut ds = T::zero();
                    for (g, xv) in grad.iter().zip(&self.nodes[x].data) {
                        ds += *g * *xv;
                    }
                    self.accumulate(x, &dx);
                    self.accumulate(s, &[ds]);
                }
                Op::Neg { x } => {
                    let dx: Vec<T> = grad.iter().map(|&g| -g).collect();
                    self.accumulate(x, &dx);
                }
                Op::Exp { x } => {
                    let dx: Vec<T> = grad
                        .iter()
                        .zip(&self.nodes[i].data)
                        .map(|(&g, &y)| g * y)
                        .collect();
                    self.accumulate(x, &dx);
                }
                Op::Relu { x } => {
                    let dx: Vec<T> = grad
                        .iter()
                        .zip(&self.nodes[x].data)
                        .map(|(&g, &v)| if v > T::zero() { g } else { T::zero() })
                        .collect();
                    self.accumulate(x, &dx);
                }
                Op::Sigmoid { x } => {
                    let dx: Vec<T> = grad
                        .iter()
                        .zip(&self.nodes[i].data)
                        .map(|(&g, &y)| g * y * (T::one() - y))
                        .collect();
                    self.accumulate(x, &dx);
                }
                Op::LayerNorm { x, gamma, beta, eps } => {
                    let d = self.nodes[gamma].data.len();
                    let b = self.nodes[x].data.len() / d;
                    let dd = T::from_f64(d as f64);
                    let mut dx = vec![T::zero(); b * d];
                    let mut dgamma = vec![T::zero(); d];
                    let mut dbeta = vec![T::zero(); d];
                    for v in 0..b {
                        let row = &self.nodes[x].data[v * d..(v + 1) * d];
                        let mut mean = T::zero();
                        for &e in row {
                            mean += e;
                        }
                        mean = mean / dd;
                        let mut var = T::zero();
                        for &e in row {
                            let c = e - mean;
                            var += c * c;
                        }
                        var = var / dd;
                        let inv_std = T::one() / (var + eps).sqrt();
                        // dxhat = g * gamma; dx via the two mean-corrections
                        let mut mean_dxhat = T::zero();
                        let mut mean_dxhat_xhat = T::zero();
                        for j in 0..d {
                            let xhat = (row[j] - mean) * inv_std;
                            let g = grad[v * d + j];
                            let dxhat = g * self.nodes[gamma].data[j];
                            mean_dxhat += dxhat;
                            mean_dxhat_xhat += dxhat * xhat;
                            dgamma[j] += g * xhat;
                            dbeta[j] += g;
                        }
                        mean_dxhat = mean_dxhat / dd;
                        mean_dxhat_xhat = mean_dxhat_xhat / dd;
                        for j in 0..d {
                            let xhat = (row[j] - mean) * inv_std;
                            let dxhat = grad[v * d + j] * self.nodes[gamma].data[j];
                            dx[v * d + j] = (dxhat - mean_dxhat - xhat * mean_dxhat_xhat) * inv_std;
                        }
                    }
                    self.accumulate(x, &dx);
                    self.accumulate(gamma, &dgamma);
                    self.accumulate(beta, &dbeta);
                }
                Op::CosineRows { x, p, eps } => {
                    let (b, d) = as_rows(&self.nodes[x]).expect("checked at forward");
                    let pdat = self.nodes[p].data.clone();
                    let mut pn = T::zero();
                    for &e in &pdat {
                        pn += e * e;
                    }
                    let pn = pn.sqrt();
                    let pden = pn + eps;
                    let mut dx = vec![T::zero(); b * d];
                    let mut dp = vec![T::zero(); d];
                    for v in 0..b {
                        let row = &self.nodes[x].data[v * d..(v + 1) * d];
                        let mut dot = T::zero();
                        let mut xn = T::zero();
                        for j in 0..d {
                            dot += row[j] * pdat[j];
                            xn += row[j] * row[j];
                        }
                        let xn = xn.sqrt();
                        let xden = xn + eps;
                        let denom = xden * pden;
                        let g = grad[v];
                        for j in 0..d {
                            let mut dxj = pdat[j] / denom;
                            if xn > T::zero() {
                                dxj -= dot * row[j] / (xn * xden * xden * pden);
                            }
                            dx[v * d + j] += g * dxj;
                            let mut dpj = row[j] / denom;
                            if pn > T::zero() {
                                dpj -= dot * pdat[j] / (pn * xden * pden * pden);
                            }
                            dp[j] += g * dpj;
                        }
                    }
                    self.accumulate(x, &dx);
                    self.accumulate(p, &dp);
                }
                Op::ConcatCols { parts } => {
                    let total: usize = parts.iter().map(|&p| self.nodes[p].shape[1]).sum();
                    let b = self.nodes[i].shape[0];
                    let mut off = 0;
                    for &p in &parts {
                        let d = self.nodes[p].shape[1];
                        let mut dp = vec![T::zero(); b * d];
                        for v in 0..b {
                            for j in 0..d {
                                dp[v * d + j] = grad[v * total + off + j];
                            }
                        }
                        self.accumulate(p, &dp);
                        off += d;
                    }
                }
                Op::ScaleRows { x, w } => {
                    let d = self.nodes[x].shape[1];
                    let b = self.nodes[x].shape[0];
                    let mut dx = vec![T::zero(); b * d];
                    let mut dw = vec![T::zero(); b];
                    for v in 0..b {
                        let wv = self.nodes[w].data[v];
                        let mut s = T::zero();
                        for j in 0..d {
                            dx[v * d + j] = grad[v * d + j] * wv;
                            s += grad[v * d + j] * self.nodes[x].data[v * d + j];
                        }
                        dw[v] = s;
                    }
                    self.accumulate(x, &dx);
                    self.accumulate(w, &dw);
                }
                Op::SoftmaxRows { x } => {
                    let m = self.nodes[i].shape[1];
                    let b = self.nodes[i].shape[0];
                    let mut dx = vec![T::zero(); b * m];
                    for v in 0..b {
                        let y = &self.nodes[i].data[v * m..(v + 1) * m];
                        let g = &grad[v * m..(v + 1) * m];
                        let mut dot = T::zero();
                        for j in 0..m {
                            dot += g[j] * y[j];
                        }
                        for j in 0..m {
                            dx[v * m + j] = y[j] * (g[j] - dot);
                        }
                    }
                    self.accumulate(x, &dx);
                }
                Op::SelectCol { x, col } => {
                    let m = self.nodes[x].shape[1];
                    let b = self.nodes[x].shape[0];
                    let mut dx = vec![T::zero(); b * m];
                    for v in 0..b {
                        dx[v * m + col] = grad[v];
                    }
                    self.accumulate(x, &dx);
                }
                Op::SumAll { x } => {
                    let g0 = grad[0];
                    let dx = vec![g0; self.nodes[x].data.len()];
                    self.accumulate(x, &dx);
                }
                Op::MeanAll { x } => {
                    let n = self.nodes[x].data.len();
                    let g0 = grad[0] / T::from_f64(n as f64);
                    let dx = vec![g0; n];
                    self.accumulate(x, &dx);
                }
                Op::CrossEntropy { logits, labels } => {
                    let c = self.nodes[logits].shape[1];
                    let b = labels.len();
                    let g0 = grad[0] / T::from_f64(b as f64);
                    let mut dl = vec![T::zero(); b * c];
                    for v in 0..b {
                        let row = &self.nodes[logits].data[v * c..(v + 1) * c];
                        let mut mx = row[0];
                        for &e in row {
                            mx = mx.max(e);
                        }
                        let mut z = T::zero();
                        for &e in row {
                            z += (e - mx).exp();
                        }
                        for j in 0..c {
                            let p = (row[j] - mx).exp() / z;
                            let y = if labels[v] == j { T::one() } else { T::zero() };
                            dl[v * c + j] = g0 * (p - y);
                        }
                    }
                    self.accumulate(logits, &dl);
                }
                Op::GatherRows { x, rows } => {
                    let d = self.nodes[x].shape[1];
                    let mut dx = vec![T::zero(); self.nodes[x].data.len()];
                    for (ii, &r) in rows.iter().enumerate() {
                        for j in 0..d {
                            dx[r * d + j] += grad[ii * d + j];
                        }
                    }
                    self.accumulate(x, &dx);
                }
                Op::ScatterRows { x, rows } => {
                    let d = self.nodes[x].shape[1];
                    let mut dx = vec![T::zero(); rows.len() * d];
                    for (ii, &r) in rows.iter().enumerate() {
                        for j in 0..d {
                            dx[ii * d + j] = grad[r * d + j];
                        }
                    }
                    self.accumulate(x, &dx);
                }
            }
        }
        Ok(())
    }

    fn accumulate(&mut self, idx: usize, contribution: &[T]) {
        let g = self.nodes[idx].grad.as_mut().expect("allocated in backward");
        for (gi, &ci) in g.iter_mut().zip(contribution) {
            *gi += ci;
        }
    }
}
