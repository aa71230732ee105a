use std::sync::Arc;

use super::kernels::{matmul_into, matmul_nt_into, matmul_tn_into, transpose};
use super::{CsrMatrix, ParamId, ParamStore, Real, TResult, Tensor, TensorError};

/// Row index passed to [`Graph::gather_rows`] that yields a zero row.
pub const GATHER_PAD: usize = usize::MAX;

const LAYER_NORM_EPS: f64 = 1e-5;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Mul(Var, Var),
    AddBias(Var, Var),
    Scale(Var, T),
    Elu(Var),
    Sigmoid(Var),
    Tanh(Var),
    SoftmaxRows(Var),
    GatherRows {
        src: Var,
        index: Vec<usize>,
    },
    Sparse {
        src: Var,
        matrix: Arc<CsrMatrix<T>>,
        blocks: usize,
    },
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceCols {
        src: Var,
        start: usize,
    },
    Reshape(Var),
    Mean(Var),
    MeanRows(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        normed: Vec<T>,
        inv_std: Vec<T>,
    },
    L1 {
        pred: Var,
        target: Var,
    },
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<T>,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
    tag: Option<&'static str>,
}

/// A single-owner tape of operations. Node order is creation order, which is
/// also a topological order.
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    params: usize,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: 0,
        }
    }

    /// Creates a graph whose first nodes are the parameters of `store`, so
    /// that [`Graph::param`] of `ParamId(i)` is node `i`.
    pub fn with_params(store: &ParamStore<T>) -> Self {
        let mut g = Self::new();
        for t in store.tensors() {
            g.push(t.clone(), Op::Leaf, true);
        }
        g.params = store.len();
        g
    }

    pub fn param(&self, id: ParamId) -> Var {
        assert!(id.index() < self.params, "parameter {id:?} not bound");
        Var(id.index())
    }

    pub fn param_count(&self) -> usize {
        self.params
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A leaf that receives a gradient without being a parameter.
    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Labels a node for memory accounting.
    pub fn tag(&mut self, v: Var, tag: &'static str) {
        self.nodes[v.0].tag = Some(tag);
    }

    /// Bytes held by node values carrying `tag`. Nodes live until the graph
    /// is dropped, so this is also the peak.
    pub fn tagged_bytes(&self, tag: &str) -> usize {
        self.nodes
            .iter()
            .filter(|n| n.tag == Some(tag))
            .map(|n| n.value.bytes())
            .sum()
    }

    /// Bytes held by all non-parameter node values.
    pub fn activation_bytes(&self) -> usize {
        self.nodes[self.params..].iter().map(|n| n.value.bytes()).sum()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            tag: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn emit(&mut self, op_name: &'static str, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> TResult<Var> {
        if !value.is_finite() {
            return Err(TensorError::NonFinite { op: op_name });
        }
        let rg = self.rg(inputs);
        Ok(self.push(value, op, rg))
    }

    fn matrix_dims(&self, op: &'static str, v: Var) -> TResult<(usize, usize)> {
        let t = self.value(v);
        if !t.is_matrix() {
            return Err(TensorError::BadShape {
                op,
                expected: "a matrix",
                got: t.shape().to_vec(),
            });
        }
        Ok((t.shape()[0], t.shape()[1]))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> TResult<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(TensorError::ShapeMismatch {
                op,
                left: sa.to_vec(),
                right: sb.to_vec(),
            });
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> TResult<Var> {
        let (m, k) = self.matrix_dims("matmul", a)?;
        let (k2, n) = self.matrix_dims("matmul", b)?;
        if k != k2 {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                left: vec![m, k],
                right: vec![k2, n],
            });
        }
        let mut out = vec![T::zero(); m * n];
        matmul_into(m, k, n, self.value(a).data(), self.value(b).data(), &mut out);
        let value = Tensor::matrix(m, n, out)?;
        self.emit("matmul", value, Op::MatMul(a, b), &[a, b])
    }

    pub fn transpose(&mut self, a: Var) -> TResult<Var> {
        let (m, n) = self.matrix_dims("transpose", a)?;
        let value = Tensor::matrix(n, m, transpose(m, n, self.value(a).data()))?;
        self.emit("transpose", value, Op::Transpose(a), &[a])
    }

    pub fn add(&mut self, a: Var, b: Var) -> TResult<Var> {
        self.same_shape("add", a, b)?;
        let data = zip_map(self.value(a).data(), self.value(b).data(), |x, y| x + y);
        let value = Tensor::new(self.value(a).shape().to_vec(), data)?;
        self.emit("add", value, Op::Add(a, b), &[a, b])
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> TResult<Var> {
        self.same_shape("mul", a, b)?;
        let data = zip_map(self.value(a).data(), self.value(b).data(), |x, y| x * y);
        let value = Tensor::new(self.value(a).shape().to_vec(), data)?;
        self.emit("mul", value, Op::Mul(a, b), &[a, b])
    }

    /// Adds a `1×n` (or length-`n`) bias to every row of an `m×n` matrix.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> TResult<Var> {
        let (m, n) = self.matrix_dims("add_bias", x)?;
        if self.value(bias).len() != n {
            return Err(TensorError::ShapeMismatch {
                op: "add_bias",
                left: vec![m, n],
                right: self.value(bias).shape().to_vec(),
            });
        }
        let b = self.value(bias).data();
        let mut out = self.value(x).data().to_vec();
        for row in out.chunks_exact_mut(n) {
            for (o, &bv) in row.iter_mut().zip(b) {
                *o += bv;
            }
        }
        let value = Tensor::matrix(m, n, out)?;
        self.emit("add_bias", value, Op::AddBias(x, bias), &[x, bias])
    }

    /// `x·W + b`, the fully connected layer.
    pub fn affine(&mut self, x: Var, weight: Var, bias: Var) -> TResult<Var> {
        let y = self.matmul(x, weight)?;
        self.add_bias(y, bias)
    }

    pub fn scale(&mut self, a: Var, s: T) -> TResult<Var> {
        let data = self.value(a).data().iter().map(|&x| x * s).collect();
        let value = Tensor::new(self.value(a).shape().to_vec(), data)?;
        self.emit("scale", value, Op::Scale(a, s), &[a])
    }

    fn unary(&mut self, name: &'static str, a: Var, f: impl Fn(T) -> T, op: Op<T>) -> TResult<Var> {
        let data = self.value(a).data().iter().map(|&x| f(x)).collect();
        let value = Tensor::new(self.value(a).shape().to_vec(), data)?;
        self.emit(name, value, op, &[a])
    }

    /// `x` for positive inputs, `eˣ − 1` otherwise.
    pub fn elu(&mut self, a: Var) -> TResult<Var> {
        self.unary("elu", a, elu, Op::Elu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> TResult<Var> {
        self.unary("sigmoid", a, |x| T::one() / (T::one() + (-x).exp()), Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> TResult<Var> {
        self.unary("tanh", a, |x| x.tanh(), Op::Tanh(a))
    }

    pub fn softmax_rows(&mut self, a: Var) -> TResult<Var> {
        let (m, n) = self.matrix_dims("softmax_rows", a)?;
        let mut out = self.value(a).data().to_vec();
        for row in out.chunks_exact_mut(n) {
            softmax_in_place(row);
        }
        let value = Tensor::matrix(m, n, out)?;
        self.emit("softmax_rows", value, Op::SoftmaxRows(a), &[a])
    }

    /// Stacks the rows `src[index[i]]`; [`GATHER_PAD`] yields a zero row.
    pub fn gather_rows(&mut self, src: Var, index: Vec<usize>) -> TResult<Var> {
        let (m, n) = self.matrix_dims("gather_rows", src)?;
        let s = self.value(src).data();
        let mut out = vec![T::zero(); index.len() * n];
        for (i, &r) in index.iter().enumerate() {
            if r == GATHER_PAD {
                continue;
            }
            if r >= m {
                return Err(TensorError::IndexOutOfRange {
                    op: "gather_rows",
                    index: r,
                    len: m,
                });
            }
            out[i * n..(i + 1) * n].copy_from_slice(&s[r * n..(r + 1) * n]);
        }
        let value = Tensor::matrix(index.len(), n, out)?;
        self.emit("gather_rows", value, Op::GatherRows { src, index }, &[src])
    }

    /// Applies `matrix` to each of `blocks` stacked row blocks of `src`.
    pub fn sparse_apply(&mut self, matrix: Arc<CsrMatrix<T>>, src: Var, blocks: usize) -> TResult<Var> {
        let (m, n) = self.matrix_dims("sparse_apply", src)?;
        if m != matrix.cols() * blocks {
            return Err(TensorError::ShapeMismatch {
                op: "sparse_apply",
                left: vec![matrix.rows(), matrix.cols()],
                right: vec![m, n],
            });
        }
        let out = matrix.apply_blocks(self.value(src).data(), n, blocks);
        let value = Tensor::matrix(matrix.rows() * blocks, n, out)?;
        self.emit("sparse_apply", value, Op::Sparse { src, matrix, blocks }, &[src])
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> TResult<Var> {
        let (_, n) = self.matrix_dims("concat_rows", parts[0])?;
        let mut out = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let (m, n2) = self.matrix_dims("concat_rows", p)?;
            if n2 != n {
                return Err(TensorError::ShapeMismatch {
                    op: "concat_rows",
                    left: self.value(parts[0]).shape().to_vec(),
                    right: vec![m, n2],
                });
            }
            rows += m;
            out.extend_from_slice(self.value(p).data());
        }
        let value = Tensor::matrix(rows, n, out)?;
        self.emit("concat_rows", value, Op::ConcatRows(parts.to_vec()), parts)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> TResult<Var> {
        let (m, _) = self.matrix_dims("concat_cols", parts[0])?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (m2, n) = self.matrix_dims("concat_cols", p)?;
            if m2 != m {
                return Err(TensorError::ShapeMismatch {
                    op: "concat_cols",
                    left: self.value(parts[0]).shape().to_vec(),
                    right: vec![m2, n],
                });
            }
            widths.push(n);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(m * total);
        for r in 0..m {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(r));
            }
        }
        let value = Tensor::matrix(m, total, out)?;
        self.emit("concat_cols", value, Op::ConcatCols(parts.to_vec()), parts)
    }

    pub fn slice_cols(&mut self, src: Var, start: usize, len: usize) -> TResult<Var> {
        let (m, n) = self.matrix_dims("slice_cols", src)?;
        if start + len > n {
            return Err(TensorError::IndexOutOfRange {
                op: "slice_cols",
                index: start + len,
                len: n,
            });
        }
        let s = self.value(src).data();
        let mut out = Vec::with_capacity(m * len);
        for r in 0..m {
            out.extend_from_slice(&s[r * n + start..r * n + start + len]);
        }
        let value = Tensor::matrix(m, len, out)?;
        self.emit("slice_cols", value, Op::SliceCols { src, start }, &[src])
    }

    pub fn reshape(&mut self, a: Var, shape: impl Into<Vec<usize>>) -> TResult<Var> {
        let value = self.value(a).clone().reshaped(shape)?;
        self.emit("reshape", value, Op::Reshape(a), &[a])
    }

    /// Mean of all entries, as a scalar.
    pub fn mean(&mut self, a: Var) -> TResult<Var> {
        let t = self.value(a);
        let mean = t.data().iter().copied().sum::<T>() / T::of(t.len() as f64);
        self.emit("mean", Tensor::scalar(mean), Op::Mean(a), &[a])
    }

    /// Column means of an `m×n` matrix, as `1×n`.
    pub fn mean_rows(&mut self, a: Var) -> TResult<Var> {
        let (m, n) = self.matrix_dims("mean_rows", a)?;
        let mut out = vec![T::zero(); n];
        for row in self.value(a).data().chunks_exact(n) {
            for (o, &x) in out.iter_mut().zip(row) {
                *o += x;
            }
        }
        let inv = T::one() / T::of(m as f64);
        out.iter_mut().for_each(|o| *o *= inv);
        let value = Tensor::matrix(1, n, out)?;
        self.emit("mean_rows", value, Op::MeanRows(a), &[a])
    }

    /// Per-row normalization to zero mean and unit variance, then `gain`
    /// and `bias` (both length `n`).
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> TResult<Var> {
        let (m, n) = self.matrix_dims("layer_norm", x)?;
        if self.value(gain).len() != n || self.value(bias).len() != n {
            return Err(TensorError::ShapeMismatch {
                op: "layer_norm",
                left: vec![m, n],
                right: self.value(gain).shape().to_vec(),
            });
        }
        let eps = T::of(LAYER_NORM_EPS);
        let inv_n = T::one() / T::of(n as f64);
        let (g, b) = (self.value(gain).data(), self.value(bias).data());
        let mut normed = Vec::with_capacity(m * n);
        let mut inv_std = Vec::with_capacity(m);
        let mut out = Vec::with_capacity(m * n);
        for row in self.value(x).data().chunks_exact(n) {
            let mu = row.iter().copied().sum::<T>() * inv_n;
            let var = row.iter().map(|&v| (v - mu) * (v - mu)).sum::<T>() * inv_n;
            let r = T::one() / (var + eps).sqrt();
            inv_std.push(r);
            for j in 0..n {
                let h = (row[j] - mu) * r;
                normed.push(h);
                out.push(h * g[j] + b[j]);
            }
        }
        let value = Tensor::matrix(m, n, out)?;
        let op = Op::LayerNorm {
            x,
            gain,
            bias,
            normed,
            inv_std,
        };
        self.emit("layer_norm", value, op, &[x, gain, bias])
    }

    /// Mean absolute error over all entries.
    pub fn l1_loss(&mut self, pred: Var, target: Var) -> TResult<Var> {
        self.same_shape("l1_loss", pred, target)?;
        let (p, t) = (self.value(pred).data(), self.value(target).data());
        let sum: T = p.iter().zip(t).map(|(&a, &b)| (a - b).abs()).sum();
        let value = Tensor::scalar(sum / T::of(p.len() as f64));
        self.emit("l1_loss", value, Op::L1 { pred, target }, &[pred, target])
    }

    /// Mean over rows of `−log softmax(logits)[label]`, via log-sum-exp.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> TResult<Var> {
        let (m, n) = self.matrix_dims("cross_entropy", logits)?;
        if labels.len() != m {
            return Err(TensorError::ShapeMismatch {
                op: "cross_entropy",
                left: vec![m, n],
                right: vec![labels.len()],
            });
        }
        let mut probs = self.value(logits).data().to_vec();
        let mut total = T::zero();
        for (row, (&label, raw)) in probs
            .chunks_exact_mut(n)
            .zip(labels.iter().zip(self.value(logits).data().chunks_exact(n)))
        {
            if label >= n {
                return Err(TensorError::LabelOutOfRange { label, classes: n });
            }
            let max = raw.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = max + raw.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
            total += lse - raw[label];
            softmax_in_place(row);
        }
        let value = Tensor::scalar(total / T::of(m as f64));
        let op = Op::CrossEntropy {
            logits,
            labels: labels.to_vec(),
            probs,
        };
        self.emit("cross_entropy", value, op, &[logits])
    }

    /// Reverse-mode accumulation from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> TResult<Gradients<T>> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(TensorError::NotScalar(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);

        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            if node.requires_grad {
                self.propagate(node, &g, &mut grads);
            }
            grads[id] = Some(g);
        }

        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients {
            grads,
            shapes,
            params: self.params,
        })
    }

    fn propagate(&self, node: &Node<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [T])| {
            let n = &self.nodes[v.0];
            if !n.requires_grad {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| vec![T::zero(); n.value.len()]);
            f(slot);
        };
        let val = |v: Var| &self.nodes[v.0].value;

        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = (val(*a).shape()[0], val(*a).shape()[1]);
                let n = val(*b).shape()[1];
                acc(*a, &mut |da| matmul_nt_into(m, k, n, g, val(*b).data(), da));
                acc(*b, &mut |db| matmul_tn_into(m, k, n, val(*a).data(), g, db));
            }
            Op::Transpose(a) => {
                let (m, n) = (val(*a).shape()[0], val(*a).shape()[1]);
                acc(*a, &mut |da| {
                    for r in 0..m {
                        for c in 0..n {
                            da[r * n + c] += g[c * m + r];
                        }
                    }
                });
            }
            Op::Add(a, b) => {
                acc(*a, &mut |da| add_into(da, g));
                acc(*b, &mut |db| add_into(db, g));
            }
            Op::Mul(a, b) => {
                acc(*a, &mut |da| {
                    for ((d, &gv), &bv) in da.iter_mut().zip(g).zip(val(*b).data()) {
                        *d += gv * bv;
                    }
                });
                acc(*b, &mut |db| {
                    for ((d, &gv), &av) in db.iter_mut().zip(g).zip(val(*a).data()) {
                        *d += gv * av;
                    }
                });
            }
            Op::AddBias(x, bias) => {
                acc(*x, &mut |dx| add_into(dx, g));
                let n = val(*bias).len();
                acc(*bias, &mut |db| {
                    for row in g.chunks_exact(n) {
                        add_into(db, row);
                    }
                });
            }
            Op::Scale(a, s) => acc(*a, &mut |da| {
                for (d, &gv) in da.iter_mut().zip(g) {
                    *d += gv * *s;
                }
            }),
            Op::Elu(a) => {
                let y = node.value.data();
                acc(*a, &mut |da| {
                    for ((d, &gv), (&x, &yv)) in da.iter_mut().zip(g).zip(val(*a).data().iter().zip(y)) {
                        *d += if x > T::zero() { gv } else { gv * (yv + T::one()) };
                    }
                });
            }
            Op::Sigmoid(a) => {
                let y = node.value.data();
                acc(*a, &mut |da| {
                    for ((d, &gv), &yv) in da.iter_mut().zip(g).zip(y) {
                        *d += gv * yv * (T::one() - yv);
                    }
                });
            }
            Op::Tanh(a) => {
                let y = node.value.data();
                acc(*a, &mut |da| {
                    for ((d, &gv), &yv) in da.iter_mut().zip(g).zip(y) {
                        *d += gv * (T::one() - yv * yv);
                    }
                });
            }
            Op::SoftmaxRows(a) => {
                let n = node.value.cols();
                let y = node.value.data();
                acc(*a, &mut |da| {
                    for ((drow, grow), yrow) in da.chunks_exact_mut(n).zip(g.chunks_exact(n)).zip(y.chunks_exact(n)) {
                        let dot: T = grow.iter().zip(yrow).map(|(&gv, &yv)| gv * yv).sum();
                        for ((d, &gv), &yv) in drow.iter_mut().zip(grow).zip(yrow) {
                            *d += yv * (gv - dot);
                        }
                    }
                });
            }
            Op::GatherRows { src, index } => {
                let n = val(*src).cols();
                acc(*src, &mut |ds| {
                    for (i, &r) in index.iter().enumerate() {
                        if r != GATHER_PAD {
                            add_into(&mut ds[r * n..(r + 1) * n], &g[i * n..(i + 1) * n]);
                        }
                    }
                });
            }
            Op::Sparse { src, matrix, blocks } => {
                let n = val(*src).cols();
                acc(*src, &mut |ds| matrix.apply_transpose_blocks(g, n, *blocks, ds));
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = val(p).len();
                    acc(p, &mut |dp| add_into(dp, &g[offset..offset + len]));
                    offset += len;
                }
            }
            Op::ConcatCols(parts) => {
                let total = node.value.cols();
                let mut offset = 0;
                for &p in parts {
                    let w = val(p).cols();
                    acc(p, &mut |dp| {
                        for (r, drow) in dp.chunks_exact_mut(w).enumerate() {
                            add_into(drow, &g[r * total + offset..r * total + offset + w]);
                        }
                    });
                    offset += w;
                }
            }
            Op::SliceCols { src, start } => {
                let n = val(*src).cols();
                let w = node.value.cols();
                acc(*src, &mut |ds| {
                    for (r, grow) in g.chunks_exact(w).enumerate() {
                        add_into(&mut ds[r * n + start..r * n + start + w], grow);
                    }
                });
            }
            Op::Reshape(a) => acc(*a, &mut |da| add_into(da, g)),
            Op::Mean(a) => {
                let s = g[0] / T::of(val(*a).len() as f64);
                acc(*a, &mut |da| da.iter_mut().for_each(|d| *d += s));
            }
            Op::MeanRows(a) => {
                let m = val(*a).rows();
                let inv = T::one() / T::of(m as f64);
                acc(*a, &mut |da| {
                    for drow in da.chunks_exact_mut(g.len()) {
                        for (d, &gv) in drow.iter_mut().zip(g) {
                            *d += gv * inv;
                        }
                    }
                });
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                normed,
                inv_std,
            } => {
                let n = val(*gain).len();
                let gv = val(*gain).data();
                acc(*gain, &mut |dg| {
                    for (grow, hrow) in g.chunks_exact(n).zip(normed.chunks_exact(n)) {
                        for ((d, &gg), &h) in dg.iter_mut().zip(grow).zip(hrow) {
                            *d += gg * h;
                        }
                    }
                });
                acc(*bias, &mut |db| {
                    for grow in g.chunks_exact(n) {
                        add_into(db, grow);
                    }
                });
                let inv_n = T::one() / T::of(n as f64);
                acc(*x, &mut |dx| {
                    for (r, (drow, (grow, hrow))) in dx
                        .chunks_exact_mut(n)
                        .zip(g.chunks_exact(n).zip(normed.chunks_exact(n)))
                        .enumerate()
                    {
                        let mut mean_dh = T::zero();
                        let mut mean_dh_h = T::zero();
                        for j in 0..n {
                            let dh = grow[j] * gv[j];
                            mean_dh += dh;
                            mean_dh_h += dh * hrow[j];
                        }
                        mean_dh *= inv_n;
                        mean_dh_h *= inv_n;
                        for j in 0..n {
                            let dh = grow[j] * gv[j];
                            drow[j] += inv_std[r] * (dh - mean_dh - hrow[j] * mean_dh_h);
                        }
                    }
                });
            }
            Op::L1 { pred, target } => {
                let (p, t) = (val(*pred).data(), val(*target).data());
                let s = g[0] / T::of(p.len() as f64);
                let sign = |a: T, b: T| {
                    if a > b {
                        s
                    } else if a < b {
                        -s
                    } else {
                        T::zero()
                    }
                };
                acc(*pred, &mut |dp| {
                    for ((d, &a), &b) in dp.iter_mut().zip(p).zip(t) {
                        *d += sign(a, b);
                    }
                });
                acc(*target, &mut |dt| {
                    for ((d, &a), &b) in dt.iter_mut().zip(p).zip(t) {
                        *d -= sign(a, b);
                    }
                });
            }
            Op::CrossEntropy { logits, labels, probs } => {
                let n = val(*logits).cols();
                let s = g[0] / T::of(labels.len() as f64);
                acc(*logits, &mut |dl| {
                    for (r, (drow, prow)) in dl.chunks_exact_mut(n).zip(probs.chunks_exact(n)).enumerate() {
                        for (j, (d, &p)) in drow.iter_mut().zip(prow).enumerate() {
                            let y = if j == labels[r] { T::one() } else { T::zero() };
                            *d += s * (p - y);
                        }
                    }
                });
            }
        }
    }
}

/// Result of [`Graph::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
    shapes: Vec<Vec<usize>>,
    params: usize,
}

impl<T: Real> Gradients<T> {
    /// Gradient with respect to any node; zero if the loss does not depend
    /// on it.
    pub fn wrt(&self, v: Var) -> Tensor<T> {
        let shape = self.shapes[v.0].clone();
        match &self.grads[v.0] {
            Some(g) => Tensor::new(shape, g.clone()).expect("gradient shape"),
            None => Tensor::zeros(shape),
        }
    }

    pub fn param(&self, id: ParamId) -> Tensor<T> {
        self.wrt(Var(id.index()))
    }

    /// Per-parameter gradients in store order.
    pub fn into_param_grads(mut self) -> Vec<Tensor<T>> {
        (0..self.params)
            .map(|i| {
                let shape = std::mem::take(&mut self.shapes[i]);
                match self.grads[i].take() {
                    Some(g) => Tensor::new(shape, g).expect("gradient shape"),
                    None => Tensor::zeros(shape),
                }
            })
            .collect()
    }
}

pub(crate) fn elu<T: Real>(x: T) -> T {
    if x > T::zero() {
        x
    } else {
        x.exp() - T::one()
    }
}

pub(crate) fn softmax_in_place<T: Real>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v = *v / sum;
    }
}

fn zip_map<T: Real>(a: &[T], b: &[T], f: impl Fn(T, T) -> T) -> Vec<T> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

fn add_into<T: Real>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}
