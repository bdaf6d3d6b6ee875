use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::kernels::{gemm_nn, gemm_nt, gemm_tn};
use super::Tensor;
use crate::error::{Error, Result};
use crate::math;

const LAYER_NORM_EPS: f64 = 1e-5;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Constant,
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    Sigmoid(Var),
    Relu(Var),
    Abs(Var),
    SoftmaxRows(Var),
    LayerNorm { input: Var, xhat: Vec<f64>, inv_std: Vec<f64> },
    Sum(Var),
    Mean(Var),
    SelectRows(Var, Vec<usize>),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceCols { input: Var, start: usize },
    Sinusoid { input: Var, scale: f64, freqs: Vec<f64> },
    SoftFocal { logits: Var, targets: Vec<f64> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Linear record of primitive operations, replayed in reverse by
/// [`Tape::backward`].
///
/// Nodes are append-only: an operation can only reference earlier nodes, so
/// the record is acyclic by construction.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar with respect to every node that requires one.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v`, with zeros for values the loss does not depend on.
    pub fn wrt(&self, tape: &Tape, v: Var) -> Tensor {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(tape.value(v).shape()))
    }
}

fn shape_err(op: &'static str, detail: alloc::string::String) -> Error {
    Error::Shape { op, detail }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Differentiable input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad: true });
        Var(self.nodes.len() - 1)
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node { value, op: Op::Constant, requires_grad: false });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, name: &'static str, value: Tensor, op: Op, inputs: &[Var]) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: name });
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node { value, op, requires_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    fn dims2(&self, op: &'static str, v: Var) -> Result<(usize, usize)> {
        let t = self.value(v);
        t.dims2()
            .ok_or_else(|| shape_err(op, format!("expected a matrix, got {:?}", t.shape())))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(shape_err(op, format!("{sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    fn map(&mut self, name: &'static str, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Result<Var> {
        let t = self.value(a);
        let data = t.data().iter().map(|&x| f(x)).collect();
        let value = Tensor::from_parts(t.shape().to_vec(), data);
        self.push(name, value, op, &[a])
    }

    fn zip(&mut self, name: &'static str, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        self.same_shape(name, a, b)?;
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::from_parts(ta.shape().to_vec(), data);
        self.push(name, value, op, &[a, b])
    }

    /// `a · b` for `a: m×k`, `b: k×n`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims2("matmul", a)?;
        let (k2, n) = self.dims2("matmul", b)?;
        if k != k2 {
            return Err(shape_err("matmul", format!("{m}x{k} · {k2}x{n}")));
        }
        let mut out = vec![0.0; m * n];
        gemm_nn(m, k, n, self.value(a).data(), self.value(b).data(), &mut out);
        self.push("matmul", Tensor::from_parts(vec![m, n], out), Op::MatMul(a, b), &[a, b])
    }

    /// `a · bᵀ` for `a: m×k`, `b: n×k`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims2("matmul_nt", a)?;
        let (n, k2) = self.dims2("matmul_nt", b)?;
        if k != k2 {
            return Err(shape_err("matmul_nt", format!("{m}x{k} · ({n}x{k2})ᵀ")));
        }
        let mut out = vec![0.0; m * n];
        gemm_nt(m, k, n, self.value(a).data(), self.value(b).data(), &mut out);
        self.push("matmul_nt", Tensor::from_parts(vec![m, n], out), Op::MatMulNt(a, b), &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("add", a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("sub", a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("mul", a, b, Op::Mul(a, b), |x, y| x * y)
    }

    fn row_broadcast(
        &mut self,
        name: &'static str,
        a: Var,
        row: Var,
        op: Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var> {
        let (r, c) = self.dims2(name, a)?;
        let rv = self.value(row);
        if rv.len() != c {
            return Err(shape_err(name, format!("{r}x{c} with row of {:?}", rv.shape())));
        }
        let rdata = rv.data();
        let mut out = self.value(a).data().to_vec();
        for chunk in out.chunks_mut(c) {
            for (o, &w) in chunk.iter_mut().zip(rdata) {
                *o = f(*o, w);
            }
        }
        self.push(name, Tensor::from_parts(vec![r, c], out), op, &[a, row])
    }

    /// Adds a `1×c` row to every row of an `r×c` matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        self.row_broadcast("add_row", a, row, Op::AddRow(a, row), |x, w| x + w)
    }

    /// Multiplies every row of an `r×c` matrix elementwise by a `1×c` row.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var> {
        self.row_broadcast("mul_row", a, row, Op::MulRow(a, row), |x, w| x * w)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        self.map("scale", a, Op::Scale(a, s), |x| x * s)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.map("sigmoid", a, Op::Sigmoid(a), math::sigmoid)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.map("relu", a, Op::Relu(a), |x| if x > 0.0 { x } else { 0.0 })
    }

    pub fn abs(&mut self, a: Var) -> Result<Var> {
        self.map("abs", a, Op::Abs(a), f64::abs)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.dims2("softmax_rows", a)?;
        let mut out = self.value(a).data().to_vec();
        for row in out.chunks_mut(c) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for v in row.iter_mut() {
                *v = math::exp(*v - max);
                total += *v;
            }
            for v in row.iter_mut() {
                *v /= total;
            }
        }
        self.push("softmax_rows", Tensor::from_parts(vec![r, c], out), Op::SoftmaxRows(a), &[a])
    }

    /// Per-row standardisation `(x - mean) / sqrt(var + 1e-5)`, no affine.
    pub fn layer_norm(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.dims2("layer_norm", a)?;
        let x = self.value(a).data();
        let mut xhat = vec![0.0; r * c];
        let mut inv_std = vec![0.0; r];
        for i in 0..r {
            let row = &x[i * c..(i + 1) * c];
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let is = 1.0 / math::sqrt(var + LAYER_NORM_EPS);
            inv_std[i] = is;
            for (o, v) in xhat[i * c..(i + 1) * c].iter_mut().zip(row) {
                *o = (v - mean) * is;
            }
        }
        let value = Tensor::from_parts(vec![r, c], xhat.clone());
        self.push("layer_norm", value, Op::LayerNorm { input: a, xhat, inv_std }, &[a])
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().sum();
        self.push("sum", Tensor::scalar(s), Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let s = t.data().iter().sum::<f64>() / t.len() as f64;
        self.push("mean", Tensor::scalar(s), Op::Mean(a), &[a])
    }

    /// Gathers rows (indices may repeat).
    pub fn select_rows(&mut self, a: Var, indices: &[usize]) -> Result<Var> {
        let (r, c) = self.dims2("select_rows", a)?;
        if indices.is_empty() {
            return Err(shape_err("select_rows", "empty selection".into()));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= r) {
            return Err(shape_err("select_rows", format!("row {bad} of {r}")));
        }
        let t = self.value(a);
        let data = indices.iter().flat_map(|&i| t.row(i).iter().copied()).collect();
        let value = Tensor::from_parts(vec![indices.len(), c], data);
        self.push("select_rows", value, Op::SelectRows(a, indices.to_vec()), &[a])
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| shape_err("concat_rows", "no inputs".into()))?;
        let (_, c) = self.dims2("concat_rows", first)?;
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let (r, pc) = self.dims2("concat_rows", p)?;
            if pc != c {
                return Err(shape_err("concat_rows", format!("{pc} columns vs {c}")));
            }
            rows += r;
            data.extend_from_slice(self.value(p).data());
        }
        self.push("concat_rows", Tensor::from_parts(vec![rows, c], data), Op::ConcatRows(parts.to_vec()), parts)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| shape_err("concat_cols", "no inputs".into()))?;
        let (r, _) = self.dims2("concat_cols", first)?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (pr, pc) = self.dims2("concat_cols", p)?;
            if pr != r {
                return Err(shape_err("concat_cols", format!("{pr} rows vs {r}")));
            }
            widths.push(pc);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(r * total);
        for i in 0..r {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(i));
            }
        }
        self.push("concat_cols", Tensor::from_parts(vec![r, total], data), Op::ConcatCols(parts.to_vec()), parts)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.dims2("slice_cols", a)?;
        if len == 0 || start + len > c {
            return Err(shape_err("slice_cols", format!("[{start}, {}) of {c}", start + len)));
        }
        let t = self.value(a);
        let data = (0..r)
            .flat_map(|i| t.row(i)[start..start + len].iter().copied())
            .collect();
        self.push("slice_cols", Tensor::from_parts(vec![r, len], data), Op::SliceCols { input: a, start }, &[a])
    }

    /// Sinusoidal encoding of an `n×1` column of positions scaled by
    /// `scale`: columns `2k, 2k+1` hold `sin, cos` of `scale·x·ω_k`.
    pub fn sinusoid(&mut self, a: Var, scale: f64, dim: usize) -> Result<Var> {
        let (n, c) = self.dims2("sinusoid", a)?;
        if c != 1 || dim == 0 || dim % 2 != 0 {
            return Err(shape_err("sinusoid", format!("{n}x{c} input, dim {dim}")));
        }
        let freqs = math::sinusoid_frequencies(dim);
        let x = self.value(a).data();
        let mut out = vec![0.0; n * dim];
        for i in 0..n {
            for (k, w) in freqs.iter().enumerate() {
                let angle = scale * x[i] * w;
                out[i * dim + 2 * k] = math::sin(angle);
                out[i * dim + 2 * k + 1] = math::cos(angle);
            }
        }
        let op = Op::Sinusoid { input: a, scale, freqs };
        self.push("sinusoid", Tensor::from_parts(vec![n, dim], out), op, &[a])
    }

    /// Elementwise soft-target focal term from logits `z` against targets
    /// `c ∈ [0,1]`: `(c - σ(z))² · BCE(c, σ(z))`.
    pub fn soft_focal(&mut self, logits: Var, targets: &Tensor) -> Result<Var> {
        let t = self.value(logits);
        if t.shape() != targets.shape() {
            return Err(shape_err("soft_focal", format!("{:?} vs {:?}", t.shape(), targets.shape())));
        }
        if targets.data().iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(Error::Invalid("soft_focal targets must lie in [0, 1]".into()));
        }
        let data = t
            .data()
            .iter()
            .zip(targets.data())
            .map(|(&z, &c)| focal_from_logit(z, c).0)
            .collect();
        let value = Tensor::from_parts(t.shape().to_vec(), data);
        let op = Op::SoftFocal { logits, targets: targets.data().to_vec() };
        self.push("soft_focal", value, op, &[logits])
    }

    /// Reverse sweep from a one-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(shape_err("backward", format!("loss must be scalar, got {:?}", lv.shape())));
        }
        let mut grads: Vec<Option<Tensor>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::from_parts(lv.shape().to_vec(), vec![1.0]));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        for (i, g) in grads.iter_mut().enumerate() {
            if !self.nodes[i].requires_grad {
                *g = None;
            }
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, f: impl FnOnce(&mut [f64])) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        let slot = grads[v.0].get_or_insert_with(|| Tensor::zeros(self.nodes[v.0].value.shape()));
        f(slot.data_mut());
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let gd = g.data();
        let out = node.value.data();
        match &node.op {
            Op::Leaf | Op::Constant => {}
            &Op::MatMul(a, b) => {
                let (m, k) = self.value(a).dims2().unwrap();
                let n = self.value(b).cols();
                let (av, bv) = (self.value(a).data(), self.value(b).data());
                self.accumulate(grads, a, |da| gemm_nt(m, n, k, gd, bv, da));
                self.accumulate(grads, b, |db| gemm_tn(m, k, n, av, gd, db));
            }
            &Op::MatMulNt(a, b) => {
                let (m, k) = self.value(a).dims2().unwrap();
                let n = self.value(b).rows();
                let (av, bv) = (self.value(a).data(), self.value(b).data());
                self.accumulate(grads, a, |da| gemm_nn(m, n, k, gd, bv, da));
                self.accumulate(grads, b, |db| gemm_tn(m, n, k, gd, av, db));
            }
            &Op::Add(a, b) => {
                self.accumulate(grads, a, |d| add_into(d, gd));
                self.accumulate(grads, b, |d| add_into(d, gd));
            }
            &Op::Sub(a, b) => {
                self.accumulate(grads, a, |d| add_into(d, gd));
                self.accumulate(grads, b, |d| d.iter_mut().zip(gd).for_each(|(o, &x)| *o -= x));
            }
            &Op::Mul(a, b) => {
                let (av, bv) = (self.value(a).data(), self.value(b).data());
                self.accumulate(grads, a, |d| {
                    d.iter_mut().zip(gd).zip(bv).for_each(|((o, &x), &y)| *o += x * y)
                });
                self.accumulate(grads, b, |d| {
                    d.iter_mut().zip(gd).zip(av).for_each(|((o, &x), &y)| *o += x * y)
                });
            }
            &Op::AddRow(a, row) => {
                let c = self.value(a).cols();
                self.accumulate(grads, a, |d| add_into(d, gd));
                self.accumulate(grads, row, |d| {
                    for grow in gd.chunks(c) {
                        add_into(d, grow);
                    }
                });
            }
            &Op::MulRow(a, row) => {
                let c = self.value(a).cols();
                let (av, rv) = (self.value(a).data(), self.value(row).data());
                self.accumulate(grads, a, |d| {
                    for (drow, grow) in d.chunks_mut(c).zip(gd.chunks(c)) {
                        for ((o, &x), &w) in drow.iter_mut().zip(grow).zip(rv) {
                            *o += x * w;
                        }
                    }
                });
                self.accumulate(grads, row, |d| {
                    for (grow, arow) in gd.chunks(c).zip(av.chunks(c)) {
                        for ((o, &x), &y) in d.iter_mut().zip(grow).zip(arow) {
                            *o += x * y;
                        }
                    }
                });
            }
            &Op::Scale(a, s) => {
                self.accumulate(grads, a, |d| d.iter_mut().zip(gd).for_each(|(o, &x)| *o += s * x));
            }
            &Op::Sigmoid(a) => {
                self.accumulate(grads, a, |d| {
                    for ((o, &x), &y) in d.iter_mut().zip(gd).zip(out) {
                        *o += x * y * (1.0 - y);
                    }
                });
            }
            &Op::Relu(a) => {
                let av = self.value(a).data();
                self.accumulate(grads, a, |d| {
                    for ((o, &x), &v) in d.iter_mut().zip(gd).zip(av) {
                        if v > 0.0 {
                            *o += x;
                        }
                    }
                });
            }
            &Op::Abs(a) => {
                let av = self.value(a).data();
                self.accumulate(grads, a, |d| {
                    for ((o, &x), &v) in d.iter_mut().zip(gd).zip(av) {
                        if v > 0.0 {
                            *o += x;
                        } else if v < 0.0 {
                            *o -= x;
                        }
                    }
                });
            }
            &Op::SoftmaxRows(a) => {
                let c = self.value(a).cols();
                self.accumulate(grads, a, |d| {
                    for ((drow, grow), yrow) in d.chunks_mut(c).zip(gd.chunks(c)).zip(out.chunks(c)) {
                        let inner: f64 = grow.iter().zip(yrow).map(|(x, y)| x * y).sum();
                        for ((o, &x), &y) in drow.iter_mut().zip(grow).zip(yrow) {
                            *o += y * (x - inner);
                        }
                    }
                });
            }
            Op::LayerNorm { input, xhat, inv_std } => {
                let c = self.value(*input).cols();
                let n = c as f64;
                self.accumulate(grads, *input, |d| {
                    for (i, (drow, grow)) in d.chunks_mut(c).zip(gd.chunks(c)).enumerate() {
                        let xrow = &xhat[i * c..(i + 1) * c];
                        let mean_g = grow.iter().sum::<f64>() / n;
                        let mean_gx = grow.iter().zip(xrow).map(|(x, y)| x * y).sum::<f64>() / n;
                        for ((o, &x), &xh) in drow.iter_mut().zip(grow).zip(xrow) {
                            *o += inv_std[i] * (x - mean_g - xh * mean_gx);
                        }
                    }
                });
            }
            &Op::Sum(a) => {
                self.accumulate(grads, a, |d| d.iter_mut().for_each(|o| *o += gd[0]));
            }
            &Op::Mean(a) => {
                let n = self.value(a).len() as f64;
                self.accumulate(grads, a, |d| d.iter_mut().for_each(|o| *o += gd[0] / n));
            }
            Op::SelectRows(a, indices) => {
                let c = self.value(*a).cols();
                self.accumulate(grads, *a, |d| {
                    for (r, &src) in indices.iter().enumerate() {
                        add_into(&mut d[src * c..(src + 1) * c], &gd[r * c..(r + 1) * c]);
                    }
                });
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.value(p).len();
                    self.accumulate(grads, p, |d| add_into(d, &gd[offset..offset + len]));
                    offset += len;
                }
            }
            Op::ConcatCols(parts) => {
                let total = node.value.cols();
                let mut col = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    self.accumulate(grads, p, |d| {
                        for (drow, grow) in d.chunks_mut(w).zip(gd.chunks(total)) {
                            add_into(drow, &grow[col..col + w]);
                        }
                    });
                    col += w;
                }
            }
            &Op::SliceCols { input, start } => {
                let c = self.value(input).cols();
                let w = node.value.cols();
                self.accumulate(grads, input, |d| {
                    for (drow, grow) in d.chunks_mut(c).zip(gd.chunks(w)) {
                        add_into(&mut drow[start..start + w], grow);
                    }
                });
            }
            Op::Sinusoid { input, scale, freqs } => {
                let dim = node.value.cols();
                self.accumulate(grads, *input, |d| {
                    for (i, o) in d.iter_mut().enumerate() {
                        let mut acc = 0.0;
                        for (k, w) in freqs.iter().enumerate() {
                            let sin = out[i * dim + 2 * k];
                            let cos = out[i * dim + 2 * k + 1];
                            acc += scale * w * (gd[i * dim + 2 * k] * cos - gd[i * dim + 2 * k + 1] * sin);
                        }
                        *o += acc;
                    }
                });
            }
            Op::SoftFocal { logits, targets } => {
                let zv = self.value(*logits).data();
                self.accumulate(grads, *logits, |d| {
                    for (((o, &x), &z), &c) in d.iter_mut().zip(gd).zip(zv).zip(targets) {
                        *o += x * focal_from_logit(z, c).1;
                    }
                });
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(o, &x)| *o += x);
}

/// Value and derivative (w.r.t. the logit) of the soft-target focal term.
pub(crate) fn focal_from_logit(z: f64, c: f64) -> (f64, f64) {
    let p = math::sigmoid(z);
    let bce = c * math::softplus(-z) + (1.0 - c) * math::softplus(z);
    let diff = c - p;
    let value = diff * diff * bce;
    let grad = -2.0 * diff * p * (1.0 - p) * bce - diff * diff * diff;
    (value, grad)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(rows: &[&[f64]]) -> Tensor {
        Tensor::from_rows(rows).unwrap()
    }

    #[test]
    fn sigmoid_at_zero() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(0.0));
        let y = tape.sigmoid(x).unwrap();
        assert_eq!(tape.value(y).item(), Some(0.5));
        let g = tape.backward(y).unwrap();
        assert_eq!(g.wrt(&tape, x).item(), Some(0.25));
    }

    #[test]
    fn uniform_softmax() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[&[0.0, 0.0, 0.0]]));
        let y = tape.softmax_rows(x).unwrap();
        for &v in tape.value(y).data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn matmul_of_ones() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::filled(&[2, 3], 1.0));
        let b = tape.leaf(Tensor::filled(&[3, 2], 1.0));
        let c = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(c), &Tensor::filled(&[2, 2], 3.0));
    }

    #[test]
    fn sum_gradient_is_ones() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::filled(&[3, 4], 0.7));
        let s = tape.sum(x).unwrap();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.wrt(&tape, x), Tensor::filled(&[3, 4], 1.0));
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::filled(&[2, 2], 0.5));
        let c = tape.constant(Tensor::filled(&[2, 2], 2.0));
        let y = tape.mul(x, c).unwrap();
        let s = tape.sum(y).unwrap();
        let g = tape.backward(s).unwrap();
        assert!(g.get(c).is_none());
        assert_eq!(g.wrt(&tape, c), Tensor::zeros(&[2, 2]));
        assert_eq!(g.wrt(&tape, x), Tensor::filled(&[2, 2], 2.0));
    }

    #[test]
    fn shape_errors_name_the_operation() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::zeros(&[2, 3]));
        let b = tape.leaf(Tensor::zeros(&[2, 3]));
        match tape.matmul(a, b) {
            Err(Error::Shape { op, detail }) => {
                assert_eq!(op, "matmul");
                assert!(detail.contains("2x3"));
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(tape.backward(a), Err(Error::Shape { op: "backward", .. })));
    }

    #[test]
    fn non_finite_results_are_reported() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::scalar(1e300));
        assert!(matches!(tape.mul(a, a), Err(Error::NonFinite { op: "mul" })));
    }

    #[test]
    fn backward_is_deterministic() {
        let mut tape = Tape::new();
        let a = tape.leaf(t(&[&[0.3, -0.2], &[0.9, 0.1]]));
        let b = tape.leaf(t(&[&[0.5, 0.4], &[-0.7, 0.2]]));
        let c = tape.matmul_nt(a, b).unwrap();
        let d = tape.softmax_rows(c).unwrap();
        let e = tape.layer_norm(d).unwrap();
        let s = tape.sum(e).unwrap();
        let g1 = tape.backward(s).unwrap();
        let g2 = tape.backward(s).unwrap();
        assert_eq!(g1.wrt(&tape, a), g2.wrt(&tape, a));
        assert_eq!(g1.wrt(&tape, b), g2.wrt(&tape, b));
    }

    #[test]
    fn focal_matches_probability_form() {
        for &(z, c) in &[(0.3, 1.0), (-1.2, 0.0), (2.0, 0.4), (0.0, 0.5)] {
            let p = math::sigmoid(z);
            let direct = (c - p) * (c - p) * (-c * math::ln(p) - (1.0 - c) * math::ln(1.0 - p));
            assert!((focal_from_logit(z, c).0 - direct).abs() < 1e-14);
        }
    }
}
