//! Define-by-run reverse-mode differentiation.
//!
//! Every operation appends a node holding its output value and the ids of
//! its inputs, so node ids are a topological order by construction. The
//! backward pass walks the tape once in reverse and accumulates adjoints
//! additively, which handles fan-out without special casing.

use super::kernels::{self, gemm_nn, gemm_nt, gemm_tn, sigmoid, softmax_row};
use super::{NumericsError, Tensor};

/// Epsilon added to the variance inside `layer_norm`.
pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Handle to a node on a [`Tape`]. Only meaningful for the tape that issued it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    AddRow(Var, Var),
    MulCol(Var, Var),
    Scale(Var, f64),
    Exp(Var),
    Ln(Var),
    Silu(Var),
    Relu(Var),
    Sigmoid(Var),
    Softmax(Var),
    LogSoftmax(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    Concat(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    GatherRows(Var, Vec<usize>),
    SegmentSum(Var, Vec<usize>),
    SumRows(Var),
    Sum(Var),
    L2NormRows(Var),
    Pick(Var, Vec<(usize, usize)>),
    Reshape(Var),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Recording of one forward computation.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> NumericsError {
    NumericsError::Shape {
        op,
        detail: format!("{:?} vs {:?}", a.shape(), b.shape()),
    }
}

fn check_finite(op: &'static str, data: &[f64]) -> Result<(), NumericsError> {
    match data.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(NumericsError::NonFinite { op, index }),
        None => Ok(()),
    }
}

fn as_matrix(t: &Tensor) -> (usize, usize) {
    (t.rows(), t.cols())
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

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn emit(
        &mut self,
        op_name: &'static str,
        shape: Vec<usize>,
        data: Vec<f64>,
        op: Op,
        inputs: &[Var],
    ) -> Result<Var, NumericsError> {
        check_finite(op_name, &data)?;
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        Ok(self.push(Tensor::from_parts(shape, data), op, requires_grad))
    }

    /// Leaf whose gradient is tracked.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf excluded from differentiation.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient accumulated by the last `backward` call, if the node received one.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (at, bt) = (self.value(a), self.value(b));
        if at.shape().len() != 2 || bt.shape().len() != 2 || at.cols() != bt.rows() {
            return Err(shape_err("matmul", at, bt));
        }
        let (m, k) = as_matrix(at);
        let n = bt.cols();
        let mut out = vec![0.0; m * n];
        gemm_nn(at.data(), bt.data(), &mut out, m, k, n);
        self.emit("matmul", vec![m, n], out, Op::MatMul(a, b), &[a, b])
    }

    /// `a · bᵀ`, the layout of every linear layer (`x · Wᵀ`).
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (at, bt) = (self.value(a), self.value(b));
        if at.shape().len() != 2 || bt.shape().len() != 2 || at.cols() != bt.cols() {
            return Err(shape_err("matmul_t", at, bt));
        }
        let (m, k) = as_matrix(at);
        let n = bt.rows();
        let mut out = vec![0.0; m * n];
        gemm_nt(at.data(), bt.data(), &mut out, m, k, n);
        self.emit("matmul_t", vec![m, n], out, Op::MatMulT(a, b), &[a, b])
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var, NumericsError> {
        let (at, bt) = (self.value(a), self.value(b));
        if at.shape() != bt.shape() {
            return Err(shape_err(name, at, bt));
        }
        let data = at.data().iter().zip(bt.data()).map(|(&x, &y)| f(x, y)).collect();
        let shape = at.shape().to_vec();
        self.emit(name, shape, data, op, &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        if let Some(i) = self.value(b).data().iter().position(|&v| v == 0.0) {
            return Err(NumericsError::Domain {
                op: "div",
                detail: format!("zero divisor at flat index {i}"),
            });
        }
        self.binary("div", a, b, |x, y| x / y, Op::Div(a, b))
    }

    /// Broadcast-add a `1×n` row to every row of an `m×n` matrix.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var, NumericsError> {
        let (xt, rt) = (self.value(x), self.value(row));
        if rt.len() != xt.cols() {
            return Err(shape_err("add_row", xt, rt));
        }
        let n = xt.cols();
        let data = xt
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| v + rt.data()[i % n])
            .collect();
        let shape = xt.shape().to_vec();
        self.emit("add_row", shape, data, Op::AddRow(x, row), &[x, row])
    }

    /// Scale each row of an `m×n` matrix by the matching entry of an `m×1` column.
    pub fn mul_col(&mut self, x: Var, col: Var) -> Result<Var, NumericsError> {
        let (xt, ct) = (self.value(x), self.value(col));
        if ct.len() != xt.rows() {
            return Err(shape_err("mul_col", xt, ct));
        }
        let n = xt.cols();
        let data = xt
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| v * ct.data()[i / n])
            .collect();
        let shape = xt.shape().to_vec();
        self.emit("mul_col", shape, data, Op::MulCol(x, col), &[x, col])
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var, NumericsError> {
        let xt = self.value(x);
        let data = xt.data().iter().map(|v| v * factor).collect();
        let shape = xt.shape().to_vec();
        self.emit("scale", shape, data, Op::Scale(x, factor), &[x])
    }

    fn unary(
        &mut self,
        name: &'static str,
        x: Var,
        f: impl Fn(f64) -> f64,
        op: Op,
    ) -> Result<Var, NumericsError> {
        let xt = self.value(x);
        let data = xt.data().iter().map(|&v| f(v)).collect();
        let shape = xt.shape().to_vec();
        self.emit(name, shape, data, op, &[x])
    }

    pub fn exp(&mut self, x: Var) -> Result<Var, NumericsError> {
        self.unary("exp", x, f64::exp, Op::Exp(x))
    }

    pub fn ln(&mut self, x: Var) -> Result<Var, NumericsError> {
        if let Some(i) = self.value(x).data().iter().position(|&v| v <= 0.0) {
            return Err(NumericsError::Domain {
                op: "ln",
                detail: format!("non-positive input at flat index {i}"),
            });
        }
        self.unary("ln", x, f64::ln, Op::Ln(x))
    }

    pub fn silu(&mut self, x: Var) -> Result<Var, NumericsError> {
        self.unary("silu", x, |v| v * sigmoid(v), Op::Silu(x))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var, NumericsError> {
        self.unary("relu", x, |v| v.max(0.0), Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var, NumericsError> {
        self.unary("sigmoid", x, sigmoid, Op::Sigmoid(x))
    }

    /// Softmax along the last axis, with max subtraction.
    pub fn softmax(&mut self, x: Var) -> Result<Var, NumericsError> {
        let xt = self.value(x);
        let (m, n) = as_matrix(xt);
        if n == 0 {
            return Err(NumericsError::Empty { op: "softmax" });
        }
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            softmax_row(&xt.data()[i * n..(i + 1) * n], &mut out[i * n..(i + 1) * n]);
        }
        let shape = xt.shape().to_vec();
        self.emit("softmax", shape, out, Op::Softmax(x), &[x])
    }

    /// `ln(softmax(x))` along the last axis, evaluated as `x - logsumexp(x)`.
    pub fn log_softmax(&mut self, x: Var) -> Result<Var, NumericsError> {
        let xt = self.value(x);
        let (m, n) = as_matrix(xt);
        if n == 0 {
            return Err(NumericsError::Empty { op: "log_softmax" });
        }
        let mut out = Vec::with_capacity(m * n);
        for i in 0..m {
            let row = &xt.data()[i * n..(i + 1) * n];
            let lse = kernels::logsumexp(row);
            out.extend(row.iter().map(|v| v - lse));
        }
        let shape = xt.shape().to_vec();
        self.emit("log_softmax", shape, out, Op::LogSoftmax(x), &[x])
    }

    /// Row-wise layer normalisation with affine `gamma`/`beta` (both `1×n`).
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var, NumericsError> {
        let xt = self.value(x);
        let (m, n) = as_matrix(xt);
        if n == 0 {
            return Err(NumericsError::Empty { op: "layer_norm" });
        }
        let (gt, bt) = (self.value(gamma), self.value(beta));
        if gt.len() != n || bt.len() != n {
            return Err(shape_err("layer_norm", xt, gt));
        }
        let mut xhat = vec![0.0; m * n];
        let mut rstd = vec![0.0; m];
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &xt.data()[i * n..(i + 1) * n];
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let r = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            rstd[i] = r;
            for j in 0..n {
                let h = (row[j] - mean) * r;
                xhat[i * n + j] = h;
                out[i * n + j] = h * gt.data()[j] + bt.data()[j];
            }
        }
        let shape = xt.shape().to_vec();
        self.emit(
            "layer_norm",
            shape,
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
            &[x, gamma, beta],
        )
    }

    /// Concatenate matrices with equal row counts along the last axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var, NumericsError> {
        let first = parts.first().ok_or(NumericsError::Empty { op: "concat" })?;
        let m = self.value(*first).rows();
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let t = self.value(p);
            if t.rows() != m {
                return Err(shape_err("concat", self.value(*first), t));
            }
            widths.push(t.cols());
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(m * total);
        for i in 0..m {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[i * w..(i + 1) * w]);
            }
        }
        self.emit("concat", vec![m, total], out, Op::Concat(parts.to_vec()), parts)
    }

    /// Stack matrices with equal column counts vertically.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, NumericsError> {
        let first = parts.first().ok_or(NumericsError::Empty { op: "concat_rows" })?;
        let n = self.value(*first).cols();
        let mut rows = 0;
        let mut out = Vec::new();
        for &p in parts {
            let t = self.value(p);
            if t.cols() != n {
                return Err(shape_err("concat_rows", self.value(*first), t));
            }
            rows += t.rows();
            out.extend_from_slice(t.data());
        }
        self.emit("concat_rows", vec![rows, n], out, Op::ConcatRows(parts.to_vec()), parts)
    }

    /// Columns `start..end` of a matrix.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var, NumericsError> {
        let xt = self.value(x);
        let (m, n) = as_matrix(xt);
        if start > end || end > n {
            return Err(NumericsError::Shape {
                op: "slice_cols",
                detail: format!("range {start}..{end} outside {n} columns"),
            });
        }
        let w = end - start;
        let mut out = Vec::with_capacity(m * w);
        for i in 0..m {
            out.extend_from_slice(&xt.data()[i * n + start..i * n + end]);
        }
        self.emit("slice_cols", vec![m, w], out, Op::SliceCols(x, start), &[x])
    }

    /// Select rows by index (repeats allowed).
    pub fn gather_rows(&mut self, x: Var, index: &[usize]) -> Result<Var, NumericsError> {
        let xt = self.value(x);
        let (m, n) = as_matrix(xt);
        if let Some(&bad) = index.iter().find(|&&i| i >= m) {
            return Err(NumericsError::Shape {
                op: "gather_rows",
                detail: format!("row {bad} out of range for {m} rows"),
            });
        }
        let mut out = Vec::with_capacity(index.len() * n);
        for &i in index {
            out.extend_from_slice(&xt.data()[i * n..(i + 1) * n]);
        }
        self.emit(
            "gather_rows",
            vec![index.len(), n],
            out,
            Op::GatherRows(x, index.to_vec()),
            &[x],
        )
    }

    /// Sum rows into `segments` buckets: `out[segment[r]] += x[r]`.
    pub fn segment_sum(
        &mut self,
        x: Var,
        segment: &[usize],
        segments: usize,
    ) -> Result<Var, NumericsError> {
        let xt = self.value(x);
        let (m, n) = as_matrix(xt);
        if segment.len() != m || segment.iter().any(|&s| s >= segments) {
            return Err(NumericsError::Shape {
                op: "segment_sum",
                detail: format!("{} segment ids for {m} rows into {segments} segments", segment.len()),
            });
        }
        let mut out = vec![0.0; segments * n];
        for (r, &s) in segment.iter().enumerate() {
            for j in 0..n {
                out[s * n + j] += xt.data()[r * n + j];
            }
        }
        self.emit(
            "segment_sum",
            vec![segments, n],
            out,
            Op::SegmentSum(x, segment.to_vec()),
            &[x],
        )
    }

    /// Sum pooling over rows: `m×n -> 1×n`.
    pub fn sum_pool(&mut self, x: Var) -> Result<Var, NumericsError> {
        let xt = self.value(x);
        let (m, n) = as_matrix(xt);
        let mut out = vec![0.0; n];
        for i in 0..m {
            for j in 0..n {
                out[j] += xt.data()[i * n + j];
            }
        }
        self.emit("sum_pool", vec![1, n], out, Op::SumRows(x), &[x])
    }

    /// Sum of all entries as a scalar.
    pub fn sum(&mut self, x: Var) -> Result<Var, NumericsError> {
        let total = self.value(x).data().iter().sum();
        self.emit("sum", vec![1], vec![total], Op::Sum(x), &[x])
    }

    /// Euclidean norm of each row: `m×n -> m×1`. The gradient at a zero row is zero.
    pub fn l2_norm(&mut self, x: Var) -> Result<Var, NumericsError> {
        let xt = self.value(x);
        let (m, n) = as_matrix(xt);
        let out = (0..m)
            .map(|i| kernels::dot(&xt.data()[i * n..(i + 1) * n], &xt.data()[i * n..(i + 1) * n]).sqrt())
            .collect();
        self.emit("l2_norm", vec![m, 1], out, Op::L2NormRows(x), &[x])
    }

    /// Pick `x[row, col]` for each pair, giving a vector.
    pub fn pick(&mut self, x: Var, at: &[(usize, usize)]) -> Result<Var, NumericsError> {
        let xt = self.value(x);
        let (m, n) = as_matrix(xt);
        if let Some(&(r, c)) = at.iter().find(|&&(r, c)| r >= m || c >= n) {
            return Err(NumericsError::Shape {
                op: "pick",
                detail: format!("({r},{c}) outside {m}x{n}"),
            });
        }
        let out = at.iter().map(|&(r, c)| xt.data()[r * n + c]).collect();
        self.emit("pick", vec![at.len()], out, Op::Pick(x, at.to_vec()), &[x])
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var, NumericsError> {
        let xt = self.value(x);
        if shape.iter().product::<usize>() != xt.len() {
            return Err(NumericsError::Shape {
                op: "reshape",
                detail: format!("{:?} -> {:?}", xt.shape(), shape),
            });
        }
        let data = xt.data().to_vec();
        self.emit("reshape", shape, data, Op::Reshape(x), &[x])
    }

    /// Reverse pass from a scalar loss. Gradients of earlier calls are discarded.
    pub fn backward(&mut self, loss: Var) -> Result<(), NumericsError> {
        let lt = self.value(loss);
        if !lt.is_scalar() {
            return Err(NumericsError::NonScalarLoss {
                shape: lt.shape().to_vec(),
            });
        }
        self.grads = vec![None; self.nodes.len()];
        self.grads[loss.0] = Some(vec![1.0]);
        for id in (0..=loss.0).rev() {
            let Some(upstream) = self.grads[id].take() else {
                continue;
            };
            if self.nodes[id].requires_grad {
                propagate(&self.nodes, &mut self.grads, id, &upstream);
            }
            self.grads[id] = Some(upstream);
        }
        Ok(())
    }
}

fn acc<'a>(nodes: &[Node], grads: &'a mut [Option<Vec<f64>>], v: Var) -> Option<&'a mut Vec<f64>> {
    let node = &nodes[v.0];
    if !node.requires_grad {
        return None;
    }
    Some(grads[v.0].get_or_insert_with(|| vec![0.0; node.value.len()]))
}

fn propagate(nodes: &[Node], grads: &mut [Option<Vec<f64>>], id: usize, dy: &[f64]) {
    match &nodes[id].op {
        Op::Leaf => {}
        Op::MatMul(a, b) => {
            let (m, k) = as_matrix(&nodes[a.0].value);
            let n = nodes[b.0].value.cols();
            if nodes[a.0].requires_grad {
                let bv = nodes[b.0].value.data();
                let ga = acc(nodes, grads, *a).expect("requires_grad checked");
                gemm_nt(dy, &bv, ga, m, n, k);
            }
            if nodes[b.0].requires_grad {
                let av = nodes[a.0].value.data();
                let gb = acc(nodes, grads, *b).expect("requires_grad checked");
                gemm_tn(&av, dy, gb, m, k, n);
            }
        }
        Op::MatMulT(a, b) => {
            let (m, k) = as_matrix(&nodes[a.0].value);
            let n = nodes[b.0].value.rows();
            if nodes[a.0].requires_grad {
                let bv = nodes[b.0].value.data();
                let ga = acc(nodes, grads, *a).expect("requires_grad checked");
                gemm_nn(dy, &bv, ga, m, n, k);
            }
            if nodes[b.0].requires_grad {
                let av = nodes[a.0].value.data();
                let gb = acc(nodes, grads, *b).expect("requires_grad checked");
                gemm_tn(dy, &av, gb, m, n, k);
            }
        }
        Op::Add(a, b) => {
            for v in [*a, *b] {
                if let Some(g) = acc(nodes, grads, v) {
                    add_into(g, dy);
                }
            }
        }
        Op::Sub(a, b) => {
            if let Some(g) = acc(nodes, grads, *a) {
                add_into(g, dy);
            }
            if let Some(g) = acc(nodes, grads, *b) {
                for (gi, d) in g.iter_mut().zip(dy) {
                    *gi -= d;
                }
            }
        }
        Op::Mul(a, b) => {
            let av = nodes[a.0].value.data();
            let bv = nodes[b.0].value.data();
            if let Some(g) = acc(nodes, grads, *a) {
                for i in 0..g.len() {
                    g[i] += dy[i] * bv[i];
                }
            }
            if let Some(g) = acc(nodes, grads, *b) {
                for i in 0..g.len() {
                    g[i] += dy[i] * av[i];
                }
            }
        }
        Op::Div(a, b) => {
            let av = nodes[a.0].value.data();
            let bv = nodes[b.0].value.data();
            if let Some(g) = acc(nodes, grads, *a) {
                for i in 0..g.len() {
                    g[i] += dy[i] / bv[i];
                }
            }
            if let Some(g) = acc(nodes, grads, *b) {
                for i in 0..g.len() {
                    g[i] -= dy[i] * av[i] / (bv[i] * bv[i]);
                }
            }
        }
        Op::AddRow(x, row) => {
            if let Some(g) = acc(nodes, grads, *x) {
                add_into(g, dy);
            }
            if let Some(g) = acc(nodes, grads, *row) {
                let n = g.len();
                for (i, d) in dy.iter().enumerate() {
                    g[i % n] += d;
                }
            }
        }
        Op::MulCol(x, col) => {
            let n = nodes[x.0].value.cols();
            let xv = nodes[x.0].value.data();
            let cv = nodes[col.0].value.data();
            if let Some(g) = acc(nodes, grads, *x) {
                for i in 0..g.len() {
                    g[i] += dy[i] * cv[i / n];
                }
            }
            if let Some(g) = acc(nodes, grads, *col) {
                for (i, d) in dy.iter().enumerate() {
                    g[i / n] += d * xv[i];
                }
            }
        }
        Op::Scale(x, factor) => {
            let f = *factor;
            if let Some(g) = acc(nodes, grads, *x) {
                for (gi, d) in g.iter_mut().zip(dy) {
                    *gi += d * f;
                }
            }
        }
        Op::Exp(x) => {
            let yv = nodes[id].value.data();
            if let Some(g) = acc(nodes, grads, *x) {
                for i in 0..g.len() {
                    g[i] += dy[i] * yv[i];
                }
            }
        }
        Op::Ln(x) => {
            let xv = nodes[x.0].value.data();
            if let Some(g) = acc(nodes, grads, *x) {
                for i in 0..g.len() {
                    g[i] += dy[i] / xv[i];
                }
            }
        }
        Op::Silu(x) => {
            let xv = nodes[x.0].value.data();
            if let Some(g) = acc(nodes, grads, *x) {
                for i in 0..g.len() {
                    let s = sigmoid(xv[i]);
                    g[i] += dy[i] * (s + xv[i] * s * (1.0 - s));
                }
            }
        }
        Op::Relu(x) => {
            let xv = nodes[x.0].value.data();
            if let Some(g) = acc(nodes, grads, *x) {
                for i in 0..g.len() {
                    if xv[i] > 0.0 {
                        g[i] += dy[i];
                    }
                }
            }
        }
        Op::Sigmoid(x) => {
            let yv = nodes[id].value.data();
            if let Some(g) = acc(nodes, grads, *x) {
                for i in 0..g.len() {
                    g[i] += dy[i] * yv[i] * (1.0 - yv[i]);
                }
            }
        }
        Op::Softmax(x) => {
            let n = nodes[id].value.cols();
            let yv = nodes[id].value.data();
            if let Some(g) = acc(nodes, grads, *x) {
                for (row_y, (row_dy, row_g)) in yv
                    .chunks(n)
                    .zip(dy.chunks(n).zip(g.chunks_mut(n)))
                {
                    let inner: f64 = row_y.iter().zip(row_dy).map(|(y, d)| y * d).sum();
                    for j in 0..n {
                        row_g[j] += row_y[j] * (row_dy[j] - inner);
                    }
                }
            }
        }
        Op::LogSoftmax(x) => {
            let n = nodes[id].value.cols();
            let yv = nodes[id].value.data();
            if let Some(g) = acc(nodes, grads, *x) {
                for (row_y, (row_dy, row_g)) in yv
                    .chunks(n)
                    .zip(dy.chunks(n).zip(g.chunks_mut(n)))
                {
                    let total: f64 = row_dy.iter().sum();
                    for j in 0..n {
                        row_g[j] += row_dy[j] - row_y[j].exp() * total;
                    }
                }
            }
        }
        Op::LayerNorm {
            x,
            gamma,
            beta,
            xhat,
            rstd,
        } => {
            let n = nodes[x.0].value.cols();
            let gv = nodes[gamma.0].value.data();
            if let Some(g) = acc(nodes, grads, *beta) {
                for (i, d) in dy.iter().enumerate() {
                    g[i % n] += d;
                }
            }
            if let Some(g) = acc(nodes, grads, *gamma) {
                for (i, d) in dy.iter().enumerate() {
                    g[i % n] += d * xhat[i];
                }
            }
            if let Some(g) = acc(nodes, grads, *x) {
                let inv_n = 1.0 / n as f64;
                for (row, &r) in rstd.iter().enumerate() {
                    let base = row * n;
                    let mut mean_dxhat = 0.0;
                    let mut mean_dxhat_xhat = 0.0;
                    for j in 0..n {
                        let dxh = dy[base + j] * gv[j];
                        mean_dxhat += dxh;
                        mean_dxhat_xhat += dxh * xhat[base + j];
                    }
                    mean_dxhat *= inv_n;
                    mean_dxhat_xhat *= inv_n;
                    for j in 0..n {
                        let dxh = dy[base + j] * gv[j];
                        g[base + j] += r * (dxh - mean_dxhat - xhat[base + j] * mean_dxhat_xhat);
                    }
                }
            }
        }
        Op::Concat(parts) => {
            let m = nodes[id].value.rows();
            let total = nodes[id].value.cols();
            let mut offset = 0;
            for &p in parts {
                let w = nodes[p.0].value.cols();
                if let Some(g) = acc(nodes, grads, p) {
                    for i in 0..m {
                        for j in 0..w {
                            g[i * w + j] += dy[i * total + offset + j];
                        }
                    }
                }
                offset += w;
            }
        }
        Op::ConcatRows(parts) => {
            let mut offset = 0;
            for &p in parts {
                let len = nodes[p.0].value.len();
                if let Some(g) = acc(nodes, grads, p) {
                    add_into(g, &dy[offset..offset + len]);
                }
                offset += len;
            }
        }
        Op::SliceCols(x, start) => {
            let n = nodes[x.0].value.cols();
            let w = nodes[id].value.cols();
            let start = *start;
            if let Some(g) = acc(nodes, grads, *x) {
                for (i, row) in dy.chunks(w.max(1)).enumerate() {
                    for (j, d) in row.iter().enumerate() {
                        g[i * n + start + j] += d;
                    }
                }
            }
        }
        Op::GatherRows(x, index) => {
            let n = nodes[x.0].value.cols();
            if let Some(g) = acc(nodes, grads, *x) {
                for (r, &src) in index.iter().enumerate() {
                    for j in 0..n {
                        g[src * n + j] += dy[r * n + j];
                    }
                }
            }
        }
        Op::SegmentSum(x, segment) => {
            let n = nodes[x.0].value.cols();
            if let Some(g) = acc(nodes, grads, *x) {
                for (r, &s) in segment.iter().enumerate() {
                    for j in 0..n {
                        g[r * n + j] += dy[s * n + j];
                    }
                }
            }
        }
        Op::SumRows(x) => {
            let n = nodes[x.0].value.cols();
            if let Some(g) = acc(nodes, grads, *x) {
                for (i, gi) in g.iter_mut().enumerate() {
                    *gi += dy[i % n];
                }
            }
        }
        Op::Sum(x) => {
            let d = dy[0];
            if let Some(g) = acc(nodes, grads, *x) {
                for gi in g.iter_mut() {
                    *gi += d;
                }
            }
        }
        Op::L2NormRows(x) => {
            let n = nodes[x.0].value.cols();
            let xv = nodes[x.0].value.data();
            let yv = nodes[id].value.data();
            if let Some(g) = acc(nodes, grads, *x) {
                for (i, &norm) in yv.iter().enumerate() {
                    if norm == 0.0 {
                        continue;
                    }
                    for j in 0..n {
                        g[i * n + j] += dy[i] * xv[i * n + j] / norm;
                    }
                }
            }
        }
        Op::Pick(x, at) => {
            let n = nodes[x.0].value.cols();
            if let Some(g) = acc(nodes, grads, *x) {
                for (k, &(r, c)) in at.iter().enumerate() {
                    g[r * n + c] += dy[k];
                }
            }
        }
        Op::Reshape(x) => {
            if let Some(g) = acc(nodes, grads, *x) {
                add_into(g, dy);
            }
        }
    }
}



fn add_into(g: &mut [f64], dy: &[f64]) {
    for (gi, d) in g.iter_mut().zip(dy) {
        *gi += d;
    }
}
