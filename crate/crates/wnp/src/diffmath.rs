//! Reverse-mode differentiation over dense f64 arrays.
//!
//! A `Tape` records every operation whose inputs are tracked; `backward`
//! replays the record in reverse to accumulate gradients at the leaves.
//! The op set is exactly what the model and the sliced-Wasserstein loss
//! need, including a row-sort primitive whose backward pass scatters
//! gradients through the sorting permutation.
//!
//! All arithmetic is 64-bit. A tape and its tensors belong to one
//! training step on one thread; independent tapes may run concurrently.

use crate::error::{Error, Result};

pub type NodeId = usize;

/// Dense row-major array with an optional tape-node handle.
#[derive(Debug, Clone)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
    pub node: Option<NodeId>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        let expect: usize = shape.iter().product();
        if expect != values.len() {
            return Err(Error::shape(format!(
                "shape {:?} implies {} values, got {}",
                shape,
                expect,
                values.len()
            )));
        }
        Ok(Tensor { shape, values, node: None })
    }

    pub fn scalar(v: f64) -> Self {
        Tensor { shape: vec![], values: vec![v], node: None }
    }

    pub fn vector(values: Vec<f64>) -> Self {
        Tensor { shape: vec![values.len()], values, node: None }
    }

    pub fn matrix(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![rows, cols], values)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::shape("ragged rows".to_string()));
        }
        Tensor::matrix(r, c, rows.iter().flatten().copied().collect())
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Tensor { shape, values: vec![0.0; len], node: None }
    }

    /// View as a 2-D array: scalars are 1x1, vectors are row vectors.
    pub fn dims2(&self) -> (usize, usize) {
        match self.shape.len() {
            0 => (1, 1),
            1 => (1, self.shape[0]),
            _ => (self.shape[0], self.shape[1]),
        }
    }

    pub fn is_scalar(&self) -> bool {
        self.values.len() == 1
    }

    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.values.len(), 1);
        self.values[0]
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

type Src = Option<NodeId>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReduceKind {
    Mean,
    Sum,
}

enum Op {
    Leaf,
    Matmul { a: Src, b: Src, a_vals: Vec<f64>, b_vals: Vec<f64>, m: usize, k: usize, n: usize },
    Add { a: Src, b: Src },
    Sub { a: Src, b: Src },
    Mul { a: Src, b: Src, a_vals: Vec<f64>, b_vals: Vec<f64> },
    Div { a: Src, b: Src, a_vals: Vec<f64>, b_vals: Vec<f64> },
    AddBias { a: Src, bias: Src, rows: usize, cols: usize },
    Relu { a: Src, in_vals: Vec<f64> },
    Tanh { a: Src, out_vals: Vec<f64> },
    Softplus { a: Src, in_vals: Vec<f64> },
    Ln { a: Src, in_vals: Vec<f64> },
    AbsPow { a: Src, in_vals: Vec<f64>, p: f64 },
    Scale { a: Src, c: f64 },
    Shift { a: Src },
    SortRows { a: Src, perms: Vec<usize>, rows: usize, cols: usize },
    Transpose { a: Src, rows: usize, cols: usize },
    Reduce { a: Src, kind: ReduceKind, axis: Option<usize>, rows: usize, cols: usize },
    ConcatCols { a: Src, b: Src, rows: usize, a_cols: usize, b_cols: usize },
    SliceCols { a: Src, rows: usize, cols: usize, start: usize, end: usize },
    RepeatRows { a: Src, reps: usize, cols: usize },
}

struct Node {
    op: Op,
    len: usize,
}

/// Append-only record of operations; parents always precede children.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients keyed by tape-node id, produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn by_node(&self, id: NodeId) -> Option<&[f64]> {
        self.grads.get(id).and_then(|g| g.as_deref())
    }

    /// Gradient w.r.t. a tracked tensor, shaped like it. Untracked or
    /// unreached tensors get zeros.
    pub fn wrt(&self, t: &Tensor) -> Tensor {
        let values = t
            .node
            .and_then(|id| self.by_node(id).map(<[f64]>::to_vec))
            .unwrap_or_else(|| vec![0.0; t.values.len()]);
        Tensor { shape: t.shape.clone(), values, node: None }
    }
}

fn matmul_vals(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for l in 0..k {
            let av = a[i * k + l];
            if av == 0.0 {
                continue;
            }
            for j in 0..n {
                out[i * n + j] += av * b[l * n + j];
            }
        }
    }
    out
}

fn transpose_vals(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; a.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = a[r * cols + c];
        }
    }
    out
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Register a tracked leaf; gradients flow back to it.
    pub fn leaf(&mut self, t: &Tensor) -> Tensor {
        let id = self.push(Op::Leaf, t.values.len());
        Tensor { shape: t.shape.clone(), values: t.values.clone(), node: Some(id) }
    }

    fn push(&mut self, op: Op, len: usize) -> NodeId {
        self.nodes.push(Node { op, len });
        self.nodes.len() - 1
    }

    /// Record only when some input is tracked; constants stay off-tape.
    fn record(&mut self, op: Op, len: usize, tracked: bool) -> Option<NodeId> {
        tracked.then(|| self.push(op, len))
    }

    pub fn matmul(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let (m, k) = a.dims2();
        let (k2, n) = b.dims2();
        if k != k2 {
            return Err(Error::shape(format!(
                "matmul inner dims disagree: {:?} vs {:?}",
                a.shape, b.shape
            )));
        }
        let values = matmul_vals(&a.values, &b.values, m, k, n);
        let node = self.record(
            Op::Matmul {
                a: a.node,
                b: b.node,
                a_vals: a.values.clone(),
                b_vals: b.values.clone(),
                m,
                k,
                n,
            },
            values.len(),
            a.node.is_some() || b.node.is_some(),
        );
        Ok(Tensor { shape: vec![m, n], values, node })
    }

    fn binary(
        &mut self,
        a: &Tensor,
        b: &Tensor,
        f: impl Fn(f64, f64) -> f64,
        make: impl FnOnce(Src, Src, Vec<f64>, Vec<f64>) -> Op,
    ) -> Result<Tensor> {
        if a.shape != b.shape {
            return Err(Error::shape(format!(
                "elementwise shapes differ: {:?} vs {:?}",
                a.shape, b.shape
            )));
        }
        let values: Vec<f64> =
            a.values.iter().zip(&b.values).map(|(&x, &y)| f(x, y)).collect();
        let node = self.record(
            make(a.node, b.node, a.values.clone(), b.values.clone()),
            values.len(),
            a.node.is_some() || b.node.is_some(),
        );
        Ok(Tensor { shape: a.shape.clone(), values, node })
    }

    pub fn add(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.binary(a, b, |x, y| x + y, |a, b, _, _| Op::Add { a, b })
    }

    pub fn sub(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.binary(a, b, |x, y| x - y, |a, b, _, _| Op::Sub { a, b })
    }

    pub fn mul(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.binary(a, b, |x, y| x * y, |a, b, av, bv| Op::Mul { a, b, a_vals: av, b_vals: bv })
    }

    pub fn div(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.binary(a, b, |x, y| x / y, |a, b, av, bv| Op::Div { a, b, a_vals: av, b_vals: bv })
    }

    /// Row-vector bias broadcast: every row of `a` gets `bias` added.
    pub fn add_bias(&mut self, a: &Tensor, bias: &Tensor) -> Result<Tensor> {
        let (rows, cols) = a.dims2();
        if bias.values.len() != cols {
            return Err(Error::shape(format!(
                "bias length {} does not match {} columns",
                bias.values.len(),
                cols
            )));
        }
        let mut values = a.values.clone();
        for r in 0..rows {
            for c in 0..cols {
                values[r * cols + c] += bias.values[c];
            }
        }
        let node = self.record(
            Op::AddBias { a: a.node, bias: bias.node, rows, cols },
            values.len(),
            a.node.is_some() || bias.node.is_some(),
        );
        Ok(Tensor { shape: a.shape.clone(), values, node })
    }

    fn unary(
        &mut self,
        a: &Tensor,
        f: impl Fn(f64) -> f64,
        make: impl FnOnce(Src, Vec<f64>) -> Op,
    ) -> Tensor {
        let values: Vec<f64> = a.values.iter().map(|&x| f(x)).collect();
        let node = self.record(
            make(a.node, a.values.clone()),
            values.len(),
            a.node.is_some(),
        );
        Tensor { shape: a.shape.clone(), values, node }
    }

    pub fn relu(&mut self, a: &Tensor) -> Tensor {
        self.unary(a, |x| x.max(0.0), |a, iv| Op::Relu { a, in_vals: iv })
    }

    pub fn tanh(&mut self, a: &Tensor) -> Tensor {
        let values: Vec<f64> = a.values.iter().map(|&x| x.tanh()).collect();
        let node = self.record(
            Op::Tanh { a: a.node, out_vals: values.clone() },
            values.len(),
            a.node.is_some(),
        );
        Tensor { shape: a.shape.clone(), values, node }
    }

    pub fn softplus(&mut self, a: &Tensor) -> Tensor {
        self.unary(a, softplus, |a, iv| Op::Softplus { a, in_vals: iv })
    }

    pub fn ln(&mut self, a: &Tensor) -> Tensor {
        self.unary(a, f64::ln, |a, iv| Op::Ln { a, in_vals: iv })
    }

    /// |x|^p with subgradient 0 at x = 0.
    pub fn abs_pow(&mut self, a: &Tensor, p: f64) -> Tensor {
        self.unary(a, |x| x.abs().powf(p), |a, iv| Op::AbsPow { a, in_vals: iv, p })
    }

    pub fn scale(&mut self, a: &Tensor, c: f64) -> Tensor {
        self.unary(a, |x| x * c, |a, _| Op::Scale { a, c })
    }

    pub fn shift(&mut self, a: &Tensor, c: f64) -> Tensor {
        self.unary(a, |x| x + c, |a, _| Op::Shift { a })
    }

    /// Sort each row ascending (stable). Returns the sorted tensor and,
    /// per row, the original index of each sorted element.
    pub fn sort_rows(&mut self, a: &Tensor) -> (Tensor, Vec<Vec<usize>>) {
        let (rows, cols) = a.dims2();
        let mut values = vec![0.0; a.values.len()];
        let mut perms_flat = vec![0usize; a.values.len()];
        let mut perms = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = &a.values[r * cols..(r + 1) * cols];
            let mut idx: Vec<usize> = (0..cols).collect();
            idx.sort_by(|&i, &j| row[i].partial_cmp(&row[j]).unwrap());
            for (j, &src) in idx.iter().enumerate() {
                values[r * cols + j] = row[src];
                perms_flat[r * cols + j] = src;
            }
            perms.push(idx);
        }
        let node = self.record(
            Op::SortRows { a: a.node, perms: perms_flat, rows, cols },
            values.len(),
            a.node.is_some(),
        );
        (Tensor { shape: a.shape.clone(), values, node }, perms)
    }

    pub fn transpose(&mut self, a: &Tensor) -> Tensor {
        let (rows, cols) = a.dims2();
        let values = transpose_vals(&a.values, rows, cols);
        let node = self.record(
            Op::Transpose { a: a.node, rows, cols },
            values.len(),
            a.node.is_some(),
        );
        Tensor { shape: vec![cols, rows], values, node }
    }

    pub fn reduce(&mut self, kind: ReduceKind, a: &Tensor, axis: Option<usize>) -> Result<Tensor> {
        let (rows, cols) = a.dims2();
        if let Some(ax) = axis {
            if ax > 1 {
                return Err(Error::shape(format!("axis {ax} out of range for 2-D reduce")));
            }
        }
        if a.values.is_empty() {
            return Err(Error::contract("reduce over zero elements".to_string()));
        }
        let (values, shape) = match axis {
            None => {
                let s: f64 = a.values.iter().sum();
                let v = match kind {
                    ReduceKind::Sum => s,
                    ReduceKind::Mean => s / a.values.len() as f64,
                };
                (vec![v], vec![])
            }
            Some(0) => {
                let mut out = vec![0.0; cols];
                for row in a.values.chunks(cols) {
                    for (acc, v) in out.iter_mut().zip(row) {
                        *acc += v;
                    }
                }
                if kind == ReduceKind::Mean {
                    for v in &mut out {
                        *v /= rows as f64;
                    }
                }
                (out, vec![cols])
            }
            Some(_) => {
                let mut out = vec![0.0; rows];
                for (acc, row) in out.iter_mut().zip(a.values.chunks(cols)) {
                    *acc = row.iter().sum();
                }
                if kind == ReduceKind::Mean {
                    for v in &mut out {
                        *v /= cols as f64;
                    }
                }
                (out, vec![rows])
            }
        };
        let node = self.record(
            Op::Reduce { a: a.node, kind, axis, rows, cols },
            values.len(),
            a.node.is_some(),
        );
        Ok(Tensor { shape, values, node })
    }

    pub fn mean(&mut self, a: &Tensor, axis: Option<usize>) -> Result<Tensor> {
        self.reduce(ReduceKind::Mean, a, axis)
    }

    pub fn sum(&mut self, a: &Tensor, axis: Option<usize>) -> Result<Tensor> {
        self.reduce(ReduceKind::Sum, a, axis)
    }

    pub fn concat_cols(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let (ar, ac) = a.dims2();
        let (br, bc) = b.dims2();
        if ar != br {
            return Err(Error::shape(format!(
                "concat_cols row counts differ: {ar} vs {br}"
            )));
        }
        let mut values = Vec::with_capacity(a.values.len() + b.values.len());
        for r in 0..ar {
            values.extend_from_slice(&a.values[r * ac..(r + 1) * ac]);
            values.extend_from_slice(&b.values[r * bc..(r + 1) * bc]);
        }
        let node = self.record(
            Op::ConcatCols { a: a.node, b: b.node, rows: ar, a_cols: ac, b_cols: bc },
            values.len(),
            a.node.is_some() || b.node.is_some(),
        );
        Ok(Tensor { shape: vec![ar, ac + bc], values, node })
    }

    /// Columns `start..end` of a 2-D tensor.
    pub fn slice_cols(&mut self, a: &Tensor, start: usize, end: usize) -> Result<Tensor> {
        let (rows, cols) = a.dims2();
        if start > end || end > cols {
            return Err(Error::shape(format!(
                "slice {start}..{end} out of range for {cols} columns"
            )));
        }
        let width = end - start;
        let mut values = Vec::with_capacity(rows * width);
        for r in 0..rows {
            values.extend_from_slice(&a.values[r * cols + start..r * cols + end]);
        }
        let node = self.record(
            Op::SliceCols { a: a.node, rows, cols, start, end },
            values.len(),
            a.node.is_some(),
        );
        Ok(Tensor { shape: vec![rows, width], values, node })
    }

    /// Tile a row vector into `reps` identical rows.
    pub fn repeat_rows(&mut self, a: &Tensor, reps: usize) -> Result<Tensor> {
        let (rows, cols) = a.dims2();
        if rows != 1 {
            return Err(Error::shape(format!(
                "repeat_rows expects a single row, got {rows}"
            )));
        }
        let mut values = Vec::with_capacity(reps * cols);
        for _ in 0..reps {
            values.extend_from_slice(&a.values);
        }
        let node = self.record(
            Op::RepeatRows { a: a.node, reps, cols },
            values.len(),
            a.node.is_some(),
        );
        Ok(Tensor { shape: vec![reps, cols], values, node })
    }

    /// Gradients of a tracked scalar w.r.t. every tracked node.
    pub fn backward(&self, loss: &Tensor) -> Result<Gradients> {
        let root = loss
            .node
            .ok_or_else(|| Error::contract("backward on an untracked tensor".to_string()))?;
        if !loss.is_scalar() {
            return Err(Error::contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                loss.shape
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[root] = Some(vec![1.0]);

        let acc = |grads: &mut Vec<Option<Vec<f64>>>, src: Src, len: usize, add: &dyn Fn(&mut [f64])| {
            if let Some(pid) = src {
                let slot = grads[pid].get_or_insert_with(|| vec![0.0; len]);
                add(slot);
            }
        };
        let plen = |src: Src| src.map(|pid| self.nodes[pid].len).unwrap_or(0);

        for id in (0..=root).rev() {
            let g = match grads[id].take() {
                Some(g) => g,
                None => continue,
            };
            match &self.nodes[id].op {
                Op::Leaf => {
                    grads[id] = Some(g);
                    continue;
                }
                Op::Matmul { a, b, a_vals, b_vals, m, k, n } => {
                    let (m, k, n) = (*m, *k, *n);
                    if a.is_some() {
                        let bt = transpose_vals(b_vals, k, n);
                        let da = matmul_vals(&g, &bt, m, n, k);
                        acc(&mut grads, *a, plen(*a), &|s| {
                            for (x, d) in s.iter_mut().zip(&da) {
                                *x += d;
                            }
                        });
                    }
                    if b.is_some() {
                        let at = transpose_vals(a_vals, m, k);
                        let db = matmul_vals(&at, &g, k, m, n);
                        acc(&mut grads, *b, plen(*b), &|s| {
                            for (x, d) in s.iter_mut().zip(&db) {
                                *x += d;
                            }
                        });
                    }
                }
                Op::Add { a, b } => {
                    for src in [a, b] {
                        acc(&mut grads, *src, plen(*src), &|s| {
                            for (x, d) in s.iter_mut().zip(&g) {
                                *x += d;
                            }
                        });
                    }
                }
                Op::Sub { a, b } => {
                    acc(&mut grads, *a, plen(*a), &|s| {
                        for (x, d) in s.iter_mut().zip(&g) {
                            *x += d;
                        }
                    });
                    acc(&mut grads, *b, plen(*b), &|s| {
                        for (x, d) in s.iter_mut().zip(&g) {
                            *x -= d;
                        }
                    });
                }
                Op::Mul { a, b, a_vals, b_vals } => {
                    acc(&mut grads, *a, plen(*a), &|s| {
                        for i in 0..s.len() {
                            s[i] += g[i] * b_vals[i];
                        }
                    });
                    acc(&mut grads, *b, plen(*b), &|s| {
                        for i in 0..s.len() {
                            s[i] += g[i] * a_vals[i];
                        }
                    });
                }
                Op::Div { a, b, a_vals, b_vals } => {
                    acc(&mut grads, *a, plen(*a), &|s| {
                        for i in 0..s.len() {
                            s[i] += g[i] / b_vals[i];
                        }
                    });
                    acc(&mut grads, *b, plen(*b), &|s| {
                        for i in 0..s.len() {
                            s[i] -= g[i] * a_vals[i] / (b_vals[i] * b_vals[i]);
                        }
                    });
                }
                Op::AddBias { a, bias, rows, cols } => {
                    acc(&mut grads, *a, plen(*a), &|s| {
                        for (x, d) in s.iter_mut().zip(&g) {
                            *x += d;
                        }
                    });
                    let (rows, cols) = (*rows, *cols);
                    acc(&mut grads, *bias, plen(*bias), &|s| {
                        for r in 0..rows {
                            for c in 0..cols {
                                s[c] += g[r * cols + c];
                            }
                        }
                    });
                }
                Op::Relu { a, in_vals } => {
                    acc(&mut grads, *a, plen(*a), &|s| {
                        for i in 0..s.len() {
                            if in_vals[i] > 0.0 {
                                s[i] += g[i];
                            }
                        }
                    });
                }
                Op::Tanh { a, out_vals } => {
                    acc(&mut grads, *a, plen(*a), &|s| {
                        for i in 0..s.len() {
                            s[i] += g[i] * (1.0 - out_vals[i] * out_vals[i]);
                        }
                    });
                }
                Op::Softplus { a, in_vals } => {
                    acc(&mut grads, *a, plen(*a), &|s| {
                        for i in 0..s.len() {
                            s[i] += g[i] * sigmoid(in_vals[i]);
                        }
                    });
                }
                Op::Ln { a, in_vals } => {
                    acc(&mut grads, *a, plen(*a), &|s| {
                        for i in 0..s.len() {
                            s[i] += g[i] / in_vals[i];
                        }
                    });
                }
                Op::AbsPow { a, in_vals, p } => {
                    let p = *p;
                    acc(&mut grads, *a, plen(*a), &|s| {
                        for i in 0..s.len() {
                            let x = in_vals[i];
                            if x != 0.0 {
                                s[i] += g[i] * p * x.abs().powf(p - 1.0) * x.signum();
                            }
                        }
                    });
                }
                Op::Scale { a, c } => {
                    let c = *c;
                    acc(&mut grads, *a, plen(*a), &|s| {
                        for i in 0..s.len() {
                            s[i] += g[i] * c;
                        }
                    });
                }
                Op::Shift { a } => {
                    acc(&mut grads, *a, plen(*a), &|s| {
                        for (x, d) in s.iter_mut().zip(&g) {
                            *x += d;
                        }
                    });
                }
                Op::SortRows { a, perms, rows, cols } => {
                    let (rows, cols) = (*rows, *cols);
                    acc(&mut grads, *a, plen(*a), &|s| {
                        for r in 0..rows {
                            for j in 0..cols {
                                s[r * cols + perms[r * cols + j]] += g[r * cols + j];
                            }
                        }
                    });
                }
                Op::Transpose { a, rows, cols } => {
                    // g has dims (cols, rows); transposing it restores (rows, cols)
                    let gt = transpose_vals(&g, *cols, *rows);
                    acc(&mut grads, *a, plen(*a), &|s| {
                        for (x, d) in s.iter_mut().zip(&gt) {
                            *x += d;
                        }
                    });
                }
                Op::Reduce { a, kind, axis, rows, cols } => {
                    let (rows, cols) = (*rows, *cols);
                    let kind = *kind;
                    let axis = *axis;
                    acc(&mut grads, *a, plen(*a), &|s| match axis {
                        None => {
                            let d = match kind {
                                ReduceKind::Sum => g[0],
                                ReduceKind::Mean => g[0] / s.len() as f64,
                            };
                            for x in s.iter_mut() {
                                *x += d;
                            }
                        }
                        Some(0) => {
                            let scale = match kind {
                                ReduceKind::Sum => 1.0,
                                ReduceKind::Mean => 1.0 / rows as f64,
                            };
                            for r in 0..rows {
                                for c in 0..cols {
                                    s[r * cols + c] += g[c] * scale;
                                }
                            }
                        }
                        Some(_) => {
                            let scale = match kind {
                                ReduceKind::Sum => 1.0,
                                ReduceKind::Mean => 1.0 / cols as f64,
                            };
                            for r in 0..rows {
                                for c in 0..cols {
                                    s[r * cols + c] += g[r] * scale;
                                }
                            }
                        }
                    });
                }
                Op::ConcatCols { a, b, rows, a_cols, b_cols } => {
                    let (rows, a_cols, b_cols) = (*rows, *a_cols, *b_cols);
                    let tot = a_cols + b_cols;
                    acc(&mut grads, *a, plen(*a), &|s| {
                        for r in 0..rows {
                            for c in 0..a_cols {
                                s[r * a_cols + c] += g[r * tot + c];
                            }
                        }
                    });
                    acc(&mut grads, *b, plen(*b), &|s| {
                        for r in 0..rows {
                            for c in 0..b_cols {
                                s[r * b_cols + c] += g[r * tot + a_cols + c];
                            }
                        }
                    });
                }
                Op::SliceCols { a, rows, cols, start, end } => {
                    let (rows, cols, start, end) = (*rows, *cols, *start, *end);
                    let width = end - start;
                    acc(&mut grads, *a, plen(*a), &|s| {
                        for r in 0..rows {
                            for c in 0..width {
                                s[r * cols + start + c] += g[r * width + c];
                            }
                        }
                    });
                }
                Op::RepeatRows { a, reps, cols } => {
                    let (reps, cols) = (*reps, *cols);
                    acc(&mut grads, *a, plen(*a), &|s| {
                        for r in 0..reps {
                            for c in 0..cols {
                                s[c] += g[r * cols + c];
                            }
                        }
                    });
                }
            }
        }
        Ok(Gradients { grads })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{central_diff, max_rel_err};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn t(shape: Vec<usize>, v: Vec<f64>) -> Tensor {
        Tensor::new(shape, v).unwrap()
    }

    #[test]
    fn matmul_identity() {
        let mut tape = Tape::new();
        let i2 = t(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]);
        let b = t(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let c = tape.matmul(&i2, &b).unwrap();
        assert_eq!(c.values, b.values);
    }

    #[test]
    fn matmul_hand() {
        let mut tape = Tape::new();
        let a = t(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]);
        let b = t(vec![2, 1], vec![1.0, 1.0]);
        let c = tape.matmul(&a, &b).unwrap();
        assert_eq!(c.values, vec![3.0, 7.0]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut tape = Tape::new();
        let a = t(vec![2, 3], vec![0.0; 6]);
        let b = t(vec![2, 2], vec![0.0; 4]);
        let err = tape.matmul(&a, &b).unwrap_err().to_string();
        assert!(err.contains("[2, 3]") && err.contains("[2, 2]"), "{err}");
    }

    #[test]
    fn matmul_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a0: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b0: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let f = |av: &[f64]| {
            let mut tape = Tape::new();
            let a = tape.leaf(&t(vec![3, 2], av.to_vec()));
            let b = t(vec![2, 4], b0.clone());
            let c = tape.matmul(&a, &b).unwrap();
            tape.sum(&c, None).unwrap().item()
        };
        let mut tape = Tape::new();
        let a = tape.leaf(&t(vec![3, 2], a0.clone()));
        let b = t(vec![2, 4], b0.clone());
        let c = tape.matmul(&a, &b).unwrap();
        let loss = tape.sum(&c, None).unwrap();
        let grads = tape.backward(&loss).unwrap();
        let got = grads.wrt(&a).values;
        let want = central_diff(&f, &a0, 1e-5);
        assert!(max_rel_err(&got, &want) < 1e-5);
    }

    #[test]
    fn relu_forward() {
        let mut tape = Tape::new();
        let x = t(vec![3], vec![-1.0, 0.0, 2.0]);
        assert_eq!(tape.relu(&x).values, vec![0.0, 0.0, 2.0]);
    }

    #[test]
    fn abs_pow_value_and_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(&t(vec![1], vec![-2.0]));
        let y = tape.abs_pow(&x, 2.0);
        assert_eq!(y.values, vec![4.0]);
        let loss = tape.sum(&y, None).unwrap();
        let grads = tape.backward(&loss).unwrap();
        assert_eq!(grads.wrt(&x).values, vec![-4.0]);
    }

    #[test]
    fn abs_pow_subgradient_zero_at_origin() {
        let mut tape = Tape::new();
        let x = tape.leaf(&t(vec![1], vec![0.0]));
        let y = tape.abs_pow(&x, 1.0);
        let loss = tape.sum(&y, None).unwrap();
        let grads = tape.backward(&loss).unwrap();
        assert_eq!(grads.wrt(&x).values, vec![0.0]);
    }

    #[test]
    fn tanh_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x0: Vec<f64> = (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let f = |xv: &[f64]| {
            let mut tape = Tape::new();
            let x = tape.leaf(&t(vec![3, 4], xv.to_vec()));
            let y = tape.tanh(&x);
            tape.sum(&y, None).unwrap().item()
        };
        let mut tape = Tape::new();
        let x = tape.leaf(&t(vec![3, 4], x0.clone()));
        let y = tape.tanh(&x);
        let loss = tape.sum(&y, None).unwrap();
        let grads = tape.backward(&loss).unwrap();
        let want = central_diff(&f, &x0, 1e-5);
        assert!(max_rel_err(&grads.wrt(&x).values, &want) < 1e-5);
    }

    #[test]
    fn sort_rows_values_and_permutation() {
        let mut tape = Tape::new();
        let x = t(vec![1, 3], vec![3.0, 1.0, 2.0]);
        let (sorted, perms) = tape.sort_rows(&x);
        assert_eq!(sorted.values, vec![1.0, 2.0, 3.0]);
        assert_eq!(perms[0], vec![1, 2, 0]);
    }

    #[test]
    fn sort_rows_sum_gradient_is_ones() {
        let mut tape = Tape::new();
        let x = tape.leaf(&t(vec![1, 4], vec![0.3, -1.0, 2.0, 0.1]));
        let (sorted, _) = tape.sort_rows(&x);
        let loss = tape.sum(&sorted, None).unwrap();
        let grads = tape.backward(&loss).unwrap();
        assert_eq!(grads.wrt(&x).values, vec![1.0; 4]);
    }

    #[test]
    fn sort_rows_weighted_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x0: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let w: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let f = |xv: &[f64]| {
            let mut tape = Tape::new();
            let x = tape.leaf(&t(vec![1, 5], xv.to_vec()));
            let (sorted, _) = tape.sort_rows(&x);
            let wt = t(vec![1, 5], w.clone());
            let prod = tape.mul(&sorted, &wt).unwrap();
            tape.sum(&prod, None).unwrap().item()
        };
        let mut tape = Tape::new();
        let x = tape.leaf(&t(vec![1, 5], x0.clone()));
        let (sorted, _) = tape.sort_rows(&x);
        let wt = t(vec![1, 5], w.clone());
        let prod = tape.mul(&sorted, &wt).unwrap();
        let loss = tape.sum(&prod, None).unwrap();
        let grads = tape.backward(&loss).unwrap();
        let want = central_diff(&f, &x0, 1e-5);
        assert!(max_rel_err(&grads.wrt(&x).values, &want) < 1e-5);
    }

    #[test]
    fn mean_axis0() {
        let mut tape = Tape::new();
        let x = t(vec![2, 2], vec![1.0, 3.0, 5.0, 7.0]);
        let m = tape.mean(&x, Some(0)).unwrap();
        assert_eq!(m.values, vec![3.0, 5.0]);
    }

    #[test]
    fn reduce_empty_errors() {
        let mut tape = Tape::new();
        let x = Tensor::zeros(vec![0, 3]);
        assert!(tape.sum(&x, Some(0)).is_err());
    }

    #[test]
    fn mean_gradient_distributes() {
        let mut tape = Tape::new();
        let x = tape.leaf(&t(vec![4], vec![1.0, 2.0, 3.0, 4.0]));
        let m = tape.mean(&x, None).unwrap();
        let grads = tape.backward(&m).unwrap();
        assert_eq!(grads.wrt(&x).values, vec![0.25; 4]);
    }

    #[test]
    fn concat_cols_basic_and_empty() {
        let mut tape = Tape::new();
        let a = t(vec![1, 1], vec![1.0]);
        let b = t(vec![1, 2], vec![2.0, 3.0]);
        let c = tape.concat_cols(&a, &b).unwrap();
        assert_eq!(c.values, vec![1.0, 2.0, 3.0]);
        let empty = Tensor::zeros(vec![1, 0]);
        let d = tape.concat_cols(&a, &empty).unwrap();
        assert_eq!(d.values, a.values);
    }

    #[test]
    fn concat_cols_backward_splits() {
        let mut tape = Tape::new();
        let a = tape.leaf(&t(vec![2, 1], vec![1.0, 2.0]));
        let b = tape.leaf(&t(vec![2, 2], vec![3.0, 4.0, 5.0, 6.0]));
        let c = tape.concat_cols(&a, &b).unwrap();
        let loss = tape.sum(&c, None).unwrap();
        let grads = tape.backward(&loss).unwrap();
        assert_eq!(grads.wrt(&a).values, vec![1.0, 1.0]);
        assert_eq!(grads.wrt(&b).values, vec![1.0; 4]);
    }

    #[test]
    fn concat_cols_row_mismatch() {
        let mut tape = Tape::new();
        let a = t(vec![2, 1], vec![1.0, 2.0]);
        let b = t(vec![3, 1], vec![1.0, 2.0, 3.0]);
        assert!(tape.concat_cols(&a, &b).is_err());
    }

    #[test]
    fn backward_simple_quadratic() {
        let mut tape = Tape::new();
        let x = tape.leaf(&t(vec![2], vec![1.0, 2.0]));
        let sq = tape.mul(&x, &x).unwrap();
        let loss = tape.sum(&sq, None).unwrap();
        let grads = tape.backward(&loss).unwrap();
        assert_eq!(grads.wrt(&x).values, vec![2.0, 4.0]);
    }

    #[test]
    fn backward_rejects_nonscalar() {
        let mut tape = Tape::new();
        let x = tape.leaf(&t(vec![2], vec![1.0, 2.0]));
        assert!(tape.backward(&x).is_err());
    }

    #[test]
    fn backward_deterministic_on_same_tape() {
        let mut tape = Tape::new();
        let x = tape.leaf(&t(vec![3], vec![0.5, -0.2, 0.8]));
        let y = tape.tanh(&x);
        let loss = tape.sum(&y, None).unwrap();
        let g1 = tape.backward(&loss).unwrap().wrt(&x).values;
        let g2 = tape.backward(&loss).unwrap().wrt(&x).values;
        assert_eq!(g1, g2);
    }

    // Two-layer MLP with tanh hidden, all weights gradient-checked.
    #[test]
    fn mlp_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let din = 3;
        let h = 4;
        let x0: Vec<f64> = (0..2 * din).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let w1: Vec<f64> = (0..din * h).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b1: Vec<f64> = (0..h).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let w2: Vec<f64> = (0..h).map(|_| rng.gen_range(-1.0..1.0)).collect();

        let run = |w1v: &[f64], b1v: &[f64], w2v: &[f64], track: bool| {
            let mut tape = Tape::new();
            let x = t(vec![2, din], x0.clone());
            let (w1t, b1t, w2t);
            if track {
                w1t = tape.leaf(&t(vec![din, h], w1v.to_vec()));
                b1t = tape.leaf(&t(vec![h], b1v.to_vec()));
                w2t = tape.leaf(&t(vec![h, 1], w2v.to_vec()));
            } else {
                w1t = t(vec![din, h], w1v.to_vec());
                b1t = t(vec![h], b1v.to_vec());
                w2t = t(vec![h, 1], w2v.to_vec());
            }
            let z = tape.matmul(&x, &w1t).unwrap();
            let z = tape.add_bias(&z, &b1t).unwrap();
            let a = tape.tanh(&z);
            let out = tape.matmul(&a, &w2t).unwrap();
            let loss = tape.sum(&out, None).unwrap();
            (tape, w1t, b1t, w2t, loss)
        };

        let (tape, w1t, b1t, w2t, loss) = run(&w1, &b1, &w2, true);
        let grads = tape.backward(&loss).unwrap();

        let fd_w1 = central_diff(
            &|v: &[f64]| run(v, &b1, &w2, false).4.item(),
            &w1,
            1e-5,
        );
        let fd_b1 = central_diff(
            &|v: &[f64]| run(&w1, v, &w2, false).4.item(),
            &b1,
            1e-5,
        );
        let fd_w2 = central_diff(
            &|v: &[f64]| run(&w1, &b1, v, false).4.item(),
            &w2,
            1e-5,
        );
        assert!(max_rel_err(&grads.wrt(&w1t).values, &fd_w1) < 1e-5);
        assert!(max_rel_err(&grads.wrt(&b1t).values, &fd_b1) < 1e-5);
        assert!(max_rel_err(&grads.wrt(&w2t).values, &fd_w2) < 1e-5);
    }
}
