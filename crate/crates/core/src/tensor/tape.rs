use super::{
    as_matrix, gelu, gelu_grad, gemm, moments, MatRef, Result, Scalar, Tensor, TensorError,
};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Value<'a, F> {
    Owned(Tensor<F>),
    Borrowed(&'a Tensor<F>),
}

impl<F> Value<'_, F> {
    fn get(&self) -> &Tensor<F> {
        match self {
            Value::Owned(t) => t,
            Value::Borrowed(t) => t,
        }
    }
}

enum Op<F> {
    Constant,
    Param(usize),
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, F),
    Gelu(Var),
    LayerNorm { x: Var, gain: Option<Var>, bias: Option<Var>, xhat: Vec<F>, inv_std: Vec<F> },
    Softmax(Var),
    Gather { table: Var, indices: Vec<usize> },
    SliceCols { x: Var, start: usize },
    ConcatCols(Vec<Var>),
    SliceRows { x: Var, start: usize },
    ConcatRows(Vec<Var>),
    CrossEntropy { logits: Var, rows: Vec<(usize, usize)>, probs: Vec<F>, smoothing: F },
    Sum(Var),
}

struct Node<'a, F> {
    value: Value<'a, F>,
    op: Op<F>,
    needs_grad: bool,
}

/// Per-parameter gradient accumulators, indexed by the id passed to [`Tape::param`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<F> {
    pub tensors: Vec<Tensor<F>>,
}

impl<F: Scalar> Gradients<F> {
    pub fn zeros_like(params: &[Tensor<F>]) -> Self {
        Gradients { tensors: params.iter().map(|p| Tensor::zeros(p.shape())).collect() }
    }

    pub fn add_assign(&mut self, other: &Gradients<F>) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
                *x = *x + *y;
            }
        }
    }

    pub fn global_norm(&self) -> F {
        self.tensors
            .iter()
            .flat_map(|t| t.data().iter())
            .fold(F::zero(), |acc, &v| acc + v * v)
            .sqrt()
    }

    pub fn scale(&mut self, factor: F) {
        for t in &mut self.tensors {
            t.data_mut().iter_mut().for_each(|v| *v = *v * factor);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }
}

fn check_finite<F: Scalar>(t: &Tensor<F>, op: &'static str) -> Result<()> {
    if t.is_finite() {
        Ok(())
    } else {
        debug_assert!(false, "non-finite value produced by {op}");
        Err(TensorError::NonFinite { op })
    }
}

fn dim_err<T>(op: &'static str, detail: String) -> Result<T> {
    Err(TensorError::Dimension { op, detail })
}

/// Record of executed differentiable operations. One tape per logical thread;
/// parameters are borrowed, never copied.
pub struct Tape<'a, F: Scalar> {
    nodes: Vec<Node<'a, F>>,
}

impl<F: Scalar> Default for Tape<'_, F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'a, F: Scalar> Tape<'a, F> {
    pub fn new() -> Self {
        Tape { nodes: Vec::with_capacity(256) }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        self.nodes[v.0].value.get()
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, value: Tensor<F>, op: Op<F>, needs_grad: bool, name: &'static str) -> Result<Var> {
        check_finite(&value, name)?;
        self.nodes.push(Node { value: Value::Owned(value), op, needs_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Input that receives no gradient.
    pub fn constant(&mut self, t: Tensor<F>) -> Var {
        self.nodes.push(Node { value: Value::Owned(t), op: Op::Constant, needs_grad: false });
        Var(self.nodes.len() - 1)
    }

    /// Borrowed input that receives no gradient (parameters at inference time).
    pub fn constant_ref(&mut self, t: &'a Tensor<F>) -> Var {
        self.nodes.push(Node { value: Value::Borrowed(t), op: Op::Constant, needs_grad: false });
        Var(self.nodes.len() - 1)
    }

    /// Trainable leaf; its gradient lands in `Gradients::tensors[id]`.
    pub fn param(&mut self, t: &'a Tensor<F>, id: usize) -> Var {
        self.nodes.push(Node { value: Value::Borrowed(t), op: Op::Param(id), needs_grad: true });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, k) = as_matrix(ta, "matmul")?;
        let (k2, n) = as_matrix(tb, "matmul")?;
        if k != k2 {
            return dim_err("matmul", format!("{m}x{k} · {k2}x{n}"));
        }
        let mut out = vec![F::zero(); m * n];
        gemm(MatRef::new(ta.data(), m, k), MatRef::new(tb.data(), k, n), &mut out, false);
        let needs = self.needs(a) || self.needs(b);
        self.push(Tensor { shape: vec![m, n], data: out }, Op::MatMul(a, b), needs, "matmul")
    }

    /// Swap the two axes of a matrix.
    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let (m, n) = as_matrix(t, "transpose")?;
        let d = t.data();
        let mut out = Vec::with_capacity(m * n);
        for j in 0..n {
            out.extend((0..m).map(|i| d[i * n + j]));
        }
        let needs = self.needs(a);
        self.push(Tensor { shape: vec![n, m], data: out }, Op::Transpose(a), needs, "transpose")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    fn zip(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(F, F) -> F, op: Op<F>) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return dim_err(name, format!("{:?} vs {:?}", ta.shape(), tb.shape()));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let out = Tensor { shape: ta.shape().to_vec(), data };
        let needs = self.needs(a) || self.needs(b);
        self.push(out, op, needs, name)
    }

    /// Add a length-`d` vector to every row of an `..×d` tensor.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (tx, tb) = (self.value(x), self.value(bias));
        let d = tx.cols();
        if tb.numel() != d {
            return dim_err("add_row", format!("row width {d}, bias {:?}", tb.shape()));
        }
        let mut out = tx.clone();
        for row in out.data.chunks_mut(d) {
            for (v, &b) in row.iter_mut().zip(tb.data()) {
                *v = *v + b;
            }
        }
        let needs = self.needs(x) || self.needs(bias);
        self.push(out, Op::AddRow(x, bias), needs, "add_row")
    }

    pub fn scale(&mut self, x: Var, factor: F) -> Result<Var> {
        let mut out = self.value(x).clone();
        out.data.iter_mut().for_each(|v| *v = *v * factor);
        let needs = self.needs(x);
        self.push(out, Op::Scale(x, factor), needs, "scale")
    }

    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        let mut out = self.value(x).clone();
        out.data.iter_mut().for_each(|v| *v = gelu(*v));
        let needs = self.needs(x);
        self.push(out, Op::Gelu(x), needs, "gelu")
    }

    /// Layer norm over the last axis. Without gain/bias this is the
    /// parameter-free normalization.
    pub fn layer_norm(&mut self, x: Var, gain: Option<Var>, bias: Option<Var>, eps: F) -> Result<Var> {
        let tx = self.value(x);
        let d = tx.cols();
        for p in [gain, bias].into_iter().flatten() {
            if self.value(p).numel() != d {
                return dim_err("layer_norm", format!("width {d}, affine {:?}", self.value(p).shape()));
            }
        }
        let rows = tx.rows();
        let mut xhat = Vec::with_capacity(tx.numel());
        let mut inv_std = Vec::with_capacity(rows);
        for row in tx.data().chunks(d) {
            let (mean, is) = moments(row, eps);
            inv_std.push(is);
            xhat.extend(row.iter().map(|&v| (v - mean) * is));
        }
        let mut out = xhat.clone();
        if let Some(g) = gain {
            let g = self.value(g).data();
            for row in out.chunks_mut(d) {
                row.iter_mut().zip(g).for_each(|(v, &g)| *v = *v * g);
            }
        }
        if let Some(b) = bias {
            let b = self.value(b).data();
            for row in out.chunks_mut(d) {
                row.iter_mut().zip(b).for_each(|(v, &b)| *v = *v + b);
            }
        }
        let out = Tensor { shape: tx.shape().to_vec(), data: out };
        let needs = self.needs(x) || gain.is_some_and(|g| self.needs(g)) || bias.is_some_and(|b| self.needs(b));
        self.push(out, Op::LayerNorm { x, gain, bias, xhat, inv_std }, needs, "layer_norm")
    }

    /// Softmax over the last axis. `allowed`, when given, has one flag per
    /// element; disallowed entries get probability exactly zero and are
    /// excluded from the normalizer.
    pub fn softmax(&mut self, x: Var, allowed: Option<&[bool]>) -> Result<Var> {
        let tx = self.value(x);
        if let Some(a) = allowed {
            if a.len() != tx.numel() {
                return dim_err("softmax", format!("mask of {} for {:?}", a.len(), tx.shape()));
            }
        }
        let n = tx.cols();
        let mut out = tx.clone();
        for (r, row) in out.data.chunks_mut(n).enumerate() {
            match allowed {
                None => super::softmax_row(row),
                Some(a) => {
                    let a = &a[r * n..(r + 1) * n];
                    let max = row
                        .iter()
                        .zip(a)
                        .filter(|(_, &ok)| ok)
                        .fold(F::neg_infinity(), |m, (&v, _)| m.max(v));
                    let mut sum = F::zero();
                    for (v, &ok) in row.iter_mut().zip(a) {
                        *v = if ok { (*v - max).exp() } else { F::zero() };
                        sum = sum + *v;
                    }
                    let inv = sum.recip();
                    row.iter_mut().for_each(|v| *v = *v * inv);
                }
            }
        }
        let needs = self.needs(x);
        self.push(out, Op::Softmax(x), needs, "softmax")
    }

    /// Row lookup: `out[r] = table[indices[r]]`.
    pub fn gather(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let tt = self.value(table);
        let (rows, d) = as_matrix(tt, "gather")?;
        let mut out = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            if i >= rows {
                return Err(TensorError::Index { op: "gather", index: i, extent: rows });
            }
            out.extend_from_slice(tt.row(i));
        }
        if indices.is_empty() {
            return dim_err("gather", "empty index list".into());
        }
        let needs = self.needs(table);
        let out = Tensor { shape: vec![indices.len(), d], data: out };
        self.push(out, Op::Gather { table, indices: indices.to_vec() }, needs, "gather")
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let tx = self.value(x);
        let (m, n) = as_matrix(tx, "slice_cols")?;
        if len == 0 || start + len > n {
            return dim_err("slice_cols", format!("[{start}, {}) of {n}", start + len));
        }
        let mut out = Vec::with_capacity(m * len);
        for row in tx.data().chunks(n) {
            out.extend_from_slice(&row[start..start + len]);
        }
        let needs = self.needs(x);
        self.push(Tensor { shape: vec![m, len], data: out }, Op::SliceCols { x, start }, needs, "slice_cols")
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let m = self.value(parts[0]).rows();
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = as_matrix(self.value(p), "concat_cols")?;
            if r != m {
                return dim_err("concat_cols", format!("row count {r} vs {m}"));
            }
            widths.push(c);
        }
        let n: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(m * n);
        for i in 0..m {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[i * w..(i + 1) * w]);
            }
        }
        let needs = parts.iter().any(|&p| self.needs(p));
        self.push(Tensor { shape: vec![m, n], data: out }, Op::ConcatCols(parts.to_vec()), needs, "concat_cols")
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let tx = self.value(x);
        let (m, n) = as_matrix(tx, "slice_rows")?;
        if len == 0 || start + len > m {
            return dim_err("slice_rows", format!("[{start}, {}) of {m}", start + len));
        }
        let out = tx.data()[start * n..(start + len) * n].to_vec();
        let needs = self.needs(x);
        self.push(Tensor { shape: vec![len, n], data: out }, Op::SliceRows { x, start }, needs, "slice_rows")
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let n = self.value(parts[0]).cols();
        let mut out = Vec::new();
        for &p in parts {
            let (_, c) = as_matrix(self.value(p), "concat_rows")?;
            if c != n {
                return dim_err("concat_rows", format!("width {c} vs {n}"));
            }
            out.extend_from_slice(self.value(p).data());
        }
        let m = out.len() / n;
        let needs = parts.iter().any(|&p| self.needs(p));
        self.push(Tensor { shape: vec![m, n], data: out }, Op::ConcatRows(parts.to_vec()), needs, "concat_rows")
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().fold(F::zero(), |a, &v| a + v);
        let needs = self.needs(x);
        self.push(Tensor::scalar(s), Op::Sum(x), needs, "sum")
    }

    /// Label-smoothed negative log-likelihood averaged over flagged rows.
    /// Unflagged rows are never read, so their logits and targets cannot
    /// influence the value or the gradient.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize], flags: &[bool], smoothing: F) -> Result<Var> {
        let tl = self.value(logits);
        let (n, v) = as_matrix(tl, "cross_entropy")?;
        if targets.len() != n || flags.len() != n {
            return dim_err("cross_entropy", format!("{n} rows, {} targets, {} flags", targets.len(), flags.len()));
        }
        let vf = F::from_usize(v).unwrap();
        let mut rows = Vec::new();
        let mut probs = Vec::new();
        let mut total = F::zero();
        for (i, (&t, &flag)) in targets.iter().zip(flags).enumerate() {
            if !flag {
                continue;
            }
            if t >= v {
                return Err(TensorError::Index { op: "cross_entropy", index: t, extent: v });
            }
            let row = tl.row(i);
            let max = row.iter().copied().fold(F::neg_infinity(), F::max);
            let lse = row.iter().fold(F::zero(), |a, &z| a + (z - max).exp()).ln() + max;
            let mean_logp = row.iter().fold(F::zero(), |a, &z| a + (z - lse)) / vf;
            let nll = -(row[t] - lse);
            total = total + (F::one() - smoothing) * nll - smoothing * mean_logp;
            rows.push((i, t));
            probs.extend(row.iter().map(|&z| (z - lse).exp()));
        }
        if rows.is_empty() {
            return Err(TensorError::EmptyLoss);
        }
        let loss = total / F::from_usize(rows.len()).unwrap();
        let needs = self.needs(logits);
        self.push(Tensor::scalar(loss), Op::CrossEntropy { logits, rows, probs, smoothing }, needs, "cross_entropy")
    }

    /// Reverse sweep from a scalar `loss`. Parameter gradients are added into
    /// `grads`; the tape is consumed.
    pub fn backward(mut self, loss: Var, grads: &mut Gradients<F>) -> Result<()> {
        let lt = self.value(loss);
        if lt.numel() != 1 {
            return Err(TensorError::NonScalarLoss(lt.shape().to_vec()));
        }
        let mut adj: Vec<Option<Vec<F>>> = (0..self.nodes.len()).map(|_| None).collect();
        adj[loss.0] = Some(vec![F::one()]);

        for i in (0..=loss.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let needs = |v: Var| self.nodes[v.0].needs_grad;
            let val = |v: Var| self.nodes[v.0].value.get();
            match &node.op {
                Op::Constant => {}
                Op::Param(id) => {
                    let dst = grads.tensors[*id].data_mut();
                    for (d, &s) in dst.iter_mut().zip(&g) {
                        *d = *d + s;
                    }
                }
                Op::MatMul(a, b) => {
                    let (ta, tb) = (val(*a), val(*b));
                    let (m, k) = (ta.shape()[0], ta.shape()[1]);
                    let n = tb.shape()[1];
                    let gm = MatRef::new(&g, m, n);
                    if needs(*a) {
                        accumulate_with(&mut adj[a.0], m * k, |dst, acc| {
                            gemm(gm, MatRef::new(tb.data(), k, n).t(), dst, acc)
                        });
                    }
                    if needs(*b) {
                        accumulate_with(&mut adj[b.0], k * n, |dst, acc| {
                            gemm(MatRef::new(ta.data(), m, k).t(), gm, dst, acc)
                        });
                    }
                }
                Op::Transpose(a) => {
                    let (m, n) = (val(*a).shape()[0], val(*a).shape()[1]);
                    accumulate(&mut adj[a.0], m * n, |dst| {
                        for i in 0..m {
                            for j in 0..n {
                                dst[i * n + j] = dst[i * n + j] + g[j * m + i];
                            }
                        }
                    });
                }
                Op::Add(a, b) => {
                    for x in [*a, *b] {
                        if needs(x) {
                            accumulate(&mut adj[x.0], g.len(), |dst| add_into(dst, &g));
                        }
                    }
                }
                Op::Mul(a, b) => {
                    for (x, y) in [(*a, *b), (*b, *a)] {
                        if needs(x) {
                            let other = val(y).data();
                            accumulate(&mut adj[x.0], g.len(), |dst| {
                                for ((d, &gv), &o) in dst.iter_mut().zip(&g).zip(other) {
                                    *d = *d + gv * o;
                                }
                            });
                        }
                    }
                }
                Op::AddRow(x, b) => {
                    if needs(*x) {
                        accumulate(&mut adj[x.0], g.len(), |dst| add_into(dst, &g));
                    }
                    if needs(*b) {
                        let d = val(*b).numel();
                        accumulate(&mut adj[b.0], d, |dst| {
                            for row in g.chunks(d) {
                                add_into(dst, row);
                            }
                        });
                    }
                }
                Op::Scale(x, f) => {
                    accumulate(&mut adj[x.0], g.len(), |dst| {
                        for (d, &gv) in dst.iter_mut().zip(&g) {
                            *d = *d + gv * *f;
                        }
                    });
                }
                Op::Gelu(x) => {
                    let xs = val(*x).data();
                    accumulate(&mut adj[x.0], g.len(), |dst| {
                        for ((d, &gv), &xv) in dst.iter_mut().zip(&g).zip(xs) {
                            *d = *d + gv * gelu_grad(xv);
                        }
                    });
                }
                Op::LayerNorm { x, gain, bias, xhat, inv_std } => {
                    let d = val(*x).cols();
                    let gain_vals = gain.map(|gv| val(gv).data());
                    if let Some(b) = bias.filter(|b| needs(*b)) {
                        accumulate(&mut adj[b.0], d, |dst| {
                            for row in g.chunks(d) {
                                add_into(dst, row);
                            }
                        });
                    }
                    if let Some(gn) = gain.filter(|gn| needs(*gn)) {
                        accumulate(&mut adj[gn.0], d, |dst| {
                            for (grow, hrow) in g.chunks(d).zip(xhat.chunks(d)) {
                                for j in 0..d {
                                    dst[j] = dst[j] + grow[j] * hrow[j];
                                }
                            }
                        });
                    }
                    if needs(*x) {
                        let df = F::from_usize(d).unwrap();
                        accumulate(&mut adj[x.0], g.len(), |dst| {
                            let mut dxhat = vec![F::zero(); d];
                            for (r, ((grow, hrow), drow)) in
                                g.chunks(d).zip(xhat.chunks(d)).zip(dst.chunks_mut(d)).enumerate()
                            {
                                for j in 0..d {
                                    dxhat[j] = match gain_vals {
                                        Some(gv) => grow[j] * gv[j],
                                        None => grow[j],
                                    };
                                }
                                let mean_d = dxhat.iter().fold(F::zero(), |a, &v| a + v) / df;
                                let mean_dh =
                                    dxhat.iter().zip(hrow).fold(F::zero(), |a, (&v, &h)| a + v * h) / df;
                                for j in 0..d {
                                    drow[j] = drow[j] + inv_std[r] * (dxhat[j] - mean_d - hrow[j] * mean_dh);
                                }
                            }
                        });
                    }
                }
                Op::Softmax(x) => {
                    let y = node.value.get();
                    let n = y.cols();
                    accumulate(&mut adj[x.0], g.len(), |dst| {
                        for ((yrow, grow), drow) in y.data().chunks(n).zip(g.chunks(n)).zip(dst.chunks_mut(n)) {
                            let dot = yrow.iter().zip(grow).fold(F::zero(), |a, (&yv, &gv)| a + yv * gv);
                            for j in 0..n {
                                drow[j] = drow[j] + yrow[j] * (grow[j] - dot);
                            }
                        }
                    });
                }
                Op::Gather { table, indices } => {
                    let d = val(*table).cols();
                    let len = val(*table).numel();
                    accumulate(&mut adj[table.0], len, |dst| {
                        for (r, &idx) in indices.iter().enumerate() {
                            add_into(&mut dst[idx * d..(idx + 1) * d], &g[r * d..(r + 1) * d]);
                        }
                    });
                }
                Op::SliceCols { x, start } => {
                    let n = val(*x).cols();
                    let w = node.value.get().cols();
                    let len = val(*x).numel();
                    accumulate(&mut adj[x.0], len, |dst| {
                        for (drow, grow) in dst.chunks_mut(n).zip(g.chunks(w)) {
                            add_into(&mut drow[*start..*start + w], grow);
                        }
                    });
                }
                Op::ConcatCols(parts) => {
                    let n = node.value.get().cols();
                    let mut offset = 0;
                    for &p in parts {
                        let w = val(p).cols();
                        if needs(p) {
                            let len = val(p).numel();
                            accumulate(&mut adj[p.0], len, |dst| {
                                for (drow, grow) in dst.chunks_mut(w).zip(g.chunks(n)) {
                                    add_into(drow, &grow[offset..offset + w]);
                                }
                            });
                        }
                        offset += w;
                    }
                }
                Op::SliceRows { x, start } => {
                    let n = val(*x).cols();
                    let len = val(*x).numel();
                    accumulate(&mut adj[x.0], len, |dst| {
                        add_into(&mut dst[start * n..start * n + g.len()], &g);
                    });
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let len = val(p).numel();
                        if needs(p) {
                            accumulate(&mut adj[p.0], len, |dst| add_into(dst, &g[offset..offset + len]));
                        }
                        offset += len;
                    }
                }
                Op::CrossEntropy { logits, rows, probs, smoothing } => {
                    let v = val(*logits).cols();
                    let len = val(*logits).numel();
                    let count = F::from_usize(rows.len()).unwrap();
                    let scale = g[0] / count;
                    let uniform = *smoothing / F::from_usize(v).unwrap();
                    let hit = F::one() - *smoothing;
                    accumulate(&mut adj[logits.0], len, |dst| {
                        for (k, &(r, t)) in rows.iter().enumerate() {
                            let p = &probs[k * v..(k + 1) * v];
                            let drow = &mut dst[r * v..(r + 1) * v];
                            for j in 0..v {
                                let target = if j == t { hit + uniform } else { uniform };
                                drow[j] = drow[j] + scale * (p[j] - target);
                            }
                        }
                    });
                }
                Op::Sum(x) => {
                    let len = val(*x).numel();
                    accumulate(&mut adj[x.0], len, |dst| dst.iter_mut().for_each(|d| *d = *d + g[0]));
                }
            }
        }
        self.nodes.clear();
        if grads.is_finite() {
            Ok(())
        } else {
            debug_assert!(false, "non-finite gradient");
            Err(TensorError::NonFinite { op: "backward" })
        }
    }
}

fn add_into<F: Scalar>(dst: &mut [F], src: &[F]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d = *d + s;
    }
}

fn accumulate<F: Scalar>(slot: &mut Option<Vec<F>>, len: usize, f: impl FnOnce(&mut [F])) {
    let buf = slot.get_or_insert_with(|| vec![F::zero(); len]);
    f(buf);
}

/// Like [`accumulate`] but lets the writer overwrite a fresh buffer instead
/// of adding into zeros (`acc == false`).
fn accumulate_with<F: Scalar>(slot: &mut Option<Vec<F>>, len: usize, f: impl FnOnce(&mut [F], bool)) {
    match slot {
        Some(buf) => f(buf, true),
        None => {
            let mut buf = vec![F::zero(); len];
            f(&mut buf, false);
            *slot = Some(buf);
        }
    }
}
