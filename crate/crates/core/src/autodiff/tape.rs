//! Operation tape and reverse sweep.
//!
//! Every operation appends a node holding its output value and enough of its
//! inputs to differentiate it. Nodes are appended in evaluation order, so the
//! reverse sweep visits them in reverse index order, each exactly once.

use std::collections::HashMap;

use super::params::{ParamId, ParamStore};
use super::tensor::{order_free_sum, Tensor};
use super::AutodiffError;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Smallest probability fed into `log` by [`Tape::cross_entropy`].
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug)]
enum Op {
    Input,
    Constant,
    Param,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    Reshape(Var),
    SelectRows(Var, Vec<usize>),
    RepeatRows(Var),
    MeanRows(Var),
    Sum(Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Exp(Var),
    Log(Var),
    MaskedSoftmax(Var, Vec<bool>),
    CrossEntropy(Var, usize),
    GaussianKl(Var, Var),
    NeighborSum(Var, Vec<Vec<usize>>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Records a forward computation for one reverse sweep.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
    consumed: bool,
}

/// Gradients produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    params: Vec<(ParamId, Var)>,
}

impl Gradients {
    /// Gradient of the loss with respect to `var`, if it was reachable.
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    /// Adds every parameter gradient into the store's accumulators.
    pub fn accumulate_into(&self, store: &mut ParamStore) {
        for &(id, var) in &self.params {
            if let Some(g) = self.get(var) {
                store.accumulate_grad(id, g);
            }
        }
    }

    /// Parameter gradients as `(id, gradient)` pairs.
    pub fn param_grads(&self) -> Vec<(ParamId, Tensor)> {
        self.params
            .iter()
            .filter_map(|&(id, var)| self.get(var).map(|g| (id, g.clone())))
            .collect()
    }
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> AutodiffError {
    AutodiffError::ShapeMismatch {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn matmul_raw(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        let row = &mut out[i * m..(i + 1) * m];
        for p in 0..k {
            let x = a[i * k + p];
            if x == 0.0 {
                continue;
            }
            let brow = &b[p * m..(p + 1) * m];
            for (o, &y) in row.iter_mut().zip(brow) {
                *o += x * y;
            }
        }
    }
    out
}

fn transpose(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = a[i * cols + j];
        }
    }
    out
}

fn accumulate(slot: &mut Option<Tensor>, g: Tensor) {
    match slot {
        Some(existing) => existing.add_assign(&g),
        None => *slot = Some(g),
    }
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

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn grad_of(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    /// Differentiable leaf whose gradient can be read back from [`Gradients`].
    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Input, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Constant, false)
    }

    /// Leaf bound to a stored parameter; repeated calls reuse the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.push(store.value(id).clone(), Op::Param, true);
        self.params.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (n, k, k2, m) = (ta.rows(), ta.cols(), tb.rows(), tb.cols());
        if k != k2 {
            return Err(shape_err("matmul", ta, tb));
        }
        let out = matmul_raw(ta.data(), tb.data(), n, k, m);
        let ng = self.grad_of(&[a, b]);
        Ok(self.push(Tensor::matrix(n, m, out)?, Op::MatMul(a, b), ng))
    }

    fn zip_same(
        &mut self,
        a: Var,
        b: Var,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var, AutodiffError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err(name, ta, tb));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        let ng = self.grad_of(&[a, b]);
        Ok(self.push(value, op, ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.zip_same(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.zip_same(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.zip_same(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    /// Adds the `1 × d` row `bias` to every row of `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var, AutodiffError> {
        let (ta, tb) = (self.value(a), self.value(bias));
        if tb.rows() != 1 || tb.cols() != ta.cols() {
            return Err(shape_err("add_row", ta, tb));
        }
        let c = ta.cols();
        let data = ta
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| x + tb.data()[i % c])
            .collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        let ng = self.grad_of(&[a, bias]);
        Ok(self.push(value, Op::AddRow(a, bias), ng))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let value = self.value(a).map(|x| x * factor);
        let ng = self.grad_of(&[a]);
        self.push(value, Op::Scale(a, factor), ng)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, AutodiffError> {
        let rows = self.value(parts[0]).rows();
        for &p in parts {
            if self.value(p).rows() != rows {
                return Err(shape_err("concat_cols", self.value(parts[0]), self.value(p)));
            }
        }
        let total: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row_slice(r));
            }
        }
        let ng = self.grad_of(parts);
        Ok(self.push(Tensor::matrix(rows, total, data)?, Op::ConcatCols(parts.to_vec()), ng))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, AutodiffError> {
        let cols = self.value(parts[0]).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let t = self.value(p);
            if t.cols() != cols {
                return Err(shape_err("concat_rows", self.value(parts[0]), t));
            }
            rows += t.rows();
            data.extend_from_slice(t.data());
        }
        let ng = self.grad_of(parts);
        Ok(self.push(Tensor::matrix(rows, cols, data)?, Op::ConcatRows(parts.to_vec()), ng))
    }

    /// Columns `start..start + len`.
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var, AutodiffError> {
        let t = self.value(a);
        if start + len > t.cols() {
            return Err(AutodiffError::IndexOutOfRange {
                op: "slice_cols",
                index: start + len,
                len: t.cols(),
            });
        }
        let rows = t.rows();
        let mut data = Vec::with_capacity(rows * len);
        for r in 0..rows {
            data.extend_from_slice(&t.row_slice(r)[start..start + len]);
        }
        let ng = self.grad_of(&[a]);
        Ok(self.push(Tensor::matrix(rows, len, data)?, Op::SliceCols(a, start), ng))
    }

    /// Same data under a new shape.
    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var, AutodiffError> {
        let t = self.value(a);
        let value = Tensor::new(shape.to_vec(), t.data().to_vec())?;
        let ng = self.grad_of(&[a]);
        Ok(self.push(value, Op::Reshape(a), ng))
    }

    /// Gathers rows by index (repeats allowed).
    pub fn select_rows(&mut self, a: Var, indices: &[usize]) -> Result<Var, AutodiffError> {
        let t = self.value(a);
        let cols = t.cols();
        let mut data = Vec::with_capacity(indices.len() * cols);
        for &i in indices {
            if i >= t.rows() {
                return Err(AutodiffError::IndexOutOfRange {
                    op: "select_rows",
                    index: i,
                    len: t.rows(),
                });
            }
            data.extend_from_slice(t.row_slice(i));
        }
        let value = Tensor::matrix(indices.len(), cols, data)?;
        let ng = self.grad_of(&[a]);
        Ok(self.push(value, Op::SelectRows(a, indices.to_vec()), ng))
    }

    /// Tiles a `1 × d` row into `n × d`.
    pub fn repeat_rows(&mut self, a: Var, n: usize) -> Result<Var, AutodiffError> {
        let t = self.value(a);
        if t.rows() != 1 {
            return Err(shape_err("repeat_rows", t, t));
        }
        let data = t.data().repeat(n);
        let value = Tensor::matrix(n, t.cols(), data)?;
        let ng = self.grad_of(&[a]);
        Ok(self.push(value, Op::RepeatRows(a), ng))
    }

    /// Column means as a `1 × d` row. Each column is summed in sorted order,
    /// so the result is exactly invariant to row permutations.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let t = self.value(a);
        let (rows, cols) = (t.rows(), t.cols());
        if rows == 0 {
            return Err(AutodiffError::Empty("mean_rows"));
        }
        let mut column = vec![0.0; rows];
        let mut out = Vec::with_capacity(cols);
        for c in 0..cols {
            for r in 0..rows {
                column[r] = t.get(r, c);
            }
            out.push(order_free_sum(&mut column) / rows as f64);
        }
        let ng = self.grad_of(&[a]);
        Ok(self.push(Tensor::row(out), Op::MeanRows(a), ng))
    }

    /// Sum of all elements as a `1 × 1` scalar.
    pub fn sum(&mut self, a: Var) -> Var {
        let s: f64 = self.value(a).data().iter().sum();
        let ng = self.grad_of(&[a]);
        self.push(Tensor::scalar(s), Op::Sum(a), ng)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).map(sigmoid);
        let ng = self.grad_of(&[a]);
        self.push(v, Op::Sigmoid(a), ng)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::tanh);
        let ng = self.grad_of(&[a]);
        self.push(v, Op::Tanh(a), ng)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.max(0.0));
        let ng = self.grad_of(&[a]);
        self.push(v, Op::Relu(a), ng)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::exp);
        let ng = self.grad_of(&[a]);
        self.push(v, Op::Exp(a), ng)
    }

    pub fn log(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::ln);
        let ng = self.grad_of(&[a]);
        self.push(v, Op::Log(a), ng)
    }

    /// Row-wise softmax restricted to entries whose mask is set.
    ///
    /// `mask` covers every element of `logits`. Masked entries come out as
    /// exactly `0.0`; each row needs at least one unmasked entry.
    pub fn masked_softmax(&mut self, logits: Var, mask: &[bool]) -> Result<Var, AutodiffError> {
        let t = self.value(logits);
        if mask.len() != t.len() {
            return Err(AutodiffError::ShapeMismatch {
                op: "masked_softmax",
                left: t.shape().to_vec(),
                right: vec![mask.len()],
            });
        }
        let (rows, cols) = (t.rows(), t.cols());
        let mut out = vec![0.0; t.len()];
        for r in 0..rows {
            let span = r * cols..(r + 1) * cols;
            let row = &t.data()[span.clone()];
            let m = &mask[span.clone()];
            let max = row
                .iter()
                .zip(m)
                .filter(|(_, &on)| on)
                .map(|(&x, _)| x)
                .fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                return Err(AutodiffError::AllMasked);
            }
            let mut total = 0.0;
            for c in 0..cols {
                if m[c] {
                    let e = (row[c] - max).exp();
                    out[r * cols + c] = e;
                    total += e;
                }
            }
            for c in 0..cols {
                out[r * cols + c] /= total;
            }
        }
        let value = Tensor::new(t.shape().to_vec(), out)?;
        let ng = self.grad_of(&[logits]);
        Ok(self.push(value, Op::MaskedSoftmax(logits, mask.to_vec()), ng))
    }

    /// `-ln(max(p[target], 1e-12))` for a probability tensor, indexed flat.
    ///
    /// A target that the producing masked softmax excluded is refused. An
    /// admissible target whose probability underflowed to zero gets the floor.
    pub fn cross_entropy(&mut self, probs: Var, target: usize) -> Result<Var, AutodiffError> {
        let t = self.value(probs);
        let p = *t.data().get(target).ok_or(AutodiffError::IndexOutOfRange {
            op: "cross_entropy",
            index: target,
            len: t.len(),
        })?;
        if let Op::MaskedSoftmax(_, mask) = &self.nodes[probs.0].op {
            if !mask[target] {
                return Err(AutodiffError::TargetMasked(target));
            }
        }
        let loss = -p.max(PROB_FLOOR).ln();
        let ng = self.grad_of(&[probs]);
        Ok(self.push(Tensor::scalar(loss), Op::CrossEntropy(probs, target), ng))
    }

    /// KL divergence of `N(mu, exp(log_var))` from `N(0, I)`, summed over
    /// columns and averaged over rows.
    pub fn gaussian_kl(&mut self, mu: Var, log_var: Var) -> Result<Var, AutodiffError> {
        let (tm, tv) = (self.value(mu), self.value(log_var));
        if tm.shape() != tv.shape() {
            return Err(shape_err("gaussian_kl", tm, tv));
        }
        let rows = tm.rows().max(1) as f64;
        let total: f64 = tm
            .data()
            .iter()
            .zip(tv.data())
            .map(|(&m, &lv)| 0.5 * (m * m + lv.exp() - 1.0 - lv))
            .sum();
        let ng = self.grad_of(&[mu, log_var]);
        Ok(self.push(Tensor::scalar(total / rows), Op::GaussianKl(mu, log_var), ng))
    }

    /// `out[v] = Σ_{u ∈ neighbors[v]} src[u]`, summed in value order per column
    /// so the result is independent of neighbour ordering.
    pub fn neighbor_sum(&mut self, src: Var, neighbors: &[Vec<usize>]) -> Result<Var, AutodiffError> {
        let t = self.value(src);
        let (rows, cols) = (t.rows(), t.cols());
        if neighbors.len() != rows {
            return Err(AutodiffError::ShapeMismatch {
                op: "neighbor_sum",
                left: t.shape().to_vec(),
                right: vec![neighbors.len()],
            });
        }
        let mut out = vec![0.0; rows * cols];
        let mut buf = Vec::new();
        for (v, list) in neighbors.iter().enumerate() {
            if let Some(&bad) = list.iter().find(|&&u| u >= rows) {
                return Err(AutodiffError::IndexOutOfRange {
                    op: "neighbor_sum",
                    index: bad,
                    len: rows,
                });
            }
            if list.is_empty() {
                continue;
            }
            for c in 0..cols {
                buf.clear();
                buf.extend(list.iter().map(|&u| t.get(u, c)));
                out[v * cols + c] = order_free_sum(&mut buf);
            }
        }
        let value = Tensor::matrix(rows, cols, out)?;
        let ng = self.grad_of(&[src]);
        Ok(self.push(value, Op::NeighborSum(src, neighbors.to_vec()), ng))
    }

    /// Runs the reverse sweep from a scalar `loss`. The tape can be swept once.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients, AutodiffError> {
        if self.consumed {
            return Err(AutodiffError::TapeConsumed);
        }
        if self.value(loss).len() != 1 {
            return Err(AutodiffError::NotScalar(self.value(loss).shape().to_vec()));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), 1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        let mut params: Vec<(ParamId, Var)> = self.params.iter().map(|(&id, &v)| (id, v)).collect();
        params.sort_by_key(|(id, _)| id.index());
        Ok(Gradients { grads, params })
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let val = |v: Var| &self.nodes[v.0].value;
        let wants = |v: Var| self.nodes[v.0].needs_grad;
        let y = &node.value;
        match &node.op {
            Op::Input | Op::Constant | Op::Param => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let (n, k, m) = (ta.rows(), ta.cols(), tb.cols());
                if wants(*a) {
                    let bt = transpose(tb.data(), k, m);
                    let da = matmul_raw(g.data(), &bt, n, m, k);
                    accumulate(&mut grads[a.0], Tensor::new(ta.shape().to_vec(), da).unwrap());
                }
                if wants(*b) {
                    let at = transpose(ta.data(), n, k);
                    let db = matmul_raw(&at, g.data(), k, n, m);
                    accumulate(&mut grads[b.0], Tensor::new(tb.shape().to_vec(), db).unwrap());
                }
            }
            Op::Add(a, b) => {
                if wants(*a) {
                    accumulate(&mut grads[a.0], g.clone());
                }
                if wants(*b) {
                    accumulate(&mut grads[b.0], g.clone());
                }
            }
            Op::Sub(a, b) => {
                if wants(*a) {
                    accumulate(&mut grads[a.0], g.clone());
                }
                if wants(*b) {
                    accumulate(&mut grads[b.0], g.map(|x| -x));
                }
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                if wants(*a) {
                    let d = g.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
                    accumulate(&mut grads[a.0], Tensor::new(ta.shape().to_vec(), d).unwrap());
                }
                if wants(*b) {
                    let d = g.data().iter().zip(ta.data()).map(|(x, y)| x * y).collect();
                    accumulate(&mut grads[b.0], Tensor::new(tb.shape().to_vec(), d).unwrap());
                }
            }
            Op::AddRow(a, bias) => {
                if wants(*a) {
                    accumulate(&mut grads[a.0], g.clone());
                }
                if wants(*bias) {
                    let c = g.cols();
                    let mut d = vec![0.0; c];
                    for (i, &x) in g.data().iter().enumerate() {
                        d[i % c] += x;
                    }
                    let tb = val(*bias);
                    accumulate(&mut grads[bias.0], Tensor::new(tb.shape().to_vec(), d).unwrap());
                }
            }
            Op::Scale(a, f) => accumulate(&mut grads[a.0], g.map(|x| x * f)),
            Op::ConcatCols(parts) => {
                let rows = g.rows();
                let mut offset = 0;
                for p in parts {
                    let tp = val(*p);
                    let w = tp.cols();
                    if wants(*p) {
                        let mut d = Vec::with_capacity(rows * w);
                        for r in 0..rows {
                            d.extend_from_slice(&g.row_slice(r)[offset..offset + w]);
                        }
                        accumulate(&mut grads[p.0], Tensor::new(tp.shape().to_vec(), d).unwrap());
                    }
                    offset += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let tp = val(*p);
                    let n = tp.len();
                    if wants(*p) {
                        let d = g.data()[offset..offset + n].to_vec();
                        accumulate(&mut grads[p.0], Tensor::new(tp.shape().to_vec(), d).unwrap());
                    }
                    offset += n;
                }
            }
            Op::SliceCols(a, start) => {
                let ta = val(*a);
                let (rows, cols, w) = (ta.rows(), ta.cols(), g.cols());
                let mut d = vec![0.0; rows * cols];
                for r in 0..rows {
                    d[r * cols + start..r * cols + start + w].copy_from_slice(g.row_slice(r));
                }
                accumulate(&mut grads[a.0], Tensor::new(ta.shape().to_vec(), d).unwrap());
            }
            Op::Reshape(a) => {
                let ta = val(*a);
                let d = g.data().to_vec();
                accumulate(&mut grads[a.0], Tensor::new(ta.shape().to_vec(), d).unwrap());
            }
            Op::SelectRows(a, indices) => {
                let ta = val(*a);
                let cols = ta.cols();
                let mut d = vec![0.0; ta.len()];
                for (k, &i) in indices.iter().enumerate() {
                    for c in 0..cols {
                        d[i * cols + c] += g.get(k, c);
                    }
                }
                accumulate(&mut grads[a.0], Tensor::new(ta.shape().to_vec(), d).unwrap());
            }
            Op::RepeatRows(a) => {
                let ta = val(*a);
                let cols = ta.cols();
                let mut d = vec![0.0; cols];
                for r in 0..g.rows() {
                    for c in 0..cols {
                        d[c] += g.get(r, c);
                    }
                }
                accumulate(&mut grads[a.0], Tensor::new(ta.shape().to_vec(), d).unwrap());
            }
            Op::MeanRows(a) => {
                let ta = val(*a);
                let (rows, cols) = (ta.rows(), ta.cols());
                let inv = 1.0 / rows as f64;
                let mut d = Vec::with_capacity(rows * cols);
                for _ in 0..rows {
                    d.extend(g.data().iter().map(|x| x * inv));
                }
                accumulate(&mut grads[a.0], Tensor::new(ta.shape().to_vec(), d).unwrap());
            }
            Op::Sum(a) => {
                let ta = val(*a);
                accumulate(&mut grads[a.0], Tensor::full(ta.shape(), g.item()));
            }
            Op::Sigmoid(a) => {
                let d = g.data().iter().zip(y.data()).map(|(g, s)| g * s * (1.0 - s)).collect();
                accumulate(&mut grads[a.0], Tensor::new(y.shape().to_vec(), d).unwrap());
            }
            Op::Tanh(a) => {
                let d = g.data().iter().zip(y.data()).map(|(g, t)| g * (1.0 - t * t)).collect();
                accumulate(&mut grads[a.0], Tensor::new(y.shape().to_vec(), d).unwrap());
            }
            Op::Relu(a) => {
                let x = val(*a);
                let d = g
                    .data()
                    .iter()
                    .zip(x.data())
                    .map(|(g, &x)| if x > 0.0 { *g } else { 0.0 })
                    .collect();
                accumulate(&mut grads[a.0], Tensor::new(y.shape().to_vec(), d).unwrap());
            }
            Op::Exp(a) => {
                let d = g.data().iter().zip(y.data()).map(|(g, e)| g * e).collect();
                accumulate(&mut grads[a.0], Tensor::new(y.shape().to_vec(), d).unwrap());
            }
            Op::Log(a) => {
                let x = val(*a);
                let d = g.data().iter().zip(x.data()).map(|(g, x)| g / x).collect();
                accumulate(&mut grads[a.0], Tensor::new(y.shape().to_vec(), d).unwrap());
            }
            Op::MaskedSoftmax(a, mask) => {
                let (rows, cols) = (y.rows(), y.cols());
                let mut d = vec![0.0; y.len()];
                for r in 0..rows {
                    let span = r * cols..(r + 1) * cols;
                    let dot: f64 = g.data()[span.clone()]
                        .iter()
                        .zip(&y.data()[span.clone()])
                        .map(|(g, p)| g * p)
                        .sum();
                    for i in span {
                        if mask[i] {
                            d[i] = y.data()[i] * (g.data()[i] - dot);
                        }
                    }
                }
                accumulate(&mut grads[a.0], Tensor::new(y.shape().to_vec(), d).unwrap());
            }
            Op::CrossEntropy(probs, target) => {
                let tp = val(*probs);
                let p = tp.data()[*target];
                let mut d = vec![0.0; tp.len()];
                if p > PROB_FLOOR {
                    d[*target] = -g.item() / p;
                }
                accumulate(&mut grads[probs.0], Tensor::new(tp.shape().to_vec(), d).unwrap());
            }
            Op::GaussianKl(mu, log_var) => {
                let (tm, tv) = (val(*mu), val(*log_var));
                let scale = g.item() / tm.rows().max(1) as f64;
                if wants(*mu) {
                    accumulate(&mut grads[mu.0], tm.map(|m| m * scale));
                }
                if wants(*log_var) {
                    accumulate(&mut grads[log_var.0], tv.map(|lv| 0.5 * (lv.exp() - 1.0) * scale));
                }
            }
            Op::NeighborSum(src, neighbors) => {
                let ts = val(*src);
                let cols = ts.cols();
                let mut d = vec![0.0; ts.len()];
                for (v, list) in neighbors.iter().enumerate() {
                    for &u in list {
                        for c in 0..cols {
                            d[u * cols + c] += g.get(v, c);
                        }
                    }
                }
                accumulate(&mut grads[src.0], Tensor::new(ts.shape().to_vec(), d).unwrap());
            }
        }
    }
}
