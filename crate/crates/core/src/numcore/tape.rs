//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! A [`Tape`] records every primitive applied during one forward pass. Calling
//! [`Var::backward`] on a scalar node replays the record in reverse and returns
//! the gradient of that scalar with respect to every node that requires one.
//! Each forward pass should use a fresh tape; tapes never share state.

use std::cell::RefCell;
use std::rc::Rc;

use crate::error::{Error, Result};
use crate::numcore::tensor::Tensor;

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    AddRow(usize, usize),
    MulRow(usize, usize),
    MulConst(usize, Rc<Tensor>),
    Scale(usize, f64),
    AddScalar(usize),
    MatMul(usize, usize),
    Transpose(usize),
    Relu(usize),
    Tanh(usize),
    Exp(usize),
    Ln(usize),
    ClampMin(usize, f64),
    Sum(usize),
    SumCols(usize),
    SumRows(usize),
    LogSoftmaxRows(usize),
    SoftmaxRows(usize),
    LogSumExpRows(usize),
    NormalizeRows(usize, Rc<Vec<f64>>),
    L2NormalizeRows(usize, Rc<Vec<f64>>),
    SliceCols(usize, usize, usize),
    ConcatCols(Vec<usize>),
    ConcatRows(Vec<usize>),
    GatherRows(usize, Rc<Vec<usize>>),
    PickPerRow(usize, Rc<Vec<usize>>),
    /// Scalar output whose gradient with respect to its single parent was
    /// computed during the forward pass.
    Linearized(usize, Rc<Tensor>),
    Pearson(usize, usize, Rc<PearsonCache>),
    PassThrough(usize),
}

#[derive(Debug)]
struct PearsonCache {
    /// Per-column (syy, saa, sya); columns with zero variance are skipped.
    stats: Vec<Option<(f64, f64, f64)>>,
}

struct Node {
    value: Rc<Tensor>,
    op: Op,
    requires_grad: bool,
}

/// Append-only record of one forward pass.
#[derive(Clone, Default)]
pub struct Tape {
    nodes: Rc<RefCell<Vec<Node>>>,
}

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone)]
pub struct Var {
    tape: Tape,
    id: usize,
}

impl std::fmt::Debug for Var {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.value().shape())
            .finish()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records a leaf. Gradients are accumulated for it only if `requires_grad`.
    pub fn leaf(&self, value: Tensor, requires_grad: bool) -> Var {
        self.push_raw(value, Op::Leaf, requires_grad)
    }

    pub fn param(&self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push_raw(&self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            op,
            requires_grad,
        });
        Var {
            tape: self.clone(),
            id: nodes.len() - 1,
        }
    }

    fn push(&self, value: Tensor, op: Op, parents: &[usize]) -> Var {
        let requires_grad = {
            let nodes = self.nodes.borrow();
            parents.iter().any(|&p| nodes[p].requires_grad)
        };
        self.push_raw(value, op, requires_grad)
    }

    fn value(&self, id: usize) -> Rc<Tensor> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    fn same(&self, other: &Tape) -> bool {
        Rc::ptr_eq(&self.nodes, &other.nodes)
    }
}

/// Gradients produced by [`Var::backward`], indexed by node.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    pub fn get(&self, var: &Var) -> Option<&Tensor> {
        self.grads.get(var.id).and_then(Option::as_ref)
    }

    /// Gradient for `var`, or zeros when the loss does not depend on it.
    pub fn wrt(&self, var: &Var) -> Tensor {
        self.get(var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[var.id]))
    }
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::shape(op, format!("{:?} vs {:?}", a.shape(), b.shape()))
}

fn require_matrix(op: &'static str, t: &Tensor) -> Result<()> {
    if t.is_matrix() {
        Ok(())
    } else {
        Err(Error::shape(op, format!("expected a matrix, got shape {:?}", t.shape())))
    }
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn matmul_raw(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        let orow = &mut out[i * m..(i + 1) * m];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * m..(p + 1) * m];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

fn transpose_raw(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = a[r * cols + c];
        }
    }
    out
}

impl Var {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &Tape {
        &self.tape
    }

    pub fn value(&self) -> Rc<Tensor> {
        self.tape.value(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    pub fn item(&self) -> f64 {
        self.value().item()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    fn check_tape(&self, op: &'static str, other: &Var) -> Result<()> {
        if self.tape.same(&other.tape) {
            Ok(())
        } else {
            Err(Error::shape(op, "operands recorded on different tapes"))
        }
    }

    fn binary_same_shape(
        &self,
        op: &'static str,
        other: &Var,
        f: impl Fn(f64, f64) -> f64,
        make: fn(usize, usize) -> Op,
    ) -> Result<Var> {
        self.check_tape(op, other)?;
        let (a, b) = (self.value(), other.value());
        if a.shape() != b.shape() {
            return Err(shape_err(op, &a, &b));
        }
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
        let out = Tensor::new(a.shape().to_vec(), data)?;
        Ok(self.tape.push(out, make(self.id, other.id), &[self.id, other.id]))
    }

    pub fn add(&self, other: &Var) -> Result<Var> {
        self.binary_same_shape("add", other, |x, y| x + y, Op::Add)
    }

    pub fn sub(&self, other: &Var) -> Result<Var> {
        self.binary_same_shape("sub", other, |x, y| x - y, Op::Sub)
    }

    pub fn mul(&self, other: &Var) -> Result<Var> {
        self.binary_same_shape("mul", other, |x, y| x * y, Op::Mul)
    }

    pub fn div(&self, other: &Var) -> Result<Var> {
        self.binary_same_shape("div", other, |x, y| x / y, Op::Div)
    }

    fn row_broadcast(
        &self,
        op: &'static str,
        row: &Var,
        f: impl Fn(f64, f64) -> f64,
        make: fn(usize, usize) -> Op,
    ) -> Result<Var> {
        self.check_tape(op, row)?;
        let (a, r) = (self.value(), row.value());
        require_matrix(op, &a)?;
        if r.len() != a.cols() {
            return Err(shape_err(op, &a, &r));
        }
        let cols = a.cols();
        let data = a
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| f(x, r.data()[i % cols]))
            .collect();
        let out = Tensor::new(a.shape().to_vec(), data)?;
        Ok(self.tape.push(out, make(self.id, row.id), &[self.id, row.id]))
    }

    /// Adds a length-`cols` vector to every row.
    pub fn add_row(&self, row: &Var) -> Result<Var> {
        self.row_broadcast("add_row", row, |x, y| x + y, Op::AddRow)
    }

    /// Multiplies every row elementwise by a length-`cols` vector.
    pub fn mul_row(&self, row: &Var) -> Result<Var> {
        self.row_broadcast("mul_row", row, |x, y| x * y, Op::MulRow)
    }

    /// Elementwise product with a constant (e.g. a dropout mask).
    pub fn mul_const(&self, mask: Tensor) -> Result<Var> {
        let a = self.value();
        if a.shape() != mask.shape() {
            return Err(shape_err("mul_const", &a, &mask));
        }
        let data = a.data().iter().zip(mask.data()).map(|(x, m)| x * m).collect();
        let out = Tensor::new(a.shape().to_vec(), data)?;
        Ok(self.tape.push(out, Op::MulConst(self.id, Rc::new(mask)), &[self.id]))
    }

    pub fn scale(&self, c: f64) -> Var {
        let out = self.value().map(|x| x * c);
        self.tape.push(out, Op::Scale(self.id, c), &[self.id])
    }

    pub fn add_scalar(&self, c: f64) -> Var {
        let out = self.value().map(|x| x + c);
        self.tape.push(out, Op::AddScalar(self.id), &[self.id])
    }

    pub fn neg(&self) -> Var {
        self.scale(-1.0)
    }

    pub fn matmul(&self, other: &Var) -> Result<Var> {
        self.check_tape("matmul", other)?;
        let (a, b) = (self.value(), other.value());
        require_matrix("matmul", &a)?;
        require_matrix("matmul", &b)?;
        if a.cols() != b.rows() {
            return Err(shape_err("matmul", &a, &b));
        }
        let (n, k, m) = (a.rows(), a.cols(), b.cols());
        let out = Tensor::matrix(n, m, matmul_raw(a.data(), b.data(), n, k, m))?;
        Ok(self.tape.push(out, Op::MatMul(self.id, other.id), &[self.id, other.id]))
    }

    pub fn transpose(&self) -> Result<Var> {
        let a = self.value();
        require_matrix("transpose", &a)?;
        let out = Tensor::matrix(a.cols(), a.rows(), transpose_raw(a.data(), a.rows(), a.cols()))?;
        Ok(self.tape.push(out, Op::Transpose(self.id), &[self.id]))
    }

    pub fn relu(&self) -> Var {
        let out = self.value().map(|x| x.max(0.0));
        self.tape.push(out, Op::Relu(self.id), &[self.id])
    }

    pub fn tanh(&self) -> Var {
        let out = self.value().map(f64::tanh);
        self.tape.push(out, Op::Tanh(self.id), &[self.id])
    }

    pub fn exp(&self) -> Var {
        let out = self.value().map(f64::exp);
        self.tape.push(out, Op::Exp(self.id), &[self.id])
    }

    pub fn ln(&self) -> Var {
        let out = self.value().map(f64::ln);
        self.tape.push(out, Op::Ln(self.id), &[self.id])
    }

    /// `max(x, floor)`; the gradient is zero where the floor is active.
    pub fn clamp_min(&self, floor: f64) -> Var {
        let out = self.value().map(|x| x.max(floor));
        self.tape.push(out, Op::ClampMin(self.id, floor), &[self.id])
    }

    pub fn sum(&self) -> Var {
        let out = Tensor::scalar(self.value().data().iter().sum());
        self.tape.push(out, Op::Sum(self.id), &[self.id])
    }

    pub fn mean(&self) -> Var {
        let n = self.value().len().max(1) as f64;
        self.sum().scale(1.0 / n)
    }

    /// Row sums: `R×C → R×1`.
    pub fn sum_cols(&self) -> Result<Var> {
        let a = self.value();
        require_matrix("sum_cols", &a)?;
        let data = (0..a.rows()).map(|r| a.row(r).iter().sum()).collect();
        let out = Tensor::matrix(a.rows(), 1, data)?;
        Ok(self.tape.push(out, Op::SumCols(self.id), &[self.id]))
    }

    /// Column sums: `R×C → 1×C`.
    pub fn sum_rows(&self) -> Result<Var> {
        let a = self.value();
        require_matrix("sum_rows", &a)?;
        let mut data = vec![0.0; a.cols()];
        for r in 0..a.rows() {
            for (d, v) in data.iter_mut().zip(a.row(r)) {
                *d += v;
            }
        }
        let out = Tensor::matrix(1, a.cols(), data)?;
        Ok(self.tape.push(out, Op::SumRows(self.id), &[self.id]))
    }

    pub fn log_softmax_rows(&self) -> Result<Var> {
        let a = self.value();
        require_matrix("log_softmax_rows", &a)?;
        let mut data = Vec::with_capacity(a.len());
        for r in 0..a.rows() {
            let lse = log_sum_exp(a.row(r));
            data.extend(a.row(r).iter().map(|x| x - lse));
        }
        let out = Tensor::new(a.shape().to_vec(), data)?;
        Ok(self.tape.push(out, Op::LogSoftmaxRows(self.id), &[self.id]))
    }

    pub fn softmax_rows(&self) -> Result<Var> {
        let a = self.value();
        require_matrix("softmax_rows", &a)?;
        let mut data = Vec::with_capacity(a.len());
        for r in 0..a.rows() {
            let lse = log_sum_exp(a.row(r));
            data.extend(a.row(r).iter().map(|x| (x - lse).exp()));
        }
        let out = Tensor::new(a.shape().to_vec(), data)?;
        Ok(self.tape.push(out, Op::SoftmaxRows(self.id), &[self.id]))
    }

    /// Stabilized `ln Σ exp` of each row: `R×C → R×1`.
    pub fn log_sum_exp_rows(&self) -> Result<Var> {
        let a = self.value();
        require_matrix("log_sum_exp_rows", &a)?;
        let data = (0..a.rows()).map(|r| log_sum_exp(a.row(r))).collect();
        let out = Tensor::matrix(a.rows(), 1, data)?;
        Ok(self.tape.push(out, Op::LogSumExpRows(self.id), &[self.id]))
    }

    /// Per-row standardization `(x - mean) / sqrt(var + eps)` without affine terms.
    pub fn normalize_rows(&self, eps: f64) -> Result<Var> {
        let a = self.value();
        require_matrix("normalize_rows", &a)?;
        let c = a.cols() as f64;
        let mut data = Vec::with_capacity(a.len());
        let mut inv_std = Vec::with_capacity(a.rows());
        for r in 0..a.rows() {
            let row = a.row(r);
            let mean = row.iter().sum::<f64>() / c;
            let var = row.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / c;
            let is = 1.0 / (var + eps).sqrt();
            inv_std.push(is);
            data.extend(row.iter().map(|x| (x - mean) * is));
        }
        let out = Tensor::new(a.shape().to_vec(), data)?;
        Ok(self
            .tape
            .push(out, Op::NormalizeRows(self.id, Rc::new(inv_std)), &[self.id]))
    }

    /// Scales each row to unit Euclidean norm. Zero rows are an error since
    /// their direction (and hence any cosine similarity) is undefined.
    pub fn l2_normalize_rows(&self) -> Result<Var> {
        let a = self.value();
        require_matrix("l2_normalize_rows", &a)?;
        let mut norms = Vec::with_capacity(a.rows());
        let mut data = Vec::with_capacity(a.len());
        for r in 0..a.rows() {
            let n = a.row(r).iter().map(|x| x * x).sum::<f64>().sqrt();
            if n == 0.0 || !n.is_finite() {
                return Err(Error::invalid(format!(
                    "row {r} has zero or non-finite norm; cosine similarity undefined"
                )));
            }
            norms.push(n);
            data.extend(a.row(r).iter().map(|x| x / n));
        }
        let out = Tensor::new(a.shape().to_vec(), data)?;
        Ok(self
            .tape
            .push(out, Op::L2NormalizeRows(self.id, Rc::new(norms)), &[self.id]))
    }

    pub fn slice_cols(&self, start: usize, end: usize) -> Result<Var> {
        let a = self.value();
        require_matrix("slice_cols", &a)?;
        if start > end || end > a.cols() {
            return Err(Error::shape(
                "slice_cols",
                format!("range {start}..{end} outside {} columns", a.cols()),
            ));
        }
        let mut data = Vec::with_capacity(a.rows() * (end - start));
        for r in 0..a.rows() {
            data.extend_from_slice(&a.row(r)[start..end]);
        }
        let out = Tensor::matrix(a.rows(), end - start, data)?;
        Ok(self.tape.push(out, Op::SliceCols(self.id, start, end), &[self.id]))
    }

    pub fn concat_cols(parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::shape("concat_cols", "no operands"))?;
        let vals: Vec<_> = parts.iter().map(Var::value).collect();
        let rows = vals[0].rows();
        for (p, v) in parts.iter().zip(&vals) {
            first.check_tape("concat_cols", p)?;
            require_matrix("concat_cols", v)?;
            if v.rows() != rows {
                return Err(shape_err("concat_cols", &vals[0], v));
            }
        }
        let cols: usize = vals.iter().map(|v| v.cols()).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for v in &vals {
                data.extend_from_slice(v.row(r));
            }
        }
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        let out = Tensor::matrix(rows, cols, data)?;
        Ok(first.tape.push(out, Op::ConcatCols(ids.clone()), &ids))
    }

    pub fn concat_rows(parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::shape("concat_rows", "no operands"))?;
        let vals: Vec<_> = parts.iter().map(Var::value).collect();
        let cols = vals[0].cols();
        for (p, v) in parts.iter().zip(&vals) {
            first.check_tape("concat_rows", p)?;
            require_matrix("concat_rows", v)?;
            if v.cols() != cols {
                return Err(shape_err("concat_rows", &vals[0], v));
            }
        }
        let rows: usize = vals.iter().map(|v| v.rows()).sum();
        let data = vals.iter().flat_map(|v| v.data().iter().copied()).collect();
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        let out = Tensor::matrix(rows, cols, data)?;
        Ok(first.tape.push(out, Op::ConcatRows(ids.clone()), &ids))
    }

    /// Builds a matrix from the listed rows (repeats allowed).
    pub fn gather_rows(&self, indices: &[usize]) -> Result<Var> {
        let a = self.value();
        require_matrix("gather_rows", &a)?;
        if let Some(&bad) = indices.iter().find(|&&i| i >= a.rows()) {
            return Err(Error::shape(
                "gather_rows",
                format!("row {bad} out of range for {} rows", a.rows()),
            ));
        }
        let mut data = Vec::with_capacity(indices.len() * a.cols());
        for &i in indices {
            data.extend_from_slice(a.row(i));
        }
        let out = Tensor::matrix(indices.len(), a.cols(), data)?;
        Ok(self.tape.push(
            out,
            Op::GatherRows(self.id, Rc::new(indices.to_vec())),
            &[self.id],
        ))
    }

    /// Selects column `cols[r]` from each row `r`: `R×C → R×1`.
    pub fn pick_per_row(&self, cols: &[usize]) -> Result<Var> {
        let a = self.value();
        require_matrix("pick_per_row", &a)?;
        if cols.len() != a.rows() {
            return Err(Error::shape(
                "pick_per_row",
                format!("{} indices for {} rows", cols.len(), a.rows()),
            ));
        }
        if let Some(&bad) = cols.iter().find(|&&c| c >= a.cols()) {
            return Err(Error::shape(
                "pick_per_row",
                format!("column {bad} out of range for {} columns", a.cols()),
            ));
        }
        let data = cols.iter().enumerate().map(|(r, &c)| a.get(r, c)).collect();
        let out = Tensor::matrix(a.rows(), 1, data)?;
        Ok(self
            .tape
            .push(out, Op::PickPerRow(self.id, Rc::new(cols.to_vec())), &[self.id]))
    }

    /// Records a scalar `value` whose gradient with respect to `self` is
    /// `grad`. Used by primitives that compute their own derivative in the
    /// forward pass (CTC, smooth-L1).
    pub fn linearized(&self, value: f64, grad: Tensor) -> Result<Var> {
        let a = self.value();
        if a.shape() != grad.shape() {
            return Err(shape_err("linearized", &a, &grad));
        }
        Ok(self.tape.push(
            Tensor::scalar(value),
            Op::Linearized(self.id, Rc::new(grad)),
            &[self.id],
        ))
    }

    /// Per-column Pearson correlation between `self` and `other` over rows:
    /// `T×D, T×D → 1×D`. A column where either side has zero variance yields 0.
    pub fn pearson_cols(&self, other: &Var) -> Result<Var> {
        self.check_tape("pearson_cols", other)?;
        let (y, a) = (self.value(), other.value());
        require_matrix("pearson_cols", &y)?;
        if y.shape() != a.shape() {
            return Err(shape_err("pearson_cols", &y, &a));
        }
        if y.rows() < 2 {
            return Err(Error::shape("pearson_cols", "need at least two rows"));
        }
        let (t, d) = (y.rows(), y.cols());
        let mut stats = Vec::with_capacity(d);
        let mut out = Vec::with_capacity(d);
        for c in 0..d {
            let my = (0..t).map(|r| y.get(r, c)).sum::<f64>() / t as f64;
            let ma = (0..t).map(|r| a.get(r, c)).sum::<f64>() / t as f64;
            let (mut syy, mut saa, mut sya) = (0.0, 0.0, 0.0);
            for r in 0..t {
                let (dy, da) = (y.get(r, c) - my, a.get(r, c) - ma);
                syy += dy * dy;
                saa += da * da;
                sya += dy * da;
            }
            if syy > 0.0 && saa > 0.0 {
                stats.push(Some((syy, saa, sya)));
                out.push(sya / (syy * saa).sqrt());
            } else {
                stats.push(None);
                out.push(0.0);
            }
        }
        let value = Tensor::matrix(1, d, out)?;
        Ok(self.tape.push(
            value,
            Op::Pearson(self.id, other.id, Rc::new(PearsonCache { stats })),
            &[self.id, other.id],
        ))
    }

    /// Records `value` in place of `self` while routing gradients to `self`
    /// unchanged (straight-through estimator).
    pub fn straight_through(&self, value: Tensor) -> Result<Var> {
        let a = self.value();
        if a.shape() != value.shape() {
            return Err(shape_err("straight_through", &a, &value));
        }
        Ok(self.tape.push(value, Op::PassThrough(self.id), &[self.id]))
    }

    /// Copy of this value with no gradient path back.
    pub fn detach(&self) -> Var {
        self.tape.constant((*self.value()).clone())
    }

    /// Reverse pass from this scalar node.
    pub fn backward(&self) -> Result<Gradients> {
        let nodes = self.tape.nodes.borrow();
        let root = &nodes[self.id];
        if root.value.len() != 1 {
            return Err(Error::shape(
                "backward",
                format!("loss must be scalar, got shape {:?}", root.value.shape()),
            ));
        }
        if !root.value.item().is_finite() {
            return Err(Error::NonFinite("loss".into()));
        }
        let n = self.id + 1;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; n];
        grads[self.id] = Some(vec![1.0]);

        for id in (0..n).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            backprop(&nodes, node, &g, &mut grads);
            grads[id] = Some(g);
        }

        let shapes = nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        let grads = grads
            .into_iter()
            .enumerate()
            .map(|(id, g)| {
                g.filter(|_| nodes[id].requires_grad)
                    .map(|g| Tensor::new(nodes[id].value.shape().to_vec(), g).expect("grad shape"))
            })
            .collect();
        Ok(Gradients { grads, shapes })
    }
}

fn accumulate(nodes: &[Node], grads: &mut [Option<Vec<f64>>], id: usize, f: impl FnOnce(&mut [f64])) {
    if !nodes[id].requires_grad {
        return;
    }
    let len = nodes[id].value.len();
    let slot = grads[id].get_or_insert_with(|| vec![0.0; len]);
    f(slot);
}

fn backprop(nodes: &[Node], node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
    let out = &node.value;
    match &node.op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            accumulate(nodes, grads, *a, |s| s.iter_mut().zip(g).for_each(|(s, g)| *s += g));
            accumulate(nodes, grads, *b, |s| s.iter_mut().zip(g).for_each(|(s, g)| *s += g));
        }
        Op::Sub(a, b) => {
            accumulate(nodes, grads, *a, |s| s.iter_mut().zip(g).for_each(|(s, g)| *s += g));
            accumulate(nodes, grads, *b, |s| s.iter_mut().zip(g).for_each(|(s, g)| *s -= g));
        }
        Op::Mul(a, b) => {
            let (av, bv) = (&nodes[*a].value, &nodes[*b].value);
            accumulate(nodes, grads, *a, |s| {
                for i in 0..s.len() {
                    s[i] += g[i] * bv.data()[i];
                }
            });
            accumulate(nodes, grads, *b, |s| {
                for i in 0..s.len() {
                    s[i] += g[i] * av.data()[i];
                }
            });
        }
        Op::Div(a, b) => {
            let (av, bv) = (&nodes[*a].value, &nodes[*b].value);
            accumulate(nodes, grads, *a, |s| {
                for i in 0..s.len() {
                    s[i] += g[i] / bv.data()[i];
                }
            });
            accumulate(nodes, grads, *b, |s| {
                for i in 0..s.len() {
                    let y = bv.data()[i];
                    s[i] -= g[i] * av.data()[i] / (y * y);
                }
            });
        }
        Op::AddRow(a, r) => {
            let cols = out.cols();
            accumulate(nodes, grads, *a, |s| s.iter_mut().zip(g).for_each(|(s, g)| *s += g));
            accumulate(nodes, grads, *r, |s| {
                for (i, gv) in g.iter().enumerate() {
                    s[i % cols] += gv;
                }
            });
        }
        Op::MulRow(a, r) => {
            let cols = out.cols();
            let (av, rv) = (&nodes[*a].value, &nodes[*r].value);
            accumulate(nodes, grads, *a, |s| {
                for (i, gv) in g.iter().enumerate() {
                    s[i] += gv * rv.data()[i % cols];
                }
            });
            accumulate(nodes, grads, *r, |s| {
                for (i, gv) in g.iter().enumerate() {
                    s[i % cols] += gv * av.data()[i];
                }
            });
        }
        Op::MulConst(a, m) => accumulate(nodes, grads, *a, |s| {
            for i in 0..s.len() {
                s[i] += g[i] * m.data()[i];
            }
        }),
        Op::Scale(a, c) => accumulate(nodes, grads, *a, |s| s.iter_mut().zip(g).for_each(|(s, g)| *s += c * g)),
        Op::AddScalar(a) => accumulate(nodes, grads, *a, |s| s.iter_mut().zip(g).for_each(|(s, g)| *s += g)),
        Op::MatMul(a, b) => {
            let (av, bv) = (&nodes[*a].value, &nodes[*b].value);
            let (n, k, m) = (av.rows(), av.cols(), bv.cols());
            accumulate(nodes, grads, *a, |s| {
                // dA = G · Bᵀ
                let bt = transpose_raw(bv.data(), k, m);
                let d = matmul_raw(g, &bt, n, m, k);
                s.iter_mut().zip(d).for_each(|(s, d)| *s += d);
            });
            accumulate(nodes, grads, *b, |s| {
                // dB = Aᵀ · G
                let at = transpose_raw(av.data(), n, k);
                let d = matmul_raw(&at, g, k, n, m);
                s.iter_mut().zip(d).for_each(|(s, d)| *s += d);
            });
        }
        Op::Transpose(a) => {
            let back = transpose_raw(g, out.rows(), out.cols());
            accumulate(nodes, grads, *a, |s| s.iter_mut().zip(back).for_each(|(s, d)| *s += d));
        }
        Op::Relu(a) => {
            let av = &nodes[*a].value;
            accumulate(nodes, grads, *a, |s| {
                for i in 0..s.len() {
                    if av.data()[i] > 0.0 {
                        s[i] += g[i];
                    }
                }
            });
        }
        Op::Tanh(a) => accumulate(nodes, grads, *a, |s| {
            for i in 0..s.len() {
                let y = out.data()[i];
                s[i] += g[i] * (1.0 - y * y);
            }
        }),
        Op::Exp(a) => accumulate(nodes, grads, *a, |s| {
            for i in 0..s.len() {
                s[i] += g[i] * out.data()[i];
            }
        }),
        Op::Ln(a) => {
            let av = &nodes[*a].value;
            accumulate(nodes, grads, *a, |s| {
                for i in 0..s.len() {
                    s[i] += g[i] / av.data()[i];
                }
            });
        }
        Op::ClampMin(a, floor) => {
            let av = &nodes[*a].value;
            accumulate(nodes, grads, *a, |s| {
                for i in 0..s.len() {
                    if av.data()[i] > *floor {
                        s[i] += g[i];
                    }
                }
            });
        }
        Op::Sum(a) => accumulate(nodes, grads, *a, |s| s.iter_mut().for_each(|s| *s += g[0])),
        Op::SumCols(a) => {
            let cols = nodes[*a].value.cols();
            accumulate(nodes, grads, *a, |s| {
                for (i, s) in s.iter_mut().enumerate() {
                    *s += g[i / cols];
                }
            });
        }
        Op::SumRows(a) => {
            let cols = nodes[*a].value.cols();
            accumulate(nodes, grads, *a, |s| {
                for (i, s) in s.iter_mut().enumerate() {
                    *s += g[i % cols];
                }
            });
        }
        Op::LogSoftmaxRows(a) => {
            let cols = out.cols();
            accumulate(nodes, grads, *a, |s| {
                for r in 0..out.rows() {
                    let gs: f64 = g[r * cols..(r + 1) * cols].iter().sum();
                    for c in 0..cols {
                        let i = r * cols + c;
                        s[i] += g[i] - out.data()[i].exp() * gs;
                    }
                }
            });
        }
        Op::SoftmaxRows(a) => {
            let cols = out.cols();
            accumulate(nodes, grads, *a, |s| {
                for r in 0..out.rows() {
                    let range = r * cols..(r + 1) * cols;
                    let dot: f64 = g[range.clone()]
                        .iter()
                        .zip(&out.data()[range])
                        .map(|(g, p)| g * p)
                        .sum();
                    for c in 0..cols {
                        let i = r * cols + c;
                        s[i] += out.data()[i] * (g[i] - dot);
                    }
                }
            });
        }
        Op::LogSumExpRows(a) => {
            let av = &nodes[*a].value;
            let cols = av.cols();
            accumulate(nodes, grads, *a, |s| {
                for r in 0..av.rows() {
                    for c in 0..cols {
                        let i = r * cols + c;
                        s[i] += g[r] * (av.data()[i] - out.data()[r]).exp();
                    }
                }
            });
        }
        Op::NormalizeRows(a, inv_std) => {
            let cols = out.cols();
            let c = cols as f64;
            accumulate(nodes, grads, *a, |s| {
                for r in 0..out.rows() {
                    let range = r * cols..(r + 1) * cols;
                    let y = &out.data()[range.clone()];
                    let gr = &g[range];
                    let mg = gr.iter().sum::<f64>() / c;
                    let mgy = gr.iter().zip(y).map(|(g, y)| g * y).sum::<f64>() / c;
                    for k in 0..cols {
                        s[r * cols + k] += inv_std[r] * (gr[k] - mg - y[k] * mgy);
                    }
                }
            });
        }
        Op::L2NormalizeRows(a, norms) => {
            let cols = out.cols();
            accumulate(nodes, grads, *a, |s| {
                for r in 0..out.rows() {
                    let range = r * cols..(r + 1) * cols;
                    let y = &out.data()[range.clone()];
                    let gr = &g[range];
                    let dot = gr.iter().zip(y).map(|(g, y)| g * y).sum::<f64>();
                    for k in 0..cols {
                        s[r * cols + k] += (gr[k] - y[k] * dot) / norms[r];
                    }
                }
            });
        }
        Op::SliceCols(a, start, end) => {
            let in_cols = nodes[*a].value.cols();
            let w = end - start;
            accumulate(nodes, grads, *a, |s| {
                for r in 0..out.rows() {
                    for k in 0..w {
                        s[r * in_cols + start + k] += g[r * w + k];
                    }
                }
            });
        }
        Op::ConcatCols(ids) => {
            let total = out.cols();
            let mut offset = 0;
            for &p in ids {
                let w = nodes[p].value.cols();
                accumulate(nodes, grads, p, |s| {
                    for r in 0..out.rows() {
                        for k in 0..w {
                            s[r * w + k] += g[r * total + offset + k];
                        }
                    }
                });
                offset += w;
            }
        }
        Op::ConcatRows(ids) => {
            let mut offset = 0;
            for &p in ids {
                let len = nodes[p].value.len();
                accumulate(nodes, grads, p, |s| {
                    s.iter_mut()
                        .zip(&g[offset..offset + len])
                        .for_each(|(s, g)| *s += g)
                });
                offset += len;
            }
        }
        Op::GatherRows(a, idx) => {
            let cols = out.cols();
            accumulate(nodes, grads, *a, |s| {
                for (r, &src) in idx.iter().enumerate() {
                    for k in 0..cols {
                        s[src * cols + k] += g[r * cols + k];
                    }
                }
            });
        }
        Op::PickPerRow(a, cols_idx) => {
            let cols = nodes[*a].value.cols();
            accumulate(nodes, grads, *a, |s| {
                for (r, &c) in cols_idx.iter().enumerate() {
                    s[r * cols + c] += g[r];
                }
            });
        }
        Op::Linearized(a, grad) => accumulate(nodes, grads, *a, |s| {
            s.iter_mut().zip(grad.data()).for_each(|(s, d)| *s += g[0] * d)
        }),
        Op::PassThrough(a) => accumulate(nodes, grads, *a, |s| s.iter_mut().zip(g).for_each(|(s, g)| *s += g)),
        Op::Pearson(y, a, cache) => {
            let (yv, av) = (&nodes[*y].value, &nodes[*a].value);
            let (t, d) = (yv.rows(), yv.cols());
            // dr/dy_t = (a_t - ā)/√(syy·saa) − r·(y_t − ȳ)/syy, symmetric in a.
            let side = |own: &Tensor, other: &Tensor, pick_own: fn(&(f64, f64, f64)) -> f64, s: &mut [f64]| {
                for c in 0..d {
                    let Some(st) = cache.stats[c] else { continue };
                    let (syy, saa, _) = st;
                    let r = out.data()[c];
                    let mo = (0..t).map(|k| own.get(k, c)).sum::<f64>() / t as f64;
                    let mt = (0..t).map(|k| other.get(k, c)).sum::<f64>() / t as f64;
                    let denom = (syy * saa).sqrt();
                    let so = pick_own(&st);
                    for k in 0..t {
                        let dv = (other.get(k, c) - mt) / denom - r * (own.get(k, c) - mo) / so;
                        s[k * d + c] += g[c] * dv;
                    }
                }
            };
            accumulate(nodes, grads, *y, |s| side(yv, av, |st| st.0, s));
            accumulate(nodes, grads, *a, |s| side(av, yv, |st| st.1, s));
        }
    }
}
