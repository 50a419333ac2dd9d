//! Tape-based reverse-mode differentiation over dense matrices.
//!
//! A [`Tape`] records every operation of one forward pass. Values are
//! `Array2<f64>`; scalars are `1×1`. Sparse operands (adjacency, diffusion,
//! features) enter only as constant left factors of [`Tape::sparse_matmul`].
//!
//! ```
//! use bgae_core::autodiff::Tape;
//! use ndarray::array;
//!
//! let mut tape = Tape::new();
//! let x = tape.param(array![[0.0]]);
//! let y = tape.sigmoid(x).unwrap();
//! let loss = tape.sum(y).unwrap();
//! tape.backward(loss).unwrap();
//! assert_eq!(tape.grad(x).unwrap()[[0, 0]], 0.25);
//! ```

use std::sync::Arc;

use ndarray::{Array2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::sparse::CsrMatrix;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// A constant sparse left operand, stored with its transpose for the backward pass.
#[derive(Debug, Clone)]
pub struct SparseOperand {
    matrix: CsrMatrix,
    transpose: CsrMatrix,
}

impl SparseOperand {
    pub fn new(matrix: CsrMatrix) -> Arc<Self> {
        let transpose = matrix.transpose();
        Arc::new(SparseOperand { matrix, transpose })
    }

    pub fn matrix(&self) -> &CsrMatrix {
        &self.matrix
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    SparseMatMul(Arc<SparseOperand>, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Sigmoid(Var),
    Exp(Var),
    Log(Var),
    Abs(Var),
    LeakyRelu(Var, f64),
    ClampMin(Var, f64),
    Sum(Var),
    Mean(Var),
    Transpose(Var),
    ConcatRows(Vec<Var>),
    GatherRows(Var, Arc<Vec<usize>>),
    RowDot(Var, Arc<Vec<(usize, usize)>>),
    CenterColumns(Var),
    ScaleRows(Var, Var),
    SumLogDiagonal(Var, f64),
    SumLogOneMinusOffDiagonal(Var, f64),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::SparseMatMul(..) => "sparse_matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "elementwise_mul",
            Op::Scale(..) => "scalar_mul",
            Op::AddScalar(..) => "add_scalar",
            Op::Sigmoid(..) => "sigmoid",
            Op::Exp(..) => "exp",
            Op::Log(..) => "log",
            Op::Abs(..) => "abs",
            Op::LeakyRelu(..) => "leaky_relu",
            Op::ClampMin(..) => "clamp_min",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::Transpose(..) => "transpose",
            Op::ConcatRows(..) => "concat_rows",
            Op::GatherRows(..) => "gather_rows",
            Op::RowDot(..) => "row_dot",
            Op::CenterColumns(..) => "center_columns",
            Op::ScaleRows(..) => "scale_rows",
            Op::SumLogDiagonal(..) => "sum_log_diagonal",
            Op::SumLogOneMinusOffDiagonal(..) => "sum_log_one_minus_off_diagonal",
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Array2<f64>,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Array2<f64>>>,
    backward_done: bool,
    check_finite: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Tape {
    /// Non-finite checks are on in debug builds.
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            grads: Vec::new(),
            backward_done: false,
            check_finite: cfg!(debug_assertions),
        }
    }

    pub fn with_finite_checks(mut self, on: bool) -> Self {
        self.check_finite = on;
        self
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Array2<f64>) -> Var {
        self.push_leaf(value, true)
    }

    /// Leaf that receives no gradient.
    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push_leaf(value, false)
    }

    fn push_leaf(&mut self, value: Array2<f64>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dim()
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[[0, 0]]
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last `backward` call's loss with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&Array2<f64>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Clears gradients so `backward` may run again.
    pub fn reset_grads(&mut self) {
        self.grads.clear();
        self.backward_done = false;
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> Result<Var> {
        if self.check_finite && value.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { op: op.name() });
        }
        let requires_grad = self.parents(&op).iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn parents(&self, op: &Op) -> Vec<Var> {
        match op {
            Op::Leaf => vec![],
            Op::MatMul(a, b) | Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::ScaleRows(a, b) => vec![*a, *b],
            Op::SparseMatMul(_, a)
            | Op::Scale(a, _)
            | Op::AddScalar(a)
            | Op::Sigmoid(a)
            | Op::Exp(a)
            | Op::Log(a)
            | Op::Abs(a)
            | Op::LeakyRelu(a, _)
            | Op::ClampMin(a, _)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::Transpose(a)
            | Op::GatherRows(a, _)
            | Op::RowDot(a, _)
            | Op::CenterColumns(a)
            | Op::SumLogDiagonal(a, _)
            | Op::SumLogOneMinusOffDiagonal(a, _) => vec![*a],
            Op::ConcatRows(parts) => parts.clone(),
        }
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (l, r) = (self.shape(a), self.shape(b));
        if l != r {
            return Err(Error::Shape { op, left: l, right: r });
        }
        Ok(())
    }

    fn unary(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Result<Var> {
        let value = self.value(a).mapv(f);
        self.push(value, op)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (l, r) = (self.shape(a), self.shape(b));
        if l.1 != r.0 {
            return Err(Error::Shape { op: "matmul", left: l, right: r });
        }
        let value = self.value(a).dot(self.value(b));
        self.push(value, Op::MatMul(a, b))
    }

    pub fn sparse_matmul(&mut self, lhs: &Arc<SparseOperand>, rhs: Var) -> Result<Var> {
        let value = lhs.matrix.matmul_dense(&self.value(rhs).view())?;
        self.push(value, Op::SparseMatMul(Arc::clone(lhs), rhs))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let value = self.value(a) + self.value(b);
        self.push(value, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let value = self.value(a) - self.value(b);
        self.push(value, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("elementwise_mul", a, b)?;
        let value = self.value(a) * self.value(b);
        self.push(value, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        self.unary(a, Op::Scale(a, s), |x| s * x)
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Result<Var> {
        self.unary(a, Op::AddScalar(a), |x| x + s)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Sigmoid(a), sigmoid)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Exp(a), f64::exp)
    }

    /// Natural log; inputs must be positive (clamp first at loss call sites).
    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Log(a), f64::ln)
    }

    pub fn abs(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Abs(a), f64::abs)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Result<Var> {
        self.unary(a, Op::LeakyRelu(a, slope), |x| if x > 0.0 { x } else { slope * x })
    }

    pub fn clamp_min(&mut self, a: Var, floor: f64) -> Result<Var> {
        self.unary(a, Op::ClampMin(a, floor), |x| x.max(floor))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).sum();
        self.push(Array2::from_elem((1, 1), s), Op::Sum(a))
    }

    /// `Σ_m log(max(a_mm, floor))` over a square matrix.
    pub fn sum_log_diagonal(&mut self, a: Var, floor: f64) -> Result<Var> {
        let v = self.square("sum_log_diagonal", a)?;
        let s = (0..v.nrows()).map(|m| v[[m, m]].max(floor).ln()).sum();
        self.push(Array2::from_elem((1, 1), s), Op::SumLogDiagonal(a, floor))
    }

    /// `Σ_{ℓ≠m} log(max(1 − a_ℓm, floor))` over a square matrix.
    pub fn sum_log_one_minus_off_diagonal(&mut self, a: Var, floor: f64) -> Result<Var> {
        let v = self.square("sum_log_one_minus_off_diagonal", a)?;
        let mut s = 0.0;
        for ((l, m), &x) in v.indexed_iter() {
            if l != m {
                s += (1.0 - x).max(floor).ln();
            }
        }
        self.push(Array2::from_elem((1, 1), s), Op::SumLogOneMinusOffDiagonal(a, floor))
    }

    fn square(&self, op: &'static str, a: Var) -> Result<&Array2<f64>> {
        let v = self.value(a);
        if v.nrows() != v.ncols() {
            return Err(Error::Shape {
                op,
                left: v.dim(),
                right: (v.ncols(), v.nrows()),
            });
        }
        Ok(v)
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let len = self.value(a).len();
        if len == 0 {
            return Err(Error::Autodiff("mean of an empty tensor".into()));
        }
        let s = self.value(a).sum() / len as f64;
        self.push(Array2::from_elem((1, 1), s), Op::Mean(a))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).t().as_standard_layout().into_owned();
        self.push(value, Op::Transpose(a))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or_else(|| Error::Autodiff("concat_rows of nothing".into()))?;
        let cols = self.shape(*first).1;
        for p in parts {
            if self.shape(*p).1 != cols {
                return Err(Error::Shape {
                    op: "concat_rows",
                    left: self.shape(*first),
                    right: self.shape(*p),
                });
            }
        }
        let views: Vec<_> = parts.iter().map(|p| self.value(*p).view()).collect();
        let value = ndarray::concatenate(Axis(0), &views).expect("column counts checked");
        self.push(value, Op::ConcatRows(parts.to_vec()))
    }

    pub fn gather_rows(&mut self, a: Var, indices: Arc<Vec<usize>>) -> Result<Var> {
        let (rows, _) = self.shape(a);
        if let Some(&bad) = indices.iter().find(|&&i| i >= rows) {
            return Err(Error::Shape {
                op: "gather_rows",
                left: self.shape(a),
                right: (bad, 0),
            });
        }
        let value = self.value(a).select(Axis(0), &indices);
        self.push(value, Op::GatherRows(a, indices))
    }

    /// `out[p] = z_i · z_j` for each pair `p = (i, j)`; shape `P×1`.
    pub fn row_dot(&mut self, z: Var, pairs: Arc<Vec<(usize, usize)>>) -> Result<Var> {
        let zv = self.value(z);
        let rows = zv.nrows();
        if let Some(&(i, j)) = pairs.iter().find(|&&(i, j)| i >= rows || j >= rows) {
            return Err(Error::Shape {
                op: "row_dot",
                left: zv.dim(),
                right: (i.max(j), 0),
            });
        }
        let mut out = Array2::zeros((pairs.len(), 1));
        for (p, &(i, j)) in pairs.iter().enumerate() {
            out[[p, 0]] = zv.row(i).dot(&zv.row(j));
        }
        self.push(out, Op::RowDot(z, pairs))
    }

    /// Subtracts each column's mean.
    pub fn center_columns(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a);
        let mean = v.mean_axis(Axis(0)).ok_or_else(|| Error::Autodiff("centering an empty tensor".into()))?;
        let value = v - &mean.insert_axis(Axis(0));
        self.push(value, Op::CenterColumns(a))
    }

    /// Multiplies row `i` of `a` (`N×d`) by `s[i]` (`s` is `N×1`).
    pub fn scale_rows(&mut self, a: Var, s: Var) -> Result<Var> {
        let (l, r) = (self.shape(a), self.shape(s));
        if r != (l.0, 1) {
            return Err(Error::Shape { op: "scale_rows", left: l, right: r });
        }
        let value = self.value(a) * self.value(s);
        self.push(value, Op::ScaleRows(a, s))
    }

    /// `mu + exp(0.5·log_var) ⊙ ε` with `ε ~ N(0, I)` held constant.
    pub fn reparameterize<R: Rng + ?Sized>(&mut self, mu: Var, log_var: Var, rng: &mut R) -> Result<Var> {
        self.same_shape("reparameterize", mu, log_var)?;
        let (r, c) = self.shape(mu);
        let eps = Array2::from_shape_simple_fn((r, c), || rng.sample::<f64, _>(StandardNormal));
        let eps = self.constant(eps);
        let half = self.scale(log_var, 0.5)?;
        let std = self.exp(half)?;
        let noise = self.mul(std, eps)?;
        self.add(mu, noise)
    }

    /// Populates gradients of the scalar `loss` for every node that requires them.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(Error::Autodiff("backward called twice without reset_grads".into()));
        }
        if self.shape(loss) != (1, 1) {
            return Err(Error::Autodiff(format!("loss must be scalar, got shape {:?}", self.shape(loss))));
        }
        self.backward_done = true;
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Array2::ones((1, 1)));

        for id in (0..=loss.0).rev() {
            if !self.nodes[id].requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            let mut send = |target: Var, contribution: Array2<f64>| {
                if !self.nodes[target.0].requires_grad {
                    return;
                }
                match &mut grads[target.0] {
                    Some(acc) => *acc += &contribution,
                    slot @ None => *slot = Some(contribution),
                }
            };
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    if self.nodes[a.0].requires_grad {
                        send(*a, g.dot(&bv.t()));
                    }
                    if self.nodes[b.0].requires_grad {
                        send(*b, av.t().dot(&g));
                    }
                }
                Op::SparseMatMul(s, a) => {
                    send(*a, s.transpose.matmul_dense(&g.view())?);
                }
                Op::Add(a, b) => {
                    send(*a, g.clone());
                    send(*b, g.clone());
                }
                Op::Sub(a, b) => {
                    send(*b, -&g);
                    send(*a, g.clone());
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    send(*a, &g * bv);
                    send(*b, &g * av);
                }
                Op::Scale(a, s) => send(*a, &g * *s),
                Op::AddScalar(a) => send(*a, g.clone()),
                Op::Sigmoid(a) => {
                    let y = &node.value;
                    send(*a, &g * &y.mapv(|v| v * (1.0 - v)));
                }
                Op::Exp(a) => send(*a, &g * &node.value),
                Op::Log(a) => send(*a, &g / &self.nodes[a.0].value),
                Op::Abs(a) => {
                    let sign = self.nodes[a.0].value.mapv(|v| {
                        if v > 0.0 {
                            1.0
                        } else if v < 0.0 {
                            -1.0
                        } else {
                            0.0
                        }
                    });
                    send(*a, &g * &sign);
                }
                Op::LeakyRelu(a, slope) => {
                    let d = self.nodes[a.0].value.mapv(|v| if v > 0.0 { 1.0 } else { *slope });
                    send(*a, &g * &d);
                }
                Op::ClampMin(a, floor) => {
                    let d = self.nodes[a.0].value.mapv(|v| if v >= *floor { 1.0 } else { 0.0 });
                    send(*a, &g * &d);
                }
                Op::Sum(a) => {
                    let shape = self.nodes[a.0].value.dim();
                    send(*a, Array2::from_elem(shape, g[[0, 0]]));
                }
                Op::Mean(a) => {
                    let v = &self.nodes[a.0].value;
                    send(*a, Array2::from_elem(v.dim(), g[[0, 0]] / v.len() as f64));
                }
                Op::Transpose(a) => send(*a, g.t().as_standard_layout().into_owned()),
                Op::ConcatRows(parts) => {
                    let mut start = 0;
                    for p in parts {
                        let rows = self.nodes[p.0].value.nrows();
                        send(*p, g.slice(ndarray::s![start..start + rows, ..]).to_owned());
                        start += rows;
                    }
                }
                Op::GatherRows(a, idx) => {
                    let mut acc = Array2::zeros(self.nodes[a.0].value.dim());
                    for (k, &i) in idx.iter().enumerate() {
                        let mut row = acc.row_mut(i);
                        row += &g.row(k);
                    }
                    send(*a, acc);
                }
                Op::RowDot(z, pairs) => {
                    let zv = &self.nodes[z.0].value;
                    let mut acc = Array2::zeros(zv.dim());
                    for (p, &(i, j)) in pairs.iter().enumerate() {
                        let gp = g[[p, 0]];
                        if gp == 0.0 {
                            continue;
                        }
                        acc.row_mut(i).scaled_add(gp, &zv.row(j));
                        acc.row_mut(j).scaled_add(gp, &zv.row(i));
                    }
                    send(*z, acc);
                }
                Op::CenterColumns(a) => {
                    let mean = g.mean_axis(Axis(0)).expect("non-empty");
                    send(*a, &g - &mean.insert_axis(Axis(0)));
                }
                Op::ScaleRows(a, s) => {
                    let (av, sv) = (&self.nodes[a.0].value, &self.nodes[s.0].value);
                    if self.nodes[s.0].requires_grad {
                        let ds = (&g * av).sum_axis(Axis(1)).insert_axis(Axis(1));
                        send(*s, ds);
                    }
                    send(*a, &g * sv);
                }
                Op::SumLogDiagonal(a, floor) => {
                    let v = &self.nodes[a.0].value;
                    let g0 = g[[0, 0]];
                    let mut d = Array2::zeros(v.dim());
                    for m in 0..v.nrows() {
                        if v[[m, m]] >= *floor {
                            d[[m, m]] = g0 / v[[m, m]];
                        }
                    }
                    send(*a, d);
                }
                Op::SumLogOneMinusOffDiagonal(a, floor) => {
                    let v = &self.nodes[a.0].value;
                    let g0 = g[[0, 0]];
                    let d = Array2::from_shape_fn(v.dim(), |(l, m)| {
                        let rest = 1.0 - v[[l, m]];
                        if l != m && rest >= *floor {
                            -(g0 / rest)
                        } else {
                            0.0
                        }
                    });
                    send(*a, d);
                }
            }
            grads[id] = Some(g);
        }
        // keep gradients only for leaves
        for (node, slot) in self.nodes.iter().zip(grads.iter_mut()) {
            if !matches!(node.op, Op::Leaf) || !node.requires_grad {
                *slot = None;
            }
        }
        self.grads = grads;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn sigmoid_at_zero() {
        let mut t = Tape::new();
        let x = t.param(array![[0.0]]);
        let y = t.sigmoid(x).unwrap();
        assert_eq!(t.scalar(y), 0.5);
        t.backward(y).unwrap();
        assert_eq!(t.grad(x).unwrap()[[0, 0]], 0.25);
    }

    #[test]
    fn identity_matmul() {
        let mut t = Tape::new();
        let i = t.constant(Array2::eye(2));
        let m = t.constant(array![[1.0, 2.0], [3.0, 4.0]]);
        let out = t.matmul(i, m).unwrap();
        assert_eq!(t.value(out), t.value(m));
    }

    #[test]
    fn sum_gives_ones() {
        let mut t = Tape::new();
        let w = t.param(array![[1.0, -2.0], [0.5, 3.0]]);
        let s = t.sum(w).unwrap();
        t.backward(s).unwrap();
        assert_eq!(t.grad(w).unwrap(), &Array2::<f64>::ones((2, 2)));
    }

    #[test]
    fn fan_out_accumulates() {
        let mut t = Tape::new();
        let x = t.param(array![[1.0, 2.0, 3.0]]);
        let a = t.sum(x).unwrap();
        let b = t.sum(x).unwrap();
        let l = t.add(a, b).unwrap();
        t.backward(l).unwrap();
        assert_eq!(t.grad(x).unwrap(), &array![[2.0, 2.0, 2.0]]);
    }

    #[test]
    fn double_backward_is_rejected() {
        let mut t = Tape::new();
        let x = t.param(array![[1.0]]);
        let l = t.sum(x).unwrap();
        t.backward(l).unwrap();
        assert!(t.backward(l).is_err());
        t.reset_grads();
        t.backward(l).unwrap();
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut t = Tape::new();
        let x = t.param(array![[1.0, 2.0]]);
        assert!(t.backward(x).is_err());
    }

    #[test]
    fn shape_errors_name_both_shapes() {
        let mut t = Tape::new();
        let a = t.param(Array2::zeros((2, 3)));
        let b = t.param(Array2::zeros((2, 3)));
        let err = t.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("(2, 3)") && err.contains("matmul"), "{err}");
    }

    #[test]
    fn non_finite_output_is_caught_when_checking() {
        let mut t = Tape::new().with_finite_checks(true);
        let x = t.param(array![[0.0]]);
        assert!(matches!(t.log(x), Err(Error::NonFinite { op: "log" })));
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut t = Tape::new();
        let c = t.constant(array![[2.0]]);
        let x = t.param(array![[3.0]]);
        let y = t.mul(c, x).unwrap();
        t.backward(y).unwrap();
        assert!(t.grad(c).is_none());
        assert_eq!(t.grad(x).unwrap()[[0, 0]], 2.0);
    }

    #[test]
    fn reparameterize_zero_variance_limit() {
        let mut rng = crate::rng::seeded(9);
        let mut t = Tape::new();
        let mu = t.param(array![[1.5, -2.0]]);
        let lv = t.param(array![[-50.0, -50.0]]);
        let z = t.reparameterize(mu, lv, &mut rng).unwrap();
        for (a, b) in t.value(z).iter().zip(t.value(mu).iter()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn reparameterize_is_reproducible() {
        let draw = || {
            let mut rng = crate::rng::seeded(4);
            let mut t = Tape::new();
            let mu = t.constant(Array2::zeros((3, 2)));
            let lv = t.constant(Array2::zeros((3, 2)));
            let z = t.reparameterize(mu, lv, &mut rng).unwrap();
            t.value(z).clone()
        };
        assert_eq!(draw(), draw());
    }
}
