//! Reverse-mode differentiation on a linear tape of matrix operations.
//!
//! A [`Tape`] records every kernel applied during a forward pass. Nodes are
//! appended in execution order, so walking the node list backwards visits
//! them in reverse topological order and a single sweep propagates adjoints
//! from the loss to every leaf. A tape belongs to one logical thread of
//! control; [`Var`] handles are cheap copies tied to their tape's lifetime.

use crate::error::NumError;
use crate::matrix::{Matrix, Scalar};
use std::cell::RefCell;

/// Operation recorded for one tape node. Input fields are node indices.
enum Op<F: Scalar> {
    /// Input leaf: a parameter or a constant.
    Leaf,
    /// `A * B`
    Matmul { a: usize, b: usize },
    /// `A * B^T`
    MatmulNt { a: usize, b: usize },
    /// Elementwise sum of equal shapes.
    Add { a: usize, b: usize },
    /// `A + row` with the 1xN row broadcast over every row of A.
    AddRow { a: usize, row: usize },
    /// Elementwise product of equal shapes.
    Mul { a: usize, b: usize },
    /// `A .* row` with a 1xG row, G == cols(A) or G == 1 (scalar broadcast).
    MulRow { a: usize, row: usize },
    /// Elementwise product with a constant mask (no gradient to the mask).
    MulConst { a: usize, mask: Matrix<F> },
    /// `scale * A + shift` elementwise with compile-time constants.
    Affine { a: usize, scale: F },
    Tanh { a: usize },
    Sigmoid { a: usize },
    /// Row-wise softmax with per-row max subtraction.
    SoftmaxRows { a: usize },
    /// Mean over rows to a 1xN row.
    MeanRows { a: usize },
    /// Horizontal concatenation of equal-height blocks.
    ConcatCols { a: usize, b: usize },
    /// Vertical concatenation of equal-width blocks.
    ConcatRows { a: usize, b: usize },
    /// Sum of all entries to a 1x1 scalar.
    SumAll { a: usize },
    /// Fused weighted cross-entropy over a 1xM logits row.
    /// `probs` caches the softmax for the backward rule.
    WeightedCe { logits: usize, gold: usize, weight: F, probs: Matrix<F> },
}

struct Node<F: Scalar> {
    value: Matrix<F>,
    op: Op<F>,
}

struct Inner<F: Scalar> {
    nodes: Vec<Node<F>>,
    adjoints: Option<Vec<Matrix<F>>>,
}

/// Recording tape. See module docs for the ownership rules.
pub struct Tape<F: Scalar> {
    inner: RefCell<Inner<F>>,
}

/// Handle to one node on a tape.
#[derive(Clone, Copy)]
pub struct Var<'t, F: Scalar> {
    tape: &'t Tape<F>,
    id: usize,
}

impl<F: Scalar> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Scalar> Tape<F> {
    pub fn new() -> Self {
        Tape { inner: RefCell::new(Inner { nodes: Vec::new(), adjoints: None }) }
    }

    /// Register a trainable leaf.
    pub fn param(&self, value: Matrix<F>) -> Var<'_, F> {
        self.push(value, Op::Leaf)
    }

    /// Register a non-trainable leaf.
    pub fn constant(&self, value: Matrix<F>) -> Var<'_, F> {
        self.push(value, Op::Leaf)
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Matrix<F>, op: Op<F>) -> Var<'_, F> {
        let mut inner = self.inner.borrow_mut();
        inner.nodes.push(Node { value, op });
        Var { tape: self, id: inner.nodes.len() - 1 }
    }

    fn value_of(&self, id: usize) -> Matrix<F> {
        self.inner.borrow().nodes[id].value.clone()
    }

    fn shape_of(&self, id: usize) -> (usize, usize) {
        self.inner.borrow().nodes[id].value.shape()
    }

    /// Weighted cross-entropy of a 1xM logits row against a gold class.
    ///
    /// `loss = -weight * ln(max(softmax(logits)_gold, 1e-12))`. The log
    /// argument is clamped below so a saturated wrong prediction yields a
    /// large finite loss instead of infinity. The backward rule is the
    /// analytic `weight * (softmax - onehot)`, which matches the unclamped
    /// function; the clamp only binds where the loss is already off-scale.
    pub fn weighted_cross_entropy(
        &self,
        logits: Var<'_, F>,
        gold: usize,
        weight: F,
    ) -> Result<Var<'_, F>, NumError> {
        self.check_owns(logits)?;
        let value = self.value_of(logits.id);
        if value.rows() != 1 {
            return Err(NumError::LossNotScalar { rows: value.rows(), cols: value.cols() });
        }
        let classes = value.cols();
        if gold >= classes {
            return Err(NumError::GoldOutOfRange { gold, classes });
        }
        if !(weight > F::zero()) {
            return Err(NumError::NonPositiveWeight { class: gold, weight: weight.to_f64() });
        }
        let probs = softmax_rows_value(&value);
        let clamp = F::from_f64(1e-12);
        let p_gold = probs.get(0, gold).max(clamp);
        let loss = -weight * p_gold.ln();
        Ok(self.push(
            Matrix::from_raw(1, 1, vec![loss]),
            Op::WeightedCe { logits: logits.id, gold, weight, probs },
        ))
    }

    /// Reverse sweep from `loss`, resetting any previous adjoints first.
    pub fn backward(&self, loss: Var<'_, F>) -> Result<(), NumError> {
        self.check_owns(loss)?;
        let fresh = self.sweep(loss)?;
        self.inner.borrow_mut().adjoints = Some(fresh);
        Ok(())
    }

    /// Reverse sweep whose adjoints add onto any previous sweep's. Useful
    /// for summing gradients of several scalar losses on one tape.
    pub fn backward_accumulate(&self, loss: Var<'_, F>) -> Result<(), NumError> {
        self.check_owns(loss)?;
        let fresh = self.sweep(loss)?;
        let mut inner = self.inner.borrow_mut();
        match inner.adjoints.take() {
            None => inner.adjoints = Some(fresh),
            Some(mut old) => {
                for (i, f) in fresh.into_iter().enumerate() {
                    if i < old.len() {
                        for (d, &x) in old[i].data_mut().iter_mut().zip(f.data()) {
                            *d += x;
                        }
                    } else {
                        old.push(f);
                    }
                }
                inner.adjoints = Some(old);
            }
        }
        Ok(())
    }

    fn sweep(&self, loss: Var<'_, F>) -> Result<Vec<Matrix<F>>, NumError> {
        let inner = self.inner.borrow();
        {
            let lv = &inner.nodes[loss.id].value;
            if lv.shape() != (1, 1) {
                return Err(NumError::LossNotScalar { rows: lv.rows(), cols: lv.cols() });
            }
        }
        let mut adj: Vec<Matrix<F>> = inner
            .nodes
            .iter()
            .map(|n| Matrix::zeros(n.value.rows(), n.value.cols()))
            .collect();
        adj[loss.id].set(0, 0, F::one());

        for id in (0..=loss.id).rev() {
            let g = adj[id].clone();
            if g.data().iter().all(|&x| x == F::zero()) {
                continue;
            }
            match &inner.nodes[id].op {
                Op::Leaf => {}
                Op::Matmul { a, b } => {
                    let (a, b) = (*a, *b);
                    let da = g.matmul_nt(&inner.nodes[b].value).expect("matmul bwd");
                    let db = inner.nodes[a].value.matmul_tn(&g).expect("matmul bwd");
                    accumulate(&mut adj, a, &da);
                    accumulate(&mut adj, b, &db);
                }
                Op::MatmulNt { a, b } => {
                    let (a, b) = (*a, *b);
                    let da = g.matmul(&inner.nodes[b].value).expect("matmul_nt bwd");
                    let db = g.matmul_tn(&inner.nodes[a].value).expect("matmul_nt bwd");
                    accumulate(&mut adj, a, &da);
                    accumulate(&mut adj, b, &db);
                }
                Op::Add { a, b } => {
                    let (a, b) = (*a, *b);
                    accumulate(&mut adj, a, &g);
                    accumulate(&mut adj, b, &g);
                }
                Op::AddRow { a, row } => {
                    let (a, row) = (*a, *row);
                    accumulate(&mut adj, a, &g);
                    let mut dr = vec![F::zero(); g.cols()];
                    for r in 0..g.rows() {
                        for (acc, &x) in dr.iter_mut().zip(g.row_slice(r)) {
                            *acc += x;
                        }
                    }
                    accumulate(&mut adj, row, &Matrix::from_raw(1, g.cols(), dr));
                }
                Op::Mul { a, b } => {
                    let (a, b) = (*a, *b);
                    let da = g.hadamard(&inner.nodes[b].value).expect("mul bwd");
                    let db = g.hadamard(&inner.nodes[a].value).expect("mul bwd");
                    accumulate(&mut adj, a, &da);
                    accumulate(&mut adj, b, &db);
                }
                Op::MulRow { a, row } => {
                    let (a, row) = (*a, *row);
                    let av = inner.nodes[a].value.clone();
                    let rv = inner.nodes[row].value.clone();
                    let scalar = rv.cols() == 1;
                    let mut da = Matrix::zeros(av.rows(), av.cols());
                    let mut dr = Matrix::zeros(1, rv.cols());
                    for r in 0..av.rows() {
                        for c in 0..av.cols() {
                            let j = if scalar { 0 } else { c };
                            da.set(r, c, g.get(r, c) * rv.get(0, j));
                            dr.set(0, j, dr.get(0, j) + g.get(r, c) * av.get(r, c));
                        }
                    }
                    accumulate(&mut adj, a, &da);
                    accumulate(&mut adj, row, &dr);
                }
                Op::MulConst { a, mask } => {
                    let da = g.hadamard(mask).expect("mul_const bwd");
                    accumulate(&mut adj, *a, &da);
                }
                Op::Affine { a, scale, .. } => {
                    accumulate(&mut adj, *a, &g.scale(*scale));
                }
                Op::Tanh { a } => {
                    let y = &inner.nodes[id].value;
                    let da = Matrix::from_fn(y.rows(), y.cols(), |r, c| {
                        let t = y.get(r, c);
                        g.get(r, c) * (F::one() - t * t)
                    });
                    accumulate(&mut adj, *a, &da);
                }
                Op::Sigmoid { a } => {
                    let y = &inner.nodes[id].value;
                    let da = Matrix::from_fn(y.rows(), y.cols(), |r, c| {
                        let s = y.get(r, c);
                        g.get(r, c) * s * (F::one() - s)
                    });
                    accumulate(&mut adj, *a, &da);
                }
                Op::SoftmaxRows { a } => {
                    let y = &inner.nodes[id].value;
                    let mut da = Matrix::zeros(y.rows(), y.cols());
                    for r in 0..y.rows() {
                        let mut dot = F::zero();
                        for c in 0..y.cols() {
                            dot += g.get(r, c) * y.get(r, c);
                        }
                        for c in 0..y.cols() {
                            da.set(r, c, y.get(r, c) * (g.get(r, c) - dot));
                        }
                    }
                    accumulate(&mut adj, *a, &da);
                }
                Op::MeanRows { a } => {
                    let rows = inner.nodes[*a].value.rows();
                    let inv = F::one() / F::from_f64(rows as f64);
                    let da = Matrix::from_fn(rows, g.cols(), |_, c| g.get(0, c) * inv);
                    accumulate(&mut adj, *a, &da);
                }
                Op::ConcatCols { a, b } => {
                    let (a, b) = (*a, *b);
                    let ac = inner.nodes[a].value.cols();
                    let bc = inner.nodes[b].value.cols();
                    let rows = g.rows();
                    let da = Matrix::from_fn(rows, ac, |r, c| g.get(r, c));
                    let db = Matrix::from_fn(rows, bc, |r, c| g.get(r, ac + c));
                    accumulate(&mut adj, a, &da);
                    accumulate(&mut adj, b, &db);
                }
                Op::ConcatRows { a, b } => {
                    let (a, b) = (*a, *b);
                    let ar = inner.nodes[a].value.rows();
                    let br = inner.nodes[b].value.rows();
                    let cols = g.cols();
                    let da = Matrix::from_fn(ar, cols, |r, c| g.get(r, c));
                    let db = Matrix::from_fn(br, cols, |r, c| g.get(ar + r, c));
                    accumulate(&mut adj, a, &da);
                    accumulate(&mut adj, b, &db);
                }
                Op::SumAll { a } => {
                    let shape = inner.nodes[*a].value.shape();
                    let da = Matrix::filled(shape.0, shape.1, g.get(0, 0));
                    accumulate(&mut adj, *a, &da);
                }
                Op::WeightedCe { logits, gold, weight, probs } => {
                    let (logits, gold, weight) = (*logits, *gold, *weight);
                    let scale = g.get(0, 0) * weight;
                    let da = Matrix::from_fn(1, probs.cols(), |_, c| {
                        let onehot = if c == gold { F::one() } else { F::zero() };
                        scale * (probs.get(0, c) - onehot)
                    });
                    accumulate(&mut adj, logits, &da);
                }
            }
        }
        Ok(adj)
    }

    /// Gradient accumulated for `var` by the last backward sweep.
    pub fn grad(&self, var: Var<'_, F>) -> Result<Matrix<F>, NumError> {
        self.check_owns(var)?;
        let inner = self.inner.borrow();
        match &inner.adjoints {
            Some(adj) if var.id < adj.len() => Ok(adj[var.id].clone()),
            Some(_) => {
                let n = &inner.nodes[var.id].value;
                Ok(Matrix::zeros(n.rows(), n.cols()))
            }
            None => Err(NumError::NoBackward),
        }
    }

    fn check_owns(&self, var: Var<'_, F>) -> Result<(), NumError> {
        if std::ptr::eq(self, var.tape) {
            Ok(())
        } else {
            Err(NumError::TapeMismatch)
        }
    }

    fn binary(
        &self,
        a: Var<'_, F>,
        b: Var<'_, F>,
        check: impl Fn((usize, usize), (usize, usize)) -> Result<(usize, usize), NumError>,
        compute: impl Fn(&Matrix<F>, &Matrix<F>) -> Matrix<F>,
        op: impl Fn(usize, usize) -> Op<F>,
    ) -> Result<Var<'_, F>, NumError> {
        self.check_owns(a)?;
        self.check_owns(b)?;
        check(self.shape_of(a.id), self.shape_of(b.id))?;
        let value = {
            let inner = self.inner.borrow();
            compute(&inner.nodes[a.id].value, &inner.nodes[b.id].value)
        };
        Ok(self.push(value, op(a.id, b.id)))
    }
}

impl<'t, F: Scalar> Var<'t, F> {
    pub fn value(&self) -> Matrix<F> {
        self.tape.value_of(self.id)
    }

    pub fn shape(&self) -> (usize, usize) {
        self.tape.shape_of(self.id)
    }

    /// Standard matrix product.
    pub fn matmul(self, other: Var<'t, F>) -> Result<Var<'t, F>, NumError> {
        self.tape.binary(
            self,
            other,
            |l, r| {
                if l.1 != r.0 {
                    Err(NumError::ShapeMismatch { op: "matmul", lhs: l, rhs: r })
                } else {
                    Ok(l)
                }
            },
            |a, b| a.matmul(b).expect("checked"),
            |a, b| Op::Matmul { a, b },
        )
    }

    /// `self * other^T`.
    pub fn matmul_nt(self, other: Var<'t, F>) -> Result<Var<'t, F>, NumError> {
        self.tape.binary(
            self,
            other,
            |l, r| {
                if l.1 != r.1 {
                    Err(NumError::ShapeMismatch { op: "matmul_nt", lhs: l, rhs: r })
                } else {
                    Ok(l)
                }
            },
            |a, b| a.matmul_nt(b).expect("checked"),
            |a, b| Op::MatmulNt { a, b },
        )
    }

    pub fn add(self, other: Var<'t, F>) -> Result<Var<'t, F>, NumError> {
        self.tape.binary(
            self,
            other,
            |l, r| {
                if l != r {
                    Err(NumError::ShapeMismatch { op: "add", lhs: l, rhs: r })
                } else {
                    Ok(l)
                }
            },
            |a, b| a.add(b).expect("checked"),
            |a, b| Op::Add { a, b },
        )
    }

    /// Add a 1xN row to every row of self.
    pub fn add_row(self, row: Var<'t, F>) -> Result<Var<'t, F>, NumError> {
        self.tape.binary(
            self,
            row,
            |l, r| {
                if r.0 != 1 || r.1 != l.1 {
                    Err(NumError::ShapeMismatch { op: "add_row", lhs: l, rhs: r })
                } else {
                    Ok(l)
                }
            },
            |a, b| {
                Matrix::from_fn(a.rows(), a.cols(), |r, c| a.get(r, c) + b.get(0, c))
            },
            |a, row| Op::AddRow { a, row },
        )
    }

    /// Elementwise product of equal shapes.
    pub fn mul(self, other: Var<'t, F>) -> Result<Var<'t, F>, NumError> {
        self.tape.binary(
            self,
            other,
            |l, r| {
                if l != r {
                    Err(NumError::ShapeMismatch { op: "mul", lhs: l, rhs: r })
                } else {
                    Ok(l)
                }
            },
            |a, b| a.hadamard(b).expect("checked"),
            |a, b| Op::Mul { a, b },
        )
    }

    /// Multiply every row of self by a 1xG row; G must be cols(self) or 1.
    pub fn mul_row(self, row: Var<'t, F>) -> Result<Var<'t, F>, NumError> {
        self.tape.binary(
            self,
            row,
            |l, r| {
                if r.0 != 1 || (r.1 != l.1 && r.1 != 1) {
                    Err(NumError::ShapeMismatch { op: "mul_row", lhs: l, rhs: r })
                } else {
                    Ok(l)
                }
            },
            |a, b| {
                let scalar = b.cols() == 1;
                Matrix::from_fn(a.rows(), a.cols(), |r, c| {
                    a.get(r, c) * b.get(0, if scalar { 0 } else { c })
                })
            },
            |a, row| Op::MulRow { a, row },
        )
    }

    /// Elementwise product with a constant mask. The mask is not a tape node
    /// and receives no gradient; this is how dropout is recorded.
    pub fn mul_mask(self, mask: Matrix<F>) -> Result<Var<'t, F>, NumError> {
        self.tape.check_owns(self)?;
        let value = self.value();
        if value.shape() != mask.shape() {
            return Err(NumError::ShapeMismatch {
                op: "mul_mask",
                lhs: value.shape(),
                rhs: mask.shape(),
            });
        }
        let out = value.hadamard(&mask).expect("checked");
        Ok(self.tape.push(out, Op::MulConst { a: self.id, mask }))
    }

    /// `scale * self + shift` elementwise.
    pub fn affine(self, scale: F, shift: F) -> Var<'t, F> {
        let value = self.value().map(|x| scale * x + shift);
        self.tape.push(value, Op::Affine { a: self.id, scale })
    }

    pub fn scale(self, scale: F) -> Var<'t, F> {
        self.affine(scale, F::zero())
    }

    /// `1 - self` elementwise; the complement gate.
    pub fn one_minus(self) -> Var<'t, F> {
        self.affine(-F::one(), F::one())
    }

    pub fn tanh(self) -> Var<'t, F> {
        let value = self.value().map(|x| x.tanh());
        self.tape.push(value, Op::Tanh { a: self.id })
    }

    pub fn sigmoid(self) -> Var<'t, F> {
        let value = self.value().map(sigmoid_scalar);
        self.tape.push(value, Op::Sigmoid { a: self.id })
    }

    /// Row-wise softmax with per-row max subtraction.
    pub fn softmax_rows(self) -> Var<'t, F> {
        let value = softmax_rows_value(&self.value());
        self.tape.push(value, Op::SoftmaxRows { a: self.id })
    }

    /// Mean over rows to a 1xN row.
    pub fn mean_rows(self) -> Var<'t, F> {
        let value = self.value().mean_rows();
        self.tape.push(value, Op::MeanRows { a: self.id })
    }

    /// Horizontal concatenation `[self ; other]` along the feature axis.
    pub fn concat_cols(self, other: Var<'t, F>) -> Result<Var<'t, F>, NumError> {
        self.tape.binary(
            self,
            other,
            |l, r| {
                if l.0 != r.0 {
                    Err(NumError::ShapeMismatch { op: "concat_cols", lhs: l, rhs: r })
                } else {
                    Ok(l)
                }
            },
            |a, b| {
                Matrix::from_fn(a.rows(), a.cols() + b.cols(), |r, c| {
                    if c < a.cols() {
                        a.get(r, c)
                    } else {
                        b.get(r, c - a.cols())
                    }
                })
            },
            |a, b| Op::ConcatCols { a, b },
        )
    }

    /// Vertical concatenation stacking other's rows under self's.
    pub fn concat_rows(self, other: Var<'t, F>) -> Result<Var<'t, F>, NumError> {
        self.tape.binary(
            self,
            other,
            |l, r| {
                if l.1 != r.1 {
                    Err(NumError::ShapeMismatch { op: "concat_rows", lhs: l, rhs: r })
                } else {
                    Ok(l)
                }
            },
            |a, b| {
                Matrix::from_fn(a.rows() + b.rows(), a.cols(), |r, c| {
                    if r < a.rows() {
                        a.get(r, c)
                    } else {
                        b.get(r - a.rows(), c)
                    }
                })
            },
            |a, b| Op::ConcatRows { a, b },
        )
    }

    /// Sum of every entry, as a 1x1 node.
    pub fn sum_all(self) -> Var<'t, F> {
        let mut acc = F::zero();
        let v = self.value();
        for &x in v.data() {
            acc += x;
        }
        self.tape.push(Matrix::from_raw(1, 1, vec![acc]), Op::SumAll { a: self.id })
    }
}

/// Scaled dot-product attention over tape variables.
///
/// Returns `(out, weights)` with `weights = softmax_rows(Q K^T / sqrt(d))`
/// and `out = weights * V`. With a single key row the softmax is exactly 1
/// and `out` reproduces `V` bit-for-bit.
pub fn scaled_dot_attention<'t, F: Scalar>(
    q: Var<'t, F>,
    k: Var<'t, F>,
    v: Var<'t, F>,
) -> Result<(Var<'t, F>, Var<'t, F>), NumError> {
    let (qs, ks, vs) = (q.shape(), k.shape(), v.shape());
    if qs.1 != ks.1 || ks != vs {
        return Err(NumError::AttentionShapes { q: qs, k: ks, v: vs });
    }
    let inv_sqrt = F::from_f64(1.0 / (qs.1 as f64).sqrt());
    let logits = q.matmul_nt(k)?.scale(inv_sqrt);
    let weights = logits.softmax_rows();
    let out = weights.matmul(v)?;
    Ok((out, weights))
}

pub(crate) fn sigmoid_scalar<F: Scalar>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

pub(crate) fn softmax_rows_value<F: Scalar>(m: &Matrix<F>) -> Matrix<F> {
    let mut out = Matrix::zeros(m.rows(), m.cols());
    for r in 0..m.rows() {
        let row = m.row_slice(r);
        let max = row.iter().cloned().fold(F::neg_infinity(), F::max);
        let mut sum = F::zero();
        let mut exps = vec![F::zero(); row.len()];
        for (e, &x) in exps.iter_mut().zip(row) {
            *e = (x - max).exp();
            sum += *e;
        }
        for (c, e) in exps.into_iter().enumerate() {
            out.set(r, c, e / sum);
        }
    }
    out
}

fn accumulate<F: Scalar>(adj: &mut [Matrix<F>], id: usize, delta: &Matrix<F>) {
    let dst = &mut adj[id];
    debug_assert_eq!(dst.shape(), delta.shape());
    for (d, &x) in dst.data_mut().iter_mut().zip(delta.data()) {
        *d += x;
    }
}

/// Maximum relative disagreement between analytic and central-difference
/// gradients for a loss built by `build` over `params`.
///
/// Runs in double precision only. For each parameter entry the relative
/// error is `|analytic - numeric| / max(1e-8, |analytic| + |numeric|)`.
pub fn grad_check<B>(params: &[Matrix<f64>], eps: f64, build: B) -> Result<f64, NumError>
where
    B: for<'t> Fn(&'t Tape<f64>, &[Var<'t, f64>]) -> Result<Var<'t, f64>, NumError>,
{
    if !(1e-6..=1e-4).contains(&eps) {
        return Err(NumError::EpsOutOfRange { eps });
    }

    let eval = |ps: &[Matrix<f64>]| -> Result<f64, NumError> {
        let tape = Tape::new();
        let vars: Vec<Var<'_, f64>> = ps.iter().map(|p| tape.param(p.clone())).collect();
        let loss = build(&tape, &vars)?;
        let v = loss.value();
        if v.shape() != (1, 1) {
            return Err(NumError::LossNotScalar { rows: v.rows(), cols: v.cols() });
        }
        let x = v.get(0, 0);
        if !x.is_finite() {
            return Err(NumError::NonFiniteLoss);
        }
        Ok(x)
    };

    // Analytic gradients.
    let tape = Tape::new();
    let vars: Vec<Var<'_, f64>> = params.iter().map(|p| tape.param(p.clone())).collect();
    let loss = build(&tape, &vars)?;
    if !loss.value().get(0, 0).is_finite() {
        return Err(NumError::NonFiniteLoss);
    }
    tape.backward(loss)?;
    let analytic: Vec<Matrix<f64>> =
        vars.iter().map(|v| tape.grad(*v)).collect::<Result<_, _>>()?;

    let mut worst = 0.0f64;
    let mut work: Vec<Matrix<f64>> = params.to_vec();
    for (pi, param) in params.iter().enumerate() {
        for idx in 0..param.len() {
            let orig = param.data()[idx];
            work[pi].data_mut()[idx] = orig + eps;
            let plus = eval(&work)?;
            work[pi].data_mut()[idx] = orig - eps;
            let minus = eval(&work)?;
            work[pi].data_mut()[idx] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic[pi].data()[idx];
            let err = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8);
            if err > worst {
                worst = err;
            }
        }
    }
    Ok(worst)
}
