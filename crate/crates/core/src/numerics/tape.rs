//! Tape-based reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! A [`Tape`] records one forward pass; [`Tape::backward`] replays it in
//! reverse and accumulates gradients. Tapes are created per pass and carry no
//! state across passes. Every op scans its output for NaN/Inf and poisons the
//! tape on the first offence, which `backward` (or an explicit
//! [`Tape::check_finite`]) reports as a numeric error.

use super::scalar::Scalar;
use super::tensor::Tensor;
use crate::error::{Result, SsmError};
use std::cell::RefCell;
use std::rc::Rc;

pub struct Tape<T: Scalar> {
    inner: Rc<RefCell<TapeInner<T>>>,
}

impl<T: Scalar> Clone for Tape<T> {
    fn clone(&self) -> Self {
        Self {
            inner: Rc::clone(&self.inner),
        }
    }
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

struct TapeInner<T: Scalar> {
    nodes: Vec<Node<T>>,
    grads: Option<Vec<Tensor<T>>>,
    poison: Option<String>,
}

struct Node<T: Scalar> {
    value: Tensor<T>,
    op: Op<T>,
}

enum Op<T> {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Neg(usize),
    MatMul(usize, usize),
    Transpose(usize),
    Scale(usize, T),
    AddScalar(usize, T),
    ClampMin(usize, T),
    Ln(usize),
    Sigmoid(usize),
    Tanh(usize),
    SoftmaxRows(usize),
    LayerNormRows { x: usize, gain: usize, bias: usize, eps: T },
    MeanRows(usize),
    Sum(usize),
    Pick { x: usize, row: usize, col: usize },
    ConcatRows(Vec<usize>),
    ConcatCols(Vec<usize>),
    SliceRows { x: usize, start: usize },
    SliceCols { x: usize, start: usize },
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            inner: Rc::new(RefCell::new(TapeInner {
                nodes: Vec::new(),
                grads: None,
                poison: None,
            })),
        }
    }

    /// Registers a differentiable leaf (parameter or input).
    pub fn leaf(&self, value: Tensor<T>) -> Var<T> {
        self.push(value, Op::Leaf)
    }

    /// Registers a constant. Identical to a leaf; its gradient is simply
    /// never read.
    pub fn constant(&self, value: Tensor<T>) -> Var<T> {
        self.push(value, Op::Leaf)
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Errors if any recorded op produced a non-finite value.
    pub fn check_finite(&self) -> Result<()> {
        match &self.inner.borrow().poison {
            Some(op) => Err(SsmError::Numeric(format!(
                "non-finite value produced by {op}"
            ))),
            None => Ok(()),
        }
    }

    fn push(&self, value: Tensor<T>, op: Op<T>) -> Var<T> {
        let mut inner = self.inner.borrow_mut();
        if inner.poison.is_none() && !value.is_finite() {
            inner.poison = Some(op_name(&op).to_string());
        }
        let idx = inner.nodes.len();
        inner.nodes.push(Node { value, op });
        Var {
            tape: self.clone(),
            idx,
        }
    }

    /// Backpropagates from a scalar output, filling per-node gradients.
    pub fn backward(&self, output: &Var<T>) -> Result<()> {
        self.check_finite()?;
        assert!(
            Rc::ptr_eq(&self.inner, &output.tape.inner),
            "output belongs to a different tape"
        );
        let mut inner = self.inner.borrow_mut();
        let n = inner.nodes.len();
        if inner.nodes[output.idx].value.numel() != 1 {
            return Err(SsmError::Argument(
                "backward requires a scalar output".into(),
            ));
        }
        let mut grads: Vec<Tensor<T>> = inner
            .nodes
            .iter()
            .map(|node| {
                let s = node.value.shape();
                Tensor::zeros(s[0], s[1])
            })
            .collect();
        grads[output.idx].data_mut()[0] = T::one();

        for idx in (0..n).rev() {
            let g = grads[idx].clone();
            if g.data().iter().all(|&v| v == T::zero()) {
                continue;
            }
            match &inner.nodes[idx].op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    accumulate(&mut grads[*a], &g);
                    accumulate(&mut grads[*b], &g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads[*a], &g);
                    accumulate_neg(&mut grads[*b], &g);
                }
                Op::Mul(a, b) => {
                    let da = g.mul(&inner.nodes[*b].value);
                    let db = g.mul(&inner.nodes[*a].value);
                    accumulate(&mut grads[*a], &da);
                    accumulate(&mut grads[*b], &db);
                }
                Op::Div(a, b) => {
                    let bv = &inner.nodes[*b].value;
                    let out = &inner.nodes[idx].value;
                    let da = g.div(bv);
                    let db = g.mul(out).div(bv).neg();
                    accumulate(&mut grads[*a], &da);
                    accumulate(&mut grads[*b], &db);
                }
                Op::Neg(a) => accumulate_neg(&mut grads[*a], &g),
                Op::MatMul(a, b) => {
                    let av = &inner.nodes[*a].value;
                    let bv = &inner.nodes[*b].value;
                    let da = g.matmul(&bv.transpose());
                    let db = av.transpose().matmul(&g);
                    accumulate(&mut grads[*a], &da);
                    accumulate(&mut grads[*b], &db);
                }
                Op::Transpose(a) => {
                    let da = g.transpose();
                    accumulate(&mut grads[*a], &da);
                }
                Op::Scale(a, c) => {
                    let da = g.scale(*c);
                    accumulate(&mut grads[*a], &da);
                }
                Op::AddScalar(a, _) => accumulate(&mut grads[*a], &g),
                Op::ClampMin(a, c) => {
                    let av = &inner.nodes[*a].value;
                    let da = g.zip_map(av, |gv, x| if x > *c { gv } else { T::zero() });
                    accumulate(&mut grads[*a], &da);
                }
                Op::Ln(a) => {
                    let da = g.div(&inner.nodes[*a].value);
                    accumulate(&mut grads[*a], &da);
                }
                Op::Sigmoid(a) => {
                    let out = &inner.nodes[idx].value;
                    let da = g.zip_map(out, |gv, s| gv * s * (T::one() - s));
                    accumulate(&mut grads[*a], &da);
                }
                Op::Tanh(a) => {
                    let out = &inner.nodes[idx].value;
                    let da = g.zip_map(out, |gv, t| gv * (T::one() - t * t));
                    accumulate(&mut grads[*a], &da);
                }
                Op::SoftmaxRows(a) => {
                    let p = &inner.nodes[idx].value;
                    let (m, d) = (p.rows(), p.cols());
                    let mut da = Tensor::zeros(m, d);
                    for i in 0..m {
                        let dot: T = (0..d).map(|j| g.at(i, j) * p.at(i, j)).sum();
                        for j in 0..d {
                            da.set(i, j, p.at(i, j) * (g.at(i, j) - dot));
                        }
                    }
                    accumulate(&mut grads[*a], &da);
                }
                Op::LayerNormRows { x, gain, bias, eps } => {
                    let xv = inner.nodes[*x].value.clone();
                    let gv = inner.nodes[*gain].value.clone();
                    let (m, d) = (xv.rows(), xv.cols());
                    let dn = T::of(d as f64);
                    let mut dx = Tensor::zeros(m, d);
                    let mut dgain = Tensor::zeros(1, d);
                    let mut dbias = Tensor::zeros(1, d);
                    for i in 0..m {
                        let mu: T = xv.row(i).iter().copied().sum::<T>() / dn;
                        let centered: Vec<T> = xv.row(i).iter().map(|&v| v - mu).collect();
                        let var: T = centered.iter().map(|&c| c * c).sum::<T>() / dn;
                        let s = (var + *eps).sqrt().recip();
                        let mut dv = T::zero();
                        let mut dmu = T::zero();
                        let mut dxhat = vec![T::zero(); d];
                        for j in 0..d {
                            let gy = g.at(i, j);
                            let xhat = centered[j] * s;
                            dgain.data_mut()[j] += gy * xhat;
                            dbias.data_mut()[j] += gy;
                            dxhat[j] = gy * gv.at(0, j);
                        }
                        for j in 0..d {
                            dv += dxhat[j] * centered[j];
                            dmu -= dxhat[j] * s;
                        }
                        dv = dv * T::of(-0.5) * s * s * s;
                        let sum_c: T = centered.iter().copied().sum();
                        dmu += dv * T::of(-2.0) * sum_c / dn;
                        for j in 0..d {
                            dx.set(
                                i,
                                j,
                                dxhat[j] * s + dv * T::of(2.0) * centered[j] / dn + dmu / dn,
                            );
                        }
                    }
                    accumulate(&mut grads[*x], &dx);
                    accumulate(&mut grads[*gain], &dgain);
                    accumulate(&mut grads[*bias], &dbias);
                }
                Op::MeanRows(a) => {
                    let av_shape = inner.nodes[*a].value.shape().to_vec();
                    let m = av_shape[0];
                    let d = av_shape[1];
                    let inv = T::of(1.0 / m as f64);
                    let mut da = Tensor::zeros(m, d);
                    for i in 0..m {
                        for j in 0..d {
                            da.set(i, j, g.at(0, j) * inv);
                        }
                    }
                    accumulate(&mut grads[*a], &da);
                }
                Op::Sum(a) => {
                    let gs = g.item();
                    let sh = inner.nodes[*a].value.shape().to_vec();
                    let da = Tensor::full(sh[0], sh[1], gs);
                    accumulate(&mut grads[*a], &da);
                }
                Op::Pick { x, row, col } => {
                    let gs = g.item();
                    let (row, col) = (*row, *col);
                    let x = *x;
                    let existing = grads[x].at(row, col);
                    grads[x].set(row, col, existing + gs);
                }
                Op::ConcatRows(parts) => {
                    let parts = parts.clone();
                    let mut start = 0;
                    for p in parts {
                        let r = grads[p].rows();
                        let d = grads[p].cols();
                        let mut dp = Tensor::zeros(r, d);
                        for i in 0..r {
                            for j in 0..d {
                                dp.set(i, j, g.at(start + i, j));
                            }
                        }
                        accumulate(&mut grads[p], &dp);
                        start += r;
                    }
                }
                Op::ConcatCols(parts) => {
                    let parts = parts.clone();
                    let mut start = 0;
                    for p in parts {
                        let r = grads[p].rows();
                        let c = grads[p].cols();
                        let mut dp = Tensor::zeros(r, c);
                        for i in 0..r {
                            for j in 0..c {
                                dp.set(i, j, g.at(i, start + j));
                            }
                        }
                        accumulate(&mut grads[p], &dp);
                        start += c;
                    }
                }
                Op::SliceRows { x, start } => {
                    let (x, start) = (*x, *start);
                    let (r, d) = (g.rows(), g.cols());
                    let mut da = Tensor::zeros(grads[x].rows(), grads[x].cols());
                    for i in 0..r {
                        for j in 0..d {
                            da.set(start + i, j, g.at(i, j));
                        }
                    }
                    accumulate(&mut grads[x], &da);
                }
                Op::SliceCols { x, start } => {
                    let (x, start) = (*x, *start);
                    let (r, c) = (g.rows(), g.cols());
                    let mut da = Tensor::zeros(grads[x].rows(), grads[x].cols());
                    for i in 0..r {
                        for j in 0..c {
                            da.set(i, start + j, g.at(i, j));
                        }
                    }
                    accumulate(&mut grads[x], &da);
                }
            }
        }
        inner.grads = Some(grads);
        Ok(())
    }
}

fn accumulate<T: Scalar>(dst: &mut Tensor<T>, src: &Tensor<T>) {
    debug_assert_eq!(dst.shape(), src.shape());
    for (d, s) in dst.data_mut().iter_mut().zip(src.data()) {
        *d += *s;
    }
}

fn accumulate_neg<T: Scalar>(dst: &mut Tensor<T>, src: &Tensor<T>) {
    debug_assert_eq!(dst.shape(), src.shape());
    for (d, s) in dst.data_mut().iter_mut().zip(src.data()) {
        *d -= *s;
    }
}

fn op_name<T>(op: &Op<T>) -> &'static str {
    match op {
        Op::Leaf => "leaf",
        Op::Add(..) => "add",
        Op::Sub(..) => "sub",
        Op::Mul(..) => "mul",
        Op::Div(..) => "div",
        Op::Neg(..) => "neg",
        Op::MatMul(..) => "matmul",
        Op::Transpose(..) => "transpose",
        Op::Scale(..) => "scale",
        Op::AddScalar(..) => "add_scalar",
        Op::ClampMin(..) => "clamp_min",
        Op::Ln(..) => "ln",
        Op::Sigmoid(..) => "sigmoid",
        Op::Tanh(..) => "tanh",
        Op::SoftmaxRows(..) => "softmax_rows",
        Op::LayerNormRows { .. } => "layer_norm_rows",
        Op::MeanRows(..) => "mean_rows",
        Op::Sum(..) => "sum",
        Op::Pick { .. } => "pick",
        Op::ConcatRows(..) => "concat_rows",
        Op::ConcatCols(..) => "concat_cols",
        Op::SliceRows { .. } => "slice_rows",
        Op::SliceCols { .. } => "slice_cols",
    }
}

/// A handle to one node on a [`Tape`].
pub struct Var<T: Scalar> {
    tape: Tape<T>,
    idx: usize,
}

impl<T: Scalar> Clone for Var<T> {
    fn clone(&self) -> Self {
        Self {
            tape: self.tape.clone(),
            idx: self.idx,
        }
    }
}

impl<T: Scalar> Var<T> {
    pub fn value(&self) -> Tensor<T> {
        self.tape.inner.borrow().nodes[self.idx].value.clone()
    }

    pub fn tape(&self) -> Tape<T> {
        self.tape.clone()
    }

    /// Reads the value without cloning.
    pub fn with_value<R>(&self, f: impl FnOnce(&Tensor<T>) -> R) -> R {
        f(&self.tape.inner.borrow().nodes[self.idx].value)
    }

    pub fn dims(&self) -> (usize, usize) {
        self.with_value(|t| (t.rows(), t.cols()))
    }

    /// Gradient of the last `backward` output w.r.t. this node.
    pub fn grad(&self) -> Result<Tensor<T>> {
        let inner = self.tape.inner.borrow();
        match &inner.grads {
            Some(grads) => Ok(grads[self.idx].clone()),
            None => Err(SsmError::State("backward has not been run".into())),
        }
    }

    fn same_tape(&self, other: &Self) {
        assert!(
            Rc::ptr_eq(&self.tape.inner, &other.tape.inner),
            "vars belong to different tapes"
        );
    }

    fn unary(&self, op: Op<T>, value: Tensor<T>) -> Self {
        self.tape.push(value, op)
    }

    pub fn add(&self, other: &Self) -> Self {
        self.same_tape(other);
        let v = self.with_value(|a| other.with_value(|b| a.add(b)));
        self.tape.push(v, Op::Add(self.idx, other.idx))
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.same_tape(other);
        let v = self.with_value(|a| other.with_value(|b| a.sub(b)));
        self.tape.push(v, Op::Sub(self.idx, other.idx))
    }

    pub fn mul(&self, other: &Self) -> Self {
        self.same_tape(other);
        let v = self.with_value(|a| other.with_value(|b| a.mul(b)));
        self.tape.push(v, Op::Mul(self.idx, other.idx))
    }

    pub fn div(&self, other: &Self) -> Self {
        self.same_tape(other);
        let v = self.with_value(|a| other.with_value(|b| a.div(b)));
        self.tape.push(v, Op::Div(self.idx, other.idx))
    }

    pub fn neg(&self) -> Self {
        let v = self.with_value(|a| a.neg());
        self.unary(Op::Neg(self.idx), v)
    }

    pub fn matmul(&self, other: &Self) -> Self {
        self.same_tape(other);
        let v = self.with_value(|a| other.with_value(|b| a.matmul(b)));
        self.tape.push(v, Op::MatMul(self.idx, other.idx))
    }

    pub fn t(&self) -> Self {
        let v = self.with_value(|a| a.transpose());
        self.unary(Op::Transpose(self.idx), v)
    }

    pub fn scale(&self, c: T) -> Self {
        let v = self.with_value(|a| a.scale(c));
        self.unary(Op::Scale(self.idx, c), v)
    }

    pub fn add_scalar(&self, c: T) -> Self {
        let v = self.with_value(|a| a.map(|x| x + c));
        self.unary(Op::AddScalar(self.idx, c), v)
    }

    /// Elementwise `max(x, c)`. Gradient passes only where `x > c`.
    pub fn clamp_min(&self, c: T) -> Self {
        let v = self.with_value(|a| a.map(|x| x.max(c)));
        self.unary(Op::ClampMin(self.idx, c), v)
    }

    pub fn ln(&self) -> Self {
        let v = self.with_value(|a| a.map(|x| x.ln()));
        self.unary(Op::Ln(self.idx), v)
    }

    pub fn sigmoid(&self) -> Self {
        let v = self.with_value(|a| a.map(stable_sigmoid));
        self.unary(Op::Sigmoid(self.idx), v)
    }

    pub fn tanh(&self) -> Self {
        let v = self.with_value(|a| a.map(|x| x.tanh()));
        self.unary(Op::Tanh(self.idx), v)
    }

    /// Row-wise softmax with max-subtraction stabilization.
    pub fn softmax_rows(&self) -> Self {
        let v = self.with_value(softmax_rows_tensor);
        self.unary(Op::SoftmaxRows(self.idx), v)
    }

    /// Per-row normalization over features, with learnable gain and bias.
    pub fn layer_norm_rows(&self, gain: &Self, bias: &Self, eps: T) -> Self {
        self.same_tape(gain);
        self.same_tape(bias);
        let v = self.with_value(|x| {
            gain.with_value(|g| {
                bias.with_value(|b| {
                    let (m, d) = (x.rows(), x.cols());
                    assert_eq!(g.cols(), d, "layer norm gain width");
                    assert_eq!(b.cols(), d, "layer norm bias width");
                    let dn = T::of(d as f64);
                    let mut out = Tensor::zeros(m, d);
                    for i in 0..m {
                        let mu: T = x.row(i).iter().copied().sum::<T>() / dn;
                        let var: T =
                            x.row(i).iter().map(|&v| (v - mu) * (v - mu)).sum::<T>() / dn;
                        let s = (var + eps).sqrt().recip();
                        for j in 0..d {
                            out.set(i, j, g.at(0, j) * (x.at(i, j) - mu) * s + b.at(0, j));
                        }
                    }
                    out
                })
            })
        });
        self.tape.push(
            v,
            Op::LayerNormRows {
                x: self.idx,
                gain: gain.idx,
                bias: bias.idx,
                eps,
            },
        )
    }

    /// Mean over rows: `m×d → 1×d`.
    pub fn mean_rows(&self) -> Self {
        let v = self.with_value(|a| {
            let (m, d) = (a.rows(), a.cols());
            let inv = T::of(1.0 / m as f64);
            let mut out = Tensor::zeros(1, d);
            for i in 0..m {
                for j in 0..d {
                    out.data_mut()[j] += a.at(i, j) * inv;
                }
            }
            out
        });
        self.unary(Op::MeanRows(self.idx), v)
    }

    /// Full sum to a `1×1` scalar.
    pub fn sum(&self) -> Self {
        let v = self.with_value(|a| Tensor::scalar(a.sum()));
        self.unary(Op::Sum(self.idx), v)
    }

    /// Extracts one element as a `1×1` scalar.
    pub fn pick(&self, row: usize, col: usize) -> Self {
        let v = self.with_value(|a| Tensor::scalar(a.at(row, col)));
        self.unary(
            Op::Pick {
                x: self.idx,
                row,
                col,
            },
            v,
        )
    }

    /// Stops gradient flow: returns a leaf holding the same value.
    pub fn detach(&self) -> Self {
        self.tape.leaf(self.value())
    }

    pub fn concat_rows(parts: &[Self]) -> Self {
        assert!(!parts.is_empty(), "concat of nothing");
        let tape = parts[0].tape.clone();
        for p in parts {
            parts[0].same_tape(p);
        }
        let cols = parts[0].with_value(|t| t.cols());
        let mut rows = 0;
        let mut data = Vec::new();
        for p in parts {
            p.with_value(|t| {
                assert_eq!(t.cols(), cols, "concat_rows width mismatch");
                rows += t.rows();
                data.extend_from_slice(t.data());
            });
        }
        tape.push(
            Tensor::from_parts(vec![rows, cols], data),
            Op::ConcatRows(parts.iter().map(|p| p.idx).collect()),
        )
    }

    pub fn concat_cols(parts: &[Self]) -> Self {
        assert!(!parts.is_empty(), "concat of nothing");
        let tape = parts[0].tape.clone();
        for p in parts {
            parts[0].same_tape(p);
        }
        let rows = parts[0].with_value(|t| t.rows());
        let total: usize = parts.iter().map(|p| p.with_value(|t| t.cols())).sum();
        let mut data = Vec::with_capacity(rows * total);
        for i in 0..rows {
            for p in parts {
                p.with_value(|t| {
                    assert_eq!(t.rows(), rows, "concat_cols height mismatch");
                    data.extend_from_slice(t.row(i));
                });
            }
        }
        tape.push(
            Tensor::from_parts(vec![rows, total], data),
            Op::ConcatCols(parts.iter().map(|p| p.idx).collect()),
        )
    }

    pub fn slice_rows(&self, start: usize, len: usize) -> Self {
        let v = self.with_value(|a| {
            let d = a.cols();
            let mut data = Vec::with_capacity(len * d);
            for i in start..start + len {
                data.extend_from_slice(a.row(i));
            }
            Tensor::from_parts(vec![len, d], data)
        });
        self.unary(
            Op::SliceRows {
                x: self.idx,
                start,
            },
            v,
        )
    }

    pub fn slice_cols(&self, start: usize, len: usize) -> Self {
        let v = self.with_value(|a| {
            let r = a.rows();
            let mut data = Vec::with_capacity(r * len);
            for i in 0..r {
                data.extend_from_slice(&a.row(i)[start..start + len]);
            }
            Tensor::from_parts(vec![r, len], data)
        });
        self.unary(
            Op::SliceCols {
                x: self.idx,
                start,
            },
            v,
        )
    }
}

/// `x·wᵀ + b` with the row bias broadcast over all rows of `x`.
pub fn affine_rows<T: Scalar>(x: &Var<T>, w: &Var<T>, b: &Var<T>) -> Var<T> {
    let (n, _) = x.dims();
    let ones = x.tape().constant(Tensor::full(n, 1, T::one()));
    x.matmul(&w.t()).add(&ones.matmul(b))
}

fn stable_sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        (T::one() + (-x).exp()).recip()
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Row-wise softmax on plain tensors, shared by the tape op and value-only
/// callers.
pub(crate) fn softmax_rows_tensor<T: Scalar>(m: &Tensor<T>) -> Tensor<T> {
    let (rows, cols) = (m.rows(), m.cols());
    let mut out = Tensor::zeros(rows, cols);
    for i in 0..rows {
        let row = m.row(i);
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut denom = T::zero();
        for j in 0..cols {
            let e = (row[j] - max).exp();
            out.set(i, j, e);
            denom += e;
        }
        for j in 0..cols {
            let v = out.at(i, j) / denom;
            out.set(i, j, v);
        }
    }
    out
}
