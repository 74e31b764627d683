//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! A [`Tape`] records every operation during the forward pass; calling
//! [`Var::backward`] on a scalar result walks the tape in reverse and
//! accumulates gradients into every [`Parameter`] leaf that was bound
//! with [`Tape::param`]. Tapes are single-threaded by construction
//! (`Rc` interior); independent tapes may live on different threads.
//!
//! Tape indices are already a topological order (operands are recorded
//! before results), so the backward pass is a single reverse sweep that
//! visits each node exactly once.

use std::cell::RefCell;
use std::rc::Rc;

use super::param::SharedParam;
use super::tensor::{self, cholesky_jittered, Tensor};
use crate::Result;

const SQRT3: f64 = 1.732_050_807_568_877_2;

enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Neg(usize),
    Scale(usize, f64),
    AddScalar(usize),
    MatMul(usize, usize),
    Transpose(usize),
    /// matrix + column vector broadcast over columns
    AddCol(usize, usize),
    /// rows of the first stacked above rows of the second
    VCat(usize, usize),
    Relu(usize),
    Tanh(usize),
    Exp(usize),
    Ln(usize),
    Softplus(usize),
    Sqrt(usize),
    Sum(usize),
    Mean(usize),
    ColSum(usize),
    Row(usize, usize),
    MinElem(usize, usize),
    Clamp(usize, f64, f64),
    /// tensor * scalar variable, broadcast
    MulScalar(usize, usize),
    /// matrix + scalar variable on the diagonal
    AddDiagScalar(usize, usize),
    /// Matérn-3/2 covariance of a fixed distance matrix w.r.t. scalar
    /// magnitude and length-scale variables
    Matern32Cov {
        dist: Tensor,
        gamma2: usize,
        ell: usize,
    },
    /// x = (a + jitter*I)^{-1} b via Cholesky; factor cached for backward
    CholSolve {
        a: usize,
        b: usize,
        factor: Tensor,
    },
}

struct Node {
    value: Tensor,
    op: Op,
}

struct TapeInner {
    nodes: Vec<Node>,
    params: Vec<(usize, SharedParam)>,
}

/// Recording tape for one forward/backward pass.
#[derive(Clone)]
pub struct Tape {
    inner: Rc<RefCell<TapeInner>>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            inner: Rc::new(RefCell::new(TapeInner {
                nodes: Vec::new(),
                params: Vec::new(),
            })),
        }
    }

    fn push(&self, value: Tensor, op: Op) -> Var {
        let mut inner = self.inner.borrow_mut();
        let idx = inner.nodes.len();
        inner.nodes.push(Node { value, op });
        Var {
            tape: self.clone(),
            idx,
        }
    }

    /// Constant input; gradients are not collected for it.
    pub fn constant(&self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn scalar(&self, v: f64) -> Var {
        self.constant(Tensor::scalar(v))
    }

    /// Binds a parameter as a leaf; `backward` accumulates into its grad.
    pub fn param(&self, p: &SharedParam) -> Var {
        let value = p.borrow().value.clone();
        let var = self.push(value, Op::Leaf);
        self.inner.borrow_mut().params.push((var.idx, p.clone()));
        var
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Handle to one tape node.
#[derive(Clone)]
pub struct Var {
    tape: Tape,
    idx: usize,
}

impl Var {
    pub fn value(&self) -> Tensor {
        self.tape.inner.borrow().nodes[self.idx].value.clone()
    }

    pub fn item(&self) -> f64 {
        self.tape.inner.borrow().nodes[self.idx].value.item()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.tape.inner.borrow().nodes[self.idx].value.shape()
    }

    fn unary(&self, value: Tensor, op: Op) -> Var {
        self.tape.push(value, op)
    }

    fn with<R>(&self, f: impl FnOnce(&Tensor) -> R) -> R {
        f(&self.tape.inner.borrow().nodes[self.idx].value)
    }

    fn with2<R>(&self, other: &Var, f: impl FnOnce(&Tensor, &Tensor) -> R) -> R {
        debug_assert!(Rc::ptr_eq(&self.tape.inner, &other.tape.inner), "vars from different tapes");
        let inner = self.tape.inner.borrow();
        f(&inner.nodes[self.idx].value, &inner.nodes[other.idx].value)
    }

    pub fn add(&self, other: &Var) -> Var {
        let v = self.with2(other, |a, b| a.add(b));
        self.unary(v, Op::Add(self.idx, other.idx))
    }

    pub fn sub(&self, other: &Var) -> Var {
        let v = self.with2(other, |a, b| a.sub(b));
        self.unary(v, Op::Sub(self.idx, other.idx))
    }

    pub fn mul(&self, other: &Var) -> Var {
        let v = self.with2(other, |a, b| a.mul(b));
        self.unary(v, Op::Mul(self.idx, other.idx))
    }

    pub fn div(&self, other: &Var) -> Var {
        let v = self.with2(other, |a, b| a.zip(b, |x, y| x / y));
        self.unary(v, Op::Div(self.idx, other.idx))
    }

    pub fn neg(&self) -> Var {
        let v = self.with(|a| a.scale(-1.0));
        self.unary(v, Op::Neg(self.idx))
    }

    pub fn scale(&self, c: f64) -> Var {
        let v = self.with(|a| a.scale(c));
        self.unary(v, Op::Scale(self.idx, c))
    }

    pub fn add_scalar(&self, c: f64) -> Var {
        let v = self.with(|a| a.map(|x| x + c));
        self.unary(v, Op::AddScalar(self.idx))
    }

    pub fn matmul(&self, other: &Var) -> Var {
        let v = self.with2(other, |a, b| a.matmul(b));
        self.unary(v, Op::MatMul(self.idx, other.idx))
    }

    pub fn t(&self) -> Var {
        let v = self.with(|a| a.transpose());
        self.unary(v, Op::Transpose(self.idx))
    }

    pub fn add_col(&self, col: &Var) -> Var {
        let v = self.with2(col, |a, b| a.add_col_broadcast(b));
        self.unary(v, Op::AddCol(self.idx, col.idx))
    }

    pub fn vcat(&self, below: &Var) -> Var {
        let v = self.with2(below, |a, b| a.vcat(b));
        self.unary(v, Op::VCat(self.idx, below.idx))
    }

    pub fn relu(&self) -> Var {
        let v = self.with(|a| a.map(|x| x.max(0.0)));
        self.unary(v, Op::Relu(self.idx))
    }

    pub fn tanh(&self) -> Var {
        let v = self.with(|a| a.map(f64::tanh));
        self.unary(v, Op::Tanh(self.idx))
    }

    pub fn exp(&self) -> Var {
        let v = self.with(|a| a.map(f64::exp));
        self.unary(v, Op::Exp(self.idx))
    }

    pub fn ln(&self) -> Var {
        let v = self.with(|a| a.map(f64::ln));
        self.unary(v, Op::Ln(self.idx))
    }

    pub fn softplus(&self) -> Var {
        let v = self.with(|a| a.map(tensor::softplus));
        self.unary(v, Op::Softplus(self.idx))
    }

    pub fn sqrt(&self) -> Var {
        let v = self.with(|a| a.map(f64::sqrt));
        self.unary(v, Op::Sqrt(self.idx))
    }

    pub fn sum(&self) -> Var {
        let v = Tensor::scalar(self.with(|a| a.sum()));
        self.unary(v, Op::Sum(self.idx))
    }

    pub fn mean(&self) -> Var {
        let v = Tensor::scalar(self.with(|a| a.sum() / a.len() as f64));
        self.unary(v, Op::Mean(self.idx))
    }

    pub fn col_sum(&self) -> Var {
        let v = self.with(|a| a.col_sum());
        self.unary(v, Op::ColSum(self.idx))
    }

    pub fn row(&self, i: usize) -> Var {
        let v = self.with(|a| a.row(i));
        self.unary(v, Op::Row(self.idx, i))
    }

    /// Elementwise minimum; ties route the gradient to `self`.
    pub fn min_elem(&self, other: &Var) -> Var {
        let v = self.with2(other, |a, b| a.zip(b, f64::min));
        self.unary(v, Op::MinElem(self.idx, other.idx))
    }

    pub fn clamp(&self, lo: f64, hi: f64) -> Var {
        let v = self.with(|a| a.map(|x| x.clamp(lo, hi)));
        self.unary(v, Op::Clamp(self.idx, lo, hi))
    }

    /// Broadcast multiply by a `(1,1)` variable.
    pub fn mul_scalar(&self, s: &Var) -> Var {
        let sv = s.with(Tensor::item);
        let v = self.with(|a| a.scale(sv));
        self.unary(v, Op::MulScalar(self.idx, s.idx))
    }

    /// `self + s*I` for a square matrix and a `(1,1)` variable.
    pub fn add_diag_scalar(&self, s: &Var) -> Var {
        let sv = s.with(Tensor::item);
        let v = self.with(|a| {
            let mut out = a.clone();
            for i in 0..out.rows() {
                let d = out.get(i, i);
                out.set(i, i, d + sv);
            }
            out
        });
        self.unary(v, Op::AddDiagScalar(self.idx, s.idx))
    }

    /// Squared L2 norm of all entries, as a scalar.
    pub fn sum_squares(&self) -> Var {
        self.mul(self).sum()
    }

    /// L2 norm; the backward pass guards the derivative at zero.
    pub fn l2_norm(&self) -> Var {
        self.sum_squares().sqrt()
    }

    /// Computes the gradient of this scalar w.r.t. every bound parameter,
    /// accumulating into `Parameter::grad`. Panics on a non-scalar root.
    pub fn backward(&self) {
        let inner = self.tape.inner.borrow();
        assert!(
            inner.nodes[self.idx].value.is_scalar(),
            "backward on non-scalar root {}x{}",
            inner.nodes[self.idx].value.rows(),
            inner.nodes[self.idx].value.cols()
        );
        let n = inner.nodes.len();
        let mut grads: Vec<Option<Tensor>> = (0..n).map(|_| None).collect();
        grads[self.idx] = Some(Tensor::scalar(1.0));

        for idx in (0..=self.idx).rev() {
            let g = match grads[idx].take() {
                Some(g) => g,
                None => continue,
            };
            let node = &inner.nodes[idx];
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                    continue;
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, &g, &inner);
                    accumulate(&mut grads, *b, &g, &inner);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *a, &g, &inner);
                    accumulate_scaled(&mut grads, *b, &g, -1.0, &inner);
                }
                Op::Mul(a, b) => {
                    let ga = g.mul(&inner.nodes[*b].value);
                    let gb = g.mul(&inner.nodes[*a].value);
                    accumulate(&mut grads, *a, &ga, &inner);
                    accumulate(&mut grads, *b, &gb, &inner);
                }
                Op::Div(a, b) => {
                    let vb = &inner.nodes[*b].value;
                    let ga = g.zip(vb, |gi, bi| gi / bi);
                    let va = &inner.nodes[*a].value;
                    let gb = Tensor::from_fn(vb.rows(), vb.cols(), |i, j| {
                        -g.get(i, j) * va.get(i, j) / (vb.get(i, j) * vb.get(i, j))
                    });
                    accumulate(&mut grads, *a, &ga, &inner);
                    accumulate(&mut grads, *b, &gb, &inner);
                }
                Op::Neg(a) => accumulate_scaled(&mut grads, *a, &g, -1.0, &inner),
                Op::Scale(a, c) => accumulate_scaled(&mut grads, *a, &g, *c, &inner),
                Op::AddScalar(a) => accumulate(&mut grads, *a, &g, &inner),
                Op::MatMul(a, b) => {
                    let ga = g.matmul(&inner.nodes[*b].value.transpose());
                    let gb = inner.nodes[*a].value.transpose().matmul(&g);
                    accumulate(&mut grads, *a, &ga, &inner);
                    accumulate(&mut grads, *b, &gb, &inner);
                }
                Op::Transpose(a) => {
                    let ga = g.transpose();
                    accumulate(&mut grads, *a, &ga, &inner);
                }
                Op::AddCol(a, b) => {
                    accumulate(&mut grads, *a, &g, &inner);
                    let gb = g.row_sum();
                    accumulate(&mut grads, *b, &gb, &inner);
                }
                Op::VCat(a, b) => {
                    let top_rows = inner.nodes[*a].value.rows();
                    let ga = g.row_range(0, top_rows);
                    let gb = g.row_range(top_rows, g.rows());
                    accumulate(&mut grads, *a, &ga, &inner);
                    accumulate(&mut grads, *b, &gb, &inner);
                }
                Op::Relu(a) => {
                    let va = &inner.nodes[*a].value;
                    let ga = g.zip(va, |gi, x| if x > 0.0 { gi } else { 0.0 });
                    accumulate(&mut grads, *a, &ga, &inner);
                }
                Op::Tanh(a) => {
                    let ga = g.zip(&node.value, |gi, y| gi * (1.0 - y * y));
                    accumulate(&mut grads, *a, &ga, &inner);
                }
                Op::Exp(a) => {
                    let ga = g.mul(&node.value);
                    accumulate(&mut grads, *a, &ga, &inner);
                }
                Op::Ln(a) => {
                    let va = &inner.nodes[*a].value;
                    let ga = g.zip(va, |gi, x| gi / x);
                    accumulate(&mut grads, *a, &ga, &inner);
                }
                Op::Softplus(a) => {
                    let va = &inner.nodes[*a].value;
                    let ga = g.zip(va, |gi, x| gi * tensor::sigmoid(x));
                    accumulate(&mut grads, *a, &ga, &inner);
                }
                Op::Sqrt(a) => {
                    // derivative guard keeps norms of coincident points finite
                    let ga = g.zip(&node.value, |gi, y| gi / (2.0 * y.max(1e-12)));
                    accumulate(&mut grads, *a, &ga, &inner);
                }
                Op::Sum(a) => {
                    let va = &inner.nodes[*a].value;
                    let ga = Tensor::from_fn(va.rows(), va.cols(), |_, _| g.item());
                    accumulate(&mut grads, *a, &ga, &inner);
                }
                Op::Mean(a) => {
                    let va = &inner.nodes[*a].value;
                    let c = g.item() / va.len() as f64;
                    let ga = Tensor::from_fn(va.rows(), va.cols(), |_, _| c);
                    accumulate(&mut grads, *a, &ga, &inner);
                }
                Op::ColSum(a) => {
                    let va = &inner.nodes[*a].value;
                    let ga = Tensor::from_fn(va.rows(), va.cols(), |_, j| g.get(0, j));
                    accumulate(&mut grads, *a, &ga, &inner);
                }
                Op::Row(a, i) => {
                    let va = &inner.nodes[*a].value;
                    let mut ga = Tensor::zeros(va.rows(), va.cols());
                    for j in 0..va.cols() {
                        ga.set(*i, j, g.get(0, j));
                    }
                    accumulate(&mut grads, *a, &ga, &inner);
                }
                Op::MinElem(a, b) => {
                    let va = &inner.nodes[*a].value;
                    let vb = &inner.nodes[*b].value;
                    let ga = Tensor::from_fn(va.rows(), va.cols(), |i, j| {
                        if va.get(i, j) <= vb.get(i, j) { g.get(i, j) } else { 0.0 }
                    });
                    let gb = Tensor::from_fn(va.rows(), va.cols(), |i, j| {
                        if vb.get(i, j) < va.get(i, j) { g.get(i, j) } else { 0.0 }
                    });
                    accumulate(&mut grads, *a, &ga, &inner);
                    accumulate(&mut grads, *b, &gb, &inner);
                }
                Op::Clamp(a, lo, hi) => {
                    let va = &inner.nodes[*a].value;
                    let ga = g.zip(va, |gi, x| if x > *lo && x < *hi { gi } else { 0.0 });
                    accumulate(&mut grads, *a, &ga, &inner);
                }
                Op::MulScalar(a, s) => {
                    let sv = inner.nodes[*s].value.item();
                    let ga = g.scale(sv);
                    let gs = Tensor::scalar(g.dot(&inner.nodes[*a].value));
                    accumulate(&mut grads, *a, &ga, &inner);
                    accumulate(&mut grads, *s, &gs, &inner);
                }
                Op::AddDiagScalar(a, s) => {
                    accumulate(&mut grads, *a, &g, &inner);
                    let gs = Tensor::scalar(g.trace());
                    accumulate(&mut grads, *s, &gs, &inner);
                }
                Op::Matern32Cov { dist, gamma2, ell } => {
                    let g2 = inner.nodes[*gamma2].value.item();
                    let l = inner.nodes[*ell].value.item();
                    let mut dg2 = 0.0;
                    let mut dl = 0.0;
                    for i in 0..dist.rows() {
                        for j in 0..dist.cols() {
                            let u = SQRT3 * dist.get(i, j) / l;
                            let e = (-u).exp();
                            let gij = g.get(i, j);
                            dg2 += gij * (1.0 + u) * e;
                            dl += gij * g2 * u * u * e / l;
                        }
                    }
                    accumulate(&mut grads, *gamma2, &Tensor::scalar(dg2), &inner);
                    accumulate(&mut grads, *ell, &Tensor::scalar(dl), &inner);
                }
                Op::CholSolve { a, b, factor } => {
                    // X = A^{-1} B with symmetric A:
                    //   grad B = A^{-1} grad X, grad A = -(grad B) X^T
                    let gb = tensor::chol_solve(factor, &g);
                    let ga = gb.matmul(&node.value.transpose()).scale(-1.0);
                    accumulate(&mut grads, *a, &ga, &inner);
                    accumulate(&mut grads, *b, &gb, &inner);
                }
            }
        }

        for (idx, p) in &inner.params {
            if let Some(g) = &grads[*idx] {
                p.borrow_mut().grad.add_assign(g);
            }
        }
    }
}

fn accumulate(grads: &mut [Option<Tensor>], idx: usize, g: &Tensor, inner: &TapeInner) {
    debug_assert_eq!(g.shape(), inner.nodes[idx].value.shape());
    match &mut grads[idx] {
        Some(acc) => acc.add_assign(g),
        slot => *slot = Some(g.clone()),
    }
}

fn accumulate_scaled(grads: &mut [Option<Tensor>], idx: usize, g: &Tensor, c: f64, inner: &TapeInner) {
    debug_assert_eq!(g.shape(), inner.nodes[idx].value.shape());
    match &mut grads[idx] {
        Some(acc) => acc.axpy(c, g),
        slot => *slot = Some(g.scale(c)),
    }
}

/// Matérn-3/2 covariance matrix of a fixed distance matrix, differentiable
/// w.r.t. the scalar magnitude `gamma2` and length-scale `ell` variables.
pub fn matern32_cov(tape: &Tape, dist: Tensor, gamma2: &Var, ell: &Var) -> Var {
    let g2 = gamma2.item();
    let l = ell.item();
    let value = dist.map(|d| {
        let u = SQRT3 * d / l;
        g2 * (1.0 + u) * (-u).exp()
    });
    tape.push(
        value,
        Op::Matern32Cov {
            dist,
            gamma2: gamma2.idx,
            ell: ell.idx,
        },
    )
}

/// `x = (a + jitter*I)^{-1} b` with the jitter escalated per
/// [`tensor::JITTER_SCHEDULE`]; errors if no level factorizes.
pub fn chol_solve(a: &Var, b: &Var) -> Result<Var> {
    let (factor, x) = a.with2(b, |av, bv| -> Result<(Tensor, Tensor)> {
        let (l, _) = cholesky_jittered(av)?;
        Ok((l.clone(), tensor::chol_solve(&l, bv)))
    })?;
    Ok(a.tape.push(
        x,
        Op::CholSolve {
            a: a.idx,
            b: b.idx,
            factor,
        },
    ))
}

impl std::ops::Add for &Var {
    type Output = Var;
    fn add(self, rhs: &Var) -> Var {
        Var::add(self, rhs)
    }
}

impl std::ops::Sub for &Var {
    type Output = Var;
    fn sub(self, rhs: &Var) -> Var {
        Var::sub(self, rhs)
    }
}

impl std::ops::Mul for &Var {
    type Output = Var;
    fn mul(self, rhs: &Var) -> Var {
        Var::mul(self, rhs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::param::Parameter;

    #[test]
    fn square_value_and_grad() {
        let tape = Tape::new();
        let p = Parameter::shared("x", Tensor::scalar(3.0));
        let x = tape.param(&p);
        let y = x.mul(&x);
        assert_eq!(y.item(), 9.0);
        y.backward();
        assert_eq!(p.borrow().grad.item(), 6.0);
    }

    #[test]
    fn softplus_at_zero() {
        let tape = Tape::new();
        let p = Parameter::shared("t", Tensor::scalar(0.0));
        let t = tape.param(&p);
        let y = t.softplus();
        assert!((y.item() - std::f64::consts::LN_2).abs() < 1e-12);
        y.backward();
        assert!((p.borrow().grad.item() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn norm_of_unit_vector() {
        let tape = Tape::new();
        let a = tape.constant(Tensor::col(&[1.0, 0.0]));
        let b = tape.constant(Tensor::col(&[0.0, 0.0]));
        let n = a.sub(&b).l2_norm();
        assert!((n.item() - 1.0).abs() < 1e-15);
    }

    #[test]
    #[should_panic(expected = "backward on non-scalar root")]
    fn backward_rejects_non_scalar() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::col(&[1.0, 2.0]));
        x.backward();
    }

    #[test]
    fn matmul_grad_matches_manual() {
        // f(W) = sum(W @ x) -> dW = 1 * x^T broadcast over rows
        let tape = Tape::new();
        let p = Parameter::shared("w", Tensor::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]));
        let w = tape.param(&p);
        let x = tape.constant(Tensor::col(&[5.0, 7.0]));
        let y = w.matmul(&x).sum();
        y.backward();
        assert_eq!(p.borrow().grad.data(), &[5.0, 7.0, 5.0, 7.0]);
    }

    #[test]
    fn backward_accumulates_repeated_parent() {
        let tape = Tape::new();
        let p = Parameter::shared("x", Tensor::scalar(2.0));
        let x = tape.param(&p);
        let y = x.add(&x).add(&x); // 3x
        y.backward();
        assert_eq!(p.borrow().grad.item(), 3.0);
    }

    #[test]
    fn grad_of_log1pexp_matches_finite_difference() {
        // d/da log(1+exp(a-b)) and d/db, vs central differences.
        let f = |a: f64, b: f64| tensor::softplus(a - b);
        let (a0, b0) = (0.37, -0.81);
        let tape = Tape::new();
        let pa = Parameter::shared("a", Tensor::scalar(a0));
        let pb = Parameter::shared("b", Tensor::scalar(b0));
        let a = tape.param(&pa);
        let b = tape.param(&pb);
        let y = a.sub(&b).softplus();
        y.backward();
        let h = 1e-5;
        let fd_a = (f(a0 + h, b0) - f(a0 - h, b0)) / (2.0 * h);
        let fd_b = (f(a0, b0 + h) - f(a0, b0 - h)) / (2.0 * h);
        assert!((pa.borrow().grad.item() - fd_a).abs() / fd_a.abs() < 1e-5);
        assert!((pb.borrow().grad.item() - fd_b).abs() / fd_b.abs() < 1e-5);
    }

    #[test]
    fn chol_solve_solves_and_differentiates() {
        // A = [[2,0],[0,4]], b = [2, 8] -> x = [1, 2]
        let tape = Tape::new();
        let pa = Parameter::shared("a", Tensor::from_vec(2, 2, vec![2.0, 0.0, 0.0, 4.0]));
        let a = tape.param(&pa);
        let b = tape.constant(Tensor::col(&[2.0, 8.0]));
        let x = chol_solve(&a, &b).unwrap();
        let xv = x.value();
        assert!((xv.get(0, 0) - 1.0).abs() < 1e-7);
        assert!((xv.get(1, 0) - 2.0).abs() < 1e-7);
        // x_i = b_i / A_ii, so d(sum x)/dA_ii = -b_i / A_ii²
        let s = x.sum();
        s.backward();
        let g = pa.borrow().grad.clone();
        assert!((g.get(0, 0) + 0.5).abs() < 1e-6);
        assert!((g.get(1, 1) + 0.5).abs() < 1e-6);
    }
}
