//! Reverse-mode differentiation over dense matrices.
//!
//! A [`Tape`] records every primitive applied to [`Var`] handles. Nodes are
//! appended in evaluation order, so a reverse sweep over node ids is a valid
//! reverse topological order. Leaves created with [`Tape::constant`] and
//! everything downstream of [`Var::stop_gradient`] receive no gradient.

use std::cell::RefCell;
use std::rc::Rc;

use super::matrix::{Axis, Matrix};
use crate::error::{dim_err, domain_err, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReduceKind {
    Sum,
    Mean,
}

/// `All` reduces to 1x1, `Row` to one value per row (rows x 1), `Col` to
/// one value per column (1 x cols).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReduceAxis {
    All,
    Row,
    Col,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Neg(usize),
    Scale(usize, f64),
    AddScalar(usize),
    Exp(usize),
    Log(usize),
    Relu(usize),
    Square(usize),
    Sqrt(usize),
    MatMul(usize, usize),
    Transpose(usize),
    /// Input, axis and the forward softmax probabilities.
    LogSoftmax(usize, Axis, Rc<Matrix>),
    StopGradient,
    Reduce(usize, ReduceKind, ReduceAxis),
    Gather(usize, Rc<[usize]>),
}

struct Node {
    value: Rc<Matrix>,
    op: Op,
    requires_grad: bool,
}

/// Single-use record of a forward pass. Build a fresh tape per step.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("value", &self.value())
            .finish()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Leaf that participates in differentiation.
    pub fn param(&self, value: Matrix) -> Var<'_> {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf that never receives gradient.
    pub fn constant(&self, value: Matrix) -> Var<'_> {
        self.push(value, Op::Leaf, false)
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Matrix, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            op,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn value(&self, id: usize) -> Rc<Matrix> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    fn requires_grad(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    /// Gradients of `sum(output)` with respect to every parameter leaf.
    pub fn backward(&self, output: Var<'_>) -> Gradients {
        assert!(std::ptr::eq(output.tape, self), "var from another tape");
        let nodes = self.nodes.borrow();
        let mut grads: Vec<Option<Matrix>> = (0..nodes.len()).map(|_| None).collect();
        let out = &nodes[output.id];
        if out.requires_grad {
            let (r, c) = out.value.shape();
            grads[output.id] = Some(Matrix::ones(r, c));
        }

        for id in (0..=output.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                grads[id] = Some(g);
                continue;
            }
            let mut send = |target: usize, contribution: Matrix| {
                if !nodes[target].requires_grad {
                    return;
                }
                match &mut grads[target] {
                    Some(acc) => acc.add_assign(&contribution),
                    slot @ None => *slot = Some(contribution),
                }
            };
            let val = |i: usize| &*nodes[i].value;
            match &node.op {
                Op::Leaf | Op::StopGradient => {}
                Op::Add(a, b) => {
                    send(*a, unbroadcast(&g, val(*a)));
                    send(*b, unbroadcast(&g, val(*b)));
                }
                Op::Sub(a, b) => {
                    send(*a, unbroadcast(&g, val(*a)));
                    send(*b, unbroadcast(&g.scale(-1.0), val(*b)));
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (val(*a), val(*b));
                    if nodes[*a].requires_grad {
                        send(*a, unbroadcast(&broadcast_zip(&g, vb, |g, y| g * y), va));
                    }
                    if nodes[*b].requires_grad {
                        send(*b, unbroadcast(&broadcast_zip(&g, va, |g, x| g * x), vb));
                    }
                }
                Op::Div(a, b) => {
                    let (va, vb) = (val(*a), val(*b));
                    if nodes[*a].requires_grad {
                        send(*a, unbroadcast(&broadcast_zip(&g, vb, |g, y| g / y), va));
                    }
                    if nodes[*b].requires_grad {
                        // d(x/y)/dy = -(x/y)/y
                        let q = &node.value;
                        let t = broadcast_zip(&g, q, |g, q| g * q);
                        let t = broadcast_zip(&t, vb, |t, y| -t / y);
                        send(*b, unbroadcast(&t, vb));
                    }
                }
                Op::Neg(a) => send(*a, g.scale(-1.0)),
                Op::Scale(a, c) => send(*a, g.scale(*c)),
                Op::AddScalar(a) => send(*a, g),
                Op::Exp(a) => send(*a, g.hadamard(&node.value).expect("shape")),
                Op::Log(a) => send(*a, g.zip_map(val(*a), |g, x| g / x).expect("shape")),
                Op::Relu(a) => send(
                    *a,
                    g.zip_map(val(*a), |g, x| if x > 0.0 { g } else { 0.0 }).expect("shape"),
                ),
                Op::Square(a) => send(*a, g.zip_map(val(*a), |g, x| 2.0 * x * g).expect("shape")),
                Op::Sqrt(a) => send(*a, g.zip_map(&node.value, |g, y| 0.5 * g / y).expect("shape")),
                Op::MatMul(a, b) => {
                    let (va, vb) = (val(*a), val(*b));
                    if nodes[*a].requires_grad {
                        send(*a, g.matmul(&vb.transpose()).expect("shape"));
                    }
                    if nodes[*b].requires_grad {
                        send(*b, va.transpose().matmul(&g).expect("shape"));
                    }
                }
                Op::Transpose(a) => send(*a, g.transpose()),
                Op::LogSoftmax(a, axis, probs) => send(*a, log_softmax_backward(&g, probs, *axis)),
                Op::Reduce(a, kind, axis) => {
                    let (r, c) = val(*a).shape();
                    let denom = match (kind, axis) {
                        (ReduceKind::Sum, _) => 1.0,
                        (ReduceKind::Mean, ReduceAxis::All) => (r * c) as f64,
                        (ReduceKind::Mean, ReduceAxis::Row) => c as f64,
                        (ReduceKind::Mean, ReduceAxis::Col) => r as f64,
                    };
                    let spread = Matrix::from_fn(r, c, |i, j| {
                        let gi = match axis {
                            ReduceAxis::All => g.get(0, 0),
                            ReduceAxis::Row => g.get(i, 0),
                            ReduceAxis::Col => g.get(0, j),
                        };
                        gi / denom
                    });
                    send(*a, spread);
                }
                Op::Gather(a, idx) => {
                    let (r, c) = val(*a).shape();
                    let mut acc = Matrix::zeros(r, c);
                    let dst = acc.as_mut_slice();
                    for (&src, &gv) in idx.iter().zip(g.as_slice()) {
                        dst[src] += gv;
                    }
                    send(*a, acc);
                }
            }
        }
        Gradients { grads }
    }
}

/// Result of [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    pub fn get(&self, v: Var<'_>) -> Option<&Matrix> {
        self.grads.get(v.id).and_then(Option::as_ref)
    }

    /// Gradient for `v`, zeros when nothing flowed into it.
    pub fn wrt(&self, v: Var<'_>) -> Matrix {
        match self.get(v) {
            Some(g) => g.clone(),
            None => {
                let (r, c) = v.shape();
                Matrix::zeros(r, c)
            }
        }
    }
}

fn is_scalar(m: &Matrix) -> bool {
    m.shape() == (1, 1)
}

/// Elementwise combine with 1x1 broadcasting on either side.
fn broadcast_zip(a: &Matrix, b: &Matrix, f: impl Fn(f64, f64) -> f64) -> Matrix {
    if a.same_shape(b) {
        a.zip_map(b, f).expect("shape")
    } else if is_scalar(b) {
        let y = b.get(0, 0);
        a.map(|x| f(x, y))
    } else {
        let x = a.get(0, 0);
        b.map(|y| f(x, y))
    }
}

/// Sum a gradient back down to `target`'s shape (only 1x1 broadcast exists).
fn unbroadcast(g: &Matrix, target: &Matrix) -> Matrix {
    if g.same_shape(target) {
        g.clone()
    } else {
        Matrix::scalar(g.sum())
    }
}

fn log_softmax_backward(g: &Matrix, p: &Matrix, axis: Axis) -> Matrix {
    let r = p.rows();
    let mut out = g.clone();
    match axis {
        Axis::Row => {
            for i in 0..r {
                let gs: f64 = g.row(i).iter().sum();
                for (o, &pv) in out.row_mut(i).iter_mut().zip(p.row(i)) {
                    *o -= pv * gs;
                }
            }
        }
        Axis::Col => {
            let gs = g.col_sums();
            for i in 0..r {
                for ((o, &pv), &s) in out.row_mut(i).iter_mut().zip(p.row(i)).zip(&gs) {
                    *o -= pv * s;
                }
            }
        }
    }
    out
}

fn check_binary(op: &'static str, a: &Matrix, b: &Matrix) -> Result<()> {
    if a.same_shape(b) || is_scalar(a) || is_scalar(b) {
        Ok(())
    } else {
        Err(dim_err(op, format!("{:?} vs {:?}", a.shape(), b.shape())))
    }
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Rc<Matrix> {
        self.tape.value(self.id)
    }

    /// First stored value; intended for 1x1 results.
    pub fn item(&self) -> f64 {
        self.value().as_slice()[0]
    }

    pub fn shape(&self) -> (usize, usize) {
        self.value().shape()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.requires_grad(self.id)
    }

    fn same_tape(&self, other: &Var<'t>) {
        assert!(std::ptr::eq(self.tape, other.tape), "vars belong to different tapes");
    }

    fn unary(&self, value: Matrix, op: Op) -> Var<'t> {
        self.tape.push(value, op, self.requires_grad())
    }

    fn binary(&self, other: Var<'t>, value: Matrix, op: Op) -> Var<'t> {
        let rg = self.requires_grad() || other.requires_grad();
        self.tape.push(value, op, rg)
    }

    pub fn add(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&other);
        let (a, b) = (self.value(), other.value());
        check_binary("add", &a, &b)?;
        let v = broadcast_zip(&a, &b, |x, y| x + y);
        Ok(self.binary(other, v, Op::Add(self.id, other.id)))
    }

    pub fn sub(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&other);
        let (a, b) = (self.value(), other.value());
        check_binary("sub", &a, &b)?;
        let v = broadcast_zip(&a, &b, |x, y| x - y);
        Ok(self.binary(other, v, Op::Sub(self.id, other.id)))
    }

    pub fn mul(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&other);
        let (a, b) = (self.value(), other.value());
        check_binary("mul", &a, &b)?;
        let v = broadcast_zip(&a, &b, |x, y| x * y);
        Ok(self.binary(other, v, Op::Mul(self.id, other.id)))
    }

    /// Elementwise quotient; every divisor entry must be non-zero.
    pub fn div(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&other);
        let (a, b) = (self.value(), other.value());
        check_binary("div", &a, &b)?;
        if b.as_slice().contains(&0.0) {
            return Err(domain_err("div", "zero divisor"));
        }
        let v = broadcast_zip(&a, &b, |x, y| x / y);
        Ok(self.binary(other, v, Op::Div(self.id, other.id)))
    }

    pub fn neg(&self) -> Var<'t> {
        self.unary(self.value().scale(-1.0), Op::Neg(self.id))
    }

    pub fn scale(&self, c: f64) -> Var<'t> {
        self.unary(self.value().scale(c), Op::Scale(self.id, c))
    }

    pub fn add_scalar(&self, c: f64) -> Var<'t> {
        self.unary(self.value().map(|x| x + c), Op::AddScalar(self.id))
    }

    pub fn exp(&self) -> Var<'t> {
        self.unary(self.value().map(f64::exp), Op::Exp(self.id))
    }

    pub fn log(&self) -> Result<Var<'t>> {
        let a = self.value();
        if a.as_slice().iter().any(|&x| x <= 0.0 || x.is_nan()) {
            return Err(domain_err("log", "non-positive entry"));
        }
        Ok(self.unary(a.map(f64::ln), Op::Log(self.id)))
    }

    pub fn relu(&self) -> Var<'t> {
        self.unary(
            self.value().map(|x| if x > 0.0 || x.is_nan() { x } else { 0.0 }),
            Op::Relu(self.id),
        )
    }

    pub fn square(&self) -> Var<'t> {
        self.unary(self.value().map(|x| x * x), Op::Square(self.id))
    }

    /// Elementwise square root; entries must be strictly positive for a
    /// finite derivative.
    pub fn sqrt(&self) -> Result<Var<'t>> {
        let a = self.value();
        if a.as_slice().iter().any(|&x| x <= 0.0 || x.is_nan()) {
            return Err(domain_err("sqrt", "non-positive entry"));
        }
        Ok(self.unary(a.map(f64::sqrt), Op::Sqrt(self.id)))
    }

    pub fn matmul(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&other);
        let v = self.value().matmul(&other.value())?;
        Ok(self.binary(other, v, Op::MatMul(self.id, other.id)))
    }

    pub fn transpose(&self) -> Var<'t> {
        self.unary(self.value().transpose(), Op::Transpose(self.id))
    }

    pub fn log_softmax(&self, axis: Axis) -> Var<'t> {
        let (y, p) = self.value().log_softmax_with_probs(axis);
        self.unary(y, Op::LogSoftmax(self.id, axis, Rc::new(p)))
    }

    /// Same values, no gradient upstream.
    pub fn stop_gradient(&self) -> Var<'t> {
        self.tape.push(Matrix::clone(&self.value()), Op::StopGradient, false)
    }

    pub fn reduce(&self, kind: ReduceKind, axis: ReduceAxis) -> Var<'t> {
        let a = self.value();
        let (r, c) = a.shape();
        let mut v = match axis {
            ReduceAxis::All => Matrix::scalar(a.sum()),
            ReduceAxis::Row => Matrix::from_vec(r, 1, a.row_sums()).expect("shape"),
            ReduceAxis::Col => Matrix::from_vec(1, c, a.col_sums()).expect("shape"),
        };
        if kind == ReduceKind::Mean {
            let d = match axis {
                ReduceAxis::All => (r * c) as f64,
                ReduceAxis::Row => c as f64,
                ReduceAxis::Col => r as f64,
            };
            v = v.scale(1.0 / d);
        }
        self.unary(v, Op::Reduce(self.id, kind, axis))
    }

    pub fn sum(&self) -> Var<'t> {
        self.reduce(ReduceKind::Sum, ReduceAxis::All)
    }

    pub fn mean(&self) -> Var<'t> {
        self.reduce(ReduceKind::Mean, ReduceAxis::All)
    }

    /// `out.flat[k] = self.flat[indices[k]]`, reshaped to `rows x cols`.
    pub fn gather(&self, indices: Rc<[usize]>, rows: usize, cols: usize) -> Result<Var<'t>> {
        if rows * cols != indices.len() {
            return Err(dim_err("gather", "output shape does not match index count"));
        }
        let a = self.value();
        let src = a.as_slice();
        if let Some(&bad) = indices.iter().find(|&&i| i >= src.len()) {
            return Err(dim_err("gather", format!("index {bad} out of range")));
        }
        let data = indices.iter().map(|&i| src[i]).collect();
        let v = Matrix::from_vec(rows, cols, data)?;
        Ok(self.unary(v, Op::Gather(self.id, indices)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_gradient() {
        let t = Tape::new();
        let x = t.param(Matrix::scalar(3.0));
        let y = x.square();
        assert_eq!(y.item(), 9.0);
        let g = t.backward(y);
        assert_eq!(g.wrt(x).get(0, 0), 6.0);
    }

    #[test]
    fn relu_gradient() {
        let t = Tape::new();
        let x = t.param(Matrix::from_rows(&[vec![-2.0, 5.0]]).unwrap());
        let y = x.relu();
        assert_eq!(y.value().as_slice(), &[0.0, 5.0]);
        let g = t.backward(y.sum());
        assert_eq!(g.wrt(x).as_slice(), &[0.0, 1.0]);
    }

    #[test]
    fn additive_inverse() {
        let t = Tape::new();
        let a = t.param(Matrix::from_fn(2, 3, |i, j| i as f64 - j as f64 * 0.5));
        let z = a.add(a.neg()).unwrap();
        assert!(z.value().as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn binary_shape_errors() {
        let t = Tape::new();
        let a = t.param(Matrix::zeros(2, 2));
        let b = t.param(Matrix::zeros(3, 2));
        assert!(a.add(b).is_err());
        assert!(a.mul(b).is_err());
        assert!(a.matmul(b).is_err());
        assert!(b.matmul(a).is_ok());
    }

    #[test]
    fn log_domain_error() {
        let t = Tape::new();
        let a = t.param(Matrix::from_rows(&[vec![1.0, 0.0]]).unwrap());
        assert!(matches!(a.log(), Err(crate::Error::Domain { .. })));
        let b = t.param(Matrix::from_rows(&[vec![1.0, -1.0]]).unwrap());
        assert!(b.log().is_err());
    }

    #[test]
    fn stop_gradient_blocks_flow() {
        let t = Tape::new();
        let x = t.param(Matrix::from_rows(&[vec![1.5, -2.0, 0.25]]).unwrap());
        let loss = x.stop_gradient().mul(x).unwrap().sum();
        let g = t.backward(loss);
        assert_eq!(g.wrt(x), *x.value());

        let t = Tape::new();
        let x = t.param(Matrix::from_rows(&[vec![1.5, -2.0]]).unwrap());
        let s = x.stop_gradient();
        assert_eq!(*s.value(), *x.value());
        let g = t.backward(s.square().sum());
        assert_eq!(g.wrt(x), Matrix::zeros(1, 2));
    }

    #[test]
    fn reductions() {
        let t = Tape::new();
        let x = t.param(Matrix::ones(3, 3));
        assert_eq!(x.sum().item(), 9.0);
        let g = t.backward(x.mean());
        assert!(g.wrt(x).as_slice().iter().all(|&v| (v - 1.0 / 9.0).abs() < 1e-15));
        let r = x.reduce(ReduceKind::Sum, ReduceAxis::Row);
        assert_eq!(r.shape(), (3, 1));
        let c = x.reduce(ReduceKind::Mean, ReduceAxis::Col);
        assert_eq!(c.shape(), (1, 3));
        assert_eq!(c.value().as_slice(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn scalar_broadcast() {
        let t = Tape::new();
        let x = t.param(Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap());
        let c = t.param(Matrix::scalar(2.0));
        let y = x.mul(c).unwrap();
        assert_eq!(y.value().as_slice(), &[2.0, 4.0, 6.0, 8.0]);
        let g = t.backward(y.sum());
        assert_eq!(g.wrt(c).get(0, 0), 10.0);
        assert_eq!(g.wrt(x).as_slice(), &[2.0; 4]);
    }

    #[test]
    fn gather_scatters_back() {
        let t = Tape::new();
        let x = t.param(Matrix::from_rows(&[vec![1.0, 2.0, 3.0]]).unwrap());
        let idx: Rc<[usize]> = vec![2, 0, 2, 1].into();
        let y = x.gather(idx, 2, 2).unwrap();
        assert_eq!(y.value().as_slice(), &[3.0, 1.0, 3.0, 2.0]);
        let g = t.backward(y.sum());
        assert_eq!(g.wrt(x).as_slice(), &[1.0, 1.0, 2.0]);
    }

    #[test]
    fn constants_get_no_gradient() {
        let t = Tape::new();
        let c = t.constant(Matrix::ones(2, 2));
        let x = t.param(Matrix::ones(2, 2));
        let y = c.mul(x).unwrap().sum();
        let g = t.backward(y);
        assert!(g.get(c).is_none());
        assert!(g.get(x).is_some());
    }
}
