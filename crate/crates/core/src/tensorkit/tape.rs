//! Reverse-mode differentiation over a closed set of ten primitives.
//!
//! A [`Tape`] records every primitive applied to its variables in execution
//! order, so the node list is topologically sorted by construction. Calling
//! [`Tape::backward`] on a scalar node walks the list once in reverse and
//! accumulates vector-Jacobian products into every node that requires a
//! gradient.
//!
//! ```
//! use anticipatr::tensorkit::{Tape, Tensor};
//!
//! let mut tape = Tape::new();
//! let x = tape.leaf(Tensor::vector(vec![0.0]).unwrap());
//! let s = tape.sigmoid(x);
//! let y = tape.sum(s);
//! let grads = tape.backward(y).unwrap();
//! assert_eq!(grads.get(x).data(), &[0.25]);
//! ```

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// The primitive operations the tape understands.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Primitive {
    /// `W x` for `W: [m, n]`, `x: [n]`.
    MatVec,
    Add,
    /// Elementwise product.
    Mul,
    Sigmoid,
    Tanh,
    Relu,
    Exp,
    Log,
    /// Sum of all elements, producing a scalar.
    Sum,
    /// Mean of all elements, producing a scalar.
    Mean,
}

impl Primitive {
    pub fn arity(self) -> usize {
        match self {
            Primitive::MatVec | Primitive::Add | Primitive::Mul => 2,
            _ => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Primitive::MatVec => "matvec",
            Primitive::Add => "add",
            Primitive::Mul => "mul",
            Primitive::Sigmoid => "sigmoid",
            Primitive::Tanh => "tanh",
            Primitive::Relu => "relu",
            Primitive::Exp => "exp",
            Primitive::Log => "log",
            Primitive::Sum => "sum",
            Primitive::Mean => "mean",
        }
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Origin {
    Leaf,
    Op(Primitive, [usize; 2]),
}

#[derive(Clone, Debug)]
struct Node {
    value: Tensor,
    origin: Origin,
    requires_grad: bool,
}

/// The computation record.
#[derive(Clone, Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by one backward pass.
#[derive(Clone, Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient for `var`; exact zeros if `var` does not influence the output.
    pub fn get(&self, var: Var) -> Tensor {
        match self.grads.get(var.0) {
            Some(Some(g)) => g.clone(),
            _ => Tensor::zeros(&self.shapes[var.0]),
        }
    }

    /// Whether any gradient reached `var`.
    pub fn reached(&self, var: Var) -> bool {
        matches!(self.grads.get(var.0), Some(Some(_)))
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

    /// Registers a differentiable input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Origin::Leaf, true)
    }

    /// Registers an input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Origin::Leaf, false)
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    fn push(&mut self, value: Tensor, origin: Origin, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            origin,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Applies `op` to `operands`, records it and returns the result handle.
    pub fn apply(&mut self, op: Primitive, operands: &[Var]) -> Result<Var> {
        if operands.len() != op.arity() {
            return Err(Error::contract(format!(
                "{} takes {} operands, got {}",
                op.name(),
                op.arity(),
                operands.len()
            )));
        }
        let a = operands[0];
        let b = operands.get(1).copied().unwrap_or(a);
        let value = forward(op, self.value(a), self.value(b))?;
        let requires_grad = self.nodes[a.0].requires_grad
            || (op.arity() == 2 && self.nodes[b.0].requires_grad);
        Ok(self.push(value, Origin::Op(op, [a.0, b.0]), requires_grad))
    }

    pub fn matvec(&mut self, w: Var, x: Var) -> Result<Var> {
        self.apply(Primitive::MatVec, &[w, x])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Primitive::Add, &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Primitive::Mul, &[a, b])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(Primitive::Sigmoid, a)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(Primitive::Tanh, a)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(Primitive::Relu, a)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(Primitive::Exp, a)
    }

    /// Natural log; fails on non-positive inputs.
    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::Log, &[a])
    }

    pub fn sum(&mut self, a: Var) -> Var {
        self.unary(Primitive::Sum, a)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        self.unary(Primitive::Mean, a)
    }

    fn unary(&mut self, op: Primitive, a: Var) -> Var {
        self.apply(op, &[a])
            .expect("total unary primitive cannot fail")
    }

    /// `c * a`, lowered to an elementwise product with a constant.
    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let k = self.constant(Tensor::full(self.value(a).shape(), c));
        self.mul(a, k).expect("constant matches operand shape")
    }

    /// Elementwise mean of equally shaped rows, lowered to adds and a scale.
    pub fn avgpool(&mut self, rows: &[Var]) -> Result<Var> {
        let (&first, rest) = rows
            .split_first()
            .ok_or_else(|| Error::contract("avgpool over an empty list"))?;
        let mut acc = first;
        for &r in rest {
            acc = self.add(acc, r)?;
        }
        if rows.len() == 1 {
            return Ok(acc);
        }
        Ok(self.scale(acc, 1.0 / rows.len() as f64))
    }

    /// Reverse pass from a scalar output.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        let out = &self.nodes[output.0];
        if !out.value.is_scalar() {
            return Err(Error::contract(format!(
                "backward needs a scalar output, got shape {:?}",
                out.value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; output.0 + 1];
        grads[output.0] = Some(vec![1.0]);

        for i in (0..=output.0).rev() {
            let node = &self.nodes[i];
            let Origin::Op(op, [ia, ib]) = node.origin else {
                continue;
            };
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else {
                continue;
            };
            let a = &self.nodes[ia];
            let b = &self.nodes[ib];
            match op {
                Primitive::MatVec => {
                    let (m, n) = (a.value.shape()[0], a.value.shape()[1]);
                    let w = a.value.data();
                    let x = b.value.data();
                    if a.requires_grad {
                        let gw = slot(&mut grads, ia, m * n);
                        for r in 0..m {
                            let gr = g[r];
                            if gr == 0.0 {
                                continue;
                            }
                            let row = &mut gw[r * n..(r + 1) * n];
                            for (dst, &xv) in row.iter_mut().zip(x) {
                                *dst += gr * xv;
                            }
                        }
                    }
                    if b.requires_grad {
                        let gx = slot(&mut grads, ib, n);
                        for r in 0..m {
                            let gr = g[r];
                            if gr == 0.0 {
                                continue;
                            }
                            let row = &w[r * n..(r + 1) * n];
                            for (dst, &wv) in gx.iter_mut().zip(row) {
                                *dst += gr * wv;
                            }
                        }
                    }
                }
                Primitive::Add => {
                    if a.requires_grad {
                        accumulate(slot(&mut grads, ia, g.len()), g.iter().copied());
                    }
                    if b.requires_grad {
                        accumulate(slot(&mut grads, ib, g.len()), g.iter().copied());
                    }
                }
                Primitive::Mul => {
                    if a.requires_grad {
                        let bv = b.value.data();
                        accumulate(
                            slot(&mut grads, ia, g.len()),
                            g.iter().zip(bv).map(|(g, b)| g * b),
                        );
                    }
                    if b.requires_grad {
                        let av = a.value.data();
                        accumulate(
                            slot(&mut grads, ib, g.len()),
                            g.iter().zip(av).map(|(g, a)| g * a),
                        );
                    }
                }
                Primitive::Sum | Primitive::Mean => {
                    if a.requires_grad {
                        let n = a.value.numel();
                        let d = if op == Primitive::Mean {
                            g[0] / n as f64
                        } else {
                            g[0]
                        };
                        accumulate(slot(&mut grads, ia, n), std::iter::repeat_n(d, n));
                    }
                }
                _ => {
                    if a.requires_grad {
                        let x = a.value.data();
                        let y = node.value.data();
                        let local: Box<dyn Fn(usize) -> f64> = match op {
                            Primitive::Sigmoid => Box::new(|j| y[j] * (1.0 - y[j])),
                            Primitive::Tanh => Box::new(|j| 1.0 - y[j] * y[j]),
                            Primitive::Relu => {
                                Box::new(|j| if x[j] > 0.0 { 1.0 } else { 0.0 })
                            }
                            Primitive::Exp => Box::new(|j| y[j]),
                            Primitive::Log => Box::new(|j| 1.0 / x[j]),
                            _ => unreachable!(),
                        };
                        accumulate(
                            slot(&mut grads, ia, g.len()),
                            g.iter().enumerate().map(|(j, g)| g * local(j)),
                        );
                    }
                }
            }
            // Leaves keep their gradient; interior nodes are retained too so
            // callers can inspect intermediate sensitivities.
            grads[i] = Some(g);
        }

        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        let grads = grads
            .into_iter()
            .enumerate()
            .map(|(i, g)| g.map(|g| Tensor::from_raw(self.nodes[i].value.shape().to_vec(), g)))
            .collect();
        Ok(Gradients { grads, shapes })
    }
}

fn slot(grads: &mut [Option<Vec<f64>>], i: usize, n: usize) -> &mut Vec<f64> {
    grads[i].get_or_insert_with(|| vec![0.0; n])
}

fn accumulate(dst: &mut [f64], src: impl Iterator<Item = f64>) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Numerically stable logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn forward(op: Primitive, a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let elementwise = |f: fn(f64, f64) -> f64| -> Result<Tensor> {
        if a.shape() != b.shape() {
            return Err(Error::shape(op.name(), a.shape(), b.shape()));
        }
        Ok(Tensor::from_raw(
            a.shape().to_vec(),
            a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect(),
        ))
    };
    Ok(match op {
        Primitive::MatVec => {
            if a.shape().len() != 2 || b.shape().len() != 1 || a.shape()[1] != b.shape()[0] {
                return Err(Error::shape("matvec", a.shape(), b.shape()));
            }
            let n = a.shape()[1];
            let x = b.data();
            let out = a
                .data()
                .chunks_exact(n)
                .map(|row| row.iter().zip(x).map(|(w, x)| w * x).sum())
                .collect();
            Tensor::from_raw(vec![a.shape()[0]], out)
        }
        Primitive::Add => elementwise(|x, y| x + y)?,
        Primitive::Mul => elementwise(|x, y| x * y)?,
        Primitive::Sigmoid => a.map(sigmoid),
        Primitive::Tanh => a.map(f64::tanh),
        Primitive::Relu => a.map(|v| v.max(0.0)),
        Primitive::Exp => a.map(f64::exp),
        Primitive::Log => {
            if let Some(v) = a.data().iter().find(|v| **v <= 0.0) {
                return Err(Error::contract(format!("log of non-positive value {v}")));
            }
            a.map(f64::ln)
        }
        Primitive::Sum => Tensor::scalar(a.sum()),
        Primitive::Mean => Tensor::scalar(a.sum() / a.numel() as f64),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vec_t(v: &[f64]) -> Tensor {
        Tensor::vector(v.to_vec()).unwrap()
    }

    #[test]
    fn primitive_examples() {
        let mut tape = Tape::new();
        let z = tape.constant(vec_t(&[0.0]));
        let s = tape.sigmoid(z);
        let t = tape.tanh(z);
        assert_eq!(tape.value(s).data(), &[0.5]);
        assert_eq!(tape.value(t).data(), &[0.0]);

        let eye = tape.constant(Tensor::identity(3));
        let x = tape.constant(vec_t(&[1.0, 2.0, 3.0]));
        let y = tape.matvec(eye, x).unwrap();
        assert_eq!(tape.value(y).data(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn shape_errors_name_the_op() {
        let mut tape = Tape::new();
        let a = tape.constant(vec_t(&[1.0, 2.0]));
        let b = tape.constant(vec_t(&[1.0, 2.0, 3.0]));
        let err = tape.add(a, b).unwrap_err();
        match err {
            Error::Shape { op, left, right } => {
                assert_eq!(op, "add");
                assert_eq!(left, vec![2]);
                assert_eq!(right, vec![3]);
            }
            other => panic!("unexpected {other:?}"),
        }
        let w = tape.constant(Tensor::identity(3));
        assert!(matches!(tape.matvec(w, a), Err(Error::Shape { op: "matvec", .. })));
        assert!(tape.apply(Primitive::Add, &[a]).is_err());
    }

    #[test]
    fn sum_gives_all_ones() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::new(vec![2, 3], vec![0.3, -1.0, 2.0, 5.0, 0.0, 1.0]).unwrap());
        let y = tape.sum(a);
        let g = tape.backward(y).unwrap();
        assert_eq!(g.get(a).data(), &[1.0; 6]);
    }

    #[test]
    fn unreachable_leaf_gets_exact_zeros() {
        let mut tape = Tape::new();
        let a = tape.leaf(vec_t(&[1.0, 2.0]));
        let b = tape.leaf(vec_t(&[3.0]));
        let y = tape.sum(a);
        let g = tape.backward(y).unwrap();
        assert!(!g.reached(b));
        assert_eq!(g.get(b).data(), &[0.0]);
    }

    #[test]
    fn non_scalar_output_is_rejected() {
        let mut tape = Tape::new();
        let a = tape.leaf(vec_t(&[1.0, 2.0]));
        let s = tape.sigmoid(a);
        assert!(matches!(tape.backward(s), Err(Error::Contract(_))));
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut tape = Tape::new();
        let a = tape.leaf(vec_t(&[1.0, 2.0]));
        let c = tape.constant(vec_t(&[3.0, 4.0]));
        let p = tape.mul(a, c).unwrap();
        let y = tape.sum(p);
        let g = tape.backward(y).unwrap();
        assert_eq!(g.get(a).data(), &[3.0, 4.0]);
        assert!(!g.reached(c));
    }

    #[test]
    fn log_rejects_non_positive() {
        let mut tape = Tape::new();
        let a = tape.leaf(vec_t(&[1.0, 0.0]));
        assert!(tape.log(a).is_err());
    }

    #[test]
    fn avgpool_on_tape() {
        let mut tape = Tape::new();
        let rows: Vec<Var> = [1.0, 2.0, 3.0]
            .iter()
            .map(|&v| tape.leaf(vec_t(&[v])))
            .collect();
        let m = tape.avgpool(&rows).unwrap();
        assert!((tape.value(m).data()[0] - 2.0).abs() < 1e-15);
        let y = tape.sum(m);
        let g = tape.backward(y).unwrap();
        for r in rows {
            assert!((g.get(r).data()[0] - 1.0 / 3.0).abs() < 1e-15);
        }
        assert!(tape.avgpool(&[]).is_err());
    }

    #[test]
    fn stable_sigmoid_extremes() {
        assert_eq!(sigmoid(-800.0), 0.0);
        assert_eq!(sigmoid(800.0), 1.0);
        assert!((sigmoid(-30.0) - (-30f64).exp() / (1.0 + (-30f64).exp())).abs() < 1e-25);
    }
}
