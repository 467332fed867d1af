//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! A [`Tape`] records every forward op as a node. Leaves are either
//! trainable (gradients flow into them) or constant (gradients stop).
//! Nodes that depend on no trainable leaf are never visited by
//! [`Tape::backward`], so frozen sub-networks cost nothing in the
//! reverse pass even when gradients must pass *through* them to reach
//! their inputs.
//!
//! Tapes are cheap and meant to be rebuilt for every optimisation step.

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Concat(Var, Var),
    Relu(Var),
    Tanh(Var),
    Square(Var),
    Abs(Var),
    Sqrt(Var),
    MeanAll(Var),
    SumLast(Var),
    Scale(Var, f64),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Per-node gradients produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`, if it was reachable.
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}

fn check_same(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            op,
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    Ok(())
}

fn check_rank2(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape().len() != 2 || b.shape().len() != 2 {
        return Err(Error::ShapeMismatch {
            op,
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    Ok(())
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

    /// A leaf that gradients flow into.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf that stops gradients.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn unary(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let src = &self.nodes[a.0];
        let values = src.value.values().iter().map(|&x| f(x)).collect();
        let value = Tensor::new(src.value.shape().to_vec(), values).expect("same shape");
        let rg = src.requires_grad;
        self.push(value, op, rg)
    }

    /// Matrix product of `[n, k]` and `[k, m]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        check_rank2("matmul", ta, tb)?;
        let (n, k, m) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
        if tb.shape()[0] != k {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                left: ta.shape().to_vec(),
                right: tb.shape().to_vec(),
            });
        }
        let (av, bv) = (ta.values(), tb.values());
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            let row = &mut out[i * m..(i + 1) * m];
            for p in 0..k {
                let x = av[i * k + p];
                let brow = &bv[p * m..(p + 1) * m];
                for (o, &y) in row.iter_mut().zip(brow) {
                    *o += x * y;
                }
            }
        }
        let rg = self.requires_grad(a) || self.requires_grad(b);
        Ok(self.push(Tensor::matrix(n, m, out)?, Op::MatMul(a, b), rg))
    }

    /// Elementwise sum. `b` may also be a single row `[1, cols]`, which
    /// is then added to every row of `a` (bias addition).
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let rg = self.requires_grad(a) || self.requires_grad(b);
        if ta.shape() == tb.shape() {
            let values = ta.values().iter().zip(tb.values()).map(|(x, y)| x + y).collect();
            let value = Tensor::new(ta.shape().to_vec(), values)?;
            return Ok(self.push(value, Op::Add(a, b), rg));
        }
        check_rank2("add", ta, tb)?;
        if tb.shape()[0] != 1 || tb.shape()[1] != ta.shape()[1] {
            return Err(Error::ShapeMismatch {
                op: "add",
                left: ta.shape().to_vec(),
                right: tb.shape().to_vec(),
            });
        }
        let cols = ta.cols();
        let bias = tb.values();
        let values = ta
            .values()
            .iter()
            .enumerate()
            .map(|(i, x)| x + bias[i % cols])
            .collect();
        let value = Tensor::new(ta.shape().to_vec(), values)?;
        Ok(self.push(value, Op::AddRow(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        check_same("sub", ta, tb)?;
        let values = ta.values().iter().zip(tb.values()).map(|(x, y)| x - y).collect();
        let value = Tensor::new(ta.shape().to_vec(), values)?;
        let rg = self.requires_grad(a) || self.requires_grad(b);
        Ok(self.push(value, Op::Sub(a, b), rg))
    }

    /// Elementwise product of equal shapes.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        check_same("mul", ta, tb)?;
        let values = ta.values().iter().zip(tb.values()).map(|(x, y)| x * y).collect();
        let value = Tensor::new(ta.shape().to_vec(), values)?;
        let rg = self.requires_grad(a) || self.requires_grad(b);
        Ok(self.push(value, Op::Mul(a, b), rg))
    }

    /// Joins two `[n, p]` and `[n, q]` tensors into `[n, p + q]`.
    pub fn concat_last_axis(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        check_rank2("concat_last_axis", ta, tb)?;
        if ta.rows() != tb.rows() {
            return Err(Error::ShapeMismatch {
                op: "concat_last_axis",
                left: ta.shape().to_vec(),
                right: tb.shape().to_vec(),
            });
        }
        let (n, p, q) = (ta.rows(), ta.cols(), tb.cols());
        let mut values = Vec::with_capacity(n * (p + q));
        for i in 0..n {
            values.extend_from_slice(ta.row(i));
            values.extend_from_slice(tb.row(i));
        }
        let rg = self.requires_grad(a) || self.requires_grad(b);
        Ok(self.push(Tensor::matrix(n, p + q, values)?, Op::Concat(a, b), rg))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, Op::Relu(a), |x| x.max(0.0))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, Op::Tanh(a), f64::tanh)
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, Op::Square(a), |x| x * x)
    }

    pub fn abs_elem(&mut self, a: Var) -> Var {
        self.unary(a, Op::Abs(a), f64::abs)
    }

    /// Elementwise square root. The derivative at exactly zero is taken
    /// to be zero.
    pub fn sqrt_elem(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sqrt(a), f64::sqrt)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, Op::Scale(a, c), |x| c * x)
    }

    /// Mean over every element, as a `[1, 1]` tensor.
    pub fn mean_all(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let mean = t.values().iter().sum::<f64>() / t.len() as f64;
        let rg = self.requires_grad(a);
        self.push(Tensor::scalar(mean), Op::MeanAll(a), rg)
    }

    /// Row sums of a rank-2 tensor, as `[n, 1]`.
    pub fn sum_last_axis(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.shape().len() != 2 {
            return Err(Error::ShapeMismatch {
                op: "sum_last_axis",
                left: t.shape().to_vec(),
                right: vec![],
            });
        }
        let sums = (0..t.rows()).map(|i| t.row(i).iter().sum()).collect();
        let rg = self.requires_grad(a);
        Ok(self.push(Tensor::column(sums)?, Op::SumLast(a), rg))
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lt = self.value(loss);
        if !lt.is_scalar() {
            return Err(Error::NonScalarLoss(lt.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        if !self.nodes[loss.0].requires_grad {
            return Ok(Gradients { grads });
        }
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let Some(upstream) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            self.propagate(node, &upstream, &mut grads);
            grads[idx] = Some(upstream);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, up: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let mut send = |v: Var, g: Vec<f64>| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                slot @ None => *slot = Some(g),
            }
        };
        let out = &node.value;
        match node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(a), self.value(b));
                let (n, k, m) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                let (av, bv) = (ta.values(), tb.values());
                if self.requires_grad(a) {
                    // dA = dOut · Bᵀ
                    let mut ga = vec![0.0; n * k];
                    for i in 0..n {
                        for p in 0..k {
                            let brow = &bv[p * m..(p + 1) * m];
                            let urow = &up[i * m..(i + 1) * m];
                            ga[i * k + p] = urow.iter().zip(brow).map(|(u, b)| u * b).sum();
                        }
                    }
                    send(a, ga);
                }
                if self.requires_grad(b) {
                    // dB = Aᵀ · dOut
                    let mut gb = vec![0.0; k * m];
                    for i in 0..n {
                        for p in 0..k {
                            let x = av[i * k + p];
                            let urow = &up[i * m..(i + 1) * m];
                            for (g, u) in gb[p * m..(p + 1) * m].iter_mut().zip(urow) {
                                *g += x * u;
                            }
                        }
                    }
                    send(b, gb);
                }
            }
            Op::Add(a, b) => {
                send(a, up.to_vec());
                send(b, up.to_vec());
            }
            Op::AddRow(a, b) => {
                send(a, up.to_vec());
                let cols = out.cols();
                let mut gb = vec![0.0; cols];
                for (i, u) in up.iter().enumerate() {
                    gb[i % cols] += u;
                }
                send(b, gb);
            }
            Op::Sub(a, b) => {
                send(a, up.to_vec());
                send(b, up.iter().map(|u| -u).collect());
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(a).values(), self.value(b).values());
                if self.requires_grad(a) {
                    send(a, up.iter().zip(bv).map(|(u, y)| u * y).collect());
                }
                if self.requires_grad(b) {
                    send(b, up.iter().zip(av).map(|(u, x)| u * x).collect());
                }
            }
            Op::Concat(a, b) => {
                let (p, q) = (self.value(a).cols(), self.value(b).cols());
                let n = out.rows();
                let mut ga = Vec::with_capacity(n * p);
                let mut gb = Vec::with_capacity(n * q);
                for i in 0..n {
                    let urow = &up[i * (p + q)..(i + 1) * (p + q)];
                    ga.extend_from_slice(&urow[..p]);
                    gb.extend_from_slice(&urow[p..]);
                }
                send(a, ga);
                send(b, gb);
            }
            Op::Relu(a) => {
                let x = self.value(a).values();
                let g = up
                    .iter()
                    .zip(x)
                    .map(|(u, &x)| if x > 0.0 { *u } else { 0.0 })
                    .collect();
                send(a, g);
            }
            Op::Tanh(a) => {
                let g = up
                    .iter()
                    .zip(out.values())
                    .map(|(u, y)| u * (1.0 - y * y))
                    .collect();
                send(a, g);
            }
            Op::Square(a) => {
                let x = self.value(a).values();
                send(a, up.iter().zip(x).map(|(u, x)| 2.0 * x * u).collect());
            }
            Op::Abs(a) => {
                let x = self.value(a).values();
                let g = up
                    .iter()
                    .zip(x)
                    .map(|(u, &x)| {
                        if x > 0.0 {
                            *u
                        } else if x < 0.0 {
                            -u
                        } else {
                            0.0
                        }
                    })
                    .collect();
                send(a, g);
            }
            Op::Sqrt(a) => {
                let g = up
                    .iter()
                    .zip(out.values())
                    .map(|(u, &y)| if y > 0.0 { u * 0.5 / y } else { 0.0 })
                    .collect();
                send(a, g);
            }
            Op::Scale(a, c) => send(a, up.iter().map(|u| c * u).collect()),
            Op::MeanAll(a) => {
                let n = self.value(a).len();
                send(a, vec![up[0] / n as f64; n]);
            }
            Op::SumLast(a) => {
                let t = self.value(a);
                let cols = t.cols();
                let g = (0..t.len()).map(|i| up[i / cols]).collect();
                send(a, g);
            }
        }
    }
}
