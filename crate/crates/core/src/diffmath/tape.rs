//! Wengert tape: records primitive tensor operations during the forward
//! pass and accumulates adjoints in a single reverse sweep.
//!
//! Nodes are appended in creation order, so every node's parents have
//! smaller indices and reverse index order is reverse topological order.
//! `backward` takes `&self` and allocates fresh adjoint buffers, so repeated
//! backward passes from one recorded tape yield identical gradients.

use crate::diffmath::tensor::{self, reduce_to_shape, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

#[derive(Clone, Debug)]
enum Op {
    /// Differentiable input (parameter).
    Leaf,
    /// Non-differentiable input (data, noise).
    Constant,
    MatMul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Neg(usize),
    Scale(usize, f64),
    AddScalar(usize, f64),
    Concat(Vec<usize>),
    SliceLast {
        input: usize,
        start: usize,
        len: usize,
    },
    Sum(usize),
    Mean(usize),
    SquareNorm(usize),
    Sigmoid(usize),
    Tanh(usize),
    Relu(usize),
    Softplus(usize),
    Exp(usize),
    Log(usize),
    Sqrt(usize),
    ClampMin(usize, f64),
    ClampAbs(usize, f64),
}

struct Node {
    op: Op,
    value: Tensor,
}

/// Ordered record of primitive operations with their forward values.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints per tape slot, produced by [`Tape::backward`].
pub struct Grads {
    grads: Vec<Option<Tensor>>,
}

impl Grads {
    /// Gradient of the loss with respect to `var`. Slots the loss never
    /// reached hold exact zeros.
    pub fn get(&self, var: Var, shape_of: &Tape) -> Tensor {
        match &self.grads[var.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(shape_of.nodes[var.0].value.shape()),
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Current value held in a slot.
    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    fn push(&mut self, op: Op, value: Tensor) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    /// Register a differentiable parameter.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(Op::Leaf, value)
    }

    /// Register a non-differentiable input.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(Op::Constant, value)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = tensor::matmul(self.value(a), self.value(b))?;
        Ok(self.push(Op::MatMul(a.0, b.0), v))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = tensor::add(self.value(a), self.value(b))?;
        Ok(self.push(Op::Add(a.0, b.0), v))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = tensor::sub(self.value(a), self.value(b))?;
        Ok(self.push(Op::Sub(a.0, b.0), v))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = tensor::mul(self.value(a), self.value(b))?;
        Ok(self.push(Op::Mul(a.0, b.0), v))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = tensor::div(self.value(a), self.value(b))?;
        Ok(self.push(Op::Div(a.0, b.0), v))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        let v = tensor::neg(self.value(a));
        self.push(Op::Neg(a.0), v)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = tensor::scale(self.value(a), c);
        self.push(Op::Scale(a.0, c), v)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let v = tensor::add_scalar(self.value(a), c);
        self.push(Op::AddScalar(a.0, c), v)
    }

    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let tensors: Vec<&Tensor> = parts.iter().map(|v| self.value(*v)).collect();
        let v = tensor::concat_last(&tensors)?;
        Ok(self.push(Op::Concat(parts.iter().map(|v| v.0).collect()), v))
    }

    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let v = tensor::slice_last(self.value(a), start, len)?;
        Ok(self.push(
            Op::SliceLast {
                input: a.0,
                start,
                len,
            },
            v,
        ))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = Tensor::scalar(tensor::sum(self.value(a)));
        self.push(Op::Sum(a.0), v)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = Tensor::scalar(tensor::mean(self.value(a)));
        self.push(Op::Mean(a.0), v)
    }

    pub fn square_norm(&mut self, a: Var) -> Var {
        let v = Tensor::scalar(tensor::square_norm(self.value(a)));
        self.push(Op::SquareNorm(a.0), v)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = tensor::sigmoid(self.value(a));
        self.push(Op::Sigmoid(a.0), v)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = tensor::tanh(self.value(a));
        self.push(Op::Tanh(a.0), v)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = tensor::relu(self.value(a));
        self.push(Op::Relu(a.0), v)
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let v = tensor::softplus(self.value(a));
        self.push(Op::Softplus(a.0), v)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let v = tensor::exp(self.value(a))?;
        Ok(self.push(Op::Exp(a.0), v))
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        let v = tensor::log(self.value(a))?;
        Ok(self.push(Op::Log(a.0), v))
    }

    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        let v = tensor::sqrt(self.value(a))?;
        Ok(self.push(Op::Sqrt(a.0), v))
    }

    pub fn clamp_min(&mut self, a: Var, floor: f64) -> Var {
        let v = tensor::clamp_min(self.value(a), floor);
        self.push(Op::ClampMin(a.0, floor), v)
    }

    pub fn clamp_abs(&mut self, a: Var, bound: f64) -> Var {
        let v = tensor::clamp_abs(self.value(a), bound);
        self.push(Op::ClampAbs(a.0, bound), v)
    }

    /// Recompute every node from the recorded leaves and constants.
    /// Replay must reproduce the recorded values bit-exactly.
    pub fn replay(&self) -> Result<Vec<Tensor>> {
        let mut vals: Vec<Tensor> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let v = match &node.op {
                Op::Leaf | Op::Constant => node.value.clone(),
                Op::MatMul(a, b) => tensor::matmul(&vals[*a], &vals[*b])?,
                Op::Add(a, b) => tensor::add(&vals[*a], &vals[*b])?,
                Op::Sub(a, b) => tensor::sub(&vals[*a], &vals[*b])?,
                Op::Mul(a, b) => tensor::mul(&vals[*a], &vals[*b])?,
                Op::Div(a, b) => tensor::div(&vals[*a], &vals[*b])?,
                Op::Neg(a) => tensor::neg(&vals[*a]),
                Op::Scale(a, c) => tensor::scale(&vals[*a], *c),
                Op::AddScalar(a, c) => tensor::add_scalar(&vals[*a], *c),
                Op::Concat(parts) => {
                    let ts: Vec<&Tensor> = parts.iter().map(|i| &vals[*i]).collect();
                    tensor::concat_last(&ts)?
                }
                Op::SliceLast { input, start, len } => {
                    tensor::slice_last(&vals[*input], *start, *len)?
                }
                Op::Sum(a) => Tensor::scalar(tensor::sum(&vals[*a])),
                Op::Mean(a) => Tensor::scalar(tensor::mean(&vals[*a])),
                Op::SquareNorm(a) => Tensor::scalar(tensor::square_norm(&vals[*a])),
                Op::Sigmoid(a) => tensor::sigmoid(&vals[*a]),
                Op::Tanh(a) => tensor::tanh(&vals[*a]),
                Op::Relu(a) => tensor::relu(&vals[*a]),
                Op::Softplus(a) => tensor::softplus(&vals[*a]),
                Op::Exp(a) => tensor::exp(&vals[*a])?,
                Op::Log(a) => tensor::log(&vals[*a])?,
                Op::Sqrt(a) => tensor::sqrt(&vals[*a])?,
                Op::ClampMin(a, c) => tensor::clamp_min(&vals[*a], *c),
                Op::ClampAbs(a, c) => tensor::clamp_abs(&vals[*a], *c),
            };
            vals.push(v);
        }
        Ok(vals)
    }

    /// Reverse sweep from a scalar loss. Every adjoint is accumulated in one
    /// pass; leaves unreachable from the loss end up with exact zeros.
    pub fn backward(&self, loss: Var) -> Result<Grads> {
        if loss.0 >= self.nodes.len() {
            return Err(Error::Config("loss var is not on this tape".into()));
        }
        if self.value(loss).len() != 1 {
            return Err(Error::Config(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut adj: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        adj[loss.0] = Some(Tensor::scalar(1.0));

        for i in (0..=loss.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            match &self.nodes[i].op {
                Op::Leaf | Op::Constant => {
                    adj[i] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let bt = tensor::transpose(&self.nodes[*b].value)?;
                    let at = tensor::transpose(&self.nodes[*a].value)?;
                    let da = tensor::matmul(&g, &bt)?;
                    let db = tensor::matmul(&at, &g)?;
                    accumulate(&mut adj, *a, da);
                    accumulate(&mut adj, *b, db);
                }
                Op::Add(a, b) => {
                    let db = reduce_to_shape(&g, self.nodes[*b].value.shape());
                    accumulate(&mut adj, *a, g);
                    accumulate(&mut adj, *b, db);
                }
                Op::Sub(a, b) => {
                    let db = tensor::neg(&reduce_to_shape(&g, self.nodes[*b].value.shape()));
                    accumulate(&mut adj, *a, g);
                    accumulate(&mut adj, *b, db);
                }
                Op::Mul(a, b) => {
                    let bv = &self.nodes[*b].value;
                    let av = &self.nodes[*a].value;
                    let da = tensor::mul(&g, bv)?;
                    let db = reduce_to_shape(&tensor::mul(&g, av)?, bv.shape());
                    accumulate(&mut adj, *a, da);
                    accumulate(&mut adj, *b, db);
                }
                Op::Div(a, b) => {
                    let bv = &self.nodes[*b].value;
                    let yv = &self.nodes[i].value;
                    let da = tensor::div(&g, bv)?;
                    // d/db (a/b) = -y/b
                    let gy = tensor::mul(&g, yv)?;
                    let db_full = tensor::neg(&tensor::div(&gy, bv)?);
                    let db = reduce_to_shape(&db_full, bv.shape());
                    accumulate(&mut adj, *a, da);
                    accumulate(&mut adj, *b, db);
                }
                Op::Neg(a) => accumulate(&mut adj, *a, tensor::neg(&g)),
                Op::Scale(a, c) => accumulate(&mut adj, *a, tensor::scale(&g, *c)),
                Op::AddScalar(a, _) => accumulate(&mut adj, *a, g),
                Op::Concat(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let w = self.nodes[*p].value.last_dim();
                        let dp = tensor::slice_last(&g, offset, w)?;
                        accumulate(&mut adj, *p, dp);
                        offset += w;
                    }
                }
                Op::SliceLast { input, start, len } => {
                    let src = &self.nodes[*input].value;
                    let mut dfull = Tensor::zeros(src.shape());
                    let w = src.last_dim();
                    let rows = src.len() / w;
                    for row in 0..rows {
                        let gslice = &g.data()[row * len..(row + 1) * len];
                        dfull.data_mut()[row * w + start..row * w + start + len]
                            .copy_from_slice(gslice);
                    }
                    accumulate(&mut adj, *input, dfull);
                }
                Op::Sum(a) => {
                    let gv = g.scalar_value()?;
                    let da = Tensor::full(self.nodes[*a].value.shape(), gv);
                    accumulate(&mut adj, *a, da);
                }
                Op::Mean(a) => {
                    let n = self.nodes[*a].value.len() as f64;
                    let gv = g.scalar_value()? / n;
                    let da = Tensor::full(self.nodes[*a].value.shape(), gv);
                    accumulate(&mut adj, *a, da);
                }
                Op::SquareNorm(a) => {
                    let gv = g.scalar_value()?;
                    let da = tensor::scale(&self.nodes[*a].value, 2.0 * gv);
                    accumulate(&mut adj, *a, da);
                }
                Op::Sigmoid(a) => {
                    let y = &self.nodes[i].value;
                    let dy = y.map(|v| v * (1.0 - v));
                    accumulate(&mut adj, *a, tensor::mul(&g, &dy)?);
                }
                Op::Tanh(a) => {
                    let y = &self.nodes[i].value;
                    let dy = y.map(|v| 1.0 - v * v);
                    accumulate(&mut adj, *a, tensor::mul(&g, &dy)?);
                }
                Op::Relu(a) => {
                    // Subgradient at zero fixed to 0.
                    let x = &self.nodes[*a].value;
                    let dy = x.map(|v| if v > 0.0 { 1.0 } else { 0.0 });
                    accumulate(&mut adj, *a, tensor::mul(&g, &dy)?);
                }
                Op::Softplus(a) => {
                    let x = &self.nodes[*a].value;
                    let dy = tensor::sigmoid(x);
                    accumulate(&mut adj, *a, tensor::mul(&g, &dy)?);
                }
                Op::Exp(a) => {
                    let y = &self.nodes[i].value;
                    accumulate(&mut adj, *a, tensor::mul(&g, y)?);
                }
                Op::Log(a) => {
                    let x = &self.nodes[*a].value;
                    accumulate(&mut adj, *a, tensor::div(&g, x)?);
                }
                Op::Sqrt(a) => {
                    let y = &self.nodes[i].value;
                    let dy = y.map(|v| 0.5 / v);
                    accumulate(&mut adj, *a, tensor::mul(&g, &dy)?);
                }
                Op::ClampMin(a, c) => {
                    let x = &self.nodes[*a].value;
                    let floor = *c;
                    let dy = x.map(|v| if v > floor { 1.0 } else { 0.0 });
                    accumulate(&mut adj, *a, tensor::mul(&g, &dy)?);
                }
                Op::ClampAbs(a, c) => {
                    let x = &self.nodes[*a].value;
                    let bound = *c;
                    let dy = x.map(|v| if v.abs() < bound { 1.0 } else { 0.0 });
                    accumulate(&mut adj, *a, tensor::mul(&g, &dy)?);
                }
            }
        }
        Ok(Grads { grads: adj })
    }
}

fn accumulate(adj: &mut [Option<Tensor>], slot: usize, grad: Tensor) {
    match &mut adj[slot] {
        Some(existing) => {
            for (e, g) in existing.data_mut().iter_mut().zip(grad.data()) {
                *e += g;
            }
        }
        None => adj[slot] = Some(grad),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_derivative_at_zero() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::from_vec(vec![0.0]));
        let y = t.sigmoid(x);
        let loss = t.sum(y);
        let grads = t.backward(loss).unwrap();
        assert!((grads.get(x, &t).data()[0] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn trace_quadratic_gradient_is_matrix() {
        // d/dA tr(A^T A)/2 = A
        let a = Tensor::new(vec![2, 3], vec![0.3, -1.2, 0.5, 2.0, 0.1, -0.7]).unwrap();
        let mut t = Tape::new();
        let av = t.leaf(a.clone());
        let sq = t.square_norm(av);
        let loss = t.scale(sq, 0.5);
        let grads = t.backward(loss).unwrap();
        assert_eq!(grads.get(av, &t), a);
    }

    #[test]
    fn unreachable_leaf_gets_exact_zero() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::from_vec(vec![1.0, 2.0]));
        let y = t.leaf(Tensor::from_vec(vec![3.0]));
        let s = t.sum(x);
        let grads = t.backward(s).unwrap();
        assert_eq!(grads.get(y, &t).data(), &[0.0]);
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::from_vec(vec![1.0, 2.0]));
        assert!(t.backward(x).is_err());
    }

    #[test]
    fn replay_reproduces_values_bit_exactly() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::from_vec(vec![0.3, -0.9, 2.4]));
        let w = t.leaf(Tensor::new(vec![3, 2], vec![0.1, 0.2, -0.3, 0.4, 0.5, -0.6]).unwrap());
        let xr = t.leaf(Tensor::new(vec![1, 3], vec![0.3, -0.9, 2.4]).unwrap());
        let h = t.matmul(xr, w).unwrap();
        let a = t.tanh(h);
        let _ = t.sum(a);
        let _ = x;
        let vals = t.replay().unwrap();
        for (i, v) in vals.iter().enumerate() {
            assert_eq!(v, t.value(Var(i)));
        }
    }

    #[test]
    fn two_backward_passes_identical() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::from_vec(vec![0.7, -1.1]));
        let s = t.softplus(x);
        let m = t.mul(s, x).unwrap();
        let loss = t.sum(m);
        let g1 = t.backward(loss).unwrap().get(x, &t);
        let g2 = t.backward(loss).unwrap().get(x, &t);
        assert_eq!(g1, g2);
    }
}
