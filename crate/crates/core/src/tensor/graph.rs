use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;

use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`]. Only meaningful for the graph that made it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// The differentiable primitives a graph can record.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Primitive {
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    MulScalar,
    DivScalar,
    AddScalar,
    MatMul,
    Transpose,
    Tanh,
    Relu,
    Sqrt,
    Reshape,
    Sum,
    Expand,
    SumAxis,
    BroadcastAxis,
    Softmax,
    SoftmaxCrossEntropy,
}

impl Primitive {
    pub const ALL: [Primitive; 20] = [
        Primitive::Add,
        Primitive::Sub,
        Primitive::Mul,
        Primitive::Div,
        Primitive::Neg,
        Primitive::MulScalar,
        Primitive::DivScalar,
        Primitive::AddScalar,
        Primitive::MatMul,
        Primitive::Transpose,
        Primitive::Tanh,
        Primitive::Relu,
        Primitive::Sqrt,
        Primitive::Reshape,
        Primitive::Sum,
        Primitive::Expand,
        Primitive::SumAxis,
        Primitive::BroadcastAxis,
        Primitive::Softmax,
        Primitive::SoftmaxCrossEntropy,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Primitive::Add => "add",
            Primitive::Sub => "sub",
            Primitive::Mul => "mul",
            Primitive::Div => "div",
            Primitive::Neg => "neg",
            Primitive::MulScalar => "mul_scalar",
            Primitive::DivScalar => "div_scalar",
            Primitive::AddScalar => "add_scalar",
            Primitive::MatMul => "matmul",
            Primitive::Transpose => "transpose",
            Primitive::Tanh => "tanh",
            Primitive::Relu => "relu",
            Primitive::Sqrt => "sqrt",
            Primitive::Reshape => "reshape",
            Primitive::Sum => "sum",
            Primitive::Expand => "expand",
            Primitive::SumAxis => "sum_axis",
            Primitive::BroadcastAxis => "broadcast_axis",
            Primitive::Softmax => "softmax",
            Primitive::SoftmaxCrossEntropy => "softmax_cross_entropy",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.name() == name)
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Constant,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Neg(Var),
    MulScalar(Var, f64),
    DivScalar(Var, f64),
    AddScalar(Var),
    MatMul(Var, Var),
    Transpose(Var),
    Tanh(Var),
    Relu(Var),
    Sqrt(Var),
    Reshape(Var),
    Sum(Var),
    Expand(Var),
    SumAxis(Var, usize),
    BroadcastAxis(Var, usize),
    Softmax(Var),
    SoftmaxCrossEntropy(Var, Rc<[usize]>),
}

impl Op {
    fn inputs(&self) -> [Option<Var>; 2] {
        use Op::*;
        match *self {
            Leaf | Constant => [None, None],
            Add(a, b) | Sub(a, b) | Mul(a, b) | Div(a, b) | MatMul(a, b) => [Some(a), Some(b)],
            Neg(a)
            | MulScalar(a, _)
            | DivScalar(a, _)
            | AddScalar(a)
            | Transpose(a)
            | Tanh(a)
            | Relu(a)
            | Sqrt(a)
            | Reshape(a)
            | Sum(a)
            | Expand(a)
            | SumAxis(a, _)
            | BroadcastAxis(a, _)
            | Softmax(a)
            | SoftmaxCrossEntropy(a, _) => [Some(a), None],
        }
    }

    fn primitive(&self) -> Option<Primitive> {
        use Op::*;
        Some(match self {
            Leaf | Constant => return None,
            Add(..) => Primitive::Add,
            Sub(..) => Primitive::Sub,
            Mul(..) => Primitive::Mul,
            Div(..) => Primitive::Div,
            Neg(..) => Primitive::Neg,
            MulScalar(..) => Primitive::MulScalar,
            DivScalar(..) => Primitive::DivScalar,
            AddScalar(..) => Primitive::AddScalar,
            MatMul(..) => Primitive::MatMul,
            Transpose(..) => Primitive::Transpose,
            Tanh(..) => Primitive::Tanh,
            Relu(..) => Primitive::Relu,
            Sqrt(..) => Primitive::Sqrt,
            Reshape(..) => Primitive::Reshape,
            Sum(..) => Primitive::Sum,
            Expand(..) => Primitive::Expand,
            SumAxis(..) => Primitive::SumAxis,
            BroadcastAxis(..) => Primitive::BroadcastAxis,
            Softmax(..) => Primitive::Softmax,
            SoftmaxCrossEntropy(..) => Primitive::SoftmaxCrossEntropy,
        })
    }
}

struct Node {
    value: Rc<Tensor>,
    op: Op,
    requires_grad: bool,
}

/// An append-only record of tensor operations supporting reverse-mode
/// differentiation.
///
/// Nodes are appended in evaluation order, so every node's inputs precede it.
/// Operations whose inputs are all constants are folded into constants and
/// never visited by a backward sweep.
///
/// Division follows one convention everywhere: a zero denominator yields zero.
/// The only place this matters is the optimizer update ratio with `epsilon = 0`
/// and an all-zero gradient history, where it makes the step a no-op.
pub struct Graph {
    nodes: RefCell<Vec<Node>>,
    node_budget: Option<usize>,
    fault: Option<Primitive>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradient values for every leaf of a graph, produced by [`Graph::backward`].
#[derive(Clone, Debug, Default)]
pub struct Gradients {
    by_leaf: HashMap<Var, Tensor>,
}

impl Gradients {
    pub fn get(&self, leaf: Var) -> Option<&Tensor> {
        self.by_leaf.get(&leaf)
    }

    pub fn len(&self) -> usize {
        self.by_leaf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_leaf.is_empty()
    }
}

fn safe_div(a: f64, b: f64) -> f64 {
    if b == 0.0 {
        0.0
    } else {
        a / b
    }
}

impl Graph {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            node_budget: None,
            fault: None,
        }
    }

    /// A graph that refuses to grow past `budget` nodes.
    pub fn with_node_budget(budget: usize) -> Self {
        Self {
            node_budget: Some(budget),
            ..Self::new()
        }
    }

    /// Perturbs the gradient rule of one primitive. Used to confirm that the
    /// gradient checks notice a broken rule.
    #[doc(hidden)]
    pub fn with_fault(mut self, primitive: Primitive) -> Self {
        self.fault = Some(primitive);
        self
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn value(&self, v: Var) -> Rc<Tensor> {
        Rc::clone(&self.nodes.borrow()[v.0].value)
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.0].value.shape().to_vec()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes.borrow()[v.0].requires_grad
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Result<Var> {
        self.push_rc(Rc::new(value), op, requires_grad)
    }

    fn push_rc(&self, value: Rc<Tensor>, op: Op, requires_grad: bool) -> Result<Var> {
        let mut nodes = self.nodes.borrow_mut();
        if let Some(budget) = self.node_budget {
            if nodes.len() >= budget {
                return Err(Error::Resource(format!(
                    "graph grew past its budget of {budget} nodes; \
                     shorten the unroll or switch to first-order hypergradients"
                )));
            }
        }
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(nodes.len() - 1))
    }

    /// A differentiable input.
    pub fn leaf(&self, value: Tensor) -> Result<Var> {
        self.push(value, Op::Leaf, true)
    }

    pub fn constant(&self, value: Tensor) -> Result<Var> {
        self.push(value, Op::Constant, false)
    }

    /// A constant sharing `v`'s value, cut off from gradient flow.
    pub fn detach(&self, v: Var) -> Result<Var> {
        if !self.requires_grad(v) {
            return Ok(v);
        }
        let value = self.value(v);
        self.push_rc(value, Op::Constant, false)
    }

    fn record(&self, value: Tensor, op: Op) -> Result<Var> {
        let requires_grad = {
            let nodes = self.nodes.borrow();
            op.inputs()
                .iter()
                .flatten()
                .any(|v| nodes[v.0].requires_grad)
        };
        let op = if requires_grad { op } else { Op::Constant };
        self.push(value, op, requires_grad)
    }

    fn binary_same_shape(
        &self,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor> {
        let (va, vb) = (self.value(a), self.value(b));
        va.zip_map(&vb, f)
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary_same_shape(a, b, |x, y| x + y)?;
        self.record(out, Op::Add(a, b))
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary_same_shape(a, b, |x, y| x - y)?;
        self.record(out, Op::Sub(a, b))
    }

    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary_same_shape(a, b, |x, y| x * y)?;
        self.record(out, Op::Mul(a, b))
    }

    /// Elementwise `a / b`, with zero wherever `b` is zero.
    pub fn div(&self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary_same_shape(a, b, safe_div)?;
        self.record(out, Op::Div(a, b))
    }

    pub fn neg(&self, a: Var) -> Result<Var> {
        let out = self.value(a).map(|x| -x);
        self.record(out, Op::Neg(a))
    }

    pub fn mul_scalar(&self, a: Var, c: f64) -> Result<Var> {
        let out = self.value(a).map(|x| x * c);
        self.record(out, Op::MulScalar(a, c))
    }

    pub fn div_scalar(&self, a: Var, c: f64) -> Result<Var> {
        let out = self.value(a).map(|x| safe_div(x, c));
        self.record(out, Op::DivScalar(a, c))
    }

    pub fn add_scalar(&self, a: Var, c: f64) -> Result<Var> {
        let out = self.value(a).map(|x| x + c);
        self.record(out, Op::AddScalar(a))
    }

    pub fn square(&self, a: Var) -> Result<Var> {
        self.mul(a, a)
    }

    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(&self.value(b))?;
        self.record(out, Op::MatMul(a, b))
    }

    pub fn transpose(&self, a: Var) -> Result<Var> {
        let out = self.value(a).transpose()?;
        self.record(out, Op::Transpose(a))
    }

    pub fn tanh(&self, a: Var) -> Result<Var> {
        let out = self.value(a).map(f64::tanh);
        self.record(out, Op::Tanh(a))
    }

    pub fn relu(&self, a: Var) -> Result<Var> {
        let out = self.value(a).map(|x| x.max(0.0));
        self.record(out, Op::Relu(a))
    }

    pub fn sqrt(&self, a: Var) -> Result<Var> {
        let out = self.value(a).map(f64::sqrt);
        self.record(out, Op::Sqrt(a))
    }

    pub fn reshape(&self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).reshape(shape)?;
        self.record(out, Op::Reshape(a))
    }

    /// Sum of all elements, as a rank-0 tensor.
    pub fn sum(&self, a: Var) -> Result<Var> {
        let out = Tensor::scalar(self.value(a).sum());
        self.record(out, Op::Sum(a))
    }

    pub fn mean(&self, a: Var) -> Result<Var> {
        let n = self.value(a).numel() as f64;
        let s = self.sum(a)?;
        self.div_scalar(s, n)
    }

    /// Broadcasts a one-element tensor to `shape`.
    pub fn expand(&self, a: Var, shape: &[usize]) -> Result<Var> {
        let x = self.value(a).item()?;
        self.record(Tensor::full(shape, x), Op::Expand(a))
    }

    /// Sums a matrix along `axis`, keeping that axis with length one.
    pub fn sum_axis(&self, a: Var, axis: usize) -> Result<Var> {
        let va = self.value(a);
        let (r, c) = va.dims2()?;
        let d = va.data();
        let out = match axis {
            0 => {
                let mut acc = vec![0.0; c];
                for i in 0..r {
                    for (j, s) in acc.iter_mut().enumerate() {
                        *s += d[i * c + j];
                    }
                }
                Tensor::matrix(1, c, acc)?
            }
            1 => Tensor::matrix(r, 1, d.chunks(c).map(|row| row.iter().sum()).collect())?,
            _ => return Err(Error::shape(format!("axis {axis} out of range for a matrix"))),
        };
        self.record(out, Op::SumAxis(a, axis))
    }

    /// Repeats a matrix with a length-one `axis` to length `n` along it.
    pub fn broadcast_axis(&self, a: Var, axis: usize, n: usize) -> Result<Var> {
        let va = self.value(a);
        let (r, c) = va.dims2()?;
        let d = va.data();
        let out = match (axis, r, c) {
            (0, 1, _) => Tensor::matrix(n, c, d.repeat(n))?,
            (1, _, 1) => Tensor::matrix(
                r,
                n,
                d.iter().flat_map(|&x| std::iter::repeat_n(x, n)).collect(),
            )?,
            _ => {
                return Err(Error::shape(format!(
                    "cannot broadcast {r}x{c} along axis {axis}"
                )))
            }
        };
        self.record(out, Op::BroadcastAxis(a, axis))
    }

    /// Row-wise softmax of a matrix.
    pub fn softmax(&self, a: Var) -> Result<Var> {
        let out = softmax_rows(&self.value(a))?;
        self.record(out, Op::Softmax(a))
    }

    /// Mean softmax cross-entropy of `logits` (rows are examples) against
    /// class indices.
    pub fn softmax_cross_entropy(&self, logits: Var, labels: &[usize]) -> Result<Var> {
        let vl = self.value(logits);
        let (r, c) = vl.dims2()?;
        if labels.len() != r {
            return Err(Error::shape(format!(
                "{} labels for {r} rows of logits",
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(Error::shape(format!("label {bad} out of range for {c} classes")));
        }
        let d = vl.data();
        let mut total = 0.0;
        for (i, &label) in labels.iter().enumerate() {
            let row = &d[i * c..(i + 1) * c];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
            total += lse - row[label];
        }
        let out = Tensor::scalar(total / r as f64);
        self.record(out, Op::SoftmaxCrossEntropy(logits, labels.into()))
    }

    /// Mean squared error between two same-shaped tensors.
    pub fn mse(&self, pred: Var, target: Var) -> Result<Var> {
        let d = self.sub(pred, target)?;
        let sq = self.square(d)?;
        self.mean(sq)
    }

    /// Gradients of a scalar `loss` with respect to `wrt`, as new graph nodes.
    ///
    /// The returned nodes are differentiable, so the result can feed further
    /// computation and be differentiated again. `wrt` may contain any nodes,
    /// not only leaves; entries that `loss` does not depend on get zeros.
    pub fn grad(&self, loss: Var, wrt: &[Var]) -> Result<Vec<Var>> {
        self.grad_impl(loss, wrt, true)
    }

    /// Gradient values of `loss` with respect to `wrt`. Scratch nodes used by
    /// the sweep are discarded afterwards.
    pub fn grad_values(&self, loss: Var, wrt: &[Var]) -> Result<Vec<Tensor>> {
        let mark = self.len();
        let result = self
            .grad_impl(loss, wrt, false)
            .map(|gs| gs.iter().map(|&g| (*self.value(g)).clone()).collect());
        self.nodes.borrow_mut().truncate(mark);
        result
    }

    /// Gradient values of `loss` with respect to every leaf on the graph.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let leaves: Vec<Var> = self
            .nodes
            .borrow()
            .iter()
            .enumerate()
            .filter(|(_, n)| matches!(n.op, Op::Leaf))
            .map(|(i, _)| Var(i))
            .collect();
        let values = self.grad_values(loss, &leaves)?;
        Ok(Gradients {
            by_leaf: leaves.into_iter().zip(values).collect(),
        })
    }

    fn grad_impl(&self, loss: Var, wrt: &[Var], create_graph: bool) -> Result<Vec<Var>> {
        let loss_shape = self.shape(loss);
        if loss_shape.iter().product::<usize>() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {loss_shape:?}"
            )));
        }
        let Some(lo) = wrt.iter().map(|v| v.0).min() else {
            return Ok(Vec::new());
        };

        // Only nodes that sit on a path from some `wrt` node to the loss get
        // adjoints; everything else is skipped.
        let hi = loss.0;
        let mut relevant = vec![false; hi.saturating_sub(lo) + 1];
        if lo <= hi {
            for &w in wrt {
                if w.0 <= hi {
                    relevant[w.0 - lo] = true;
                }
            }
            let nodes = self.nodes.borrow();
            for i in lo..=hi {
                if relevant[i - lo] || !nodes[i].requires_grad {
                    continue;
                }
                relevant[i - lo] = nodes[i]
                    .op
                    .inputs()
                    .iter()
                    .flatten()
                    .any(|v| v.0 >= lo && relevant[v.0 - lo]);
            }
        }

        let mut adjoint: HashMap<usize, Var> = HashMap::new();
        if lo <= hi && relevant[hi - lo] {
            adjoint.insert(hi, self.constant(Tensor::ones(&loss_shape))?);
            for i in (lo..=hi).rev() {
                if !relevant[i - lo] {
                    continue;
                }
                let Some(&up) = adjoint.get(&i) else {
                    continue;
                };
                let op = self.nodes.borrow()[i].op.clone();
                for (input, contribution) in self.vjp(Var(i), &op, up, create_graph)? {
                    if input.0 < lo || !relevant[input.0 - lo] {
                        continue;
                    }
                    let total = match adjoint.get(&input.0) {
                        Some(&prev) => self.add(prev, contribution)?,
                        None => contribution,
                    };
                    adjoint.insert(input.0, total);
                }
            }
        }

        wrt.iter()
            .map(|&w| match adjoint.get(&w.0) {
                Some(&g) => Ok(g),
                None => self.constant(Tensor::zeros(&self.shape(w))),
            })
            .collect()
    }

    /// Vector-Jacobian products of node `out` for upstream gradient `up`.
    fn vjp(&self, out: Var, op: &Op, up: Var, create_graph: bool) -> Result<Vec<(Var, Var)>> {
        // Forward values referenced by a rule are detached unless the
        // gradient itself has to be differentiable.
        let d = |v: Var| -> Result<Var> {
            if create_graph {
                Ok(v)
            } else {
                self.detach(v)
            }
        };
        let up = d(up)?;
        let mut contributions = match *op {
            Op::Leaf | Op::Constant => Vec::new(),
            Op::Add(a, b) => vec![(a, up), (b, up)],
            Op::Sub(a, b) => vec![(a, up), (b, self.neg(up)?)],
            Op::Mul(a, b) => vec![
                (a, self.mul(up, d(b)?)?),
                (b, self.mul(up, d(a)?)?),
            ],
            Op::Div(a, b) => {
                let db = d(b)?;
                let ga = self.div(up, db)?;
                let up_out = self.mul(up, d(out)?)?;
                let gb = self.neg(self.div(up_out, db)?)?;
                vec![(a, ga), (b, gb)]
            }
            Op::Neg(a) => vec![(a, self.neg(up)?)],
            Op::MulScalar(a, c) => vec![(a, self.mul_scalar(up, c)?)],
            Op::DivScalar(a, c) => vec![(a, self.div_scalar(up, c)?)],
            Op::AddScalar(a) => vec![(a, up)],
            Op::MatMul(a, b) => {
                let bt = self.transpose(d(b)?)?;
                let at = self.transpose(d(a)?)?;
                vec![(a, self.matmul(up, bt)?), (b, self.matmul(at, up)?)]
            }
            Op::Transpose(a) => vec![(a, self.transpose(up)?)],
            Op::Tanh(a) => {
                let y = d(out)?;
                let y2 = self.square(y)?;
                let slope = self.add_scalar(self.neg(y2)?, 1.0)?;
                vec![(a, self.mul(up, slope)?)]
            }
            Op::Relu(a) => {
                let mask = self.value(a).map(|x| if x > 0.0 { 1.0 } else { 0.0 });
                let mask = self.constant(mask)?;
                vec![(a, self.mul(up, mask)?)]
            }
            Op::Sqrt(a) => {
                let half = self.mul_scalar(up, 0.5)?;
                vec![(a, self.div(half, d(out)?)?)]
            }
            Op::Reshape(a) => vec![(a, self.reshape(up, &self.shape(a))?)],
            Op::Sum(a) => vec![(a, self.expand(up, &self.shape(a))?)],
            Op::Expand(a) => {
                let s = self.sum(up)?;
                vec![(a, self.reshape(s, &self.shape(a))?)]
            }
            Op::SumAxis(a, axis) => {
                let n = self.shape(a)[axis];
                vec![(a, self.broadcast_axis(up, axis, n)?)]
            }
            Op::BroadcastAxis(a, axis) => vec![(a, self.sum_axis(up, axis)?)],
            Op::Softmax(a) => {
                let y = d(out)?;
                let n = self.shape(a)[1];
                let uy = self.mul(up, y)?;
                let row = self.broadcast_axis(self.sum_axis(uy, 1)?, 1, n)?;
                let centered = self.sub(up, row)?;
                vec![(a, self.mul(y, centered)?)]
            }
            Op::SoftmaxCrossEntropy(logits, ref labels) => {
                let shape = self.shape(logits);
                let (r, c) = (shape[0], shape[1]);
                let mut onehot = Tensor::zeros(&shape);
                for (i, &l) in labels.iter().enumerate() {
                    onehot.data_mut()[i * c + l] = 1.0;
                }
                let probs = self.softmax(d(logits)?)?;
                let diff = self.sub(probs, self.constant(onehot)?)?;
                let diff = self.div_scalar(diff, r as f64)?;
                let scale = self.expand(up, &shape)?;
                vec![(logits, self.mul(scale, diff)?)]
            }
        };
        if self.fault.is_some() && self.fault == op.primitive() {
            for (_, g) in contributions.iter_mut() {
                *g = self.mul_scalar(*g, 1.01)?;
            }
        }
        Ok(contributions)
    }
}

fn softmax_rows(x: &Tensor) -> Result<Tensor> {
    let (_, c) = x.dims2()?;
    let mut out = x.clone();
    for row in out.data_mut().chunks_mut(c) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_gradient() {
        let g = Graph::new();
        let x = g.leaf(Tensor::scalar(3.0)).unwrap();
        let y = g.mul(x, x).unwrap();
        let grads = g.backward(y).unwrap();
        assert_eq!(grads.get(x).unwrap().item().unwrap(), 6.0);
    }

    #[test]
    fn constant_loss_has_zero_gradient() {
        let g = Graph::new();
        let x = g.leaf(Tensor::vector(vec![1.0, 2.0])).unwrap();
        let c = g.constant(Tensor::scalar(7.0)).unwrap();
        let grads = g.backward(c).unwrap();
        assert_eq!(grads.get(x).unwrap(), &Tensor::zeros(&[2]));
    }

    #[test]
    fn unreached_leaf_gets_zeros() {
        let g = Graph::new();
        let x = g.leaf(Tensor::scalar(2.0)).unwrap();
        let y = g.leaf(Tensor::vector(vec![1.0, 1.0, 1.0])).unwrap();
        let loss = g.mul(x, x).unwrap();
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get(y).unwrap(), &Tensor::zeros(&[3]));
        assert_eq!(grads.get(x).unwrap().item().unwrap(), 4.0);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let g = Graph::new();
        let x = g.leaf(Tensor::vector(vec![1.0, 2.0])).unwrap();
        assert!(matches!(g.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn repeated_input_accumulates() {
        // f(x) = x*x + x  => f'(x) = 2x + 1
        let g = Graph::new();
        let x = g.leaf(Tensor::scalar(1.5)).unwrap();
        let sq = g.mul(x, x).unwrap();
        let f = g.add(sq, x).unwrap();
        let grads = g.backward(f).unwrap();
        assert_eq!(grads.get(x).unwrap().item().unwrap(), 4.0);
    }

    #[test]
    fn second_derivative_through_create_graph() {
        // f(x) = x^3 / 3 ; f' = x^2 ; f'' = 2x
        let g = Graph::new();
        let x = g.leaf(Tensor::scalar(1.25)).unwrap();
        let x2 = g.mul(x, x).unwrap();
        let x3 = g.mul(x2, x).unwrap();
        let f = g.div_scalar(x3, 3.0).unwrap();
        let df = g.grad(f, &[x]).unwrap()[0];
        assert!((g.value(df).item().unwrap() - 1.5625).abs() < 1e-15);
        let d2 = g.grad_values(df, &[x]).unwrap();
        assert!((d2[0].item().unwrap() - 2.5).abs() < 1e-15);
    }

    #[test]
    fn grad_values_leaves_graph_unchanged() {
        let g = Graph::new();
        let x = g.leaf(Tensor::vector(vec![0.3, -0.2])).unwrap();
        let t = g.tanh(x).unwrap();
        let s = g.sum(t).unwrap();
        let before = g.len();
        g.backward(s).unwrap();
        assert_eq!(g.len(), before);
    }

    #[test]
    fn zero_denominator_yields_zero() {
        let g = Graph::new();
        let a = g.leaf(Tensor::vector(vec![0.0, 1.0])).unwrap();
        let b = g.leaf(Tensor::vector(vec![0.0, 2.0])).unwrap();
        let q = g.div(a, b).unwrap();
        assert_eq!(g.value(q).data(), &[0.0, 0.5]);
        let s = g.sum(q).unwrap();
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(a).unwrap().data(), &[0.0, 0.5]);
        assert_eq!(grads.get(b).unwrap().data(), &[0.0, -0.25]);
    }

    #[test]
    fn node_budget_is_enforced() {
        let g = Graph::with_node_budget(3);
        let x = g.leaf(Tensor::scalar(1.0)).unwrap();
        let y = g.add(x, x).unwrap();
        let z = g.add(y, x).unwrap();
        assert!(matches!(g.add(z, x), Err(Error::Resource(_))));
    }

    #[test]
    fn constant_inputs_fold() {
        let g = Graph::new();
        let a = g.constant(Tensor::scalar(2.0)).unwrap();
        let b = g.mul(a, a).unwrap();
        assert!(!g.requires_grad(b));
    }

    #[test]
    fn broadcast_and_sum_axis_are_adjoint_shapes() {
        let g = Graph::new();
        let row = g.leaf(Tensor::matrix(1, 3, vec![1.0, 2.0, 3.0]).unwrap()).unwrap();
        let b = g.broadcast_axis(row, 0, 2).unwrap();
        assert_eq!(g.value(b).data(), &[1.0, 2.0, 3.0, 1.0, 2.0, 3.0]);
        let col = g.sum_axis(b, 1).unwrap();
        assert_eq!(g.value(col).data(), &[6.0, 6.0]);
        let s = g.sum(col).unwrap();
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(row).unwrap().data(), &[2.0, 2.0, 2.0]);
    }

    #[test]
    fn primitive_names_round_trip() {
        for p in Primitive::ALL {
            assert_eq!(Primitive::from_name(p.name()), Some(p));
        }
    }
}
