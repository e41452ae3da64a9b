//! Define-by-run reverse-mode tape.
//!
//! Every differentiable op appends a node holding its forward value and the
//! data its backward rule needs. Nodes are only ever appended, so the node
//! order is a topological order and [`Tape::backward`] is a single reverse
//! sweep.

use std::cell::RefCell;
use std::rc::Rc;

use super::array::Tensor;
use super::kernels::{self, ConvDims};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub(crate) type NodeId = usize;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum BinaryKind {
    Add,
    Sub,
    Mul,
}

pub(crate) enum Op<T> {
    Leaf,
    MatMul(NodeId, NodeId),
    Binary {
        kind: BinaryKind,
        a: NodeId,
        b: NodeId,
        broadcast_b: bool,
    },
    Scale(NodeId, T),
    Relu(NodeId),
    AddRow(NodeId, NodeId),
    MulRow(NodeId, NodeId),
    Concat(NodeId, NodeId),
    SliceCols {
        a: NodeId,
        start: usize,
    },
    GatherRows {
        a: NodeId,
        index: Rc<[usize]>,
    },
    SegmentMax {
        a: NodeId,
        argmax: Vec<usize>,
    },
    SegmentMean {
        a: NodeId,
        segments: Rc<[usize]>,
        counts: Vec<usize>,
    },
    SegmentStandardize {
        a: NodeId,
        segments: Rc<[usize]>,
        counts: Vec<usize>,
        mean: Vec<T>,
        std: Vec<T>,
        eps: T,
    },
    Conv2d {
        input: NodeId,
        kernel: NodeId,
        dims: ConvDims,
    },
    AddChannelBias(NodeId, NodeId),
    MaxPool2d {
        a: NodeId,
        argmax: Vec<usize>,
    },
    GlobalAvgPool(NodeId),
    Sum(NodeId),
    Mean(NodeId),
    SoftmaxCrossEntropy {
        logits: NodeId,
        labels: Vec<usize>,
        probs: Vec<T>,
    },
    CosineSimilarity {
        a: NodeId,
        b: NodeId,
        norms_a: Vec<T>,
        norms_b: Vec<T>,
        eps: T,
    },
}

impl<T> Op<T> {
    fn inputs(&self) -> Vec<NodeId> {
        use Op::*;
        match self {
            Leaf => vec![],
            MatMul(a, b) | AddRow(a, b) | MulRow(a, b) | Concat(a, b) | AddChannelBias(a, b) => {
                vec![*a, *b]
            }
            Binary { a, b, .. } | CosineSimilarity { a, b, .. } => vec![*a, *b],
            Conv2d { input, kernel, .. } => vec![*input, *kernel],
            Scale(a, _) | Relu(a) | GlobalAvgPool(a) | Sum(a) | Mean(a) => vec![*a],
            SliceCols { a, .. }
            | GatherRows { a, .. }
            | SegmentMax { a, .. }
            | SegmentMean { a, .. }
            | SegmentStandardize { a, .. }
            | MaxPool2d { a, .. } => vec![*a],
            SoftmaxCrossEntropy { logits, .. } => vec![*logits],
        }
    }
}

struct Node<T> {
    value: Rc<Tensor<T>>,
    requires_grad: bool,
    op: Op<T>,
}

/// Records one forward pass. Build a fresh tape for every step.
pub struct Tape<T: Scalar> {
    nodes: RefCell<Vec<Node<T>>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
        }
    }

    /// A trainable leaf.
    pub fn param(&self, value: Tensor<T>) -> Var<'_, T> {
        self.leaf(value, true)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        self.leaf(value, false)
    }

    pub fn leaf(&self, value: Tensor<T>, requires_grad: bool) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            requires_grad,
            op: Op::Leaf,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub(crate) fn push(&self, value: Tensor<T>, op: Op<T>) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        let requires_grad = op.inputs().iter().any(|&i| nodes[i].requires_grad);
        nodes.push(Node {
            value: Rc::new(value),
            requires_grad,
            op,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    pub(crate) fn value_of(&self, id: NodeId) -> Rc<Tensor<T>> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    /// Propagates d(loss)/d(node) to every trainable leaf reachable from `loss`.
    pub fn backward(&self, loss: Var<'_, T>) -> Result<Gradients<T>> {
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if !root.value.is_scalar() {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                root.value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.id] = Some(Tensor::full(root.value.shape(), T::one()));

        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            for (input, contribution) in local_gradients(&nodes, node, &g) {
                if !nodes[input].requires_grad {
                    continue;
                }
                match &mut grads[input] {
                    Some(acc) => acc.add_assign(&contribution),
                    slot @ None => *slot = Some(contribution),
                }
            }
        }
        for (id, node) in nodes.iter().enumerate() {
            if !(node.requires_grad && matches!(node.op, Op::Leaf)) {
                grads[id] = None;
            }
        }
        Ok(Gradients { grads })
    }
}

/// Leaf gradients produced by [`Tape::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of a trainable leaf, or `None` if the loss does not depend on it.
    pub fn get(&self, var: Var<'_, T>) -> Option<&Tensor<T>> {
        self.grads.get(var.id).and_then(Option::as_ref)
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t, T: Scalar> {
    pub(crate) tape: &'t Tape<T>,
    pub(crate) id: NodeId,
}

impl<'t, T: Scalar> Var<'t, T> {
    pub fn value(&self) -> Rc<Tensor<T>> {
        self.tape.value_of(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    /// Value of a one-element tensor.
    pub fn item(&self) -> T {
        self.value().item()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }
}

impl<T: Scalar> std::fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .finish()
    }
}

fn local_gradients<T: Scalar>(
    nodes: &[Node<T>],
    node: &Node<T>,
    g: &Tensor<T>,
) -> Vec<(NodeId, Tensor<T>)> {
    let val = |id: NodeId| -> &Tensor<T> { &nodes[id].value };
    let needs = |id: NodeId| nodes[id].requires_grad;
    let gd = g.data();
    match &node.op {
        Op::Leaf => vec![],
        Op::MatMul(a, b) => {
            let (av, bv) = (val(*a), val(*b));
            let (m, k) = (av.shape()[0], av.shape()[1]);
            let n = bv.shape()[1];
            let mut out = Vec::new();
            if needs(*a) {
                let ga = kernels::matmul_bt(gd, bv.data(), m, n, k);
                out.push((*a, Tensor::from_parts(vec![m, k], ga)));
            }
            if needs(*b) {
                let gb = kernels::matmul_at(av.data(), gd, m, k, n);
                out.push((*b, Tensor::from_parts(vec![k, n], gb)));
            }
            out
        }
        Op::Binary {
            kind,
            a,
            b,
            broadcast_b,
        } => {
            let (av, bv) = (val(*a), val(*b));
            let (ga, gb): (Vec<T>, Vec<T>) = match kind {
                BinaryKind::Add => (gd.to_vec(), gd.to_vec()),
                BinaryKind::Sub => (gd.to_vec(), gd.iter().map(|&v| -v).collect()),
                BinaryKind::Mul => {
                    if *broadcast_b {
                        let s = bv.data()[0];
                        (
                            gd.iter().map(|&v| v * s).collect(),
                            gd.iter().zip(av.data()).map(|(&v, &x)| v * x).collect(),
                        )
                    } else {
                        (
                            gd.iter().zip(bv.data()).map(|(&v, &y)| v * y).collect(),
                            gd.iter().zip(av.data()).map(|(&v, &x)| v * x).collect(),
                        )
                    }
                }
            };
            let gb = if *broadcast_b {
                Tensor::from_parts(bv.shape().to_vec(), vec![gb.into_iter().sum()])
            } else {
                Tensor::from_parts(bv.shape().to_vec(), gb)
            };
            vec![(*a, Tensor::from_parts(av.shape().to_vec(), ga)), (*b, gb)]
        }
        Op::Scale(a, s) => vec![(*a, g.map(|v| v * *s))],
        Op::Relu(a) => {
            let x = val(*a);
            let data = gd
                .iter()
                .zip(x.data())
                .map(|(&gv, &xv)| if xv > T::zero() { gv } else { T::zero() })
                .collect();
            vec![(*a, Tensor::from_parts(x.shape().to_vec(), data))]
        }
        Op::AddRow(a, bias) => {
            let (rows, cols) = (g.shape()[0], g.shape()[1]);
            let mut gb = vec![T::zero(); cols];
            for r in 0..rows {
                for (acc, &v) in gb.iter_mut().zip(&gd[r * cols..(r + 1) * cols]) {
                    *acc += v;
                }
            }
            vec![
                (*a, g.clone()),
                (*bias, Tensor::from_parts(val(*bias).shape().to_vec(), gb)),
            ]
        }
        Op::MulRow(a, scale) => {
            let (x, s) = (val(*a), val(*scale));
            let (rows, cols) = (g.shape()[0], g.shape()[1]);
            let sd = s.data();
            let mut ga = vec![T::zero(); rows * cols];
            let mut gs = vec![T::zero(); cols];
            for r in 0..rows {
                for c in 0..cols {
                    let i = r * cols + c;
                    ga[i] = gd[i] * sd[c];
                    gs[c] += gd[i] * x.data()[i];
                }
            }
            vec![
                (*a, Tensor::from_parts(x.shape().to_vec(), ga)),
                (*scale, Tensor::from_parts(s.shape().to_vec(), gs)),
            ]
        }
        Op::Concat(a, b) => {
            let (p, q) = (val(*a).shape()[1], val(*b).shape()[1]);
            let rows = g.shape()[0];
            let mut ga = Vec::with_capacity(rows * p);
            let mut gb = Vec::with_capacity(rows * q);
            for r in 0..rows {
                let row = &gd[r * (p + q)..(r + 1) * (p + q)];
                ga.extend_from_slice(&row[..p]);
                gb.extend_from_slice(&row[p..]);
            }
            vec![
                (*a, Tensor::from_parts(vec![rows, p], ga)),
                (*b, Tensor::from_parts(vec![rows, q], gb)),
            ]
        }
        Op::SliceCols { a, start } => {
            let x = val(*a);
            let (rows, cols) = (x.shape()[0], x.shape()[1]);
            let width = g.shape()[1];
            let mut ga = vec![T::zero(); rows * cols];
            for r in 0..rows {
                ga[r * cols + start..r * cols + start + width]
                    .copy_from_slice(&gd[r * width..(r + 1) * width]);
            }
            vec![(*a, Tensor::from_parts(vec![rows, cols], ga))]
        }
        Op::GatherRows { a, index } => {
            let x = val(*a);
            let cols = x.shape()[1];
            let mut ga = vec![T::zero(); x.numel()];
            for (r, &src) in index.iter().enumerate() {
                let dst = &mut ga[src * cols..(src + 1) * cols];
                for (d, &v) in dst.iter_mut().zip(&gd[r * cols..(r + 1) * cols]) {
                    *d += v;
                }
            }
            vec![(*a, Tensor::from_parts(x.shape().to_vec(), ga))]
        }
        Op::SegmentMax { a, argmax } => {
            let x = val(*a);
            let cols = x.shape()[1];
            let mut ga = vec![T::zero(); x.numel()];
            for (i, &row) in argmax.iter().enumerate() {
                ga[row * cols + i % cols] += gd[i];
            }
            vec![(*a, Tensor::from_parts(x.shape().to_vec(), ga))]
        }
        Op::SegmentMean {
            a,
            segments,
            counts,
        } => {
            let x = val(*a);
            let cols = x.shape()[1];
            let mut ga = vec![T::zero(); x.numel()];
            for (r, &s) in segments.iter().enumerate() {
                let inv = T::one() / T::of(counts[s] as f64);
                for c in 0..cols {
                    ga[r * cols + c] = gd[s * cols + c] * inv;
                }
            }
            vec![(*a, Tensor::from_parts(x.shape().to_vec(), ga))]
        }
        Op::SegmentStandardize {
            a,
            segments,
            counts,
            mean,
            std,
            eps,
        } => {
            let x = val(*a);
            let cols = x.shape()[1];
            let num = counts.len();
            // Per (segment, column): mean of g and Σ g·(x−μ).
            let mut g_sum = vec![T::zero(); num * cols];
            let mut gc_sum = vec![T::zero(); num * cols];
            for (r, &s) in segments.iter().enumerate() {
                for c in 0..cols {
                    let i = r * cols + c;
                    let j = s * cols + c;
                    g_sum[j] += gd[i];
                    gc_sum[j] += gd[i] * (x.data()[i] - mean[j]);
                }
            }
            let mut ga = vec![T::zero(); x.numel()];
            for (r, &s) in segments.iter().enumerate() {
                let n = T::of(counts[s] as f64);
                for c in 0..cols {
                    let i = r * cols + c;
                    let j = s * cols + c;
                    let denom = std[j] + *eps;
                    let centered = x.data()[i] - mean[j];
                    let mut v = (gd[i] - g_sum[j] / n) / denom;
                    if std[j] > T::zero() {
                        v -= centered * gc_sum[j] / (n * std[j] * denom * denom);
                    }
                    ga[i] = v;
                }
            }
            vec![(*a, Tensor::from_parts(x.shape().to_vec(), ga))]
        }
        Op::Conv2d {
            input,
            kernel,
            dims,
        } => {
            let (x, k) = (val(*input), val(*kernel));
            let mut out = Vec::new();
            if needs(*input) {
                let gi = kernels::conv2d_grad_input(k.data(), gd, *dims);
                out.push((*input, Tensor::from_parts(x.shape().to_vec(), gi)));
            }
            if needs(*kernel) {
                let gk = kernels::conv2d_grad_kernel(x.data(), gd, *dims);
                out.push((*kernel, Tensor::from_parts(k.shape().to_vec(), gk)));
            }
            out
        }
        Op::AddChannelBias(a, bias) => {
            let [batch, ch, h, w] = [g.shape()[0], g.shape()[1], g.shape()[2], g.shape()[3]];
            let plane = h * w;
            let mut gb = vec![T::zero(); ch];
            for b in 0..batch {
                for (c, acc) in gb.iter_mut().enumerate() {
                    let start = (b * ch + c) * plane;
                    *acc += gd[start..start + plane].iter().copied().sum::<T>();
                }
            }
            vec![
                (*a, g.clone()),
                (*bias, Tensor::from_parts(vec![ch], gb)),
            ]
        }
        Op::MaxPool2d { a, argmax } => {
            let x = val(*a);
            let mut ga = vec![T::zero(); x.numel()];
            for (i, &src) in argmax.iter().enumerate() {
                ga[src] += gd[i];
            }
            vec![(*a, Tensor::from_parts(x.shape().to_vec(), ga))]
        }
        Op::GlobalAvgPool(a) => {
            let x = val(*a);
            let plane = x.shape()[2] * x.shape()[3];
            let inv = T::one() / T::of(plane as f64);
            let mut ga = vec![T::zero(); x.numel()];
            for (i, &v) in gd.iter().enumerate() {
                for dst in &mut ga[i * plane..(i + 1) * plane] {
                    *dst = v * inv;
                }
            }
            vec![(*a, Tensor::from_parts(x.shape().to_vec(), ga))]
        }
        Op::Sum(a) => {
            let x = val(*a);
            vec![(*a, Tensor::full(x.shape(), gd[0]))]
        }
        Op::Mean(a) => {
            let x = val(*a);
            let v = gd[0] / T::of(x.numel() as f64);
            vec![(*a, Tensor::full(x.shape(), v))]
        }
        Op::SoftmaxCrossEntropy {
            logits,
            labels,
            probs,
        } => {
            let x = val(*logits);
            let (batch, classes) = (x.shape()[0], x.shape()[1]);
            let scale = gd[0] / T::of(batch as f64);
            let mut ga: Vec<T> = probs.iter().map(|&p| p * scale).collect();
            for (r, &label) in labels.iter().enumerate() {
                ga[r * classes + label] -= scale;
            }
            vec![(*logits, Tensor::from_parts(x.shape().to_vec(), ga))]
        }
        Op::CosineSimilarity {
            a,
            b,
            norms_a,
            norms_b,
            eps,
        } => {
            let (av, bv) = (val(*a), val(*b));
            let (n, d) = (av.shape()[0], av.shape()[1]);
            let m = bv.shape()[0];
            let unit = |x: &Tensor<T>, norms: &[T]| -> Vec<T> {
                let mut u = x.data().to_vec();
                for (r, &nr) in norms.iter().enumerate() {
                    for v in &mut u[r * d..(r + 1) * d] {
                        *v /= nr + *eps;
                    }
                }
                u
            };
            let ua = unit(av, norms_a);
            let ub = unit(bv, norms_b);
            // Pull a row-space gradient v back through x ↦ x / (‖x‖ + ε).
            let pull = |x: &[T], norm: T, v: &mut [T]| {
                let denom = norm + *eps;
                let proj = kernels::dot(x, v);
                for (vi, &xi) in v.iter_mut().zip(x) {
                    let mut out = *vi / denom;
                    if norm > T::zero() {
                        out -= xi * proj / (norm * denom * denom);
                    }
                    *vi = out;
                }
            };
            let mut out = Vec::new();
            if needs(*a) {
                let mut ga = kernels::matmul(gd, &ub, n, m, d);
                for r in 0..n {
                    pull(&av.data()[r * d..(r + 1) * d], norms_a[r], &mut ga[r * d..(r + 1) * d]);
                }
                out.push((*a, Tensor::from_parts(vec![n, d], ga)));
            }
            if needs(*b) {
                let mut gb = kernels::matmul_at(gd, &ua, n, m, d);
                for r in 0..m {
                    pull(&bv.data()[r * d..(r + 1) * d], norms_b[r], &mut gb[r * d..(r + 1) * d]);
                }
                out.push((*b, Tensor::from_parts(vec![m, d], gb)));
            }
            out
        }
    }
}
