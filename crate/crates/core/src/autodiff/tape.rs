use std::cell::{Ref, RefCell};
use std::collections::BTreeMap;

use super::kernels::{aligned_strides, for_each2, gemm, split_axis};
use super::{ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};

pub(crate) type NodeId = usize;

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

#[derive(Clone, Debug)]
pub(crate) enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    Maximum(NodeId, NodeId),
    Minimum(NodeId, NodeId),
    Scale(NodeId, f64),
    AddScalar(NodeId),
    Relu(NodeId),
    Gelu(NodeId),
    Sigmoid(NodeId),
    Exp(NodeId),
    Log(NodeId),
    Sqrt(NodeId),
    Abs(NodeId),
    ClampMin(NodeId, f64),
    MatMul(NodeId, NodeId),
    Permute(NodeId, Vec<usize>),
    Reshape(NodeId),
    Softmax(NodeId, usize),
    LayerNorm {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    Concat(Vec<NodeId>, usize),
    Slice {
        x: NodeId,
        axis: usize,
        start: usize,
    },
    IndexSelect {
        x: NodeId,
        indices: Vec<usize>,
    },
    SumAll(NodeId),
    MeanAll(NodeId),
    SumAxis(NodeId, usize),
    MinAxis {
        x: NodeId,
        argmin: Vec<usize>,
    },
}

pub(crate) struct Node {
    pub(crate) value: Tensor,
    pub(crate) op: Op,
    pub(crate) requires_grad: bool,
}

/// Record-on-execute computation tape.
///
/// Every operation on a [`Var`] appends a node; nodes are therefore stored in
/// topological order and [`Tape::backward`] is a single reverse sweep.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    params: RefCell<BTreeMap<ParamId, NodeId>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    pub(crate) tape: &'t Tape,
    pub(crate) id: NodeId,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{} {:?}", self.id, self.value())
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub(crate) fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// Leaf nodes that take gradients: parameters and explicit inputs.
    #[cfg(test)]
    pub(crate) fn trainable_leaves(&self) -> usize {
        self.nodes
            .borrow()
            .iter()
            .filter(|n| n.requires_grad && matches!(n.op, Op::Leaf))
            .count()
    }

    pub(crate) fn nodes(&self) -> Ref<'_, Vec<Node>> {
        self.nodes.borrow()
    }

    /// A value that receives no gradient.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, false)
    }

    /// A differentiable input whose gradient is retained after `backward`.
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, true)
    }

    /// Registers a parameter once per tape; later calls return the same node, so a
    /// weight used at several time steps is one object on the tape.
    pub fn param(&self, store: &ParamStore, id: ParamId) -> Var<'_> {
        if let Some(&node) = self.params.borrow().get(&id) {
            return Var {
                tape: self,
                id: node,
            };
        }
        let p = store.get(id);
        let var = self.push(p.value.clone(), Op::Leaf, p.requires_grad);
        self.params.borrow_mut().insert(id, var.id);
        var
    }

    pub fn concat<'t>(&'t self, parts: &[Var<'t>], axis: usize) -> Result<Var<'t>> {
        super::ops::concat(self, parts, axis)
    }

    /// Reverse sweep from a scalar `loss`.
    ///
    /// Only leaf nodes keep their gradients in the returned [`Gradients`].
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if root.value.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                root.value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.id + 1];
        if root.requires_grad {
            grads[loss.id] = Some(vec![1.0]);
        }
        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[id].take() else {
                continue;
            };
            propagate(&nodes, id, &g, &mut grads);
        }
        Ok(Gradients { grads })
    }

    /// Gradients of `loss` with respect to every parameter registered on this tape.
    pub fn param_gradients(&self, loss: Var<'_>) -> Result<Vec<(ParamId, Vec<f64>)>> {
        let mut grads = self.backward(loss)?;
        Ok(self
            .params
            .borrow()
            .iter()
            .filter_map(|(&pid, &node)| Some((pid, grads.grads.get_mut(node)?.take()?)))
            .collect())
    }

    /// Runs [`Tape::backward`] and adds parameter gradients into `store`.
    ///
    /// Calling this twice without [`ParamStore::zero_grad`] accumulates.
    pub fn backward_into(&self, loss: Var<'_>, store: &mut ParamStore) -> Result<()> {
        for (pid, g) in self.param_gradients(loss)? {
            store.accumulate_grad(pid, &g, 1.0);
        }
        Ok(())
    }
}

/// Leaf gradients produced by one backward sweep.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient of a leaf; `None` if the loss does not depend on it.
    pub fn get(&self, var: Var<'_>) -> Option<Tensor> {
        let g = self.grads.get(var.id)?.as_ref()?;
        Tensor::new(var.value().shape().to_vec(), g.clone()).ok()
    }
}

fn slot<'g>(
    grads: &'g mut [Option<Vec<f64>>],
    nodes: &[Node],
    id: NodeId,
) -> Option<&'g mut Vec<f64>> {
    if !nodes[id].requires_grad {
        return None;
    }
    let n = nodes[id].value.numel();
    Some(grads[id].get_or_insert_with(|| vec![0.0; n]))
}

fn binary_strides(nodes: &[Node], out: NodeId, a: NodeId, b: NodeId) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
    let shape = nodes[out].value.shape().to_vec();
    let sa = aligned_strides(nodes[a].value.shape(), &shape);
    let sb = aligned_strides(nodes[b].value.shape(), &shape);
    (shape, sa, sb)
}

fn unary(
    grads: &mut [Option<Vec<f64>>],
    nodes: &[Node],
    x: NodeId,
    out: NodeId,
    g: &[f64],
    df: impl Fn(f64, f64) -> f64,
) {
    let xs = nodes[x].value.data();
    let ys = nodes[out].value.data();
    if let Some(gx) = slot(grads, nodes, x) {
        for i in 0..g.len() {
            gx[i] += g[i] * df(xs[i], ys[i]);
        }
    }
}

fn propagate(nodes: &[Node], id: NodeId, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
    match &nodes[id].op {
        Op::Leaf => {}
        &Op::Add(a, b) | &Op::Sub(a, b) => {
            let sign = if matches!(nodes[id].op, Op::Sub(..)) { -1.0 } else { 1.0 };
            let (shape, sa, sb) = binary_strides(nodes, id, a, b);
            if let Some(ga) = slot(grads, nodes, a) {
                for_each2(&shape, &sa, &sb, |o, ia, _| ga[ia] += g[o]);
            }
            if let Some(gb) = slot(grads, nodes, b) {
                for_each2(&shape, &sa, &sb, |o, _, ib| gb[ib] += sign * g[o]);
            }
        }
        &Op::Mul(a, b) => {
            let (shape, sa, sb) = binary_strides(nodes, id, a, b);
            let (av, bv) = (nodes[a].value.data(), nodes[b].value.data());
            if let Some(ga) = slot(grads, nodes, a) {
                for_each2(&shape, &sa, &sb, |o, ia, ib| ga[ia] += g[o] * bv[ib]);
            }
            if let Some(gb) = slot(grads, nodes, b) {
                for_each2(&shape, &sa, &sb, |o, ia, ib| gb[ib] += g[o] * av[ia]);
            }
        }
        &Op::Div(a, b) => {
            let (shape, sa, sb) = binary_strides(nodes, id, a, b);
            let (av, bv) = (nodes[a].value.data(), nodes[b].value.data());
            if let Some(ga) = slot(grads, nodes, a) {
                for_each2(&shape, &sa, &sb, |o, ia, ib| ga[ia] += g[o] / bv[ib]);
            }
            if let Some(gb) = slot(grads, nodes, b) {
                for_each2(&shape, &sa, &sb, |o, ia, ib| {
                    gb[ib] -= g[o] * av[ia] / (bv[ib] * bv[ib])
                });
            }
        }
        &Op::Maximum(a, b) | &Op::Minimum(a, b) => {
            let take_max = matches!(nodes[id].op, Op::Maximum(..));
            let (shape, sa, sb) = binary_strides(nodes, id, a, b);
            let (av, bv) = (nodes[a].value.data(), nodes[b].value.data());
            let picks_a = |ia: usize, ib: usize| {
                if take_max {
                    av[ia] >= bv[ib]
                } else {
                    av[ia] <= bv[ib]
                }
            };
            if let Some(ga) = slot(grads, nodes, a) {
                for_each2(&shape, &sa, &sb, |o, ia, ib| {
                    if picks_a(ia, ib) {
                        ga[ia] += g[o]
                    }
                });
            }
            if let Some(gb) = slot(grads, nodes, b) {
                for_each2(&shape, &sa, &sb, |o, ia, ib| {
                    if !picks_a(ia, ib) {
                        gb[ib] += g[o]
                    }
                });
            }
        }
        &Op::Scale(x, s) => unary(grads, nodes, x, id, g, |_, _| s),
        &Op::AddScalar(x) => unary(grads, nodes, x, id, g, |_, _| 1.0),
        &Op::Relu(x) => unary(grads, nodes, x, id, g, |x, _| if x > 0.0 { 1.0 } else { 0.0 }),
        &Op::Gelu(x) => unary(grads, nodes, x, id, g, |x, _| {
            let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
            0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
        }),
        &Op::Sigmoid(x) => unary(grads, nodes, x, id, g, |_, y| y * (1.0 - y)),
        &Op::Exp(x) => unary(grads, nodes, x, id, g, |_, y| y),
        &Op::Log(x) => unary(grads, nodes, x, id, g, |x, _| 1.0 / x),
        &Op::Sqrt(x) => unary(grads, nodes, x, id, g, |_, y| if y > 0.0 { 0.5 / y } else { 0.0 }),
        &Op::Abs(x) => unary(grads, nodes, x, id, g, |x, _| {
            if x > 0.0 {
                1.0
            } else if x < 0.0 {
                -1.0
            } else {
                0.0
            }
        }),
        &Op::ClampMin(x, lo) => unary(grads, nodes, x, id, g, |x, _| if x > lo { 1.0 } else { 0.0 }),
        &Op::MatMul(a, b) => matmul_backward(nodes, id, a, b, g, grads),
        Op::Permute(x, axes) => {
            let x = *x;
            let in_shape = nodes[x].value.shape();
            let out_shape = nodes[id].value.shape().to_vec();
            let own = super::kernels::contiguous_strides(in_shape);
            let perm: Vec<usize> = axes.iter().map(|&a| own[a]).collect();
            let zeros = vec![0; perm.len()];
            if let Some(gx) = slot(grads, nodes, x) {
                for_each2(&out_shape, &perm, &zeros, |o, ix, _| gx[ix] += g[o]);
            }
        }
        &Op::Reshape(x) => unary(grads, nodes, x, id, g, |_, _| 1.0),
        &Op::Softmax(x, axis) => {
            let y = nodes[id].value.data();
            let (outer, len, inner) = split_axis(nodes[id].value.shape(), axis);
            if let Some(gx) = slot(grads, nodes, x) {
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |j: usize| (o * len + j) * inner + i;
                        let dot: f64 = (0..len).map(|j| g[at(j)] * y[at(j)]).sum();
                        for j in 0..len {
                            gx[at(j)] += y[at(j)] * (g[at(j)] - dot);
                        }
                    }
                }
            }
        }
        Op::LayerNorm {
            x,
            gamma,
            beta,
            xhat,
            rstd,
        } => {
            let (x, gamma, beta) = (*x, *gamma, *beta);
            let d = nodes[gamma].value.numel();
            let rows = g.len() / d;
            let gam = nodes[gamma].value.data();
            if let Some(gg) = slot(grads, nodes, gamma) {
                for r in 0..rows {
                    for k in 0..d {
                        gg[k] += g[r * d + k] * xhat[r * d + k];
                    }
                }
            }
            if let Some(gb) = slot(grads, nodes, beta) {
                for r in 0..rows {
                    for k in 0..d {
                        gb[k] += g[r * d + k];
                    }
                }
            }
            if let Some(gx) = slot(grads, nodes, x) {
                for r in 0..rows {
                    let row = r * d..(r + 1) * d;
                    let gh: Vec<f64> = row.clone().map(|i| g[i] * gam[i - r * d]).collect();
                    let mean_gh = gh.iter().sum::<f64>() / d as f64;
                    let mean_ghx = gh
                        .iter()
                        .zip(&xhat[row.clone()])
                        .map(|(a, b)| a * b)
                        .sum::<f64>()
                        / d as f64;
                    for (k, i) in row.enumerate() {
                        gx[i] += rstd[r] * (gh[k] - mean_gh - xhat[i] * mean_ghx);
                    }
                }
            }
        }
        Op::Concat(parts, axis) => {
            let out_shape = nodes[id].value.shape();
            let (outer, total_len, inner) = split_axis(out_shape, *axis);
            let mut offset = 0;
            for &p in parts {
                let len = nodes[p].value.shape()[*axis];
                if let Some(gp) = slot(grads, nodes, p) {
                    for o in 0..outer {
                        let src = (o * total_len + offset) * inner;
                        let dst = o * len * inner;
                        for k in 0..len * inner {
                            gp[dst + k] += g[src + k];
                        }
                    }
                }
                offset += len;
            }
        }
        &Op::Slice { x, axis, start } => {
            let (outer, len, inner) = split_axis(nodes[id].value.shape(), axis);
            let full = nodes[x].value.shape()[axis];
            if let Some(gx) = slot(grads, nodes, x) {
                for o in 0..outer {
                    let src = o * len * inner;
                    let dst = (o * full + start) * inner;
                    for k in 0..len * inner {
                        gx[dst + k] += g[src + k];
                    }
                }
            }
        }
        Op::IndexSelect { x, indices } => {
            let x = *x;
            let row = if indices.is_empty() { 0 } else { g.len() / indices.len() };
            if let Some(gx) = slot(grads, nodes, x) {
                for (r, &src) in indices.iter().enumerate() {
                    for k in 0..row {
                        gx[src * row + k] += g[r * row + k];
                    }
                }
            }
        }
        &Op::SumAll(x) => {
            if let Some(gx) = slot(grads, nodes, x) {
                gx.iter_mut().for_each(|v| *v += g[0]);
            }
        }
        &Op::MeanAll(x) => {
            if let Some(gx) = slot(grads, nodes, x) {
                let n = gx.len().max(1) as f64;
                gx.iter_mut().for_each(|v| *v += g[0] / n);
            }
        }
        &Op::SumAxis(x, axis) => {
            let (outer, len, inner) = split_axis(nodes[x].value.shape(), axis);
            if let Some(gx) = slot(grads, nodes, x) {
                for o in 0..outer {
                    for j in 0..len {
                        for i in 0..inner {
                            gx[(o * len + j) * inner + i] += g[o * inner + i];
                        }
                    }
                }
            }
        }
        Op::MinAxis { x, argmin } => {
            let x = *x;
            if let Some(gx) = slot(grads, nodes, x) {
                for (o, &src) in argmin.iter().enumerate() {
                    gx[src] += g[o];
                }
            }
        }
    }
}

fn matmul_backward(
    nodes: &[Node],
    id: NodeId,
    a: NodeId,
    b: NodeId,
    g: &[f64],
    grads: &mut [Option<Vec<f64>>],
) {
    let ash = nodes[a].value.shape();
    let bsh = nodes[b].value.shape();
    let (m, k) = (ash[ash.len() - 2], ash[ash.len() - 1]);
    let n = bsh[bsh.len() - 1];
    let out_shape = nodes[id].value.shape();
    let batch = &out_shape[..out_shape.len() - 2];
    let sa = aligned_strides(&ash[..ash.len() - 2], batch);
    let sb = aligned_strides(&bsh[..bsh.len() - 2], batch);
    let (av, bv) = (nodes[a].value.data(), nodes[b].value.data());
    if let Some(ga) = slot(grads, nodes, a) {
        for_each2(batch, &sa, &sb, |o, ia, ib| {
            gemm(
                m,
                n,
                k,
                &g[o * m * n..],
                false,
                &bv[ib * k * n..],
                true,
                &mut ga[ia * m * k..],
                true,
            );
        });
    }
    if let Some(gb) = slot(grads, nodes, b) {
        for_each2(batch, &sa, &sb, |o, ia, ib| {
            gemm(
                k,
                m,
                n,
                &av[ia * m * k..],
                true,
                &g[o * m * n..],
                false,
                &mut gb[ib * k * n..],
                true,
            );
        });
    }
}

pub(crate) fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}
