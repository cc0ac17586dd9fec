use std::cell::Ref;

use super::kernels::{aligned_strides, broadcast_shape, contiguous_strides, for_each2, gemm, split_axis};
use super::tape::{gelu, Op};
use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

// Arithmetic is fallible (shape checks), so these are methods rather than operator impls.
#[allow(clippy::should_implement_trait)]
impl<'t> Var<'t> {
    pub fn value(&self) -> Ref<'t, Tensor> {
        Ref::map(self.tape.nodes(), |n| &n[self.id].value)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    pub fn item(&self) -> Result<f64> {
        self.value().item()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes()[self.id].requires_grad
    }

    /// Node identity on the tape; two handles with equal ids are the same object.
    pub fn node_id(&self) -> usize {
        self.id
    }

    fn same_tape(&self, other: &Var<'t>) {
        debug_assert!(std::ptr::eq(self.tape, other.tape), "vars from different tapes");
    }

    fn binary(
        self,
        other: Var<'t>,
        name: &'static str,
        make: fn(usize, usize) -> Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var<'t>> {
        self.same_tape(&other);
        let (value, rg) = {
            let nodes = self.tape.nodes();
            let (a, b) = (&nodes[self.id], &nodes[other.id]);
            let out = broadcast_shape(a.value.shape(), b.value.shape())
                .ok_or_else(|| Error::shape(name, a.value.shape(), b.value.shape()))?;
            let sa = aligned_strides(a.value.shape(), &out);
            let sb = aligned_strides(b.value.shape(), &out);
            let (av, bv) = (a.value.data(), b.value.data());
            let mut data = vec![0.0; out.iter().product()];
            for_each2(&out, &sa, &sb, |o, ia, ib| data[o] = f(av[ia], bv[ib]));
            (Tensor::new(out, data)?, a.requires_grad || b.requires_grad)
        };
        Ok(self.tape.push(value, make(self.id, other.id), rg))
    }

    fn unary(self, make: impl FnOnce(usize) -> Op, f: impl Fn(f64) -> f64) -> Var<'t> {
        let (value, rg) = {
            let nodes = self.tape.nodes();
            let x = &nodes[self.id];
            let data = x.value.data().iter().map(|&v| f(v)).collect();
            (
                Tensor::new(x.value.shape().to_vec(), data).expect("same shape"),
                x.requires_grad,
            )
        };
        self.tape.push(value, make(self.id), rg)
    }

    pub fn add(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "add", Op::Add, |a, b| a + b)
    }

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "sub", Op::Sub, |a, b| a - b)
    }

    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "mul", Op::Mul, |a, b| a * b)
    }

    pub fn div(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "div", Op::Div, |a, b| a / b)
    }

    pub fn maximum(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "maximum", Op::Maximum, f64::max)
    }

    pub fn minimum(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "minimum", Op::Minimum, f64::min)
    }

    pub fn scale(self, s: f64) -> Var<'t> {
        self.unary(|x| Op::Scale(x, s), |v| v * s)
    }

    pub fn neg(self) -> Var<'t> {
        self.scale(-1.0)
    }

    pub fn add_scalar(self, c: f64) -> Var<'t> {
        self.unary(Op::AddScalar, |v| v + c)
    }

    pub fn square(self) -> Result<Var<'t>> {
        self.mul(self)
    }

    pub fn relu(self) -> Var<'t> {
        self.unary(Op::Relu, |v| v.max(0.0))
    }

    /// Tanh approximation: `0.5·x·(1 + tanh(√(2/π)·(x + 0.044715·x³)))`.
    pub fn gelu(self) -> Var<'t> {
        self.unary(Op::Gelu, gelu)
    }

    pub fn sigmoid(self) -> Var<'t> {
        self.unary(Op::Sigmoid, |v| 1.0 / (1.0 + (-v).exp()))
    }

    pub fn exp(self) -> Var<'t> {
        self.unary(Op::Exp, f64::exp)
    }

    pub fn log(self) -> Var<'t> {
        self.unary(Op::Log, f64::ln)
    }

    /// Square root; the derivative at exactly zero is taken as zero.
    pub fn sqrt(self) -> Var<'t> {
        self.unary(Op::Sqrt, f64::sqrt)
    }

    pub fn abs(self) -> Var<'t> {
        self.unary(Op::Abs, f64::abs)
    }

    pub fn clamp_min(self, lo: f64) -> Var<'t> {
        self.unary(|x| Op::ClampMin(x, lo), |v| v.max(lo))
    }

    /// Batched matrix product over the last two axes; leading axes broadcast.
    pub fn matmul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&other);
        let (value, rg) = {
            let nodes = self.tape.nodes();
            let (a, b) = (&nodes[self.id], &nodes[other.id]);
            let (ash, bsh) = (a.value.shape(), b.value.shape());
            if ash.len() < 2 || bsh.len() < 2 || ash[ash.len() - 1] != bsh[bsh.len() - 2] {
                return Err(Error::shape("matmul", ash, bsh));
            }
            let (m, k) = (ash[ash.len() - 2], ash[ash.len() - 1]);
            let n = bsh[bsh.len() - 1];
            let batch = broadcast_shape(&ash[..ash.len() - 2], &bsh[..bsh.len() - 2])
                .ok_or_else(|| Error::shape("matmul", ash, bsh))?;
            let sa = aligned_strides(&ash[..ash.len() - 2], &batch);
            let sb = aligned_strides(&bsh[..bsh.len() - 2], &batch);
            let count: usize = batch.iter().product();
            let mut data = vec![0.0; count * m * n];
            let (av, bv) = (a.value.data(), b.value.data());
            for_each2(&batch, &sa, &sb, |o, ia, ib| {
                gemm(
                    m,
                    k,
                    n,
                    &av[ia * m * k..],
                    false,
                    &bv[ib * k * n..],
                    false,
                    &mut data[o * m * n..],
                    false,
                );
            });
            let mut shape = batch;
            shape.extend([m, n]);
            (Tensor::new(shape, data)?, a.requires_grad || b.requires_grad)
        };
        Ok(self.tape.push(value, Op::MatMul(self.id, other.id), rg))
    }

    /// Matrix product of two 3-D tensors with equal batch size whose inner sums
    /// run in sorted order: permuting the contraction index leaves the result
    /// bit-identical. Meant for small attention mixes.
    pub fn matmul_sorted(self, other: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&other);
        let (value, rg) = {
            let nodes = self.tape.nodes();
            let (a, b) = (&nodes[self.id], &nodes[other.id]);
            let (ash, bsh) = (a.value.shape(), b.value.shape());
            if ash.len() != 3 || bsh.len() != 3 || ash[0] != bsh[0] || ash[2] != bsh[1] {
                return Err(Error::shape("matmul_sorted", ash, bsh));
            }
            let (batch, m, k, n) = (ash[0], ash[1], ash[2], bsh[2]);
            let (av, bv) = (a.value.data(), b.value.data());
            let mut data = vec![0.0; batch * m * n];
            let mut terms = Vec::with_capacity(k);
            for h in 0..batch {
                for i in 0..m {
                    for j in 0..n {
                        terms.clear();
                        terms.extend((0..k).map(|l| av[(h * m + i) * k + l] * bv[(h * k + l) * n + j]));
                        data[(h * m + i) * n + j] = sorted_sum(std::mem::take(&mut terms));
                    }
                }
            }
            (Tensor::new(vec![batch, m, n], data)?, a.requires_grad || b.requires_grad)
        };
        Ok(self.tape.push(value, Op::MatMul(self.id, other.id), rg))
    }

    pub fn permute(self, axes: &[usize]) -> Result<Var<'t>> {
        let (value, rg) = {
            let nodes = self.tape.nodes();
            let x = &nodes[self.id];
            let shape = x.value.shape();
            let mut seen = vec![false; shape.len()];
            if axes.len() != shape.len() {
                return Err(Error::shape("permute", shape, axes));
            }
            for &a in axes {
                if a >= shape.len() || seen[a] {
                    return Err(Error::shape("permute", shape, axes));
                }
                seen[a] = true;
            }
            let own = contiguous_strides(shape);
            let out: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
            let perm: Vec<usize> = axes.iter().map(|&a| own[a]).collect();
            let zeros = vec![0; perm.len()];
            let src = x.value.data();
            let mut data = vec![0.0; src.len()];
            for_each2(&out, &perm, &zeros, |o, ix, _| data[o] = src[ix]);
            (Tensor::new(out, data)?, x.requires_grad)
        };
        Ok(self.tape.push(value, Op::Permute(self.id, axes.to_vec()), rg))
    }

    /// Swaps the last two axes.
    pub fn transpose(self) -> Result<Var<'t>> {
        let n = self.value().ndim();
        if n < 2 {
            return Err(Error::Axis {
                axis: 1,
                shape: self.shape(),
            });
        }
        let mut axes: Vec<usize> = (0..n).collect();
        axes.swap(n - 2, n - 1);
        self.permute(&axes)
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t>> {
        let (value, rg) = {
            let nodes = self.tape.nodes();
            let x = &nodes[self.id];
            (x.value.clone().reshaped(shape.to_vec())?, x.requires_grad)
        };
        Ok(self.tape.push(value, Op::Reshape(self.id), rg))
    }

    fn check_axis(&self, axis: usize) -> Result<()> {
        let shape = self.shape();
        if axis >= shape.len() {
            return Err(Error::Axis { axis, shape });
        }
        Ok(())
    }

    /// Max-subtracted softmax along `axis`. The normalizer is summed in sorted
    /// order, so reordering entries along `axis` reorders the output exactly.
    pub fn softmax(self, axis: usize) -> Result<Var<'t>> {
        self.check_axis(axis)?;
        let (value, rg) = {
            let nodes = self.tape.nodes();
            let x = &nodes[self.id];
            let (outer, len, inner) = split_axis(x.value.shape(), axis);
            let src = x.value.data();
            let mut data = vec![0.0; src.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let at = |j: usize| (o * len + j) * inner + i;
                    let max = (0..len).map(|j| src[at(j)]).fold(f64::NEG_INFINITY, f64::max);
                    for j in 0..len {
                        data[at(j)] = (src[at(j)] - max).exp();
                    }
                    let sum = sorted_sum((0..len).map(|j| data[at(j)]).collect());
                    for j in 0..len {
                        data[at(j)] /= sum;
                    }
                }
            }
            (Tensor::new(x.value.shape().to_vec(), data)?, x.requires_grad)
        };
        Ok(self.tape.push(value, Op::Softmax(self.id, axis), rg))
    }

    /// Normalizes each row over the last axis, then applies `gamma`, `beta`.
    pub fn layer_norm(self, gamma: Var<'t>, beta: Var<'t>, eps: f64) -> Result<Var<'t>> {
        let (value, rg, xhat, rstd) = {
            let nodes = self.tape.nodes();
            let (x, g, b) = (&nodes[self.id], &nodes[gamma.id], &nodes[beta.id]);
            let shape = x.value.shape();
            let d = *shape.last().ok_or_else(|| Error::Axis {
                axis: 0,
                shape: shape.to_vec(),
            })?;
            if g.value.shape() != [d] || b.value.shape() != [d] {
                return Err(Error::shape("layer_norm", shape, g.value.shape()));
            }
            let src = x.value.data();
            let rows = src.len().checked_div(d).unwrap_or(0);
            let (gv, bv) = (g.value.data(), b.value.data());
            let mut xhat = vec![0.0; src.len()];
            let mut rstd = vec![0.0; rows];
            let mut data = vec![0.0; src.len()];
            for r in 0..rows {
                let row = &src[r * d..(r + 1) * d];
                let mean = row.iter().sum::<f64>() / d as f64;
                let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
                let s = 1.0 / (var + eps).sqrt();
                rstd[r] = s;
                for k in 0..d {
                    let h = (row[k] - mean) * s;
                    xhat[r * d + k] = h;
                    data[r * d + k] = h * gv[k] + bv[k];
                }
            }
            let rg = x.requires_grad || g.requires_grad || b.requires_grad;
            (Tensor::new(shape.to_vec(), data)?, rg, xhat, rstd)
        };
        Ok(self.tape.push(
            value,
            Op::LayerNorm {
                x: self.id,
                gamma: gamma.id,
                beta: beta.id,
                xhat,
                rstd,
            },
            rg,
        ))
    }

    /// Half-open range `start..end` along `axis`.
    pub fn slice(self, axis: usize, start: usize, end: usize) -> Result<Var<'t>> {
        self.check_axis(axis)?;
        let (value, rg) = {
            let nodes = self.tape.nodes();
            let x = &nodes[self.id];
            let shape = x.value.shape();
            if start > end || end > shape[axis] {
                return Err(Error::Contract(format!(
                    "slice {start}..{end} out of range for axis {axis} of {shape:?}"
                )));
            }
            let (outer, full, inner) = split_axis(shape, axis);
            let len = end - start;
            let src = x.value.data();
            let mut data = Vec::with_capacity(outer * len * inner);
            for o in 0..outer {
                let from = (o * full + start) * inner;
                data.extend_from_slice(&src[from..from + len * inner]);
            }
            let mut out = shape.to_vec();
            out[axis] = len;
            (Tensor::new(out, data)?, x.requires_grad)
        };
        Ok(self.tape.push(
            value,
            Op::Slice {
                x: self.id,
                axis,
                start,
            },
            rg,
        ))
    }

    /// Gathers rows (entries of axis 0); repeated indices are allowed.
    pub fn index_select(self, indices: &[usize]) -> Result<Var<'t>> {
        let (value, rg) = {
            let nodes = self.tape.nodes();
            let x = &nodes[self.id];
            let shape = x.value.shape();
            if shape.is_empty() {
                return Err(Error::Axis {
                    axis: 0,
                    shape: Vec::new(),
                });
            }
            let rows = shape[0];
            let width: usize = shape[1..].iter().product();
            let src = x.value.data();
            let mut data = Vec::with_capacity(indices.len() * width);
            for &i in indices {
                if i >= rows {
                    return Err(Error::Contract(format!("row index {i} out of {rows}")));
                }
                data.extend_from_slice(&src[i * width..(i + 1) * width]);
            }
            let mut out = shape.to_vec();
            out[0] = indices.len();
            (Tensor::new(out, data)?, x.requires_grad)
        };
        Ok(self.tape.push(
            value,
            Op::IndexSelect {
                x: self.id,
                indices: indices.to_vec(),
            },
            rg,
        ))
    }

    pub fn sum(self) -> Var<'t> {
        let (value, rg) = {
            let nodes = self.tape.nodes();
            let x = &nodes[self.id];
            (Tensor::scalar(x.value.data().iter().sum()), x.requires_grad)
        };
        self.tape.push(value, Op::SumAll(self.id), rg)
    }

    /// Mean of all entries (zero for an empty tensor).
    pub fn mean(self) -> Var<'t> {
        let (value, rg) = {
            let nodes = self.tape.nodes();
            let x = &nodes[self.id];
            let n = x.value.numel();
            let m = if n == 0 {
                0.0
            } else {
                x.value.data().iter().sum::<f64>() / n as f64
            };
            (Tensor::scalar(m), x.requires_grad)
        };
        self.tape.push(value, Op::MeanAll(self.id), rg)
    }

    /// Sum along `axis`, keeping it with length 1.
    pub fn sum_axis(self, axis: usize) -> Result<Var<'t>> {
        self.check_axis(axis)?;
        let (value, rg) = {
            let nodes = self.tape.nodes();
            let x = &nodes[self.id];
            let (outer, len, inner) = split_axis(x.value.shape(), axis);
            let src = x.value.data();
            let mut data = vec![0.0; outer * inner];
            for o in 0..outer {
                for j in 0..len {
                    for i in 0..inner {
                        data[o * inner + i] += src[(o * len + j) * inner + i];
                    }
                }
            }
            let mut out = x.value.shape().to_vec();
            out[axis] = 1;
            (Tensor::new(out, data)?, x.requires_grad)
        };
        Ok(self.tape.push(value, Op::SumAxis(self.id, axis), rg))
    }

    /// Minimum along `axis`, keeping it with length 1; the gradient flows to the
    /// first minimizing entry.
    pub fn min_axis(self, axis: usize) -> Result<Var<'t>> {
        self.check_axis(axis)?;
        let (value, rg, argmin) = {
            let nodes = self.tape.nodes();
            let x = &nodes[self.id];
            let (outer, len, inner) = split_axis(x.value.shape(), axis);
            if len == 0 {
                return Err(Error::Contract("min over an empty axis".into()));
            }
            let src = x.value.data();
            let mut data = vec![0.0; outer * inner];
            let mut argmin = vec![0; outer * inner];
            for o in 0..outer {
                for i in 0..inner {
                    let mut best = (o * len) * inner + i;
                    for j in 1..len {
                        let at = (o * len + j) * inner + i;
                        if src[at] < src[best] {
                            best = at;
                        }
                    }
                    data[o * inner + i] = src[best];
                    argmin[o * inner + i] = best;
                }
            }
            let mut out = x.value.shape().to_vec();
            out[axis] = 1;
            (Tensor::new(out, data)?, x.requires_grad, argmin)
        };
        Ok(self.tape.push(value, Op::MinAxis { x: self.id, argmin }, rg))
    }
}

/// Sum in ascending order; depends only on the multiset of terms.
fn sorted_sum(mut terms: Vec<f64>) -> f64 {
    terms.sort_by(f64::total_cmp);
    terms.iter().sum()
}

pub(crate) fn concat<'t>(tape: &'t Tape, parts: &[Var<'t>], axis: usize) -> Result<Var<'t>> {
    let first = parts
        .first()
        .ok_or_else(|| Error::Contract("concat of zero tensors".into()))?;
    first.check_axis(axis)?;
    let (value, rg) = {
        let nodes = tape.nodes();
        let base = nodes[first.id].value.shape().to_vec();
        let mut total = 0;
        for p in parts {
            let s = nodes[p.id].value.shape();
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(Error::shape("concat", &base, s));
            }
            total += s[axis];
        }
        let (outer, _, inner) = split_axis(&base, axis);
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for p in parts {
                let v = &nodes[p.id].value;
                let len = v.shape()[axis];
                data.extend_from_slice(&v.data()[o * len * inner..(o + 1) * len * inner]);
            }
        }
        let mut out = base;
        out[axis] = total;
        let rg = parts.iter().any(|p| nodes[p.id].requires_grad);
        (Tensor::new(out, data)?, rg)
    };
    Ok(tape.push(
        value,
        Op::Concat(parts.iter().map(|p| p.id).collect(), axis),
        rg,
    ))
}
