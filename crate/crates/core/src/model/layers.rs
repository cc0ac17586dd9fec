//! Parameterized building blocks: linear maps, layer norm, multi-head attention,
//! feed-forward blocks and the transformer layers built from them.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::Result;

pub(crate) const LN_EPS: f64 = 1e-5;

/// Tape and parameter store of one forward pass.
#[derive(Clone, Copy)]
pub(crate) struct Ctx<'t> {
    pub tape: &'t Tape,
    pub store: &'t ParamStore,
}

impl<'t> Ctx<'t> {
    pub fn param(&self, id: ParamId) -> Var<'t> {
        self.tape.param(self.store, id)
    }
}

/// Registers parameters under a common name prefix.
pub(crate) struct Builder<'a> {
    pub store: &'a mut ParamStore,
    pub rng: &'a mut ChaCha8Rng,
}

impl Builder<'_> {
    /// Glorot-uniform weights scaled by `gain`, zero bias.
    pub fn linear(&mut self, name: &str, fan_in: usize, fan_out: usize, gain: f64) -> Linear {
        let limit = gain * (6.0 / (fan_in + fan_out) as f64).sqrt();
        let data = (0..fan_in * fan_out)
            .map(|_| self.rng.gen_range(-limit..limit))
            .collect();
        let w = self
            .store
            .add(format!("{name}.weight"), Tensor::new(vec![fan_in, fan_out], data).expect("sized"));
        let b = self.store.add(format!("{name}.bias"), Tensor::zeros(vec![fan_out]));
        Linear { w, b }
    }

    pub fn norm(&mut self, name: &str, dim: usize) -> Norm {
        Norm {
            gamma: self.store.add(format!("{name}.gamma"), Tensor::ones(vec![dim])),
            beta: self.store.add(format!("{name}.beta"), Tensor::zeros(vec![dim])),
        }
    }

    pub fn attention(&mut self, name: &str, dim: usize, heads: usize) -> Attention {
        Attention {
            q: self.linear(&format!("{name}.q"), dim, dim, 1.0),
            k: self.linear(&format!("{name}.k"), dim, dim, 1.0),
            v: self.linear(&format!("{name}.v"), dim, dim, 1.0),
            o: self.linear(&format!("{name}.o"), dim, dim, 1.0),
            heads,
        }
    }

    pub fn ffn(&mut self, name: &str, dim: usize, hidden: usize) -> Ffn {
        Ffn {
            up: self.linear(&format!("{name}.up"), dim, hidden, 1.0),
            down: self.linear(&format!("{name}.down"), hidden, dim, 1.0),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn apply<'t>(&self, cx: Ctx<'t>, x: Var<'t>) -> Result<Var<'t>> {
        x.matmul(cx.param(self.w))?.add(cx.param(self.b))
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct Norm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl Norm {
    pub fn apply<'t>(&self, cx: Ctx<'t>, x: Var<'t>) -> Result<Var<'t>> {
        x.layer_norm(cx.param(self.gamma), cx.param(self.beta), LN_EPS)
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct Attention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub heads: usize,
}

impl Attention {
    /// Scaled dot-product attention of `L × D` queries over `S × D` keys/values.
    ///
    /// With `order_free`, the value mix sums in sorted order so that permuting
    /// the key/value rows leaves the output bit-identical.
    pub fn apply<'t>(&self, cx: Ctx<'t>, query: Var<'t>, memory: Var<'t>, order_free: bool) -> Result<Var<'t>> {
        let (l, d) = (query.shape()[0], query.shape()[1]);
        let s = memory.shape()[0];
        let h = self.heads;
        let dh = d / h;
        let q = self.q.apply(cx, query)?.reshape(&[l, h, dh])?.permute(&[1, 0, 2])?;
        let k = self.k.apply(cx, memory)?.reshape(&[s, h, dh])?.permute(&[1, 2, 0])?;
        let v = self.v.apply(cx, memory)?.reshape(&[s, h, dh])?.permute(&[1, 0, 2])?;
        let weights = q.matmul(k)?.scale(1.0 / (dh as f64).sqrt()).softmax(2)?;
        let mixed = if order_free {
            weights.matmul_sorted(v)?
        } else {
            weights.matmul(v)?
        };
        let merged = mixed.permute(&[1, 0, 2])?.reshape(&[l, d])?;
        self.o.apply(cx, merged)
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct Ffn {
    pub up: Linear,
    pub down: Linear,
}

impl Ffn {
    pub fn apply<'t>(&self, cx: Ctx<'t>, x: Var<'t>) -> Result<Var<'t>> {
        self.down.apply(cx, self.up.apply(cx, x)?.gelu())
    }
}

/// Pre-norm self-attention layer.
#[derive(Clone, Copy, Debug)]
pub(crate) struct EncoderLayer {
    pub norm1: Norm,
    pub attn: Attention,
    pub norm2: Norm,
    pub ffn: Ffn,
}

impl EncoderLayer {
    pub fn apply<'t>(&self, cx: Ctx<'t>, x: Var<'t>) -> Result<Var<'t>> {
        let h = self.norm1.apply(cx, x)?;
        let x = x.add(self.attn.apply(cx, h, h, false)?)?;
        x.add(self.ffn.apply(cx, self.norm2.apply(cx, x)?)?)
    }
}

/// Pre-norm decoder layer: query self-attention, cross-attention into memory, FFN.
#[derive(Clone, Copy, Debug)]
pub(crate) struct DecoderLayer {
    pub norm1: Norm,
    pub self_attn: Attention,
    pub norm2: Norm,
    pub cross_attn: Attention,
    pub norm3: Norm,
    pub ffn: Ffn,
}

impl DecoderLayer {
    pub fn apply<'t>(&self, cx: Ctx<'t>, q: Var<'t>, memory: Var<'t>) -> Result<Var<'t>> {
        let h = self.norm1.apply(cx, q)?;
        let q = q.add(self.self_attn.apply(cx, h, h, true)?)?;
        let q = q.add(self.cross_attn.apply(cx, self.norm2.apply(cx, q)?, memory, false)?)?;
        q.add(self.ffn.apply(cx, self.norm3.apply(cx, q)?)?)
    }
}
