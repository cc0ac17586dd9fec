//! Temporal fusion: embedding fusion (TEFM), prediction fusion (TOFM) and the
//! per-sequence history buffer used at inference.

use std::collections::VecDeque;

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};

use super::encoding::rfe;
use super::layers::{Attention, Ctx, Linear, Norm};

/// One past frame as seen by the fusion modules, oldest first in a history slice.
#[derive(Clone, Copy)]
pub struct HistoryFrame<'t> {
    /// `N × D`
    pub embeddings: Var<'t>,
    /// `N × 32`
    pub keypoints: Var<'t>,
    /// `N × 9`
    pub pose: Var<'t>,
}

/// Frame offsets of a history of `len` frames followed by the current frame.
fn offsets(len: usize) -> impl Iterator<Item = usize> {
    (1..=len).rev()
}

/// `rows × dim` matrix whose every row is the encoding of `offset`, or zeros when
/// the encoding is switched off.
fn rfe_rows<'t>(tape: &'t Tape, offset: usize, window: usize, rows: usize, dim: usize, on: bool) -> Result<Var<'t>> {
    let code = if on { rfe(offset, window, dim)? } else { vec![0.0; dim] };
    let data = code.iter().copied().cycle().take(rows * dim).collect();
    Ok(tape.constant(Tensor::new(vec![rows, dim], data)?))
}

fn stack_rows<'t>(tape: &'t Tape, parts: &[Var<'t>]) -> Result<Var<'t>> {
    if parts.len() == 1 {
        return Ok(parts[0]);
    }
    tape.concat(parts, 0)
}

/// Cross-attention from the current embeddings into all past embeddings, each
/// tagged with its frame offset.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Tefm {
    pub proj: Linear,
    pub attn: Attention,
    pub norm: Norm,
}

impl Tefm {
    pub fn apply<'t>(&self, cx: Ctx<'t>, history: &[Var<'t>], current: Var<'t>, window: usize, use_rfe: bool) -> Result<Var<'t>> {
        if history.is_empty() {
            return Ok(current);
        }
        check_rows(history, &current, "embedding")?;
        let [n, d] = dims(&current);
        let tag = |x: Var<'t>, offset: usize| -> Result<Var<'t>> {
            let code = rfe_rows(cx.tape, offset, window, n, d, use_rfe)?;
            self.proj.apply(cx, cx.tape.concat(&[x, code], 1)?)
        };
        let keys = history
            .iter()
            .zip(offsets(history.len()))
            .map(|(&h, o)| tag(h, o))
            .collect::<Result<Vec<_>>>()?;
        let memory = stack_rows(cx.tape, &keys)?;
        let query = tag(current, 0)?;
        let attended = self.attn.apply(cx, query, memory, true)?;
        current.add(self.norm.apply(cx, attended)?)
    }
}

/// Cross-attention over past head outputs of width `P`, in a `D`-wide space.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Tofm {
    pub inp: Linear,
    pub attn: Attention,
    pub out: Linear,
}

impl Tofm {
    pub fn apply<'t>(&self, cx: Ctx<'t>, history: &[Var<'t>], current: Var<'t>, window: usize, dim: usize, use_rfe: bool) -> Result<Var<'t>> {
        if history.is_empty() {
            return Ok(current);
        }
        check_rows(history, &current, "prediction")?;
        let n = current.shape()[0];
        let lift = |x: Var<'t>, offset: usize| -> Result<Var<'t>> {
            let z = self.inp.apply(cx, x)?;
            if use_rfe {
                z.add(rfe_rows(cx.tape, offset, window, n, dim, true)?)
            } else {
                Ok(z)
            }
        };
        let keys = history
            .iter()
            .zip(offsets(history.len()))
            .map(|(&h, o)| lift(h, o))
            .collect::<Result<Vec<_>>>()?;
        let memory = stack_rows(cx.tape, &keys)?;
        let attended = self.attn.apply(cx, lift(current, 0)?, memory, true)?;
        current.add(self.out.apply(cx, attended)?)
    }
}

fn dims(v: &Var<'_>) -> [usize; 2] {
    let s = v.shape();
    [s[0], s[1]]
}

fn check_rows(history: &[Var<'_>], current: &Var<'_>, what: &'static str) -> Result<()> {
    let want = current.shape();
    for h in history {
        if h.shape() != want {
            return Err(Error::shape(what, &h.shape(), &want));
        }
    }
    Ok(())
}

/// Values kept for one past frame.
#[derive(Clone, Debug)]
pub struct BufferedFrame {
    pub embeddings: Tensor,
    pub keypoints: Tensor,
    pub pose: Tensor,
}

/// Past frames of one sequence, at most `window - 1` of them, oldest first.
#[derive(Clone, Debug)]
pub struct TemporalBuffer {
    frames: VecDeque<BufferedFrame>,
    capacity: usize,
}

impl TemporalBuffer {
    pub fn new(window: usize) -> Self {
        TemporalBuffer {
            frames: VecDeque::with_capacity(window),
            capacity: window.saturating_sub(1),
        }
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn clear(&mut self) {
        self.frames.clear();
    }

    /// Appends the newest frame, dropping the oldest when full.
    pub fn push(&mut self, frame: BufferedFrame) {
        if self.capacity == 0 {
            return;
        }
        if self.frames.len() == self.capacity {
            self.frames.pop_front();
        }
        self.frames.push_back(frame);
    }

    pub fn frames(&self) -> impl Iterator<Item = &BufferedFrame> {
        self.frames.iter()
    }

    /// The buffered frames as constants on `tape`.
    pub fn history<'t>(&self, tape: &'t Tape) -> Vec<HistoryFrame<'t>> {
        self.frames
            .iter()
            .map(|f| HistoryFrame {
                embeddings: tape.constant(f.embeddings.clone()),
                keypoints: tape.constant(f.keypoints.clone()),
                pose: tape.constant(f.pose.clone()),
            })
            .collect()
    }
}
