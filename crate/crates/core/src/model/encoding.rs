//! Fixed sinusoidal encodings: 2D token positions and relative frame offsets.

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

const BASE: f64 = 10_000.0;

/// Interleaved `sin, cos` pairs of `pos · ω_i` with `ω_i = BASE^(-2i/dim)`.
fn sinusoid(pos: f64, dim: usize, out: &mut [f64]) {
    for i in 0..dim / 2 {
        let omega = BASE.powf(-((2 * i) as f64) / dim as f64);
        out[2 * i] = (pos * omega).sin();
        out[2 * i + 1] = (pos * omega).cos();
    }
}

/// Row-major `(h · w) × dim` encoding of a token grid. The first half of each row
/// encodes the grid row, the second half the grid column.
pub fn positional_encoding_2d(h: usize, w: usize, dim: usize) -> Result<Tensor> {
    if dim == 0 || !dim.is_multiple_of(4) {
        return Err(Error::Config(format!("positional encoding needs dim divisible by 4, got {dim}")));
    }
    let half = dim / 2;
    let mut data = vec![0.0; h * w * dim];
    for r in 0..h {
        for c in 0..w {
            let row = &mut data[(r * w + c) * dim..(r * w + c + 1) * dim];
            sinusoid(r as f64, half, &mut row[..half]);
            sinusoid(c as f64, half, &mut row[half..]);
        }
    }
    Tensor::new(vec![h * w, dim], data)
}

/// Encoding of a frame's distance from the current frame (offset 0).
pub fn rfe(offset: usize, window: usize, dim: usize) -> Result<Vec<f64>> {
    if offset >= window {
        return Err(Error::Config(format!("frame offset {offset} outside window of {window}")));
    }
    if dim == 0 || !dim.is_multiple_of(2) {
        return Err(Error::Config(format!("frame encoding needs an even dim, got {dim}")));
    }
    let mut out = vec![0.0; dim];
    sinusoid(offset as f64, dim, &mut out);
    Ok(out)
}
