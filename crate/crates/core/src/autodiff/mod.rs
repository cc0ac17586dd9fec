//! Dense `f64` tensors with a record-on-execute tape for reverse-mode gradients.
//!
//! Values flow through [`Var`] handles borrowed from a [`Tape`]. Learnable tensors
//! live in a [`ParamStore`] and enter a tape through [`Tape::param`]; a parameter
//! registered twice on the same tape yields the same node.

mod kernels;
mod ops;
mod params;
mod tape;
mod tensor;

pub use params::{ParamId, ParamStore, Parameter};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

use crate::error::{Error, Result};

/// Relative error between an analytic and a numeric derivative.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / 1f64.max(analytic.abs()).max(numeric.abs())
}

/// Maximum relative error between the tape gradient of `f` at `x` and central
/// differences with step `eps`.
pub fn grad_check<F>(f: F, x: &Tensor, eps: f64) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape, Var<'t>) -> Result<Var<'t>>,
{
    let analytic = {
        let tape = Tape::new();
        let input = tape.leaf(x.clone());
        let loss = f(&tape, input)?;
        check_finite(loss.item()?, 0)?;
        tape.backward(loss)?
            .get(input)
            .unwrap_or_else(|| Tensor::zeros(x.shape().to_vec()))
    };
    let eval = |probe: Tensor, coordinate: usize| -> Result<f64> {
        let tape = Tape::new();
        let v = tape.constant(probe);
        let value = f(&tape, v)?.item()?;
        check_finite(value, coordinate)
    };
    let mut worst = 0.0f64;
    for i in 0..x.numel() {
        let mut plus = x.clone();
        plus.data_mut()[i] += eps;
        let mut minus = x.clone();
        minus.data_mut()[i] -= eps;
        let numeric = (eval(plus, i)? - eval(minus, i)?) / (2.0 * eps);
        worst = worst.max(relative_error(analytic.data()[i], numeric));
    }
    Ok(worst)
}

/// Worst coordinate found by [`grad_check_params`].
#[derive(Clone, Debug)]
pub struct ParamCheck {
    pub max_relative_error: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub coordinates: usize,
}

/// Central-difference check of every scalar in `store` against the tape gradient of
/// the scalar built by `f`.
pub fn grad_check_params<F>(store: &ParamStore, f: F, eps: f64) -> Result<ParamCheck>
where
    F: for<'t> Fn(&'t Tape, &'t ParamStore) -> Result<Var<'t>>,
{
    let mut work = store.clone();
    work.zero_grad();
    {
        let tape = Tape::new();
        let loss = f(&tape, store)?;
        check_finite(loss.item()?, 0)?;
        tape.backward_into(loss, &mut work)?;
    }
    let eval = |s: &ParamStore, coordinate: usize| -> Result<f64> {
        let tape = Tape::new();
        let value = f(&tape, s)?.item()?;
        check_finite(value, coordinate)
    };
    let mut report = ParamCheck {
        max_relative_error: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        coordinates: 0,
    };
    let mut probe = store.clone();
    let mut flat = 0;
    for (pid, param) in store.iter() {
        for i in 0..param.value.numel() {
            let orig = param.value.data()[i];
            probe.get_mut(pid).value.data_mut()[i] = orig + eps;
            let up = eval(&probe, flat)?;
            probe.get_mut(pid).value.data_mut()[i] = orig - eps;
            let down = eval(&probe, flat)?;
            probe.get_mut(pid).value.data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let err = relative_error(work.get(pid).grad.data()[i], numeric);
            if err > report.max_relative_error {
                report.max_relative_error = err;
                report.worst_param = param.name.clone();
                report.worst_index = i;
            }
            flat += 1;
        }
    }
    report.coordinates = flat;
    Ok(report)
}

fn check_finite(value: f64, coordinate: usize) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NonFinite { coordinate })
    }
}
