//! Central finite-difference checking of tape gradients.
//!
//! The numeric side only evaluates forward values, so it is independent of
//! every backward rule it checks.

use super::{Matrix, Tape, Var};
use crate::error::Result;

pub const DEFAULT_STEP: f64 = 1e-5;

#[derive(Clone, Debug)]
pub struct GradCheck {
    pub analytic: Matrix,
    pub numeric: Matrix,
    /// `||analytic - numeric|| / max(||analytic||, ||numeric||)`, 0 when both vanish.
    pub relative_error: f64,
}

/// Compare the tape gradient of the scalar produced by `f` against central
/// differences with step `h`, perturbing each entry of `input` in turn.
pub fn check<F>(input: &Matrix, h: f64, f: F) -> Result<GradCheck>
where
    F: for<'t> Fn(&'t Tape, Var<'t>) -> Result<Var<'t>>,
{
    let tape = Tape::new();
    let x = tape.param(input.clone());
    let y = f(&tape, x)?;
    let analytic = tape.backward(y).wrt(x);

    let eval = |m: Matrix| -> Result<f64> {
        let tape = Tape::new();
        let x = tape.param(m);
        Ok(f(&tape, x)?.value().sum())
    };

    let mut numeric = Matrix::zeros(input.rows(), input.cols());
    for k in 0..input.len() {
        let mut plus = input.clone();
        plus.as_mut_slice()[k] += h;
        let mut minus = input.clone();
        minus.as_mut_slice()[k] -= h;
        numeric.as_mut_slice()[k] = (eval(plus)? - eval(minus)?) / (2.0 * h);
    }

    let diff = analytic.sub(&numeric)?.frobenius_norm();
    let scale = analytic.frobenius_norm().max(numeric.frobenius_norm());
    let relative_error = if scale == 0.0 { 0.0 } else { diff / scale };
    Ok(GradCheck {
        analytic,
        numeric,
        relative_error,
    })
}
