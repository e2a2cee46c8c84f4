use alloc::vec::Vec;

use super::{Tape, Tensor, TensorError, Var};

const ABSOLUTE_FLOOR: f64 = 1e-6;
/// Rounding error of one function evaluation, in units of `ε |f|`.
const ROUNDOFF_ULPS: f64 = 4.0;

/// Compares reverse-mode gradients of a scalar function with central
/// differences.
///
/// `f` builds the function on a fresh tape from a leaf holding the
/// parameters. Returns the maximum over coordinates of
/// `max(|analytic - numeric| - r, 0) / max(|analytic| + |numeric|, 1e-6)`,
/// where `r` bounds the round-off of the central difference itself. Both
/// allowances exist for gradients that are exactly zero (e.g. attention key
/// biases), whose numeric estimate is pure rounding noise.
pub fn finite_difference_check<F>(f: F, point: &Tensor, eps: f64) -> Result<f64, TensorError>
where
    F: for<'t> Fn(&'t Tape, Var<'t>) -> Result<Var<'t>, TensorError>,
{
    if !(eps > 0.0) {
        return Err(TensorError::InvalidArgument {
            op: "finite_difference_check",
            reason: "eps must be positive",
        });
    }
    let analytic = gradient(&f, point)?;
    let eval = |p: Tensor| -> Result<f64, TensorError> {
        let tape = Tape::new();
        let x = tape.constant(p);
        Ok(f(&tape, x)?.item())
    };
    let mut worst = 0.0f64;
    for i in 0..point.numel() {
        let mut plus = point.clone();
        plus.data_mut()[i] += eps;
        let mut minus = point.clone();
        minus.data_mut()[i] -= eps;
        let (fp, fm) = (eval(plus)?, eval(minus)?);
        let numeric = (fp - fm) / (2.0 * eps);
        let roundoff = ROUNDOFF_ULPS * f64::EPSILON * (fp.abs() + fm.abs()) / (2.0 * eps);
        let a = analytic[i];
        let err = ((a - numeric).abs() - roundoff).max(0.0) / (a.abs() + numeric.abs()).max(ABSOLUTE_FLOOR);
        worst = worst.max(err);
    }
    Ok(worst)
}

/// Reverse-mode gradient of `f` at `point`.
pub fn gradient<F>(f: &F, point: &Tensor) -> Result<Vec<f64>, TensorError>
where
    F: for<'t> Fn(&'t Tape, Var<'t>) -> Result<Var<'t>, TensorError>,
{
    let tape = Tape::new();
    let x = tape.leaf(point.clone());
    let y = f(&tape, x)?;
    tape.backward(y)?;
    Ok(tape.grad(x).into_data())
}

/// Pins a closure to the higher-ranked signature expected by
/// [`finite_difference_check`], which closure inference cannot do alone.
pub fn scalar_fn<F>(f: F) -> F
where
    F: for<'t> Fn(&'t Tape, Var<'t>) -> Result<Var<'t>, TensorError>,
{
    f
}
