//! Central finite-difference gradient checking.
//!
//! The numeric side only ever calls the forward pass, so it stays independent
//! of the backward rules it is used to verify.

use crate::error::{Error, Result};

use super::tape::{Tape, TensorId};
use super::tensor::Tensor;

/// A scalar-valued tensor function built on a fresh tape per evaluation.
pub trait ScalarFn: Fn(&mut Tape, TensorId) -> Result<TensorId> {}
impl<F: Fn(&mut Tape, TensorId) -> Result<TensorId>> ScalarFn for F {}

fn eval<F: ScalarFn>(f: &F, x: &Tensor, requires_grad: bool) -> Result<(Tape, TensorId, TensorId)> {
    let mut tape = Tape::new();
    let xid = tape.input(x.clone(), requires_grad);
    let loss = f(&mut tape, xid)?;
    if !tape.value(loss).is_scalar() {
        return Err(Error::Contract(format!(
            "finite-difference check requires a scalar function, got shape {:?}",
            tape.value(loss).shape()
        )));
    }
    Ok((tape, xid, loss))
}

/// Gradient of `f` at `x` via the tape's backward pass.
pub fn analytic_gradient<F: ScalarFn>(f: &F, x: &Tensor) -> Result<Vec<f64>> {
    let (tape, xid, loss) = eval(f, x, true)?;
    let grads = tape.backward(loss)?;
    Ok(grads
        .get(xid)
        .map(|g| g.to_vec())
        .unwrap_or_else(|| vec![0.0; x.numel()]))
}

/// Gradient of `f` at `x` via central differences with step `h`.
pub fn numeric_gradient<F: ScalarFn>(f: &F, x: &Tensor, h: f64) -> Result<Vec<f64>> {
    if h <= 0.0 {
        return Err(Error::Contract(format!("step h must be positive, got {}", h)));
    }
    let mut grad = vec![0.0; x.numel()];
    for i in 0..x.numel() {
        let mut hi = x.clone();
        hi.data_mut()[i] += h;
        let (tape, _, loss) = eval(f, &hi, false)?;
        let plus = tape.scalar_value(loss)?;

        let mut lo = x.clone();
        lo.data_mut()[i] -= h;
        let (tape, _, loss) = eval(f, &lo, false)?;
        let minus = tape.scalar_value(loss)?;

        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite value while probing coordinate {}: f(+h)={}, f(-h)={}",
                i, plus, minus
            )));
        }
        grad[i] = (plus - minus) / (2.0 * h);
    }
    Ok(grad)
}

/// Max over coordinates of |a − n| / max(1e-8, |a| + |n|).
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / f64::max(1e-8, a.abs() + n.abs()))
        .fold(0.0, f64::max)
}

/// Compare the tape's gradient of `f` at `x` against central differences.
/// Returns the max relative error over coordinates.
pub fn finite_difference_check<F: ScalarFn>(f: &F, x: &Tensor, h: f64) -> Result<f64> {
    let analytic = analytic_gradient(f, x)?;
    if analytic.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric(
            "non-finite analytic gradient in finite-difference check".into(),
        ));
    }
    let numeric = numeric_gradient(f, x, h)?;
    Ok(max_relative_error(&analytic, &numeric))
}
