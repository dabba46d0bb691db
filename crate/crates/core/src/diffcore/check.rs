//! Gradient verification by central finite differences.
//!
//! The numeric side evaluates the function at detached perturbed points, so
//! it never touches the tape machinery it is used to validate.

use crate::error::{Error, Result};

use super::tape::Tape;
use super::tensor::Tensor;

fn scalar_value(out: &Tensor) -> Result<f64> {
    if out.shape() != (1, 1) {
        return Err(Error::NonScalarLoss {
            rows: out.rows(),
            cols: out.cols(),
        });
    }
    Ok(out.item())
}

/// Central-difference gradient of a scalar-valued `f` at `x`.
pub fn numeric_grad<F>(mut f: F, x: &Tensor, h: f64) -> Result<Vec<f64>>
where
    F: FnMut(&Tensor) -> Result<Tensor>,
{
    let base = x.data().to_vec();
    let mut grad = vec![0.0; base.len()];
    for i in 0..base.len() {
        let mut plus = base.clone();
        plus[i] += h;
        let mut minus = base.clone();
        minus[i] -= h;
        let fp = scalar_value(&f(&Tensor::from_rows(x.rows(), x.cols(), plus)?)?)?;
        let fm = scalar_value(&f(&Tensor::from_rows(x.rows(), x.cols(), minus)?)?)?;
        grad[i] = (fp - fm) / (2.0 * h);
    }
    Ok(grad)
}

/// Reverse-mode gradient of a scalar-valued `f` at `x`. Returns zeros when
/// `f` does not depend on `x`.
pub fn analytic_grad<F>(mut f: F, x: &Tensor) -> Result<Vec<f64>>
where
    F: FnMut(&Tensor) -> Result<Tensor>,
{
    let tape = Tape::new();
    let watched = x.detach();
    tape.watch(&watched);
    let out = f(&watched)?;
    scalar_value(&out)?;
    if !out.is_attached() {
        // f ignored its argument entirely; the gradient is zero.
        return Ok(vec![0.0; x.numel()]);
    }
    tape.backward(&out)?;
    Ok(watched.grad().unwrap_or_else(|| vec![0.0; x.numel()]))
}

/// Max over coordinates of |analytic - numeric| / max(1, |analytic|).
pub fn finite_diff_check<F>(mut f: F, x: &Tensor, h: f64) -> Result<f64>
where
    F: FnMut(&Tensor) -> Result<Tensor>,
{
    let analytic = analytic_grad(&mut f, x)?;
    let numeric = numeric_grad(&mut f, x, h)?;
    let mut worst = 0.0f64;
    for (a, n) in analytic.iter().zip(numeric.iter()) {
        let rel = (a - n).abs() / a.abs().max(1.0);
        worst = worst.max(rel);
    }
    Ok(worst)
}
