//! Central finite-difference gradient checking.

use super::{RawTensor, Tensor};
use crate::error::{Error, Result};

/// Compares the reverse-mode gradient of `f` at `x` against central
/// finite differences with the given `step`.
///
/// Returns `max_i |auto_i - fd_i| / max(1, |fd_i|)`, the worst relative
/// error over all coordinates. `f` is any scalar-valued graph builder;
/// it is re-evaluated `2 * numel` times on perturbed constants, so keep
/// inputs small.
pub fn finite_difference_check<F>(f: F, x: &RawTensor, step: f64) -> Result<f64>
where
    F: Fn(&Tensor) -> Result<Tensor>,
{
    if step <= 0.0 {
        return Err(Error::InvalidArgument("step must be positive".into()));
    }
    let leaf = Tensor::from_raw(x, true)?;
    let out = f(&leaf)?;
    let _ = out.item()?; // enforce scalar output
    out.backward()?;
    let auto = leaf.grad().unwrap_or_else(|| vec![0.0; x.numel()]);

    let eval = |data: Vec<f64>| -> Result<f64> {
        let t = Tensor::constant(x.shape.clone(), data)?;
        f(&t)?.item()
    };

    let mut worst: f64 = 0.0;
    for i in 0..x.numel() {
        let mut plus = x.data.clone();
        plus[i] += step;
        let mut minus = x.data.clone();
        minus[i] -= step;
        let fd = (eval(plus)? - eval(minus)?) / (2.0 * step);
        if !fd.is_finite() {
            return Err(Error::NonFinite {
                op: "finite_difference_check",
            });
        }
        let err = (auto[i] - fd).abs() / fd.abs().max(1.0);
        worst = worst.max(err);
    }
    Ok(worst)
}
