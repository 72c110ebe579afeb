//! Central-difference gradient checking.
//!
//! The finite-difference side only ever evaluates `f` forward, so it is an
//! oracle independent of the backward pass it validates.

use super::{backward, no_grad, GradMode, Tensor};
use crate::error::{Error, Result};
use crate::scalar::{lit, Scalar};

/// Compare the analytic gradient of a scalar-valued `f` at `x` against
/// central finite differences. Returns the maximum relative error
/// `|a - fd| / max(1, |a|, |fd|)` over all coordinates.
pub fn grad_check<T, F>(f: F, x: &Tensor<T>, eps: f64) -> Result<f64>
where
    T: Scalar,
    F: Fn(&Tensor<T>) -> Result<Tensor<T>>,
{
    grad_check_masked(f, x, eps, |_| false)
}

/// [`grad_check`] with a per-coordinate exclusion predicate. Use it to skip
/// coordinates sitting near a relu kink, where the central difference
/// straddles the non-differentiable point and is not a valid oracle.
pub fn grad_check_masked<T, F, S>(f: F, x: &Tensor<T>, eps: f64, skip: S) -> Result<f64>
where
    T: Scalar,
    F: Fn(&Tensor<T>) -> Result<Tensor<T>>,
    S: Fn(usize) -> bool,
{
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(Error::invalid(format!("grad_check eps {} outside [1e-7, 1e-3]", eps)));
    }
    let xp = x.requiring_grad();
    let y = f(&xp)?;
    if y.numel() != 1 {
        return Err(Error::Graph("grad_check expects a scalar-valued function".into()));
    }
    let grads = backward(&y, GradMode::EVAL)?;
    let analytic = grads.get_or_zeros(&xp);
    let analytic: Vec<f64> = analytic.data().iter().map(|v| v.to_f64().unwrap()).collect();

    let base: Vec<f64> = x.data().iter().map(|v| v.to_f64().unwrap()).collect();
    let eval = |pt: &[f64]| -> Result<f64> {
        let t = Tensor::from_vec(x.shape(), pt.iter().map(|&v| lit(v)).collect())?;
        let out = no_grad(|| f(&t))?;
        out.item().map(|v| v.to_f64().unwrap())
    };

    let mut max_rel = 0.0f64;
    let mut pt = base.clone();
    for i in 0..base.len() {
        if skip(i) {
            continue;
        }
        pt[i] = base[i] + eps;
        let fp = eval(&pt)?;
        pt[i] = base[i] - eps;
        let fm = eval(&pt)?;
        pt[i] = base[i];
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::NonFinite { context: "grad_check finite difference", index: i });
        }
        let fd = (fp - fm) / (2.0 * eps);
        let rel = (analytic[i] - fd).abs() / 1.0f64.max(analytic[i].abs()).max(fd.abs());
        if !rel.is_finite() {
            return Err(Error::NonFinite { context: "grad_check relative error", index: i });
        }
        max_rel = max_rel.max(rel);
    }
    Ok(max_rel)
}
