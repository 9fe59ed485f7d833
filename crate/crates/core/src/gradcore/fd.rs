//! Central finite differences, the gradient oracle used throughout the
//! test suites. Independent of the tape: it only re-evaluates the scalar
//! function with perturbed parameters.

use crate::gradcore::{GradError, Tensor};

/// Central-difference gradient `(f(p+h) - f(p-h)) / 2h` per coordinate.
///
/// `f` must be deterministic and pure given the parameters. Unreliable at
/// kinks (|x| at 0 evaluates to the symmetric value 0).
pub fn finite_difference_gradient<F>(
    mut f: F,
    params: &[Tensor],
    h: f64,
) -> Result<Vec<Tensor>, GradError>
where
    F: FnMut(&[Tensor]) -> Result<f64, GradError>,
{
    if !(h > 0.0) {
        return Err(GradError::Domain {
            prim: "finite_difference_gradient",
            detail: format!("step must be positive, got {h}"),
        });
    }
    let mut work: Vec<Tensor> = params.to_vec();
    let mut grads: Vec<Tensor> = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
    for pi in 0..params.len() {
        for ci in 0..params[pi].len() {
            let orig = work[pi].data()[ci];
            work[pi].data_mut()[ci] = orig + h;
            let plus = f(&work)?;
            work[pi].data_mut()[ci] = orig - h;
            let minus = f(&work)?;
            work[pi].data_mut()[ci] = orig;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(GradError::NonFinite { prim: "finite_difference_gradient" });
            }
            grads[pi].data_mut()[ci] = (plus - minus) / (2.0 * h);
        }
    }
    Ok(grads)
}
