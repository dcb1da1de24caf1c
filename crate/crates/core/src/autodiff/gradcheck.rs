//! Central-difference gradient verification.
//!
//! The checker never touches the graph: it only evaluates the supplied
//! closure, so it stays an independent oracle for whatever analytic
//! gradient it is handed.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub pass: bool,
}

/// Compare `analytic_grad` against central differences of `f` at `params`.
///
/// Relative error per coordinate uses a `max(|a|, |n|, 1e-8)` denominator.
/// `f` must be deterministic (freeze any RNG before calling); this is
/// checked by evaluating the base point twice.
pub fn finite_difference_check<F>(
    mut f: F,
    params: &[f64],
    analytic_grad: &[f64],
    epsilon: f64,
    tolerance: f64,
) -> Result<GradCheckReport>
where
    F: FnMut(&[f64]) -> f64,
{
    if epsilon <= 0.0 {
        return Err(Error::contract("finite_difference_check: epsilon must be > 0"));
    }
    if params.len() != analytic_grad.len() {
        return Err(Error::contract(format!(
            "finite_difference_check: {} params but {} gradient entries",
            params.len(),
            analytic_grad.len()
        )));
    }
    let first = f(params);
    let second = f(params);
    if first.to_bits() != second.to_bits() {
        return Err(Error::contract(
            "finite_difference_check: f is not deterministic (RNG not frozen?)",
        ));
    }

    let mut work = params.to_vec();
    let mut max_rel_err = 0.0f64;
    for i in 0..params.len() {
        let orig = work[i];
        work[i] = orig + epsilon;
        let plus = f(&work);
        work[i] = orig - epsilon;
        let minus = f(&work);
        work[i] = orig;
        let numeric = (plus - minus) / (2.0 * epsilon);
        let analytic = analytic_grad[i];
        let denom = analytic.abs().max(numeric.abs()).max(1e-8);
        let rel = (analytic - numeric).abs() / denom;
        if rel > max_rel_err {
            max_rel_err = rel;
        }
    }
    Ok(GradCheckReport {
        max_rel_err,
        pass: max_rel_err <= tolerance,
    })
}
