//! Central finite differences, the independent oracle every gradient path in
//! this crate is checked against. f64 only: the tolerances in the test suite
//! assume double precision.

use crate::error::{Error, Result};

/// |a-b| relative to the larger magnitude, with the denominator floored at
/// 1e-12 so exact zeros compare clean.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-12)
}

/// Max elementwise `rel_err` over two parallel gradient sets.
pub fn max_rel_err(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let mut worst = 0.0f64;
    for (x, y) in a.iter().zip(b) {
        for (&p, &q) in x.iter().zip(y) {
            worst = worst.max(rel_err(p, q));
        }
    }
    worst
}

/// Compare tape gradients against central finite differences of `f` over
/// every coordinate of every parameter tensor. Returns the max relative
/// error. `f` must be deterministic; this is verified by re-evaluation.
pub fn finite_diff_check(
    f: &dyn Fn(&[Vec<f64>]) -> Result<f64>,
    params: &[Vec<f64>],
    tape_grads: &[Vec<f64>],
    step: f64,
) -> Result<f64> {
    assert!(step > 0.0, "finite-difference step must be positive");
    assert_eq!(params.len(), tape_grads.len());

    let base = f(params)?;
    let again = f(params)?;
    if base.to_bits() != again.to_bits() {
        return Err(Error::NonDeterministicFunction(base, again));
    }

    let mut work: Vec<Vec<f64>> = params.to_vec();
    let mut worst = 0.0f64;
    for (pi, grad) in tape_grads.iter().enumerate() {
        assert_eq!(grad.len(), params[pi].len(), "gradient/parameter length mismatch");
        for i in 0..work[pi].len() {
            let orig = work[pi][i];
            work[pi][i] = orig + step;
            let up = f(&work)?;
            work[pi][i] = orig - step;
            let down = f(&work)?;
            work[pi][i] = orig;
            let fd = (up - down) / (2.0 * step);
            worst = worst.max(rel_err(fd, grad[i]));
        }
    }
    Ok(worst)
}
