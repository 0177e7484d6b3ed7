//! Damped Newton ascent with Armijo backtracking.

use nalgebra::{DVector, SymmetricEigen};

use super::objective::{Eval, Order};

#[derive(Debug, Clone, Copy)]
pub(crate) struct NewtonSettings {
    pub grad_tol: f64,
    pub max_iter: usize,
    pub armijo_c: f64,
    pub backtrack: f64,
    pub max_halvings: usize,
}

#[derive(Debug, Clone)]
pub(crate) struct NewtonOutcome {
    pub x: DVector<f64>,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
    pub line_search_failed: bool,
}

/// Ascent direction from the gradient and a Hessian made negative definite by
/// shifting its spectrum; plain gradient if the decomposition is unusable.
fn direction(e: &Eval) -> DVector<f64> {
    if e.hess.iter().any(|v| !v.is_finite()) {
        return e.grad.clone();
    }
    let eig = SymmetricEigen::new((&e.hess + e.hess.transpose()) * 0.5);
    let scale = eig.eigenvalues.amax().max(f64::MIN_POSITIVE);
    let eps = 1e-8 * scale;
    let top = eig.eigenvalues.max();
    let shift = if top > -eps { eps + top } else { 0.0 };
    let vt_g = eig.eigenvectors.transpose() * &e.grad;
    let scaled = DVector::from_fn(vt_g.len(), |i, _| vt_g[i] / (shift - eig.eigenvalues[i]));
    let d = &eig.eigenvectors * scaled;
    if d.iter().all(|v| v.is_finite()) {
        d
    } else {
        e.grad.clone()
    }
}

/// Maximize `f` from `x0`. `f` returns a `-inf` value at infeasible points.
pub(crate) fn maximize(
    mut f: impl FnMut(&DVector<f64>, Order) -> Eval,
    x0: DVector<f64>,
    s: &NewtonSettings,
) -> NewtonOutcome {
    let mut x = x0;
    let mut current = f(&x, Order::Hessian);
    let mut out = NewtonOutcome {
        x: x.clone(),
        value: current.value,
        iterations: 0,
        converged: false,
        line_search_failed: false,
    };
    if !current.value.is_finite() {
        return out;
    }
    for it in 0..s.max_iter {
        out.iterations = it;
        if x.is_empty() || current.grad.amax() < s.grad_tol {
            out.converged = true;
            break;
        }
        let mut d = direction(&current);
        let mut slope = current.grad.dot(&d);
        if !(slope > 0.0) {
            d = current.grad.clone();
            slope = current.grad.dot(&d);
        }
        // Expected gain below floating-point resolution of the objective.
        if slope < 1e-15 * current.value.abs().max(1.0) {
            out.converged = true;
            break;
        }
        let search = |d: &DVector<f64>, slope: f64, f: &mut dyn FnMut(&DVector<f64>, Order) -> Eval| {
            let mut kappa = 1.0;
            for _ in 0..=s.max_halvings {
                let trial = &x + d * kappa;
                let v = f(&trial, Order::Value).value;
                if v.is_finite() && v >= current.value + s.armijo_c * kappa * slope {
                    return Some(trial);
                }
                kappa *= s.backtrack;
            }
            None
        };
        let mut accepted = search(&d, slope, &mut f);
        if accepted.is_none() && d != current.grad {
            let g = current.grad.clone();
            accepted = search(&g, g.dot(&g), &mut f);
        }
        match accepted {
            Some(next) => {
                x = next;
                current = f(&x, Order::Hessian);
                out.iterations = it + 1;
            }
            // Predicted gain within rounding noise of the objective.
            None if slope < 1e-10 * current.value.abs().max(1.0) => {
                out.converged = true;
                break;
            }
            None => {
                out.line_search_failed = true;
                break;
            }
        }
    }
    if !out.converged && !out.line_search_failed && current.grad.amax() < s.grad_tol {
        out.converged = true;
    }
    out.x = x;
    out.value = current.value;
    out
}
