//! Damped Newton iteration for small square score systems, with a central
//! finite-difference Jacobian. Used to solve estimating equations `T(θ) = 0`
//! where evaluating `T` can fail outside a feasible region (for instance when
//! a trial parameter leaves the positive-definite cone); infeasible steps are
//! halved rather than aborted.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NewtonError {
    #[error("residual evaluation failed at the initial point: {0}")]
    InitialEvaluation(String),
    #[error("Jacobian is numerically singular at iteration {iter}")]
    SingularJacobian { iter: usize, trace: Vec<NewtonTraceEntry> },
    #[error("step rejected after {halvings} halvings at iteration {iter}: {reason}")]
    StepRejected {
        iter: usize,
        halvings: usize,
        reason: String,
        trace: Vec<NewtonTraceEntry>,
    },
    #[error("no convergence after {max_iter} iterations (last residual norm {last_norm:.3e})")]
    MaxIterations {
        max_iter: usize,
        last_norm: f64,
        trace: Vec<NewtonTraceEntry>,
    },
    #[error("finite-difference Jacobian evaluation failed at iteration {iter}: {reason}")]
    JacobianEvaluation {
        iter: usize,
        reason: String,
        trace: Vec<NewtonTraceEntry>,
    },
}

impl NewtonError {
    /// Iteration trace up to the failure, when one exists.
    pub fn trace(&self) -> &[NewtonTraceEntry] {
        match self {
            NewtonError::InitialEvaluation(_) => &[],
            NewtonError::SingularJacobian { trace, .. }
            | NewtonError::StepRejected { trace, .. }
            | NewtonError::MaxIterations { trace, .. }
            | NewtonError::JacobianEvaluation { trace, .. } => trace,
        }
    }
}

#[derive(Debug, Clone)]
pub struct NewtonOptions {
    /// Convergence threshold on the residual infinity norm.
    pub residual_tol: f64,
    /// Convergence threshold on the step infinity norm.
    pub step_tol: f64,
    /// Relative finite-difference step: `h_i = fd_step_rel * max(1, |x_i|)`.
    pub fd_step_rel: f64,
    pub max_iter: usize,
    pub max_halvings: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        NewtonOptions {
            residual_tol: 1e-8,
            step_tol: 1e-12,
            fd_step_rel: 1e-6,
            max_iter: 200,
            max_halvings: 30,
        }
    }
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct NewtonTraceEntry {
    pub iter: usize,
    pub params: Vec<f64>,
    pub residual_norm: f64,
    /// Damping factor actually used for the step into this iterate (1 = full).
    pub step_scale: f64,
}

#[derive(Debug, Clone)]
pub struct NewtonResult {
    pub params: Vec<f64>,
    pub iterations: usize,
    pub residual_norm: f64,
    pub converged: bool,
    pub trace: Vec<NewtonTraceEntry>,
}

fn inf_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0f64, |acc, x| acc.max(x.abs()))
}

/// Solves `f(x) = 0` with damped Newton steps. `f` returns `Err` with a
/// reason when the point is infeasible; such points are never accepted.
pub fn solve<F>(f: F, init: &[f64], opts: &NewtonOptions) -> Result<NewtonResult, NewtonError>
where
    F: Fn(&[f64]) -> Result<DVector<f64>, String>,
{
    let dim = init.len();
    let mut x = DVector::from_column_slice(init);
    let mut fx = f(x.as_slice()).map_err(NewtonError::InitialEvaluation)?;
    let mut trace = vec![NewtonTraceEntry {
        iter: 0,
        params: x.as_slice().to_vec(),
        residual_norm: inf_norm(&fx),
        step_scale: 1.0,
    }];

    for iter in 0..opts.max_iter {
        let res_norm = inf_norm(&fx);
        if res_norm <= opts.residual_tol {
            return Ok(NewtonResult {
                params: x.as_slice().to_vec(),
                iterations: iter,
                residual_norm: res_norm,
                converged: true,
                trace,
            });
        }

        // central finite-difference Jacobian, falling back to a one-sided
        // difference when a perturbed point is infeasible
        let mut jac = DMatrix::<f64>::zeros(dim, dim);
        for j in 0..dim {
            let h = opts.fd_step_rel * x[j].abs().max(1.0);
            let mut xp = x.clone();
            xp[j] += h;
            let mut xm = x.clone();
            xm[j] -= h;
            let fp = f(xp.as_slice());
            let fm = f(xm.as_slice());
            let col = match (fp, fm) {
                (Ok(fp), Ok(fm)) => (fp - fm) / (2.0 * h),
                (Ok(fp), Err(_)) => (fp - &fx) / h,
                (Err(_), Ok(fm)) => (&fx - fm) / h,
                (Err(e), Err(_)) => {
                    return Err(NewtonError::JacobianEvaluation { iter, reason: e, trace })
                }
            };
            jac.set_column(j, &col);
        }

        let lu = jac.clone().lu();
        let full_step = match lu.solve(&(-&fx)) {
            Some(s) if s.iter().all(|v| v.is_finite()) => s,
            _ => return Err(NewtonError::SingularJacobian { iter, trace }),
        };
        // additional singularity guard: an absurdly amplified step means the
        // solve only succeeded through rounding
        let jac_scale = jac.amax();
        if jac_scale == 0.0 || !full_step.amax().is_finite() {
            return Err(NewtonError::SingularJacobian { iter, trace });
        }

        let mut scale = 1.0f64;
        let mut halvings = 0usize;
        let (next_x, next_fx) = loop {
            let cand = &x + &full_step * scale;
            match f(cand.as_slice()) {
                Ok(fc) if fc.iter().all(|v| v.is_finite()) => break (cand, fc),
                Ok(_) | Err(_) if halvings >= opts.max_halvings => {
                    let reason = match f(cand.as_slice()) {
                        Err(e) => e,
                        Ok(_) => "non-finite residual".to_string(),
                    };
                    return Err(NewtonError::StepRejected { iter, halvings, reason, trace });
                }
                Ok(_) | Err(_) => {
                    scale *= 0.5;
                    halvings += 1;
                }
            }
        };

        let step_norm = inf_norm(&(full_step * scale));
        x = next_x;
        fx = next_fx;
        trace.push(NewtonTraceEntry {
            iter: iter + 1,
            params: x.as_slice().to_vec(),
            residual_norm: inf_norm(&fx),
            step_scale: scale,
        });

        if step_norm < opts.step_tol {
            let res_norm = inf_norm(&fx);
            return Ok(NewtonResult {
                params: x.as_slice().to_vec(),
                iterations: iter + 1,
                residual_norm: res_norm,
                converged: res_norm <= opts.residual_tol,
                trace,
            });
        }
    }

    Err(NewtonError::MaxIterations {
        max_iter: opts.max_iter,
        last_norm: inf_norm(&fx),
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn solves_smooth_system() {
        // roots of (x^2 - 4, x*y - 2): (2, 1)
        let f = |p: &[f64]| {
            Ok(DVector::from_vec(vec![p[0] * p[0] - 4.0, p[0] * p[1] - 2.0]))
        };
        let res = solve(&f, &[3.0, 3.0], &NewtonOptions::default()).unwrap();
        assert!(res.converged);
        assert_relative_eq!(res.params[0], 2.0, epsilon = 1e-7);
        assert_relative_eq!(res.params[1], 1.0, epsilon = 1e-7);
        assert!(res.trace.len() >= 2);
    }

    #[test]
    fn singular_jacobian_is_reported() {
        // residual ignores the second coordinate entirely
        let f = |p: &[f64]| Ok(DVector::from_vec(vec![p[0] - 1.0, 2.0 * (p[0] - 1.0)]));
        let err = solve(&f, &[5.0, 5.0], &NewtonOptions::default()).unwrap_err();
        assert!(matches!(err, NewtonError::SingularJacobian { .. }));
    }

    #[test]
    fn infeasible_region_halves_then_errors() {
        // feasible only on x < 1; the root at x = 3 is unreachable
        let f = |p: &[f64]| {
            if p[0] >= 1.0 {
                Err("outside feasible region".to_string())
            } else {
                Ok(DVector::from_vec(vec![p[0] - 3.0]))
            }
        };
        let err = solve(&f, &[0.0], &NewtonOptions::default()).unwrap_err();
        match err {
            NewtonError::StepRejected { halvings, .. } => assert_eq!(halvings, 30),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn feasibility_damping_still_converges() {
        // root at 0.5; full first step from -6 overshoots past the barrier at 1
        let f = |p: &[f64]| {
            if p[0] >= 1.0 {
                Err("barrier".to_string())
            } else {
                Ok(DVector::from_vec(vec![p[0] - 0.5]))
            }
        };
        let res = solve(&f, &[-6.0], &NewtonOptions::default()).unwrap();
        assert!(res.converged);
        assert_relative_eq!(res.params[0], 0.5, epsilon = 1e-9);
    }
}
