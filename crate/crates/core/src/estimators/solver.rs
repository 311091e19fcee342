//! Derivative-free Levenberg–Marquardt for square systems `F(θ) = 0`,
//! minimizing `‖F‖²` with a forward-difference Jacobian.

use crate::error::Result;
use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, Copy)]
pub(crate) struct LmOptions {
    pub max_iter: usize,
    /// Convergence when `‖F‖ ≤ rel_tol·(1 + ‖F(θ₀)‖)`.
    pub rel_tol: f64,
    /// Difference step `fd_step·(1 + |θ_k|)`.
    pub fd_step: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        LmOptions {
            max_iter: 100,
            rel_tol: 1e-6,
            fd_step: 1e-5,
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct LmOutcome {
    pub x: Vec<f64>,
    pub norm: f64,
    pub tol: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

/// Errors only when `F` cannot be evaluated at the starting point; failed
/// evaluations elsewhere count as rejected steps.
pub(crate) fn solve<F>(f: F, x0: &[f64], opts: LmOptions) -> Result<LmOutcome>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    let m = x0.len();
    let mut x = x0.to_vec();
    let mut r = f(&x)?;
    let mut fnorm = norm(&r);
    let tol = opts.rel_tol * (1.0 + fnorm);
    let mut mu = 0.0;
    let mut nu = 2.0;
    let mut jac: Option<DMatrix<f64>> = None;
    let mut iterations = 0;
    while iterations < opts.max_iter && fnorm > tol {
        iterations += 1;
        let j = match jac.take() {
            Some(j) => j,
            None => match jacobian(&f, &x, &r, opts.fd_step) {
                Some(j) => j,
                None => break,
            },
        };
        let jt = j.transpose();
        let a = &jt * &j;
        let g = &jt * DVector::from_column_slice(&r);
        if mu == 0.0 {
            mu = 1e-3 * (0..m).map(|k| a[(k, k)]).fold(0.0, f64::max).max(1e-300);
        }
        let mut damped = a.clone();
        for k in 0..m {
            damped[(k, k)] += mu;
        }
        let step = match damped.cholesky() {
            Some(ch) => ch.solve(&(-&g)),
            None => {
                mu *= nu;
                nu *= 2.0;
                jac = Some(j);
                continue;
            }
        };
        if step.norm() <= 1e-14 * (1.0 + norm(&x)) {
            break;
        }
        let trial: Vec<f64> = x.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
        let accepted = match f(&trial) {
            Ok(rt) => {
                let tn = norm(&rt);
                let predicted = step.dot(&(mu * &step - &g));
                let rho = (fnorm * fnorm - tn * tn) / predicted;
                if tn.is_finite() && rho > 0.0 && predicted > 0.0 {
                    x = trial;
                    r = rt;
                    fnorm = tn;
                    mu *= (1.0f64 / 3.0).max(1.0 - (2.0 * rho - 1.0).powi(3));
                    nu = 2.0;
                    true
                } else {
                    false
                }
            }
            Err(_) => false,
        };
        if !accepted {
            mu *= nu;
            nu *= 2.0;
            jac = Some(j);
            if !mu.is_finite() {
                break;
            }
        }
    }
    Ok(LmOutcome {
        x,
        norm: fnorm,
        tol,
        iterations,
        converged: fnorm <= tol,
    })
}

/// Damped Newton minimization of `obj` with gradient `grad` and a
/// forward-difference Hessian. Steps are accepted only when the objective
/// decreases, so the iterates cannot climb to a maximum or saddle.
/// Convergence when `‖grad‖ ≤ rel_tol·(1 + ‖grad(θ₀)‖)`.
pub(crate) fn minimize<O, G>(obj: O, grad: G, x0: &[f64], opts: LmOptions) -> Result<LmOutcome>
where
    O: Fn(&[f64]) -> Result<f64>,
    G: Fn(&[f64]) -> Result<Vec<f64>>,
{
    let m = x0.len();
    let mut x = x0.to_vec();
    let mut fx = obj(&x)?;
    let mut g = grad(&x)?;
    let mut gnorm = norm(&g);
    let tol = opts.rel_tol * (1.0 + gnorm);
    let mut mu = 0.0;
    let mut hess: Option<DMatrix<f64>> = None;
    let mut iterations = 0;
    while iterations < opts.max_iter && gnorm > tol {
        iterations += 1;
        let h = match hess.take() {
            Some(h) => h,
            None => match jacobian(&grad, &x, &g, opts.fd_step) {
                Some(j) => (&j + j.transpose()) * 0.5,
                None => break,
            },
        };
        let scale = (0..m).map(|k| h[(k, k)].abs()).fold(0.0, f64::max).max(1e-300);
        // Smallest damping that makes the model convex.
        let mut damped = h.clone();
        for k in 0..m {
            damped[(k, k)] += mu;
        }
        let chol = match damped.cholesky() {
            Some(c) => c,
            None => {
                mu = (2.0 * mu).max(1e-3 * scale);
                hess = Some(h);
                continue;
            }
        };
        let step = chol.solve(&(-DVector::from_column_slice(&g)));
        if step.norm() <= 1e-14 * (1.0 + norm(&x)) {
            break;
        }
        let trial: Vec<f64> = x.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
        let accepted = match (obj(&trial), grad(&trial)) {
            (Ok(ft), Ok(gt)) if ft.is_finite() => {
                let slack = 1e-13 * fx.abs().max(1.0);
                let gtn = norm(&gt);
                if ft < fx - slack || (ft <= fx + slack && gtn < gnorm) {
                    x = trial;
                    fx = ft;
                    g = gt;
                    gnorm = gtn;
                    mu /= 3.0;
                    if mu < 1e-12 * scale {
                        mu = 0.0;
                    }
                    true
                } else {
                    false
                }
            }
            _ => false,
        };
        if !accepted {
            mu = (4.0 * mu).max(1e-3 * scale);
            hess = Some(h);
            if !mu.is_finite() || mu > 1e12 * scale {
                break;
            }
        }
    }
    Ok(LmOutcome {
        x,
        norm: gnorm,
        tol,
        iterations,
        converged: gnorm <= tol,
    })
}

fn jacobian<F>(f: &F, x: &[f64], r: &[f64], step: f64) -> Option<DMatrix<f64>>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    let m = x.len();
    let mut j = DMatrix::zeros(r.len(), m);
    for k in 0..m {
        let h = step * (1.0 + x[k].abs());
        let mut xp = x.to_vec();
        xp[k] += h;
        let (col, hh) = match f(&xp) {
            Ok(v) => (v, h),
            Err(_) => {
                xp[k] = x[k] - h;
                (f(&xp).ok()?, -h)
            }
        };
        for (row, (a, b)) in col.iter().zip(r).enumerate() {
            j[(row, k)] = (a - b) / hh;
        }
    }
    Some(j)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;

    #[test]
    fn solves_smooth_system() {
        let f = |x: &[f64]| -> Result<Vec<f64>> { Ok(vec![x[0] * x[0] - 2.0, x[0] + x[1] - 3.0]) };
        let out = solve(f, &[1.0, 0.0], LmOptions::default()).unwrap();
        assert!(out.converged);
        assert!((out.x[0] - 2f64.sqrt()).abs() < 1e-5);
    }

    #[test]
    fn failed_evaluations_are_rejected_steps() {
        // Undefined for x < 0; the root is at 0.25.
        let f = |x: &[f64]| -> Result<Vec<f64>> {
            if x[0] < 0.0 {
                Err(Error::DegenerateIndex)
            } else {
                Ok(vec![x[0].sqrt() - 0.5])
            }
        };
        let out = solve(f, &[4.0], LmOptions::default()).unwrap();
        assert!(out.converged, "{out:?}");
        assert!((out.x[0] - 0.25).abs() < 1e-5);
    }

    #[test]
    fn minimize_skips_the_maximum() {
        // f = x⁴/4 - x²/2 has a maximum at 0 and minima at ±1.
        let obj = |x: &[f64]| -> Result<f64> { Ok(x[0].powi(4) / 4.0 - x[0] * x[0] / 2.0) };
        let grad = |x: &[f64]| -> Result<Vec<f64>> { Ok(vec![x[0].powi(3) - x[0]]) };
        let out = minimize(obj, grad, &[0.05], LmOptions::default()).unwrap();
        assert!(out.converged, "{out:?}");
        assert!((out.x[0] - 1.0).abs() < 1e-5, "{out:?}");
        // The root finder on the gradient settles on the maximum instead.
        let lm = solve(grad, &[0.05], LmOptions::default()).unwrap();
        assert!(lm.x[0].abs() < 1e-5, "{lm:?}");
    }

    #[test]
    fn minimize_rosenbrock() {
        let obj = |x: &[f64]| -> Result<f64> { Ok((1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2)) };
        let grad = |x: &[f64]| -> Result<Vec<f64>> {
            Ok(vec![
                -2.0 * (1.0 - x[0]) - 400.0 * x[0] * (x[1] - x[0] * x[0]),
                200.0 * (x[1] - x[0] * x[0]),
            ])
        };
        let opts = LmOptions { max_iter: 500, ..LmOptions::default() };
        let out = minimize(obj, grad, &[-1.2, 1.0], opts).unwrap();
        assert!(out.converged, "{out:?}");
        assert!((out.x[0] - 1.0).abs() < 1e-4 && (out.x[1] - 1.0).abs() < 1e-4, "{out:?}");
    }

    #[test]
    fn reports_nonconvergence() {
        let f = |x: &[f64]| -> Result<Vec<f64>> { Ok(vec![x[0] * x[0] + 1.0]) };
        let out = solve(f, &[3.0], LmOptions::default()).unwrap();
        assert!(!out.converged);
        assert!(out.norm >= 1.0);
    }
}
