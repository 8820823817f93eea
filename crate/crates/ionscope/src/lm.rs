//! Damped least squares (Levenberg-Marquardt) on weighted residuals.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Error, Result};

/// A weighted nonlinear least-squares problem: χ²(p) = Σ r_i(p)².
pub(crate) trait LeastSquaresProblem {
    fn n_params(&self) -> usize;
    fn n_residuals(&self) -> usize;
    /// Weighted residuals at `params`, written into `out`.
    fn residuals(&mut self, params: &[f64], out: &mut [f64]) -> Result<()>;
    /// Weighted Jacobian (n_residuals × n_params) at `params`.
    fn jacobian(&mut self, params: &[f64], jac: &mut DMatrix<f64>) -> Result<()>;
}

pub(crate) struct LmOptions {
    pub max_iter: usize,
    /// Convergence when the accepted relative χ² decrease falls below this.
    pub tol: f64,
    pub lambda_init: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        Self {
            max_iter: 100,
            tol: 1e-10,
            lambda_init: 1e-3,
        }
    }
}

pub(crate) struct LmOutcome {
    pub params: Vec<f64>,
    pub chi2: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Jᵀ J at the returned parameters (undamped), for curvature estimates.
    pub normal_matrix: DMatrix<f64>,
}

/// χ² is considered numerically zero below this floor; used to stop cleanly
/// on noiseless self-consistent data where the relative decrease criterion
/// divides by ~0.
const CHI2_FLOOR: f64 = 1e-12;

pub(crate) fn minimize<P: LeastSquaresProblem>(
    problem: &mut P,
    start: &[f64],
    options: &LmOptions,
) -> Result<LmOutcome> {
    let n_p = problem.n_params();
    let n_r = problem.n_residuals();
    assert_eq!(start.len(), n_p);

    let mut params = start.to_vec();
    let mut residuals = vec![0.0; n_r];
    problem.residuals(&params, &mut residuals)?;
    let mut chi2: f64 = residuals.iter().map(|r| r * r).sum();

    let mut jac = DMatrix::zeros(n_r, n_p);
    let mut lambda = options.lambda_init;
    let mut converged = chi2 < CHI2_FLOOR;
    let mut iterations = 0;

    let mut trial_residuals = vec![0.0; n_r];
    while !converged && iterations < options.max_iter {
        iterations += 1;
        problem.jacobian(&params, &mut jac)?;
        let jt = jac.transpose();
        let normal = &jt * &jac;
        let r_vec = DVector::from_column_slice(&residuals);
        let gradient = &jt * &r_vec;

        // inner damping loop: inflate λ until a step is accepted
        let mut accepted = false;
        for _ in 0..40 {
            let mut damped = normal.clone();
            for i in 0..n_p {
                let d = normal[(i, i)];
                damped[(i, i)] = d + lambda * d.max(1e-12);
            }
            let step = match Cholesky::new(damped) {
                Some(ch) => ch.solve(&gradient),
                None => {
                    lambda *= 10.0;
                    continue;
                }
            };
            let trial: Vec<f64> = params.iter().zip(step.iter()).map(|(p, s)| p - s).collect();
            match problem.residuals(&trial, &mut trial_residuals) {
                Ok(()) => {}
                Err(_) => {
                    // step left the model's valid domain; damp harder
                    lambda *= 10.0;
                    continue;
                }
            }
            let trial_chi2: f64 = trial_residuals.iter().map(|r| r * r).sum();
            if trial_chi2.is_finite() && trial_chi2 < chi2 {
                let decrease = (chi2 - trial_chi2) / chi2.max(CHI2_FLOOR);
                params = trial;
                residuals.copy_from_slice(&trial_residuals);
                chi2 = trial_chi2;
                lambda = (lambda * 0.3).max(1e-12);
                accepted = true;
                if decrease < options.tol || chi2 < CHI2_FLOOR {
                    converged = true;
                }
                break;
            }
            lambda *= 10.0;
        }
        if !accepted {
            // no productive step at any damping: treat the current point as
            // the (local) optimum
            converged = true;
        }
    }

    problem.jacobian(&params, &mut jac)?;
    let normal_matrix = jac.transpose() * &jac;
    if !chi2.is_finite() {
        return Err(Error::Solver("non-finite chi-square".into()));
    }
    Ok(LmOutcome {
        params,
        chi2,
        iterations,
        converged,
        normal_matrix,
    })
}
