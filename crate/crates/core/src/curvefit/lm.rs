//! Levenberg-Marquardt minimization of a sum of squared weighted residuals.
//!
//! Each iteration solves `(JᵀJ + λ·diag(JᵀJ)) Δ = Jᵀr` for the model Jacobian
//! `J` and weighted residuals `r = (observed − model)/σ`. A step is accepted
//! only if it strictly lowers the cost. λ starts at zero, so well-posed problems
//! take plain Gauss-Newton steps; the first rejected step switches damping on.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// A weighted least-squares problem.
pub trait Problem {
    fn num_params(&self) -> usize;

    fn num_residuals(&self) -> usize;

    /// Weighted residuals `(observed − model) / σ`.
    fn residuals(&self, params: &[f64], out: &mut [f64]);

    /// Weighted model Jacobian `∂(model_i / σ_i) / ∂p_j`, shape
    /// `num_residuals × num_params`.
    fn jacobian(&self, params: &[f64], out: &mut DMatrix<f64>);

    /// Maps a trial point onto the feasible set.
    fn project(&self, _params: &mut [f64]) {}
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmOptions {
    pub max_iterations: usize,
    /// Stop once an accepted step lowers the cost by less than this fraction.
    pub relative_tolerance: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            relative_tolerance: 1e-10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Termination {
    /// Relative cost change fell below tolerance.
    SmallCostChange,
    /// Residuals vanished.
    ExactFit,
    /// No strictly decreasing step exists at any damping; a stationary point.
    Stalled,
    MaxIterations,
    /// Normal equations could not be solved or inverted.
    Singular,
    /// Cost was not finite at the initial point.
    NonFinite,
}

impl Termination {
    pub fn converged(self) -> bool {
        matches!(self, Self::SmallCostChange | Self::ExactFit | Self::Stalled)
    }
}

#[derive(Debug, Clone)]
pub struct LmOutcome {
    pub params: Vec<f64>,
    /// Σ r², i.e. χ² for properly weighted residuals.
    pub cost: f64,
    pub iterations: usize,
    pub termination: Termination,
    /// `(JᵀJ)⁻¹` at the solution, when it exists.
    pub covariance: Option<DMatrix<f64>>,
}

impl LmOutcome {
    pub fn converged(&self) -> bool {
        self.termination.converged() && self.covariance.is_some()
    }
}

const LAMBDA_START: f64 = 1e-3;
const LAMBDA_MAX: f64 = 1e16;
const LAMBDA_FLOOR: f64 = 1e-9;

pub fn minimize(problem: &dyn Problem, init: &[f64], options: &LmOptions) -> LmOutcome {
    let n = problem.num_params();
    let m = problem.num_residuals();
    assert_eq!(init.len(), n, "initial guess has the wrong length");

    let mut params = init.to_vec();
    problem.project(&mut params);
    let mut r = vec![0.0; m];
    problem.residuals(&params, &mut r);
    let mut cost = sum_sq(&r);
    let mut jac = DMatrix::zeros(m, n);
    if !cost.is_finite() {
        return LmOutcome {
            params,
            cost,
            iterations: 0,
            termination: Termination::NonFinite,
            covariance: None,
        };
    }

    let mut lambda = 0.0;
    let mut trial = vec![0.0; n];
    let mut r_trial = vec![0.0; m];
    let mut iterations = 0;
    let termination = 'outer: loop {
        if cost == 0.0 {
            break Termination::ExactFit;
        }
        if iterations >= options.max_iterations {
            break Termination::MaxIterations;
        }
        iterations += 1;
        problem.jacobian(&params, &mut jac);
        let jtj = jac.tr_mul(&jac);
        let jtr = jac.tr_mul(&DVector::from_column_slice(&r));

        loop {
            let mut a = jtj.clone();
            for j in 0..n {
                a[(j, j)] += lambda * jtj[(j, j)].max(f64::MIN_POSITIVE);
            }
            let accepted = match a.cholesky() {
                Some(chol) => {
                    let step = chol.solve(&jtr);
                    for j in 0..n {
                        trial[j] = params[j] + step[j];
                    }
                    problem.project(&mut trial);
                    problem.residuals(&trial, &mut r_trial);
                    let c = sum_sq(&r_trial);
                    (c.is_finite() && c < cost).then_some(c)
                }
                None => None,
            };
            match accepted {
                Some(new_cost) => {
                    let relative = (cost - new_cost) / cost;
                    std::mem::swap(&mut params, &mut trial);
                    std::mem::swap(&mut r, &mut r_trial);
                    cost = new_cost;
                    lambda /= 10.0;
                    if lambda < LAMBDA_FLOOR {
                        lambda = 0.0;
                    }
                    if relative < options.relative_tolerance {
                        break 'outer Termination::SmallCostChange;
                    }
                    break;
                }
                None => {
                    lambda = if lambda == 0.0 { LAMBDA_START } else { lambda * 10.0 };
                    if lambda > LAMBDA_MAX {
                        break 'outer Termination::Stalled;
                    }
                }
            }
        }
    };

    let covariance = if termination == Termination::NonFinite {
        None
    } else {
        problem.jacobian(&params, &mut jac);
        jac.tr_mul(&jac)
            .try_inverse()
            .filter(|c| c.iter().all(|v| v.is_finite()))
    };
    let termination = if termination.converged() && covariance.is_none() {
        Termination::Singular
    } else {
        termination
    };
    LmOutcome {
        params,
        cost,
        iterations,
        termination,
        covariance,
    }
}

fn sum_sq(r: &[f64]) -> f64 {
    r.iter().map(|v| v * v).sum()
}
