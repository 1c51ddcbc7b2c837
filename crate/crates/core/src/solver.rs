//! Projected Levenberg-Marquardt for box-constrained nonlinear least squares.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{MheError, Result};
use crate::linalg::{all_finite_mat, all_finite_vec};
use crate::model::BoxSet;

/// min ‖r(d)‖² subject to d in a box.
pub trait NlsProblem {
    fn dim(&self) -> usize;
    fn bounds(&self) -> &BoxSet;
    fn residuals(&self, d: &DVector<f64>) -> DVector<f64>;

    /// Residual Jacobian; central differences by default.
    fn jacobian(&self, d: &DVector<f64>) -> DMatrix<f64> {
        let r0 = self.residuals(d);
        let mut jac = DMatrix::zeros(r0.len(), d.len());
        let mut dp = d.clone();
        for k in 0..d.len() {
            let h = 1e-6 * (1.0 + d[k].abs());
            dp[k] = d[k] + h;
            let rp = self.residuals(&dp);
            dp[k] = d[k] - h;
            let rm = self.residuals(&dp);
            dp[k] = d[k];
            jac.set_column(k, &((rp - rm) / (2.0 * h)));
        }
        jac
    }

    /// Gauss-Newton matrix JᵀJ and gradient half Jᵀr. Problems with known
    /// structure may override this.
    fn normal_equations(
        &self,
        d: &DVector<f64>,
        r: &DVector<f64>,
    ) -> (DMatrix<f64>, DVector<f64>) {
        let j = self.jacobian(d);
        (j.tr_mul(&j), j.tr_mul(r))
    }

    fn objective(&self, d: &DVector<f64>) -> f64 {
        self.residuals(d).norm_squared()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolveOptions {
    pub max_iter: usize,
    pub grad_tol: f64,
    pub step_tol: f64,
    pub lambda0: f64,
    pub lambda_up: f64,
    pub lambda_down: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            max_iter: 100,
            grad_tol: 1e-8,
            step_tol: 1e-10,
            lambda0: 1e-3,
            lambda_up: 10.0,
            lambda_down: 0.1,
        }
    }
}

impl SolveOptions {
    pub fn validate(&self) -> Result<()> {
        let pos = [
            self.grad_tol,
            self.step_tol,
            self.lambda0,
            self.lambda_up,
            self.lambda_down,
        ];
        if self.max_iter == 0 || pos.iter().any(|v| !(*v > 0.0)) {
            return Err(MheError::InvalidParameter(
                "solver options must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Termination {
    Converged,
    MaxIter,
    Stalled,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveResult {
    pub d_opt: DVector<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub termination: Termination,
    /// Objective at the projected start followed by every accepted iterate.
    pub history: Vec<f64>,
    /// Objective at the projected starting point.
    pub start_objective: f64,
}

const MAX_LAMBDA: f64 = 1e16;
const MAX_FACTOR_FAILURES: usize = 20;

/// ∞-norm of the projected gradient step d − P(d − ∇).
fn projected_gradient_norm(bounds: &BoxSet, d: &DVector<f64>, grad: &DVector<f64>) -> f64 {
    let p = bounds.project(&(d - grad));
    (d - p).amax()
}

/// Variables pinned at a bound with the gradient pushing outward.
fn active_set(bounds: &BoxSet, d: &DVector<f64>, grad: &DVector<f64>) -> Vec<bool> {
    (0..d.len())
        .map(|i| {
            let at_lo = d[i] <= bounds.lower[i] && grad[i] > 0.0;
            let at_hi = d[i] >= bounds.upper[i] && grad[i] < 0.0;
            at_lo || at_hi
        })
        .collect()
}

pub fn solve(problem: &dyn NlsProblem, d0: &DVector<f64>, opts: &SolveOptions) -> Result<SolveResult> {
    opts.validate()?;
    let n = problem.dim();
    if d0.len() != n {
        return Err(MheError::Dimension {
            context: "solver start point".into(),
            expected: n,
            got: d0.len(),
        });
    }
    if !all_finite_vec(d0) {
        return Err(MheError::NonFinite {
            what: "solver start point".into(),
            step: None,
        });
    }
    let bounds = problem.bounds();
    let mut d = bounds.project(d0);
    let mut r = problem.residuals(&d);
    let mut f = r.norm_squared();
    if !f.is_finite() {
        return Err(MheError::Solver {
            iteration: 0,
            reason: "non-finite objective at start point".into(),
        });
    }
    let start_objective = f;
    let mut history = vec![f];
    let mut lambda = opts.lambda0;
    let mut failures = 0usize;
    let mut termination = Termination::MaxIter;
    let mut iterations = 0usize;
    if f == 0.0 {
        // A zero sum of squares is a global minimum.
        return Ok(SolveResult {
            d_opt: d,
            objective: f,
            iterations,
            termination: Termination::Converged,
            history,
            start_objective,
        });
    }

    let (mut jtj, mut jtr) = problem.normal_equations(&d, &r);
    while iterations < opts.max_iter {
        if !all_finite_mat(&jtj) || !all_finite_vec(&jtr) {
            return Err(MheError::Solver {
                iteration: iterations,
                reason: "non-finite Jacobian".into(),
            });
        }
        let grad = &jtr * 2.0;
        if projected_gradient_norm(bounds, &d, &grad) <= opts.grad_tol {
            termination = Termination::Converged;
            break;
        }
        iterations += 1;
        let active = active_set(bounds, &d, &grad);
        let free: Vec<usize> = (0..n).filter(|i| !active[*i]).collect();
        let nf = free.len();
        let mut accepted = false;
        let mut small_step = false;
        loop {
            let mut a = DMatrix::zeros(nf, nf);
            let mut b = DVector::zeros(nf);
            for (ii, &i) in free.iter().enumerate() {
                b[ii] = -jtr[i];
                for (jj, &j) in free.iter().enumerate() {
                    a[(ii, jj)] = jtj[(i, j)];
                }
                a[(ii, ii)] += lambda;
            }
            let Some(chol) = a.cholesky() else {
                failures += 1;
                if failures >= MAX_FACTOR_FAILURES {
                    return Err(MheError::Solver {
                        iteration: iterations,
                        reason: format!("{MAX_FACTOR_FAILURES} consecutive factorization failures"),
                    });
                }
                lambda *= opts.lambda_up;
                continue;
            };
            failures = 0;
            let step_free = chol.solve(&b);
            let mut trial = d.clone();
            for (ii, &i) in free.iter().enumerate() {
                trial[i] += step_free[ii];
            }
            let trial = bounds.project(&trial);
            let step_norm = (&trial - &d).amax();
            let r_new = problem.residuals(&trial);
            let f_new = r_new.norm_squared();
            if f_new.is_finite() && f_new <= f {
                let improved = f_new < f;
                d = trial;
                r = r_new;
                f = f_new;
                history.push(f);
                lambda = (lambda * opts.lambda_down).max(1e-300);
                accepted = true;
                if step_norm <= opts.step_tol * (1.0 + d.amax()) || !improved {
                    small_step = true;
                }
                break;
            }
            if step_norm <= opts.step_tol * (1.0 + d.amax()) {
                small_step = true;
                break;
            }
            lambda *= opts.lambda_up;
            if lambda > MAX_LAMBDA {
                break;
            }
        }
        if small_step {
            termination = Termination::Converged;
            break;
        }
        if !accepted {
            termination = Termination::Stalled;
            break;
        }
        let ne = problem.normal_equations(&d, &r);
        jtj = ne.0;
        jtr = ne.1;
    }
    Ok(SolveResult {
        d_opt: d,
        objective: f,
        iterations,
        termination,
        history,
        start_objective,
    })
}

/// True iff the result did not increase the objective relative to the projected start.
pub fn objective_decrease_certificate(problem: &dyn NlsProblem, d0: &DVector<f64>, result: &SolveResult) -> bool {
    let f0 = problem.objective(&problem.bounds().project(d0));
    result.objective <= f0 + 1e-12
}
