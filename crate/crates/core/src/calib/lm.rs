//! Dense Levenberg–Marquardt with Jacobi column scaling.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmConfig {
    pub initial_damping: f64,
    pub damping_increase: f64,
    pub damping_decrease: f64,
    /// Damping beyond which a failed step ends the run.
    pub max_damping: f64,
    /// Stop when an accepted step lowers the cost by less than this fraction.
    pub rel_cost_tol: f64,
    /// Stop when the column-scaled gradient `‖D⁻¹Jᵀr‖∞` falls below this,
    /// with `D = diag(‖J_j‖)`. The scaling makes the test independent of
    /// parameter units.
    pub gradient_tol: f64,
    pub max_iters: usize,
}

impl Default for LmConfig {
    fn default() -> Self {
        Self {
            initial_damping: 1e-3,
            damping_increase: 10.0,
            damping_decrease: 10.0,
            max_damping: 1e12,
            rel_cost_tol: 1e-10,
            gradient_tol: 1e-8,
            max_iters: 200,
        }
    }
}

impl LmConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.initial_damping,
            self.max_damping,
            self.rel_cost_tol,
            self.gradient_tol,
        ];
        if positive.iter().any(|v| !(*v > 0.0)) || self.damping_increase <= 1.0 || self.damping_decrease <= 1.0 {
            return Err(Error::InvalidArgument("LM tolerances and damping factors must be positive".into()));
        }
        Ok(())
    }
}

/// Residual vector `r(x)`; the minimized cost is `½‖r‖²`.
pub trait LeastSquaresProblem {
    fn num_params(&self) -> usize;
    fn residuals(&self, x: &DVector<f64>) -> Result<DVector<f64>>;
    fn residuals_and_jacobian(&self, x: &DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>)>;
}

#[derive(Debug, Clone)]
pub struct LmOutcome {
    pub params: DVector<f64>,
    pub initial_cost: f64,
    pub cost: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Cost after each accepted iteration, starting with the initial cost.
    pub cost_history: Vec<f64>,
}

fn half_sq(r: &DVector<f64>) -> f64 {
    0.5 * r.norm_squared()
}

/// Model decrease `½ gᵀ (JᵀJ)⁻¹ g` of an (almost) undamped step.
fn gauss_newton_decrease(scaled_jtj: &DMatrix<f64>, scaled_grad: &DVector<f64>) -> f64 {
    let mut a = scaled_jtj.clone();
    for d in 0..a.nrows() {
        a[(d, d)] += 1e-12;
    }
    match a.cholesky() {
        Some(ch) => 0.5 * scaled_grad.dot(&ch.solve(scaled_grad)),
        None => f64::INFINITY,
    }
}

pub fn minimize<P: LeastSquaresProblem + ?Sized>(problem: &P, x0: DVector<f64>, cfg: &LmConfig) -> Result<LmOutcome> {
    cfg.validate()?;
    let n = problem.num_params();
    if x0.len() != n {
        return Err(Error::DimensionMismatch(format!("{} initial parameters for {} unknowns", x0.len(), n)));
    }
    let mut x = x0;
    let (mut r, mut jac) = problem.residuals_and_jacobian(&x)?;
    let mut cost = half_sq(&r);
    if !cost.is_finite() {
        return Err(Error::NonFinite("initial residuals"));
    }
    let initial_cost = cost;
    let mut history = vec![cost];
    let mut lambda = cfg.initial_damping;

    for iter in 0..cfg.max_iters {
        let grad = jac.tr_mul(&r);
        let jtj = jac.tr_mul(&jac);
        let max_diag = jtj.diagonal().max();
        let scale = DVector::from_iterator(n, jtj.diagonal().iter().map(|&d| 1.0 / d.max(max_diag * 1e-20).max(f64::MIN_POSITIVE).sqrt()));
        let scaled_grad = grad.component_mul(&scale);
        if cost == 0.0 || scaled_grad.amax() < cfg.gradient_tol {
            return Ok(LmOutcome { params: x, initial_cost, cost, iterations: iter, converged: true, cost_history: history });
        }
        let mut scaled = jtj.clone();
        for c in 0..n {
            for rr in 0..n {
                scaled[(rr, c)] *= scale[rr] * scale[c];
            }
        }

        loop {
            let mut a = scaled.clone();
            for d in 0..n {
                a[(d, d)] += lambda * a[(d, d)].max(1e-12);
            }
            let step = a
                .cholesky()
                .map(|ch| ch.solve(&(-&scaled_grad)))
                .filter(|s| s.iter().all(|v| v.is_finite()));
            if let Some(step_scaled) = step {
                let delta = step_scaled.component_mul(&scale);
                let candidate = &x + &delta;
                let trial = problem.residuals(&candidate).ok().map(|rn| half_sq(&rn));
                if let Some(new_cost) = trial.filter(|c| c.is_finite() && *c < cost) {
                    let rel = (cost - new_cost) / cost;
                    x = candidate;
                    let (nr, nj) = problem.residuals_and_jacobian(&x)?;
                    r = nr;
                    jac = nj;
                    cost = half_sq(&r);
                    history.push(cost);
                    lambda = (lambda / cfg.damping_decrease).max(1e-15);
                    if rel < cfg.rel_cost_tol {
                        return Ok(LmOutcome { params: x, initial_cost, cost, iterations: iter + 1, converged: true, cost_history: history });
                    }
                    break;
                }
            }
            if lambda * cfg.damping_increase > cfg.max_damping {
                // No acceptable step at any damping: a stall at the noise floor
                // of the cost counts as convergence, anything else diverged.
                if gauss_newton_decrease(&scaled, &scaled_grad) <= cfg.rel_cost_tol * cost {
                    return Ok(LmOutcome { params: x, initial_cost, cost, iterations: iter, converged: true, cost_history: history });
                }
                return Err(Error::Diverged { iterations: iter, cost, params: x.iter().copied().collect() });
            }
            lambda *= cfg.damping_increase;
        }
    }
    log::warn!("Levenberg-Marquardt stopped at the iteration cap ({}) without converging", cfg.max_iters);
    Ok(LmOutcome { params: x, initial_cost, cost, iterations: cfg.max_iters, converged: false, cost_history: history })
}
