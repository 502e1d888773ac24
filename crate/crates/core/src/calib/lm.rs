//! Dense Levenberg–Marquardt on the normal equations with `λ·diag(JᵀJ)`
//! damping. Problems supply residuals, an analytic Jacobian and a retraction,
//! so rotations can be updated multiplicatively.

use nalgebra::{DMatrix, DVector};

use super::CalibError;

pub(crate) trait LeastSquares {
    type State: Clone;

    fn num_residuals(&self) -> usize;
    fn num_params(&self) -> usize;

    /// Fills `res` and, when requested, `jac` (`num_residuals × num_params`).
    fn evaluate(
        &self,
        state: &Self::State,
        res: &mut DVector<f64>,
        jac: Option<&mut DMatrix<f64>>,
    ) -> Result<(), CalibError>;

    fn retract(&self, state: &Self::State, delta: &DVector<f64>) -> Self::State;
}

#[derive(Debug, Clone, Copy)]
pub struct LmOptions {
    pub initial_lambda: f64,
    pub max_iterations: usize,
    /// Stop once an accepted step lowers the cost by less than this fraction.
    pub relative_tolerance: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        Self {
            initial_lambda: 1e-3,
            max_iterations: 100,
            relative_tolerance: 1e-12,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LmReport {
    pub initial_cost: f64,
    pub final_cost: f64,
    pub iterations: usize,
    pub accepted_steps: usize,
    /// Cost after every accepted step, starting with the initial cost.
    pub cost_history: Vec<f64>,
}

const MAX_LAMBDA: f64 = 1e16;

pub(crate) fn minimize<P: LeastSquares>(
    problem: &P,
    initial: P::State,
    opts: &LmOptions,
) -> Result<(P::State, LmReport), CalibError> {
    let m = problem.num_residuals();
    let n = problem.num_params();
    let mut res = DVector::zeros(m);
    let mut jac = DMatrix::zeros(m, n);
    problem.evaluate(&initial, &mut res, Some(&mut jac))?;
    let mut cost = res.norm_squared();
    if !cost.is_finite() {
        return Err(CalibError::Divergence("initial cost is not finite".into()));
    }
    let mut report = LmReport {
        initial_cost: cost,
        final_cost: cost,
        iterations: 0,
        accepted_steps: 0,
        cost_history: vec![cost],
    };
    let mut state = initial;
    let mut lambda = opts.initial_lambda;
    let mut trial_res = DVector::zeros(m);

    while report.iterations < opts.max_iterations && cost > 0.0 {
        report.iterations += 1;
        let jtj = jac.tr_mul(&jac);
        let grad = jac.tr_mul(&res);
        let max_diag = jtj.diagonal().max().max(f64::MIN_POSITIVE);
        let mut damped = jtj.clone();
        for i in 0..n {
            damped[(i, i)] += lambda * jtj[(i, i)].max(1e-12 * max_diag);
        }
        let step = match damped.cholesky() {
            Some(ch) => ch.solve(&(-&grad)),
            None => {
                lambda *= 10.0;
                if lambda > MAX_LAMBDA {
                    break;
                }
                continue;
            }
        };
        let trial = problem.retract(&state, &step);
        let trial_cost = match problem.evaluate(&trial, &mut trial_res, None) {
            Ok(()) => trial_res.norm_squared(),
            Err(_) => f64::INFINITY,
        };
        if trial_cost.is_finite() && trial_cost < cost {
            let rel = (cost - trial_cost) / cost;
            state = trial;
            cost = trial_cost;
            problem.evaluate(&state, &mut res, Some(&mut jac))?;
            report.accepted_steps += 1;
            report.cost_history.push(cost);
            lambda = (lambda / 10.0).max(1e-15);
            if rel < opts.relative_tolerance {
                break;
            }
        } else {
            lambda *= 10.0;
            if lambda > MAX_LAMBDA {
                break;
            }
        }
    }
    report.final_cost = cost;
    Ok((state, report))
}

/// Gradient of the cost `‖r‖²`: `2·Jᵀr`.
#[cfg(test)]
pub(crate) fn cost_gradient<P: LeastSquares>(problem: &P, state: &P::State) -> DVector<f64> {
    let mut res = DVector::zeros(problem.num_residuals());
    let mut jac = DMatrix::zeros(problem.num_residuals(), problem.num_params());
    problem.evaluate(state, &mut res, Some(&mut jac)).unwrap();
    jac.tr_mul(&res) * 2.0
}

/// Central finite differences of the cost along the retraction.
#[cfg(test)]
pub(crate) fn numeric_gradient<P: LeastSquares>(problem: &P, state: &P::State, h: f64) -> DVector<f64> {
    let n = problem.num_params();
    let mut res = DVector::zeros(problem.num_residuals());
    let mut out = DVector::zeros(n);
    for i in 0..n {
        let mut d = DVector::zeros(n);
        d[i] = h;
        problem.evaluate(&problem.retract(state, &d), &mut res, None).unwrap();
        let plus = res.norm_squared();
        d[i] = -h;
        problem.evaluate(&problem.retract(state, &d), &mut res, None).unwrap();
        let minus = res.norm_squared();
        out[i] = (plus - minus) / (2.0 * h);
    }
    out
}
