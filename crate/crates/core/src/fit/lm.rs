//! Damped Gauss-Newton (Levenberg-Marquardt) on a Huber objective.
//!
//! Each iteration linearizes the residuals and solves the IRLS-weighted
//! normal equations `(J'WJ + lambda * D) dx = -J'W r`, where `W` holds the
//! Huber weights `min(1, delta / |r|)`. Steps are accepted only when the true
//! mean Huber loss decreases.

use nalgebra::{DMatrix, DVector};

use super::huber;

pub(crate) trait ResidualModel {
    fn num_params(&self) -> usize;
    fn num_residuals(&self) -> usize;
    fn residuals(&self, theta: &[f64], out: &mut [f64]);
    /// Row-major `num_residuals x num_params` Jacobian of the residuals.
    fn jacobian(&self, theta: &[f64], out: &mut DMatrix<f64>);
}

#[derive(Clone, Debug)]
pub(crate) struct LmOutcome {
    pub theta: Vec<f64>,
    pub objective: f64,
    pub converged: bool,
}

pub(crate) fn mean_huber(residuals: &[f64], delta: f64) -> f64 {
    let total: f64 = residuals.iter().map(|&r| huber(r, delta)).sum();
    total / residuals.len().max(1) as f64
}

const LAMBDA_MAX: f64 = 1e16;
const STALL_STEPS: usize = 3;

pub(crate) fn minimize_huber<M: ResidualModel>(
    model: &M,
    theta0: &[f64],
    delta: f64,
    max_iters: usize,
    tol: f64,
) -> LmOutcome {
    let n = model.num_residuals();
    let p = model.num_params();
    let mut theta = theta0.to_vec();
    let mut residuals = vec![0.0; n];
    model.residuals(&theta, &mut residuals);
    let mut objective = mean_huber(&residuals, delta);
    if !objective.is_finite() {
        return LmOutcome { theta, objective: f64::INFINITY, converged: false };
    }

    let mut jac = DMatrix::<f64>::zeros(n, p);
    let mut trial = vec![0.0; p];
    let mut trial_residuals = vec![0.0; n];
    let mut lambda = 1e-3;
    let mut stalled = 0;
    let mut converged = false;

    for _ in 0..max_iters {
        if objective <= 1e-30 {
            converged = true;
            break;
        }
        model.jacobian(&theta, &mut jac);
        let weights = DVector::from_iterator(
            n,
            residuals.iter().map(|&r| if r.abs() <= delta { 1.0 } else { delta / r.abs() }),
        );
        let mut weighted_jac = jac.clone();
        for (i, mut row) in weighted_jac.row_iter_mut().enumerate() {
            row *= weights[i];
        }
        let normal = jac.transpose() * &weighted_jac;
        let gradient = weighted_jac.transpose() * DVector::from_column_slice(&residuals);
        if gradient.amax() <= 1e-300 {
            converged = true;
            break;
        }
        let diag_floor = normal.diagonal().amax().max(1e-300) * 1e-12;

        let mut accepted = false;
        while lambda <= LAMBDA_MAX {
            let mut damped = normal.clone();
            for j in 0..p {
                damped[(j, j)] += lambda * normal[(j, j)].max(diag_floor);
            }
            let step = match damped.clone().cholesky() {
                Some(ch) => ch.solve(&(-&gradient)),
                None => match damped.lu().solve(&(-&gradient)) {
                    Some(s) => s,
                    None => {
                        lambda *= 4.0;
                        continue;
                    }
                },
            };
            for j in 0..p {
                trial[j] = theta[j] + step[j];
            }
            model.residuals(&trial, &mut trial_residuals);
            let trial_objective = mean_huber(&trial_residuals, delta);
            if trial_objective.is_finite() && trial_objective < objective {
                let improvement = (objective - trial_objective) / objective.max(1e-300);
                theta.copy_from_slice(&trial);
                std::mem::swap(&mut residuals, &mut trial_residuals);
                objective = trial_objective;
                lambda = (lambda / 3.0).max(1e-15);
                stalled = if improvement < tol { stalled + 1 } else { 0 };
                accepted = true;
                break;
            }
            lambda *= 4.0;
        }
        if !accepted {
            // No descent direction at any damping: a stationary point.
            converged = true;
            break;
        }
        if stalled >= STALL_STEPS {
            converged = true;
            break;
        }
    }
    LmOutcome { theta, objective, converged }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Residuals of y = a * exp(b x).
    struct ExpCurve {
        x: Vec<f64>,
        y: Vec<f64>,
    }

    impl ResidualModel for ExpCurve {
        fn num_params(&self) -> usize {
            2
        }
        fn num_residuals(&self) -> usize {
            self.x.len()
        }
        fn residuals(&self, theta: &[f64], out: &mut [f64]) {
            for i in 0..self.x.len() {
                out[i] = theta[0] * (theta[1] * self.x[i]).exp() - self.y[i];
            }
        }
        fn jacobian(&self, theta: &[f64], out: &mut DMatrix<f64>) {
            for i in 0..self.x.len() {
                let e = (theta[1] * self.x[i]).exp();
                out[(i, 0)] = e;
                out[(i, 1)] = theta[0] * self.x[i] * e;
            }
        }
    }

    #[test]
    fn recovers_exponential_curve() {
        let x: Vec<f64> = (0..20).map(|i| i as f64 / 10.0).collect();
        let y = x.iter().map(|&v| 1.7 * (-0.8 * v).exp()).collect();
        let model = ExpCurve { x, y };
        let out = minimize_huber(&model, &[1.0, 0.0], 1e-3, 200, 1e-14);
        assert!(out.converged);
        assert!((out.theta[0] - 1.7).abs() < 1e-8, "{:?}", out.theta);
        assert!((out.theta[1] + 0.8).abs() < 1e-8);
    }

    #[test]
    fn robust_to_one_outlier() {
        let x: Vec<f64> = (0..30).map(|i| i as f64 / 10.0).collect();
        let mut y: Vec<f64> = x.iter().map(|&v| 2.0 * (0.3 * v).exp()).collect();
        y[7] += 5.0;
        let model = ExpCurve { x, y };
        let out = minimize_huber(&model, &[1.0, 0.0], 1e-3, 500, 1e-14);
        assert!((out.theta[0] - 2.0).abs() < 1e-3, "{:?}", out.theta);
        assert!((out.theta[1] - 0.3).abs() < 1e-3);
    }
}
