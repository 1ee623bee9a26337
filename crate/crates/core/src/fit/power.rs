//! Power-law fits `L = c + k x^alpha` in log-residual space.

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;

use super::lm::{minimize_huber, ResidualModel};
use super::{mean_absolute_error, sigmoid, FitConfig, FitReport, ALPHA_INIT_GRID};
use crate::error::{Error, Result};
use crate::law::PowerLaw;

/// Parameters `[gamma, kappa, alpha]` with `c = c_max * sigmoid(gamma)` and
/// `k' = exp(kappa)` on the rescaled abscissa `u = x / x_scale`.
struct PowerProblem {
    u_ln: Vec<f64>,
    y_ln: Vec<f64>,
    c_max: f64,
}

impl PowerProblem {
    fn predict(&self, theta: &[f64], u_ln: f64) -> f64 {
        self.c_max * sigmoid(theta[0]) + (theta[1] + theta[2] * u_ln).exp()
    }
}

impl ResidualModel for PowerProblem {
    fn num_params(&self) -> usize {
        3
    }

    fn num_residuals(&self) -> usize {
        self.u_ln.len()
    }

    fn residuals(&self, theta: &[f64], out: &mut [f64]) {
        for (i, (&u, &y)) in self.u_ln.iter().zip(&self.y_ln).enumerate() {
            out[i] = self.predict(theta, u).ln() - y;
        }
    }

    fn jacobian(&self, theta: &[f64], out: &mut DMatrix<f64>) {
        let s = sigmoid(theta[0]);
        for (i, &u) in self.u_ln.iter().enumerate() {
            let term = (theta[1] + theta[2] * u).exp();
            let pred = self.c_max * s + term;
            out[(i, 0)] = self.c_max * s * (1.0 - s) / pred;
            out[(i, 1)] = term / pred;
            out[(i, 2)] = term * u / pred;
        }
    }
}

/// Fits `c + k x^alpha` to `(x, loss)` points.
///
/// Minimizes the mean Huber loss of `log(pred) - log(obs)` with
/// `0 <= c < min(obs)` and `k > 0` enforced by parameterization.
pub fn fit_power_law(points: &[(f64, f64)], config: &FitConfig) -> Result<FitReport<PowerLaw>> {
    config.validate()?;
    if points.len() < 4 {
        return Err(Error::InsufficientPoints { needed: 4, got: points.len() });
    }
    for &(x, y) in points {
        if !(x.is_finite() && x > 0.0) {
            return Err(Error::NonPositiveInput(x));
        }
        if !(y.is_finite() && y > 0.0) {
            return Err(Error::InvalidRecord {
                row: format!("x = {x}"),
                rule: "positive-finite-loss",
                detail: format!("loss {y}"),
            });
        }
    }
    let mut distinct: Vec<u64> = points.iter().map(|p| p.0.to_bits()).collect();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() == 1 {
        return Err(Error::Degenerate("all x values are equal".into()));
    }
    if distinct.len() < 4 {
        return Err(Error::InsufficientPoints { needed: 4, got: distinct.len() });
    }

    let x_ln: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let scale_ln = x_ln.iter().sum::<f64>() / x_ln.len() as f64;
    let ys: Vec<f64> = points.iter().map(|p| p.1).collect();
    let problem = PowerProblem {
        u_ln: x_ln.iter().map(|v| v - scale_ln).collect(),
        y_ln: ys.iter().map(|y| y.ln()).collect(),
        c_max: ys.iter().copied().fold(f64::INFINITY, f64::min),
    };

    let outcomes: Vec<_> = (0..config.restarts)
        .into_par_iter()
        .map(|i| {
            let alpha = ALPHA_INIT_GRID[i % ALPHA_INIT_GRID.len()];
            let fraction = match i / ALPHA_INIT_GRID.len() {
                0 => 0.5,
                1 => 0.9,
                _ => config.restart_rng(i).random_range(0.02..0.98),
            };
            let c0 = problem.c_max * fraction;
            // least-squares amplitude for the chosen (c, alpha)
            let (num, den) = problem.u_ln.iter().zip(&ys).fold((0.0, 0.0), |(n, d), (&u, &y)| {
                let basis = (alpha * u).exp();
                (n + (y - c0) * basis, d + basis * basis)
            });
            let k0 = if num > 0.0 && den > 0.0 { num / den } else { 1e-3 };
            let theta0 = [(fraction / (1.0 - fraction)).ln(), k0.ln(), alpha];
            minimize_huber(&problem, &theta0, config.huber_delta, config.max_iters, config.tol)
        })
        .collect();

    let best = outcomes
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.objective.total_cmp(&b.1.objective).then(a.0.cmp(&b.0)))
        .map(|(_, o)| o.clone())
        .expect("at least one restart");
    if !best.objective.is_finite() {
        return Err(Error::Degenerate("power-law fit diverged from every start".into()));
    }

    let theta = &best.theta;
    let c = problem.c_max * sigmoid(theta[0]);
    let alpha = theta[2];
    let k = (theta[1] - alpha * scale_ln).exp();
    let law = PowerLaw::new(c, k, alpha)
        .map_err(|e| Error::Degenerate(format!("fitted power law is invalid: {e}")))?;
    let predicted: Vec<f64> = points.iter().map(|p| law.eval(p.0)).collect::<Result<_>>()?;
    Ok(FitReport {
        model: law,
        train_mae: mean_absolute_error(&predicted, &ys),
        val_mae: None,
        objective: best.objective,
        converged: best.converged,
        restarts_used: config.restarts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(c: f64, k: f64, alpha: f64, xs: &[f64]) -> Vec<(f64, f64)> {
        xs.iter().map(|&x| (x, c + k * x.powf(alpha))).collect()
    }

    fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
        (0..n).map(|i| lo * (hi / lo).powf(i as f64 / (n - 1) as f64)).collect()
    }

    #[test]
    fn recovers_noiseless_coefficients() {
        let points = sample(0.5, 2.0, -0.3, &log_grid(1e3, 1e5, 12));
        let report = fit_power_law(&points, &FitConfig::default()).unwrap();
        let law = report.model;
        assert!((law.c() - 0.5).abs() / 0.5 < 1e-3, "c = {}", law.c());
        assert!((law.k() - 2.0).abs() / 2.0 < 1e-3, "k = {}", law.k());
        assert!((law.alpha() + 0.3).abs() / 0.3 < 1e-3, "alpha = {}", law.alpha());
        assert!(report.converged);
        assert!(report.train_mae < 1e-9);
    }

    #[test]
    fn three_points_insufficient() {
        let points = sample(0.5, 2.0, -0.3, &[1e3, 1e4, 1e5]);
        assert!(matches!(
            fit_power_law(&points, &FitConfig::default()),
            Err(Error::InsufficientPoints { needed: 4, got: 3 })
        ));
    }

    #[test]
    fn equal_x_is_degenerate() {
        let points = vec![(10.0, 1.0), (10.0, 1.1), (10.0, 1.2), (10.0, 0.9), (10.0, 1.0)];
        assert!(matches!(fit_power_law(&points, &FitConfig::default()), Err(Error::Degenerate(_))));
    }

    #[test]
    fn rejects_non_positive_inputs() {
        let mut points = sample(0.5, 2.0, -0.3, &log_grid(1e3, 1e5, 6));
        points[2].0 = 0.0;
        assert!(fit_power_law(&points, &FitConfig::default()).is_err());
        let mut points = sample(0.5, 2.0, -0.3, &log_grid(1e3, 1e5, 6));
        points[2].1 = -1.0;
        assert!(fit_power_law(&points, &FitConfig::default()).is_err());
    }

    #[test]
    fn asymptote_below_minimum_loss() {
        let points = sample(1.8, 40.0, -0.4, &log_grid(2e3, 3e4, 15));
        let law = fit_power_law(&points, &FitConfig::default()).unwrap().model;
        let min = points.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
        assert!(law.c() >= 0.0 && law.c() < min);
        assert!((law.eval(1e5).unwrap() - (1.8 + 40.0 * 1e5f64.powf(-0.4))).abs() < 1e-6);
    }

    #[test]
    fn deterministic() {
        let points = sample(0.5, 2.0, -0.3, &log_grid(1e3, 1e5, 8));
        let cfg = FitConfig { seed: 9, restarts: 12, ..Default::default() };
        assert_eq!(fit_power_law(&points, &cfg).unwrap(), fit_power_law(&points, &cfg).unwrap());
    }
}
