//! Implicit domain aggregation: `K` latent validation domains, each an
//! exponential mixing law, combined by softmax-normalized learned weights.
//!
//! Viewed as a network, the hidden layer computes `c_i + k_i exp(t_i . r)`
//! and the output layer takes their convex combination. Fitting is
//! full-batch Adam on the mean Huber loss of the overall prediction,
//! polished by Levenberg-Marquardt from the Adam iterate.

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;

use super::lm::{minimize_huber, ResidualModel};
use super::{
    huber, huber_derivative, mean_absolute_error, sigmoid, softplus, softplus_inverse, Dataset, FitConfig, FitReport,
    MIN_IMPLICIT_RECORDS,
};
use crate::error::{Error, Result};
use crate::law::ExpDomainLaw;
use crate::model::MixingLawModel;
use crate::record::{LossTarget, RunRecord};
use crate::scalar::{exp_saturates, EXP_CLAMP};

/// Mean Huber loss of the implicit-aggregation model as a function of its
/// flat parameter vector.
///
/// Layout: for each latent domain `i`, `[gamma_i, kappa_i, t_i1..t_iM]` with
/// `c_i = softplus(gamma_i)` and `k_i = exp(kappa_i)`; then `K` softmax logits.
#[derive(Clone, Debug)]
pub struct ImplicitObjective {
    data: Dataset,
    k: usize,
    delta: f64,
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

impl ImplicitObjective {
    pub fn new(data: Dataset, k: usize, delta: f64) -> Self {
        ImplicitObjective { data, k, delta }
    }

    fn block(&self) -> usize {
        self.data.num_domains() + 2
    }

    pub fn num_params(&self) -> usize {
        self.k * self.block() + self.k
    }

    pub fn num_latent_domains(&self) -> usize {
        self.k
    }

    pub fn data(&self) -> &Dataset {
        &self.data
    }

    /// Overall prediction at `r` plus the per-domain activations.
    fn forward(&self, theta: &[f64], weights: &[f64], r: &[f64], z: &mut [f64], e: &mut [f64], l: &mut [f64]) -> f64 {
        let b = self.block();
        let mut pred = 0.0;
        for i in 0..self.k {
            let p = &theta[i * b..(i + 1) * b];
            z[i] = p[2..].iter().zip(r).map(|(t, x)| t * x).sum();
            e[i] = z[i].clamp(-EXP_CLAMP, EXP_CLAMP).exp();
            l[i] = softplus(p[0]) + p[1].exp() * e[i];
            pred += weights[i] * l[i];
        }
        pred
    }

    pub fn predict(&self, theta: &[f64], r: &[f64]) -> f64 {
        let weights = softmax(&theta[self.k * self.block()..]);
        let (mut z, mut e, mut l) = (vec![0.0; self.k], vec![0.0; self.k], vec![0.0; self.k]);
        self.forward(theta, &weights, r, &mut z, &mut e, &mut l)
    }

    pub fn value(&self, theta: &[f64]) -> f64 {
        let weights = softmax(&theta[self.k * self.block()..]);
        let (mut z, mut e, mut l) = (vec![0.0; self.k], vec![0.0; self.k], vec![0.0; self.k]);
        let total: f64 = self
            .data
            .xs
            .iter()
            .zip(&self.data.ys)
            .map(|(x, &y)| huber(self.forward(theta, &weights, x, &mut z, &mut e, &mut l) - y, self.delta))
            .sum();
        total / self.data.len() as f64
    }

    /// Objective value; writes its gradient into `grad`.
    pub fn value_and_gradient(&self, theta: &[f64], grad: &mut [f64]) -> f64 {
        let b = self.block();
        let m = self.data.num_domains();
        let n = self.data.len() as f64;
        let logit_offset = self.k * b;
        let weights = softmax(&theta[logit_offset..]);
        let (mut z, mut e, mut l) = (vec![0.0; self.k], vec![0.0; self.k], vec![0.0; self.k]);
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut total = 0.0;
        for (x, &y) in self.data.xs.iter().zip(&self.data.ys) {
            let pred = self.forward(theta, &weights, x, &mut z, &mut e, &mut l);
            let residual = pred - y;
            total += huber(residual, self.delta);
            let upstream = huber_derivative(residual, self.delta) / n;
            if upstream == 0.0 {
                continue;
            }
            for i in 0..self.k {
                let p = &theta[i * b..(i + 1) * b];
                let g = &mut grad[i * b..(i + 1) * b];
                let s = weights[i] * upstream;
                let amplitude = p[1].exp() * e[i];
                g[0] += s * sigmoid(p[0]);
                g[1] += s * amplitude;
                if !exp_saturates(z[i]) {
                    for j in 0..m {
                        g[2 + j] += s * amplitude * x[j];
                    }
                }
                grad[logit_offset + i] += upstream * weights[i] * (l[i] - pred);
            }
        }
        total / n
    }

    /// Data-informed starting point for restart `index`.
    pub fn initial(&self, config: &FitConfig, index: usize) -> Vec<f64> {
        let mut rng = config.restart_rng(index);
        let m = self.data.num_domains();
        let mean = self.data.ys.iter().sum::<f64>() / self.data.len() as f64;
        let c0 = 0.5 * self.data.min_loss();
        let mut theta = Vec::with_capacity(self.num_params());
        for _ in 0..self.k {
            let t: Vec<f64> = (0..m).map(|_| rng.random_range(-2.0..2.0)).collect();
            let mean_basis = self
                .data
                .xs
                .iter()
                .map(|x| t.iter().zip(x).map(|(a, b)| a * b).sum::<f64>().exp())
                .sum::<f64>()
                / self.data.len() as f64;
            theta.push(softplus_inverse(c0));
            theta.push(((mean - c0).max(1e-6) / mean_basis).ln());
            theta.extend(t);
        }
        theta.extend((0..self.k).map(|_| rng.random_range(-0.1..0.1)));
        theta
    }

    /// Model with the coefficients encoded by `theta`.
    pub fn to_model(&self, theta: &[f64]) -> Result<MixingLawModel> {
        let b = self.block();
        let laws = (0..self.k)
            .map(|i| {
                let p = &theta[i * b..(i + 1) * b];
                ExpDomainLaw::new(softplus(p[0]), p[1].exp().max(f64::MIN_POSITIVE), p[2..].to_vec())
            })
            .collect::<Result<Vec<_>>>()?;
        let weights = softmax(&theta[self.k * b..]);
        MixingLawModel::implicit(laws, weights, self.data.training_domains.clone())
    }

    /// False when predictions between the observed mixtures leave the observed
    /// loss range by more than its width (latent terms cancelling on the data).
    fn plausible(&self, theta: &[f64]) -> bool {
        const MAX_PROBES: usize = 64;
        let (lo, hi) = (self.data.min_loss(), self.data.max_loss());
        let span = (hi - lo).max(1e-6);
        let ok = |r: &[f64]| {
            let v = self.predict(theta, r);
            v.is_finite() && v >= lo - span && v <= hi + span
        };
        let m = self.data.num_domains();
        let vertices_ok = (0..m).all(|j| {
            let mut r = vec![0.0; m];
            r[j] = 1.0;
            ok(&r)
        });
        let xs = &self.data.xs[..self.data.len().min(MAX_PROBES)];
        vertices_ok
            && xs.iter().enumerate().all(|(a, xa)| {
                xs[a + 1..].iter().all(|xb| {
                    let mid: Vec<f64> = xa.iter().zip(xb).map(|(u, v)| 0.5 * (u + v)).collect();
                    ok(&mid)
                })
            })
    }

    /// Full-batch Adam with cosine-decayed step size; returns the best iterate.
    fn descend(&self, theta0: Vec<f64>, config: &FitConfig) -> (Vec<f64>, f64, bool) {
        const BETA1: f64 = 0.9;
        const BETA2: f64 = 0.999;
        const EPS: f64 = 1e-12;
        const WINDOW: usize = 200;

        let p = theta0.len();
        let mut theta = theta0;
        let mut grad = vec![0.0; p];
        let (mut first, mut second) = (vec![0.0; p], vec![0.0; p]);
        let mut best = (theta.clone(), f64::INFINITY);
        let mut window_start = f64::INFINITY;
        let mut converged = false;
        let iters = config.descent_iters;
        for it in 0..iters {
            let value = self.value_and_gradient(&theta, &mut grad);
            if !value.is_finite() {
                break;
            }
            if value < best.1 {
                best = (theta.clone(), value);
            }
            if it % WINDOW == 0 {
                if it > 0 && (window_start - best.1) <= config.tol * window_start.max(1e-300) {
                    converged = true;
                    break;
                }
                window_start = best.1;
            }
            let progress = it as f64 / iters as f64;
            let lr = config.learning_rate * (0.01 + 0.99 * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()));
            let bias1 = 1.0 - BETA1.powi(it as i32 + 1);
            let bias2 = 1.0 - BETA2.powi(it as i32 + 1);
            for j in 0..p {
                first[j] = BETA1 * first[j] + (1.0 - BETA1) * grad[j];
                second[j] = BETA2 * second[j] + (1.0 - BETA2) * grad[j] * grad[j];
                theta[j] -= lr * (first[j] / bias1) / ((second[j] / bias2).sqrt() + EPS);
            }
        }
        let last = self.value(&theta);
        if last < best.1 {
            best = (theta, last);
        }
        (best.0, best.1, converged || iters > 0)
    }
}

impl ResidualModel for ImplicitObjective {
    fn num_params(&self) -> usize {
        ImplicitObjective::num_params(self)
    }

    fn num_residuals(&self) -> usize {
        self.data.len()
    }

    fn residuals(&self, theta: &[f64], out: &mut [f64]) {
        let weights = softmax(&theta[self.k * self.block()..]);
        let (mut z, mut e, mut l) = (vec![0.0; self.k], vec![0.0; self.k], vec![0.0; self.k]);
        for (i, (x, &y)) in self.data.xs.iter().zip(&self.data.ys).enumerate() {
            out[i] = self.forward(theta, &weights, x, &mut z, &mut e, &mut l) - y;
        }
    }

    fn jacobian(&self, theta: &[f64], out: &mut DMatrix<f64>) {
        let b = self.block();
        let m = self.data.num_domains();
        let logit_offset = self.k * b;
        let weights = softmax(&theta[logit_offset..]);
        let (mut z, mut e, mut l) = (vec![0.0; self.k], vec![0.0; self.k], vec![0.0; self.k]);
        out.fill(0.0);
        for (row, x) in self.data.xs.iter().enumerate() {
            let pred = self.forward(theta, &weights, x, &mut z, &mut e, &mut l);
            for i in 0..self.k {
                let p = &theta[i * b..(i + 1) * b];
                let amplitude = p[1].exp() * e[i];
                out[(row, i * b)] = weights[i] * sigmoid(p[0]);
                out[(row, i * b + 1)] = weights[i] * amplitude;
                if !exp_saturates(z[i]) {
                    for j in 0..m {
                        out[(row, i * b + 2 + j)] = weights[i] * amplitude * x[j];
                    }
                }
                out[(row, logit_offset + i)] = weights[i] * (l[i] - pred);
            }
        }
    }
}

/// Fits an implicit-aggregation model to `(mixture, overall loss)` rows.
pub fn fit_implicit_on(data: &Dataset, config: &FitConfig) -> Result<FitReport<MixingLawModel>> {
    config.validate()?;
    if data.len() < MIN_IMPLICIT_RECORDS {
        return Err(Error::InsufficientPoints { needed: MIN_IMPLICIT_RECORDS, got: data.len() });
    }
    if data.distinct_mixtures() < 2 {
        return Err(Error::Degenerate("all records share one mixture".into()));
    }
    let objective = ImplicitObjective::new(data.clone(), config.implicit_domains, config.huber_delta);
    let outcomes: Vec<(Vec<f64>, f64, bool)> = (0..config.restarts)
        .into_par_iter()
        .map(|i| {
            let (theta, value, converged) = objective.descend(objective.initial(config, i), config);
            if !value.is_finite() {
                return (theta, value, converged);
            }
            let polished = minimize_huber(&objective, &theta, config.huber_delta, config.max_iters, config.tol);
            if polished.objective < value && objective.plausible(&polished.theta) {
                (polished.theta, polished.objective, converged || polished.converged)
            } else {
                (theta, value, converged)
            }
        })
        .collect();
    let (_, best) = outcomes
        .iter()
        .enumerate()
        .filter(|(_, o)| o.1.is_finite())
        .min_by(|a, b| a.1 .1.total_cmp(&b.1 .1).then(a.0.cmp(&b.0)))
        .ok_or_else(|| Error::Degenerate("implicit fit diverged from every start".into()))?;
    let model = objective.to_model(&best.0)?;
    let predicted: Vec<f64> = data.xs.iter().map(|x| crate::model::LossSurface::overall_raw(&model, x)).collect();
    Ok(FitReport {
        model,
        train_mae: mean_absolute_error(&predicted, &data.ys),
        val_mae: None,
        objective: best.1,
        converged: best.2,
        restarts_used: config.restarts,
    })
}

/// Fits an implicit-aggregation model to the overall losses of `records`.
pub fn fit_implicit(records: &[RunRecord], config: &FitConfig) -> Result<FitReport<MixingLawModel>> {
    let data = Dataset::from_records(records, &LossTarget::Overall)?;
    fit_implicit_on(&data, config)
}
