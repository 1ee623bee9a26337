//! Per-domain mixing-law fits for every candidate form.

use nalgebra::DMatrix;
use rand::seq::IndexedRandom;
use rand::Rng;
use rayon::prelude::*;

use super::lm::{minimize_huber, LmOutcome, ResidualModel};
use super::{mean_absolute_error, sigmoid, softplus, softplus_inverse, Dataset, FitConfig, FitReport, SLOPE_INIT_GRID};
use crate::error::{Error, Result};
use crate::law::{DomainLaw, LawForm};
use crate::model::MixingLawModel;
use crate::record::{LossTarget, RunRecord};
use crate::scalar::{exp_saturates, EXP_CLAMP};

/// Raw-loss residuals of one candidate form.
///
/// Parameter layout: `[gamma, kappa.., t_1..t_M]` with `c = softplus(gamma)`
/// and `k = exp(kappa)`; M1 carries `M` kappas, the other forms one.
struct FormProblem<'a> {
    form: LawForm,
    data: &'a Dataset,
}

impl FormProblem<'_> {
    fn m(&self) -> usize {
        self.data.num_domains()
    }

    fn slope_offset(&self) -> usize {
        match self.form {
            LawForm::M1 => 1 + self.m(),
            _ => 2,
        }
    }

    /// Prediction at `r`, writing d(pred)/d(theta) into `grad` when given.
    fn eval(&self, theta: &[f64], r: &[f64], mut grad: Option<&mut [f64]>) -> f64 {
        let m = self.m();
        let c = softplus(theta[0]);
        if let Some(g) = grad.as_deref_mut() {
            g[0] = sigmoid(theta[0]);
        }
        let t = &theta[self.slope_offset()..];
        match self.form {
            LawForm::M4 => {
                let k = theta[1].exp();
                let z: f64 = t.iter().zip(r).map(|(a, b)| a * b).sum();
                let e = z.clamp(-EXP_CLAMP, EXP_CLAMP).exp();
                if let Some(g) = grad {
                    g[1] = k * e;
                    let live = if exp_saturates(z) { 0.0 } else { 1.0 };
                    for j in 0..m {
                        g[2 + j] = live * k * e * r[j];
                    }
                }
                c + k * e
            }
            LawForm::M3 => {
                let k = theta[1].exp();
                let z: f64 = t.iter().zip(r).map(|(a, b)| a * b).product();
                let e = z.clamp(-EXP_CLAMP, EXP_CLAMP).exp();
                if let Some(g) = grad {
                    g[1] = k * e;
                    let live = if exp_saturates(z) { 0.0 } else { 1.0 };
                    for j in 0..m {
                        let others: f64 =
                            (0..m).filter(|&i| i != j).map(|i| t[i] * r[i]).product();
                        g[2 + j] = live * k * e * r[j] * others;
                    }
                }
                c + k * e
            }
            LawForm::M2 => {
                let k = theta[1].exp();
                let mut total = 0.0;
                for j in 0..m {
                    let z = t[j] * r[j];
                    let e = z.clamp(-EXP_CLAMP, EXP_CLAMP).exp();
                    total += e;
                    if let Some(g) = grad.as_deref_mut() {
                        g[2 + j] = if exp_saturates(z) { 0.0 } else { k * e * r[j] };
                    }
                }
                if let Some(g) = grad {
                    g[1] = k * total;
                }
                c + k * total
            }
            LawForm::M1 => {
                let mut total = 0.0;
                for j in 0..m {
                    let kj = theta[1 + j].exp();
                    let z = t[j] * r[j];
                    let e = z.clamp(-EXP_CLAMP, EXP_CLAMP).exp();
                    total += kj * e;
                    if let Some(g) = grad.as_deref_mut() {
                        g[1 + j] = kj * e;
                        g[1 + m + j] = if exp_saturates(z) { 0.0 } else { kj * e * r[j] };
                    }
                }
                c + total
            }
        }
    }

    /// Shape of the prediction with unit amplitude, used to seed `k`.
    fn basis(&self, t: &[f64], r: &[f64]) -> f64 {
        let clamp = |z: f64| z.clamp(-EXP_CLAMP, EXP_CLAMP).exp();
        match self.form {
            LawForm::M4 => clamp(t.iter().zip(r).map(|(a, b)| a * b).sum()),
            LawForm::M3 => clamp(t.iter().zip(r).map(|(a, b)| a * b).product()),
            LawForm::M1 | LawForm::M2 => t.iter().zip(r).map(|(a, b)| clamp(a * b)).sum(),
        }
    }

    fn initial(&self, config: &FitConfig, index: usize) -> Vec<f64> {
        let m = self.m();
        let mut rng = config.restart_rng(index);
        let t: Vec<f64> = if index == 0 {
            vec![0.0; m]
        } else {
            (0..m).map(|_| *SLOPE_INIT_GRID.choose(&mut rng).expect("non-empty grid")).collect()
        };
        let fraction = if index == 0 { 0.5 } else { rng.random_range(0.0..1.0) };
        let c0 = (self.data.min_loss() * fraction).max(1e-6 * self.data.min_loss());
        let (num, den) = self.data.xs.iter().zip(&self.data.ys).fold((0.0, 0.0), |(n, d), (x, &y)| {
            let b = self.basis(&t, x);
            (n + (y - c0) * b, d + b * b)
        });
        let k0 = if num > 0.0 && den > 0.0 && (num / den).is_finite() { num / den } else { 1e-3 };
        let mut theta = vec![softplus_inverse(c0)];
        match self.form {
            LawForm::M1 => theta.extend(std::iter::repeat_n(k0.ln(), m)),
            _ => theta.push(k0.ln()),
        }
        theta.extend(t);
        theta
    }

    fn to_law(&self, theta: &[f64]) -> Result<DomainLaw> {
        let m = self.m();
        let mut coefficients = vec![softplus(theta[0])];
        match self.form {
            LawForm::M1 => coefficients.extend(theta[1..=m].iter().map(|v| v.exp().max(f64::MIN_POSITIVE))),
            _ => coefficients.push(theta[1].exp().max(f64::MIN_POSITIVE)),
        }
        coefficients.extend_from_slice(&theta[self.slope_offset()..]);
        DomainLaw::from_coefficients(self.form, &coefficients, m)
    }
}

impl ResidualModel for FormProblem<'_> {
    fn num_params(&self) -> usize {
        self.form.coefficient_count(self.m())
    }

    fn num_residuals(&self) -> usize {
        self.data.len()
    }

    fn residuals(&self, theta: &[f64], out: &mut [f64]) {
        for (i, (x, &y)) in self.data.xs.iter().zip(&self.data.ys).enumerate() {
            out[i] = self.eval(theta, x, None) - y;
        }
    }

    fn jacobian(&self, theta: &[f64], out: &mut DMatrix<f64>) {
        let p = self.num_params();
        let mut g = vec![0.0; p];
        for (i, x) in self.data.xs.iter().enumerate() {
            self.eval(theta, x, Some(&mut g));
            for j in 0..p {
                out[(i, j)] = g[j];
            }
        }
    }
}

/// Fits one candidate form to `(mixture, loss)` rows by multi-start robust
/// Levenberg-Marquardt on raw-loss Huber residuals.
pub fn fit_domain_law(data: &Dataset, form: LawForm, config: &FitConfig) -> Result<FitReport<DomainLaw>> {
    config.validate()?;
    let m = data.num_domains();
    if m == 0 {
        return Err(Error::InvalidConfig("no training domains".into()));
    }
    let needed = form.coefficient_count(m) + 1;
    if data.len() < needed {
        return Err(Error::InsufficientPoints { needed, got: data.len() });
    }
    if data.distinct_mixtures() < 2 {
        return Err(Error::Degenerate("all records share one mixture (rank-deficient design)".into()));
    }

    let problem = FormProblem { form, data };
    let outcomes: Vec<LmOutcome> = (0..config.restarts)
        .into_par_iter()
        .map(|i| {
            let theta0 = problem.initial(config, i);
            minimize_huber(&problem, &theta0, config.huber_delta, config.max_iters, config.tol)
        })
        .collect();
    let (_, best) = outcomes
        .iter()
        .enumerate()
        .filter(|(_, o)| o.objective.is_finite())
        .min_by(|a, b| a.1.objective.total_cmp(&b.1.objective).then(a.0.cmp(&b.0)))
        .ok_or_else(|| Error::Degenerate(format!("{form} fit diverged from every start")))?;

    let law = problem.to_law(&best.theta)?;
    let predicted: Vec<f64> = data.xs.iter().map(|x| law.eval_raw(x)).collect();
    Ok(FitReport {
        model: law,
        train_mae: mean_absolute_error(&predicted, &data.ys),
        val_mae: None,
        objective: best.objective,
        converged: best.converged,
        restarts_used: config.restarts,
    })
}

/// Fits a law of `form` to the losses of `target_domain`.
pub fn fit_explicit(
    records: &[RunRecord],
    target_domain: &str,
    form: LawForm,
    config: &FitConfig,
) -> Result<FitReport<MixingLawModel>> {
    let data = Dataset::from_records(records, &LossTarget::Domain(target_domain.to_string()))?;
    let report = fit_domain_law(&data, form, config)?;
    let training = data.training_domains.clone();
    let model = MixingLawModel::single(report.model.clone(), training, target_domain.to_string())?;
    Ok(report.map(|_| model))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::law::ExpDomainLaw;
    use crate::mixture::Mixture;
    use std::collections::BTreeMap;
    use crate::model::LossSurface;

    fn record(id: usize, r: Vec<f64>, loss: f64) -> RunRecord {
        RunRecord {
            run_id: format!("run{id}"),
            model_size: 1,
            step: 1,
            batch_tokens: 1,
            mixture: Mixture::from_proportions(r).unwrap(),
            domain_losses: BTreeMap::from([("target".to_string(), loss)]),
            overall_loss: None,
        }
    }

    fn grid3() -> Vec<Vec<f64>> {
        let mut out = Vec::new();
        for a in 0..=8 {
            for b in 0..=(8 - a) {
                out.push(vec![a as f64 / 8.0, b as f64 / 8.0, (8 - a - b) as f64 / 8.0]);
            }
        }
        out
    }

    #[test]
    fn recovers_noiseless_m4() {
        let truth = ExpDomainLaw::new(1.2, 0.8, vec![-1.5, 0.3, -0.2]).unwrap();
        let points = grid3();
        let records: Vec<RunRecord> =
            points.iter().enumerate().map(|(i, r)| record(i, r.clone(), truth.eval_raw(r))).collect();
        let (fit, held): (Vec<_>, Vec<_>) = records.into_iter().enumerate().partition(|(i, _)| i % 5 != 0);
        let fit: Vec<RunRecord> = fit.into_iter().map(|x| x.1).take(24).collect();
        let held: Vec<RunRecord> = held.into_iter().map(|x| x.1).take(8).collect();
        let report = fit_explicit(&fit, "target", LawForm::M4, &FitConfig::default()).unwrap();
        let mae = held
            .iter()
            .map(|r| (report.model.predict_raw(r.mixture.proportions()).overall - r.domain_losses["target"]).abs())
            .sum::<f64>()
            / held.len() as f64;
        assert!(mae < 1e-3, "held-out MAE {mae}");
        assert!(report.train_mae < 1e-6);
    }

    #[test]
    fn five_records_insufficient_for_m3_domains() {
        let records: Vec<RunRecord> = grid3().into_iter().take(5).enumerate().map(|(i, r)| record(i, r, 2.0)).collect();
        assert!(matches!(
            fit_explicit(&records, "target", LawForm::M4, &FitConfig::default()),
            Err(Error::InsufficientPoints { needed: 6, got: 5 })
        ));
    }

    #[test]
    fn single_mixture_is_degenerate() {
        let records: Vec<RunRecord> = (0..10).map(|i| record(i, vec![0.2, 0.3, 0.5], 2.0 + i as f64 * 0.01)).collect();
        assert!(matches!(
            fit_explicit(&records, "target", LawForm::M4, &FitConfig::default()),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn missing_domain_loss() {
        let records: Vec<RunRecord> = grid3().into_iter().take(10).enumerate().map(|(i, r)| record(i, r, 2.0)).collect();
        assert!(matches!(
            fit_explicit(&records, "other", LawForm::M4, &FitConfig::default()),
            Err(Error::MissingDomainLoss { .. })
        ));
    }

    #[test]
    fn analytic_jacobian_matches_differences() {
        let data = Dataset::new(
            crate::mixture::default_domain_names(3),
            grid3().into_iter().take(12).collect(),
            vec![2.0; 12],
        )
        .unwrap();
        for form in LawForm::ALL {
            let problem = FormProblem { form, data: &data };
            let p = problem.num_params();
            let theta: Vec<f64> = (0..p).map(|j| 0.3 - 0.17 * j as f64).collect();
            let mut g = vec![0.0; p];
            for x in &data.xs {
                problem.eval(&theta, x, Some(&mut g));
                for j in 0..p {
                    let h = 1e-6;
                    let mut up = theta.clone();
                    up[j] += h;
                    let mut down = theta.clone();
                    down[j] -= h;
                    let fd = (problem.eval(&up, x, None) - problem.eval(&down, x, None)) / (2.0 * h);
                    assert!((fd - g[j]).abs() < 1e-7 * (1.0 + fd.abs()), "{form} param {j}: {fd} vs {}", g[j]);
                }
            }
        }
    }
}
