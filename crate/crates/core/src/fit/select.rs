//! Candidate-form comparison on a fixed fit/validation split.

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{fit_domain_law, mean_absolute_error, Dataset, FitConfig};
use crate::error::{Error, Result};
use crate::law::{DomainLaw, LawForm};
use crate::record::{LossTarget, RunRecord};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FormRow {
    pub form: LawForm,
    pub coefficients: usize,
    pub train_mae: Option<f64>,
    pub val_mae: Option<f64>,
    pub law: Option<DomainLaw>,
    /// Fit failure, when the form could not be fitted.
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FormSelection {
    pub target_domain: String,
    /// MAE of always predicting the midpoint of the fitting losses' range.
    pub baseline_train_mae: f64,
    pub baseline_val_mae: f64,
    pub rows: Vec<FormRow>,
}

impl FormSelection {
    pub fn row(&self, form: LawForm) -> Option<&FormRow> {
        self.rows.iter().find(|r| r.form == form)
    }
}

/// MAE of predicting `(min + max) / 2` of `fit_losses` on `eval_losses`.
pub fn midpoint_baseline(fit_losses: &[f64], eval_losses: &[f64]) -> f64 {
    let lo = fit_losses.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = fit_losses.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mid = 0.5 * (lo + hi);
    mean_absolute_error(&vec![mid; eval_losses.len()], eval_losses)
}

fn pick(records: &[RunRecord], ids: &BTreeSet<&str>) -> Vec<RunRecord> {
    records.iter().filter(|r| ids.contains(r.run_id.as_str())).cloned().collect()
}

/// Fits M1 through M4 on the `fit_ids` rows and scores them on both sides of the split.
///
/// A form that fails to fit is reported with its error; the others proceed.
pub fn select_form(
    records: &[RunRecord],
    target_domain: &str,
    fit_ids: &[String],
    val_ids: &[String],
    config: &FitConfig,
) -> Result<FormSelection> {
    config.validate()?;
    let fit_set: BTreeSet<&str> = fit_ids.iter().map(String::as_str).collect();
    let val_set: BTreeSet<&str> = val_ids.iter().map(String::as_str).collect();
    if fit_set.is_empty() || val_set.is_empty() {
        return Err(Error::InvalidConfig("fit and validation splits must both be non-empty".into()));
    }
    if let Some(shared) = fit_set.intersection(&val_set).next() {
        return Err(Error::InvalidConfig(format!("run {shared} appears in both splits")));
    }
    let known: BTreeSet<&str> = records.iter().map(|r| r.run_id.as_str()).collect();
    if let Some(missing) = fit_set.union(&val_set).find(|id| !known.contains(**id)) {
        return Err(Error::InvalidConfig(format!("run {missing} is not in the record set")));
    }

    let target = LossTarget::Domain(target_domain.to_string());
    let fit_data = Dataset::from_records(&pick(records, &fit_set), &target)?;
    let val_data = Dataset::from_records(&pick(records, &val_set), &target)?;
    let m = fit_data.num_domains();

    let rows = LawForm::ALL
        .par_iter()
        .map(|&form| {
            let coefficients = form.coefficient_count(m);
            match fit_domain_law(&fit_data, form, config) {
                Ok(report) => {
                    let predicted: Vec<f64> = val_data.xs.iter().map(|x| report.model.eval_raw(x)).collect();
                    FormRow {
                        form,
                        coefficients,
                        train_mae: Some(report.train_mae),
                        val_mae: Some(mean_absolute_error(&predicted, &val_data.ys)),
                        law: Some(report.model),
                        error: None,
                    }
                }
                Err(e) => FormRow {
                    form,
                    coefficients,
                    train_mae: None,
                    val_mae: None,
                    law: None,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();

    Ok(FormSelection {
        target_domain: target_domain.to_string(),
        baseline_train_mae: midpoint_baseline(&fit_data.ys, &fit_data.ys),
        baseline_val_mae: midpoint_baseline(&fit_data.ys, &val_data.ys),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mixture::Mixture;
    use std::collections::BTreeMap;

    fn records(f: impl Fn(&[f64]) -> f64) -> Vec<RunRecord> {
        let mut out = Vec::new();
        for a in 0..=7 {
            for b in 0..=(7 - a) {
                let r = vec![a as f64 / 7.0, b as f64 / 7.0, (7 - a - b) as f64 / 7.0];
                out.push(RunRecord {
                    run_id: format!("run{}", out.len()),
                    model_size: 1,
                    step: 1,
                    batch_tokens: 1,
                    domain_losses: BTreeMap::from([("code".to_string(), f(&r))]),
                    mixture: Mixture::from_proportions(r).unwrap(),
                    overall_loss: None,
                });
            }
        }
        out
    }

    fn split(records: &[RunRecord]) -> (Vec<String>, Vec<String>) {
        let ids: Vec<String> = records.iter().map(|r| r.run_id.clone()).collect();
        (ids[..24].to_vec(), ids[24..32].to_vec())
    }

    #[test]
    fn baseline_midpoint() {
        assert_eq!(midpoint_baseline(&[1.0, 3.0], &[1.0, 1.0]), 1.0);
    }

    #[test]
    fn constant_losses_fit_exactly() {
        let recs = records(|_| 2.5);
        let (fit, val) = split(&recs);
        let table = select_form(&recs, "code", &fit, &val, &FitConfig::default()).unwrap();
        assert!(table.baseline_val_mae <= 1e-6);
        for row in &table.rows {
            assert!(row.val_mae.unwrap() <= 1e-6, "{:?}", row);
            assert!(row.train_mae.unwrap() <= 1e-6);
        }
    }

    #[test]
    fn m4_data_prefers_m4_over_m3() {
        let recs = records(|r| 1.2 + 0.8 * (-1.5 * r[0] + 0.3 * r[1] - 0.2 * r[2]).exp());
        let (fit, val) = split(&recs);
        let table = select_form(&recs, "code", &fit, &val, &FitConfig::default()).unwrap();
        let m4 = table.row(LawForm::M4).unwrap().val_mae.unwrap();
        let m3 = table.row(LawForm::M3).unwrap().val_mae.unwrap();
        assert!(m4 < m3, "M4 {m4} vs M3 {m3}");
        assert!(m4 < table.baseline_val_mae);
    }

    #[test]
    fn split_validation() {
        let recs = records(|_| 2.0);
        let (fit, _) = split(&recs);
        assert!(select_form(&recs, "code", &fit, &[], &FitConfig::default()).is_err());
        assert!(select_form(&recs, "code", &fit, &fit[..1], &FitConfig::default()).is_err());
        assert!(select_form(&recs, "code", &fit, &["nope".to_string()], &FitConfig::default()).is_err());
    }

    #[test]
    fn failing_form_does_not_abort_others() {
        // 6 rows: enough for M2-M4 (5 coefficients) but not for M1 (7).
        let recs = records(|r| 2.0 + r[0]);
        let ids: Vec<String> = recs.iter().map(|r| r.run_id.clone()).collect();
        let table = select_form(&recs, "code", &ids[..6], &ids[6..10], &FitConfig::default()).unwrap();
        assert!(table.row(LawForm::M1).unwrap().error.is_some());
        assert!(table.row(LawForm::M4).unwrap().val_mae.is_some());
    }
}
