//! Nested prediction: a step law per training run extrapolates each curve
//! to the target step count, a size law per mixture extrapolates across
//! model sizes, and a mixing law over mixtures predicts any target mixture.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::{fit_boosted_on, fit_domain_law, fit_implicit_on, fit_power_law, Dataset, FitConfig};
use crate::law::{DomainLaw, LawForm, PowerLaw};
use crate::mixture::Mixture;
use crate::model::{LossSurface, MixingLawModel, Prediction, Predictor};
use crate::record::{LossTarget, RunRecord};

/// Fewest model sizes accepted: the size law needs one more point than its three parameters.
pub const MIN_SIZES: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Small model sizes, one run per (mixture, size).
    pub sizes: Vec<u64>,
    /// Last step used from the small-scale runs.
    pub s0: u64,
    pub s_target: u64,
    pub n_target: u64,
    /// First step used for step-law fitting (skips warmup).
    pub min_fit_step: u64,
    /// Boost the overall mixing-law fit.
    pub boosted: bool,
    /// Aggregation weights for the domain chains when records carry no
    /// overall loss; uniform when absent.
    pub validation_weights: Option<BTreeMap<String, f64>>,
    pub fit_config: FitConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            sizes: Vec::new(),
            s0: 0,
            s_target: 0,
            n_target: 0,
            min_fit_step: 2000,
            boosted: false,
            validation_weights: None,
            fit_config: FitConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        let mut sizes = self.sizes.clone();
        sizes.sort_unstable();
        sizes.dedup();
        if sizes.len() != self.sizes.len() {
            return bad("model sizes must be distinct".into());
        }
        if sizes.len() < MIN_SIZES {
            return bad(format!("at least {MIN_SIZES} model sizes are required, got {}", sizes.len()));
        }
        if sizes[0] < 1 {
            return bad("model sizes must be >= 1".into());
        }
        if self.n_target <= *sizes.last().unwrap() {
            return bad(format!("target size {} must exceed every small size", self.n_target));
        }
        if self.s0 < 1 || self.s_target <= self.s0 {
            return bad(format!("target steps {} must exceed the step budget {}", self.s_target, self.s0));
        }
        if self.min_fit_step < 1 {
            return bad("min_fit_step must be >= 1".into());
        }
        if self.min_fit_step > self.s0 {
            return bad(format!("min_fit_step {} exceeds the step budget {}", self.min_fit_step, self.s0));
        }
        self.fit_config.validate()
    }
}

/// Step law of one run for one loss channel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepFit {
    pub mixture: Mixture,
    pub model_size: u64,
    pub run_id: String,
    /// `"overall"` or a validation-domain name.
    pub target: String,
    pub law: PowerLaw,
    pub train_mae: f64,
    pub points: usize,
    pub at_s0: f64,
    pub at_target: f64,
}

/// Size law of one mixture for one loss channel, fitted on step-extrapolated losses.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SizeFit {
    pub mixture: Mixture,
    pub target: String,
    pub law: PowerLaw,
    pub train_mae: f64,
    pub at_target: f64,
}

/// Mean training MAE per stage, for inspecting how errors compound.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StageMaes {
    pub step: f64,
    pub size: f64,
    /// Mixing-law training MAE per loss channel.
    pub mixing: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetPrediction {
    pub mixture: Mixture,
    pub prediction: Prediction,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelinePrediction {
    pub config: PipelineConfig,
    pub training_domains: Vec<String>,
    pub step_fits: Vec<StepFit>,
    pub size_fits: Vec<SizeFit>,
    /// Model of the overall loss at `(n_target, s_target)`.
    pub overall_model: Predictor,
    /// Per-validation-domain laws, when records carry domain losses.
    pub domain_model: Option<MixingLawModel>,
    pub stage_maes: StageMaes,
    pub predicted: Vec<TargetPrediction>,
    pub warnings: Vec<String>,
}

impl LossSurface<f64> for PipelinePrediction {
    fn num_domains(&self) -> usize {
        self.training_domains.len()
    }

    fn domain_names(&self) -> Vec<String> {
        self.training_domains.clone()
    }

    fn output_labels(&self) -> Vec<String> {
        match &self.domain_model {
            Some(model) => model.output_labels(),
            None => self.overall_model.output_labels(),
        }
    }

    fn predict_raw(&self, r: &[f64]) -> Prediction {
        let overall = self.overall_model.predict_raw(r);
        match &self.domain_model {
            Some(model) => Prediction { overall: overall.overall, per_domain: model.predict_raw(r).per_domain },
            None => overall,
        }
    }

    fn is_smooth(&self) -> bool {
        self.overall_model.is_smooth()
    }
}

impl PipelinePrediction {
    /// Size-stage value of `channel` at a fitted mixture.
    pub fn size_stage_value(&self, mixture: &Mixture, channel: &str) -> Option<f64> {
        let key = mixture.key();
        self.size_fits.iter().find(|f| f.target == channel && f.mixture.key() == key).map(|f| f.at_target)
    }
}

fn channel_label(target: &LossTarget) -> String {
    match target {
        LossTarget::Overall => "overall".to_string(),
        LossTarget::Domain(d) => d.clone(),
    }
}

/// Adds a warning when every residual of a stage has the same sign.
fn check_bias(stage: &str, residuals: &[f64], warnings: &mut Vec<String>) {
    if residuals.len() < 2 {
        return;
    }
    let direction = if residuals.iter().all(|r| *r > 0.0) {
        "above"
    } else if residuals.iter().all(|r| *r < 0.0) {
        "below"
    } else {
        return;
    };
    let message = format!("all {} {stage} residuals lie {direction} the observations", residuals.len());
    log::warn!("{message}");
    warnings.push(message);
}

struct Cell<'a> {
    mixture: &'a Mixture,
    size: u64,
    rows: Vec<&'a RunRecord>,
}

/// Groups records into (mixture, size) cells and checks that every mixture
/// has a usable run at every configured size.
fn collect_cells<'a>(records: &'a [RunRecord], config: &PipelineConfig) -> Result<(Vec<&'a Mixture>, Vec<Cell<'a>>)> {
    let mut mixtures: Vec<&Mixture> = Vec::new();
    let mut by_cell: BTreeMap<(usize, u64), Vec<&RunRecord>> = BTreeMap::new();
    for record in records {
        if !config.sizes.contains(&record.model_size) {
            log::debug!("skipping {} (size {} not configured)", record.run_id, record.model_size);
            continue;
        }
        let key = record.mixture.key();
        let index = match mixtures.iter().position(|m| m.key() == key) {
            Some(i) => i,
            None => {
                mixtures.push(&record.mixture);
                mixtures.len() - 1
            }
        };
        by_cell.entry((index, record.model_size)).or_default().push(record);
    }

    let mut missing = Vec::new();
    let mut cells = Vec::new();
    for (index, mixture) in mixtures.iter().enumerate() {
        for &size in &config.sizes {
            let Some(rows) = by_cell.remove(&(index, size)) else {
                missing.push(format!("mixture {mixture} size {size}: no run"));
                continue;
            };
            if let Some(other) = rows.iter().find(|r| r.run_id != rows[0].run_id) {
                return Err(Error::InvalidRecord {
                    row: other.run_id.clone(),
                    rule: "single-run-per-cell",
                    detail: format!("runs {} and {} share mixture {mixture} and size {size}", rows[0].run_id, other.run_id),
                });
            }
            let mut steps: Vec<u64> = rows.iter().map(|r| r.step).collect();
            steps.sort_unstable();
            if let Some(w) = steps.windows(2).find(|w| w[0] == w[1]) {
                return Err(Error::InvalidRecord {
                    row: rows[0].run_id.clone(),
                    rule: "duplicate-step",
                    detail: format!("step {} appears twice", w[0]),
                });
            }
            let usable = steps.iter().filter(|&&s| s >= config.min_fit_step && s <= config.s0).count();
            if usable < 4 {
                missing.push(format!(
                    "mixture {mixture} size {size}: {usable} steps in [{}, {}], need 4",
                    config.min_fit_step, config.s0
                ));
                continue;
            }
            let mut rows = rows;
            rows.sort_by_key(|r| r.step);
            cells.push(Cell { mixture, size, rows });
        }
    }
    if !missing.is_empty() {
        return Err(Error::Coverage { missing });
    }
    Ok((mixtures, cells))
}

/// Loss channels present in the records: every validation domain, plus
/// the overall loss when all records carry it.
fn channels(records: &[&RunRecord]) -> Result<Vec<LossTarget>> {
    let first = records.first().ok_or(Error::InsufficientPoints { needed: 1, got: 0 })?;
    let mut out: Vec<LossTarget> = first.domain_losses.keys().map(|d| LossTarget::Domain(d.clone())).collect();
    let with_overall = records.iter().filter(|r| r.overall_loss.is_some()).count();
    if with_overall == records.len() {
        out.push(LossTarget::Overall);
    } else if with_overall > 0 {
        let row = records.iter().find(|r| r.overall_loss.is_none()).unwrap();
        return Err(Error::MissingDomainLoss { run_id: row.run_id.clone(), domain: "overall".into() });
    }
    if out.is_empty() {
        return Err(Error::InvalidConfig("records carry no losses".into()));
    }
    Ok(out)
}

/// Runs the three nested stages on `records` and predicts every target mixture.
pub fn run_pipeline(records: &[RunRecord], targets: &[Mixture], config: &PipelineConfig) -> Result<PipelinePrediction> {
    config.validate()?;
    for record in records {
        record.validate()?;
    }
    let (mixtures, cells) = collect_cells(records, config)?;
    let training_domains = mixtures[0].domain_names().to_vec();
    if let Some(m) = mixtures.iter().find(|m| m.domain_names() != training_domains.as_slice()) {
        return Err(Error::InvalidRecord {
            row: format!("mixture {m}"),
            rule: "domain-order",
            detail: "all mixtures must share one domain ordering".into(),
        });
    }
    let used: Vec<&RunRecord> = cells.iter().flat_map(|c| c.rows.iter().copied()).collect();
    let channels = channels(&used)?;
    let fit = &config.fit_config;
    let s0 = config.s0 as f64;
    let s_target = config.s_target as f64;
    let mut warnings = Vec::new();

    // stage 1: step law per run and channel
    let step_fits: Vec<(StepFit, Vec<f64>)> = cells
        .par_iter()
        .map(|cell| {
            channels
                .iter()
                .map(|target| {
                    let label = channel_label(target);
                    let stage = || format!("step law (mixture {}, size {}, {label})", cell.mixture, cell.size);
                    let rows: Vec<&RunRecord> = cell
                        .rows
                        .iter()
                        .copied()
                        .filter(|r| r.step >= config.min_fit_step && r.step <= config.s0)
                        .collect();
                    let points = rows
                        .iter()
                        .map(|r| Ok((r.step as f64, target.loss_of(r)?)))
                        .collect::<Result<Vec<_>>>()
                        .map_err(|e| e.in_stage(stage()))?;
                    let report = fit_power_law(&points, fit).map_err(|e| e.in_stage(stage()))?;
                    let law = report.model;
                    let residuals =
                        points.iter().map(|&(x, y)| law.eval(x).map(|p| p - y)).collect::<Result<Vec<_>>>()?;
                    let fit = StepFit {
                        mixture: cell.mixture.clone(),
                        model_size: cell.size,
                        run_id: cell.rows[0].run_id.clone(),
                        target: label,
                        at_s0: law.eval(s0)?,
                        at_target: law.eval(s_target)?,
                        law,
                        train_mae: report.train_mae,
                        points: points.len(),
                    };
                    Ok((fit, residuals))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    for (f, _) in &step_fits {
        if f.law.alpha() >= 0.0 {
            let message = format!(
                "step law for run {} ({}) does not decrease with steps (alpha = {})",
                f.run_id, f.target, f.law.alpha()
            );
            log::warn!("{message}");
            warnings.push(message);
        }
    }
    let step_residuals: Vec<f64> = step_fits.iter().flat_map(|(_, r)| r.iter().copied()).collect();
    check_bias("step-law", &step_residuals, &mut warnings);
    let step_fits: Vec<StepFit> = step_fits.into_iter().map(|(f, _)| f).collect();

    // stage 2: size law per mixture and channel, on losses extrapolated to s_target
    let n_target = config.n_target as f64;
    let size_fits: Vec<(SizeFit, Vec<f64>)> = mixtures
        .par_iter()
        .map(|mixture| {
            let key = mixture.key();
            channels
                .iter()
                .map(|target| {
                    let label = channel_label(target);
                    let points: Vec<(f64, f64)> = config
                        .sizes
                        .iter()
                        .map(|&size| {
                            let f = step_fits
                                .iter()
                                .find(|f| f.model_size == size && f.target == label && f.mixture.key() == key)
                                .expect("step fit exists for every covered cell");
                            (size as f64, f.at_target)
                        })
                        .collect();
                    let report = fit_power_law(&points, fit)
                        .map_err(|e| e.in_stage(format!("size law (mixture {mixture}, {label})")))?;
                    let law = report.model;
                    let residuals =
                        points.iter().map(|&(x, y)| law.eval(x).map(|p| p - y)).collect::<Result<Vec<_>>>()?;
                    let fit = SizeFit {
                        mixture: (*mixture).clone(),
                        target: label,
                        at_target: law.eval(n_target)?,
                        law,
                        train_mae: report.train_mae,
                    };
                    Ok((fit, residuals))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    let size_residuals: Vec<f64> = size_fits.iter().flat_map(|(_, r)| r.iter().copied()).collect();
    check_bias("size-law", &size_residuals, &mut warnings);
    let size_fits: Vec<SizeFit> = size_fits.into_iter().map(|(f, _)| f).collect();

    // stage 3: mixing laws over mixtures at (n_target, s_target)
    let xs: Vec<Vec<f64>> = mixtures.iter().map(|m| m.proportions().to_vec()).collect();
    let dataset = |label: &str| -> Result<Dataset> {
        let ys = mixtures
            .iter()
            .map(|m| {
                let key = m.key();
                size_fits.iter().find(|f| f.target == label && f.mixture.key() == key).unwrap().at_target
            })
            .collect();
        Dataset::new(training_domains.clone(), xs.clone(), ys)
    };
    let mut mixing_maes = BTreeMap::new();
    let mut mixing_residuals = Vec::new();

    let domain_names: Vec<String> = channels
        .iter()
        .filter_map(|t| match t {
            LossTarget::Domain(d) => Some(d.clone()),
            LossTarget::Overall => None,
        })
        .collect();
    let domain_model = if domain_names.is_empty() {
        None
    } else {
        let laws: Vec<DomainLaw> = domain_names
            .par_iter()
            .map(|d| {
                let data = dataset(d)?;
                let report = fit_domain_law(&data, LawForm::M4, fit)
                    .map_err(|e| e.in_stage(format!("mixing law ({d})")))?;
                Ok((report, data))
            })
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .zip(&domain_names)
            .map(|((report, data), d)| {
                mixing_maes.insert(d.clone(), report.train_mae);
                mixing_residuals.extend(data.xs.iter().zip(&data.ys).map(|(x, y)| report.model.eval_raw(x) - y));
                report.model
            })
            .collect();
        let weights = match &config.validation_weights {
            None => vec![1.0 / domain_names.len() as f64; domain_names.len()],
            Some(w) => domain_names
                .iter()
                .map(|d| {
                    w.get(d).copied().ok_or_else(|| Error::InvalidConfig(format!("no validation weight for domain {d}")))
                })
                .collect::<Result<_>>()?,
        };
        Some(MixingLawModel::explicit(laws, domain_names.clone(), weights, training_domains.clone())?)
    };

    let overall_model = if channels.contains(&LossTarget::Overall) {
        let data = dataset("overall")?;
        let stage = |e: Error| e.in_stage("mixing law (overall)");
        let (predictor, mae) = if config.boosted {
            let report = fit_boosted_on(&data, fit).map_err(stage)?;
            (Predictor::Ensemble(report.model), report.train_mae)
        } else {
            let report = fit_implicit_on(&data, fit).map_err(stage)?;
            (Predictor::Mixing(report.model), report.train_mae)
        };
        mixing_maes.insert("overall".to_string(), mae);
        mixing_residuals.extend(data.xs.iter().zip(&data.ys).map(|(x, y)| predictor.overall_raw(x) - y));
        predictor
    } else {
        Predictor::Mixing(domain_model.clone().expect("domain chains exist when overall is absent"))
    };
    check_bias("mixing-law", &mixing_residuals, &mut warnings);

    let mean = |v: &mut dyn Iterator<Item = f64>| {
        let (sum, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
        if n == 0 {
            0.0
        } else {
            sum / n as f64
        }
    };
    let stage_maes = StageMaes {
        step: mean(&mut step_fits.iter().map(|f| f.train_mae)),
        size: mean(&mut size_fits.iter().map(|f| f.train_mae)),
        mixing: mixing_maes,
    };

    let mut result = PipelinePrediction {
        config: config.clone(),
        training_domains,
        step_fits,
        size_fits,
        overall_model,
        domain_model,
        stage_maes,
        predicted: Vec::new(),
        warnings,
    };
    let predicted = targets
        .iter()
        .map(|t| Ok(TargetPrediction { mixture: t.clone(), prediction: result.predict(t)? }))
        .collect::<Result<Vec<_>>>()?;
    result.predicted = predicted;
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::law::ExpDomainLaw;

    const SIZES: [u64; 4] = [1_000_000, 2_000_000, 4_000_000, 8_000_000];

    fn mixtures() -> Vec<Vec<f64>> {
        let mut out = Vec::new();
        for a in 0..=4 {
            for b in 0..=(4 - a) {
                out.push(vec![a as f64 / 4.0, b as f64 / 4.0, (4 - a - b) as f64 / 4.0]);
            }
        }
        out
    }

    fn truth(n: f64, s: f64, r: &[f64]) -> f64 {
        let mix = ExpDomainLaw::new(1.5, 0.6, vec![-1.0, 0.4, -0.3]).unwrap();
        mix.eval_raw(r) + 2.0 * s.powf(-0.1) + 30.0 * n.powf(-0.3)
    }

    fn records(mixes: &[Vec<f64>], domain: bool) -> Vec<RunRecord> {
        let mut out = Vec::new();
        for (i, r) in mixes.iter().enumerate() {
            for &n in &SIZES {
                for step in (2000..=10_000).step_by(1000) {
                    let loss = truth(n as f64, step as f64, r);
                    let mut domain_losses = BTreeMap::new();
                    if domain {
                        domain_losses.insert("val".to_string(), loss);
                    }
                    out.push(RunRecord {
                        run_id: format!("m{i}-n{n}"),
                        model_size: n,
                        step,
                        batch_tokens: 1024,
                        mixture: Mixture::from_proportions(r.clone()).unwrap(),
                        domain_losses,
                        overall_loss: if domain { None } else { Some(loss) },
                    });
                }
            }
        }
        out
    }

    fn config() -> PipelineConfig {
        PipelineConfig {
            sizes: SIZES.to_vec(),
            s0: 10_000,
            s_target: 30_000,
            n_target: 80_000_000,
            fit_config: FitConfig { implicit_domains: 2, restarts: 4, ..FitConfig::default() },
            ..PipelineConfig::default()
        }
    }

    #[test]
    fn config_validation() {
        let mut c = config();
        c.sizes.pop();
        assert!(matches!(c.validate(), Err(Error::InvalidConfig(_))));
        let c = PipelineConfig { s_target: 10_000, ..config() };
        assert!(c.validate().is_err());
        let c = PipelineConfig { n_target: 8_000_000, ..config() };
        assert!(c.validate().is_err());
    }

    #[test]
    fn domain_chain_recovers_truth() {
        let mixes = mixtures();
        let targets: Vec<Mixture> = vec![
            Mixture::from_proportions(vec![0.3, 0.3, 0.4]).unwrap(),
            Mixture::from_proportions(vec![0.1, 0.6, 0.3]).unwrap(),
        ];
        let out = run_pipeline(&records(&mixes, true), &targets, &config()).unwrap();
        assert_eq!(out.step_fits.len(), mixes.len() * 4);
        assert_eq!(out.size_fits.len(), mixes.len());
        for t in &out.predicted {
            let expected = truth(80e6, 30_000.0, t.mixture.proportions());
            let rel = (t.prediction.overall - expected).abs() / expected;
            assert!(rel < 0.005, "{rel}");
            assert_eq!(t.prediction.per_domain.len(), 1);
        }
        assert_eq!(out.output_labels(), vec!["val".to_string()]);
    }

    #[test]
    fn overall_chain_and_in_sample_consistency() {
        let mixes = mixtures();
        let fitted = Mixture::from_proportions(mixes[3].clone()).unwrap();
        let out = run_pipeline(&records(&mixes, false), std::slice::from_ref(&fitted), &config()).unwrap();
        let stored = out.size_stage_value(&fitted, "overall").unwrap();
        let mae = out.stage_maes.mixing["overall"];
        let predicted = out.predict(&fitted).unwrap().overall;
        assert!((predicted - stored).abs() <= mae * mixes.len() as f64 + 1e-12);
        assert_eq!(predicted, out.predict(&fitted).unwrap().overall);
        for f in &out.step_fits {
            assert!(f.at_target < f.at_s0);
            assert!(f.at_target > f.law.c());
        }
    }

    #[test]
    fn missing_cell_is_named() {
        let mixes = mixtures();
        let mut recs = records(&mixes, true);
        recs.retain(|r| !(r.run_id == "m2-n4000000"));
        match run_pipeline(&recs, &[], &config()) {
            Err(Error::Coverage { missing }) => {
                assert_eq!(missing.len(), 1);
                assert!(missing[0].contains("size 4000000"), "{missing:?}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn stage_isolation() {
        let mixes = mixtures();
        let base = records(&mixes, true);
        let mut perturbed = base.clone();
        for r in perturbed.iter_mut().filter(|r| r.run_id.starts_with("m0-")) {
            *r.domain_losses.get_mut("val").unwrap() *= 1.01;
        }
        let a = run_pipeline(&base, &[], &config()).unwrap();
        let b = run_pipeline(&perturbed, &[], &config()).unwrap();
        let m0 = Mixture::from_proportions(mixes[0].clone()).unwrap().key();
        for (x, y) in a.step_fits.iter().zip(&b.step_fits) {
            assert_eq!(x.mixture.key() == m0, x != y);
        }
        for (x, y) in a.size_fits.iter().zip(&b.size_fits) {
            assert_eq!(x.mixture.key() == m0, x != y);
        }
    }

    #[test]
    fn two_runs_in_one_cell_rejected() {
        let mixes = mixtures();
        let mut recs = records(&mixes, true);
        recs[0].run_id = "intruder".into();
        assert!(matches!(
            run_pipeline(&recs, &[], &config()),
            Err(Error::InvalidRecord { rule: "single-run-per-cell", .. })
        ));
    }
}
