//! AdaBoost.R2 over implicit-aggregation base learners.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{fit_implicit_on, mean_absolute_error, Dataset, FitConfig, FitReport};
use crate::error::Result;
use crate::model::{EnsembleModel, LossSurface, MixingLawModel};
use crate::record::{LossTarget, RunRecord};

/// Boosts implicit-aggregation fits with AdaBoost.R2 (linear loss).
///
/// Stage one fits the rows as given; later stages fit a weighted bootstrap
/// resample. Each stage's average normalized loss `L` sets `beta = L / (1 - L)`
/// and a stage weight `ln(1 / beta)`; boosting stops once `L >= 0.5`.
pub fn fit_boosted_on(data: &Dataset, config: &FitConfig) -> Result<FitReport<EnsembleModel>> {
    config.validate()?;
    let n = data.len();
    let mut sample_weights = vec![1.0 / n as f64; n];
    let mut members: Vec<MixingLawModel> = Vec::new();
    let mut member_weights: Vec<f64> = Vec::new();
    let mut objective = f64::NAN;
    let mut converged = true;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0xB005_7ED0);

    for stage in 0..config.boost_stages {
        let stage_config = config.with_seed(config.seed.wrapping_add(stage as u64));
        let fitted = if stage == 0 {
            fit_implicit_on(data, &stage_config)?
        } else {
            let dist = match WeightedIndex::new(&sample_weights) {
                Ok(d) => d,
                Err(e) => {
                    log::debug!("boosting stopped at stage {stage}: {e}");
                    break;
                }
            };
            let indices: Vec<usize> = (0..n).map(|_| dist.sample(&mut rng)).collect();
            match fit_implicit_on(&data.subset(&indices), &stage_config) {
                Ok(f) => f,
                Err(e) => {
                    log::debug!("boosting stopped at stage {stage}: {e}");
                    break;
                }
            }
        };

        let errors: Vec<f64> =
            data.xs.iter().zip(&data.ys).map(|(x, y)| (fitted.model.overall_raw(x) - y).abs()).collect();
        let max_error = errors.iter().copied().fold(0.0, f64::max);
        if stage == 0 {
            objective = fitted.objective;
            converged = fitted.converged;
        }
        if max_error <= f64::MIN_POSITIVE {
            if members.is_empty() {
                members.push(fitted.model);
                member_weights.push(1.0);
            }
            break;
        }
        let losses: Vec<f64> = errors.iter().map(|e| e / max_error).collect();
        let average: f64 = losses.iter().zip(&sample_weights).map(|(l, w)| l * w).sum();
        if average >= 0.5 {
            if members.is_empty() {
                members.push(fitted.model);
                member_weights.push(1.0);
            }
            break;
        }
        let beta = (average / (1.0 - average)).max(1e-300);
        members.push(fitted.model);
        member_weights.push((1.0 / beta).ln());

        for (w, l) in sample_weights.iter_mut().zip(&losses) {
            *w *= beta.powf(1.0 - l);
        }
        let total: f64 = sample_weights.iter().sum();
        if !(total > 0.0 && total.is_finite()) {
            break;
        }
        sample_weights.iter_mut().for_each(|w| *w /= total);
    }

    let used = members.len();
    let ensemble = EnsembleModel::new(members, member_weights)?;
    let predicted: Vec<f64> = data.xs.iter().map(|x| ensemble.overall_raw(x)).collect();
    Ok(FitReport {
        train_mae: mean_absolute_error(&predicted, &data.ys),
        model: ensemble,
        val_mae: None,
        objective,
        converged,
        restarts_used: used,
    })
}

/// Boosted implicit-aggregation fit on the overall losses of `records`.
pub fn fit_boosted(records: &[RunRecord], config: &FitConfig) -> Result<FitReport<EnsembleModel>> {
    let data = Dataset::from_records(records, &LossTarget::Overall)?;
    fit_boosted_on(&data, config)
}
