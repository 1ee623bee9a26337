//! Experiment design on the simplex: candidate enumeration by repeated
//! halving of each domain's maximum proportion, stratified sampling of the
//! candidates, plain lattice grids, and selection of the fitting subset.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::{fit_domain_law, fit_implicit_on, mean_absolute_error, Dataset, FitConfig};
use crate::law::LawForm;
use crate::mixture::{default_domain_names, Mixture};
use crate::model::LossSurface;
use crate::record::{LossTarget, RunRecord};

const GRID_EPS: f64 = 1e-12;

/// Inputs of the candidate enumeration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DesignSpace {
    /// Maximum proportion of each domain (available tokens over target tokens), non-increasing.
    pub r_max: Vec<f64>,
    /// Minimum grid size.
    pub delta: f64,
    /// Number of mixtures to sample.
    pub n: usize,
    pub domain_names: Vec<String>,
}

impl DesignSpace {
    pub fn new(r_max: Vec<f64>, delta: f64, n: usize) -> Result<Self> {
        let names = default_domain_names(r_max.len());
        Self::with_names(r_max, delta, n, names)
    }

    pub fn with_names(r_max: Vec<f64>, delta: f64, n: usize, domain_names: Vec<String>) -> Result<Self> {
        let space = DesignSpace { r_max, delta, n, domain_names };
        space.validate()?;
        Ok(space)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.r_max.is_empty() {
            return bad("at least one domain is required".into());
        }
        if self.domain_names.len() != self.r_max.len() {
            return bad("one name per domain is required".into());
        }
        if let Some(r) = self.r_max.iter().find(|r| !(**r > 0.0 && **r <= 1.0)) {
            return bad(format!("maximum proportion {r} is outside (0, 1]"));
        }
        if self.r_max.windows(2).any(|w| w[0] < w[1]) {
            return bad("maximum proportions must be sorted in non-increasing order".into());
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return bad(format!("grid size {} is outside (0, 1)", self.delta));
        }
        if self.n < 1 {
            return bad("sample count must be >= 1".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DesignResult {
    /// Candidates with at least one zero proportion.
    pub candidates_zero: Vec<Mixture>,
    /// Candidates with every proportion positive.
    pub candidates_nonzero: Vec<Mixture>,
    pub sampled: Vec<Mixture>,
}

/// Per-domain proportions: `G, G/2, G/4, ...` down to the first value not
/// above `delta` (values below `delta` snap up to it), plus zero, where
/// `G = delta * floor(r_max / delta)`.
pub(crate) fn halving_values(r_max: f64, delta: f64) -> Vec<f64> {
    let gamma = delta * (r_max / delta + 1e-9).floor();
    let mut values = Vec::new();
    if gamma > 0.0 {
        let last = (gamma / delta).log2().max(0.0);
        let last = (last - 1e-9).ceil().max(0.0) as i32;
        for s in 0..=last {
            let v = gamma / 2f64.powi(s);
            values.push(if v < delta { delta } else { v });
        }
    }
    values.push(0.0);
    values.dedup_by(|a, b| (*a - *b).abs() <= GRID_EPS);
    values
}

/// Candidate proportion vectors for an arbitrary (not necessarily sorted) `r_max`.
pub(crate) fn enumerate_raw(r_max: &[f64], delta: f64) -> Vec<Vec<f64>> {
    fn recurse(r_max: &[f64], values: &[Vec<f64>], prefix: &mut Vec<f64>, used: f64, out: &mut Vec<Vec<f64>>) {
        let i = prefix.len();
        let m = r_max.len();
        if i + 1 == m {
            let remainder = 1.0 - used;
            if remainder >= -GRID_EPS && remainder <= r_max[i] + GRID_EPS {
                let mut r = prefix.clone();
                r.push(remainder.max(0.0));
                out.push(r);
            }
            return;
        }
        for &v in &values[i] {
            if used + v > 1.0 + GRID_EPS {
                continue;
            }
            prefix.push(v);
            recurse(r_max, values, prefix, used + v, out);
            prefix.pop();
        }
    }

    let values: Vec<Vec<f64>> = r_max.iter().map(|&r| halving_values(r, delta)).collect();
    let mut out = Vec::new();
    recurse(r_max, &values, &mut Vec::with_capacity(r_max.len()), 0.0, &mut out);
    let mut seen = std::collections::BTreeSet::new();
    out.retain(|r| seen.insert(r.iter().map(|v| (v / GRID_EPS).round() as i64).collect::<Vec<_>>()));
    out
}

/// All feasible candidates, split into `(zero-containing, all-positive)`.
pub fn enumerate_candidates(space: &DesignSpace) -> Result<(Vec<Mixture>, Vec<Mixture>)> {
    space.validate()?;
    let raw = enumerate_raw(&space.r_max, space.delta);
    if raw.is_empty() {
        return Err(Error::EmptyCandidates);
    }
    let mut zero = Vec::new();
    let mut nonzero = Vec::new();
    for r in raw {
        let mixture = Mixture::new(r, space.domain_names.clone())?;
        if mixture.has_zero() {
            zero.push(mixture);
        } else {
            nonzero.push(mixture);
        }
    }
    Ok((zero, nonzero))
}

fn pick(rng: &mut ChaCha8Rng, pool: &[Mixture], amount: usize) -> Vec<Mixture> {
    let mut chosen = index::sample(rng, pool.len(), amount).into_vec();
    chosen.sort_unstable();
    chosen.into_iter().map(|i| pool[i].clone()).collect()
}

/// Samples `floor(N/4)` zero-containing candidates and the rest from the
/// all-positive ones, uniformly without replacement. A short stratum is
/// taken whole and the other backfills it.
pub fn sample_design(space: &DesignSpace, seed: u64) -> Result<DesignResult> {
    let (zero, nonzero) = enumerate_candidates(space)?;
    let n = space.n;
    let available = zero.len() + nonzero.len();
    if available < n {
        return Err(Error::Shortfall { requested: n, available });
    }
    let mut take_zero = (n / 4).min(zero.len());
    let mut take_nonzero = n - take_zero;
    if take_nonzero > nonzero.len() {
        take_nonzero = nonzero.len();
        take_zero = n - take_nonzero;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sampled = pick(&mut rng, &zero, take_zero);
    sampled.extend(pick(&mut rng, &nonzero, take_nonzero));
    Ok(DesignResult { candidates_zero: zero, candidates_nonzero: nonzero, sampled })
}

/// Number of lattice divisions `1 / step`, if integral.
pub(crate) fn divisions(step: f64) -> Result<usize> {
    if !(step > 0.0 && step <= 1.0) {
        return Err(Error::InvalidConfig(format!("grid step {step} is outside (0, 1]")));
    }
    let n = (1.0 / step).round();
    if (n * step - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidConfig(format!("grid step {step} does not divide 1")));
    }
    Ok(n as usize)
}

/// Calls `visit` with the counts of every composition of `n` into `m`
/// non-negative parts, in lexicographic order.
pub(crate) fn for_each_composition(m: usize, n: usize, mut visit: impl FnMut(&[usize])) {
    fn recurse(m: usize, left: usize, counts: &mut Vec<usize>, visit: &mut dyn FnMut(&[usize])) {
        if counts.len() + 1 == m {
            counts.push(left);
            visit(counts);
            counts.pop();
            return;
        }
        for c in 0..=left {
            counts.push(c);
            recurse(m, left - c, counts, visit);
            counts.pop();
        }
    }
    if m == 0 {
        return;
    }
    recurse(m, n, &mut Vec::with_capacity(m), &mut visit);
}

/// Every simplex point whose coordinates are multiples of `step`, in lexicographic order.
pub fn grid_simplex(m: usize, step: f64) -> Result<Vec<Mixture>> {
    if m == 0 {
        return Err(Error::InvalidConfig("at least one domain is required".into()));
    }
    let n = divisions(step)?;
    let names = default_domain_names(m);
    let mut out = Vec::new();
    let mut failure = None;
    for_each_composition(m, n, |counts| {
        let r = counts.iter().map(|&c| c as f64 / n as f64).collect();
        match Mixture::new(r, names.clone()) {
            Ok(mixture) => out.push(mixture),
            Err(e) => failure = Some(e),
        }
    });
    match failure {
        Some(e) => Err(e),
        None => Ok(out),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubsetSelection {
    /// Run ids of the chosen fitting subset, in record order.
    pub run_ids: Vec<String>,
    /// MAE of the subset's fit over all records.
    pub mae: f64,
    /// All-record MAE per resample; `None` where the fit failed.
    pub resample_maes: Vec<Option<f64>>,
}

/// Draws `n_resamples` subsets of `subset_size` records, fits a mixing law
/// on each, and keeps the subset whose fit has the lowest MAE on all records.
///
/// Overall targets fit implicit aggregation; domain targets fit the
/// exponential law of that domain.
pub fn select_fitting_subset(
    records: &[RunRecord],
    subset_size: usize,
    n_resamples: usize,
    target: &LossTarget,
    config: &FitConfig,
) -> Result<SubsetSelection> {
    if subset_size == 0 || subset_size >= records.len() {
        return Err(Error::InvalidConfig(format!(
            "subset size {subset_size} must be in 1..{}",
            records.len()
        )));
    }
    if n_resamples < 1 {
        return Err(Error::InvalidConfig("at least one resample is required".into()));
    }
    let data = Dataset::from_records(records, target)?;
    let subsets: Vec<Vec<usize>> = (0..n_resamples)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(i as u64 + 1);
            let mut idx = index::sample(&mut rng, records.len(), subset_size).into_vec();
            idx.sort_unstable();
            idx
        })
        .collect();

    let maes: Vec<Option<f64>> = subsets
        .par_iter()
        .map(|idx| {
            let sub = data.subset(idx);
            let predicted: Result<Vec<f64>> = match target {
                LossTarget::Overall => fit_implicit_on(&sub, config)
                    .map(|f| data.xs.iter().map(|x| f.model.overall_raw(x)).collect()),
                LossTarget::Domain(_) => fit_domain_law(&sub, LawForm::M4, config)
                    .map(|f| data.xs.iter().map(|x| f.model.eval_raw(x)).collect()),
            };
            match predicted {
                Ok(p) => Some(mean_absolute_error(&p, &data.ys)),
                Err(e) => {
                    log::debug!("resample skipped: {e}");
                    None
                }
            }
        })
        .collect();

    let (best, mae) = maes
        .iter()
        .enumerate()
        .filter_map(|(i, m)| m.map(|v| (i, v)))
        .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
        .ok_or(Error::AllResamplesFailed(n_resamples))?;
    Ok(SubsetSelection {
        run_ids: subsets[best].iter().map(|&i| records[i].run_id.clone()).collect(),
        mae,
        resample_maes: maes,
    })
}
