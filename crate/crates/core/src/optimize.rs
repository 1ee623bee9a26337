//! Mixture search: argmin of a loss surface over the (bounded) simplex,
//! the continual-pretraining critical proportion, and Pareto reports over
//! several validation domains.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::design::{divisions, for_each_composition};
use crate::error::{Error, Result};
use crate::law::{eval_two_domain, ExpDomainLaw};
use crate::mixture::{default_domain_names, Mixture};
use crate::model::{LossSurface, MixingLawModel, Prediction};
use crate::scalar::Scalar;

const BOUND_EPS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TieBreak {
    /// Among grid points with equal loss, the lexicographically smallest proportion vector.
    #[default]
    Lexicographic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizeConfig {
    /// Coarse grid step; `None` picks 0.02 for `M <= 5` and 0.05 above.
    pub grid_step: Option<f64>,
    pub refine_iters: usize,
    /// Optional `[lo, hi]` proportion bounds per training domain.
    pub bounds: Option<Vec<[f64; 2]>>,
    pub tie_break: TieBreak,
}

impl Default for OptimizeConfig {
    fn default() -> Self {
        OptimizeConfig { grid_step: None, refine_iters: 200, bounds: None, tie_break: TieBreak::Lexicographic }
    }
}

impl OptimizeConfig {
    pub fn grid_step_for(&self, m: usize) -> f64 {
        self.grid_step.unwrap_or(if m <= 5 { 0.02 } else { 0.05 })
    }

    /// Checks the grid step and that the bounds leave a nonempty part of the simplex.
    pub fn validate(&self, m: usize) -> Result<()> {
        let step = self.grid_step_for(m);
        if !(step > 0.0 && step <= 1.0) {
            return Err(Error::InvalidConfig(format!("grid step {step} is outside (0, 1]")));
        }
        if let Some(bounds) = &self.bounds {
            if bounds.len() != m {
                return Err(Error::InfeasibleBounds(format!("{} bounds given for {m} domains", bounds.len())));
            }
            for (j, [lo, hi]) in bounds.iter().enumerate() {
                if !(lo.is_finite() && hi.is_finite() && 0.0 <= *lo && lo <= hi && *hi <= 1.0) {
                    return Err(Error::InfeasibleBounds(format!("domain {j}: [{lo}, {hi}] is not a sub-interval of [0, 1]")));
                }
            }
            let lo: f64 = bounds.iter().map(|b| b[0]).sum();
            let hi: f64 = bounds.iter().map(|b| b[1]).sum();
            if lo > 1.0 + BOUND_EPS || hi < 1.0 - BOUND_EPS {
                return Err(Error::InfeasibleBounds(format!(
                    "lower bounds sum to {lo} and upper bounds to {hi}; the simplex needs lo <= 1 <= hi"
                )));
            }
        }
        Ok(())
    }

    fn bounds_or_unit(&self, m: usize) -> Vec<[f64; 2]> {
        self.bounds.clone().unwrap_or_else(|| vec![[0.0, 1.0]; m])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
pub struct MixtureOptimum<F = f64> {
    pub mixture: Mixture<F>,
    pub loss: F,
    pub prediction: Prediction<F>,
    /// Best point of the coarse grid, before refinement.
    pub grid_mixture: Mixture<F>,
    pub grid_loss: F,
    pub grid_points: usize,
}

fn within<F: Scalar>(r: &[F], bounds: &[[f64; 2]]) -> bool {
    r.iter().zip(bounds).all(|(x, [lo, hi])| {
        let x = x.to_f64_lossy();
        x >= lo - BOUND_EPS && x <= hi + BOUND_EPS
    })
}

fn lattice_point<F: Scalar>(counts: &[usize], n: usize) -> Vec<F> {
    counts.iter().map(|&c| F::lit(c as f64 / n as f64)).collect()
}

/// Visits the lattice points whose first count is `first`, in lexicographic order.
fn visit_slice(m: usize, n: usize, first: usize, mut visit: impl FnMut(&[usize])) {
    if m == 1 {
        if first == n {
            visit(&[n]);
        }
        return;
    }
    let mut counts = vec![first; m];
    for_each_composition(m - 1, n - first, |rest| {
        counts[1..].copy_from_slice(rest);
        visit(&counts);
    });
}

/// Feasible point built from the lower bounds plus a share of the slack.
fn interior_point<F: Scalar>(bounds: &[[f64; 2]]) -> Vec<F> {
    let lo: f64 = bounds.iter().map(|b| b[0]).sum();
    let room: f64 = bounds.iter().map(|b| b[1] - b[0]).sum();
    let fill = if room > 0.0 { (1.0 - lo) / room } else { 0.0 };
    bounds.iter().map(|[l, h]| F::lit(l + fill * (h - l))).collect()
}

fn scan_grid<F: Scalar, S: LossSurface<F> + ?Sized>(
    surface: &S,
    m: usize,
    n: usize,
    bounds: &[[f64; 2]],
) -> Option<(Vec<F>, F, usize)> {
    let slices: Vec<(Option<F>, usize)> = (0..=n)
        .into_par_iter()
        .map(|first| {
            let mut best: Option<F> = None;
            let mut count = 0;
            visit_slice(m, n, first, |counts| {
                let r = lattice_point::<F>(counts, n);
                if within(&r, bounds) {
                    count += 1;
                    let loss = surface.overall_raw(&r);
                    if loss.is_finite() && best.is_none_or(|b| loss < b) {
                        best = Some(loss);
                    }
                }
            });
            (best, count)
        })
        .collect();
    let count = slices.iter().map(|s| s.1).sum();
    let best = slices.iter().filter_map(|s| s.0).reduce(|a, b| a.min(b))?;
    let tol = F::lit(64.0) * F::epsilon() * best.abs().max(F::one());
    let point = (0..=n).into_par_iter().find_map_first(|first| {
        let mut found: Option<Vec<F>> = None;
        visit_slice(m, n, first, |counts| {
            if found.is_some() {
                return;
            }
            let r = lattice_point::<F>(counts, n);
            if within(&r, bounds) {
                let loss = surface.overall_raw(&r);
                if loss.is_finite() && loss <= best + tol {
                    found = Some(r);
                }
            }
        });
        found
    })?;
    let loss = surface.overall_raw(&point);
    Some((point, loss, count))
}

fn softmax_into<F: Scalar>(z: &[F], active: &[usize], r: &mut [F]) {
    let top = z.iter().copied().fold(F::neg_infinity(), F::max);
    let e: Vec<F> = z.iter().map(|&v| (v - top).exp()).collect();
    let total: F = e.iter().copied().sum();
    r.iter_mut().for_each(|x| *x = F::zero());
    for (&j, &v) in active.iter().zip(&e) {
        r[j] = v / total;
    }
}

/// Gradient descent on softmax logits of the active coordinates, with
/// Barzilai-Borwein steps and Armijo backtracking.
fn refine_smooth<F: Scalar, S: LossSurface<F> + ?Sized>(
    surface: &S,
    start: &[F],
    iters: usize,
    bounds: &[[f64; 2]],
) -> Option<(Vec<F>, F)> {
    let m = start.len();
    let active: Vec<usize> = (0..m).filter(|&j| start[j] > F::zero()).collect();
    if active.len() < 2 {
        return None;
    }
    let objective = |z: &[F], r: &mut Vec<F>| -> F {
        softmax_into(z, &active, r);
        if !within(r, bounds) {
            return F::infinity();
        }
        let loss = surface.overall_raw(r);
        if loss.is_finite() {
            loss
        } else {
            F::infinity()
        }
    };
    let h = F::epsilon().cbrt();
    let two = F::lit(2.0);
    let gradient = |r: &[F]| -> Vec<F> {
        let mut probe = r.to_vec();
        let g_r: Vec<F> = active
            .iter()
            .map(|&j| {
                probe[j] = r[j] + h;
                let up = surface.overall_raw(&probe);
                probe[j] = r[j] - h;
                let down = surface.overall_raw(&probe);
                probe[j] = r[j];
                (up - down) / (two * h)
            })
            .collect();
        let mean: F = active.iter().zip(&g_r).map(|(&j, &g)| r[j] * g).sum();
        active.iter().zip(&g_r).map(|(&j, &g)| r[j] * (g - mean)).collect()
    };

    let mut z: Vec<F> = active.iter().map(|&j| start[j].ln()).collect();
    let mut r = vec![F::zero(); m];
    let mut loss = objective(&z, &mut r);
    if !loss.is_finite() {
        return None;
    }
    let mut g = gradient(&r);
    let mut step = F::one();
    let mut trial_r = vec![F::zero(); m];
    for _ in 0..iters {
        let g2: F = g.iter().map(|v| *v * *v).sum();
        if !(g2 > F::zero()) || !g2.is_finite() {
            break;
        }
        let mut accepted = None;
        let mut alpha = step;
        for _ in 0..60 {
            let trial: Vec<F> = z.iter().zip(&g).map(|(&zi, &gi)| zi - alpha * gi).collect();
            let value = objective(&trial, &mut trial_r);
            if value < loss - F::lit(1e-4) * alpha * g2 {
                accepted = Some((trial, value));
                break;
            }
            alpha = alpha / two;
        }
        let Some((next, value)) = accepted else { break };
        std::mem::swap(&mut r, &mut trial_r);
        let next_g = gradient(&r);
        let s: Vec<F> = next.iter().zip(&z).map(|(a, b)| *a - *b).collect();
        let y: Vec<F> = next_g.iter().zip(&g).map(|(a, b)| *a - *b).collect();
        let sy: F = s.iter().zip(&y).map(|(a, b)| *a * *b).sum();
        let ss: F = s.iter().map(|v| *v * *v).sum();
        step = if sy > F::zero() { ss / sy } else { alpha * two };
        z = next;
        loss = value;
        g = next_g;
    }
    Some((r, loss))
}

/// Golden-section search along each pair of coordinates, moving mass between them.
fn refine_pairwise<F: Scalar, S: LossSurface<F> + ?Sized>(
    surface: &S,
    start: &[F],
    start_loss: F,
    sweeps: usize,
    bounds: &[[f64; 2]],
) -> (Vec<F>, F) {
    let m = start.len();
    let mut r = start.to_vec();
    let mut loss = start_loss;
    let ratio = F::lit(0.618_033_988_749_894_8);
    for _ in 0..sweeps {
        let mut improved = false;
        for i in 0..m {
            for j in i + 1..m {
                let (ri, rj) = (r[i], r[j]);
                let lo = F::lit(bounds[i][0]).max(F::zero()) - ri;
                let lo = lo.max(rj - F::lit(bounds[j][1]).min(F::one()));
                let hi = (F::lit(bounds[i][1]).min(F::one()) - ri).min(rj - F::lit(bounds[j][0]).max(F::zero()));
                if !(hi > lo) {
                    continue;
                }
                let mut probe = r.clone();
                let mut eval = |d: F| -> F {
                    probe[i] = (ri + d).max(F::zero());
                    probe[j] = (rj - d).max(F::zero());
                    let v = surface.overall_raw(&probe);
                    if v.is_finite() {
                        v
                    } else {
                        F::infinity()
                    }
                };
                let mut best = (F::zero(), loss);
                let mut consider = |d: F, v: F| {
                    if v < best.1 {
                        best = (d, v);
                    }
                };
                let (mut a, mut b) = (lo, hi);
                let va = eval(a);
                consider(a, va);
                let vb = eval(b);
                consider(b, vb);
                let mut x1 = b - ratio * (b - a);
                let mut x2 = a + ratio * (b - a);
                let mut f1 = eval(x1);
                let mut f2 = eval(x2);
                consider(x1, f1);
                consider(x2, f2);
                for _ in 0..40 {
                    if f1 <= f2 {
                        b = x2;
                        x2 = x1;
                        f2 = f1;
                        x1 = b - ratio * (b - a);
                        f1 = eval(x1);
                        consider(x1, f1);
                    } else {
                        a = x1;
                        x1 = x2;
                        f1 = f2;
                        x2 = a + ratio * (b - a);
                        f2 = eval(x2);
                        consider(x2, f2);
                    }
                }
                if best.1 < loss {
                    r[i] = (ri + best.0).max(F::zero());
                    r[j] = (rj - best.0).max(F::zero());
                    loss = best.1;
                    improved = true;
                }
            }
        }
        if !improved {
            break;
        }
    }
    (r, loss)
}

/// Loss-minimizing mixture: coarse lattice scan at the grid step, then local
/// refinement from the best lattice point. Refinement only replaces the
/// lattice point when it lowers the loss.
pub fn argmin_mixture<F: Scalar, S: LossSurface<F> + ?Sized>(surface: &S, config: &OptimizeConfig) -> Result<MixtureOptimum<F>> {
    let m = surface.num_domains();
    config.validate(m)?;
    let n = divisions(config.grid_step_for(m))?;
    let bounds = config.bounds_or_unit(m);
    let names = surface.domain_names();

    let (grid_r, grid_loss, grid_points) = match scan_grid(surface, m, n, &bounds) {
        Some(found) => found,
        None => {
            let r = interior_point::<F>(&bounds);
            let loss = surface.overall_raw(&r);
            if !loss.is_finite() {
                return Err(Error::InfeasibleBounds("no feasible point with a finite loss".into()));
            }
            (r, loss, 0)
        }
    };

    let mut best = (grid_r.clone(), grid_loss);
    if m > 1 && config.refine_iters > 0 {
        if surface.is_smooth() {
            let mut starts = vec![grid_r.clone()];
            if grid_r.iter().any(|v| *v == F::zero()) {
                // also let zero coordinates move off the boundary
                let lift = F::lit(config.grid_step_for(m) / 4.0);
                let lifted: Vec<F> = grid_r.iter().map(|&v| v + lift).collect();
                let total: F = lifted.iter().copied().sum();
                starts.push(lifted.into_iter().map(|v| v / total).collect());
            }
            for start in starts {
                if let Some((r, loss)) = refine_smooth(surface, &start, config.refine_iters, &bounds) {
                    if loss < best.1 {
                        best = (r, loss);
                    }
                }
            }
        } else {
            best = refine_pairwise(surface, &grid_r, grid_loss, config.refine_iters, &bounds);
        }
    }

    let (r, loss) = best;
    let prediction = surface.predict_raw(&r);
    Ok(MixtureOptimum {
        mixture: Mixture::new(r, names.clone())?,
        loss,
        prediction,
        grid_mixture: Mixture::new(grid_r, names)?,
        grid_loss,
        grid_points,
    })
}

/// Target-domain proportion `r` at which the original-data loss
/// `L(r) = c + k exp(t r)` returns to `l0`.
pub fn critical_proportion<F: Scalar>(law: &ExpDomainLaw<F>, l0: F) -> Result<F> {
    if law.num_domains() != 1 {
        return Err(Error::DimensionMismatch { expected: 1, got: law.num_domains() });
    }
    let t = law.t()[0];
    if t.abs() < F::lit(1e-12) {
        return Err(Error::DegenerateSlope(t.to_f64_lossy()));
    }
    let ratio = (l0 - law.c()) / law.k();
    if !(ratio > F::zero()) {
        return Err(Error::NoSolution {
            detail: "(L0 - c) / k must be positive".into(),
            value: ratio.to_f64_lossy(),
        });
    }
    let r = ratio.ln() / t;
    if !(F::zero()..=F::one()).contains(&r) {
        return Err(Error::NoSolution { detail: "critical proportion outside [0, 1]".into(), value: r.to_f64_lossy() });
    }
    let residual = (eval_two_domain(law, r)? - l0).abs();
    let tol = F::lit(1e-9).max(F::lit(16.0) * F::epsilon() * l0.abs());
    if residual > tol {
        return Err(Error::NoSolution { detail: "residual check failed".into(), value: residual.to_f64_lossy() });
    }
    Ok(r)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
pub struct ParetoRow<F = f64> {
    pub proportions: Vec<F>,
    pub losses: Vec<F>,
    pub non_dominated: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
pub struct ParetoReport<F = f64> {
    pub domain_names: Vec<String>,
    pub output_labels: Vec<String>,
    pub rows: Vec<ParetoRow<F>>,
}

impl<F: Scalar> ParetoReport<F> {
    pub fn front(&self) -> impl Iterator<Item = &ParetoRow<F>> {
        self.rows.iter().filter(|row| row.non_dominated)
    }
}

fn dominates<F: Scalar>(a: &[F], b: &[F]) -> bool {
    a.iter().zip(b).all(|(x, y)| x <= y) && a.iter().zip(b).any(|(x, y)| x < y)
}

/// Evaluates every law on the lattice of the given step and flags the
/// mixtures no other lattice mixture dominates.
pub fn pareto_report<F: Scalar>(laws: &[ExpDomainLaw<F>], grid_step: f64) -> Result<ParetoReport<F>> {
    let first = laws.first().ok_or_else(|| Error::InvalidConfig("at least one domain law is required".into()))?;
    let m = first.num_domains();
    if let Some(bad) = laws.iter().find(|l| l.num_domains() != m) {
        return Err(Error::DimensionMismatch { expected: m, got: bad.num_domains() });
    }
    let n = divisions(grid_step)?;
    let mut rows = Vec::new();
    for_each_composition(m, n, |counts| {
        let proportions = lattice_point::<F>(counts, n);
        let losses = laws.iter().map(|l| l.eval_raw(&proportions)).collect();
        rows.push(ParetoRow { proportions, losses, non_dominated: false });
    });

    // lexicographic order by losses: a dominating row always comes earlier,
    // so comparing against the front found so far is enough
    let mut order: Vec<usize> = (0..rows.len()).collect();
    order.sort_by(|&a, &b| {
        rows[a]
            .losses
            .iter()
            .zip(&rows[b].losses)
            .map(|(x, y)| x.partial_cmp(y).unwrap_or(std::cmp::Ordering::Equal))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut front: Vec<usize> = Vec::new();
    for i in order {
        if !front.iter().any(|&f| dominates(&rows[f].losses, &rows[i].losses)) {
            front.push(i);
        }
    }
    for i in front {
        rows[i].non_dominated = true;
    }
    Ok(ParetoReport {
        domain_names: default_domain_names(m),
        output_labels: (1..=laws.len()).map(|i| format!("v{i}")).collect(),
        rows,
    })
}

/// Pareto report over the per-domain laws of an explicit or single-domain model.
pub fn pareto_report_for<F: Scalar>(model: &MixingLawModel<F>, grid_step: f64) -> Result<ParetoReport<F>> {
    let laws: Vec<ExpDomainLaw<F>> = model
        .domain_laws()
        .iter()
        .map(|l| l.as_m4().cloned().ok_or_else(|| Error::InvalidLaw("pareto reports need M4 domain laws".into())))
        .collect::<Result<_>>()?;
    let mut report = pareto_report(&laws, grid_step)?;
    report.domain_names = model.training_domains().to_vec();
    report.output_labels = model.validation_domains().to_vec();
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{EnsembleModel, MixingLawModel};

    fn single(law: ExpDomainLaw) -> MixingLawModel {
        let m = law.num_domains();
        MixingLawModel::single(law.into(), default_domain_names(m), "valid".into()).unwrap()
    }

    #[test]
    fn monotone_two_domain_goes_to_the_edge() {
        let model = single(ExpDomainLaw::new(1.0, 1.0, vec![-2.0, 1.0]).unwrap());
        let best = argmin_mixture(&model, &OptimizeConfig::default()).unwrap();
        assert_eq!(best.mixture.proportions(), &[1.0, 0.0]);
        assert_eq!(best.loss, 1.0 + (-2.0f64).exp());
    }

    #[test]
    fn symmetric_law_ties_to_lexicographic_smallest() {
        let model = single(ExpDomainLaw::new(1.0, 1.0, vec![0.7, 0.7, 0.7]).unwrap());
        let best = argmin_mixture(&model, &OptimizeConfig::default()).unwrap();
        assert_eq!(best.grid_mixture.proportions(), &[0.0, 0.0, 1.0]);
        assert_eq!(best.mixture.proportions(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn interior_optimum_matches_fine_grid() {
        // sum of two laws pulling in opposite directions
        let a = ExpDomainLaw::new(0.5, 1.0, vec![-3.0, 1.0, 0.5]).unwrap();
        let b = ExpDomainLaw::new(0.5, 1.0, vec![2.0, -2.5, 0.0]).unwrap();
        let model = MixingLawModel::explicit(
            vec![a.clone().into(), b.clone().into()],
            vec!["a".into(), "b".into()],
            vec![0.5, 0.5],
            default_domain_names(3),
        )
        .unwrap();
        let best = argmin_mixture(&model, &OptimizeConfig::default()).unwrap();
        let mut brute = (f64::INFINITY, vec![]);
        for_each_composition(3, 1000, |c| {
            let r: Vec<f64> = c.iter().map(|&x| x as f64 / 1000.0).collect();
            let v = 0.5 * a.eval_raw(&r) + 0.5 * b.eval_raw(&r);
            if v < brute.0 {
                brute = (v, r);
            }
        });
        assert!(best.loss <= brute.0 + 1e-6, "{} vs {}", best.loss, brute.0);
        let dist = best.mixture.proportions().iter().zip(&brute.1).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(dist <= 0.002, "{dist}");
        assert!(best.loss <= best.grid_loss);
    }

    #[test]
    fn bounds_are_respected() {
        let model = single(ExpDomainLaw::new(1.0, 1.0, vec![-2.0, 1.0, 0.0]).unwrap());
        let config = OptimizeConfig { bounds: Some(vec![[0.0, 0.6], [0.1, 1.0], [0.0, 1.0]]), ..Default::default() };
        let best = argmin_mixture(&model, &config).unwrap();
        let r = best.mixture.proportions();
        assert!(r[0] <= 0.6 + 1e-9 && r[1] >= 0.1 - 1e-9);
        assert!((r[0] - 0.6).abs() < 1e-6 && r[1] < 0.1 + 1e-6);

        let bad = OptimizeConfig { bounds: Some(vec![[0.6, 1.0], [0.5, 1.0], [0.0, 1.0]]), ..Default::default() };
        assert!(matches!(argmin_mixture(&model, &bad), Err(Error::InfeasibleBounds(_))));
        let short = OptimizeConfig { bounds: Some(vec![[0.0, 1.0]]), ..Default::default() };
        assert!(matches!(argmin_mixture(&model, &short), Err(Error::InfeasibleBounds(_))));
    }

    #[test]
    fn bounds_between_grid_points_fall_back_to_interior() {
        let model = single(ExpDomainLaw::new(1.0, 1.0, vec![-1.0, 1.0]).unwrap());
        let config = OptimizeConfig {
            grid_step: Some(0.5),
            bounds: Some(vec![[0.1, 0.2], [0.8, 0.9]]),
            ..Default::default()
        };
        let best = argmin_mixture(&model, &config).unwrap();
        assert_eq!(best.grid_points, 0);
        assert!((best.mixture.proportions()[0] - 0.2).abs() < 1e-6);
    }

    #[test]
    fn ensemble_refinement_is_monotone() {
        let members: Vec<MixingLawModel> = [(-2.0, 0.5), (-1.0, 0.2), (-3.0, 1.0)]
            .iter()
            .map(|&(t0, t1)| single(ExpDomainLaw::new(1.0, 1.0, vec![t0, t1, 0.0]).unwrap()))
            .collect();
        let ensemble = EnsembleModel::new(members, vec![1.0, 2.0, 1.5]).unwrap();
        let best = argmin_mixture(&ensemble, &OptimizeConfig::default()).unwrap();
        assert!(best.loss <= best.grid_loss);
        assert_eq!(best.loss, ensemble.overall_raw(best.mixture.proportions()));
    }

    #[test]
    fn f32_surface() {
        let law = ExpDomainLaw::<f32>::new(1.0, 1.0, vec![-2.0, 1.0]).unwrap();
        let model = MixingLawModel::single(law.into(), default_domain_names(2), "v".into()).unwrap();
        let best = argmin_mixture(&model, &OptimizeConfig::default()).unwrap();
        assert_eq!(best.mixture.proportions(), &[1.0f32, 0.0]);
    }

    #[test]
    fn critical_examples() {
        let law = ExpDomainLaw::two_domain(2.0, 1.0, 3.0).unwrap();
        assert_eq!(critical_proportion(&law, 3.0).unwrap(), 0.0);
        assert!(matches!(critical_proportion(&law, 1.5), Err(Error::NoSolution { .. })));
        let law = ExpDomainLaw::two_domain(2.0, 0.5, 1.0).unwrap();
        let r = critical_proportion(&law, 2.0 + 0.5 * 0.5f64.exp()).unwrap();
        assert!((r - 0.5).abs() <= 1e-12);
        let flat = ExpDomainLaw::two_domain(2.0, 1.0, 0.0).unwrap();
        assert!(matches!(critical_proportion(&flat, 3.0), Err(Error::DegenerateSlope(_))));
        // r* = ln(e^2)/1 = 2 is outside [0, 1]
        let law = ExpDomainLaw::two_domain(0.0, 1.0, 1.0).unwrap();
        match critical_proportion(&law, 2f64.exp()) {
            Err(Error::NoSolution { value, .. }) => assert!((value - 2.0).abs() < 1e-12),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn pareto_opposing_laws_keep_every_point() {
        let a = ExpDomainLaw::new(1.0, 1.0, vec![-1.0, 0.0]).unwrap();
        let b = ExpDomainLaw::new(1.0, 1.0, vec![1.0, 0.0]).unwrap();
        let report = pareto_report(&[a, b], 0.1).unwrap();
        assert_eq!(report.rows.len(), 11);
        assert!(report.rows.iter().all(|r| r.non_dominated));
    }

    #[test]
    fn pareto_identical_laws_is_argmin() {
        let a = ExpDomainLaw::new(1.0, 1.0, vec![-1.0, 0.5, 0.0]).unwrap();
        let report = pareto_report(&[a.clone(), a], 0.25).unwrap();
        let front: Vec<_> = report.front().collect();
        assert_eq!(front.len(), 1);
        assert_eq!(front[0].proportions, vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn pareto_brute_force() {
        let laws = vec![
            ExpDomainLaw::new(1.0, 1.0, vec![-1.0, 0.5, 0.2]).unwrap(),
            ExpDomainLaw::new(0.5, 2.0, vec![0.3, -1.5, 0.1]).unwrap(),
            ExpDomainLaw::new(0.2, 1.0, vec![0.1, 0.2, -0.9]).unwrap(),
        ];
        let report = pareto_report(&laws, 0.1).unwrap();
        for row in &report.rows {
            let dominated = report.rows.iter().any(|o| dominates(&o.losses, &row.losses));
            assert_eq!(row.non_dominated, !dominated);
        }
        assert!(pareto_report(&[laws[0].clone(), ExpDomainLaw::new(1.0, 1.0, vec![0.0]).unwrap()], 0.1).is_err());
    }
}
