#![allow(dead_code)]

use std::collections::BTreeMap;

use mixlaw::{ExpDomainLaw, Mixture, RunRecord};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub fn names(m: usize) -> Vec<String> {
    (0..m).map(|j| format!("d{j}")).collect()
}

/// Uniform draw from the simplex via sorted uniforms.
pub fn random_mixture(rng: &mut ChaCha8Rng, m: usize) -> Vec<f64> {
    let mut cuts: Vec<f64> = (0..m - 1).map(|_| rng.random::<f64>()).collect();
    cuts.push(0.0);
    cuts.push(1.0);
    cuts.sort_by(f64::total_cmp);
    cuts.windows(2).map(|w| w[1] - w[0]).collect()
}

pub fn random_law(rng: &mut ChaCha8Rng, m: usize) -> ExpDomainLaw {
    let c = rng.random_range(1.0..3.0);
    let k = rng.random_range(0.3..1.0);
    let t = (0..m).map(|_| rng.random_range(-2.0..2.0)).collect();
    ExpDomainLaw::new(c, k, t).unwrap()
}

pub fn noise(rng: &mut ChaCha8Rng, sigma: f64) -> f64 {
    if sigma == 0.0 {
        0.0
    } else {
        Normal::new(0.0, sigma).unwrap().sample(rng)
    }
}

/// One record per mixture, with per-domain and optional overall losses.
pub fn records(mixtures: &[Vec<f64>], losses: &[BTreeMap<String, f64>], overall: Option<&[f64]>) -> Vec<RunRecord> {
    mixtures
        .iter()
        .zip(losses)
        .enumerate()
        .map(|(i, (r, l))| RunRecord {
            run_id: format!("run{i:03}"),
            model_size: 1_000_000,
            step: 1000,
            batch_tokens: 1024,
            mixture: Mixture::new(r.clone(), names(r.len())).unwrap(),
            domain_losses: l.clone(),
            overall_loss: overall.map(|o| o[i]),
        })
        .collect()
}

pub fn ids(records: &[RunRecord]) -> Vec<String> {
    records.iter().map(|r| r.run_id.clone()).collect()
}

/// Bisection for `f(r) = 0` on [0, 1]; `None` when the endpoints share a sign.
pub fn bisect(f: impl Fn(f64) -> f64) -> Option<f64> {
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    let (flo, fhi) = (f(lo), f(hi));
    if flo == 0.0 {
        return Some(lo);
    }
    if fhi == 0.0 {
        return Some(hi);
    }
    if flo.signum() == fhi.signum() {
        return None;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid).signum() == flo.signum() {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some(0.5 * (lo + hi))
}

/// Every point of the simplex grid with `1/step` divisions, lexicographic.
pub fn brute_grid(m: usize, divisions: usize, mut visit: impl FnMut(&[f64])) {
    fn rec(prefix: &mut Vec<usize>, m: usize, left: usize, n: usize, visit: &mut dyn FnMut(&[f64])) {
        if prefix.len() == m - 1 {
            prefix.push(left);
            let r: Vec<f64> = prefix.iter().map(|&v| v as f64 / n as f64).collect();
            visit(&r);
            prefix.pop();
            return;
        }
        for v in (0..=left).rev() {
            prefix.push(v);
            rec(prefix, m, left - v, n, visit);
            prefix.pop();
        }
    }
    rec(&mut Vec::new(), m, divisions, divisions, &mut visit);
}
