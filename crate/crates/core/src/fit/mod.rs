//! Coefficient estimation for power laws, mixing laws, implicit-aggregation
//! models and boosted ensembles, plus the candidate-form comparison harness.

mod boost;
mod explicit;
mod implicit;
mod lm;
mod power;
mod select;

pub use boost::{fit_boosted, fit_boosted_on};
pub use explicit::{fit_domain_law, fit_explicit};
pub use implicit::{fit_implicit, fit_implicit_on, ImplicitObjective};
pub use power::fit_power_law;
pub use select::{midpoint_baseline, select_form, FormRow, FormSelection};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::record::{LossTarget, RunRecord};

/// Slope values sampled per domain when initializing a multi-start fit.
pub const SLOPE_INIT_GRID: [f64; 11] = [-10.0, -5.0, -2.0, -1.0, -0.5, 0.0, 0.5, 1.0, 2.0, 5.0, 10.0];

/// Exponent values cycled through when initializing a power-law fit.
pub const ALPHA_INIT_GRID: [f64; 4] = [-1.0, -0.5, -0.2, -0.1];

/// Smallest record count accepted by the implicit-aggregation fit.
pub const MIN_IMPLICIT_RECORDS: usize = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    /// Multi-start initializations per fit.
    pub restarts: usize,
    /// Levenberg-Marquardt iteration cap per start.
    pub max_iters: usize,
    /// Gradient-descent iteration cap per start (implicit aggregation).
    pub descent_iters: usize,
    /// Initial gradient-descent step size; decays over `descent_iters`.
    pub learning_rate: f64,
    /// Relative objective-improvement stopping threshold.
    pub tol: f64,
    /// Huber transition width, in the units of the fitted residual.
    pub huber_delta: f64,
    pub seed: u64,
    /// Number of implicit validation domains `K`.
    pub implicit_domains: usize,
    /// AdaBoost stage count.
    pub boost_stages: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            restarts: 8,
            max_iters: 400,
            descent_iters: 4000,
            learning_rate: 0.05,
            tol: 1e-12,
            huber_delta: 1e-3,
            seed: 0,
            implicit_domains: 30,
            boost_stages: 50,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.to_string()));
        if self.restarts < 1 {
            return bad("restarts must be >= 1");
        }
        if self.implicit_domains < 1 {
            return bad("implicit domain count K must be >= 1");
        }
        if self.boost_stages < 1 {
            return bad("boost_stages must be >= 1");
        }
        if !(self.tol > 0.0) {
            return bad("tol must be > 0");
        }
        if !(self.huber_delta > 0.0) {
            return bad("huber_delta must be > 0");
        }
        if self.max_iters < 1 || self.descent_iters < 1 {
            return bad("iteration caps must be >= 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        Ok(())
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        FitConfig { seed, ..self.clone() }
    }

    /// Generator for restart `index`; depends only on `(seed, index)`.
    pub(crate) fn restart_rng(&self, index: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index as u64 + 1);
        rng
    }
}

/// Outcome of a fit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitReport<M> {
    pub model: M,
    pub train_mae: f64,
    pub val_mae: Option<f64>,
    /// Final robust-loss value (mean Huber loss).
    pub objective: f64,
    pub converged: bool,
    pub restarts_used: usize,
}

impl<M> FitReport<M> {
    pub fn map<N>(self, f: impl FnOnce(M) -> N) -> FitReport<N> {
        FitReport {
            model: f(self.model),
            train_mae: self.train_mae,
            val_mae: self.val_mae,
            objective: self.objective,
            converged: self.converged,
            restarts_used: self.restarts_used,
        }
    }
}

/// Mixture coordinates and observed losses for one fitting target.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub training_domains: Vec<String>,
    pub xs: Vec<Vec<f64>>,
    pub ys: Vec<f64>,
}

impl Dataset {
    pub fn new(training_domains: Vec<String>, xs: Vec<Vec<f64>>, ys: Vec<f64>) -> Result<Self> {
        let m = training_domains.len();
        if xs.len() != ys.len() {
            return Err(Error::DimensionMismatch { expected: xs.len(), got: ys.len() });
        }
        if let Some(bad) = xs.iter().find(|x| x.len() != m) {
            return Err(Error::DimensionMismatch { expected: m, got: bad.len() });
        }
        if let Some(y) = ys.iter().find(|y| !(y.is_finite() && **y > 0.0)) {
            return Err(Error::InvalidRecord {
                row: "dataset".into(),
                rule: "positive-finite-loss",
                detail: format!("loss {y}"),
            });
        }
        Ok(Dataset { training_domains, xs, ys })
    }

    /// Extracts `(mixture, loss)` pairs for `target` from records.
    pub fn from_records(records: &[RunRecord], target: &LossTarget) -> Result<Self> {
        let Some(first) = records.first() else {
            return Err(Error::InsufficientPoints { needed: 1, got: 0 });
        };
        let names = first.mixture.domain_names().to_vec();
        let mut xs = Vec::with_capacity(records.len());
        let mut ys = Vec::with_capacity(records.len());
        for r in records {
            if r.mixture.domain_names() != names.as_slice() {
                return Err(Error::InvalidRecord {
                    row: r.run_id.clone(),
                    rule: "domain-order",
                    detail: "all mixtures must share one domain ordering".into(),
                });
            }
            xs.push(r.mixture.proportions().to_vec());
            ys.push(target.loss_of(r)?);
        }
        Dataset::new(names, xs, ys)
    }

    pub fn len(&self) -> usize {
        self.ys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ys.is_empty()
    }

    pub fn num_domains(&self) -> usize {
        self.training_domains.len()
    }

    pub fn min_loss(&self) -> f64 {
        self.ys.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_loss(&self) -> f64 {
        self.ys.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Number of distinct mixtures (bitwise).
    pub fn distinct_mixtures(&self) -> usize {
        let mut keys: Vec<Vec<u64>> = self.xs.iter().map(|x| x.iter().map(|v| v.to_bits()).collect()).collect();
        keys.sort();
        keys.dedup();
        keys.len()
    }

    /// Rows at the given indices.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            training_domains: self.training_domains.clone(),
            xs: indices.iter().map(|&i| self.xs[i].clone()).collect(),
            ys: indices.iter().map(|&i| self.ys[i]).collect(),
        }
    }
}

/// Huber loss with transition width `delta`.
#[inline]
pub fn huber(residual: f64, delta: f64) -> f64 {
    let a = residual.abs();
    if a <= delta {
        0.5 * residual * residual
    } else {
        delta * (a - 0.5 * delta)
    }
}

/// Derivative of [`huber`] with respect to the residual.
#[inline]
pub fn huber_derivative(residual: f64, delta: f64) -> f64 {
    residual.clamp(-delta, delta)
}

pub fn mean_absolute_error(predicted: &[f64], observed: &[f64]) -> f64 {
    debug_assert_eq!(predicted.len(), observed.len());
    if predicted.is_empty() {
        return 0.0;
    }
    predicted.iter().zip(observed).map(|(p, o)| (p - o).abs()).sum::<f64>() / predicted.len() as f64
}

#[inline]
pub(crate) fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[inline]
pub(crate) fn softplus_inverse(y: f64) -> f64 {
    let y = y.max(1e-12);
    if y > 30.0 {
        y
    } else {
        y.exp_m1().ln()
    }
}
