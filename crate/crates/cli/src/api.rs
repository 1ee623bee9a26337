//! Request and response bodies shared by the command line and the HTTP API.

use serde::{Deserialize, Serialize};

use mixlaw::{argmin_mixture, perplexity, Error, LossSurface, Mixture, OptimizeConfig, Prediction, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainValue {
    pub name: String,
    pub loss: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perplexity: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictResponse {
    pub proportions: Vec<f64>,
    pub overall: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub overall_perplexity: Option<f64>,
    pub per_domain: Vec<DomainValue>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictRequest {
    pub proportions: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizeRequest {
    #[serde(default)]
    pub bounds: Option<Vec<[f64; 2]>>,
    #[serde(default)]
    pub grid_step: Option<f64>,
    #[serde(default)]
    pub refine_iters: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizeResponse {
    pub optimum: PredictResponse,
    pub grid_proportions: Vec<f64>,
    pub grid_loss: f64,
    pub grid_points: usize,
}

impl OptimizeRequest {
    pub fn config(&self) -> OptimizeConfig {
        let defaults = OptimizeConfig::default();
        OptimizeConfig {
            grid_step: self.grid_step,
            refine_iters: self.refine_iters.unwrap_or(defaults.refine_iters),
            bounds: self.bounds.clone(),
            ..defaults
        }
    }
}

fn response(r: &[f64], p: Prediction, labels: &[String], with_perplexity: bool) -> PredictResponse {
    let ppl = |loss: f64| with_perplexity.then(|| perplexity(loss));
    PredictResponse {
        proportions: r.to_vec(),
        overall: p.overall,
        overall_perplexity: ppl(p.overall),
        per_domain: labels
            .iter()
            .zip(p.per_domain)
            .map(|(name, loss)| DomainValue { name: name.clone(), loss, perplexity: ppl(loss) })
            .collect(),
    }
}

/// Validates `proportions` against the surface and evaluates it.
pub fn predict_at<S: LossSurface<f64> + ?Sized>(surface: &S, proportions: &[f64], with_perplexity: bool) -> Result<PredictResponse> {
    let m = surface.num_domains();
    if proportions.len() != m {
        return Err(Error::DimensionMismatch { expected: m, got: proportions.len() });
    }
    let mixture = Mixture::new(proportions.to_vec(), surface.domain_names())?;
    let prediction = surface.predict(&mixture)?;
    Ok(response(proportions, prediction, &surface.output_labels(), with_perplexity))
}

pub fn optimize<S: LossSurface<f64> + ?Sized>(surface: &S, request: &OptimizeRequest, with_perplexity: bool) -> Result<OptimizeResponse> {
    let best = argmin_mixture(surface, &request.config())?;
    let labels = surface.output_labels();
    Ok(OptimizeResponse {
        optimum: response(best.mixture.proportions(), best.prediction, &labels, with_perplexity),
        grid_proportions: best.grid_mixture.proportions().to_vec(),
        grid_loss: best.grid_loss,
        grid_points: best.grid_points,
    })
}
