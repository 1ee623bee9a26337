//! Data mixing laws: predict language-model validation loss from the
//! proportions of training domains, nest those predictions with step and
//! model-size power laws, and search for loss-minimizing mixtures.
//!
//! Law evaluation and mixture search are generic over [`Scalar`] (`f32` or
//! `f64`); fitting and IO work in `f64`. The aliases below name the common
//! concrete instantiations.

pub mod design;
pub mod error;
pub mod fit;
pub mod io;
pub mod law;
pub mod mixture;
pub mod model;
pub mod optimize;
pub mod pipeline;
pub mod record;
pub mod scalar;

pub use design::{enumerate_candidates, grid_simplex, sample_design, select_fitting_subset, DesignResult, DesignSpace};
pub use error::{Error, Result};
pub use fit::{FitConfig, FitReport};
pub use io::{load_runs, save_runs, ArtifactModel, LawArtifact, Provenance};
pub use law::{eval_candidate, eval_m4, eval_power_law, eval_two_domain, DomainLaw, ExpDomainLaw, LawForm, PowerLaw};
pub use mixture::Mixture;
pub use optimize::{argmin_mixture, critical_proportion, pareto_report, MixtureOptimum, OptimizeConfig};
pub use model::{eval_model, Aggregation, EnsembleModel, LossSurface, MixingLawModel, Prediction, Predictor};
pub use pipeline::{run_pipeline, PipelineConfig, PipelinePrediction};
pub use record::{LossTarget, RunRecord};
pub use scalar::{perplexity, Scalar};

pub type Mixture32 = Mixture<f32>;
pub type Mixture64 = Mixture<f64>;
pub type ExpDomainLaw32 = ExpDomainLaw<f32>;
pub type ExpDomainLaw64 = ExpDomainLaw<f64>;
pub type DomainLaw32 = DomainLaw<f32>;
pub type DomainLaw64 = DomainLaw<f64>;
pub type PowerLaw32 = PowerLaw<f32>;
pub type PowerLaw64 = PowerLaw<f64>;
pub type MixingLawModel32 = MixingLawModel<f32>;
pub type MixingLawModel64 = MixingLawModel<f64>;
pub type EnsembleModel32 = EnsembleModel<f32>;
pub type EnsembleModel64 = EnsembleModel<f64>;
pub type Predictor32 = Predictor<f32>;
pub type Predictor64 = Predictor<f64>;
