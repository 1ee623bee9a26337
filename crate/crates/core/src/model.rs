//! Aggregated mixing-law models and boosted ensembles of them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::law::{DomainLaw, ExpDomainLaw, LawForm};
use crate::mixture::Mixture;
use crate::scalar::Scalar;

/// How per-domain predictions combine into the overall loss.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Aggregation {
    SingleDomain,
    /// Known validation weights.
    Explicit,
    /// Latent validation domains with learned weights.
    Implicit,
}

/// Overall and per-validation-domain losses at one mixture.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
pub struct Prediction<F = f64> {
    pub overall: F,
    pub per_domain: Vec<F>,
}

/// Anything that maps a training mixture to predicted losses.
pub trait LossSurface<F: Scalar>: Sync {
    /// Number of training domains `M`.
    fn num_domains(&self) -> usize;

    /// Names of the training domains, in proportion order.
    fn domain_names(&self) -> Vec<String> {
        crate::mixture::default_domain_names(self.num_domains())
    }

    /// Labels of the per-domain outputs of [`LossSurface::predict_raw`].
    fn output_labels(&self) -> Vec<String>;

    /// Prediction at a raw proportion vector of length `M`, without simplex checks.
    fn predict_raw(&self, r: &[F]) -> Prediction<F>;

    fn overall_raw(&self, r: &[F]) -> F {
        self.predict_raw(r).overall
    }

    /// False when the overall prediction is piecewise constant (weighted medians).
    fn is_smooth(&self) -> bool {
        true
    }

    fn predict(&self, r: &Mixture<F>) -> Result<Prediction<F>> {
        if r.len() != self.num_domains() {
            return Err(Error::DimensionMismatch { expected: self.num_domains(), got: r.len() });
        }
        Ok(self.predict_raw(r.proportions()))
    }
}

fn check_weights<F: Scalar>(weights: &[F]) -> Result<()> {
    if weights.iter().any(|w| !w.is_finite() || *w < F::zero()) {
        return Err(Error::InvalidLaw("validation weights must be finite and non-negative".into()));
    }
    let total: F = weights.iter().copied().sum();
    if (total - F::one()).abs() > F::simplex_tolerance(weights.len()) {
        return Err(Error::InvalidLaw(format!("validation weights sum to {total}, expected 1")));
    }
    Ok(())
}

/// `K` validation-domain laws combined with weights `s`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMixingLawModel<F>", into = "RawMixingLawModel<F>", bound = "F: Scalar")]
pub struct MixingLawModel<F = f64> {
    form: LawForm,
    aggregation: Aggregation,
    training_domains: Vec<String>,
    validation_domains: Vec<String>,
    domain_laws: Vec<DomainLaw<F>>,
    weights: Vec<F>,
    weights_learned: bool,
}

#[derive(Clone, Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
struct RawMixingLawModel<F> {
    form: LawForm,
    aggregation: Aggregation,
    training_domains: Vec<String>,
    validation_domains: Vec<String>,
    domain_laws: Vec<DomainLaw<F>>,
    weights: Vec<F>,
    weights_learned: bool,
}

impl<F: Scalar> TryFrom<RawMixingLawModel<F>> for MixingLawModel<F> {
    type Error = Error;
    fn try_from(raw: RawMixingLawModel<F>) -> Result<Self> {
        let model = MixingLawModel {
            form: raw.form,
            aggregation: raw.aggregation,
            training_domains: raw.training_domains,
            validation_domains: raw.validation_domains,
            domain_laws: raw.domain_laws,
            weights: raw.weights,
            weights_learned: raw.weights_learned,
        };
        model.validate()?;
        Ok(model)
    }
}

impl<F: Scalar> From<MixingLawModel<F>> for RawMixingLawModel<F> {
    fn from(m: MixingLawModel<F>) -> Self {
        RawMixingLawModel {
            form: m.form,
            aggregation: m.aggregation,
            training_domains: m.training_domains,
            validation_domains: m.validation_domains,
            domain_laws: m.domain_laws,
            weights: m.weights,
            weights_learned: m.weights_learned,
        }
    }
}

impl<F: Scalar> MixingLawModel<F> {
    /// One validation domain predicted by one law.
    pub fn single(law: DomainLaw<F>, training_domains: Vec<String>, validation_domain: String) -> Result<Self> {
        let model = MixingLawModel {
            form: law.form(),
            aggregation: Aggregation::SingleDomain,
            training_domains,
            validation_domains: vec![validation_domain],
            domain_laws: vec![law],
            weights: vec![F::one()],
            weights_learned: false,
        };
        model.validate()?;
        Ok(model)
    }

    /// Known validation composition `weights` over the named domain laws.
    pub fn explicit(
        laws: Vec<DomainLaw<F>>,
        validation_domains: Vec<String>,
        weights: Vec<F>,
        training_domains: Vec<String>,
    ) -> Result<Self> {
        let form = laws.first().map(|l| l.form()).unwrap_or(LawForm::M4);
        let model = MixingLawModel {
            form,
            aggregation: Aggregation::Explicit,
            training_domains,
            validation_domains,
            domain_laws: laws,
            weights,
            weights_learned: false,
        };
        model.validate()?;
        Ok(model)
    }

    /// Latent validation domains with learned weights.
    pub fn implicit(laws: Vec<ExpDomainLaw<F>>, weights: Vec<F>, training_domains: Vec<String>) -> Result<Self> {
        let validation_domains = (0..laws.len()).map(|i| format!("implicit_{i}")).collect();
        let model = MixingLawModel {
            form: LawForm::M4,
            aggregation: Aggregation::Implicit,
            training_domains,
            validation_domains,
            domain_laws: laws.into_iter().map(DomainLaw::M4).collect(),
            weights,
            weights_learned: true,
        };
        model.validate()?;
        Ok(model)
    }

    fn validate(&self) -> Result<()> {
        let k = self.domain_laws.len();
        if k == 0 {
            return Err(Error::InvalidLaw("a mixing-law model needs at least one domain law".into()));
        }
        if self.weights.len() != k || self.validation_domains.len() != k {
            return Err(Error::DimensionMismatch { expected: k, got: self.weights.len() });
        }
        check_weights(&self.weights)?;
        let m = self.training_domains.len();
        for law in &self.domain_laws {
            if law.num_domains() != m {
                return Err(Error::DimensionMismatch { expected: m, got: law.num_domains() });
            }
            if law.form() != self.form {
                return Err(Error::InvalidLaw("all domain laws must share one form".into()));
            }
            if let DomainLaw::M4(l) = law {
                ExpDomainLaw::new(l.c(), l.k(), l.t().to_vec())?;
            }
        }
        match self.aggregation {
            Aggregation::Explicit | Aggregation::SingleDomain if self.weights_learned => {
                Err(Error::InvalidLaw("explicit aggregation uses fixed weights".into()))
            }
            Aggregation::Implicit if !self.weights_learned => {
                Err(Error::InvalidLaw("implicit aggregation learns its weights".into()))
            }
            Aggregation::SingleDomain if k != 1 => {
                Err(Error::InvalidLaw("single-domain model holds exactly one law".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn form(&self) -> LawForm {
        self.form
    }

    pub fn aggregation(&self) -> Aggregation {
        self.aggregation
    }

    pub fn training_domains(&self) -> &[String] {
        &self.training_domains
    }

    pub fn validation_domains(&self) -> &[String] {
        &self.validation_domains
    }

    pub fn domain_laws(&self) -> &[DomainLaw<F>] {
        &self.domain_laws
    }

    pub fn weights(&self) -> &[F] {
        &self.weights
    }

    pub fn weights_learned(&self) -> bool {
        self.weights_learned
    }

    /// Number of (possibly latent) validation domains `K`.
    pub fn num_validation_domains(&self) -> usize {
        self.domain_laws.len()
    }

    /// Copy of this model with different validation weights.
    pub fn with_weights(&self, weights: Vec<F>) -> Result<Self> {
        let mut model = self.clone();
        model.weights = weights;
        model.validate()?;
        Ok(model)
    }
}

impl<F: Scalar> LossSurface<F> for MixingLawModel<F> {
    fn num_domains(&self) -> usize {
        self.training_domains.len()
    }

    fn domain_names(&self) -> Vec<String> {
        self.training_domains.clone()
    }

    fn output_labels(&self) -> Vec<String> {
        self.validation_domains.clone()
    }

    fn predict_raw(&self, r: &[F]) -> Prediction<F> {
        let per_domain: Vec<F> = self.domain_laws.iter().map(|l| l.eval_raw(r)).collect();
        let overall = per_domain.iter().zip(&self.weights).fold(F::zero(), |acc, (&l, &s)| acc + s * l);
        Prediction { overall, per_domain }
    }
}

/// Index of the weighted median: the smallest value whose cumulative weight
/// reaches half of the total. Ties in value keep input order.
pub fn weighted_median_index<F: Scalar>(values: &[F], weights: &[F]) -> usize {
    assert!(!values.is_empty() && values.len() == weights.len());
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| {
        values[a].partial_cmp(&values[b]).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b))
    });
    let total: F = weights.iter().copied().sum();
    let half = total / F::lit(2.0);
    let mut cumulative = F::zero();
    for &i in &order {
        cumulative = cumulative + weights[i];
        if cumulative >= half {
            return i;
        }
    }
    *order.last().unwrap()
}

/// Boosted ensemble of mixing-law models, predicting by weighted median.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawEnsemble<F>", into = "RawEnsemble<F>", bound = "F: Scalar")]
pub struct EnsembleModel<F = f64> {
    members: Vec<MixingLawModel<F>>,
    member_weights: Vec<F>,
}

#[derive(Clone, Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
struct RawEnsemble<F> {
    members: Vec<MixingLawModel<F>>,
    member_weights: Vec<F>,
}

impl<F: Scalar> TryFrom<RawEnsemble<F>> for EnsembleModel<F> {
    type Error = Error;
    fn try_from(raw: RawEnsemble<F>) -> Result<Self> {
        EnsembleModel::new(raw.members, raw.member_weights)
    }
}

impl<F: Scalar> From<EnsembleModel<F>> for RawEnsemble<F> {
    fn from(e: EnsembleModel<F>) -> Self {
        RawEnsemble { members: e.members, member_weights: e.member_weights }
    }
}

impl<F: Scalar> EnsembleModel<F> {
    pub fn new(members: Vec<MixingLawModel<F>>, member_weights: Vec<F>) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::InvalidLaw("an ensemble needs at least one member".into()));
        }
        if members.len() != member_weights.len() {
            return Err(Error::DimensionMismatch { expected: members.len(), got: member_weights.len() });
        }
        if member_weights.iter().any(|w| !(w.is_finite() && *w > F::zero())) {
            return Err(Error::InvalidLaw("member weights must be finite and positive".into()));
        }
        let m = members[0].training_domains.len();
        let k = members[0].num_validation_domains();
        if members.iter().any(|mm| mm.training_domains.len() != m || mm.num_validation_domains() != k) {
            return Err(Error::InvalidLaw("ensemble members must share M and K".into()));
        }
        Ok(EnsembleModel { members, member_weights })
    }

    pub fn members(&self) -> &[MixingLawModel<F>] {
        &self.members
    }

    pub fn member_weights(&self) -> &[F] {
        &self.member_weights
    }
}

impl<F: Scalar> LossSurface<F> for EnsembleModel<F> {
    fn num_domains(&self) -> usize {
        self.members[0].num_domains()
    }

    fn domain_names(&self) -> Vec<String> {
        self.members[0].domain_names()
    }

    fn output_labels(&self) -> Vec<String> {
        self.members[0].output_labels()
    }

    fn predict_raw(&self, r: &[F]) -> Prediction<F> {
        let predictions: Vec<Prediction<F>> = self.members.iter().map(|m| m.predict_raw(r)).collect();
        let overalls: Vec<F> = predictions.iter().map(|p| p.overall).collect();
        let owner = weighted_median_index(&overalls, &self.member_weights);
        predictions.into_iter().nth(owner).expect("owner index in range")
    }

    fn is_smooth(&self) -> bool {
        self.members.len() == 1
    }
}

/// Either a single mixing-law model or a boosted ensemble.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", bound = "F: Scalar")]
pub enum Predictor<F = f64> {
    Mixing(MixingLawModel<F>),
    Ensemble(EnsembleModel<F>),
}

impl<F: Scalar> LossSurface<F> for Predictor<F> {
    fn num_domains(&self) -> usize {
        match self {
            Predictor::Mixing(m) => m.num_domains(),
            Predictor::Ensemble(e) => e.num_domains(),
        }
    }

    fn domain_names(&self) -> Vec<String> {
        self.training_domains().to_vec()
    }

    fn output_labels(&self) -> Vec<String> {
        match self {
            Predictor::Mixing(m) => m.output_labels(),
            Predictor::Ensemble(e) => e.output_labels(),
        }
    }

    fn predict_raw(&self, r: &[F]) -> Prediction<F> {
        match self {
            Predictor::Mixing(m) => m.predict_raw(r),
            Predictor::Ensemble(e) => e.predict_raw(r),
        }
    }

    fn is_smooth(&self) -> bool {
        match self {
            Predictor::Mixing(_) => true,
            Predictor::Ensemble(e) => e.is_smooth(),
        }
    }
}

impl<F: Scalar> Predictor<F> {
    pub fn training_domains(&self) -> &[String] {
        match self {
            Predictor::Mixing(m) => m.training_domains(),
            Predictor::Ensemble(e) => e.members[0].training_domains(),
        }
    }

    pub fn num_validation_domains(&self) -> usize {
        match self {
            Predictor::Mixing(m) => m.num_validation_domains(),
            Predictor::Ensemble(e) => e.members[0].num_validation_domains(),
        }
    }
}

/// Overall and per-domain losses of a model at mixture `r`.
pub fn eval_model<F: Scalar, S: LossSurface<F> + ?Sized>(model: &S, r: &Mixture<F>) -> Result<Prediction<F>> {
    model.predict(r)
}
