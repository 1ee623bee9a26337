//! Closed-form law families: the exponential mixing law, its rejected
//! candidate forms, and the power law used for step and size extrapolation.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mixture::Mixture;
use crate::scalar::{clamped_exp, Scalar};

/// Candidate functional forms for a single validation domain.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LawForm {
    /// `c + sum_j k_j exp(t_j r_j)`
    M1,
    /// `c + k sum_j exp(t_j r_j)`
    M2,
    /// `c + k exp(prod_j t_j r_j)`
    M3,
    /// `c + k exp(sum_j t_j r_j)`, the adopted mixing law.
    M4,
}

impl LawForm {
    pub const ALL: [LawForm; 4] = [LawForm::M1, LawForm::M2, LawForm::M3, LawForm::M4];

    /// Number of free coefficients for `m` training domains.
    pub fn coefficient_count(self, m: usize) -> usize {
        match self {
            LawForm::M1 => 2 * m + 1,
            LawForm::M2 | LawForm::M3 | LawForm::M4 => m + 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            LawForm::M1 => "M1",
            LawForm::M2 => "M2",
            LawForm::M3 => "M3",
            LawForm::M4 => "M4",
        }
    }
}

impl std::str::FromStr for LawForm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "M1" => Ok(LawForm::M1),
            "M2" => Ok(LawForm::M2),
            "M3" => Ok(LawForm::M3),
            "M4" => Ok(LawForm::M4),
            other => Err(Error::InvalidConfig(format!("unknown law form {other:?}"))),
        }
    }
}

impl std::fmt::Display for LawForm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

fn total_order<F: Scalar>(a: &F, b: &F) -> Ordering {
    a.partial_cmp(b).unwrap_or(Ordering::Equal)
}

/// Sum that does not depend on the order of its terms.
///
/// Terms are sorted before accumulation, so any permutation of the input
/// yields the same bits.
pub(crate) fn order_free_sum<F: Scalar>(terms: &mut [F]) -> F {
    terms.sort_unstable_by(total_order);
    terms.iter().fold(F::zero(), |acc, &x| acc + x)
}

fn order_free_product<F: Scalar>(factors: &mut [F]) -> F {
    factors.sort_unstable_by(total_order);
    factors.iter().fold(F::one(), |acc, &x| acc * x)
}

/// `sum_j t_j r_j`, invariant under joint permutation of `t` and `r`.
pub(crate) fn exponent<F: Scalar>(t: &[F], r: &[F]) -> F {
    let mut terms: Vec<F> = t.iter().zip(r).map(|(&a, &b)| a * b).collect();
    order_free_sum(&mut terms)
}

fn check_finite<F: Scalar>(what: &str, values: &[F]) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::InvalidLaw(format!("{what} must be finite")))
    }
}

/// Coefficients `(c, k, t)` of the exponential mixing law for one validation domain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawExpLaw<F>", into = "RawExpLaw<F>", bound = "F: Scalar")]
pub struct ExpDomainLaw<F = f64> {
    c: F,
    k: F,
    t: Vec<F>,
}

#[derive(Clone, Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
struct RawExpLaw<F> {
    c: F,
    k: F,
    t: Vec<F>,
}

impl<F: Scalar> TryFrom<RawExpLaw<F>> for ExpDomainLaw<F> {
    type Error = Error;
    fn try_from(raw: RawExpLaw<F>) -> Result<Self> {
        ExpDomainLaw::new(raw.c, raw.k, raw.t)
    }
}

impl<F: Scalar> From<ExpDomainLaw<F>> for RawExpLaw<F> {
    fn from(law: ExpDomainLaw<F>) -> Self {
        RawExpLaw { c: law.c, k: law.k, t: law.t }
    }
}

impl<F: Scalar> ExpDomainLaw<F> {
    pub fn new(c: F, k: F, t: Vec<F>) -> Result<Self> {
        check_finite("c and k", &[c, k])?;
        check_finite("slopes", &t)?;
        if k <= F::zero() {
            return Err(Error::InvalidLaw(format!("k must be positive, got {k}")));
        }
        if c < F::zero() {
            return Err(Error::InvalidLaw(format!("c must be non-negative, got {c}")));
        }
        if t.is_empty() {
            return Err(Error::InvalidLaw("at least one slope is required".into()));
        }
        Ok(ExpDomainLaw { c, k, t })
    }

    /// Single-slope law `c + k exp(t r)` over the proportion of one domain.
    pub fn two_domain(c: F, k: F, t: F) -> Result<Self> {
        ExpDomainLaw::new(c, k, vec![t])
    }

    pub fn c(&self) -> F {
        self.c
    }

    pub fn k(&self) -> F {
        self.k
    }

    pub fn t(&self) -> &[F] {
        &self.t
    }

    pub fn num_domains(&self) -> usize {
        self.t.len()
    }

    /// Evaluates on a raw proportion slice of matching length.
    pub fn eval_raw(&self, r: &[F]) -> F {
        debug_assert_eq!(r.len(), self.t.len());
        self.c + self.k * clamped_exp(exponent(&self.t, r))
    }

    pub fn eval(&self, r: &Mixture<F>) -> Result<F> {
        if r.len() != self.t.len() {
            return Err(Error::DimensionMismatch { expected: self.t.len(), got: r.len() });
        }
        Ok(self.eval_raw(r.proportions()))
    }

    /// Same law with `delta` added to `c`.
    pub fn shifted(&self, delta: F) -> Result<Self> {
        ExpDomainLaw::new(self.c + delta, self.k, self.t.clone())
    }

    /// Same law with training domains reordered (`order[i]` is the old index of new domain `i`).
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        if order.len() != self.t.len() {
            return Err(Error::DimensionMismatch { expected: self.t.len(), got: order.len() });
        }
        ExpDomainLaw::new(self.c, self.k, order.iter().map(|&i| self.t[i]).collect())
    }
}

/// Two-domain law `c + k exp(t r)` at proportion `r` of the modeled domain.
pub fn eval_two_domain<F: Scalar>(law: &ExpDomainLaw<F>, r: F) -> Result<F> {
    if law.num_domains() != 1 {
        return Err(Error::DimensionMismatch { expected: 1, got: law.num_domains() });
    }
    Ok(law.c + law.k * clamped_exp(law.t[0] * r))
}

/// Multi-domain mixing law `c + k exp(sum_j t_j r_j)`.
pub fn eval_m4<F: Scalar>(law: &ExpDomainLaw<F>, r: &Mixture<F>) -> Result<F> {
    law.eval(r)
}

/// A fitted law of any candidate form for one validation domain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", bound = "F: Scalar")]
pub enum DomainLaw<F = f64> {
    M1 { c: F, k: Vec<F>, t: Vec<F> },
    M2 { c: F, k: F, t: Vec<F> },
    M3 { c: F, k: F, t: Vec<F> },
    M4(ExpDomainLaw<F>),
}

impl<F: Scalar> From<ExpDomainLaw<F>> for DomainLaw<F> {
    fn from(law: ExpDomainLaw<F>) -> Self {
        DomainLaw::M4(law)
    }
}

impl<F: Scalar> DomainLaw<F> {
    /// Builds a law from a flat coefficient vector.
    ///
    /// Layout: M1 `[c, k_1..k_M, t_1..t_M]`; M2, M3 and M4 `[c, k, t_1..t_M]`.
    pub fn from_coefficients(form: LawForm, coefficients: &[F], m: usize) -> Result<Self> {
        let expected = form.coefficient_count(m);
        if coefficients.len() != expected || m == 0 {
            return Err(Error::DimensionMismatch { expected, got: coefficients.len() });
        }
        check_finite("coefficients", coefficients)?;
        let c = coefficients[0];
        Ok(match form {
            LawForm::M1 => DomainLaw::M1 {
                c,
                k: coefficients[1..=m].to_vec(),
                t: coefficients[m + 1..].to_vec(),
            },
            LawForm::M2 => DomainLaw::M2 { c, k: coefficients[1], t: coefficients[2..].to_vec() },
            LawForm::M3 => DomainLaw::M3 { c, k: coefficients[1], t: coefficients[2..].to_vec() },
            LawForm::M4 => DomainLaw::M4(ExpDomainLaw::new(c, coefficients[1], coefficients[2..].to_vec())?),
        })
    }

    pub fn form(&self) -> LawForm {
        match self {
            DomainLaw::M1 { .. } => LawForm::M1,
            DomainLaw::M2 { .. } => LawForm::M2,
            DomainLaw::M3 { .. } => LawForm::M3,
            DomainLaw::M4(_) => LawForm::M4,
        }
    }

    pub fn coefficients(&self) -> Vec<F> {
        match self {
            DomainLaw::M1 { c, k, t } => std::iter::once(*c).chain(k.iter().copied()).chain(t.iter().copied()).collect(),
            DomainLaw::M2 { c, k, t } | DomainLaw::M3 { c, k, t } => {
                [*c, *k].into_iter().chain(t.iter().copied()).collect()
            }
            DomainLaw::M4(law) => [law.c, law.k].into_iter().chain(law.t.iter().copied()).collect(),
        }
    }

    pub fn num_domains(&self) -> usize {
        match self {
            DomainLaw::M1 { t, .. } | DomainLaw::M2 { t, .. } | DomainLaw::M3 { t, .. } => t.len(),
            DomainLaw::M4(law) => law.num_domains(),
        }
    }

    pub fn as_m4(&self) -> Option<&ExpDomainLaw<F>> {
        match self {
            DomainLaw::M4(law) => Some(law),
            _ => None,
        }
    }

    /// Evaluates on a raw proportion slice; no simplex check.
    pub fn eval_raw(&self, r: &[F]) -> F {
        match self {
            DomainLaw::M1 { c, k, t } => {
                let mut terms: Vec<F> =
                    k.iter().zip(t).zip(r).map(|((&kj, &tj), &rj)| kj * clamped_exp(tj * rj)).collect();
                *c + order_free_sum(&mut terms)
            }
            DomainLaw::M2 { c, k, t } => {
                let mut terms: Vec<F> = t.iter().zip(r).map(|(&tj, &rj)| clamped_exp(tj * rj)).collect();
                *c + *k * order_free_sum(&mut terms)
            }
            DomainLaw::M3 { c, k, t } => {
                let mut factors: Vec<F> = t.iter().zip(r).map(|(&tj, &rj)| tj * rj).collect();
                *c + *k * clamped_exp(order_free_product(&mut factors))
            }
            DomainLaw::M4(law) => law.eval_raw(r),
        }
    }

    pub fn eval(&self, r: &Mixture<F>) -> Result<F> {
        let m = self.num_domains();
        if r.len() != m {
            return Err(Error::DimensionMismatch { expected: m, got: r.len() });
        }
        Ok(self.eval_raw(r.proportions()))
    }
}

/// Raw evaluator for a candidate form from flat coefficients.
///
/// `r` is not required to lie on the simplex.
pub fn eval_candidate<F: Scalar>(form: LawForm, coefficients: &[F], r: &[F]) -> Result<F> {
    let law = DomainLaw::from_coefficients(form, coefficients, r.len())?;
    Ok(law.eval_raw(r))
}

/// Power law `c + k x^alpha`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPowerLaw<F>", into = "RawPowerLaw<F>", bound = "F: Scalar")]
pub struct PowerLaw<F = f64> {
    c: F,
    k: F,
    alpha: F,
}

#[derive(Clone, Copy, Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
struct RawPowerLaw<F> {
    c: F,
    k: F,
    alpha: F,
}

impl<F: Scalar> TryFrom<RawPowerLaw<F>> for PowerLaw<F> {
    type Error = Error;
    fn try_from(raw: RawPowerLaw<F>) -> Result<Self> {
        PowerLaw::new(raw.c, raw.k, raw.alpha)
    }
}

impl<F: Scalar> From<PowerLaw<F>> for RawPowerLaw<F> {
    fn from(p: PowerLaw<F>) -> Self {
        RawPowerLaw { c: p.c, k: p.k, alpha: p.alpha }
    }
}

impl<F: Scalar> PowerLaw<F> {
    pub fn new(c: F, k: F, alpha: F) -> Result<Self> {
        check_finite("power-law coefficients", &[c, k, alpha])?;
        if c < F::zero() {
            return Err(Error::InvalidLaw(format!("c must be non-negative, got {c}")));
        }
        if k <= F::zero() {
            return Err(Error::InvalidLaw(format!("k must be positive, got {k}")));
        }
        Ok(PowerLaw { c, k, alpha })
    }

    pub fn c(&self) -> F {
        self.c
    }

    pub fn k(&self) -> F {
        self.k
    }

    pub fn alpha(&self) -> F {
        self.alpha
    }

    pub fn eval(&self, x: F) -> Result<F> {
        if !(x > F::zero()) {
            return Err(Error::NonPositiveInput(x.to_f64_lossy()));
        }
        Ok(self.c + self.k * x.powf(self.alpha))
    }
}

pub fn eval_power_law<F: Scalar>(p: &PowerLaw<F>, x: F) -> Result<F> {
    p.eval(x)
}
