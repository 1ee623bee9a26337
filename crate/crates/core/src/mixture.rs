//! Points on the probability simplex over training domains.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Training-domain proportions `r`, one per named domain, summing to one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMixture<F>", into = "RawMixture<F>", bound = "F: Scalar")]
pub struct Mixture<F = f64> {
    proportions: Vec<F>,
    domain_names: Vec<String>,
}

#[derive(Clone, Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
struct RawMixture<F> {
    proportions: Vec<F>,
    domain_names: Vec<String>,
}

impl<F: Scalar> TryFrom<RawMixture<F>> for Mixture<F> {
    type Error = Error;

    fn try_from(raw: RawMixture<F>) -> Result<Self> {
        Mixture::new(raw.proportions, raw.domain_names)
    }
}

impl<F: Scalar> From<Mixture<F>> for RawMixture<F> {
    fn from(m: Mixture<F>) -> Self {
        RawMixture { proportions: m.proportions, domain_names: m.domain_names }
    }
}

/// Default domain labels `d1..dM`.
pub fn default_domain_names(m: usize) -> Vec<String> {
    (1..=m).map(|i| format!("d{i}")).collect()
}

/// Checks the simplex rules on a raw proportion vector.
pub fn check_simplex<F: Scalar>(proportions: &[F]) -> Result<()> {
    if proportions.is_empty() {
        return Err(Error::InvalidMixture { rule: "non-empty", detail: "no proportions".into() });
    }
    for (j, &p) in proportions.iter().enumerate() {
        if !p.is_finite() || p < F::zero() || p > F::one() {
            return Err(Error::InvalidMixture {
                rule: "unit-interval",
                detail: format!("proportion {j} = {p} is outside [0, 1]"),
            });
        }
    }
    let total: F = proportions.iter().copied().sum();
    if (total - F::one()).abs() > F::simplex_tolerance(proportions.len()) {
        return Err(Error::InvalidMixture {
            rule: "simplex-sum",
            detail: format!("proportions sum to {total}, expected 1"),
        });
    }
    Ok(())
}

impl<F: Scalar> Mixture<F> {
    pub fn new(proportions: Vec<F>, domain_names: Vec<String>) -> Result<Self> {
        if proportions.len() != domain_names.len() {
            return Err(Error::InvalidMixture {
                rule: "names-length",
                detail: format!(
                    "{} proportions but {} domain names",
                    proportions.len(),
                    domain_names.len()
                ),
            });
        }
        check_simplex(&proportions)?;
        Ok(Mixture { proportions, domain_names })
    }

    /// Mixture with default domain names `d1..dM`.
    pub fn from_proportions(proportions: Vec<F>) -> Result<Self> {
        let names = default_domain_names(proportions.len());
        Mixture::new(proportions, names)
    }

    pub fn proportions(&self) -> &[F] {
        &self.proportions
    }

    pub fn domain_names(&self) -> &[String] {
        &self.domain_names
    }

    pub fn len(&self) -> usize {
        self.proportions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.proportions.is_empty()
    }

    /// Proportion of the named domain.
    pub fn proportion_of(&self, name: &str) -> Option<F> {
        self.domain_names.iter().position(|n| n == name).map(|i| self.proportions[i])
    }

    /// Reorders domains so that entry `i` of the result is entry `order[i]` of `self`.
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        if order.len() != self.len() {
            return Err(Error::DimensionMismatch { expected: self.len(), got: order.len() });
        }
        let proportions = order.iter().map(|&i| self.proportions[i]).collect();
        let names = order.iter().map(|&i| self.domain_names[i].clone()).collect();
        Mixture::new(proportions, names)
    }

    /// Bitwise identity key, usable for grouping records by mixture.
    pub fn key(&self) -> Vec<u64> {
        self.proportions.iter().map(|p| p.to_f64_lossy().to_bits()).collect()
    }

    /// Whether any domain has a zero proportion.
    pub fn has_zero(&self) -> bool {
        self.proportions.iter().any(|p| *p == F::zero())
    }
}

impl<F: Scalar> std::fmt::Display for Mixture<F> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "[")?;
        for (i, p) in self.proportions.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{p}")?;
        }
        write!(f, "]")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accepts_simplex_points() {
        let m = Mixture::from_proportions(vec![0.2, 0.3, 0.5]).unwrap();
        assert_eq!(m.len(), 3);
        assert_eq!(m.domain_names(), ["d1", "d2", "d3"]);
        assert_eq!(m.proportion_of("d2"), Some(0.3));
    }

    #[test]
    fn rejects_bad_sum() {
        let err = Mixture::from_proportions(vec![0.5, 0.3]).unwrap_err();
        assert!(matches!(err, Error::InvalidMixture { rule: "simplex-sum", .. }));
    }

    #[test]
    fn rejects_out_of_range_and_empty() {
        assert!(Mixture::from_proportions(vec![1.5, -0.5]).is_err());
        assert!(Mixture::<f64>::from_proportions(vec![]).is_err());
        assert!(Mixture::from_proportions(vec![f64::NAN, 1.0]).is_err());
    }

    #[test]
    fn rejects_name_mismatch() {
        let err = Mixture::new(vec![1.0], vec!["a".into(), "b".into()]).unwrap_err();
        assert!(matches!(err, Error::InvalidMixture { rule: "names-length", .. }));
    }

    #[test]
    fn tolerance_is_1e9() {
        assert!(Mixture::from_proportions(vec![0.5, 0.5 + 5e-10]).is_ok());
        assert!(Mixture::from_proportions(vec![0.5, 0.5 + 5e-9]).is_err());
    }

    #[test]
    fn f32_mixture() {
        let m = Mixture::<f32>::from_proportions(vec![0.1, 0.2, 0.7]).unwrap();
        assert_eq!(m.len(), 3);
    }

    #[test]
    fn serde_validates() {
        let m = Mixture::from_proportions(vec![0.25, 0.75]).unwrap();
        let s = serde_json::to_string(&m).unwrap();
        let back: Mixture = serde_json::from_str(&s).unwrap();
        assert_eq!(back, m);
        let bad = r#"{"proportions":[0.2,0.2],"domain_names":["a","b"]}"#;
        assert!(serde_json::from_str::<Mixture>(bad).is_err());
    }
}
