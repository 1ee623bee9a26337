use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mixture::Mixture;

/// One observed evaluation of one training run at one step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    /// Non-embedding parameter count.
    pub model_size: u64,
    pub step: u64,
    pub batch_tokens: u64,
    pub mixture: Mixture,
    /// Loss (nats/token) per validation domain.
    pub domain_losses: BTreeMap<String, f64>,
    pub overall_loss: Option<f64>,
}

fn check_loss(row: &str, what: &str, loss: f64) -> Result<()> {
    if loss.is_finite() && loss > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidRecord {
            row: row.to_string(),
            rule: "positive-finite-loss",
            detail: format!("{what} = {loss}"),
        })
    }
}

impl RunRecord {
    pub fn validate(&self) -> Result<()> {
        let row = &self.run_id;
        if self.step < 1 {
            return Err(Error::InvalidRecord { row: row.clone(), rule: "step-positive", detail: "step must be >= 1".into() });
        }
        if self.model_size < 1 {
            return Err(Error::InvalidRecord {
                row: row.clone(),
                rule: "size-positive",
                detail: "model_size must be >= 1".into(),
            });
        }
        for (domain, &loss) in &self.domain_losses {
            check_loss(row, &format!("loss_{domain}"), loss)?;
        }
        if let Some(loss) = self.overall_loss {
            check_loss(row, "loss_overall", loss)?;
        }
        Ok(())
    }

    /// Loss of the named validation domain.
    pub fn domain_loss(&self, domain: &str) -> Result<f64> {
        self.domain_losses.get(domain).copied().ok_or_else(|| Error::MissingDomainLoss {
            run_id: self.run_id.clone(),
            domain: domain.to_string(),
        })
    }

    /// Overall validation loss.
    pub fn overall(&self) -> Result<f64> {
        self.overall_loss.ok_or_else(|| Error::MissingDomainLoss {
            run_id: self.run_id.clone(),
            domain: "overall".to_string(),
        })
    }

    pub fn tokens(&self) -> u128 {
        self.step as u128 * self.batch_tokens as u128
    }
}

/// Which loss column a fit targets.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossTarget {
    Overall,
    Domain(String),
}

impl LossTarget {
    pub fn loss_of(&self, record: &RunRecord) -> Result<f64> {
        match self {
            LossTarget::Overall => record.overall(),
            LossTarget::Domain(d) => record.domain_loss(d),
        }
    }

    pub fn label(&self) -> &str {
        match self {
            LossTarget::Overall => "overall",
            LossTarget::Domain(d) => d,
        }
    }
}

impl std::str::FromStr for LossTarget {
    type Err = std::convert::Infallible;
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Ok(if s == "overall" { LossTarget::Overall } else { LossTarget::Domain(s.to_string()) })
    }
}
