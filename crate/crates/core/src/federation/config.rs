use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::OptimizerKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    FedAvg,
    FedProx,
    FedRs,
    TunePairwise,
    TuneMse,
}

impl Method {
    pub fn is_tuning(self) -> bool {
        matches!(self, Method::TunePairwise | Method::TuneMse)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Method::FedAvg => "fedavg",
            Method::FedProx => "fedprox",
            Method::FedRs => "fedrs",
            Method::TunePairwise => "tune_pairwise",
            Method::TuneMse => "tune_mse",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Ok(match s {
            "fedavg" => Method::FedAvg,
            "fedprox" => Method::FedProx,
            "fedrs" => Method::FedRs,
            "tune_pairwise" => Method::TunePairwise,
            "tune_mse" => Method::TuneMse,
            other => {
                return Err(format!(
                    "unknown method `{other}` (expected fedavg, fedprox, fedrs, tune_pairwise or tune_mse)"
                ))
            }
        })
    }
}

/// Whether clients know the full label set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelMode {
    Public,
    Private,
}

impl LabelMode {
    pub fn as_str(self) -> &'static str {
        match self {
            LabelMode::Public => "public",
            LabelMode::Private => "private",
        }
    }
}

impl fmt::Display for LabelMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LabelMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "public" => Ok(LabelMode::Public),
            "private" => Ok(LabelMode::Private),
            other => Err(format!("unknown label mode `{other}` (expected public or private)")),
        }
    }
}

pub const FEDRS_PRIVATE_MESSAGE: &str = "FedRS is not applicable with private labels";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FederationConfig {
    pub method: Method,
    pub label_mode: LabelMode,
    pub rounds: usize,
    pub local_epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub fedprox_mu: f64,
    pub fedrs_alpha: f64,
    pub tuning_epochs: usize,
    pub tuning_optimizer: OptimizerKind,
    pub seed: u64,
}

impl Default for FederationConfig {
    fn default() -> Self {
        FederationConfig {
            method: Method::FedAvg,
            label_mode: LabelMode::Private,
            rounds: 100,
            local_epochs: 1,
            batch_size: 64,
            lr: 1e-3,
            fedprox_mu: 1e-2,
            fedrs_alpha: 0.5,
            tuning_epochs: 3,
            tuning_optimizer: OptimizerKind::Adam,
            seed: 0,
        }
    }
}

impl FederationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.method == Method::FedRs && self.label_mode == LabelMode::Private {
            return Err(Error::config(FEDRS_PRIVATE_MESSAGE));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch size must be positive"));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::config(format!("learning rate {} must be finite and ≥ 0", self.lr)));
        }
        if !(self.fedprox_mu >= 0.0 && self.fedprox_mu.is_finite()) {
            return Err(Error::config(format!("fedprox mu {} must be finite and ≥ 0", self.fedprox_mu)));
        }
        if !(self.fedrs_alpha >= 0.0 && self.fedrs_alpha.is_finite()) {
            return Err(Error::config(format!("fedrs alpha {} must be finite and ≥ 0", self.fedrs_alpha)));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fedrs_with_private_labels_is_rejected() {
        let cfg = FederationConfig {
            method: Method::FedRs,
            label_mode: LabelMode::Private,
            ..Default::default()
        };
        let err = cfg.validate().unwrap_err().to_string();
        assert!(err.contains(FEDRS_PRIVATE_MESSAGE), "{err}");
    }

    #[test]
    fn names_round_trip() {
        for m in [Method::FedAvg, Method::FedProx, Method::FedRs, Method::TunePairwise, Method::TuneMse] {
            assert_eq!(m.as_str().parse::<Method>().unwrap(), m);
        }
    }
}
