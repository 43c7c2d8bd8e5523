//! Conditional intensity families: closed-form mixtures, the monotone
//! cumulative-hazard network, and the overall / type-wise likelihoods.

pub mod family;
mod fnn;
mod head;
mod nll;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use family::{expected_first_arrival, expected_first_arrival_with, gompertz_inverse_cdf, Component, Expectation, Mixture};
pub use fnn::{FnnHead, FnnOut, FnnScalar};
pub use head::{MixtureHead, MixtureOut, TimeTerms};
pub use nll::{check_finite, cross_entropy_sum, overall_loglik, typewise_loglik};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyKind {
    #[serde(rename = "lognorm")]
    LogNorm,
    Gompertz,
    #[serde(rename = "expdecay")]
    ExpDecay,
    Weibull,
    #[serde(rename = "logcauchy")]
    LogCauchy,
    Gaussian,
    FnnIntegral,
}

impl FamilyKind {
    pub const MIXTURES: [FamilyKind; 6] = [
        FamilyKind::LogNorm,
        FamilyKind::Gompertz,
        FamilyKind::ExpDecay,
        FamilyKind::Weibull,
        FamilyKind::LogCauchy,
        FamilyKind::Gaussian,
    ];

    /// Per-component fields including the mixture weight.
    pub fn num_fields(self) -> usize {
        match self {
            FamilyKind::ExpDecay => 4,
            FamilyKind::FnnIntegral => 0,
            _ => 3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FamilyKind::LogNorm => "lognorm",
            FamilyKind::Gompertz => "gompertz",
            FamilyKind::ExpDecay => "expdecay",
            FamilyKind::Weibull => "weibull",
            FamilyKind::LogCauchy => "logcauchy",
            FamilyKind::Gaussian => "gaussian",
            FamilyKind::FnnIntegral => "fnn_integral",
        }
    }
}

impl std::str::FromStr for FamilyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "lognorm" => Self::LogNorm,
            "gompertz" => Self::Gompertz,
            "expdecay" => Self::ExpDecay,
            "weibull" => Self::Weibull,
            "logcauchy" => Self::LogCauchy,
            "gaussian" => Self::Gaussian,
            "fnn_integral" | "fnnintegral" => Self::FnnIntegral,
            _ => return Err(Error::Config(format!("unknown family '{s}'"))),
        })
    }
}
