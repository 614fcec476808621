//! Bayesian fitting of the media-mix model variants.
//!
//! The flow is `scale_dataset` -> [`build_model`] -> [`sample`] ->
//! [`predict`] / [`decompose`] / [`posterior_summary`].

mod diagnostics;
mod draws;
mod model;
mod nuts;
mod prior;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::DatasetError;
use crate::transforms::DEFAULT_MAX_LAG;

pub use diagnostics::{ess, quantile, split_rhat};
pub use draws::{
    contribution_percent, decompose, posterior_summary, predict, ContributionMatrix, ContributionShare, Decomposition,
    ParamSummary, PosteriorDraws, Prediction, SamplerStats,
};
pub use model::{build_model, ChannelTransform, Model, ParamInfo, ParamKind, Unit};
pub use nuts::{sample, sample_target, LogDensity, SamplerConfig};
pub use prior::{Prior, Support};

/// R-hat above this marks a fit as not converged.
pub const RHAT_THRESHOLD: f64 = 1.1;

#[derive(Debug, Error)]
pub enum InferenceError {
    #[error("model spec does not fit the data: {0}")]
    SpecMismatch(String),
    #[error("invalid sampler config: {0}")]
    InvalidConfig(String),
    #[error("log density not finite at any of {attempts} initial points (chain {chain})")]
    NonFiniteDensityAtInit { chain: usize, attempts: usize },
    #[error("dataset channels do not match the fit: {0}")]
    ChannelMismatch(String),
    #[error("total response is zero")]
    ZeroResponseTotal,
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

/// Which transform chain each channel goes through.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// coefficient * adstock
    Adstock,
    /// coefficient * carryover
    Carryover,
    /// hill(adstock)
    HillAdstock,
    /// michaelis_menten(adstock)
    MmAdstock,
    /// michaelis_menten(carryover)
    MmCarryover,
    /// michaelis_menten(boltzmann_mix(carryover))
    MmBoltzmann,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::Adstock,
        Variant::Carryover,
        Variant::HillAdstock,
        Variant::MmAdstock,
        Variant::MmCarryover,
        Variant::MmBoltzmann,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Variant::Adstock => "adstock",
            Variant::Carryover => "carryover",
            Variant::HillAdstock => "hill_adstock",
            Variant::MmAdstock => "mm_adstock",
            Variant::MmCarryover => "mm_carryover",
            Variant::MmBoltzmann => "mm_boltzmann",
        }
    }

    pub fn valid_names() -> String {
        Self::ALL.iter().map(|v| v.as_str()).collect::<Vec<_>>().join(", ")
    }

    /// True when the delay window uses retention-rate weights.
    pub fn uses_carryover(&self) -> bool {
        matches!(self, Variant::Carryover | Variant::MmCarryover | Variant::MmBoltzmann)
    }

    pub fn is_michaelis_menten(&self) -> bool {
        matches!(self, Variant::MmAdstock | Variant::MmCarryover | Variant::MmBoltzmann)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .iter()
            .find(|v| v.as_str() == s)
            .copied()
            .ok_or_else(|| format!("unknown variant `{s}`; valid variants: {}", Self::valid_names()))
    }
}

/// Prior families for every model parameter. Scales marked "factor" are
/// multiplied by the mean of the relevant scaled column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorSpec {
    pub baseline: Prior,
    pub control_coef: Prior,
    pub noise_sd: Prior,
    /// Lower bound on the noise sd, scaled response units. Keeps the
    /// posterior proper on noise-free data.
    pub noise_floor: f64,
    pub trend: Prior,
    pub seasonality: Prior,
    /// Delay-weight base (adstock alpha or carryover retention).
    pub decay: Prior,
    /// Upper end of the uniform prior on the peak delay; `None` uses
    /// `min(3, max_lag - 1)`.
    pub delay_upper: Option<f64>,
    /// Half-normal scale factor for vmax / Hill output scale.
    pub saturation_factor: f64,
    /// Half-normal scale factor for km / Hill half-saturation.
    pub half_sat_factor: f64,
    /// Half-normal scale factor for linear media coefficients.
    pub coef_factor: f64,
    pub hill_exponent: Prior,
    pub mix_a: Prior,
    pub mix_b: Prior,
}

impl Default for PriorSpec {
    fn default() -> Self {
        Self {
            baseline: Prior::half_normal(2.0),
            control_coef: Prior::Normal { mean: 0.0, sd: 1.0 },
            noise_sd: Prior::half_normal(1.0),
            noise_floor: 1e-3,
            trend: Prior::Normal { mean: 0.0, sd: 1.0 },
            seasonality: Prior::Normal { mean: 0.0, sd: 1.0 },
            decay: Prior::Beta { a: 2.0, b: 2.0 },
            delay_upper: None,
            saturation_factor: 2.0,
            half_sat_factor: 2.0,
            coef_factor: 2.0,
            hill_exponent: Prior::Gamma {
                shape: 2.0,
                rate: 1.0,
                lower: 0.5,
                upper: 3.0,
            },
            mix_a: Prior::Uniform { lower: 0.8, upper: 1.0 },
            mix_b: Prior::HalfNormal {
                scale: 0.1,
                upper: Some(1.0),
            },
        }
    }
}

impl PriorSpec {
    pub fn validate(&self) -> Result<(), String> {
        for p in [
            &self.baseline,
            &self.control_coef,
            &self.noise_sd,
            &self.trend,
            &self.seasonality,
            &self.decay,
            &self.hill_exponent,
            &self.mix_a,
            &self.mix_b,
        ] {
            p.validate()?;
        }
        if !(self.noise_floor >= 0.0) {
            return Err("noise_floor must be >= 0".into());
        }
        if self.delay_upper.is_some_and(|d| !(d >= 0.0)) {
            return Err("delay_upper must be >= 0".into());
        }
        for (name, v) in [
            ("saturation_factor", self.saturation_factor),
            ("half_sat_factor", self.half_sat_factor),
            ("coef_factor", self.coef_factor),
        ] {
            if !(v > 0.0) {
                return Err(format!("{name} must be positive"));
            }
        }
        Ok(())
    }
}

/// Model structure: variant, delay window, trend and seasonality terms,
/// priors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub variant: Variant,
    #[serde(default = "default_max_lag")]
    pub max_lag: usize,
    #[serde(default)]
    pub include_trend: bool,
    /// Number of Fourier pairs with a 52-week period.
    #[serde(default)]
    pub fourier_terms: usize,
    #[serde(default)]
    pub priors: PriorSpec,
}

fn default_max_lag() -> usize {
    DEFAULT_MAX_LAG
}

impl ModelSpec {
    pub fn new(variant: Variant) -> Self {
        Self {
            variant,
            max_lag: DEFAULT_MAX_LAG,
            include_trend: false,
            fourier_terms: 0,
            priors: PriorSpec::default(),
        }
    }

    pub fn with_max_lag(mut self, max_lag: usize) -> Self {
        self.max_lag = max_lag;
        self
    }
}
