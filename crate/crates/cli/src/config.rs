//! TOML run configuration.

use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use kinetic_mmm_core::dataset::{ChannelTruth, ColumnMapping, ControlTruth, GeneratorSpec};
use kinetic_mmm_core::funnel::Bounds;
use kinetic_mmm_core::inference::{ModelSpec, PriorSpec, SamplerConfig, Variant};
use kinetic_mmm_core::metrics::RegionThresholds;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub output_dir: PathBuf,
    pub plots: bool,
    pub data: Option<DataConfig>,
    pub model: ModelConfig,
    pub priors: PriorSpec,
    pub sampler: SamplerSection,
    pub generator: GeneratorConfig,
    pub funnel: FunnelConfig,
    pub report: ReportConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            output_dir: PathBuf::from("out"),
            plots: false,
            data: None,
            model: ModelConfig::default(),
            priors: PriorSpec::default(),
            sampler: SamplerSection::default(),
            generator: GeneratorConfig::default(),
            funnel: FunnelConfig::default(),
            report: ReportConfig::default(),
        }
    }
}

/// Dataset path plus the role of each column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub path: PathBuf,
    #[serde(default = "default_time_column")]
    pub time_column: String,
    pub media_columns: Vec<String>,
    #[serde(default)]
    pub control_columns: Vec<String>,
    pub response_column: String,
}

fn default_time_column() -> String {
    "date".into()
}

impl DataConfig {
    pub fn mapping(&self) -> ColumnMapping {
        ColumnMapping {
            time_column: self.time_column.clone(),
            media_columns: self.media_columns.clone(),
            control_columns: self.control_columns.clone(),
            response_column: self.response_column.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub variant: Variant,
    pub max_lag: usize,
    pub include_trend: bool,
    pub fourier_terms: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let s = ModelSpec::new(Variant::MmCarryover);
        Self {
            variant: s.variant,
            max_lag: s.max_lag,
            include_trend: s.include_trend,
            fourier_terms: s.fourier_terms,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerSection {
    pub chains: usize,
    pub warmup: usize,
    pub draws: usize,
    pub seed: u64,
    pub target_accept: f64,
    pub max_tree_depth: usize,
}

impl Default for SamplerSection {
    fn default() -> Self {
        let s = SamplerConfig::default();
        Self {
            chains: s.chains,
            warmup: s.warmup,
            draws: s.draws,
            seed: s.seed,
            target_accept: s.target_accept,
            max_tree_depth: s.max_tree_depth,
        }
    }
}

/// Synthetic data settings. Unset values fall back to the library's
/// defaults for the chosen dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub n_weeks: usize,
    pub n_channels: usize,
    pub n_controls: usize,
    pub seed: u64,
    pub noise_sd: Option<f64>,
    pub baseline: Option<f64>,
    pub pulse_density: Option<f64>,
    pub max_lag: Option<usize>,
    pub start_date: Option<NaiveDate>,
    pub response_name: Option<String>,
    /// Uniform collision coefficients applied to every channel.
    pub mix_a: Option<f64>,
    pub mix_b: Option<f64>,
    /// Full per-channel truth; overrides `n_channels`.
    pub channels: Option<Vec<ChannelTruth>>,
    /// Full per-control truth; overrides `n_controls`.
    pub controls: Option<Vec<ControlTruth>>,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        let g = GeneratorSpec::default();
        Self {
            n_weeks: g.n_weeks,
            n_channels: g.channels.len(),
            n_controls: g.controls.len(),
            seed: g.seed,
            noise_sd: None,
            baseline: None,
            pulse_density: None,
            max_lag: None,
            start_date: None,
            response_name: None,
            mix_a: None,
            mix_b: None,
            channels: None,
            controls: None,
        }
    }
}

impl GeneratorConfig {
    pub fn to_spec(&self, seed: Option<u64>) -> GeneratorSpec {
        let mut g = GeneratorSpec::with_dimensions(self.n_weeks, self.n_channels, self.n_controls, seed.unwrap_or(self.seed));
        if let Some(v) = self.noise_sd {
            g.noise_sd = v;
        }
        if let Some(v) = self.baseline {
            g.baseline = v;
        }
        if let Some(v) = self.pulse_density {
            g.pulse_density = v;
        }
        if let Some(v) = self.max_lag {
            g.max_lag = v;
        }
        if let Some(v) = self.start_date {
            g.start_date = v;
        }
        if let Some(v) = &self.response_name {
            g.response_name = v.clone();
        }
        if let Some(c) = &self.channels {
            g.channels = c.clone();
        }
        if let Some(c) = &self.controls {
            g.controls = c.clone();
        }
        if self.mix_a.is_some() || self.mix_b.is_some() {
            for c in &mut g.channels {
                c.mix_a = Some(self.mix_a.unwrap_or(1.0));
                c.mix_b = Some(self.mix_b.unwrap_or(0.0));
            }
        }
        g
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FunnelConfig {
    pub a_bounds: [f64; 2],
    pub b_bounds: [f64; 2],
}

impl Default for FunnelConfig {
    fn default() -> Self {
        let b = Bounds::default();
        Self {
            a_bounds: [b.a.0, b.a.1],
            b_bounds: [b.b.0, b.b.1],
        }
    }
}

impl FunnelConfig {
    pub fn bounds(&self) -> Bounds {
        Bounds {
            a: (self.a_bounds[0], self.a_bounds[1]),
            b: (self.b_bounds[0], self.b_bounds[1]),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportConfig {
    pub region_low: f64,
    pub region_high: f64,
}

impl Default for ReportConfig {
    fn default() -> Self {
        let t = RegionThresholds::default();
        Self {
            region_low: t.low,
            region_high: t.high,
        }
    }
}

impl ReportConfig {
    pub fn thresholds(&self) -> RegionThresholds {
        RegionThresholds {
            low: self.region_low,
            high: self.region_high,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::Config(format!("config: {}", e.message())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn model_spec(&self) -> ModelSpec {
        ModelSpec {
            variant: self.model.variant,
            max_lag: self.model.max_lag,
            include_trend: self.model.include_trend,
            fourier_terms: self.model.fourier_terms,
            priors: self.priors.clone(),
        }
    }

    pub fn sampler_config(&self) -> SamplerConfig {
        SamplerConfig {
            chains: self.sampler.chains,
            warmup: self.sampler.warmup,
            draws: self.sampler.draws,
            seed: self.sampler.seed,
            target_accept: self.sampler.target_accept,
            max_tree_depth: self.sampler.max_tree_depth,
            ..SamplerConfig::default()
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        self.priors.validate().map_err(|e| CliError::Config(format!("priors: {e}")))?;
        self.sampler_config()
            .validate()
            .map_err(|e| CliError::Config(format!("sampler: {e}")))?;
        if self.model.max_lag == 0 {
            return bad("model.max_lag must be at least 1".into());
        }
        self.funnel
            .bounds()
            .validate()
            .map_err(|e| CliError::Config(format!("funnel: {e}")))?;
        self.report
            .thresholds()
            .validate()
            .map_err(|e| CliError::Config(format!("report: {e}")))?;
        if let Some(d) = &self.data {
            if d.media_columns.is_empty() {
                return bad("data.media_columns must name at least one column".into());
            }
        }
        Ok(())
    }
}
