//! Joint log density of a media-mix model over its parameters.

use serde::{Deserialize, Serialize};

use super::nuts::LogDensity;
use super::prior::{Prior, Support};
use super::{InferenceError, ModelSpec, Variant};
use crate::dataset::{GroundTruth, ScaleInfo, TimeSeriesDataset};
use crate::transforms::lag_weights;

const LN_2PI: f64 = 1.837_877_066_409_345_5;
const SEASON_PERIOD: f64 = 52.0;

/// Role of a parameter in the mean function.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "index", rename_all = "snake_case")]
pub enum ParamKind {
    Baseline,
    Trend,
    SeasonCos(usize),
    SeasonSin(usize),
    ControlCoef(usize),
    NoiseSd,
    Decay(usize),
    Delay(usize),
    Coef(usize),
    Vmax(usize),
    Km(usize),
    HalfSat(usize),
    HillExponent(usize),
    HillScale(usize),
    MixA(usize),
    MixB(usize),
}

/// Physical unit of a parameter, for converting scaled values back.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "unit", content = "index", rename_all = "snake_case")]
pub enum Unit {
    Dimensionless,
    Response,
    /// Spend units of channel m.
    Spend(usize),
    /// Response per unit spend of channel m.
    ResponsePerSpend(usize),
    /// Response per unit of control c.
    ResponsePerControl(usize),
}

impl Unit {
    pub fn factor(&self, scale: &ScaleInfo) -> f64 {
        match *self {
            Unit::Dimensionless => 1.0,
            Unit::Response => scale.response_scale,
            Unit::Spend(m) => scale.media_scale[m],
            Unit::ResponsePerSpend(m) => scale.response_scale / scale.media_scale[m],
            Unit::ResponsePerControl(c) => scale.response_scale / scale.control_scale[c],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamInfo {
    pub name: String,
    pub kind: ParamKind,
    pub prior: Prior,
    pub support: Support,
    pub unit: Unit,
}

/// Saturation stage of a channel's chain, with parameter slots.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ChannelTransform {
    Linear { coef: usize },
    MichaelisMenten { vmax: usize, km: usize },
    Hill { half_sat: usize, exponent: usize, scale: usize },
}

#[derive(Debug, Clone)]
struct ChannelSlots {
    decay: usize,
    delay: Option<usize>,
    saturation: ChannelTransform,
    mix: Option<(usize, usize)>,
}

#[derive(Debug, Clone)]
struct Layout {
    baseline: usize,
    trend: Option<usize>,
    /// (cos, sin) slot pairs.
    season: Vec<(usize, usize)>,
    controls: Vec<usize>,
    noise: usize,
    channels: Vec<ChannelSlots>,
}

/// Additive pieces of the mean function, scaled units.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanComponents {
    pub baseline: f64,
    pub trend: Vec<f64>,
    pub seasonality: Vec<f64>,
    /// One column per control variable.
    pub controls: Vec<Vec<f64>>,
    /// One column per channel.
    pub contributions: Vec<Vec<f64>>,
}

impl MeanComponents {
    pub fn total(&self) -> Vec<f64> {
        let n = self.trend.len();
        (0..n)
            .map(|t| {
                self.baseline
                    + self.trend[t]
                    + self.seasonality[t]
                    + self.controls.iter().map(|c| c[t]).sum::<f64>()
                    + self.contributions.iter().map(|c| c[t]).sum::<f64>()
            })
            .collect()
    }
}

/// Evaluable posterior for one model variant on one scaled dataset.
#[derive(Debug, Clone)]
pub struct Model {
    spec: ModelSpec,
    scale: ScaleInfo,
    media: Vec<Vec<f64>>,
    controls: Vec<Vec<f64>>,
    response: Vec<f64>,
    trend_x: Vec<f64>,
    /// (cos, sin) basis columns per Fourier term.
    season_basis: Vec<(Vec<f64>, Vec<f64>)>,
    params: Vec<ParamInfo>,
    layout: Layout,
    channel_names: Vec<String>,
    control_names: Vec<String>,
    likelihood_enabled: bool,
}

/// Build the joint density for `spec` over a dataset already divided by
/// `scale` (see [`crate::dataset::scale_dataset`]).
pub fn build_model(scaled: &TimeSeriesDataset, scale: &ScaleInfo, spec: &ModelSpec) -> Result<Model, InferenceError> {
    Model::new(scaled, scale, spec)
}

impl Model {
    pub fn new(scaled: &TimeSeriesDataset, scale: &ScaleInfo, spec: &ModelSpec) -> Result<Self, InferenceError> {
        let m = scaled.n_channels();
        let n = scaled.n_weeks();
        if m == 0 {
            return Err(InferenceError::SpecMismatch("at least one media channel is required".into()));
        }
        if spec.variant == Variant::MmBoltzmann && m < 2 {
            return Err(InferenceError::SpecMismatch(
                "mm_boltzmann needs at least two channels to mix".into(),
            ));
        }
        if spec.max_lag == 0 {
            return Err(InferenceError::SpecMismatch("max_lag must be at least 1".into()));
        }
        if n < 2 * spec.max_lag {
            return Err(InferenceError::SpecMismatch(format!(
                "{n} weeks is fewer than twice max_lag = {}",
                spec.max_lag
            )));
        }
        if scale.media_scale.len() != m || scale.control_scale.len() != scaled.n_controls() {
            return Err(InferenceError::SpecMismatch("scale info does not match dataset shape".into()));
        }
        spec.priors.validate().map_err(InferenceError::SpecMismatch)?;

        let pr = &spec.priors;
        let mut params = Vec::new();
        let mut push = |name: String, kind: ParamKind, prior: Prior, unit: Unit, support: Option<Support>| {
            params.push(ParamInfo {
                name,
                kind,
                support: support.unwrap_or_else(|| prior.support()),
                prior,
                unit,
            });
            params.len() - 1
        };

        let baseline = push("baseline".into(), ParamKind::Baseline, pr.baseline, Unit::Response, None);
        let trend = spec
            .include_trend
            .then(|| push("trend".into(), ParamKind::Trend, pr.trend, Unit::Response, None));
        let season = (0..spec.fourier_terms)
            .map(|k| {
                let c = push(format!("season_cos[{}]", k + 1), ParamKind::SeasonCos(k), pr.seasonality, Unit::Response, None);
                let s = push(format!("season_sin[{}]", k + 1), ParamKind::SeasonSin(k), pr.seasonality, Unit::Response, None);
                (c, s)
            })
            .collect();
        let controls = scaled
            .control_names()
            .iter()
            .enumerate()
            .map(|(c, name)| push(format!("gamma[{name}]"), ParamKind::ControlCoef(c), pr.control_coef, Unit::ResponsePerControl(c), None))
            .collect();
        let noise = push(
            "sigma".into(),
            ParamKind::NoiseSd,
            pr.noise_sd,
            Unit::Response,
            Some(if pr.noise_floor > 0.0 {
                Support::LowerBounded(pr.noise_floor)
            } else {
                pr.noise_sd.support()
            }),
        );

        let y_mean = mean(scaled.response());
        let delay_upper = pr.delay_upper.unwrap_or(3.0).min((spec.max_lag - 1) as f64);
        let decay_name = if spec.variant.uses_carryover() { "retention" } else { "alpha" };
        let channels = scaled
            .channel_names()
            .iter()
            .enumerate()
            .map(|(m, name)| {
                let x_mean = mean(scaled.media_column(m));
                let x_mean = if x_mean > 0.0 { x_mean } else { 1.0 };
                let decay = push(format!("{decay_name}[{name}]"), ParamKind::Decay(m), pr.decay, Unit::Dimensionless, None);
                let delay = (delay_upper > 0.0).then(|| {
                    push(
                        format!("delay[{name}]"),
                        ParamKind::Delay(m),
                        Prior::Uniform { lower: 0.0, upper: delay_upper },
                        Unit::Dimensionless,
                        None,
                    )
                });
                let sat_prior = Prior::half_normal(pr.saturation_factor * y_mean);
                let half_prior = Prior::half_normal(pr.half_sat_factor * x_mean);
                let saturation = match spec.variant {
                    Variant::Adstock | Variant::Carryover => ChannelTransform::Linear {
                        coef: push(
                            format!("coef[{name}]"),
                            ParamKind::Coef(m),
                            Prior::half_normal(pr.coef_factor * y_mean / x_mean),
                            Unit::ResponsePerSpend(m),
                            None,
                        ),
                    },
                    Variant::HillAdstock => ChannelTransform::Hill {
                        half_sat: push(format!("half_sat[{name}]"), ParamKind::HalfSat(m), half_prior, Unit::Spend(m), None),
                        exponent: push(format!("hill_n[{name}]"), ParamKind::HillExponent(m), pr.hill_exponent, Unit::Dimensionless, None),
                        scale: push(format!("hill_scale[{name}]"), ParamKind::HillScale(m), sat_prior, Unit::Response, None),
                    },
                    Variant::MmAdstock | Variant::MmCarryover | Variant::MmBoltzmann => ChannelTransform::MichaelisMenten {
                        vmax: push(format!("vmax[{name}]"), ParamKind::Vmax(m), sat_prior, Unit::Response, None),
                        km: push(format!("km[{name}]"), ParamKind::Km(m), half_prior, Unit::Spend(m), None),
                    },
                };
                let mix = (spec.variant == Variant::MmBoltzmann).then(|| {
                    (
                        push(format!("mix_a[{name}]"), ParamKind::MixA(m), pr.mix_a, Unit::Dimensionless, None),
                        push(format!("mix_b[{name}]"), ParamKind::MixB(m), pr.mix_b, Unit::Dimensionless, None),
                    )
                });
                ChannelSlots {
                    decay,
                    delay,
                    saturation,
                    mix,
                }
            })
            .collect();

        let trend_x = (0..n).map(|t| t as f64 / (n - 1).max(1) as f64).collect();
        let season_basis = (1..=spec.fourier_terms)
            .map(|k| {
                let w = 2.0 * std::f64::consts::PI * k as f64 / SEASON_PERIOD;
                (
                    (0..n).map(|t| (w * t as f64).cos()).collect(),
                    (0..n).map(|t| (w * t as f64).sin()).collect(),
                )
            })
            .collect();

        Ok(Self {
            spec: spec.clone(),
            scale: scale.clone(),
            media: scaled.media().to_vec(),
            controls: scaled.controls().to_vec(),
            response: scaled.response().to_vec(),
            trend_x,
            season_basis,
            params,
            layout: Layout {
                baseline,
                trend,
                season,
                controls,
                noise,
                channels,
            },
            channel_names: scaled.channel_names().to_vec(),
            control_names: scaled.control_names().to_vec(),
            likelihood_enabled: true,
        })
    }

    /// Same model with the likelihood switched off, so the density is the
    /// prior alone.
    pub fn prior_only(mut self) -> Self {
        self.likelihood_enabled = false;
        self
    }

    /// Same structure evaluated on another scaled dataset with the same
    /// channels and controls.
    pub fn with_data(&self, scaled: &TimeSeriesDataset) -> Result<Self, InferenceError> {
        if scaled.channel_names() != self.channel_names.as_slice() || scaled.control_names() != self.control_names.as_slice() {
            return Err(InferenceError::ChannelMismatch(format!(
                "expected channels {:?} and controls {:?}",
                self.channel_names, self.control_names
            )));
        }
        let mut m = Self::new(scaled, &self.scale, &self.spec)?;
        // Priors stay those of the original fit.
        m.params = self.params.clone();
        m.likelihood_enabled = self.likelihood_enabled;
        Ok(m)
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn scale(&self) -> &ScaleInfo {
        &self.scale
    }

    pub fn params(&self) -> &[ParamInfo] {
        &self.params
    }

    pub fn param_names(&self) -> Vec<String> {
        self.params.iter().map(|p| p.name.clone()).collect()
    }

    pub fn param_index(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn n_weeks(&self) -> usize {
        self.response.len()
    }

    pub fn channel_names(&self) -> &[String] {
        &self.channel_names
    }

    pub fn control_names(&self) -> &[String] {
        &self.control_names
    }

    pub fn response(&self) -> &[f64] {
        &self.response
    }

    pub fn channel_transform(&self, m: usize) -> ChannelTransform {
        self.layout.channels[m].saturation
    }

    pub fn in_domain(&self, theta: &[f64]) -> bool {
        theta.len() == self.params.len() && self.params.iter().zip(theta).all(|(p, &x)| p.support.contains(x))
    }

    /// Map unconstrained coordinates to parameter values.
    pub fn constrain(&self, u: &[f64]) -> Vec<f64> {
        self.params.iter().zip(u).map(|(p, &v)| p.support.from_unconstrained(v).0).collect()
    }

    pub fn unconstrain(&self, theta: &[f64]) -> Vec<f64> {
        self.params.iter().zip(theta).map(|(p, &v)| p.support.to_unconstrained(v)).collect()
    }

    /// Per-channel delay-window output (before mixing and saturation).
    fn windows(&self, theta: &[f64], grads: bool) -> Vec<Window> {
        self.layout
            .channels
            .iter()
            .zip(&self.media)
            .map(|(slots, x)| {
                let base = theta[slots.decay];
                let delta = slots.delay.map_or(0.0, |i| theta[i]);
                Window::compute(x, base, delta, self.spec.max_lag, grads)
            })
            .collect()
    }

    /// Mixed inputs per channel, plus the per-week total window output in
    /// original spend units. Mixing happens in spend units so the scaling
    /// of each channel does not change its meaning.
    fn mix_inputs(&self, theta: &[f64], windows: &[Window]) -> Option<(Vec<Vec<f64>>, Vec<f64>)> {
        if self.spec.variant != Variant::MmBoltzmann {
            return None;
        }
        let n = self.n_weeks();
        let c = &self.scale.media_scale;
        let totals: Vec<f64> = (0..n).map(|t| windows.iter().zip(c).map(|(w, s)| s * w.value[t]).sum()).collect();
        let mixed = self
            .layout
            .channels
            .iter()
            .zip(windows)
            .zip(c)
            .map(|((slots, w), &ci)| {
                let (ia, ib) = slots.mix.expect("boltzmann slots");
                let (a, b) = (theta[ia], theta[ib]);
                (0..n).map(|t| a * w.value[t] + b * (totals[t] / ci - w.value[t])).collect()
            })
            .collect();
        Some((mixed, totals))
    }

    /// Mean function split into its additive components, scaled units.
    pub fn components(&self, theta: &[f64]) -> MeanComponents {
        let n = self.n_weeks();
        let lay = &self.layout;
        let windows = self.windows(theta, false);
        let mixed = self.mix_inputs(theta, &windows);
        let contributions = lay
            .channels
            .iter()
            .enumerate()
            .map(|(m, slots)| {
                let input = match &mixed {
                    Some((cols, _)) => &cols[m],
                    None => &windows[m].value,
                };
                input.iter().map(|&u| saturate(slots.saturation, theta, u).value).collect()
            })
            .collect();
        let trend = match lay.trend {
            Some(i) => self.trend_x.iter().map(|&t| theta[i] * t).collect(),
            None => vec![0.0; n],
        };
        let mut seasonality = vec![0.0; n];
        for (&(ic, is), (bc, bs)) in lay.season.iter().zip(&self.season_basis) {
            for t in 0..n {
                seasonality[t] += theta[ic] * bc[t] + theta[is] * bs[t];
            }
        }
        let controls = lay
            .controls
            .iter()
            .zip(&self.controls)
            .map(|(&i, z)| z.iter().map(|&v| theta[i] * v).collect())
            .collect();
        MeanComponents {
            baseline: theta[lay.baseline],
            trend,
            seasonality,
            controls,
            contributions,
        }
    }

    pub fn mean(&self, theta: &[f64]) -> Vec<f64> {
        self.components(theta).total()
    }

    pub fn log_prior(&self, theta: &[f64]) -> f64 {
        self.params.iter().zip(theta).map(|(p, &x)| p.prior.ln_pdf(x)).sum()
    }

    /// Gaussian log likelihood `-(n/2) log(2 pi sigma^2) - SSE / (2 sigma^2)`.
    pub fn log_likelihood(&self, theta: &[f64]) -> f64 {
        if !self.likelihood_enabled {
            return 0.0;
        }
        let sigma = theta[self.layout.noise];
        let sse: f64 = self.mean(theta).iter().zip(&self.response).map(|(m, y)| (y - m).powi(2)).sum();
        gaussian_log_likelihood(self.response.len(), sigma, sse)
    }

    /// Log prior plus log likelihood at constrained parameters; `-inf` when
    /// any parameter is outside its support.
    pub fn log_posterior(&self, theta: &[f64]) -> f64 {
        if !self.in_domain(theta) {
            return f64::NEG_INFINITY;
        }
        let lp = self.log_prior(theta) + self.log_likelihood(theta);
        if lp.is_nan() {
            f64::NEG_INFINITY
        } else {
            lp
        }
    }

    /// Log posterior and its gradient at constrained parameters.
    pub fn log_posterior_grad(&self, theta: &[f64], grad: &mut [f64]) -> f64 {
        grad.iter_mut().for_each(|g| *g = 0.0);
        if !self.in_domain(theta) {
            return f64::NEG_INFINITY;
        }
        let mut lp = 0.0;
        for ((p, &x), g) in self.params.iter().zip(theta).zip(grad.iter_mut()) {
            let (v, d) = p.prior.ln_pdf_grad(x);
            lp += v;
            *g += d;
        }
        if self.likelihood_enabled {
            lp += self.likelihood_grad(theta, grad);
        }
        if lp.is_nan() {
            f64::NEG_INFINITY
        } else {
            lp
        }
    }

    /// Adds the likelihood gradient into `grad` and returns the likelihood.
    fn likelihood_grad(&self, theta: &[f64], grad: &mut [f64]) -> f64 {
        let n = self.n_weeks();
        let lay = &self.layout;
        let windows = self.windows(theta, true);
        let mixed = self.mix_inputs(theta, &windows);

        // Forward pass, keeping d(contribution)/d(input) per channel.
        let mut mean = vec![theta[lay.baseline]; n];
        let mut sat_local: Vec<Vec<Saturated>> = Vec::with_capacity(lay.channels.len());
        for (m, slots) in lay.channels.iter().enumerate() {
            let input = match &mixed {
                Some((cols, _)) => &cols[m],
                None => &windows[m].value,
            };
            let s: Vec<Saturated> = input.iter().map(|&u| saturate(slots.saturation, theta, u)).collect();
            for (mt, v) in mean.iter_mut().zip(&s) {
                *mt += v.value;
            }
            sat_local.push(s);
        }
        if let Some(i) = lay.trend {
            for (mt, x) in mean.iter_mut().zip(&self.trend_x) {
                *mt += theta[i] * x;
            }
        }
        for (&(ic, is), (bc, bs)) in lay.season.iter().zip(&self.season_basis) {
            for t in 0..n {
                mean[t] += theta[ic] * bc[t] + theta[is] * bs[t];
            }
        }
        for (&i, z) in lay.controls.iter().zip(&self.controls) {
            for (mt, v) in mean.iter_mut().zip(z) {
                *mt += theta[i] * v;
            }
        }

        let sigma = theta[lay.noise];
        let resid: Vec<f64> = self.response.iter().zip(&mean).map(|(y, m)| y - m).collect();
        let sse: f64 = resid.iter().map(|r| r * r).sum();
        let ll = gaussian_log_likelihood(n, sigma, sse);
        let inv_var = 1.0 / (sigma * sigma);
        let g: Vec<f64> = resid.iter().map(|r| r * inv_var).collect();

        grad[lay.noise] += -(n as f64) / sigma + sse / (sigma * sigma * sigma);
        grad[lay.baseline] += g.iter().sum::<f64>();
        if let Some(i) = lay.trend {
            grad[i] += dot(&g, &self.trend_x);
        }
        for (&(ic, is), (bc, bs)) in lay.season.iter().zip(&self.season_basis) {
            grad[ic] += dot(&g, bc);
            grad[is] += dot(&g, bs);
        }
        for (&i, z) in lay.controls.iter().zip(&self.controls) {
            grad[i] += dot(&g, z);
        }

        // Back through saturation: gradient w.r.t. each channel's input.
        let mut g_input: Vec<Vec<f64>> = Vec::with_capacity(lay.channels.len());
        for (slots, s) in lay.channels.iter().zip(&sat_local) {
            let mut gi = vec![0.0; n];
            for t in 0..n {
                let st = &s[t];
                match slots.saturation {
                    ChannelTransform::Linear { coef } => grad[coef] += g[t] * st.d1,
                    ChannelTransform::MichaelisMenten { vmax, km } => {
                        grad[vmax] += g[t] * st.d1;
                        grad[km] += g[t] * st.d2;
                    }
                    ChannelTransform::Hill { half_sat, exponent, scale } => {
                        grad[half_sat] += g[t] * st.d2;
                        grad[exponent] += g[t] * st.d3;
                        grad[scale] += g[t] * st.d1;
                    }
                }
                gi[t] = g[t] * st.d_input;
            }
            g_input.push(gi);
        }

        // Back through the collision mix.
        let g_window = match &mixed {
            None => g_input,
            Some((_, totals)) => {
                let c = &self.scale.media_scale;
                // sum_i b_i g_i / c_i
                let b_weighted: Vec<f64> = (0..n)
                    .map(|t| {
                        lay.channels
                            .iter()
                            .zip(&g_input)
                            .zip(c)
                            .map(|((slots, gi), ci)| theta[slots.mix.expect("mix").1] * gi[t] / ci)
                            .sum()
                    })
                    .collect();
                lay.channels
                    .iter()
                    .zip(&g_input)
                    .zip(&windows)
                    .zip(c)
                    .map(|(((slots, gi), w), &ck)| {
                        let (ia, ib) = slots.mix.expect("mix");
                        let (a, b) = (theta[ia], theta[ib]);
                        let mut gw = vec![0.0; n];
                        for t in 0..n {
                            grad[ia] += gi[t] * w.value[t];
                            grad[ib] += gi[t] * (totals[t] / ck - w.value[t]);
                            gw[t] = a * gi[t] + ck * b_weighted[t] - b * gi[t];
                        }
                        gw
                    })
                    .collect()
            }
        };

        // Back through the delay windows.
        for ((slots, w), gw) in lay.channels.iter().zip(&windows).zip(&g_window) {
            grad[slots.decay] += dot(gw, &w.d_base);
            if let Some(i) = slots.delay {
                grad[i] += dot(gw, &w.d_delta);
            }
        }
        ll
    }

    /// Parameter vector matching a generator's ground truth, in scaled
    /// units. Supports the saturating carryover variants the generator
    /// simulates; `mm_boltzmann` uses identity mixing when the truth has none.
    pub fn params_from_truth(&self, truth: &GroundTruth) -> Result<Vec<f64>, InferenceError> {
        let spec = &truth.spec;
        let mismatch = |msg: &str| Err(InferenceError::SpecMismatch(msg.to_string()));
        if !matches!(self.spec.variant, Variant::MmCarryover | Variant::MmBoltzmann) {
            return mismatch("ground truth maps only onto mm_carryover or mm_boltzmann");
        }
        if spec.channels.len() != self.channel_names.len() || spec.controls.len() != self.control_names.len() {
            return mismatch("ground truth dimensions differ from the model");
        }
        let has_mix = spec.channels.iter().any(|c| c.mix_a.is_some() || c.mix_b.is_some());
        if has_mix && self.spec.variant != Variant::MmBoltzmann {
            return mismatch("ground truth has mixing; use mm_boltzmann");
        }
        let sc = &self.scale;
        let rs = sc.response_scale;
        let mut theta = vec![0.0; self.params.len()];
        let lay = &self.layout;
        theta[lay.baseline] = spec.baseline / rs;
        theta[lay.noise] = (spec.noise_sd / rs).max(2.0 * self.spec.priors.noise_floor).max(1e-6);
        if let Some(i) = lay.trend {
            theta[i] = 0.0;
        }
        for (c, &i) in lay.controls.iter().enumerate() {
            theta[i] = spec.controls[c].coef * sc.control_scale[c] / rs;
        }
        for (m, (slots, ch)) in lay.channels.iter().zip(&spec.channels).enumerate() {
            theta[slots.decay] = ch.retention;
            match slots.delay {
                // Open supports: nudge boundary truths just inside.
                Some(i) => theta[i] = ch.delay.max(1e-12),
                None if ch.delay != 0.0 => return mismatch("model has no delay parameter but truth does"),
                None => {}
            }
            if let ChannelTransform::MichaelisMenten { vmax, km } = slots.saturation {
                theta[vmax] = ch.vmax / rs;
                theta[km] = ch.km / sc.media_scale[m];
            }
            if let Some((ia, ib)) = slots.mix {
                theta[ia] = ch.mix_a.unwrap_or(1.0).min(1.0 - 1e-12);
                theta[ib] = ch.mix_b.unwrap_or(0.0).max(1e-12);
            }
        }
        Ok(theta)
    }
}

impl LogDensity for Model {
    fn dim(&self) -> usize {
        self.params.len()
    }

    fn log_density_grad(&self, u: &[f64], grad: &mut [f64]) -> f64 {
        let mut theta = Vec::with_capacity(u.len());
        let mut dx = Vec::with_capacity(u.len());
        let mut log_jac = 0.0;
        let mut dlogj = Vec::with_capacity(u.len());
        for (p, &v) in self.params.iter().zip(u) {
            let (x, dxdu, dl) = p.support.from_unconstrained(v);
            theta.push(x);
            dx.push(dxdu);
            dlogj.push(dl);
            log_jac += p.support.log_jacobian(v);
        }
        let lp = self.log_posterior_grad(&theta, grad);
        if !lp.is_finite() {
            return f64::NEG_INFINITY;
        }
        for i in 0..grad.len() {
            grad[i] = grad[i] * dx[i] + dlogj[i];
        }
        lp + log_jac
    }
}

pub(crate) fn gaussian_log_likelihood(n: usize, sigma: f64, sse: f64) -> f64 {
    -(n as f64) / 2.0 * (LN_2PI + 2.0 * sigma.ln()) - sse / (2.0 * sigma * sigma)
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Delay-window output and its derivatives with respect to the weight base
/// and the peak delay.
struct Window {
    value: Vec<f64>,
    d_base: Vec<f64>,
    d_delta: Vec<f64>,
}

impl Window {
    fn compute(x: &[f64], base: f64, delta: f64, max_lag: usize, grads: bool) -> Self {
        let w = lag_weights(base, delta, max_lag);
        let n = x.len();
        let mut value = vec![0.0; n];
        if !grads {
            for t in 0..n {
                let lags = max_lag.min(t + 1);
                let (mut num, mut den) = (0.0, 0.0);
                for l in 0..lags {
                    num += w[l] * x[t - l];
                    den += w[l];
                }
                value[t] = num / den;
            }
            return Self {
                value,
                d_base: Vec::new(),
                d_delta: Vec::new(),
            };
        }
        let ln_base = base.ln();
        let dw_base: Vec<f64> = (0..max_lag)
            .map(|l| {
                let d = l as f64 - delta;
                w[l] * d * d / base
            })
            .collect();
        let dw_delta: Vec<f64> = (0..max_lag).map(|l| -2.0 * (l as f64 - delta) * ln_base * w[l]).collect();
        let mut d_base = vec![0.0; n];
        let mut d_delta = vec![0.0; n];
        for t in 0..n {
            let lags = max_lag.min(t + 1);
            let (mut num, mut den, mut nb, mut db, mut nd, mut dd) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
            for l in 0..lags {
                let xv = x[t - l];
                num += w[l] * xv;
                den += w[l];
                nb += dw_base[l] * xv;
                db += dw_base[l];
                nd += dw_delta[l] * xv;
                dd += dw_delta[l];
            }
            let s = num / den;
            value[t] = s;
            d_base[t] = (nb - s * db) / den;
            d_delta[t] = (nd - s * dd) / den;
        }
        Self { value, d_base, d_delta }
    }
}

/// Saturated value and local derivatives: `d1`/`d2`/`d3` are with respect
/// to the stage's parameters (coef; vmax, km; scale, half_sat, exponent),
/// `d_input` with respect to the input.
struct Saturated {
    value: f64,
    d1: f64,
    d2: f64,
    d3: f64,
    d_input: f64,
}

fn saturate(stage: ChannelTransform, theta: &[f64], u: f64) -> Saturated {
    match stage {
        ChannelTransform::Linear { coef } => {
            let b = theta[coef];
            Saturated {
                value: b * u,
                d1: u,
                d2: 0.0,
                d3: 0.0,
                d_input: b,
            }
        }
        ChannelTransform::MichaelisMenten { vmax, km } => {
            let (v, k) = (theta[vmax], theta[km]);
            let den = u + k;
            Saturated {
                value: v * u / den,
                d1: u / den,
                d2: -v * u / (den * den),
                d3: 0.0,
                d_input: v * k / (den * den),
            }
        }
        ChannelTransform::Hill { half_sat, exponent, scale } => {
            let (k, nexp, s) = (theta[half_sat], theta[exponent], theta[scale]);
            if u <= 0.0 {
                return Saturated {
                    value: 0.0,
                    d1: 0.0,
                    d2: 0.0,
                    d3: 0.0,
                    d_input: 0.0,
                };
            }
            let ratio = u / k;
            let r = ratio.powf(nexp);
            let frac = r / (1.0 + r);
            let dh_dr = s / ((1.0 + r) * (1.0 + r));
            Saturated {
                value: s * frac,
                d1: frac,
                d2: dh_dr * (-nexp * r / k),
                d3: dh_dr * r * ratio.ln(),
                d_input: dh_dr * nexp * r / u,
            }
        }
    }
}
