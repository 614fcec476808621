//! Posterior draws and everything computed from them.

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use super::diagnostics::{ess, mean, quantile_sorted, split_rhat, var};
use super::model::{Model, ParamInfo};
use super::{build_model, InferenceError, ModelSpec, RHAT_THRESHOLD};
use crate::dataset::{ScaleInfo, TimeSeriesDataset};

/// Per-chain sampler behaviour over the kept draws.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerStats {
    pub step_size: f64,
    pub divergences: usize,
    pub mean_accept_stat: f64,
    pub mean_tree_depth: f64,
}

/// Draws indexed `[chain][draw][param]`, constrained and in scaled units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorDraws {
    pub spec: ModelSpec,
    pub scale: ScaleInfo,
    pub channel_names: Vec<String>,
    pub control_names: Vec<String>,
    pub params: Vec<ParamInfo>,
    pub draws: Vec<Vec<Vec<f64>>>,
    #[serde(with = "nonfinite")]
    pub rhat: Vec<f64>,
    #[serde(with = "nonfinite")]
    pub ess: Vec<f64>,
    pub stats: Vec<SamplerStats>,
}

impl PosteriorDraws {
    pub fn new(model: &Model, draws: Vec<Vec<Vec<f64>>>, stats: Vec<SamplerStats>) -> Self {
        let params = model.params().to_vec();
        let mut out = Self {
            spec: model.spec().clone(),
            scale: model.scale().clone(),
            channel_names: model.channel_names().to_vec(),
            control_names: model.control_names().to_vec(),
            params,
            draws,
            rhat: Vec::new(),
            ess: Vec::new(),
            stats,
        };
        out.refresh_diagnostics();
        out
    }

    /// Every draw of every chain equal to `theta`.
    pub fn point_mass(model: &Model, theta: &[f64], chains: usize, draws: usize) -> Self {
        let stats = SamplerStats {
            step_size: 0.0,
            divergences: 0,
            mean_accept_stat: 1.0,
            mean_tree_depth: 0.0,
        };
        Self::new(model, vec![vec![theta.to_vec(); draws]; chains], vec![stats; chains])
    }

    pub fn refresh_diagnostics(&mut self) {
        let k = self.params.len();
        self.rhat = (0..k).map(|i| split_rhat(&self.chains_of(i))).collect();
        self.ess = (0..k).map(|i| ess(&self.chains_of(i))).collect();
    }

    pub fn n_chains(&self) -> usize {
        self.draws.len()
    }

    pub fn n_draws(&self) -> usize {
        self.draws.first().map_or(0, Vec::len)
    }

    pub fn param_names(&self) -> Vec<String> {
        self.params.iter().map(|p| p.name.clone()).collect()
    }

    pub fn param_index(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    /// `[chain][draw]` values of parameter `i`, scaled units.
    pub fn chains_of(&self, i: usize) -> Vec<Vec<f64>> {
        self.draws.iter().map(|c| c.iter().map(|d| d[i]).collect()).collect()
    }

    /// Pooled draws of parameter `i` in original units.
    pub fn values(&self, i: usize) -> Vec<f64> {
        let f = self.params[i].unit.factor(&self.scale);
        self.draws.iter().flatten().map(|d| d[i] * f).collect()
    }

    pub fn iter_draws(&self) -> impl Iterator<Item = &Vec<f64>> {
        self.draws.iter().flatten()
    }

    /// True when every R-hat is finite and at most the threshold.
    pub fn converged(&self) -> bool {
        self.rhat.iter().all(|r| r.is_finite() && *r <= RHAT_THRESHOLD)
    }

    /// Names of parameters whose R-hat fails the threshold.
    pub fn unconverged_params(&self) -> Vec<String> {
        self.params
            .iter()
            .zip(&self.rhat)
            .filter(|(_, r)| !(r.is_finite() && **r <= RHAT_THRESHOLD))
            .map(|(p, _)| p.name.clone())
            .collect()
    }

    /// Model for `ds` with this fit's structure. `ds` is in original units.
    pub fn model_for(&self, ds: &TimeSeriesDataset) -> Result<Model, InferenceError> {
        if ds.channel_names() != self.channel_names.as_slice() || ds.control_names() != self.control_names.as_slice() {
            return Err(InferenceError::ChannelMismatch(format!(
                "fit has channels {:?} and controls {:?}, dataset has {:?} and {:?}",
                self.channel_names,
                self.control_names,
                ds.channel_names(),
                ds.control_names()
            )));
        }
        let scaled = self.scale.apply(ds)?;
        let model = build_model(&scaled, &self.scale, &self.spec)?;
        if model.param_names() != self.param_names() {
            return Err(InferenceError::ChannelMismatch("parameter layout differs from the fit".into()));
        }
        Ok(model)
    }
}

/// Posterior mean and central 90% predictive interval, original units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub mean: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

/// Evaluate the mean function for every draw. The interval holds the 5% and
/// 95% quantiles of the posterior predictive (a mixture of Gaussians, one
/// per draw).
pub fn predict(draws: &PosteriorDraws, ds: &TimeSeriesDataset) -> Result<Prediction, InferenceError> {
    let model = draws.model_for(ds)?;
    let n = model.n_weeks();
    let noise = draws
        .params
        .iter()
        .position(|p| p.kind == super::ParamKind::NoiseSd)
        .expect("noise parameter");
    let means: Vec<Vec<f64>> = draws.iter_draws().map(|theta| model.mean(theta)).collect();
    let sds: Vec<f64> = draws.iter_draws().map(|theta| theta[noise]).collect();
    let rs = draws.scale.response_scale;
    let d = means.len() as f64;
    let mut out = Prediction {
        mean: Vec::with_capacity(n),
        lower: Vec::with_capacity(n),
        upper: Vec::with_capacity(n),
    };
    for t in 0..n {
        let mu: Vec<f64> = means.iter().map(|m| m[t]).collect();
        out.mean.push(mu.iter().sum::<f64>() / d * rs);
        out.lower.push(mixture_quantile(&mu, &sds, 0.05) * rs);
        out.upper.push(mixture_quantile(&mu, &sds, 0.95) * rs);
    }
    Ok(out)
}

fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

fn mixture_quantile(mu: &[f64], sd: &[f64], p: f64) -> f64 {
    let cdf = |x: f64| mu.iter().zip(sd).map(|(m, s)| normal_cdf((x - m) / s)).sum::<f64>() / mu.len() as f64;
    let width = sd.iter().cloned().fold(0.0, f64::max) * 10.0;
    let mut lo = mu.iter().cloned().fold(f64::INFINITY, f64::min) - width;
    let mut hi = mu.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + width;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if cdf(mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Per-channel contribution columns `v[m][t]`, original response units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContributionMatrix {
    pub channel_names: Vec<String>,
    pub values: Vec<Vec<f64>>,
}

impl ContributionMatrix {
    pub fn n_weeks(&self) -> usize {
        self.values.first().map_or(0, Vec::len)
    }

    pub fn channel(&self, name: &str) -> Option<&[f64]> {
        self.channel_names.iter().position(|c| c == name).map(|m| self.values[m].as_slice())
    }

    pub fn totals(&self) -> Vec<f64> {
        self.values.iter().map(|c| c.iter().sum()).collect()
    }
}

/// Posterior-mean decomposition of the response, original units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decomposition {
    pub baseline: Vec<f64>,
    pub trend: Vec<f64>,
    pub seasonality: Vec<f64>,
    pub control_names: Vec<String>,
    pub controls: Vec<Vec<f64>>,
    pub contributions: ContributionMatrix,
    /// Posterior-mean prediction, equal to the sum of all other columns.
    pub prediction: Vec<f64>,
}

impl Decomposition {
    pub fn n_weeks(&self) -> usize {
        self.prediction.len()
    }

    /// Sum of every component column at week `t`.
    pub fn component_sum(&self, t: usize) -> f64 {
        self.baseline[t]
            + self.trend[t]
            + self.seasonality[t]
            + self.controls.iter().map(|c| c[t]).sum::<f64>()
            + self.contributions.values.iter().map(|c| c[t]).sum::<f64>()
    }
}

pub fn decompose(draws: &PosteriorDraws, ds: &TimeSeriesDataset) -> Result<Decomposition, InferenceError> {
    let model = draws.model_for(ds)?;
    let n = model.n_weeks();
    let m = draws.channel_names.len();
    let c = draws.control_names.len();
    let mut baseline = 0.0;
    let mut trend = vec![0.0; n];
    let mut season = vec![0.0; n];
    let mut controls = vec![vec![0.0; n]; c];
    let mut contrib = vec![vec![0.0; n]; m];
    let mut count = 0.0;
    for theta in draws.iter_draws() {
        let comp = model.components(theta);
        baseline += comp.baseline;
        accumulate(&mut trend, &comp.trend);
        accumulate(&mut season, &comp.seasonality);
        for (acc, col) in controls.iter_mut().zip(&comp.controls) {
            accumulate(acc, col);
        }
        for (acc, col) in contrib.iter_mut().zip(&comp.contributions) {
            accumulate(acc, col);
        }
        count += 1.0;
    }
    let rs = draws.scale.response_scale;
    let fin = |v: Vec<f64>| -> Vec<f64> { v.into_iter().map(|x| x / count * rs).collect() };
    let baseline = vec![baseline / count * rs; n];
    let trend = fin(trend);
    let seasonality = fin(season);
    let controls: Vec<Vec<f64>> = controls.into_iter().map(fin).collect();
    let values: Vec<Vec<f64>> = contrib.into_iter().map(fin).collect();
    let prediction = (0..n)
        .map(|t| {
            baseline[t]
                + trend[t]
                + seasonality[t]
                + controls.iter().map(|c| c[t]).sum::<f64>()
                + values.iter().map(|c| c[t]).sum::<f64>()
        })
        .collect();
    Ok(Decomposition {
        baseline,
        trend,
        seasonality,
        control_names: draws.control_names.clone(),
        controls,
        contributions: ContributionMatrix {
            channel_names: draws.channel_names.clone(),
            values,
        },
        prediction,
    })
}

fn accumulate(acc: &mut [f64], x: &[f64]) {
    for (a, v) in acc.iter_mut().zip(x) {
        *a += v;
    }
}

/// Share of total response attributed to each channel, in percent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContributionShare {
    pub channels: Vec<(String, f64)>,
    pub total: f64,
}

pub fn contribution_percent(cm: &ContributionMatrix, y: &[f64]) -> Result<ContributionShare, InferenceError> {
    if cm.values.iter().any(|c| c.len() != y.len()) {
        return Err(InferenceError::ChannelMismatch(format!(
            "contribution columns do not have {} weeks",
            y.len()
        )));
    }
    let total_y: f64 = y.iter().sum();
    if total_y == 0.0 {
        return Err(InferenceError::ZeroResponseTotal);
    }
    let channels: Vec<(String, f64)> = cm
        .channel_names
        .iter()
        .zip(&cm.values)
        .map(|(name, col)| (name.clone(), 100.0 * col.iter().sum::<f64>() / total_y))
        .collect();
    let total = channels.iter().map(|(_, p)| p).sum();
    Ok(ContributionShare { channels, total })
}

/// One row of a posterior summary, original units.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParamSummary {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub q05: f64,
    pub q50: f64,
    pub q95: f64,
    pub rhat: f64,
    pub ess: f64,
}

pub fn posterior_summary(draws: &PosteriorDraws) -> Vec<ParamSummary> {
    (0..draws.params.len())
        .map(|i| {
            let mut v = draws.values(i);
            let mu = mean(&v);
            let sd = var(&v, mu).sqrt();
            v.sort_by(|a, b| a.total_cmp(b));
            ParamSummary {
                name: draws.params[i].name.clone(),
                mean: mu,
                sd,
                q05: quantile_sorted(&v, 0.05),
                q50: quantile_sorted(&v, 0.5),
                q95: quantile_sorted(&v, 0.95),
                rhat: draws.rhat[i],
                ess: draws.ess[i],
            }
        })
        .collect()
}

/// JSON has no NaN or infinity; those are written as the strings `"NaN"`,
/// `"inf"` and `"-inf"`.
mod nonfinite {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Value {
        Num(f64),
        Text(String),
    }

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        let out: Vec<Value> = v
            .iter()
            .map(|&x| {
                if x.is_finite() {
                    Value::Num(x)
                } else if x.is_nan() {
                    Value::Text("NaN".into())
                } else if x > 0.0 {
                    Value::Text("inf".into())
                } else {
                    Value::Text("-inf".into())
                }
            })
            .collect();
        out.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        Vec::<Value>::deserialize(d)?
            .into_iter()
            .map(|v| match v {
                Value::Num(x) => Ok(x),
                Value::Text(t) => match t.as_str() {
                    "NaN" => Ok(f64::NAN),
                    "inf" => Ok(f64::INFINITY),
                    "-inf" => Ok(f64::NEG_INFINITY),
                    other => Err(serde::de::Error::custom(format!("bad number `{other}`"))),
                },
            })
            .collect()
    }
}
