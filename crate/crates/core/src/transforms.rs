//! Media response transforms.
//!
//! Everything here is a pure function of its inputs. Series are plain slices
//! indexed by week; multi-channel inputs are passed column-wise, one slice per
//! channel, all of equal length.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default maximum delay window, in weeks.
pub const DEFAULT_MAX_LAG: usize = 13;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TransformError {
    #[error("invalid parameter {name} = {value}: {reason}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
}

fn check(cond: bool, name: &'static str, value: f64, reason: &'static str) -> Result<(), TransformError> {
    if cond {
        Ok(())
    } else {
        Err(TransformError::InvalidParameter { name, value, reason })
    }
}

fn check_delay(delta: f64, max_lag: usize) -> Result<(), TransformError> {
    check(max_lag >= 1, "max_lag", max_lag as f64, "must be at least 1")?;
    check(
        delta >= 0.0 && delta <= (max_lag - 1) as f64,
        "delta",
        delta,
        "must lie in [0, max_lag - 1]",
    )
}

/// Delay-weighted adstock parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdstockParams {
    pub alpha: f64,
    pub delta: f64,
    pub max_lag: usize,
}

impl AdstockParams {
    pub fn new(alpha: f64, delta: f64, max_lag: usize) -> Result<Self, TransformError> {
        check(alpha > 0.0 && alpha < 1.0, "alpha", alpha, "must lie in (0, 1)")?;
        check_delay(delta, max_lag)?;
        Ok(Self { alpha, delta, max_lag })
    }
}

/// Carryover parameters: retention rate plus peak delay.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CarryoverParams {
    pub retention: f64,
    pub delta: f64,
    pub max_lag: usize,
}

impl CarryoverParams {
    pub fn new(retention: f64, delta: f64, max_lag: usize) -> Result<Self, TransformError> {
        check(
            retention > 0.0 && retention < 1.0,
            "retention",
            retention,
            "must lie in (0, 1)",
        )?;
        check_delay(delta, max_lag)?;
        Ok(Self {
            retention,
            delta,
            max_lag,
        })
    }
}

/// Hill saturation with an output scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HillParams {
    /// Input level giving half of `scale`.
    pub half_sat: f64,
    /// Hill coefficient.
    pub exponent: f64,
    pub scale: f64,
}

impl HillParams {
    pub fn new(half_sat: f64, exponent: f64, scale: f64) -> Result<Self, TransformError> {
        check(half_sat > 0.0, "half_sat", half_sat, "must be positive")?;
        check(exponent > 0.0, "exponent", exponent, "must be positive")?;
        check(scale > 0.0, "scale", scale, "must be positive")?;
        Ok(Self {
            half_sat,
            exponent,
            scale,
        })
    }

    /// Dissociation constant `K_d = K_A^n`.
    pub fn dissociation_constant(&self) -> f64 {
        self.half_sat.powf(self.exponent)
    }
}

/// Michaelis-Menten saturation: maximum response `vmax`, half-saturation
/// constant `km` on the transform's input axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MMParams {
    pub vmax: f64,
    pub km: f64,
}

impl MMParams {
    pub fn new(vmax: f64, km: f64) -> Result<Self, TransformError> {
        check(vmax > 0.0, "vmax", vmax, "must be positive")?;
        check(km > 0.0, "km", km, "must be positive")?;
        Ok(Self { vmax, km })
    }
}

/// Per-channel coefficients of the collision-type mixing transform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoltzmannParams {
    /// Self-retention.
    pub a: Vec<f64>,
    /// Gain from the other channels.
    pub b: Vec<f64>,
}

impl BoltzmannParams {
    pub fn new(a: Vec<f64>, b: Vec<f64>) -> Result<Self, TransformError> {
        if a.len() != b.len() {
            return Err(TransformError::DimensionMismatch {
                expected: a.len(),
                got: b.len(),
            });
        }
        for &v in a.iter().chain(&b) {
            check(v.is_finite(), "a/b", v, "must be finite")?;
        }
        Ok(Self { a, b })
    }

    pub fn uniform(n: usize, a: f64, b: f64) -> Self {
        Self {
            a: vec![a; n],
            b: vec![b; n],
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::uniform(n, 1.0, 0.0)
    }

    pub fn len(&self) -> usize {
        self.a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a.is_empty()
    }
}

/// `base^((l - delta)^2)` for `l = 0..max_lag`.
pub fn lag_weights(base: f64, delta: f64, max_lag: usize) -> Vec<f64> {
    let ln_base = base.ln();
    (0..max_lag)
        .map(|l| {
            let d = l as f64 - delta;
            (ln_base * d * d).exp()
        })
        .collect()
}

pub fn delay_weights(p: &AdstockParams) -> Vec<f64> {
    lag_weights(p.alpha, p.delta, p.max_lag)
}

pub fn carryover_weights(p: &CarryoverParams) -> Vec<f64> {
    lag_weights(p.retention, p.delta, p.max_lag)
}

/// Normalized lag window. Early weeks with fewer than `weights.len()` lags
/// available are normalized by the weights of the lags that exist.
pub fn weighted_window(x: &[f64], weights: &[f64]) -> Vec<f64> {
    (0..x.len())
        .map(|t| {
            let lags = weights.len().min(t + 1);
            let mut num = 0.0;
            let mut den = 0.0;
            for (l, &w) in weights[..lags].iter().enumerate() {
                num += w * x[t - l];
                den += w;
            }
            num / den
        })
        .collect()
}

pub fn adstock(x: &[f64], p: &AdstockParams) -> Vec<f64> {
    weighted_window(x, &delay_weights(p))
}

pub fn carryover(x: &[f64], p: &CarryoverParams) -> Vec<f64> {
    weighted_window(x, &carryover_weights(p))
}

pub fn hill(x: f64, p: &HillParams) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    // (x/K)^n keeps large inputs from overflowing x^n.
    let r = (x / p.half_sat).powf(p.exponent);
    if r.is_infinite() {
        return p.scale;
    }
    p.scale * r / (1.0 + r)
}

pub fn hill_series(x: &[f64], p: &HillParams) -> Vec<f64> {
    x.iter().map(|&v| hill(v, p)).collect()
}

pub fn michaelis_menten(x: f64, p: &MMParams) -> f64 {
    p.vmax * x / (x + p.km)
}

pub fn michaelis_menten_series(x: &[f64], p: &MMParams) -> Vec<f64> {
    x.iter().map(|&v| michaelis_menten(v, p)).collect()
}

/// Row-wise collision mix over channel columns:
/// `out[i][t] = a_i * x[i][t] + b_i * sum_{j != i} x[j][t]`.
pub fn boltzmann_mix(columns: &[Vec<f64>], p: &BoltzmannParams) -> Result<Vec<Vec<f64>>, TransformError> {
    if columns.len() != p.len() {
        return Err(TransformError::DimensionMismatch {
            expected: p.len(),
            got: columns.len(),
        });
    }
    let n_weeks = columns.first().map_or(0, Vec::len);
    if let Some(bad) = columns.iter().find(|c| c.len() != n_weeks) {
        return Err(TransformError::DimensionMismatch {
            expected: n_weeks,
            got: bad.len(),
        });
    }
    let totals: Vec<f64> = (0..n_weeks)
        .map(|t| columns.iter().map(|c| c[t]).sum())
        .collect();
    Ok(columns
        .iter()
        .enumerate()
        .map(|(i, col)| {
            col.iter()
                .zip(&totals)
                .map(|(&own, &total)| p.a[i] * own + p.b[i] * (total - own))
                .collect()
        })
        .collect())
}
