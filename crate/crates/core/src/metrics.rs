//! Fit quality, channel economics and saturation regions.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("length mismatch: {expected} observed vs {got} predicted")]
    LengthMismatch { expected: usize, got: usize },
    #[error("need at least two observations, got {0}")]
    TooShort(usize),
    #[error("every observed response is zero")]
    AllZeroResponse,
    #[error("total spend must be positive, got {0}")]
    NonPositiveSpend(f64),
    #[error("half-saturation constant must be positive, got {0}")]
    NonPositiveK(f64),
    #[error("invalid region thresholds ({low}, {high})")]
    InvalidThresholds { low: f64, high: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitMetrics {
    pub r2: f64,
    pub explained_variance: f64,
    pub mape: f64,
    /// `100 (1 - mape)`.
    pub accuracy_pct: f64,
    /// Weeks left out of the MAPE because the response was zero.
    pub zero_weeks_excluded: usize,
}

pub fn fit_metrics(y: &[f64], y_hat: &[f64]) -> Result<FitMetrics, MetricsError> {
    if y.len() != y_hat.len() {
        return Err(MetricsError::LengthMismatch {
            expected: y.len(),
            got: y_hat.len(),
        });
    }
    let n = y.len();
    if n < 2 {
        return Err(MetricsError::TooShort(n));
    }
    if y.iter().all(|&v| v == 0.0) {
        return Err(MetricsError::AllZeroResponse);
    }
    let nf = n as f64;
    let y_mean = y.iter().sum::<f64>() / nf;
    let resid: Vec<f64> = y.iter().zip(y_hat).map(|(a, b)| a - b).collect();
    let r_mean = resid.iter().sum::<f64>() / nf;
    let sse: f64 = resid.iter().map(|r| r * r).sum();
    let sst: f64 = y.iter().map(|v| (v - y_mean).powi(2)).sum();
    let var_r: f64 = resid.iter().map(|r| (r - r_mean).powi(2)).sum();
    let (mut ape, mut kept) = (0.0, 0usize);
    for (a, b) in y.iter().zip(y_hat) {
        if *a != 0.0 {
            ape += ((a - b) / a).abs();
            kept += 1;
        }
    }
    let mape = ape / kept as f64;
    Ok(FitMetrics {
        r2: 1.0 - sse / sst,
        explained_variance: 1.0 - var_r / sst,
        mape,
        accuracy_pct: 100.0 * (1.0 - mape),
        zero_weeks_excluded: n - kept,
    })
}

/// Cut points, as multiples of K, between the linear, transition and
/// saturated regions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionThresholds {
    pub low: f64,
    pub high: f64,
}

impl Default for RegionThresholds {
    fn default() -> Self {
        Self { low: 0.5, high: 2.0 }
    }
}

impl RegionThresholds {
    pub fn validate(&self) -> Result<(), MetricsError> {
        if self.low > 0.0 && self.high >= self.low && self.high.is_finite() {
            Ok(())
        } else {
            Err(MetricsError::InvalidThresholds {
                low: self.low,
                high: self.high,
            })
        }
    }
}

/// 1: `median < low K` (response roughly linear in spend); 2: within
/// `[low K, high K]`; 3: `median > high K` (saturated).
pub fn classify_region(median_spend: f64, k: f64, th: &RegionThresholds) -> Result<u8, MetricsError> {
    if !(k > 0.0) {
        return Err(MetricsError::NonPositiveK(k));
    }
    th.validate()?;
    Ok(if median_spend < th.low * k {
        1
    } else if median_spend <= th.high * k {
        2
    } else {
        3
    })
}

pub fn median(x: &[f64]) -> f64 {
    if x.is_empty() {
        return f64::NAN;
    }
    let mut v = x.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelEconomics {
    pub total_spend: f64,
    /// Percent of total response; present when a response total is given.
    pub contribution_pct: Option<f64>,
    /// Model-attributed outcome, response units.
    pub media_outcome: f64,
    pub roas: f64,
    /// Spend per conversion; absent when there are no conversions.
    pub cpa: Option<f64>,
    /// Half-saturation spend; absent for models without saturation.
    pub k: Option<f64>,
    /// `k / total_spend`.
    pub k_normalized: Option<f64>,
    pub median_spend: f64,
    pub region: Option<u8>,
}

/// Economics for one channel. `conversions` defaults to the attributed
/// outcome when `None`; `response_total` enables `contribution_pct`.
pub fn channel_economics(
    spend: &[f64],
    contribution: &[f64],
    conversions: Option<f64>,
    k: Option<f64>,
    response_total: Option<f64>,
    th: &RegionThresholds,
) -> Result<ChannelEconomics, MetricsError> {
    if spend.len() != contribution.len() {
        return Err(MetricsError::LengthMismatch {
            expected: spend.len(),
            got: contribution.len(),
        });
    }
    let total_spend: f64 = spend.iter().sum();
    if !(total_spend > 0.0) {
        return Err(MetricsError::NonPositiveSpend(total_spend));
    }
    let media_outcome: f64 = contribution.iter().sum();
    let conv = conversions.unwrap_or(media_outcome);
    let median_spend = median(spend);
    Ok(ChannelEconomics {
        total_spend,
        contribution_pct: response_total.filter(|t| *t != 0.0).map(|t| 100.0 * media_outcome / t),
        media_outcome,
        roas: media_outcome / total_spend,
        cpa: (conv > 0.0).then(|| total_spend / conv),
        k,
        k_normalized: k.map(|k| k / total_spend),
        median_spend,
        region: k.map(|k| classify_region(median_spend, k, th)).transpose()?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn perfect_and_mean_fits() {
        let y = [3.0, 5.0, 4.0, 8.0];
        let m = fit_metrics(&y, &y).unwrap();
        assert_eq!((m.r2, m.mape, m.accuracy_pct), (1.0, 0.0, 100.0));
        let m = fit_metrics(&y, &[5.0; 4]).unwrap();
        assert!(m.r2.abs() < 1e-15);
    }

    #[test]
    fn mape_by_hand() {
        let m = fit_metrics(&[1.0, 2.0, 4.0], &[1.0, 2.0, 3.0]).unwrap();
        assert!((m.mape - 0.25 / 3.0).abs() < 1e-15);
        assert_eq!(m.accuracy_pct, 100.0 * (1.0 - m.mape));
        assert!((m.accuracy_pct - (100.0 - 25.0 / 3.0)).abs() < 1e-12);
    }

    #[test]
    fn zero_weeks_excluded_from_mape() {
        let m = fit_metrics(&[0.0, 2.0, 4.0], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(m.zero_weeks_excluded, 1);
        assert!((m.mape - 0.125).abs() < 1e-15);
        assert_eq!(fit_metrics(&[0.0, 0.0], &[1.0, 1.0]), Err(MetricsError::AllZeroResponse));
    }

    #[test]
    fn explained_variance_matches_r2_for_centred_residuals() {
        let y = [1.0, 3.0, 2.0, 6.0];
        let y_hat = [1.5, 2.5, 2.5, 5.5];
        let m = fit_metrics(&y, &y_hat).unwrap();
        assert!((m.r2 - m.explained_variance).abs() < 1e-15);
    }

    #[test]
    fn online_one_row() {
        let spend = [58921.0];
        let e = channel_economics(&spend, &[13531.0], None, Some(406.0), None, &RegionThresholds::default()).unwrap();
        assert!((e.cpa.unwrap() - 4.355).abs() < 5e-4);
        assert_eq!(format!("{:.1}", e.cpa.unwrap()), "4.4");
        assert!((e.k_normalized.unwrap() - 0.006890).abs() < 1e-6);
        assert_eq!(e.k_normalized.unwrap(), 406.0 / 58921.0);
    }

    #[test]
    fn zero_contribution_and_conversions() {
        let e = channel_economics(&[10.0, 20.0], &[0.0, 0.0], Some(0.0), Some(5.0), Some(100.0), &RegionThresholds::default()).unwrap();
        assert_eq!(e.roas, 0.0);
        assert_eq!(e.cpa, None);
        assert_eq!(e.contribution_pct, Some(0.0));
    }

    #[test]
    fn linear_channel_has_no_k() {
        let e = channel_economics(&[10.0, 20.0], &[15.0, 15.0], None, None, None, &RegionThresholds::default()).unwrap();
        assert_eq!(e.k, None);
        assert_eq!(e.k_normalized, None);
        assert_eq!(e.region, None);
        assert_eq!(e.roas, 1.0);
    }

    #[test]
    fn regions() {
        let th = RegionThresholds::default();
        assert_eq!(classify_region(10.0, 10.0, &th).unwrap(), 2);
        assert_eq!(classify_region(0.1, 10.0, &th).unwrap(), 1);
        assert_eq!(classify_region(1000.0, 10.0, &th).unwrap(), 3);
    }

    proptest! {
        #[test]
        fn k_normalized_scale_invariant(c in 0.01f64..100.0, k in 1.0f64..1000.0) {
            let spend = [100.0, 250.0, 0.0, 400.0];
            let scaled: Vec<f64> = spend.iter().map(|s| s * c).collect();
            let th = RegionThresholds::default();
            let a = channel_economics(&spend, &[1.0; 4], None, Some(k), None, &th).unwrap();
            let b = channel_economics(&scaled, &[1.0; 4], None, Some(k * c), None, &th).unwrap();
            prop_assert!((a.k_normalized.unwrap() - b.k_normalized.unwrap()).abs() <= 1e-14 * a.k_normalized.unwrap());
        }

        #[test]
        fn region_monotone(a in 0.0f64..100.0, b in 0.0f64..100.0, k in 0.1f64..50.0) {
            let th = RegionThresholds::default();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(classify_region(lo, k, &th).unwrap() <= classify_region(hi, k, &th).unwrap());
        }

        #[test]
        fn cpa_times_outcome_is_spend(s in 1.0f64..1e6, o in 1.0f64..1e6) {
            let e = channel_economics(&[s], &[o], None, Some(1.0), None, &RegionThresholds::default()).unwrap();
            prop_assert!((e.cpa.unwrap() * e.media_outcome - s).abs() <= 1e-9 * s);
        }
    }
}
