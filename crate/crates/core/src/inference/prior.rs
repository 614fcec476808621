//! Prior families and the unconstrained reparameterizations used by the
//! sampler.

use serde::{Deserialize, Serialize};
use statrs::function::erf::erf;
use statrs::function::gamma::ln_gamma;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Where a parameter lives.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Support {
    Real,
    /// `(lower, inf)`
    LowerBounded(f64),
    /// `(lower, upper)`
    Interval(f64, f64),
}

impl Support {
    pub fn contains(&self, x: f64) -> bool {
        match *self {
            Support::Real => x.is_finite(),
            Support::LowerBounded(lo) => x > lo && x.is_finite(),
            Support::Interval(lo, hi) => x > lo && x < hi,
        }
    }

    /// Map an unconstrained value into the support. Returns the constrained
    /// value, `dx/du`, and `d log|dx/du| / du`.
    pub fn from_unconstrained(&self, u: f64) -> (f64, f64, f64) {
        match *self {
            Support::Real => (u, 1.0, 0.0),
            Support::LowerBounded(lo) => {
                let e = u.exp();
                (lo + e, e, 1.0)
            }
            Support::Interval(lo, hi) => {
                let s = sigmoid(u);
                let w = hi - lo;
                // Keep the endpoint strictly outside the support's boundary.
                let x = (lo + w * s).clamp(next_up(lo), next_down(hi));
                (x, w * s * (1.0 - s), 1.0 - 2.0 * s)
            }
        }
    }

    /// `log|dx/du|` at `u`.
    pub fn log_jacobian(&self, u: f64) -> f64 {
        match *self {
            Support::Real => 0.0,
            Support::LowerBounded(_) => u,
            Support::Interval(lo, hi) => (hi - lo).ln() + ln_sigmoid(u) + ln_sigmoid(-u),
        }
    }

    pub fn to_unconstrained(&self, x: f64) -> f64 {
        match *self {
            Support::Real => x,
            Support::LowerBounded(lo) => (x - lo).ln(),
            Support::Interval(lo, hi) => {
                let p = (x - lo) / (hi - lo);
                (p / (1.0 - p)).ln()
            }
        }
    }
}

fn next_up(x: f64) -> f64 {
    if x == 0.0 {
        f64::MIN_POSITIVE
    } else if x > 0.0 {
        f64::from_bits(x.to_bits() + 1)
    } else {
        f64::from_bits(x.to_bits() - 1)
    }
}

fn next_down(x: f64) -> f64 {
    -next_up(-x)
}

fn sigmoid(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

fn ln_sigmoid(u: f64) -> f64 {
    if u >= 0.0 {
        -(-u).exp().ln_1p()
    } else {
        u - u.exp().ln_1p()
    }
}

/// A normalized prior density.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum Prior {
    Normal { mean: f64, sd: f64 },
    /// Half-normal on `[0, upper)`; `upper = None` means unbounded.
    HalfNormal { scale: f64, upper: Option<f64> },
    Beta { a: f64, b: f64 },
    Uniform { lower: f64, upper: f64 },
    /// Gamma(shape, rate) truncated to `(lower, upper)`.
    Gamma { shape: f64, rate: f64, lower: f64, upper: f64 },
}

impl Prior {
    pub fn half_normal(scale: f64) -> Self {
        Prior::HalfNormal { scale, upper: None }
    }

    pub fn validate(&self) -> Result<(), String> {
        let ok = match *self {
            Prior::Normal { mean, sd } => mean.is_finite() && sd > 0.0,
            Prior::HalfNormal { scale, upper } => scale > 0.0 && upper.is_none_or(|u| u > 0.0),
            Prior::Beta { a, b } => a > 0.0 && b > 0.0,
            Prior::Uniform { lower, upper } => lower.is_finite() && upper > lower && upper.is_finite(),
            Prior::Gamma { shape, rate, lower, upper } => shape > 0.0 && rate > 0.0 && lower >= 0.0 && upper > lower,
        };
        if ok {
            Ok(())
        } else {
            Err(format!("invalid prior {self:?}"))
        }
    }

    pub fn support(&self) -> Support {
        match *self {
            Prior::Normal { .. } => Support::Real,
            Prior::HalfNormal { upper: None, .. } => Support::LowerBounded(0.0),
            Prior::HalfNormal { upper: Some(u), .. } => Support::Interval(0.0, u),
            Prior::Beta { .. } => Support::Interval(0.0, 1.0),
            Prior::Uniform { lower, upper } => Support::Interval(lower, upper),
            Prior::Gamma { lower, upper, .. } => Support::Interval(lower, upper),
        }
    }

    /// Log density and its derivative at `x`. Outside the support the log
    /// density is `-inf`.
    pub fn ln_pdf_grad(&self, x: f64) -> (f64, f64) {
        if !self.support_closed_contains(x) {
            return (f64::NEG_INFINITY, 0.0);
        }
        match *self {
            Prior::Normal { mean, sd } => {
                let z = (x - mean) / sd;
                (-0.5 * LN_2PI - sd.ln() - 0.5 * z * z, -z / sd)
            }
            Prior::HalfNormal { scale, upper } => {
                let z = x / scale;
                let mass = upper.map_or(1.0, |u| erf(u / (scale * std::f64::consts::SQRT_2)));
                (
                    std::f64::consts::LN_2 - 0.5 * LN_2PI - scale.ln() - 0.5 * z * z - mass.ln(),
                    -z / scale,
                )
            }
            Prior::Beta { a, b } => {
                let ln_beta = ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b);
                (
                    (a - 1.0) * x.ln() + (b - 1.0) * (1.0 - x).ln() - ln_beta,
                    (a - 1.0) / x - (b - 1.0) / (1.0 - x),
                )
            }
            Prior::Uniform { lower, upper } => (-(upper - lower).ln(), 0.0),
            Prior::Gamma { shape, rate, lower, upper } => {
                let mass = gamma_cdf(shape, rate, upper) - gamma_cdf(shape, rate, lower);
                (
                    shape * rate.ln() - ln_gamma(shape) + (shape - 1.0) * x.ln() - rate * x - mass.ln(),
                    (shape - 1.0) / x - rate,
                )
            }
        }
    }

    pub fn ln_pdf(&self, x: f64) -> f64 {
        self.ln_pdf_grad(x).0
    }

    fn support_closed_contains(&self, x: f64) -> bool {
        match self.support() {
            Support::Real => x.is_finite(),
            Support::LowerBounded(lo) => x >= lo && x.is_finite(),
            Support::Interval(lo, hi) => x >= lo && x <= hi,
        }
    }

    /// Mean and standard deviation, by numerical quadrature for the
    /// truncated families.
    pub fn moments(&self) -> (f64, f64) {
        match *self {
            Prior::Normal { mean, sd } => (mean, sd),
            Prior::HalfNormal { scale, upper: None } => {
                let m = scale * (2.0 / std::f64::consts::PI).sqrt();
                (m, (scale * scale - m * m).sqrt())
            }
            Prior::Beta { a, b } => {
                let s = a + b;
                (a / s, (a * b / (s * s * (s + 1.0))).sqrt())
            }
            Prior::Uniform { lower, upper } => ((lower + upper) / 2.0, (upper - lower) / 12f64.sqrt()),
            Prior::HalfNormal { upper: Some(u), .. } => self.quadrature_moments(0.0, u),
            Prior::Gamma { lower, upper, .. } => self.quadrature_moments(lower, upper),
        }
    }

    fn quadrature_moments(&self, lo: f64, hi: f64) -> (f64, f64) {
        // Composite Simpson on a fine grid.
        let n = 20_000;
        let h = (hi - lo) / n as f64;
        let (mut m0, mut m1, mut m2) = (0.0, 0.0, 0.0);
        for i in 0..=n {
            let x = lo + h * i as f64;
            let w = if i == 0 || i == n {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            let p = self.ln_pdf(x).exp();
            let p = if p.is_finite() { p } else { 0.0 };
            m0 += w * p;
            m1 += w * p * x;
            m2 += w * p * x * x;
        }
        let mean = m1 / m0;
        (mean, (m2 / m0 - mean * mean).max(0.0).sqrt())
    }
}

/// Regularized lower incomplete gamma via statrs.
fn gamma_cdf(shape: f64, rate: f64, x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        statrs::function::gamma::gamma_lr(shape, rate * x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn integrate(p: &Prior, lo: f64, hi: f64) -> f64 {
        let n = 200_000;
        let h = (hi - lo) / n as f64;
        (0..n).map(|i| p.ln_pdf(lo + h * (i as f64 + 0.5)).exp() * h).sum()
    }

    #[test]
    fn densities_are_normalized() {
        assert_relative_eq!(integrate(&Prior::Normal { mean: 1.0, sd: 2.0 }, -20.0, 22.0), 1.0, epsilon = 1e-6);
        assert_relative_eq!(integrate(&Prior::half_normal(2.0), 0.0, 30.0), 1.0, epsilon = 1e-6);
        let hn = Prior::HalfNormal { scale: 0.1, upper: Some(0.15) };
        assert_relative_eq!(integrate(&hn, 0.0, 0.15), 1.0, epsilon = 1e-6);
        assert_relative_eq!(integrate(&Prior::Beta { a: 2.0, b: 2.0 }, 0.0, 1.0), 1.0, epsilon = 1e-6);
        let g = Prior::Gamma { shape: 2.0, rate: 1.0, lower: 0.5, upper: 3.0 };
        assert_relative_eq!(integrate(&g, 0.5, 3.0), 1.0, epsilon = 1e-6);
    }

    #[test]
    fn truncated_gamma_normalizer_matches_closed_form() {
        // shape 2, rate 1 on (0.5, 3]: mass = 1.5 e^{-0.5} - 4 e^{-3}.
        let mass = 1.5 * (-0.5f64).exp() - 4.0 * (-3.0f64).exp();
        let g = Prior::Gamma { shape: 2.0, rate: 1.0, lower: 0.5, upper: 3.0 };
        assert_relative_eq!(g.ln_pdf(1.0), (1.0f64).ln() - 1.0 - mass.ln(), epsilon = 1e-12);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let priors = [
            Prior::Normal { mean: 0.3, sd: 1.5 },
            Prior::half_normal(2.0),
            Prior::Beta { a: 2.0, b: 3.0 },
            Prior::Gamma { shape: 2.0, rate: 1.0, lower: 0.5, upper: 3.0 },
        ];
        for p in priors {
            let x = 0.7;
            let h = 1e-6;
            let fd = (p.ln_pdf(x + h) - p.ln_pdf(x - h)) / (2.0 * h);
            assert_relative_eq!(p.ln_pdf_grad(x).1, fd, epsilon = 1e-6);
        }
    }

    #[test]
    fn transforms_round_trip_and_jacobian() {
        for s in [Support::Real, Support::LowerBounded(1e-3), Support::Interval(0.8, 1.0)] {
            for u in [-3.0, -0.2, 0.0, 1.7] {
                let (x, dxdu, dlogj) = s.from_unconstrained(u);
                assert!(s.contains(x));
                assert_relative_eq!(s.to_unconstrained(x), u, epsilon = 1e-9);
                let h = 1e-6;
                let fd = (s.from_unconstrained(u + h).0 - s.from_unconstrained(u - h).0) / (2.0 * h);
                assert_relative_eq!(dxdu, fd, epsilon = 1e-7);
                assert_relative_eq!(s.log_jacobian(u), dxdu.ln(), epsilon = 1e-9);
                let fdj = (s.log_jacobian(u + h) - s.log_jacobian(u - h)) / (2.0 * h);
                assert_relative_eq!(dlogj, fdj, epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn moments() {
        let (m, s) = Prior::half_normal(1.0).moments();
        assert_relative_eq!(m, 0.797_884_560_802_865_4, epsilon = 1e-12);
        assert_relative_eq!(s, (1.0 - 2.0 / std::f64::consts::PI).sqrt(), epsilon = 1e-12);
        let (m, _) = Prior::Beta { a: 2.0, b: 2.0 }.moments();
        assert_eq!(m, 0.5);
        // Truncated half-normal mean: sqrt(2/pi) (1 - e^{-u^2/2}) / erf(u/sqrt2).
        let u: f64 = 1.5;
        let expected = (2.0 / std::f64::consts::PI).sqrt() * (1.0 - (-u * u / 2.0).exp())
            / erf(u / std::f64::consts::SQRT_2);
        let (m, _) = Prior::HalfNormal { scale: 1.0, upper: Some(u) }.moments();
        assert_relative_eq!(m, expected, epsilon = 1e-9);
    }

    #[test]
    fn outside_support_is_neg_inf() {
        assert_eq!(Prior::half_normal(1.0).ln_pdf(-0.1), f64::NEG_INFINITY);
        assert_eq!(Prior::Beta { a: 2.0, b: 2.0 }.ln_pdf(1.2), f64::NEG_INFINITY);
    }
}
