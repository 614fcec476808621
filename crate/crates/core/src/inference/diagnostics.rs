//! Convergence diagnostics over `chains[chain][draw]`.

/// Split-chain potential scale reduction. NaN when every draw is identical;
/// `+inf` when the within-chain variance is zero but chains disagree.
pub fn split_rhat(chains: &[Vec<f64>]) -> f64 {
    let halves = split(chains);
    if halves.len() < 2 || halves.iter().any(|h| h.len() < 2) {
        return f64::NAN;
    }
    let n = halves[0].len() as f64;
    let means: Vec<f64> = halves.iter().map(|h| mean(h)).collect();
    let within = halves.iter().zip(&means).map(|(h, &m)| var(h, m)).sum::<f64>() / halves.len() as f64;
    let grand = mean(&means);
    let between = n * var(&means, grand);
    if within == 0.0 {
        return if between == 0.0 { f64::NAN } else { f64::INFINITY };
    }
    let var_plus = (n - 1.0) / n * within + between / n;
    (var_plus / within).sqrt()
}

/// Effective sample size across chains, Geyer's initial monotone sequence
/// on the combined autocorrelation.
pub fn ess(chains: &[Vec<f64>]) -> f64 {
    let m = chains.len();
    if m == 0 {
        return f64::NAN;
    }
    let n = chains.iter().map(Vec::len).min().unwrap_or(0);
    if n < 4 {
        return f64::NAN;
    }
    let chains: Vec<&[f64]> = chains.iter().map(|c| &c[..n]).collect();
    let means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let acov: Vec<Vec<f64>> = chains.iter().zip(&means).map(|(c, &mu)| autocov(c, mu)).collect();
    let nf = n as f64;
    let w = acov.iter().map(|a| a[0] * nf / (nf - 1.0)).sum::<f64>() / m as f64;
    let b_over_n = if m > 1 { var(&means, mean(&means)) } else { 0.0 };
    let var_plus = w * (nf - 1.0) / nf + b_over_n;
    if !(var_plus > 0.0) {
        return f64::NAN;
    }
    let rho = |lag: usize| -> f64 {
        let mean_acov = acov.iter().map(|a| a[lag]).sum::<f64>() / m as f64;
        1.0 - (w - mean_acov) / var_plus
    };
    // Sum of consecutive pairs, truncated at the first negative pair and
    // forced monotone.
    let mut tau = -1.0;
    let mut prev_pair = f64::INFINITY;
    let mut lag = 0;
    while lag + 1 < n {
        let mut pair = rho(lag) + rho(lag + 1);
        if pair < 0.0 {
            break;
        }
        if pair > prev_pair {
            pair = prev_pair;
        }
        tau += 2.0 * pair;
        prev_pair = pair;
        lag += 2;
    }
    let total = (m * n) as f64;
    let tau = tau.max(1.0 / total.log10().max(1.0));
    total / tau
}

/// Quantile by linear interpolation between order statistics
/// (`h = (n - 1) p`).
pub fn quantile(values: &[f64], p: f64) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    quantile_sorted(&v, p)
}

pub(crate) fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn split(chains: &[Vec<f64>]) -> Vec<&[f64]> {
    let n = chains.iter().map(Vec::len).min().unwrap_or(0);
    let half = n / 2;
    chains
        .iter()
        .flat_map(|c| [&c[..half], &c[n - half..n]])
        .collect()
}

/// Shifted by the first value, so a constant slice gives that value exactly.
pub(crate) fn mean(x: &[f64]) -> f64 {
    let Some(&x0) = x.first() else { return f64::NAN };
    x0 + x.iter().map(|v| v - x0).sum::<f64>() / x.len() as f64
}

/// Unbiased sample variance.
pub(crate) fn var(x: &[f64], mean: f64) -> f64 {
    if x.len() < 2 {
        return 0.0;
    }
    x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (x.len() - 1) as f64
}

fn autocov(x: &[f64], mu: f64) -> Vec<f64> {
    let n = x.len();
    let d: Vec<f64> = x.iter().map(|v| v - mu).collect();
    (0..n)
        .map(|lag| d[..n - lag].iter().zip(&d[lag..]).map(|(a, b)| a * b).sum::<f64>() / n as f64)
        .collect()
}
