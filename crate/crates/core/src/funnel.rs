//! Cross-channel collision analysis on a fitted contribution matrix.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::inference::{ContributionMatrix, Decomposition};

/// Gram matrices with a larger condition number are treated as collinear.
pub const MAX_CONDITION: f64 = 1e8;

const OMEGA_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FunnelError {
    #[error("omega must be a unit vector, |omega| = {norm}")]
    NonUnitOmega { norm: f64 },
    #[error("length mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch { what: String, expected: usize, got: usize },
    #[error("regressors are collinear (condition number {condition:e})")]
    DegenerateDesign { condition: f64 },
    #[error("invalid bounds: {0}")]
    InvalidBounds(String),
    #[error("funnel analysis needs at least two channels, got {0}")]
    TooFewChannels(usize),
    #[error("channel index {0} out of range")]
    UnknownChannel(usize),
}

pub type Vec3 = [f64; 3];

fn norm(v: &Vec3) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Post-collision velocities of two equal-mass particles scattered along
/// `omega`.
pub fn elastic_collision(v1: Vec3, v2: Vec3, omega: Vec3) -> Result<(Vec3, Vec3), FunnelError> {
    let n = norm(&omega);
    if (n - 1.0).abs() > OMEGA_TOL {
        return Err(FunnelError::NonUnitOmega { norm: n });
    }
    let rel = norm(&[v1[0] - v2[0], v1[1] - v2[1], v1[2] - v2[2]]);
    let mut a = [0.0; 3];
    let mut b = [0.0; 3];
    for k in 0..3 {
        let s = v1[k] + v2[k];
        a[k] = 0.5 * (s + rel * omega[k]);
        b[k] = 0.5 * (s - rel * omega[k]);
    }
    Ok((a, b))
}

/// Linear N-particle transform with the sum running over every particle,
/// the acting one included: `out_i = a v_i + b sum_j v_j`.
pub fn n_particle_collision(v: &[f64], a: f64, b: f64) -> Vec<f64> {
    let total: f64 = v.iter().sum();
    v.iter().map(|x| a * x + b * total).collect()
}

/// Box for the collision coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub a: (f64, f64),
    pub b: (f64, f64),
}

impl Default for Bounds {
    fn default() -> Self {
        Self { a: (0.0, 2.0), b: (0.0, 1.0) }
    }
}

impl Bounds {
    pub fn unbounded() -> Self {
        Self {
            a: (f64::NEG_INFINITY, f64::INFINITY),
            b: (f64::NEG_INFINITY, f64::INFINITY),
        }
    }

    pub fn validate(&self) -> Result<(), FunnelError> {
        for (name, (lo, hi)) in [("a", self.a), ("b", self.b)] {
            if lo.is_nan() || hi.is_nan() || lo > hi {
                return Err(FunnelError::InvalidBounds(format!("{name}: [{lo}, {hi}]")));
            }
        }
        Ok(())
    }

    fn contains(&self, a: f64, b: f64) -> bool {
        a >= self.a.0 && a <= self.a.1 && b >= self.b.0 && b <= self.b.1
    }
}

/// Regression target for one analysis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunnelTarget {
    /// Channels whose contributions stay in the target.
    pub analysis_set: Vec<usize>,
    pub z: Vec<f64>,
}

/// `z_t = y_t - baseline - trend - seasonality - controls - sum of
/// contributions of channels outside `analysis_set``.
pub fn build_funnel_target(d: &Decomposition, y: &[f64], analysis_set: &[usize]) -> Result<FunnelTarget, FunnelError> {
    let n = d.n_weeks();
    if y.len() != n {
        return Err(FunnelError::DimensionMismatch {
            what: "response".into(),
            expected: n,
            got: y.len(),
        });
    }
    let m = d.contributions.values.len();
    if let Some(&bad) = analysis_set.iter().find(|&&i| i >= m) {
        return Err(FunnelError::UnknownChannel(bad));
    }
    let z = (0..n)
        .map(|t| {
            let mut z = y[t] - d.baseline[t] - d.trend[t] - d.seasonality[t];
            z -= d.controls.iter().map(|c| c[t]).sum::<f64>();
            z -= d
                .contributions
                .values
                .iter()
                .enumerate()
                .filter(|(k, _)| !analysis_set.contains(k))
                .map(|(_, v)| v[t])
                .sum::<f64>();
            z
        })
        .collect();
    let mut set = analysis_set.to_vec();
    set.sort_unstable();
    set.dedup();
    Ok(FunnelTarget { analysis_set: set, z })
}

/// Fitted collision coefficients for one target channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollisionEstimate {
    pub target: usize,
    /// One channel in pairwise mode, all others in N-particle mode.
    pub donors: Vec<usize>,
    pub a: f64,
    pub b: f64,
    pub sse: f64,
    /// `mean_t(a v_i + b w_t - v_i)`, response units.
    pub delta_influence: f64,
    pub bounds: Bounds,
    pub condition_number: f64,
}

/// Bounded least squares for `z ~ a v_i + b v_j`. Exact: the interior
/// normal-equations solution when feasible, otherwise the best of the four
/// edge problems.
pub fn estimate_pair(v_i: &[f64], v_j: &[f64], z: &[f64], bounds: &Bounds) -> Result<CollisionEstimate, FunnelError> {
    let (a, b, sse, cond) = solve_box(v_i, v_j, z, bounds)?;
    Ok(CollisionEstimate {
        target: 0,
        donors: vec![1],
        a,
        b,
        sse,
        delta_influence: delta(v_i, v_j, a, b),
        bounds: *bounds,
        condition_number: cond,
    })
}

fn delta(v_i: &[f64], w: &[f64], a: f64, b: f64) -> f64 {
    v_i.iter().zip(w).map(|(x, y)| a * x + b * y - x).sum::<f64>() / v_i.len() as f64
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sse(v_i: &[f64], v_j: &[f64], z: &[f64], a: f64, b: f64) -> f64 {
    z.iter().zip(v_i).zip(v_j).map(|((z, x), y)| (z - a * x - b * y).powi(2)).sum()
}

fn solve_box(v_i: &[f64], v_j: &[f64], z: &[f64], bounds: &Bounds) -> Result<(f64, f64, f64, f64), FunnelError> {
    bounds.validate()?;
    let n = z.len();
    for (what, s) in [("v_i", v_i), ("v_j", v_j)] {
        if s.len() != n {
            return Err(FunnelError::DimensionMismatch {
                what: what.into(),
                expected: n,
                got: s.len(),
            });
        }
    }
    let (g11, g12, g22) = (dot(v_i, v_i), dot(v_i, v_j), dot(v_j, v_j));
    let (r1, r2) = (dot(v_i, z), dot(v_j, z));
    // Eigenvalues of the symmetric 2x2 Gram matrix.
    let half_tr = 0.5 * (g11 + g22);
    let disc = (0.25 * (g11 - g22).powi(2) + g12 * g12).sqrt();
    let (lmax, lmin) = (half_tr + disc, half_tr - disc);
    let cond = if lmin > 0.0 { lmax / lmin } else { f64::INFINITY };
    if !(cond <= MAX_CONDITION) {
        return Err(FunnelError::DegenerateDesign { condition: cond });
    }
    let det = g11 * g22 - g12 * g12;
    let a0 = (g22 * r1 - g12 * r2) / det;
    let b0 = (g11 * r2 - g12 * r1) / det;
    if bounds.contains(a0, b0) {
        return Ok((a0, b0, sse(v_i, v_j, z, a0, b0), cond));
    }
    let clamp = |x: f64, (lo, hi): (f64, f64)| x.max(lo).min(hi);
    let mut candidates = Vec::with_capacity(4);
    for a in [bounds.a.0, bounds.a.1] {
        if a.is_finite() {
            candidates.push((a, clamp((r2 - g12 * a) / g22, bounds.b)));
        }
    }
    for b in [bounds.b.0, bounds.b.1] {
        if b.is_finite() {
            candidates.push((clamp((r1 - g12 * b) / g11, bounds.a), b));
        }
    }
    let (a, b, s) = candidates
        .into_iter()
        .map(|(a, b)| (a, b, sse(v_i, v_j, z, a, b)))
        .min_by(|x, y| x.2.total_cmp(&y.2))
        .expect("a box with finite faces");
    Ok((a, b, s, cond))
}

/// Sum of every column except `i`, per week.
pub fn others_total(cm: &ContributionMatrix, i: usize) -> Vec<f64> {
    let n = cm.n_weeks();
    (0..n)
        .map(|t| cm.values.iter().enumerate().filter(|(k, _)| *k != i).map(|(_, v)| v[t]).sum())
        .collect()
}

/// One problem per channel: `z_i ~ a_i v_i + b_i sum_{j != i} v_j`, with
/// `targets[i]` the target for channel `i`.
pub fn estimate_n_particle(
    cm: &ContributionMatrix,
    targets: &[FunnelTarget],
    bounds: &Bounds,
) -> Result<Vec<Result<CollisionEstimate, FunnelError>>, FunnelError> {
    let m = cm.values.len();
    if m < 2 {
        return Err(FunnelError::TooFewChannels(m));
    }
    if targets.len() != m {
        return Err(FunnelError::DimensionMismatch {
            what: "targets".into(),
            expected: m,
            got: targets.len(),
        });
    }
    Ok((0..m)
        .into_par_iter()
        .map(|i| {
            let w = others_total(cm, i);
            let v = &cm.values[i];
            let (a, b, sse, cond) = solve_box(v, &w, &targets[i].z, bounds)?;
            Ok(CollisionEstimate {
                target: i,
                donors: (0..m).filter(|&j| j != i).collect(),
                a,
                b,
                sse,
                delta_influence: delta(v, &w, a, b),
                bounds: *bounds,
                condition_number: cond,
            })
        })
        .collect())
}

/// All `M(M-1)` ordered pairs; `targets[i]` is the target for channel `i`.
pub fn estimate_pairwise(
    cm: &ContributionMatrix,
    targets: &[FunnelTarget],
    bounds: &Bounds,
) -> Result<Vec<Result<CollisionEstimate, FunnelError>>, FunnelError> {
    let m = cm.values.len();
    if m < 2 {
        return Err(FunnelError::TooFewChannels(m));
    }
    if targets.len() != m {
        return Err(FunnelError::DimensionMismatch {
            what: "targets".into(),
            expected: m,
            got: targets.len(),
        });
    }
    let pairs: Vec<(usize, usize)> = (0..m).flat_map(|i| (0..m).filter(move |&j| j != i).map(move |j| (i, j))).collect();
    Ok(pairs
        .into_par_iter()
        .map(|(i, j)| {
            let mut e = estimate_pair(&cm.values[i], &cm.values[j], &targets[i].z, bounds)?;
            e.target = i;
            e.donors = vec![j];
            Ok(e)
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Donor,
    Receiver,
    Neutral,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelInfluence {
    pub channel: String,
    pub delta_influence: f64,
    pub role: Role,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DonorReceiverReport {
    /// Sorted by `delta_influence`, strongest donor first.
    pub ranking: Vec<ChannelInfluence>,
    /// `delta_matrix[i][j]` is the influence change of `i` from `j`
    /// (pairwise mode only; zero on the diagonal).
    pub delta_matrix: Option<Vec<Vec<f64>>>,
    pub total_delta: f64,
}

impl DonorReceiverReport {
    pub fn donors(&self) -> Vec<&str> {
        self.by_role(Role::Donor)
    }

    pub fn receivers(&self) -> Vec<&str> {
        self.by_role(Role::Receiver)
    }

    fn by_role(&self, role: Role) -> Vec<&str> {
        self.ranking.iter().filter(|r| r.role == role).map(|r| r.channel.as_str()).collect()
    }
}

/// Sum the estimates per target channel (a row sum of the delta matrix in
/// pairwise mode) and label the sign. Deltas within
/// `1e-9` of the channel's mean absolute contribution count as zero.
pub fn donor_receiver_report(estimates: &[CollisionEstimate], cm: &ContributionMatrix) -> DonorReceiverReport {
    let m = cm.values.len();
    let mut per_channel = vec![0.0; m];
    let pairwise = !estimates.is_empty() && estimates.iter().all(|e| e.donors.len() == 1);
    let mut matrix = vec![vec![0.0; m]; m];
    for e in estimates {
        per_channel[e.target] += e.delta_influence;
        if let [j] = e.donors.as_slice() {
            matrix[e.target][*j] = e.delta_influence;
        }
    }
    let mut ranking: Vec<ChannelInfluence> = (0..m)
        .map(|i| {
            let col = &cm.values[i];
            let scale = col.iter().map(|v| v.abs()).sum::<f64>() / col.len().max(1) as f64;
            let d = per_channel[i];
            let role = if d.abs() <= 1e-9 * scale.max(f64::MIN_POSITIVE) {
                Role::Neutral
            } else if d < 0.0 {
                Role::Donor
            } else {
                Role::Receiver
            };
            ChannelInfluence {
                channel: cm.channel_names[i].clone(),
                delta_influence: d,
                role,
            }
        })
        .collect();
    ranking.sort_by(|x, y| x.delta_influence.total_cmp(&y.delta_influence));
    DonorReceiverReport {
        total_delta: per_channel.iter().sum(),
        ranking,
        delta_matrix: pairwise.then_some(matrix),
    }
}
