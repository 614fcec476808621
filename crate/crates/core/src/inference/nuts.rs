//! No-U-turn sampler with multinomial trajectory sampling, a diagonal
//! metric and windowed warmup adaptation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::draws::{PosteriorDraws, SamplerStats};
use super::model::Model;
use super::InferenceError;

const MAX_DELTA_H: f64 = 1000.0;
const INIT_ATTEMPTS: usize = 100;

/// A differentiable log density on unconstrained coordinates.
pub trait LogDensity: Sync {
    fn dim(&self) -> usize;
    /// Writes the gradient into `grad` and returns the log density
    /// (`-inf` when undefined).
    fn log_density_grad(&self, u: &[f64], grad: &mut [f64]) -> f64;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub chains: usize,
    pub warmup: usize,
    pub draws: usize,
    pub seed: u64,
    /// Target mean acceptance statistic for step-size adaptation.
    #[serde(default = "default_target_accept")]
    pub target_accept: f64,
    #[serde(default = "default_max_depth")]
    pub max_tree_depth: usize,
    /// Initial points are uniform on `(-r, r)` in unconstrained space.
    #[serde(default = "default_init_radius")]
    pub init_radius: f64,
    /// Skip adaptation and use this step size (identity metric). Zero
    /// freezes every chain at its initial point.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixed_step_size: Option<f64>,
}

fn default_target_accept() -> f64 {
    0.8
}

fn default_max_depth() -> usize {
    10
}

fn default_init_radius() -> f64 {
    2.0
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            chains: 4,
            warmup: 1000,
            draws: 1000,
            seed: 1,
            target_accept: default_target_accept(),
            max_tree_depth: default_max_depth(),
            init_radius: default_init_radius(),
            fixed_step_size: None,
        }
    }
}

impl SamplerConfig {
    pub fn new(chains: usize, warmup: usize, draws: usize, seed: u64) -> Self {
        Self {
            chains,
            warmup,
            draws,
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), InferenceError> {
        let bad = |m: String| Err(InferenceError::InvalidConfig(m));
        if self.chains < 2 {
            return bad(format!("chains = {} but at least 2 are needed for R-hat", self.chains));
        }
        if self.draws < 100 {
            return bad(format!("draws = {} but at least 100 are required", self.draws));
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return bad(format!("target_accept = {} must lie in (0, 1)", self.target_accept));
        }
        if self.max_tree_depth == 0 || self.max_tree_depth > 30 {
            return bad(format!("max_tree_depth = {} must lie in 1..=30", self.max_tree_depth));
        }
        if !(self.init_radius > 0.0 && self.init_radius.is_finite()) {
            return bad("init_radius must be positive".into());
        }
        if self.fixed_step_size.is_some_and(|e| !(e >= 0.0 && e.is_finite())) {
            return bad("fixed_step_size must be finite and >= 0".into());
        }
        Ok(())
    }
}

/// Kept draws of one chain, unconstrained coordinates.
#[derive(Debug, Clone)]
pub struct ChainOutput {
    pub draws: Vec<Vec<f64>>,
    pub stats: SamplerStats,
}

/// Sample a model's posterior; draws come back on the constrained scale.
pub fn sample(model: &Model, cfg: &SamplerConfig) -> Result<PosteriorDraws, InferenceError> {
    let chains = sample_target(model, cfg)?;
    let mut draws = Vec::with_capacity(chains.len());
    let mut stats = Vec::with_capacity(chains.len());
    for c in chains {
        draws.push(c.draws.iter().map(|u| model.constrain(u)).collect());
        stats.push(c.stats);
    }
    Ok(PosteriorDraws::new(model, draws, stats))
}

/// Run `cfg.chains` independent chains on an arbitrary target. Chain `k`
/// uses stream `k` of a generator seeded with `cfg.seed`, so results do not
/// depend on scheduling.
pub fn sample_target<T: LogDensity>(target: &T, cfg: &SamplerConfig) -> Result<Vec<ChainOutput>, InferenceError> {
    cfg.validate()?;
    if target.dim() == 0 {
        return Err(InferenceError::InvalidConfig("target has no parameters".into()));
    }
    (0..cfg.chains)
        .into_par_iter()
        .map(|chain| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(chain as u64);
            Chain::new(target, cfg, rng, chain)?.run()
        })
        .collect()
}

#[derive(Clone)]
struct Point {
    q: Vec<f64>,
    p: Vec<f64>,
    grad: Vec<f64>,
    logp: f64,
}

struct Chain<'a, T> {
    target: &'a T,
    cfg: &'a SamplerConfig,
    rng: ChaCha8Rng,
    inv_metric: Vec<f64>,
    eps: f64,
    current: Point,
}

/// Quantities a subtree hands back to its parent.
struct Subtree {
    propose: Point,
    rho: Vec<f64>,
    p_sharp_beg: Vec<f64>,
    p_sharp_end: Vec<f64>,
    p_beg: Vec<f64>,
    p_end: Vec<f64>,
    log_sum_weight: f64,
}

struct TreeStats {
    n_leapfrog: usize,
    sum_metro_prob: f64,
    divergent: bool,
}

struct Transition {
    accept_stat: f64,
    depth: usize,
    divergent: bool,
}

impl<'a, T: LogDensity> Chain<'a, T> {
    fn new(target: &'a T, cfg: &'a SamplerConfig, mut rng: ChaCha8Rng, chain: usize) -> Result<Self, InferenceError> {
        let d = target.dim();
        let mut grad = vec![0.0; d];
        for _ in 0..INIT_ATTEMPTS {
            let q: Vec<f64> = (0..d).map(|_| rng.random_range(-cfg.init_radius..cfg.init_radius)).collect();
            let logp = target.log_density_grad(&q, &mut grad);
            if logp.is_finite() && grad.iter().all(|g| g.is_finite()) {
                return Ok(Self {
                    target,
                    cfg,
                    rng,
                    inv_metric: vec![1.0; d],
                    eps: cfg.fixed_step_size.unwrap_or(1.0),
                    current: Point {
                        q,
                        p: vec![0.0; d],
                        grad: grad.clone(),
                        logp,
                    },
                });
            }
        }
        Err(InferenceError::NonFiniteDensityAtInit {
            chain,
            attempts: INIT_ATTEMPTS,
        })
    }

    fn run(mut self) -> Result<ChainOutput, InferenceError> {
        let adapt = self.cfg.fixed_step_size.is_none();
        if adapt {
            self.warmup();
        } else {
            for _ in 0..self.cfg.warmup {
                self.transition();
            }
        }
        let mut draws = Vec::with_capacity(self.cfg.draws);
        let (mut accept, mut depth, mut divergences) = (0.0, 0.0, 0);
        for _ in 0..self.cfg.draws {
            let t = self.transition();
            accept += t.accept_stat;
            depth += t.depth as f64;
            divergences += t.divergent as usize;
            draws.push(self.current.q.clone());
        }
        let n = self.cfg.draws as f64;
        Ok(ChainOutput {
            draws,
            stats: SamplerStats {
                step_size: self.eps,
                divergences,
                mean_accept_stat: accept / n,
                mean_tree_depth: depth / n,
            },
        })
    }

    fn warmup(&mut self) {
        let n = self.cfg.warmup;
        self.find_reasonable_step_size();
        let mut da = DualAveraging::new(self.eps, self.cfg.target_accept);
        let mut windows = Windows::new(n);
        let mut welford = Welford::new(self.target.dim());
        for _ in 0..n {
            let t = self.transition();
            self.eps = da.update(t.accept_stat);
            if windows.in_window() {
                welford.add(&self.current.q);
            }
            if windows.end_of_window() {
                windows.next_window();
                self.inv_metric = welford.regularized_variance();
                welford = Welford::new(self.target.dim());
                self.find_reasonable_step_size();
                da = DualAveraging::new(self.eps, self.cfg.target_accept);
            }
            windows.counter += 1;
        }
        if n > 0 {
            self.eps = da.final_step_size();
        }
    }

    fn sample_momentum(&mut self) -> Vec<f64> {
        let rng = &mut self.rng;
        self.inv_metric
            .iter()
            .map(|&m| {
                let z: f64 = rng.sample(StandardNormal);
                z / m.sqrt()
            })
            .collect()
    }

    fn hamiltonian(&self, z: &Point) -> f64 {
        let k: f64 = z.p.iter().zip(&self.inv_metric).map(|(p, m)| p * p * m).sum();
        let h = -z.logp + 0.5 * k;
        if h.is_nan() {
            f64::INFINITY
        } else {
            h
        }
    }

    fn p_sharp(&self, z: &Point) -> Vec<f64> {
        z.p.iter().zip(&self.inv_metric).map(|(p, m)| p * m).collect()
    }

    fn leapfrog(&self, z: &mut Point, eps: f64) {
        for (p, g) in z.p.iter_mut().zip(&z.grad) {
            *p += 0.5 * eps * g;
        }
        for ((q, p), m) in z.q.iter_mut().zip(&z.p).zip(&self.inv_metric) {
            *q += eps * m * p;
        }
        z.logp = self.target.log_density_grad(&z.q, &mut z.grad);
        if !z.logp.is_finite() || z.grad.iter().any(|g| !g.is_finite()) {
            z.logp = f64::NEG_INFINITY;
            return;
        }
        for (p, g) in z.p.iter_mut().zip(&z.grad) {
            *p += 0.5 * eps * g;
        }
    }

    fn find_reasonable_step_size(&mut self) {
        let init = self.current.clone();
        let target = 0.8f64.ln();
        let mut eps = self.eps;
        let mut direction = 0i8;
        for _ in 0..100 {
            let mut z = init.clone();
            z.p = self.sample_momentum();
            let h0 = self.hamiltonian(&z);
            self.leapfrog(&mut z, eps);
            let delta = h0 - self.hamiltonian(&z);
            let up = delta > target;
            if direction == 0 {
                direction = if up { 1 } else { -1 };
            } else if (direction == 1) != up {
                break;
            }
            let next = if direction == 1 { 2.0 * eps } else { 0.5 * eps };
            if !(next > 1e-12 && next < 1e7) {
                break;
            }
            eps = next;
        }
        self.eps = eps;
    }

    fn transition(&mut self) -> Transition {
        if self.eps == 0.0 {
            return Transition {
                accept_stat: 1.0,
                depth: 0,
                divergent: false,
            };
        }
        let mut z = self.current.clone();
        z.p = self.sample_momentum();
        let h0 = self.hamiltonian(&z);

        let mut z_fwd = z.clone();
        let mut z_bck = z.clone();
        let mut z_sample = z.clone();
        let sharp = self.p_sharp(&z);
        let (mut p_sharp_fwd_fwd, mut p_sharp_bck_bck) = (sharp.clone(), sharp);
        let (mut p_fwd_fwd, mut p_bck_bck) = (z.p.clone(), z.p.clone());
        let mut rho = z.p.clone();
        let mut log_sum_weight = 0.0;
        let mut stats = TreeStats {
            n_leapfrog: 0,
            sum_metro_prob: 0.0,
            divergent: false,
        };
        let mut depth = 0;

        while depth < self.cfg.max_tree_depth {
            let forward = self.rng.random::<f64>() > 0.5;
            let (rho_fwd, rho_bck, sub);
            let (p_sharp_fwd_bck, p_sharp_bck_fwd, p_fwd_bck, p_bck_fwd);
            if forward {
                let tree = self.build_tree(depth, &mut z_fwd, 1.0, h0, &mut stats);
                rho_bck = rho.clone();
                p_bck_fwd = p_fwd_fwd.clone();
                p_sharp_bck_fwd = p_sharp_fwd_fwd.clone();
                let Some(t) = tree else { break };
                p_sharp_fwd_bck = t.p_sharp_beg.clone();
                p_sharp_fwd_fwd = t.p_sharp_end.clone();
                p_fwd_bck = t.p_beg.clone();
                p_fwd_fwd = t.p_end.clone();
                rho_fwd = t.rho.clone();
                sub = t;
            } else {
                let tree = self.build_tree(depth, &mut z_bck, -1.0, h0, &mut stats);
                rho_fwd = rho.clone();
                p_fwd_bck = p_bck_bck.clone();
                p_sharp_fwd_bck = p_sharp_bck_bck.clone();
                let Some(t) = tree else { break };
                p_sharp_bck_fwd = t.p_sharp_beg.clone();
                p_sharp_bck_bck = t.p_sharp_end.clone();
                p_bck_fwd = t.p_beg.clone();
                p_bck_bck = t.p_end.clone();
                rho_bck = t.rho.clone();
                sub = t;
            }
            depth += 1;
            if sub.log_sum_weight > log_sum_weight {
                z_sample = sub.propose;
            } else {
                let accept = (sub.log_sum_weight - log_sum_weight).exp();
                if self.rng.random::<f64>() < accept {
                    z_sample = sub.propose;
                }
            }
            log_sum_weight = log_sum_exp(log_sum_weight, sub.log_sum_weight);
            rho = add(&rho_bck, &rho_fwd);
            let mut persist = no_u_turn(&p_sharp_bck_bck, &p_sharp_fwd_fwd, &rho);
            persist &= no_u_turn(&p_sharp_bck_bck, &p_sharp_fwd_bck, &add(&rho_bck, &p_fwd_bck));
            persist &= no_u_turn(&p_sharp_bck_fwd, &p_sharp_fwd_fwd, &add(&rho_fwd, &p_bck_fwd));
            if !persist {
                break;
            }
        }
        self.current = z_sample;
        Transition {
            accept_stat: if stats.n_leapfrog > 0 {
                stats.sum_metro_prob / stats.n_leapfrog as f64
            } else {
                0.0
            },
            depth,
            divergent: stats.divergent,
        }
    }

    /// Extend the trajectory by `2^depth` leapfrog steps from edge `z`,
    /// moving `z` to the new edge. `None` when the subtree diverged or
    /// made a U-turn.
    fn build_tree(&mut self, depth: usize, z: &mut Point, sign: f64, h0: f64, stats: &mut TreeStats) -> Option<Subtree> {
        if depth == 0 {
            self.leapfrog(z, sign * self.eps);
            stats.n_leapfrog += 1;
            let h = self.hamiltonian(z);
            if h - h0 > MAX_DELTA_H {
                stats.divergent = true;
            }
            let w = h0 - h;
            stats.sum_metro_prob += if w > 0.0 { 1.0 } else { w.exp() };
            if stats.divergent {
                return None;
            }
            let sharp = self.p_sharp(z);
            return Some(Subtree {
                propose: z.clone(),
                rho: z.p.clone(),
                p_sharp_beg: sharp.clone(),
                p_sharp_end: sharp,
                p_beg: z.p.clone(),
                p_end: z.p.clone(),
                log_sum_weight: w,
            });
        }
        let init = self.build_tree(depth - 1, z, sign, h0, stats)?;
        let fin = self.build_tree(depth - 1, z, sign, h0, stats)?;
        let lsw = log_sum_exp(init.log_sum_weight, fin.log_sum_weight);
        let take_final = if fin.log_sum_weight > lsw {
            true
        } else {
            self.rng.random::<f64>() < (fin.log_sum_weight - lsw).exp()
        };
        let rho = add(&init.rho, &fin.rho);
        let mut persist = no_u_turn(&init.p_sharp_beg, &fin.p_sharp_end, &rho);
        persist &= no_u_turn(&init.p_sharp_beg, &fin.p_sharp_beg, &add(&init.rho, &fin.p_beg));
        persist &= no_u_turn(&init.p_sharp_end, &fin.p_sharp_end, &add(&fin.rho, &init.p_end));
        if !persist {
            return None;
        }
        Some(Subtree {
            propose: if take_final { fin.propose } else { init.propose },
            rho,
            p_sharp_beg: init.p_sharp_beg,
            p_sharp_end: fin.p_sharp_end,
            p_beg: init.p_beg,
            p_end: fin.p_end,
            log_sum_weight: lsw,
        })
    }
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn no_u_turn(p_sharp_minus: &[f64], p_sharp_plus: &[f64], rho: &[f64]) -> bool {
    dot(p_sharp_plus, rho) > 0.0 && dot(p_sharp_minus, rho) > 0.0
}

fn log_sum_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

struct DualAveraging {
    mu: f64,
    target: f64,
    counter: f64,
    s_bar: f64,
    x_bar: f64,
}

impl DualAveraging {
    const GAMMA: f64 = 0.05;
    const T0: f64 = 10.0;
    const KAPPA: f64 = 0.75;

    fn new(eps: f64, target: f64) -> Self {
        Self {
            mu: (10.0 * eps).ln(),
            target,
            counter: 0.0,
            s_bar: 0.0,
            x_bar: 0.0,
        }
    }

    fn update(&mut self, accept_stat: f64) -> f64 {
        self.counter += 1.0;
        let stat = accept_stat.min(1.0);
        let eta = 1.0 / (self.counter + Self::T0);
        self.s_bar = (1.0 - eta) * self.s_bar + eta * (self.target - stat);
        let x = self.mu - self.s_bar * self.counter.sqrt() / Self::GAMMA;
        let x_eta = self.counter.powf(-Self::KAPPA);
        self.x_bar = x_eta * x + (1.0 - x_eta) * self.x_bar;
        x.exp()
    }

    fn final_step_size(&self) -> f64 {
        self.x_bar.exp()
    }
}

/// Metric adaptation schedule: a fast initial buffer, doubling slow
/// windows, and a terminal fast buffer.
struct Windows {
    n: usize,
    init_buffer: usize,
    term_buffer: usize,
    window_size: usize,
    window_end: usize,
    counter: usize,
}

impl Windows {
    fn new(n: usize) -> Self {
        let (mut init_buffer, mut term_buffer, mut base) = (75, 50, 25);
        if n < 20 {
            // Too short to estimate a metric; only the step size adapts.
            return Self {
                n,
                init_buffer: n,
                term_buffer: 0,
                window_size: 0,
                window_end: usize::MAX,
                counter: 0,
            };
        }
        if init_buffer + base + term_buffer > n {
            init_buffer = (0.15 * n as f64) as usize;
            term_buffer = (0.1 * n as f64) as usize;
            base = n - (init_buffer + term_buffer);
        }
        Self {
            n,
            init_buffer,
            term_buffer,
            window_size: base,
            window_end: init_buffer + base - 1,
            counter: 0,
        }
    }

    fn in_window(&self) -> bool {
        self.counter >= self.init_buffer && self.counter + self.term_buffer < self.n
    }

    fn end_of_window(&self) -> bool {
        self.counter == self.window_end && self.counter != self.n
    }

    fn next_window(&mut self) {
        let last = self.n - self.term_buffer - 1;
        if self.window_end == last {
            return;
        }
        self.window_size *= 2;
        self.window_end = self.counter + self.window_size;
        if self.window_end != last && self.window_end + 2 * self.window_size >= self.n - self.term_buffer {
            self.window_end = last;
        }
    }
}

struct Welford {
    n: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Welford {
    fn new(d: usize) -> Self {
        Self {
            n: 0,
            mean: vec![0.0; d],
            m2: vec![0.0; d],
        }
    }

    fn add(&mut self, x: &[f64]) {
        self.n += 1;
        for ((m, s), &v) in self.mean.iter_mut().zip(&mut self.m2).zip(x) {
            let delta = v - *m;
            *m += delta / self.n as f64;
            *s += delta * (v - *m);
        }
    }

    /// Sample variance shrunk toward `1e-3`.
    fn regularized_variance(&self) -> Vec<f64> {
        let n = self.n as f64;
        self.m2
            .iter()
            .map(|s| {
                let var = if self.n > 1 { s / (n - 1.0) } else { 1.0 };
                (n / (n + 5.0)) * var + 1e-3 * (5.0 / (n + 5.0))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inference::diagnostics::{ess, mean, split_rhat, var};

    /// y_t = mu + e_t, e_t ~ N(0, sigma^2) known, mu ~ N(m0, s0^2).
    struct Conjugate {
        y: Vec<f64>,
        sigma: f64,
        m0: f64,
        s0: f64,
    }

    impl Conjugate {
        fn posterior(&self) -> (f64, f64) {
            let n = self.y.len() as f64;
            let prec = 1.0 / (self.s0 * self.s0) + n / (self.sigma * self.sigma);
            let m = (self.m0 / (self.s0 * self.s0) + self.y.iter().sum::<f64>() / (self.sigma * self.sigma)) / prec;
            (m, prec.sqrt().recip())
        }
    }

    impl LogDensity for Conjugate {
        fn dim(&self) -> usize {
            1
        }

        fn log_density_grad(&self, u: &[f64], grad: &mut [f64]) -> f64 {
            let mu = u[0];
            let s2 = self.sigma * self.sigma;
            let lp = -0.5 * ((mu - self.m0) / self.s0).powi(2) - self.y.iter().map(|y| (y - mu).powi(2)).sum::<f64>() / (2.0 * s2);
            grad[0] = -(mu - self.m0) / (self.s0 * self.s0) + self.y.iter().map(|y| y - mu).sum::<f64>() / s2;
            lp
        }
    }

    /// Correlated, badly scaled bivariate normal.
    struct Gaussian2 {
        sd: [f64; 2],
        rho: f64,
    }

    impl LogDensity for Gaussian2 {
        fn dim(&self) -> usize {
            2
        }

        fn log_density_grad(&self, u: &[f64], grad: &mut [f64]) -> f64 {
            let z0 = u[0] / self.sd[0];
            let z1 = u[1] / self.sd[1];
            let k = 1.0 / (1.0 - self.rho * self.rho);
            let q = k * (z0 * z0 - 2.0 * self.rho * z0 * z1 + z1 * z1);
            grad[0] = -k * (z0 - self.rho * z1) / self.sd[0];
            grad[1] = -k * (z1 - self.rho * z0) / self.sd[1];
            -0.5 * q
        }
    }

    fn column(out: &[ChainOutput], i: usize) -> Vec<Vec<f64>> {
        out.iter().map(|c| c.draws.iter().map(|d| d[i]).collect()).collect()
    }

    #[test]
    fn conjugate_posterior_within_mcse() {
        let target = Conjugate {
            y: vec![1.3, 0.7, 2.1, 1.8, 0.2, 1.1, 1.6, 0.9],
            sigma: 1.0,
            m0: 0.0,
            s0: 10.0,
        };
        let (m, s) = target.posterior();
        let out = sample_target(&target, &SamplerConfig::new(4, 1000, 1000, 17)).unwrap();
        let chains = column(&out, 0);
        let all = chains.concat();
        let e = ess(&chains);
        let got_m = mean(&all);
        let got_s = var(&all, got_m).sqrt();
        assert!((got_m - m).abs() < 3.0 * s / e.sqrt(), "mean {got_m} vs {m}");
        assert!((got_s - s).abs() < 3.0 * s / (2.0 * e).sqrt(), "sd {got_s} vs {s}");
        assert!(split_rhat(&chains) < 1.05);
    }

    #[test]
    fn correlated_gaussian_moments() {
        let target = Gaussian2 { sd: [1.0, 50.0], rho: 0.9 };
        let out = sample_target(&target, &SamplerConfig::new(4, 1000, 1000, 3)).unwrap();
        for (i, &sd) in target.sd.iter().enumerate() {
            let chains = column(&out, i);
            let all = chains.concat();
            let e = ess(&chains);
            let m = mean(&all);
            assert!(m.abs() < 3.0 * sd / e.sqrt(), "param {i}: mean {m}");
            let s = var(&all, m).sqrt();
            assert!((s - sd).abs() < 0.1 * sd, "param {i}: sd {s}");
            assert!(split_rhat(&chains) < 1.05);
        }
        assert!(out.iter().all(|c| c.stats.divergences == 0));
    }

    #[test]
    fn same_seed_same_draws() {
        let target = Gaussian2 { sd: [1.0, 2.0], rho: 0.5 };
        let cfg = SamplerConfig::new(3, 200, 100, 99);
        let a = sample_target(&target, &cfg).unwrap();
        let b = sample_target(&target, &cfg).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.draws, y.draws);
            assert_eq!(x.stats, y.stats);
        }
        let c = sample_target(&target, &SamplerConfig::new(3, 200, 100, 100)).unwrap();
        assert_ne!(a[0].draws, c[0].draws);
    }

    #[test]
    fn frozen_chains_are_flagged() {
        let target = Gaussian2 { sd: [1.0, 1.0], rho: 0.0 };
        let cfg = SamplerConfig {
            fixed_step_size: Some(0.0),
            ..SamplerConfig::new(4, 10, 100, 5)
        };
        let out = sample_target(&target, &cfg).unwrap();
        assert!(split_rhat(&column(&out, 0)) > 1.1);
    }

    #[test]
    fn rejects_bad_config() {
        let target = Gaussian2 { sd: [1.0, 1.0], rho: 0.0 };
        for cfg in [
            SamplerConfig::new(1, 10, 100, 0),
            SamplerConfig::new(2, 10, 99, 0),
            SamplerConfig {
                target_accept: 1.0,
                ..SamplerConfig::new(2, 10, 100, 0)
            },
        ] {
            assert!(matches!(sample_target(&target, &cfg), Err(InferenceError::InvalidConfig(_))));
        }
    }

    struct Nowhere;

    impl LogDensity for Nowhere {
        fn dim(&self) -> usize {
            1
        }

        fn log_density_grad(&self, _: &[f64], _: &mut [f64]) -> f64 {
            f64::NEG_INFINITY
        }
    }

    #[test]
    fn non_finite_init_errors() {
        let err = sample_target(&Nowhere, &SamplerConfig::new(2, 10, 100, 0));
        assert!(matches!(err, Err(InferenceError::NonFiniteDensityAtInit { attempts: 100, .. })));
    }

    #[test]
    fn window_schedule() {
        let mut w = Windows::new(1000);
        let mut ends = Vec::new();
        for i in 0..1000 {
            if w.end_of_window() {
                ends.push(i);
                w.next_window();
            }
            w.counter += 1;
        }
        assert_eq!(ends, vec![99, 149, 249, 449, 949]);
        let short = Windows::new(100);
        assert_eq!((short.init_buffer, short.term_buffer, short.window_size), (15, 10, 75));
    }
}
