//! Posterior sampling engine shared by every Bayesian fit in the crate.
//!
//! The kernel is random-walk Metropolis. Warmup starts with componentwise
//! updates whose per-coordinate scales are tuned toward a 0.44 acceptance
//! rate, then switches to joint proposals shaped by the empirical covariance
//! of the warmup draws, with the global step tuned toward 0.234. One
//! iteration is a sweep of `dim` proposals. Targets live on `R^dim`, except
//! that a coordinate may declare a lower bound, at which proposals are
//! reflected; models handle their own transforms and Jacobians.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from_seed};

/// Unnormalized log posterior over `R^dim`.
///
/// Must be re-entrant: chains evaluate it concurrently.
pub trait LogDensity: Sync {
    fn dim(&self) -> usize;

    fn log_density(&self, x: &[f64]) -> f64;

    /// Optional lower bound of coordinate `i`. Proposals below it are
    /// reflected back, which keeps the proposal symmetric.
    fn lower_bound(&self, _i: usize) -> Option<f64> {
        None
    }

    /// Starting point for every chain (jittered per chain).
    fn initial_point(&self) -> Vec<f64> {
        vec![0.0; self.dim()]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub n_chains: usize,
    pub n_warmup: usize,
    pub n_draws: usize,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self { n_chains: 4, n_warmup: 1000, n_draws: 1000, seed: 0 }
    }
}

impl SamplerConfig {
    pub fn with_seed(self, seed: u64) -> Self {
        Self { seed, ..self }
    }
}

/// Post-warmup draws of one chain, row-major `n_draws x dim`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Chain {
    pub draws: Vec<f64>,
    pub acceptance_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainSet {
    pub chains: Vec<Chain>,
    pub dim: usize,
    pub warmup_dropped: usize,
    pub seed: u64,
}

impl ChainSet {
    pub fn n_chains(&self) -> usize {
        self.chains.len()
    }

    /// Draws per chain.
    pub fn len(&self) -> usize {
        self.chains.first().map_or(0, |c| c.draws.len() / self.dim)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn total_draws(&self) -> usize {
        self.len() * self.n_chains()
    }

    pub fn draw(&self, chain: usize, i: usize) -> &[f64] {
        &self.chains[chain].draws[i * self.dim..(i + 1) * self.dim]
    }

    /// All draws, chain by chain.
    pub fn iter(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.chains.iter().flat_map(move |c| c.draws.chunks_exact(self.dim))
    }

    pub fn column(&self, d: usize) -> Vec<f64> {
        self.iter().map(|x| x[d]).collect()
    }

    pub fn mean(&self) -> Vec<f64> {
        let n = self.total_draws() as f64;
        let mut m = vec![0.0; self.dim];
        for x in self.iter() {
            for (acc, v) in m.iter_mut().zip(x) {
                *acc += v;
            }
        }
        m.iter_mut().for_each(|v| *v /= n);
        m
    }

    pub fn covariance(&self) -> Vec<Vec<f64>> {
        let rows: Vec<&[f64]> = self.iter().collect();
        empirical_covariance(&rows, self.dim)
    }

    pub fn acceptance_rates(&self) -> Vec<f64> {
        self.chains.iter().map(|c| c.acceptance_rate).collect()
    }
}

fn empirical_covariance(rows: &[&[f64]], dim: usize) -> Vec<Vec<f64>> {
    let n = rows.len() as f64;
    let mut mean = vec![0.0; dim];
    for r in rows {
        for d in 0..dim {
            mean[d] += r[d] / n;
        }
    }
    let mut cov = vec![vec![0.0; dim]; dim];
    for r in rows {
        for a in 0..dim {
            let da = r[a] - mean[a];
            for b in 0..=a {
                cov[a][b] += da * (r[b] - mean[b]);
            }
        }
    }
    let denom = (n - 1.0).max(1.0);
    for a in 0..dim {
        for b in 0..=a {
            cov[a][b] /= denom;
            cov[b][a] = cov[a][b];
        }
    }
    cov
}

/// Lower Cholesky factor; `None` unless positive definite.
pub(crate) fn cholesky(a: &[Vec<f64>]) -> Option<Vec<Vec<f64>>> {
    let n = a.len();
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i][k] * l[j][k]).sum();
            if i == j {
                let d = a[i][i] - s;
                if !(d > 0.0) || !d.is_finite() {
                    return None;
                }
                l[i][i] = d.sqrt();
            } else {
                l[i][j] = (a[i][j] - s) / l[j][j];
            }
        }
    }
    Some(l)
}

const TARGET_ACCEPTANCE: f64 = 0.234;
const TARGET_ACCEPTANCE_1D: f64 = 0.44;
const BATCH: usize = 25;
/// Fraction of warmup spent on componentwise updates.
const COMPONENTWISE_FRACTION: f64 = 0.4;

fn check_value(lp: f64, x: &[f64]) -> Result<f64> {
    if lp.is_nan() || lp == f64::INFINITY {
        return Err(Error::Target(format!("log density is {lp} at {x:?}")));
    }
    Ok(lp)
}

struct ChainState<'a, T: LogDensity + ?Sized> {
    target: &'a T,
    bounds: Vec<Option<f64>>,
    x: Vec<f64>,
    lp: f64,
    prop: Vec<f64>,
    rng: crate::rng::SimRng,
}

impl<T: LogDensity + ?Sized> ChainState<'_, T> {
    fn reflect(&mut self) {
        for (v, b) in self.prop.iter_mut().zip(&self.bounds) {
            if let Some(b) = *b {
                if *v < b {
                    *v = 2.0 * b - *v;
                }
            }
        }
    }

    fn accept_or_reject(&mut self) -> Result<bool> {
        self.reflect();
        let lp_prop = check_value(self.target.log_density(&self.prop), &self.prop)?;
        if lp_prop > f64::NEG_INFINITY && self.rng.random::<f64>().ln() < lp_prop - self.lp {
            self.x.copy_from_slice(&self.prop);
            self.lp = lp_prop;
            Ok(true)
        } else {
            Ok(false)
        }
    }

    /// Single-coordinate random-walk update.
    fn coordinate_step(&mut self, i: usize, scale: f64) -> Result<bool> {
        self.prop.copy_from_slice(&self.x);
        self.prop[i] += scale * self.rng.sample::<f64, _>(StandardNormal);
        self.accept_or_reject()
    }

    /// Joint update with proposal `x + scale * L z`.
    fn joint_step(&mut self, scale: f64, chol: &[Vec<f64>], z: &mut [f64]) -> Result<bool> {
        for v in z.iter_mut() {
            *v = self.rng.sample(StandardNormal);
        }
        for i in 0..self.x.len() {
            let s: f64 = (0..=i).map(|j| chol[i][j] * z[j]).sum();
            self.prop[i] = self.x[i] + scale * s;
        }
        self.accept_or_reject()
    }
}

/// Regularized Cholesky factor of the empirical covariance of `rows`.
fn proposal_factor(rows: &[Vec<f64>], dim: usize) -> Option<Vec<Vec<f64>>> {
    if rows.len() <= dim + 2 {
        return None;
    }
    let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
    let mut cov = empirical_covariance(&refs, dim);
    let n = rows.len() as f64;
    let shrink = n / (n + 5.0);
    for a in 0..dim {
        for b in 0..dim {
            if a != b {
                cov[a][b] *= shrink;
            }
        }
        // floor each variance relative to its own size so tiny scales survive
        cov[a][a] = cov[a][a] * (1.0 + 1e-6) + 1e-300;
    }
    if cov.iter().flatten().any(|v| !v.is_finite()) {
        return None;
    }
    cholesky(&cov)
}

fn run_chain<T: LogDensity + ?Sized>(target: &T, config: &SamplerConfig, chain: usize) -> Result<Chain> {
    let dim = target.dim();
    let mut rng = rng_from_seed(derive_seed(config.seed, chain as u64));

    let mut x = target.initial_point();
    if x.len() != dim {
        return Err(Error::Target(format!(
            "initial point has length {} but dimension is {dim}",
            x.len()
        )));
    }
    let start = x.clone();
    for v in x.iter_mut() {
        *v += 0.01 * rng.sample::<f64, _>(StandardNormal);
    }
    let bounds: Vec<Option<f64>> = (0..dim).map(|i| target.lower_bound(i)).collect();
    for (v, b) in x.iter_mut().zip(&bounds) {
        if let Some(b) = *b {
            if *v < b {
                *v = 2.0 * b - *v;
            }
        }
    }
    let mut lp = check_value(target.log_density(&x), &x)?;
    if lp == f64::NEG_INFINITY {
        // jitter may have left the support; fall back to the exact start
        x = start;
        lp = check_value(target.log_density(&x), &x)?;
        if lp == f64::NEG_INFINITY {
            return Err(Error::Target("log density is -inf at the initial point".into()));
        }
    }
    let mut st = ChainState { target, bounds, x, lp, prop: vec![0.0; dim], rng };

    // phase 1: componentwise adaptive Metropolis
    let n_comp = ((config.n_warmup as f64 * COMPONENTWISE_FRACTION) as usize).max(1);
    let mut coord_scale = vec![0.5; dim];
    let mut coord_accepts = vec![0usize; dim];
    let mut batches = 0usize;
    let mut recent: Vec<Vec<f64>> = Vec::new();
    let mut any_accept = false;
    for it in 0..n_comp {
        for i in 0..dim {
            if st.coordinate_step(i, coord_scale[i])? {
                coord_accepts[i] += 1;
                any_accept = true;
            }
        }
        if it >= n_comp / 2 {
            recent.push(st.x.clone());
        }
        if (it + 1) % BATCH == 0 {
            batches += 1;
            let gain = (3.0 / (batches as f64).sqrt()).min(2.0);
            for i in 0..dim {
                let rate = coord_accepts[i] as f64 / BATCH as f64;
                coord_scale[i] = (coord_scale[i] * (gain * (rate - TARGET_ACCEPTANCE_1D)).exp()).clamp(1e-300, 1e100);
                coord_accepts[i] = 0;
            }
        }
    }

    // phase 2: joint proposals with windowed covariance adaptation
    let base_scale = 2.38 / (dim as f64).sqrt();
    let mut scale = base_scale;
    let mut chol = proposal_factor(&recent, dim).unwrap_or_else(|| {
        (0..dim)
            .map(|i| (0..dim).map(|j| if i == j { coord_scale[i] / base_scale * 1.5 } else { 0.0 }).collect())
            .collect()
    });
    let n_joint = config.n_warmup.saturating_sub(n_comp);
    let windows = [n_joint * 25 / 100, n_joint * 60 / 100];
    let mut window_draws: Vec<Vec<f64>> = Vec::new();
    let mut z = vec![0.0; dim];
    let mut batch_accepts = 0usize;
    let mut batches_since_reset = 0usize;
    for it in 0..n_joint {
        for _ in 0..dim {
            if st.joint_step(scale, &chol, &mut z)? {
                batch_accepts += 1;
                any_accept = true;
            }
        }
        window_draws.push(st.x.clone());
        if (it + 1) % BATCH == 0 {
            batches_since_reset += 1;
            let rate = batch_accepts as f64 / (BATCH * dim) as f64;
            let gain = 3.0 / (batches_since_reset as f64).sqrt();
            scale = (scale * (gain * (rate - TARGET_ACCEPTANCE)).exp()).clamp(1e-300, 1e100);
            batch_accepts = 0;
        }
        if windows.contains(&(it + 1)) {
            let mut rows = std::mem::take(&mut window_draws);
            rows.extend(recent.drain(..));
            if let Some(l) = proposal_factor(&rows, dim) {
                chol = l;
                scale = base_scale;
                batches_since_reset = 0;
            }
        }
    }
    if !any_accept {
        return Err(Error::Adaptation(format!(
            "chain {chain} accepted no proposal during {} warmup iterations",
            config.n_warmup
        )));
    }

    let mut draws = Vec::with_capacity(config.n_draws * dim);
    let mut accepts = 0usize;
    for _ in 0..config.n_draws {
        for _ in 0..dim {
            if st.joint_step(scale, &chol, &mut z)? {
                accepts += 1;
            }
        }
        draws.extend_from_slice(&st.x);
    }
    Ok(Chain { draws, acceptance_rate: accepts as f64 / (config.n_draws * dim) as f64 })
}

/// Runs `n_chains` independent adaptive Metropolis chains on `target`.
pub fn sample_posterior<T: LogDensity + ?Sized>(target: &T, config: &SamplerConfig) -> Result<ChainSet> {
    if config.n_chains == 0 || config.n_draws == 0 || config.n_warmup == 0 {
        return Err(Error::pre("sampler counts must all be >= 1"));
    }
    if target.dim() == 0 {
        return Err(Error::Target("dimension must be >= 1".into()));
    }
    let chains = (0..config.n_chains)
        .into_par_iter()
        .map(|c| run_chain(target, config, c))
        .collect::<Result<Vec<_>>>()?;
    Ok(ChainSet {
        chains,
        dim: target.dim(),
        warmup_dropped: config.n_warmup,
        seed: config.seed,
    })
}

/// Split-R-hat for one dimension.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum RHat {
    Value(f64),
    /// Needs at least two chains.
    SingleChain,
    /// Every split half has zero variance.
    ZeroVariance,
}

impl RHat {
    pub fn value(self) -> Option<f64> {
        match self {
            RHat::Value(v) => Some(v),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub rhat: Vec<RHat>,
    pub ess: Vec<f64>,
}

impl Diagnostics {
    /// Largest finite R-hat, if any dimension has one.
    pub fn max_rhat(&self) -> Option<f64> {
        self.rhat.iter().filter_map(|r| r.value()).reduce(f64::max)
    }
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (m, v)
}

/// Split-R-hat and multi-chain effective sample size per dimension.
pub fn diagnostics(chains: &ChainSet) -> Diagnostics {
    let dim = chains.dim;
    let n = chains.len();
    let mut rhat = Vec::with_capacity(dim);
    let mut ess = Vec::with_capacity(dim);
    for d in 0..dim {
        let per_chain: Vec<Vec<f64>> = (0..chains.n_chains())
            .map(|c| (0..n).map(|i| chains.draw(c, i)[d]).collect())
            .collect();
        rhat.push(split_rhat(&per_chain));
        ess.push(effective_sample_size(&per_chain));
    }
    Diagnostics { rhat, ess }
}

fn split_rhat(per_chain: &[Vec<f64>]) -> RHat {
    if per_chain.len() < 2 {
        return RHat::SingleChain;
    }
    let half = per_chain[0].len() / 2;
    if half < 2 {
        return RHat::ZeroVariance;
    }
    let splits: Vec<&[f64]> = per_chain
        .iter()
        .flat_map(|c| [&c[..half], &c[c.len() - half..]])
        .collect();
    let stats: Vec<(f64, f64)> = splits.iter().map(|s| mean_var(s)).collect();
    let m = stats.len() as f64;
    let nh = half as f64;
    let w = stats.iter().map(|s| s.1).sum::<f64>() / m;
    if !(w > 0.0) {
        return RHat::ZeroVariance;
    }
    let grand = stats.iter().map(|s| s.0).sum::<f64>() / m;
    let b = nh * stats.iter().map(|s| (s.0 - grand).powi(2)).sum::<f64>() / (m - 1.0);
    let var_plus = (nh - 1.0) / nh * w + b / nh;
    RHat::Value((var_plus / w).sqrt())
}

/// Geyer initial-monotone-sequence ESS across chains.
fn effective_sample_size(per_chain: &[Vec<f64>]) -> f64 {
    let m = per_chain.len();
    let n = per_chain[0].len();
    let total = (m * n) as f64;
    if n < 4 {
        return total;
    }
    let stats: Vec<(f64, f64)> = per_chain.iter().map(|c| mean_var(c)).collect();
    let w = stats.iter().map(|s| s.1).sum::<f64>() / m as f64;
    if !(w > 0.0) {
        return total;
    }
    let grand = stats.iter().map(|s| s.0).sum::<f64>() / m as f64;
    let b_over_n = if m > 1 {
        stats.iter().map(|s| (s.0 - grand).powi(2)).sum::<f64>() / (m as f64 - 1.0)
    } else {
        0.0
    };
    let var_plus = (n as f64 - 1.0) / n as f64 * w + b_over_n;

    let autocov = |lag: usize| -> f64 {
        per_chain
            .iter()
            .zip(&stats)
            .map(|(c, (mean, _))| {
                (0..n - lag).map(|i| (c[i] - mean) * (c[i + lag] - mean)).sum::<f64>() / n as f64
            })
            .sum::<f64>()
            / m as f64
    };
    let rho = |lag: usize| 1.0 - (w - autocov(lag)) / var_plus;

    let mut sum_pairs = 0.0;
    let mut prev_pair = f64::INFINITY;
    let mut lag = 0;
    while lag + 1 < n {
        let pair = if lag == 0 { 1.0 + rho(1) } else { rho(lag) + rho(lag + 1) };
        if pair <= 0.0 {
            break;
        }
        let pair = pair.min(prev_pair);
        sum_pairs += pair;
        prev_pair = pair;
        lag += 2;
    }
    let tau = (-1.0 + 2.0 * sum_pairs).max(1.0 / total.log10().max(1.0));
    total / tau
}
