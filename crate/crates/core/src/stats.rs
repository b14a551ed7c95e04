//! Small scalar helpers shared by the likelihoods.

use statrs::function::erf::erfc;

/// Standard normal CDF.
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// log(1 + e^x) without overflow.
pub(crate) fn log1p_exp(x: f64) -> f64 {
    if x > 35.0 {
        x
    } else if x < -35.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

/// Bernoulli-logit log-likelihood of one observation.
pub(crate) fn bernoulli_logit_ll(eta: f64, y: bool) -> f64 {
    if y {
        -log1p_exp(-eta)
    } else {
        -log1p_exp(eta)
    }
}

/// Empirical quantile with linear interpolation between order statistics.
pub(crate) fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = q.clamp(0.0, 1.0) * (n - 1) as f64;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Evenly spaced indices `0..n` of length `m` (with repetition if `m > n`).
pub(crate) fn spaced_indices(n: usize, m: usize) -> Vec<usize> {
    (0..m).map(|i| ((i as f64 + 0.5) * n as f64 / m as f64) as usize).map(|i| i.min(n - 1)).collect()
}
