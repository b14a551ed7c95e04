//! Bivariate-normal prior of the two-parameter logistic model and its
//! quantile-matching calibration.
//!
//! The model is `logit p(x) = phi1 + exp(phi2) * x` where `x` is a log-scaled
//! covariate (`log(d / d_ref)` or `log(Z / Z_ref)`).

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::bisect;
use crate::stats::{logit, norm_cdf};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BvnPrior {
    pub mean: [f64; 2],
    pub cov: [[f64; 2]; 2],
}

impl BvnPrior {
    pub fn new(mean: [f64; 2], cov: [[f64; 2]; 2]) -> Result<Self> {
        let p = Self { mean, cov };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let [[a, b], [c, d]] = self.cov;
        if !self.mean.iter().all(|m| m.is_finite()) {
            return Err(Error::invalid("prior mean must be finite"));
        }
        if (b - c).abs() > 1e-12 * (a.abs() + d.abs()) {
            return Err(Error::invalid("prior covariance must be symmetric"));
        }
        if !(a > 0.0 && d > 0.0 && a * d - b * c > 0.0) || !(a.is_finite() && d.is_finite()) {
            return Err(Error::invalid("prior covariance must be positive definite"));
        }
        Ok(())
    }

    pub fn sd(&self) -> [f64; 2] {
        [self.cov[0][0].sqrt(), self.cov[1][1].sqrt()]
    }

    pub fn correlation(&self) -> f64 {
        let [s1, s2] = self.sd();
        self.cov[0][1] / (s1 * s2)
    }

    /// Log density up to a constant.
    pub fn log_density(&self, x: &[f64]) -> f64 {
        let [[a, b], [_, d]] = self.cov;
        let det = a * d - b * b;
        let u = x[0] - self.mean[0];
        let v = x[1] - self.mean[1];
        -0.5 * (d * u * u - 2.0 * b * u * v + a * v * v) / det
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> [f64; 2] {
        let [s1, s2] = self.sd();
        let rho = self.correlation();
        let z1: f64 = rng.sample(StandardNormal);
        let z2: f64 = rng.sample(StandardNormal);
        [
            self.mean[0] + s1 * z1,
            self.mean[1] + s2 * (rho * z1 + (1.0 - rho * rho).sqrt() * z2),
        ]
    }

    /// Prior probability that `p(x) < t`, by quadrature over `phi2`.
    pub fn prob_below(&self, x: f64, t: f64) -> f64 {
        let [s1, s2] = self.sd();
        let rho = self.correlation();
        let cond_sd = s1 * (1.0 - rho * rho).sqrt();
        let lt = logit(t);
        // Simpson on +-8 sd of phi2
        let n = 800;
        let h = 16.0 / n as f64;
        let mut acc = 0.0;
        for i in 0..=n {
            let z = -8.0 + i as f64 * h;
            let phi2 = self.mean[1] + s2 * z;
            let cond_mean = self.mean[0] + rho * s1 * z;
            let inner = norm_cdf((lt - cond_mean - phi2.exp() * x) / cond_sd);
            let w = if i == 0 || i == n { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
            acc += w * inner * (-0.5 * z * z).exp();
        }
        acc * h / 3.0 / (2.0 * std::f64::consts::PI).sqrt()
    }
}

/// Targets of the quantile-matching calibration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationTargets {
    pub delta_min: f64,
    pub delta_max: f64,
    /// Pr(p(lowest) < delta_min).
    pub underdose_prob_low: f64,
    /// Pr(p(highest) < delta_max).
    pub acceptable_prob_high: f64,
    pub sd_intercept: f64,
    pub sd_log_slope: f64,
}

impl Default for CalibrationTargets {
    fn default() -> Self {
        Self {
            delta_min: 0.20,
            delta_max: 0.33,
            underdose_prob_low: 0.90,
            acceptable_prob_high: 0.20,
            sd_intercept: 1.0,
            sd_log_slope: 1.0,
        }
    }
}

/// Finds an uncorrelated prior with fixed standard deviations whose means
/// satisfy both quantile targets at covariates `x_low < x_high`.
///
/// The intercept mean is solved against the high-covariate target for each
/// candidate log-slope mean; the log-slope mean is then solved against the
/// low-covariate target.
pub fn calibrate_bvn(x_low: f64, x_high: f64, t: &CalibrationTargets) -> Result<BvnPrior> {
    if !(x_low.is_finite() && x_high.is_finite()) || x_high - x_low < 1e-9 {
        return Err(Error::Calibration(format!(
            "covariate range [{x_low}, {x_high}] is degenerate; lowest and highest levels must differ"
        )));
    }
    let probs = [t.delta_min, t.delta_max, t.underdose_prob_low, t.acceptable_prob_high];
    if probs.iter().any(|p| !(*p > 0.0 && *p < 1.0)) || t.delta_min >= t.delta_max {
        return Err(Error::Calibration("targets must be probabilities with delta_min < delta_max".into()));
    }
    if !(t.sd_intercept > 0.0 && t.sd_log_slope > 0.0) {
        return Err(Error::Calibration("prior standard deviations must be positive".into()));
    }
    let cov = [[t.sd_intercept.powi(2), 0.0], [0.0, t.sd_log_slope.powi(2)]];
    let prior = |mu1: f64, mu2: f64| BvnPrior { mean: [mu1, mu2], cov };

    let solve_mu1 = |mu2: f64| -> Option<f64> {
        bisect(
            |mu1| prior(mu1, mu2).prob_below(x_high, t.delta_max) - t.acceptable_prob_high,
            -500.0,
            500.0,
            1e-10,
        )
    };
    let low_gap = |mu2: f64| -> f64 {
        match solve_mu1(mu2) {
            Some(mu1) => prior(mu1, mu2).prob_below(x_low, t.delta_min) - t.underdose_prob_low,
            None => f64::NAN,
        }
    };
    let mu2 = bisect(low_gap, -5.0, 5.0, 1e-10).ok_or_else(|| {
        Error::Calibration(format!(
            "no log-slope mean in [-5, 5] meets Pr(p(low) < {}) = {} with covariates ({x_low:.4}, {x_high:.4})",
            t.delta_min, t.underdose_prob_low
        ))
    })?;
    let mu1 = solve_mu1(mu2).ok_or_else(|| Error::Calibration("intercept search failed".into()))?;
    Ok(prior(mu1, mu2))
}
