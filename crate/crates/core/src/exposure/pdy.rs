use serde::{Deserialize, Serialize};

use super::{check_exposure, check_gamma, mean_var, run_sampler, FitOptions, PatientOutcome, DEFAULT_THRESHOLD_C, DEFAULT_Z_REF};
use crate::error::{Error, Result};
use crate::prior::BvnPrior;
use crate::sampler::{Diagnostics, LogDensity};
use crate::stats::norm_cdf;

/// Log-linear PDy model `R = beta1 + beta2 log(Z / z_ref) + N(0, sigma^2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PdyModelSpec {
    pub z_ref: f64,
    pub prior: BvnPrior,
    /// Gamma(shape, rate) prior on the residual precision.
    pub precision_prior: (f64, f64),
    pub threshold_c: f64,
}

impl Default for PdyModelSpec {
    fn default() -> Self {
        Self {
            z_ref: DEFAULT_Z_REF,
            prior: BvnPrior { mean: [0.0, 0.0], cov: [[4.0, 0.0], [0.0, 4.0]] },
            precision_prior: (0.01, 0.01),
            threshold_c: DEFAULT_THRESHOLD_C,
        }
    }
}

impl PdyModelSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.z_ref > 0.0 && self.z_ref.is_finite()) {
            return Err(Error::invalid(format!("z_ref must be positive, got {}", self.z_ref)));
        }
        self.prior.validate()?;
        check_gamma("PDy precision", self.precision_prior.0, self.precision_prior.1)?;
        if !(0.0..=1.0).contains(&self.threshold_c) {
            return Err(Error::invalid(format!("threshold c must lie in [0, 1], got {}", self.threshold_c)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PdyDraw {
    pub beta1: f64,
    pub beta2: f64,
    pub sigma: f64,
}

impl PdyDraw {
    pub fn mean_at_log(&self, lz: f64) -> f64 {
        self.beta1 + self.beta2 * lz
    }

    /// Pr(R >= c) at log-relative exposure `lz`.
    pub fn engagement_at_log(&self, lz: f64, c: f64) -> f64 {
        1.0 - norm_cdf((c - self.mean_at_log(lz)) / self.sigma)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PdyFit {
    pub spec: PdyModelSpec,
    pub draws: Vec<PdyDraw>,
    pub diagnostics: Diagnostics,
}

impl PdyFit {
    pub fn posterior_mean(&self) -> PdyDraw {
        let n = self.draws.len() as f64;
        PdyDraw {
            beta1: self.draws.iter().map(|d| d.beta1).sum::<f64>() / n,
            beta2: self.draws.iter().map(|d| d.beta2).sum::<f64>() / n,
            sigma: self.draws.iter().map(|d| d.sigma).sum::<f64>() / n,
        }
    }
}

/// Parameters `(beta1, beta2, log tau)` with `tau = 1 / sigma^2`.
struct PdyTarget<'a> {
    spec: &'a PdyModelSpec,
    lz: Vec<f64>,
    r: Vec<f64>,
}

impl LogDensity for PdyTarget<'_> {
    fn dim(&self) -> usize {
        3
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        let (a0, b0) = self.spec.precision_prior;
        let tau = x[2].exp();
        let ss: f64 = self
            .lz
            .iter()
            .zip(&self.r)
            .map(|(&lz, &r)| (r - x[0] - x[1] * lz).powi(2))
            .sum();
        let n = self.r.len() as f64;
        0.5 * n * x[2] - 0.5 * tau * ss + self.spec.prior.log_density(&x[..2]) + a0 * x[2] - b0 * tau
    }

    fn initial_point(&self) -> Vec<f64> {
        let (mx, vx) = mean_var(&self.lz);
        let (my, vy) = mean_var(&self.r);
        let slope = if vx > 1e-12 {
            self.lz.iter().zip(&self.r).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>() / (vx * self.lz.len() as f64)
        } else {
            0.0
        };
        vec![my - slope * mx, slope, -(vy.max(1e-4)).ln()]
    }
}

/// Posterior draws of `(beta1, beta2, sigma)` given PDy reductions.
pub fn fit_pdy(data: &[PatientOutcome], spec: &PdyModelSpec, opts: &FitOptions) -> Result<PdyFit> {
    spec.validate()?;
    let mut lz = Vec::new();
    let mut r = Vec::new();
    for o in data {
        if let Some(v) = o.pdy {
            check_exposure(o.exposure.pdy)?;
            if !v.is_finite() {
                return Err(Error::pre(format!("non-finite PDy value for patient {}", o.patient_id)));
            }
            lz.push((o.exposure.pdy / spec.z_ref).ln());
            r.push(v);
        }
    }
    if r.is_empty() {
        return Err(Error::pre("PDy fit needs at least one observation"));
    }
    let target = PdyTarget { spec, lz, r };
    let (chains, diagnostics) = run_sampler(&target, opts)?;
    let draws = chains
        .iter()
        .map(|x| PdyDraw { beta1: x[0], beta2: x[1], sigma: (-0.5 * x[2]).exp() })
        .collect();
    Ok(PdyFit { spec: *spec, draws, diagnostics })
}

/// Mean PDy reduction at exposure `z`, one value per posterior draw.
pub fn predict_pdy(fit: &PdyFit, z: f64) -> Result<Vec<f64>> {
    check_exposure(z)?;
    let lz = (z / fit.spec.z_ref).ln();
    Ok(fit.draws.iter().map(|d| d.mean_at_log(lz)).collect())
}

/// Pr(R >= c | Z = z), one value per posterior draw.
pub fn target_engagement_prob(fit: &PdyFit, z: f64, c: f64) -> Result<Vec<f64>> {
    check_exposure(z)?;
    if !c.is_finite() {
        return Err(Error::invalid("threshold must be finite"));
    }
    let lz = (z / fit.spec.z_ref).ln();
    Ok(fit.draws.iter().map(|d| d.engagement_at_log(lz, c)).collect())
}
