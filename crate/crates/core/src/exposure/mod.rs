//! Bayesian exposure-response models for toxicity, pharmacodynamic activity
//! and efficacy, plus the monotone spline basis used by the efficacy model.

mod efficacy;
mod ispline;
mod pdy;
mod safety;

pub use efficacy::{fit_efficacy, predict_efficacy, EfficacyDraw, EfficacyFit, EfficacyModelSpec};
pub use ispline::{default_knots, ispline_basis, ISplineBasis};
pub use pdy::{fit_pdy, predict_pdy, target_engagement_prob, PdyDraw, PdyFit, PdyModelSpec};
pub use safety::{fit_safety, predict_safety, SafetyDraw, SafetyFit, SafetyModelSpec};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pk::ExposureKind;
use crate::sampler::{diagnostics, sample_posterior, ChainSet, Diagnostics, LogDensity, SamplerConfig};

/// Reference exposure used to center the log-exposure covariate.
pub const DEFAULT_Z_REF: f64 = 40.0;

/// Default target-engagement threshold on the PDy reduction.
pub const DEFAULT_THRESHOLD_C: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Endpoint {
    Safety,
    Pdy,
    Efficacy,
}

/// One value per endpoint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerEndpoint<T> {
    pub safety: T,
    pub pdy: T,
    pub efficacy: T,
}

impl<T: Copy> PerEndpoint<T> {
    pub fn uniform(v: T) -> Self {
        Self { safety: v, pdy: v, efficacy: v }
    }

    pub fn get(&self, e: Endpoint) -> T {
        match e {
            Endpoint::Safety => self.safety,
            Endpoint::Pdy => self.pdy,
            Endpoint::Efficacy => self.efficacy,
        }
    }
}

/// Exposure metric driving each endpoint.
pub type MetricMap = PerEndpoint<ExposureKind>;

impl Default for MetricMap {
    fn default() -> Self {
        Self::uniform(ExposureKind::Auc24)
    }
}

/// One patient's exposures and observed endpoints.
///
/// `pdy` and `efficacy` are reductions from baseline (positive is better);
/// missing values are skipped by the corresponding fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientOutcome {
    pub patient_id: String,
    pub exposure: PerEndpoint<f64>,
    pub dlt: bool,
    pub pdy: Option<f64>,
    pub efficacy: Option<f64>,
}

impl PatientOutcome {
    pub fn new(patient_id: impl Into<String>, exposure: f64, dlt: bool, pdy: f64, efficacy: f64) -> Self {
        Self {
            patient_id: patient_id.into(),
            exposure: PerEndpoint::uniform(exposure),
            dlt,
            pdy: Some(pdy),
            efficacy: Some(efficacy),
        }
    }
}

/// Sampler settings plus the mixing gate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub sampler: SamplerConfig,
    /// Fail with [`Error::PoorMixing`] when max split-R-hat >= 1.1. Batch
    /// simulations turn this off and inspect the stored diagnostics instead.
    pub require_mixing: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { sampler: SamplerConfig::default(), require_mixing: true }
    }
}

impl FitOptions {
    pub fn with_seed(self, seed: u64) -> Self {
        Self { sampler: self.sampler.with_seed(seed), ..self }
    }
}

pub(crate) const RHAT_LIMIT: f64 = 1.1;

/// Runs the sampler and applies the mixing gate.
pub(crate) fn run_sampler<T: LogDensity>(target: &T, opts: &FitOptions) -> Result<(ChainSet, Diagnostics)> {
    let chains = sample_posterior(target, &opts.sampler)?;
    let diag = diagnostics(&chains);
    if opts.require_mixing {
        if let Some(r) = diag.max_rhat() {
            if r >= RHAT_LIMIT {
                return Err(Error::PoorMixing(r));
            }
        }
    }
    Ok((chains, diag))
}

pub(crate) fn check_exposure(z: f64) -> Result<()> {
    if z > 0.0 && z.is_finite() {
        Ok(())
    } else {
        Err(Error::pre(format!("exposure must be positive and finite, got {z}")))
    }
}

pub(crate) fn check_gamma(name: &str, shape: f64, rate: f64) -> Result<()> {
    if shape > 0.0 && rate > 0.0 && shape.is_finite() && rate.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("{name} gamma prior needs positive shape and rate, got ({shape}, {rate})")))
    }
}

/// Sample mean and variance, used for sampler starting points.
pub(crate) fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    (m, v)
}
