use serde::{Deserialize, Serialize};

use super::{check_exposure, run_sampler, FitOptions, PatientOutcome, DEFAULT_Z_REF};
use crate::error::{Error, Result};
use crate::pk::{DoseRegimen, ExposureKind, PopPkParams};
use crate::prior::{calibrate_bvn, BvnPrior, CalibrationTargets};
use crate::sampler::{Diagnostics, LogDensity};
use crate::stats::{bernoulli_logit_ll, logistic};

/// Logistic DLT model `logit p = phi1 + exp(phi2) log(Z / z_ref)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SafetyModelSpec {
    pub z_ref: f64,
    pub prior: BvnPrior,
}

impl SafetyModelSpec {
    pub fn new(z_ref: f64, prior: BvnPrior) -> Result<Self> {
        let spec = Self { z_ref, prior };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.z_ref > 0.0 && self.z_ref.is_finite()) {
            return Err(Error::invalid(format!("z_ref must be positive, got {}", self.z_ref)));
        }
        self.prior.validate()
    }

    /// Prior calibrated so that the lowest anchor exposure is likely below
    /// `delta_min` and the highest anchor is rarely acceptable.
    pub fn calibrated(z_low: f64, z_high: f64, z_ref: f64, targets: &CalibrationTargets) -> Result<Self> {
        check_exposure(z_low)?;
        check_exposure(z_high)?;
        let prior = calibrate_bvn((z_low / z_ref).ln(), (z_high / z_ref).ln(), targets)?;
        Self::new(z_ref, prior)
    }

    /// Calibrated prior whose anchors are the typical-individual exposures
    /// of the lowest and highest regimen under `pk`.
    pub fn calibrated_for_regimens(
        pk: &PopPkParams,
        lowest: &DoseRegimen,
        highest: &DoseRegimen,
        kind: ExposureKind,
        z_ref: f64,
        targets: &CalibrationTargets,
    ) -> Result<Self> {
        let typical = pk.typical();
        let z_low = kind.evaluate(&typical, lowest)?;
        let z_high = kind.evaluate(&typical, highest)?;
        Self::calibrated(z_low, z_high, z_ref, targets)
    }
}

impl Default for SafetyModelSpec {
    /// Reference PK, once-daily 10 mg and 70 mg anchors, AUC24, `Z_ref = 40`.
    fn default() -> Self {
        Self::calibrated_for_regimens(
            &PopPkParams::REFERENCE,
            &DoseRegimen::daily("low", 10.0),
            &DoseRegimen::daily("high", 70.0),
            ExposureKind::Auc24,
            DEFAULT_Z_REF,
            &CalibrationTargets::default(),
        )
        .expect("default safety prior calibrates")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SafetyDraw {
    pub phi1: f64,
    pub phi2: f64,
}

impl SafetyDraw {
    /// DLT probability at log-relative exposure `lz = log(Z / z_ref)`.
    pub fn prob_at_log(&self, lz: f64) -> f64 {
        logistic(self.phi1 + self.phi2.exp() * lz)
    }

    pub fn prob(&self, z: f64, z_ref: f64) -> f64 {
        self.prob_at_log((z / z_ref).ln())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SafetyFit {
    pub spec: SafetyModelSpec,
    pub draws: Vec<SafetyDraw>,
    pub diagnostics: Diagnostics,
}

impl SafetyFit {
    pub fn posterior_mean(&self) -> SafetyDraw {
        let n = self.draws.len() as f64;
        SafetyDraw {
            phi1: self.draws.iter().map(|d| d.phi1).sum::<f64>() / n,
            phi2: self.draws.iter().map(|d| d.phi2).sum::<f64>() / n,
        }
    }
}

struct SafetyTarget<'a> {
    prior: &'a BvnPrior,
    lz: Vec<f64>,
    y: Vec<bool>,
}

impl LogDensity for SafetyTarget<'_> {
    fn dim(&self) -> usize {
        2
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        let slope = x[1].exp();
        let ll: f64 = self
            .lz
            .iter()
            .zip(&self.y)
            .map(|(&lz, &y)| bernoulli_logit_ll(x[0] + slope * lz, y))
            .sum();
        ll + self.prior.log_density(x)
    }

    fn initial_point(&self) -> Vec<f64> {
        self.prior.mean.to_vec()
    }
}

/// Posterior draws of `(phi1, phi2)` given binary DLT outcomes.
pub fn fit_safety(data: &[PatientOutcome], spec: &SafetyModelSpec, opts: &FitOptions) -> Result<SafetyFit> {
    spec.validate()?;
    if data.is_empty() {
        return Err(Error::pre("safety fit needs at least one observation"));
    }
    let mut lz = Vec::with_capacity(data.len());
    for o in data {
        check_exposure(o.exposure.safety)?;
        lz.push((o.exposure.safety / spec.z_ref).ln());
    }
    let target = SafetyTarget { prior: &spec.prior, lz, y: data.iter().map(|o| o.dlt).collect() };
    let (chains, diagnostics) = run_sampler(&target, opts)?;
    let draws = chains.iter().map(|x| SafetyDraw { phi1: x[0], phi2: x[1] }).collect();
    Ok(SafetyFit { spec: *spec, draws, diagnostics })
}

/// DLT probability at exposure `z`, one value per posterior draw.
pub fn predict_safety(fit: &SafetyFit, z: f64) -> Result<Vec<f64>> {
    check_exposure(z)?;
    let lz = (z / fit.spec.z_ref).ln();
    Ok(fit.draws.iter().map(|d| d.prob_at_log(lz)).collect())
}
