//! One full U-DESPE evaluation: population PK fit, estimated individual
//! exposures, the three exposure-response fits and the per-regimen endpoint
//! draws they imply.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exposure::{
    fit_efficacy, fit_pdy, fit_safety, EfficacyFit, EfficacyModelSpec, FitOptions, MetricMap, PatientOutcome,
    PdyFit, PdyModelSpec, PerEndpoint, SafetyFit, SafetyModelSpec, DEFAULT_THRESHOLD_C, DEFAULT_Z_REF,
};
use crate::pk::{fit_poppk, ConcentrationSample, DoseRegimen, PopPkFit, PopPkParams, SaemConfig};
use crate::prior::CalibrationTargets;
use crate::rng::derive_seed;
use crate::sampler::SamplerConfig;
use crate::utility::{endpoint_by_dose, EndpointByDose, GainParams, MarginalBudget, DEFAULT_X_PERCENT};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisSettings {
    pub gain: GainParams,
    pub x_percent: f64,
    pub metrics: MetricMap,
    pub z_ref: f64,
    pub threshold_c: f64,
    pub sampler: SamplerConfig,
    /// See [`FitOptions::require_mixing`].
    pub require_mixing: bool,
    pub saem: SaemConfig,
    pub marginal: MarginalBudget,
    /// Gamma(shape, rate) prior on the efficacy spline coefficients. The
    /// default is vague, like the precision priors: its spike at zero lets
    /// unsupported spline pieces vanish, which is what flattens a plateau
    /// or a null exposure effect exactly.
    pub coef_prior: (f64, f64),
    /// Exposure-scale safety prior: Pr(p(lowest) < delta_min) and
    /// Pr(p(highest) < delta_max) at the typical individual.
    pub safety_underdose_prob: f64,
    pub safety_acceptable_prob: f64,
}

impl Default for AnalysisSettings {
    fn default() -> Self {
        let t = CalibrationTargets::default();
        Self {
            gain: GainParams::default(),
            x_percent: DEFAULT_X_PERCENT,
            metrics: MetricMap::default(),
            z_ref: DEFAULT_Z_REF,
            threshold_c: DEFAULT_THRESHOLD_C,
            sampler: SamplerConfig::default(),
            require_mixing: true,
            saem: SaemConfig::default(),
            marginal: MarginalBudget::default(),
            coef_prior: (0.01, 0.01),
            safety_underdose_prob: t.underdose_prob_low,
            safety_acceptable_prob: t.acceptable_prob_high,
        }
    }
}

impl AnalysisSettings {
    pub fn validate(&self) -> Result<()> {
        self.gain.validate()?;
        if !(self.x_percent >= 0.0 && self.x_percent.is_finite()) {
            return Err(Error::invalid(format!("x_percent must be >= 0, got {}", self.x_percent)));
        }
        if !(self.z_ref > 0.0 && self.z_ref.is_finite()) {
            return Err(Error::invalid(format!("z_ref must be > 0, got {}", self.z_ref)));
        }
        if !(0.0..=1.0).contains(&self.threshold_c) {
            return Err(Error::invalid(format!("threshold_c must lie in [0, 1], got {}", self.threshold_c)));
        }
        if self.sampler.n_chains == 0 || self.sampler.n_draws == 0 {
            return Err(Error::invalid("sampler needs at least one chain and one draw"));
        }
        if self.marginal.posterior_draws == 0 || self.marginal.exposure_draws == 0 {
            return Err(Error::invalid("marginal budget must be >= 1 in both dimensions"));
        }
        for (name, v) in [
            ("safety_underdose_prob", self.safety_underdose_prob),
            ("safety_acceptable_prob", self.safety_acceptable_prob),
        ] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::invalid(format!("{name} must lie in (0, 1), got {v}")));
            }
        }
        Ok(())
    }

    pub fn fit_options(&self, seed: u64) -> FitOptions {
        FitOptions { sampler: self.sampler.with_seed(seed), require_mixing: self.require_mixing }
    }

    pub fn calibration_targets(&self) -> CalibrationTargets {
        CalibrationTargets {
            delta_min: self.gain.delta_min,
            delta_max: self.gain.delta_max,
            underdose_prob_low: self.safety_underdose_prob,
            acceptable_prob_high: self.safety_acceptable_prob,
            ..CalibrationTargets::default()
        }
    }

    /// Safety prior anchored at the typical exposures of the lowest and
    /// highest candidate regimen under `pk`.
    pub fn safety_spec(&self, pk: &PopPkParams, regimens: &[DoseRegimen]) -> Result<SafetyModelSpec> {
        let [lo, .., hi] = regimens else {
            return Err(Error::pre("safety prior calibration needs at least two regimens"));
        };
        SafetyModelSpec::calibrated_for_regimens(pk, lo, hi, self.metrics.safety, self.z_ref, &self.calibration_targets())
    }

    pub fn pdy_spec(&self) -> PdyModelSpec {
        PdyModelSpec { z_ref: self.z_ref, threshold_c: self.threshold_c, ..PdyModelSpec::default() }
    }
}

/// What was observed for one patient, apart from concentrations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientRecord {
    pub id: String,
    /// Administrations actually given.
    pub received: DoseRegimen,
    pub dlt: bool,
    pub pdy: Option<f64>,
    pub efficacy: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct Analysis {
    pub pk_fit: PopPkFit,
    pub pk_converged: bool,
    /// Outcomes on estimated exposures.
    pub outcomes: Vec<PatientOutcome>,
    pub safety: SafetyFit,
    pub pdy: PdyFit,
    pub efficacy: EfficacyFit,
    pub endpoints: EndpointByDose,
}

impl Analysis {
    /// Largest split-R-hat over the three exposure-response fits.
    pub fn max_rhat(&self) -> Option<f64> {
        [&self.safety.diagnostics, &self.pdy.diagnostics, &self.efficacy.diagnostics]
            .iter()
            .filter_map(|d| d.max_rhat())
            .reduce(f64::max)
    }
}

/// Runs the full pipeline. A population PK fit that stops without meeting
/// its convergence criterion is used as is and reported through
/// `pk_converged`.
pub fn analyze(
    concentrations: &[ConcentrationSample],
    patients: &[PatientRecord],
    regimens: &[DoseRegimen],
    pk_init: &PopPkParams,
    safety_spec: &SafetyModelSpec,
    settings: &AnalysisSettings,
    seed: u64,
) -> Result<Analysis> {
    settings.validate()?;
    if patients.is_empty() {
        return Err(Error::pre("no patients to analyze"));
    }
    let received: HashMap<String, DoseRegimen> =
        patients.iter().map(|p| (p.id.clone(), p.received.clone())).collect();
    if received.len() != patients.len() {
        return Err(Error::pre("duplicate patient ids"));
    }
    let saem = SaemConfig { seed: derive_seed(seed, 0), ..settings.saem.clone() };
    let (pk_fit, pk_converged) = match fit_poppk(concentrations, &received, pk_init, &saem) {
        Ok(fit) => {
            let c = fit.converged;
            (fit, c)
        }
        Err(Error::NonConvergence { last, .. }) => (*last, false),
        Err(e) => return Err(e),
    };

    let metrics = settings.metrics;
    let outcomes = patients
        .iter()
        .map(|p| {
            let ind = pk_fit
                .individual_estimates
                .get(&p.id)
                .ok_or_else(|| Error::Estimation(format!("no PK estimate for patient `{}`", p.id)))?;
            let exposure = PerEndpoint {
                safety: metrics.safety.evaluate(ind, &p.received)?,
                pdy: metrics.pdy.evaluate(ind, &p.received)?,
                efficacy: metrics.efficacy.evaluate(ind, &p.received)?,
            };
            Ok(PatientOutcome { patient_id: p.id.clone(), exposure, dlt: p.dlt, pdy: p.pdy, efficacy: p.efficacy })
        })
        .collect::<Result<Vec<_>>>()?;

    let safety = fit_safety(&outcomes, safety_spec, &settings.fit_options(derive_seed(seed, 1)))?;
    let pdy = fit_pdy(&outcomes, &settings.pdy_spec(), &settings.fit_options(derive_seed(seed, 2)))?;
    let eff_exposures: Vec<f64> =
        outcomes.iter().filter(|o| o.efficacy.is_some()).map(|o| o.exposure.efficacy).collect();
    let eff_spec = EfficacyModelSpec {
        z_ref: settings.z_ref,
        coef_prior: settings.coef_prior,
        ..EfficacyModelSpec::for_exposures(&eff_exposures)?
    };
    eff_spec.validate()?;
    let efficacy = fit_efficacy(&outcomes, &eff_spec, &settings.fit_options(derive_seed(seed, 3)))?;
    let endpoints = endpoint_by_dose(
        &pk_fit,
        &safety,
        &pdy,
        &efficacy,
        regimens,
        &metrics,
        settings.marginal,
        derive_seed(seed, 4),
    )?;
    Ok(Analysis { pk_fit, pk_converged, outcomes, safety, pdy, efficacy, endpoints })
}
