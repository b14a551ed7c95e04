use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::allocate::{allocate_weighted, AllocMode};
use super::analysis::{analyze, Analysis, AnalysisSettings, PatientRecord};
use super::generate::{simulate_patient, SimPatient};
use super::scenario::ScenarioSpec;
use crate::error::{Error, Result};
use crate::escalation::{
    admissible_doses, calibrate_prior, fit_blrm_dose, next_dose, Cohort, Decision, EscalationSpec, EscalationState,
    StopReason,
};
use crate::exposure::{FitOptions, SafetyModelSpec};
use crate::pk::DoseRegimen;
use crate::prior::BvnPrior;
use crate::rng::derive_seed;
use crate::sampler::SamplerConfig;
use crate::utility::{od_x, recommend, u_probs};

// Seed streams within one replicate.
const STREAM_PATIENTS: u64 = 1;
const STREAM_BLRM: u64 = 2;
const STREAM_ANALYSIS: u64 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Design {
    /// Escalation only; U-DESPE recommends at the end.
    OneStep,
    /// Escalation, one probability-weighted allocation of the remaining
    /// patients, final recommendation.
    TwoStep,
    /// Escalation, then cohort-by-cohort allocation to the most probable
    /// maximum-gain regimen with a full refit after every cohort.
    MultiStep,
}

impl Design {
    pub fn default_budget(self) -> TrialBudget {
        match self {
            Design::OneStep => TrialBudget { n_escalation: 42, n_optimization: 0 },
            Design::TwoStep | Design::MultiStep => TrialBudget { n_escalation: 24, n_optimization: 18 },
        }
    }
}

impl fmt::Display for Design {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Design::OneStep => "one-step",
            Design::TwoStep => "two-step",
            Design::MultiStep => "multi-step",
        })
    }
}

impl FromStr for Design {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "one-step" | "one_step" => Ok(Design::OneStep),
            "two-step" | "two_step" => Ok(Design::TwoStep),
            "multi-step" | "multi_step" => Ok(Design::MultiStep),
            other => Err(Error::invalid(format!(
                "unknown design `{other}` (one-step, two-step, multi-step)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialBudget {
    pub n_escalation: usize,
    pub n_optimization: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialSettings {
    pub design: Design,
    pub budget: TrialBudget,
    pub alloc_mode: AllocMode,
    /// `max_n` is taken from `budget.n_escalation`.
    pub escalation: EscalationSpec,
    /// Sampler used for the dose-escalation model after each cohort.
    pub blrm_sampler: SamplerConfig,
    pub analysis: AnalysisSettings,
}

impl TrialSettings {
    pub fn new(design: Design) -> Self {
        Self {
            design,
            budget: design.default_budget(),
            alloc_mode: AllocMode::All,
            escalation: EscalationSpec::default(),
            blrm_sampler: SamplerConfig::default(),
            analysis: AnalysisSettings { require_mixing: false, ..AnalysisSettings::default() },
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.escalation.validate()?;
        self.analysis.validate()?;
        if self.budget.n_escalation == 0 {
            return Err(Error::invalid("n_escalation must be >= 1"));
        }
        if self.design != Design::OneStep && self.budget.n_optimization == 0 {
            return Err(Error::invalid(format!("{} design needs n_optimization >= 1", self.design)));
        }
        if self.blrm_sampler.n_chains == 0 || self.blrm_sampler.n_draws == 0 {
            return Err(Error::invalid("BLRM sampler needs at least one chain and one draw"));
        }
        Ok(())
    }

    fn escalation_spec(&self) -> EscalationSpec {
        EscalationSpec { max_n: self.budget.n_escalation, ..self.escalation.clone() }
    }
}

/// Outcome of one simulated trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub replicate: usize,
    pub seed: u64,
    pub design: Design,
    /// MTD declared by the escalation (regimen index).
    pub mtd: Option<usize>,
    pub stop_reason: Option<StopReason>,
    pub mgd: Option<usize>,
    pub od: Option<usize>,
    pub patients: Vec<usize>,
    pub dlts: Vec<usize>,
    /// Dose index of every escalation cohort, in order.
    pub escalation_path: Vec<usize>,
    /// Escalation cohorts given an inadmissible dose or skipping a level.
    pub escalation_violations: usize,
    /// Optimization patients allocated above the MTD.
    pub allocations_above_mtd: usize,
    pub pk_converged: Option<bool>,
    pub max_rhat: Option<f64>,
    /// Set when a model fit failed; the recommendation is then missing.
    pub error: Option<String>,
}

impl TrialResult {
    pub fn total_enrolled(&self) -> usize {
        self.patients.iter().sum()
    }

    /// The escalation found every dose too toxic.
    pub fn stopped_for_toxicity(&self) -> bool {
        self.stop_reason == Some(StopReason::AllToxic)
    }
}

struct Trial<'a> {
    scenario: &'a ScenarioSpec,
    settings: &'a TrialSettings,
    regimens: Vec<DoseRegimen>,
    seed: u64,
    patients: Vec<SimPatient>,
}

impl Trial<'_> {
    fn enroll(&mut self, regimen_index: usize, n: usize) -> Result<()> {
        for _ in 0..n {
            let i = self.patients.len();
            let p = simulate_patient(
                format!("P{:03}", i + 1),
                regimen_index,
                &self.regimens[regimen_index],
                self.scenario,
                &self.settings.analysis.metrics,
                derive_seed(derive_seed(self.seed, STREAM_PATIENTS), i as u64),
            )?;
            self.patients.push(p);
        }
        Ok(())
    }

    fn last_n_dlts(&self, n: usize) -> usize {
        self.patients[self.patients.len() - n..].iter().filter(|p| p.dlt.dlt).count()
    }

    fn analyze(&self, safety_spec: &SafetyModelSpec, step: u64) -> Result<Analysis> {
        let conc: Vec<_> = self.patients.iter().flat_map(|p| p.concentrations.iter().cloned()).collect();
        let records: Vec<_> = self
            .patients
            .iter()
            .map(|p| PatientRecord {
                id: p.id.clone(),
                received: p.received.clone(),
                dlt: p.dlt.dlt,
                pdy: Some(p.pdy),
                efficacy: Some(p.efficacy),
            })
            .collect();
        analyze(
            &conc,
            &records,
            &self.regimens,
            &self.scenario.pk,
            safety_spec,
            &self.settings.analysis,
            derive_seed(derive_seed(self.seed, STREAM_ANALYSIS), step),
        )
    }
}

/// Escalation outcome: MTD (if any), stop reason, cohort path, violations.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EscalationRun {
    pub mtd: Option<usize>,
    pub reason: StopReason,
    /// Dose index of every cohort, in order.
    pub path: Vec<usize>,
    /// Cohorts given an inadmissible dose or skipping a level.
    pub violations: usize,
}

fn escalate(trial: &mut Trial<'_>, spec: &EscalationSpec, prior: &BvnPrior) -> Result<EscalationRun> {
    let mut state = EscalationState::new(spec.doses.len());
    let mut violations = 0;
    let mut path = Vec::new();
    let mut cohort = 0u64;
    loop {
        let opts = FitOptions {
            sampler: trial.settings.blrm_sampler.with_seed(derive_seed(derive_seed(trial.seed, STREAM_BLRM), cohort)),
            require_mixing: false,
        };
        let posterior = fit_blrm_dose(&state, spec, prior, &opts)?;
        match next_dose(&state, &posterior, spec) {
            Decision::Continue(j) => {
                let admissible = admissible_doses(&posterior, spec);
                let cap = state.highest_tried().map_or(0, |h| h + 1);
                if !admissible.contains(&j) || j > cap {
                    violations += 1;
                }
                let n = spec.cohort_size.min(spec.max_n - state.total_n());
                trial.enroll(j, n)?;
                let n_dlt = trial.last_n_dlts(n);
                state.record_cohort(Cohort { dose_index: j, n, n_dlt })?;
                path.push(j);
                cohort += 1;
            }
            Decision::StopWithMtd { mtd, reason } => {
                return Ok(EscalationRun { mtd: Some(mtd), reason, path, violations });
            }
            Decision::StopNoMtd => {
                return Ok(EscalationRun { mtd: None, reason: StopReason::AllToxic, path, violations });
            }
        }
    }
}

/// Probabilities `u_j(0)` over regimens `0..=mtd`.
fn tolerated_mgd_probs(analysis: &Analysis, mtd: usize, trial: &Trial<'_>) -> Result<Vec<f64>> {
    let prefix = analysis.endpoints.prefix(mtd + 1);
    Ok(u_probs(&prefix, &trial.settings.analysis.gain, 0.0)?.u)
}

/// Runs only the dose-escalation phase of a trial, with the same seed
/// streams as [`run_trial`].
pub fn run_escalation(scenario: &ScenarioSpec, settings: &TrialSettings, seed: u64) -> Result<EscalationRun> {
    scenario.validate()?;
    settings.validate()?;
    let spec = EscalationSpec { doses: scenario.doses.clone(), ..settings.escalation_spec() };
    let prior = calibrate_prior(&spec)?;
    let regimens = scenario.regimens();
    let mut trial = Trial { scenario, settings, regimens, seed, patients: Vec::new() };
    escalate(&mut trial, &spec, &prior)
}

/// Simulates one trial of `settings.design` under `scenario`.
///
/// Model-fit failures after the escalation do not abort: the result carries
/// the error message and no U-DESPE recommendation.
pub fn run_trial(scenario: &ScenarioSpec, settings: &TrialSettings, replicate: usize, seed: u64) -> Result<TrialResult> {
    scenario.validate()?;
    settings.validate()?;
    let spec = EscalationSpec { doses: scenario.doses.clone(), ..settings.escalation_spec() };
    let prior = calibrate_prior(&spec)?;
    let regimens = scenario.regimens();
    let safety_spec = settings.analysis.safety_spec(&scenario.pk, &regimens)?;
    let mut trial = Trial { scenario, settings, regimens, seed, patients: Vec::new() };

    let esc = escalate(&mut trial, &spec, &prior)?;
    let mut result = TrialResult {
        replicate,
        seed,
        design: settings.design,
        mtd: esc.mtd,
        stop_reason: Some(esc.reason),
        mgd: None,
        od: None,
        patients: Vec::new(),
        dlts: Vec::new(),
        escalation_path: esc.path,
        escalation_violations: esc.violations,
        allocations_above_mtd: 0,
        pk_converged: None,
        max_rhat: None,
        error: None,
    };

    if let Some(mtd) = esc.mtd {
        if let Err(e) = optimize_and_recommend(&mut trial, &safety_spec, mtd, &mut result) {
            result.error = Some(e.to_string());
        }
    }

    let j = scenario.doses.len();
    result.patients = vec![0; j];
    result.dlts = vec![0; j];
    for p in &trial.patients {
        result.patients[p.regimen_index] += 1;
        result.dlts[p.regimen_index] += usize::from(p.dlt.dlt);
    }
    Ok(result)
}

fn optimize_and_recommend(
    trial: &mut Trial<'_>,
    safety_spec: &SafetyModelSpec,
    mtd: usize,
    result: &mut TrialResult,
) -> Result<()> {
    let settings = trial.settings;
    let mut step = 0u64;
    let allocate = |trial: &mut Trial<'_>, counts: &[usize], result: &mut TrialResult| -> Result<()> {
        for (j, &c) in counts.iter().enumerate() {
            if j > mtd {
                result.allocations_above_mtd += c;
            }
            trial.enroll(j, c)?;
        }
        Ok(())
    };

    match settings.design {
        Design::OneStep => {}
        Design::TwoStep => {
            let analysis = trial.analyze(safety_spec, step)?;
            step += 1;
            let u = tolerated_mgd_probs(&analysis, mtd, trial)?;
            let counts = match allocate_weighted(settings.budget.n_optimization, &u, settings.alloc_mode) {
                Ok(c) => c,
                // no draw admits any tolerated regimen: everyone goes to the MTD
                Err(Error::Precondition(_)) => {
                    let mut c = vec![0; mtd + 1];
                    c[mtd] = settings.budget.n_optimization;
                    c
                }
                Err(e) => return Err(e),
            };
            allocate(trial, &counts, result)?;
        }
        Design::MultiStep => {
            let mut left = settings.budget.n_optimization;
            while left > 0 {
                let analysis = trial.analyze(safety_spec, step)?;
                step += 1;
                let u = tolerated_mgd_probs(&analysis, mtd, trial)?;
                let j = od_x(&u).unwrap_or(mtd);
                let n = settings.escalation.cohort_size.min(left);
                let mut counts = vec![0; j + 1];
                counts[j] = n;
                allocate(trial, &counts, result)?;
                left -= n;
            }
        }
    }

    let analysis = trial.analyze(safety_spec, step)?;
    result.pk_converged = Some(analysis.pk_converged);
    result.max_rhat = analysis.max_rhat();
    let rec = recommend(&analysis.endpoints, &settings.analysis.gain, settings.analysis.x_percent)?;
    result.mgd = rec.mgd_x;
    result.od = rec.od_x;
    Ok(())
}

/// Runs `n` replicates in parallel; replicate `r` uses seed
/// `derive_seed(master_seed, r)`, so results do not depend on scheduling.
pub fn run_replicates(
    scenario: &ScenarioSpec,
    settings: &TrialSettings,
    n: usize,
    master_seed: u64,
) -> Result<Vec<TrialResult>> {
    (0..n)
        .into_par_iter()
        .map(|r| run_trial(scenario, settings, r, derive_seed(master_seed, r as u64)))
        .collect()
}
