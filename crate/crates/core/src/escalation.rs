//! Dose escalation with a two-parameter Bayesian logistic model on the dose
//! scale and escalation with overdose control.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exposure::FitOptions;
use crate::prior::{calibrate_bvn, BvnPrior, CalibrationTargets};
use crate::sampler::{Diagnostics, LogDensity};
use crate::stats::{bernoulli_logit_ll, logistic};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EscalationSpec {
    pub doses: Vec<f64>,
    pub d_ref: f64,
    pub delta_min: f64,
    pub delta_max: f64,
    /// A dose is admissible while Pr(p > delta_max) stays below this.
    pub ewoc: f64,
    pub cohort_size: usize,
    pub max_n: usize,
    pub accuracy_threshold: f64,
    pub accuracy_cohorts: usize,
    pub underdose_prob_low: f64,
    pub acceptable_prob_high: f64,
}

impl Default for EscalationSpec {
    fn default() -> Self {
        Self {
            doses: vec![10.0, 15.0, 25.0, 35.0, 50.0, 70.0],
            d_ref: 50.0,
            delta_min: 0.20,
            delta_max: 0.33,
            ewoc: 0.25,
            cohort_size: 3,
            max_n: 24,
            accuracy_threshold: 0.60,
            accuracy_cohorts: 3,
            underdose_prob_low: 0.90,
            acceptable_prob_high: 0.20,
        }
    }
}

impl EscalationSpec {
    pub fn validate(&self) -> Result<()> {
        if self.doses.is_empty() || self.doses.iter().any(|d| !(*d > 0.0 && d.is_finite())) {
            return Err(Error::invalid("doses must be a nonempty list of positive values"));
        }
        if self.doses.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("doses must be strictly increasing"));
        }
        if !(self.d_ref > 0.0 && self.d_ref.is_finite()) {
            return Err(Error::invalid(format!("d_ref must be positive, got {}", self.d_ref)));
        }
        for (name, v) in [
            ("delta_min", self.delta_min),
            ("delta_max", self.delta_max),
            ("ewoc", self.ewoc),
            ("accuracy_threshold", self.accuracy_threshold),
            ("underdose_prob_low", self.underdose_prob_low),
            ("acceptable_prob_high", self.acceptable_prob_high),
        ] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::invalid(format!("{name} must lie in (0, 1), got {v}")));
            }
        }
        if self.delta_min >= self.delta_max {
            return Err(Error::invalid("delta_min must be below delta_max"));
        }
        if self.cohort_size == 0 || self.max_n == 0 || self.accuracy_cohorts == 0 {
            return Err(Error::invalid("cohort_size, max_n and accuracy_cohorts must be >= 1"));
        }
        Ok(())
    }

    /// `log(d / d_ref)` for every dose.
    pub fn covariates(&self) -> Vec<f64> {
        self.doses.iter().map(|d| (d / self.d_ref).ln()).collect()
    }

    pub fn calibration_targets(&self) -> CalibrationTargets {
        CalibrationTargets {
            delta_min: self.delta_min,
            delta_max: self.delta_max,
            underdose_prob_low: self.underdose_prob_low,
            acceptable_prob_high: self.acceptable_prob_high,
            ..CalibrationTargets::default()
        }
    }
}

/// Prior on the dose-scale model such that the lowest dose is probably an
/// underdose and the highest dose is rarely acceptable.
pub fn calibrate_prior(spec: &EscalationSpec) -> Result<BvnPrior> {
    spec.validate()?;
    let x = spec.covariates();
    calibrate_bvn(x[0], x[x.len() - 1], &spec.calibration_targets())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cohort {
    pub dose_index: usize,
    pub n: usize,
    pub n_dlt: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopReason {
    /// The recommended dose was given to the last cohorts and its target
    /// interval probability reached the accuracy threshold.
    Accuracy,
    MaxSampleSize,
    /// Every dose exceeds the overdose control limit.
    AllToxic,
}

impl fmt::Display for StopReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StopReason::Accuracy => "accuracy",
            StopReason::MaxSampleSize => "max_n",
            StopReason::AllToxic => "all_toxic",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EscalationState {
    pub n_treated: Vec<usize>,
    pub n_dlt: Vec<usize>,
    pub history: Vec<Cohort>,
    pub stopped: Option<StopReason>,
    pub mtd: Option<usize>,
}

impl EscalationState {
    pub fn new(n_doses: usize) -> Self {
        Self {
            n_treated: vec![0; n_doses],
            n_dlt: vec![0; n_doses],
            history: Vec::new(),
            stopped: None,
            mtd: None,
        }
    }

    /// State with aggregate counts and no cohort history.
    pub fn from_counts(n_treated: Vec<usize>, n_dlt: Vec<usize>) -> Result<Self> {
        if n_treated.len() != n_dlt.len() {
            return Err(Error::pre("treated and DLT counts differ in length"));
        }
        if n_treated.iter().zip(&n_dlt).any(|(n, d)| d > n) {
            return Err(Error::pre("DLT count exceeds treated count"));
        }
        Ok(Self { n_treated, n_dlt, history: Vec::new(), stopped: None, mtd: None })
    }

    pub fn record_cohort(&mut self, cohort: Cohort) -> Result<()> {
        if self.stopped.is_some() {
            return Err(Error::pre("escalation already stopped"));
        }
        if cohort.dose_index >= self.n_treated.len() {
            return Err(Error::pre(format!("dose index {} out of range", cohort.dose_index)));
        }
        if cohort.n_dlt > cohort.n {
            return Err(Error::pre("cohort DLT count exceeds its size"));
        }
        self.n_treated[cohort.dose_index] += cohort.n;
        self.n_dlt[cohort.dose_index] += cohort.n_dlt;
        self.history.push(cohort);
        Ok(())
    }

    pub fn total_n(&self) -> usize {
        self.n_treated.iter().sum()
    }

    pub fn highest_tried(&self) -> Option<usize> {
        self.n_treated.iter().rposition(|&n| n > 0)
    }

    pub fn stop(&mut self, reason: StopReason, mtd: Option<usize>) {
        self.stopped = Some(reason);
        self.mtd = mtd;
    }
}

/// Posterior draws of the dose-scale model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlrmPosterior {
    /// `(phi1, phi2)` per draw.
    pub draws: Vec<[f64; 2]>,
    pub covariates: Vec<f64>,
    pub diagnostics: Option<Diagnostics>,
}

impl BlrmPosterior {
    /// DLT probability at dose `j` under every draw.
    pub fn prob_draws(&self, j: usize) -> impl Iterator<Item = f64> + '_ {
        let x = self.covariates[j];
        self.draws.iter().map(move |d| logistic(d[0] + d[1].exp() * x))
    }

    pub fn mean_prob(&self, j: usize) -> f64 {
        self.prob_draws(j).sum::<f64>() / self.draws.len() as f64
    }

    pub fn prob_above(&self, j: usize, t: f64) -> f64 {
        self.prob_draws(j).filter(|&p| p > t).count() as f64 / self.draws.len() as f64
    }

    pub fn prob_below(&self, j: usize, t: f64) -> f64 {
        self.prob_draws(j).filter(|&p| p < t).count() as f64 / self.draws.len() as f64
    }

    /// Pr(lo < p < hi) at dose `j`.
    pub fn prob_interval(&self, j: usize, lo: f64, hi: f64) -> f64 {
        self.prob_draws(j).filter(|&p| lo < p && p < hi).count() as f64 / self.draws.len() as f64
    }
}

struct BlrmTarget<'a> {
    prior: &'a BvnPrior,
    x: Vec<f64>,
    n: Vec<f64>,
    y: Vec<f64>,
}

impl LogDensity for BlrmTarget<'_> {
    fn dim(&self) -> usize {
        2
    }

    fn log_density(&self, v: &[f64]) -> f64 {
        let slope = v[1].exp();
        let mut ll = 0.0;
        for ((&x, &n), &y) in self.x.iter().zip(&self.n).zip(&self.y) {
            let eta = v[0] + slope * x;
            ll += y * bernoulli_logit_ll(eta, true) + (n - y) * bernoulli_logit_ll(eta, false);
        }
        ll + self.prior.log_density(v)
    }

    fn initial_point(&self) -> Vec<f64> {
        self.prior.mean.to_vec()
    }
}

/// Posterior of the dose-scale model given the per-dose counts in `state`.
/// With no patients yet the posterior is the prior.
pub fn fit_blrm_dose(
    state: &EscalationState,
    spec: &EscalationSpec,
    prior: &BvnPrior,
    opts: &FitOptions,
) -> Result<BlrmPosterior> {
    spec.validate()?;
    prior.validate()?;
    if state.n_treated.len() != spec.doses.len() {
        return Err(Error::pre("state and spec disagree on the number of doses"));
    }
    let covariates = spec.covariates();
    let mut target = BlrmTarget { prior, x: vec![], n: vec![], y: vec![] };
    for (j, (&n, &y)) in state.n_treated.iter().zip(&state.n_dlt).enumerate() {
        if n > 0 {
            target.x.push(covariates[j]);
            target.n.push(n as f64);
            target.y.push(y as f64);
        }
    }
    let (chains, diagnostics) = crate::exposure::run_sampler(&target, opts)?;
    let draws = chains.iter().map(|d| [d[0], d[1]]).collect();
    Ok(BlrmPosterior { draws, covariates, diagnostics: Some(diagnostics) })
}

/// Doses whose posterior overdose probability is strictly below the limit.
pub fn admissible_doses(posterior: &BlrmPosterior, spec: &EscalationSpec) -> Vec<usize> {
    (0..posterior.covariates.len())
        .filter(|&j| posterior.prob_above(j, spec.delta_max) < spec.ewoc)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Decision {
    /// Treat the next cohort at this dose.
    Continue(usize),
    /// Stop and declare this dose the MTD.
    StopWithMtd { mtd: usize, reason: StopReason },
    /// Stop without an MTD: no dose is admissible.
    StopNoMtd,
}

/// Recommended dose among admissible doses at most one level above the
/// highest dose tried, maximizing the posterior target-interval probability
/// (ties go to the higher dose). `None` if no such dose exists.
pub fn recommended_dose(state: &EscalationState, posterior: &BlrmPosterior, spec: &EscalationSpec) -> Option<usize> {
    let cap = state.highest_tried().map_or(0, |h| h + 1);
    let mut best: Option<(usize, f64)> = None;
    for j in admissible_doses(posterior, spec).into_iter().filter(|&j| j <= cap) {
        let target = posterior.prob_interval(j, spec.delta_min, spec.delta_max);
        if best.is_none_or(|(_, b)| target >= b) {
            best = Some((j, target));
        }
    }
    best.map(|(j, _)| j)
}

/// Next step of the escalation given the current posterior.
pub fn next_dose(state: &EscalationState, posterior: &BlrmPosterior, spec: &EscalationSpec) -> Decision {
    if state.history.is_empty() && state.total_n() == 0 {
        return Decision::Continue(0);
    }
    let Some(rec) = recommended_dose(state, posterior, spec) else {
        return Decision::StopNoMtd;
    };
    let k = spec.accuracy_cohorts;
    let recent_at_rec =
        state.history.len() >= k && state.history[state.history.len() - k..].iter().all(|c| c.dose_index == rec);
    if recent_at_rec && posterior.prob_interval(rec, spec.delta_min, spec.delta_max) >= spec.accuracy_threshold {
        return Decision::StopWithMtd { mtd: rec, reason: StopReason::Accuracy };
    }
    if state.total_n() >= spec.max_n {
        return Decision::StopWithMtd { mtd: rec, reason: StopReason::MaxSampleSize };
    }
    Decision::Continue(rec)
}
