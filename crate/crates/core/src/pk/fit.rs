//! Population estimation for the one-compartment model by stochastic
//! approximation EM. Individual log-parameters `(log ka_i, log CL_i)` are the
//! latent variables, drawn with Metropolis-Hastings kernels in the E-step; `V`
//! has no random effect and is updated by profiling the complete-data
//! likelihood; the proportional error SD is profiled alongside it.

use std::collections::{BTreeMap, HashMap};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::exposure::ExposureKind;
use super::model::{conc_sum, Administration, DoseRegimen, IndividualPk, PopPkParams};
use super::simulate::{draw_individual, ConcentrationSample};
use crate::error::{Error, Result};
use crate::optim::{golden_section_max, nelder_mead};
use crate::rng::{derive_seed, rng_from_seed};

/// Concentrations are floored here before entering the proportional error
/// model, which is singular at zero.
const CONC_FLOOR: f64 = 1e-12;
const OMEGA_SQ_FLOOR: f64 = 1e-8;
const SIGMA_FLOOR: f64 = 1e-4;
const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaemConfig {
    /// Iterations with step size 1 (exploration).
    pub burn_in: usize,
    /// Iterations with step size 1/k (averaging).
    pub smoothing: usize,
    /// Additional averaging iterations allowed before giving up.
    pub max_extra_smoothing: usize,
    /// Convergence threshold on the relative change of every parameter.
    pub tolerance: f64,
    /// Per-iteration decay bound on variances during burn-in.
    pub annealing: f64,
    /// Metropolis sweeps per patient per iteration.
    pub mh_sweeps: usize,
    /// Prior draws per patient for the importance-sampled log-likelihood.
    pub loglik_draws: usize,
    pub seed: u64,
}

impl Default for SaemConfig {
    fn default() -> Self {
        Self {
            burn_in: 300,
            smoothing: 100,
            max_extra_smoothing: 400,
            tolerance: 1e-3,
            annealing: 0.95,
            mh_sweeps: 2,
            loglik_draws: 200,
            seed: 0,
        }
    }
}

/// Output of a population fit. Immutable once built; new individuals are
/// drawn from the fitted population through the seeded samplers below.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopPkFit {
    pub population: PopPkParams,
    /// Empirical-Bayes (posterior mode) individual parameters by patient id.
    pub individual_estimates: BTreeMap<String, IndividualPk>,
    pub log_likelihood: f64,
    pub trajectory: Vec<PopPkParams>,
    pub converged: bool,
}

impl PopPkFit {
    /// Wraps known population parameters (no data, no individual estimates).
    pub fn from_population(population: PopPkParams) -> Result<Self> {
        population.validate()?;
        Ok(Self {
            population,
            individual_estimates: BTreeMap::new(),
            log_likelihood: f64::NAN,
            trajectory: Vec::new(),
            converged: true,
        })
    }

    pub fn sample_individuals(&self, n: usize, seed: u64) -> Vec<IndividualPk> {
        let mut rng = rng_from_seed(seed);
        (0..n).map(|_| draw_individual(&self.population, &mut rng)).collect()
    }
}

/// Draws `n_draws` new individuals from the fitted population and derives the
/// requested metric (default window) for each under `regimen`.
pub fn sample_population_exposure(
    fit: &PopPkFit,
    regimen: &DoseRegimen,
    kind: ExposureKind,
    n_draws: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if n_draws == 0 {
        return Err(Error::pre("n_draws must be >= 1"));
    }
    let window = kind.default_window(regimen)?;
    fit.sample_individuals(n_draws, seed)
        .iter()
        .map(|ind| super::derive_exposure(ind, regimen, kind, window))
        .collect()
}

struct PatientData {
    id: String,
    admins: Vec<Administration>,
    times: Vec<f64>,
    obs: Vec<f64>,
}

impl PatientData {
    fn loglik(&self, log_ka: f64, log_cl: f64, v: f64, sigma: f64) -> f64 {
        let ka = log_ka.exp();
        let k = log_cl.exp() / v;
        let mut ll = 0.0;
        for (&t, &c) in self.times.iter().zip(&self.obs) {
            let f = conc_sum(ka, k, v, &self.admins, t).max(CONC_FLOOR);
            let sd = sigma * f;
            let r = (c - f) / sd;
            ll -= 0.5 * LN_2PI + sd.ln() + 0.5 * r * r;
        }
        ll
    }

    /// Sum of squared relative residuals and sum of log predictions.
    fn residual_stats(&self, log_ka: f64, log_cl: f64, v: f64) -> (f64, f64) {
        let ka = log_ka.exp();
        let k = log_cl.exp() / v;
        let mut ss = 0.0;
        let mut log_f = 0.0;
        for (&t, &c) in self.times.iter().zip(&self.obs) {
            let f = conc_sum(ka, k, v, &self.admins, t).max(CONC_FLOOR);
            let r = (c - f) / f;
            ss += r * r;
            log_f += f.ln();
        }
        (ss, log_f)
    }
}

fn group_patients(
    data: &[ConcentrationSample],
    regimens: &HashMap<String, DoseRegimen>,
) -> Result<Vec<PatientData>> {
    let mut by_id: BTreeMap<&str, Vec<&ConcentrationSample>> = BTreeMap::new();
    for s in data {
        if !(s.concentration.is_finite() && s.concentration >= 0.0) {
            return Err(Error::invalid(format!(
                "patient {}: concentration must be >= 0, got {}",
                s.patient_id, s.concentration
            )));
        }
        by_id.entry(&s.patient_id).or_default().push(s);
    }
    let mut patients = Vec::with_capacity(by_id.len());
    for (id, mut samples) in by_id {
        let regimen = regimens
            .get(id)
            .ok_or_else(|| Error::pre(format!("no regimen for patient {id}")))?;
        samples.sort_by(|a, b| a.time_h.total_cmp(&b.time_h));
        patients.push(PatientData {
            id: id.to_string(),
            admins: regimen.administrations().to_vec(),
            times: samples.iter().map(|s| s.time_h).collect(),
            obs: samples.iter().map(|s| s.concentration).collect(),
        });
    }
    Ok(patients)
}

fn relative_change(a: &PopPkParams, b: &PopPkParams) -> f64 {
    let pairs = [
        (a.ka_pop, b.ka_pop),
        (a.cl_pop, b.cl_pop),
        (a.v_pop, b.v_pop),
        (a.omega_ka_sq, b.omega_ka_sq),
        (a.omega_cl_sq, b.omega_cl_sq),
        (a.prop_error_sd, b.prop_error_sd),
    ];
    pairs
        .iter()
        .map(|(x, y)| (x - y).abs() / x.abs().max(1e-12))
        .fold(0.0, f64::max)
}

/// Fits the nonlinear mixed-effects model to grouped concentration data.
///
/// `regimens` maps each patient id to the regimen actually received (already
/// truncated where administration stopped early).
pub fn fit_poppk(
    data: &[ConcentrationSample],
    regimens: &HashMap<String, DoseRegimen>,
    init: &PopPkParams,
    config: &SaemConfig,
) -> Result<PopPkFit> {
    init.validate()?;
    let patients = group_patients(data, regimens)?;
    let informative = patients.iter().filter(|p| p.obs.len() >= 3).count();
    if informative < 2 {
        return Err(Error::pre(format!(
            "need at least 2 patients with >= 3 samples, got {informative}"
        )));
    }
    if patients.iter().all(|p| p.obs.iter().all(|&c| c == 0.0)) {
        return Err(Error::Estimation("all concentrations are zero".into()));
    }

    let n = patients.len() as f64;
    let n_obs: usize = patients.iter().map(|p| p.obs.len()).sum();
    let mut rng = rng_from_seed(config.seed);

    let mut mu = [init.ka_pop.ln(), init.cl_pop.ln()];
    let mut omega_sq = [init.omega_ka_sq.max(0.3), init.omega_cl_sq.max(0.3)];
    let mut log_v = init.v_pop.ln();
    let mut sigma = init.prop_error_sd.max(0.1);

    let mut phi: Vec<[f64; 2]> = vec![mu; patients.len()];
    let mut rw_scale: Vec<[f64; 2]> = vec![[0.3, 0.3]; patients.len()];

    let mut s1 = [0.0; 2];
    let mut s2 = [0.0; 2];
    let mut s_sig = sigma * sigma;

    let total_max = config.burn_in + config.smoothing + config.max_extra_smoothing;
    let mut trajectory: Vec<PopPkParams> = Vec::with_capacity(total_max);
    let mut converged = false;

    for iter in 1..=total_max {
        let v = log_v.exp();
        let sd = [omega_sq[0].sqrt(), omega_sq[1].sqrt()];
        let log_prior = |x: &[f64; 2]| {
            -0.5 * ((x[0] - mu[0]).powi(2) / omega_sq[0] + (x[1] - mu[1]).powi(2) / omega_sq[1])
        };

        // E-step: Metropolis kernels per patient.
        for (i, p) in patients.iter().enumerate() {
            let mut cur = phi[i];
            let mut ll = p.loglik(cur[0], cur[1], v, sigma);
            for _ in 0..config.mh_sweeps {
                // independence proposal from the current population distribution
                let prop = [
                    mu[0] + sd[0] * rng.sample::<f64, _>(StandardNormal),
                    mu[1] + sd[1] * rng.sample::<f64, _>(StandardNormal),
                ];
                let ll_prop = p.loglik(prop[0], prop[1], v, sigma);
                if rng.random::<f64>().ln() < ll_prop - ll {
                    cur = prop;
                    ll = ll_prop;
                }
                // component-wise random walk
                for d in 0..2 {
                    let mut prop = cur;
                    prop[d] += rw_scale[i][d] * rng.sample::<f64, _>(StandardNormal);
                    let ll_prop = p.loglik(prop[0], prop[1], v, sigma);
                    let log_ratio = ll_prop - ll + log_prior(&prop) - log_prior(&cur);
                    let accepted = rng.random::<f64>().ln() < log_ratio;
                    if accepted {
                        cur = prop;
                        ll = ll_prop;
                    }
                    let factor = if accepted { 1.1 } else { 0.95 };
                    rw_scale[i][d] = (rw_scale[i][d] * factor).clamp(1e-6, 2.0);
                }
            }
            phi[i] = cur;
        }

        let gamma = if iter <= config.burn_in { 1.0 } else { 1.0 / (iter - config.burn_in) as f64 };

        let mut stat1 = [0.0; 2];
        let mut stat2 = [0.0; 2];
        for x in &phi {
            for d in 0..2 {
                stat1[d] += x[d];
                stat2[d] += x[d] * x[d];
            }
        }
        for d in 0..2 {
            s1[d] += gamma * (stat1[d] - s1[d]);
            s2[d] += gamma * (stat2[d] - s2[d]);
        }

        // V: maximize the sigma-profiled complete-data likelihood given phi.
        let profile = |lv: f64| {
            let v = lv.exp();
            let (mut ss, mut log_f) = (0.0, 0.0);
            for (p, x) in patients.iter().zip(&phi) {
                let (a, b) = p.residual_stats(x[0], x[1], v);
                ss += a;
                log_f += b;
            }
            let sig_sq = (ss / n_obs as f64).max(SIGMA_FLOOR * SIGMA_FLOOR);
            -0.5 * n_obs as f64 * sig_sq.ln() - log_f
        };
        let (lv_star, _) = golden_section_max(profile, log_v - 0.25, log_v + 0.25, 1e-7);
        log_v += gamma * (lv_star - log_v);

        let v_new = log_v.exp();
        let ss: f64 = patients
            .iter()
            .zip(&phi)
            .map(|(p, x)| p.residual_stats(x[0], x[1], v_new).0)
            .sum();
        s_sig += gamma * (ss / n_obs as f64 - s_sig);

        // M-step
        let in_burn_in = iter <= config.burn_in;
        for d in 0..2 {
            mu[d] = s1[d] / n;
            let mut w = (s2[d] / n - mu[d] * mu[d]).max(OMEGA_SQ_FLOOR);
            if in_burn_in {
                w = w.max(config.annealing * omega_sq[d]);
            }
            omega_sq[d] = w;
        }
        let mut sig = s_sig.max(0.0).sqrt().max(SIGMA_FLOOR);
        if in_burn_in {
            sig = sig.max(config.annealing * sigma);
        }
        sigma = sig;

        let current = PopPkParams {
            ka_pop: mu[0].exp(),
            cl_pop: mu[1].exp(),
            v_pop: log_v.exp(),
            omega_ka_sq: omega_sq[0],
            omega_cl_sq: omega_sq[1],
            prop_error_sd: sigma,
        };
        if !(current.ka_pop.is_finite() && current.cl_pop.is_finite() && current.v_pop.is_finite()) {
            return Err(Error::Estimation(format!("parameters diverged at iteration {iter}")));
        }
        let done_main = iter >= config.burn_in + config.smoothing;
        if done_main {
            if let Some(prev) = trajectory.last() {
                if relative_change(&current, prev) < config.tolerance {
                    trajectory.push(current);
                    converged = true;
                    break;
                }
            }
        }
        trajectory.push(current);
    }

    let population = *trajectory.last().expect("at least one iteration");
    let v = population.v_pop;
    let mu = [population.ka_pop.ln(), population.cl_pop.ln()];
    let omega_sq = [population.omega_ka_sq, population.omega_cl_sq];
    let sigma = population.prop_error_sd;

    let mut individual_estimates = BTreeMap::new();
    for (p, start) in patients.iter().zip(&phi) {
        let objective = |x: &[f64]| {
            let prior = 0.5
                * ((x[0] - mu[0]).powi(2) / omega_sq[0] + (x[1] - mu[1]).powi(2) / omega_sq[1]);
            prior - p.loglik(x[0], x[1], v, sigma)
        };
        let (a, fa) = nelder_mead(objective, start, 0.05, 400, 1e-12);
        let (b, fb) = nelder_mead(objective, &mu, 0.05, 400, 1e-12);
        let best = if fa <= fb { a } else { b };
        individual_estimates.insert(
            p.id.clone(),
            IndividualPk { ka: best[0].exp(), cl: best[1].exp(), v },
        );
    }

    let log_likelihood = marginal_loglik(&patients, &population, config);

    let fit = PopPkFit { population, individual_estimates, log_likelihood, trajectory, converged };
    if converged {
        Ok(fit)
    } else {
        Err(Error::NonConvergence { trajectory: fit.trajectory.clone(), last: Box::new(fit) })
    }
}

/// Importance-sampled marginal log-likelihood with the population
/// distribution as proposal.
fn marginal_loglik(patients: &[PatientData], pop: &PopPkParams, config: &SaemConfig) -> f64 {
    let draws = config.loglik_draws.max(1);
    let mut rng = rng_from_seed(derive_seed(config.seed, 0x11));
    let (sd_a, sd_c) = (pop.omega_ka_sq.sqrt(), pop.omega_cl_sq.sqrt());
    let (mu_a, mu_c) = (pop.ka_pop.ln(), pop.cl_pop.ln());
    let mut total = 0.0;
    let mut lls = vec![0.0; draws];
    for p in patients {
        for ll in lls.iter_mut() {
            let a = mu_a + sd_a * rng.sample::<f64, _>(StandardNormal);
            let c = mu_c + sd_c * rng.sample::<f64, _>(StandardNormal);
            *ll = p.loglik(a, c, pop.v_pop, pop.prop_error_sd);
        }
        let m = lls.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        total += m + (lls.iter().map(|l| (l - m).exp()).sum::<f64>() / draws as f64).ln();
    }
    total
}
