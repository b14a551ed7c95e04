use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::EndpointByDose;
use crate::error::{Error, Result};
use crate::exposure::{EfficacyFit, MetricMap, PdyFit, SafetyFit};
use crate::pk::{DoseRegimen, PopPkFit};
use crate::rng::derive_seed;
use crate::stats::spaced_indices;

/// Monte Carlo sizes of the marginalization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarginalBudget {
    /// Posterior draws kept per endpoint (`M`).
    pub posterior_draws: usize,
    /// Exposure draws per regimen (`K`).
    pub exposure_draws: usize,
}

impl Default for MarginalBudget {
    fn default() -> Self {
        Self { posterior_draws: 1000, exposure_draws: 200 }
    }
}

/// Population-level endpoint draws for each regimen.
///
/// For regimen `j`, `K` new individuals are drawn from the PK fit with a seed
/// derived from the regimen's dosing schedule, so identically dosed regimens
/// see identical exposures. Each of the `M` retained posterior draws is then
/// averaged over those exposures: `p` is the mean DLT probability, `q` the
/// mean target-engagement probability and `s` the mean efficacy.
#[allow(clippy::too_many_arguments)]
pub fn endpoint_by_dose(
    pk_fit: &PopPkFit,
    safety: &SafetyFit,
    pdy: &PdyFit,
    efficacy: &EfficacyFit,
    regimens: &[DoseRegimen],
    metrics: &MetricMap,
    budget: MarginalBudget,
    seed: u64,
) -> Result<EndpointByDose> {
    let (m, k) = (budget.posterior_draws, budget.exposure_draws);
    if m == 0 || k == 0 {
        return Err(Error::pre("marginalization needs M >= 1 and K >= 1"));
    }
    if regimens.is_empty() {
        return Err(Error::pre("no regimens to marginalize over"));
    }
    if safety.draws.is_empty() || pdy.draws.is_empty() || efficacy.draws.is_empty() {
        return Err(Error::pre("exposure-response fits have no draws"));
    }
    let mut seen = std::collections::HashSet::new();
    for r in regimens {
        if !seen.insert(r.label()) {
            return Err(Error::pre(format!("duplicate regimen label `{}`", r.label())));
        }
    }
    let safety_idx = spaced_indices(safety.draws.len(), m);
    let pdy_idx = spaced_indices(pdy.draws.len(), m);
    let eff_idx = spaced_indices(efficacy.draws.len(), m);
    let c = pdy.spec.threshold_c;
    let l = efficacy.spec.df;

    let per_regimen = regimens
        .par_iter()
        .map(|regimen| -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
            let individuals = pk_fit.sample_individuals(k, derive_seed(seed, regimen.fingerprint()));
            let mut lz_safety = Vec::with_capacity(k);
            let mut lz_pdy = Vec::with_capacity(k);
            let mut mean_basis = vec![0.0; l];
            let mut row = vec![0.0; l];
            for ind in &individuals {
                let zs = metrics.safety.evaluate(ind, regimen)?;
                let zp = metrics.pdy.evaluate(ind, regimen)?;
                let ze = metrics.efficacy.evaluate(ind, regimen)?;
                for z in [zs, zp, ze] {
                    crate::exposure::check_exposure(z)?;
                }
                lz_safety.push((zs / safety.spec.z_ref).ln());
                lz_pdy.push((zp / pdy.spec.z_ref).ln());
                efficacy.basis.eval_into(ze, &mut row)?;
                for (acc, b) in mean_basis.iter_mut().zip(&row) {
                    *acc += b / k as f64;
                }
            }
            let p = safety_idx
                .iter()
                .map(|&i| {
                    let d = &safety.draws[i];
                    lz_safety.iter().map(|&lz| d.prob_at_log(lz)).sum::<f64>() / k as f64
                })
                .collect();
            let q = pdy_idx
                .iter()
                .map(|&i| {
                    let d = &pdy.draws[i];
                    lz_pdy.iter().map(|&lz| d.engagement_at_log(lz, c)).sum::<f64>() / k as f64
                })
                .collect();
            let s = eff_idx.iter().map(|&i| efficacy.draws[i].mean_from_basis(&mean_basis)).collect();
            Ok((p, q, s))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut p = Vec::new();
    let mut q = Vec::new();
    let mut s = Vec::new();
    for (a, b, e) in per_regimen {
        p.push(a);
        q.push(b);
        s.push(e);
    }
    let labels = regimens.iter().map(|r| r.label().to_string()).collect();
    EndpointByDose::new(labels, p, q, s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exposure::{EfficacyDraw, EfficacyModelSpec, PdyDraw, PdyModelSpec, SafetyDraw, SafetyModelSpec};
    use crate::pk::{ExposureKind, PopPkParams};
    use crate::rng::rng_from_seed;
    use crate::sampler::Diagnostics;
    use crate::stats::{logistic, norm_cdf};
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn no_diag() -> Diagnostics {
        Diagnostics { rhat: vec![], ess: vec![] }
    }

    fn fits(n: usize, seed: u64) -> (SafetyFit, PdyFit, EfficacyFit) {
        let mut rng = rng_from_seed(seed);
        let mut nrm = move || rng.sample::<f64, _>(StandardNormal);
        let safety = SafetyFit {
            spec: SafetyModelSpec::default(),
            draws: (0..n).map(|_| SafetyDraw { phi1: -1.0 + 0.4 * nrm(), phi2: 0.2 * nrm() }).collect(),
            diagnostics: no_diag(),
        };
        let pdy = PdyFit {
            spec: PdyModelSpec::default(),
            draws: (0..n)
                .map(|_| PdyDraw { beta1: 0.45 + 0.05 * nrm(), beta2: 0.1 + 0.05 * nrm(), sigma: 0.08 })
                .collect(),
            diagnostics: no_diag(),
        };
        let spec = EfficacyModelSpec::with_knots(vec![5.0, 20.0, 40.0]).unwrap();
        let efficacy = EfficacyFit {
            basis: spec.basis().unwrap(),
            draws: (0..n)
                .map(|_| EfficacyDraw {
                    gamma0: -0.2 + 0.05 * nrm(),
                    gamma: vec![0.1 + 0.02 * nrm().abs(), 0.3, 0.05, 0.01],
                    sigma: 0.05,
                })
                .collect(),
            spec,
            diagnostics: no_diag(),
        };
        (safety, pdy, efficacy)
    }

    fn regimens() -> Vec<DoseRegimen> {
        [10.0, 35.0, 70.0].iter().map(|&d| DoseRegimen::daily(format!("{d}mg"), d)).collect()
    }

    #[test]
    fn point_mass_exposure_gives_model_value() {
        let pop = PopPkParams { omega_ka_sq: 0.0, omega_cl_sq: 0.0, ..PopPkParams::REFERENCE };
        let pk = PopPkFit::from_population(pop).unwrap();
        // dose chosen so AUC24 at steady state is z_ref = 40
        let r = DoseRegimen::daily("ref", 40.0 * 1.8);
        let z = ExposureKind::Auc24.evaluate(&pop.typical(), &r).unwrap();
        let (mut safety, pdy, efficacy) = fits(4, 1);
        safety.draws = vec![SafetyDraw { phi1: 0.0, phi2: 0.0 }];
        let ebd = endpoint_by_dose(&pk, &safety, &pdy, &efficacy, &[r], &MetricMap::default(), MarginalBudget { posterior_draws: 3, exposure_draws: 50 }, 3).unwrap();
        for v in &ebd.p[0] {
            assert!((v - logistic((z / 40.0).ln())).abs() < 1e-12);
            assert!((v - 0.5).abs() < 1e-4);
        }
    }

    #[test]
    fn identical_dosing_gives_identical_draws() {
        let pk = PopPkFit::from_population(PopPkParams::REFERENCE).unwrap();
        let (safety, pdy, efficacy) = fits(100, 2);
        let regs = vec![DoseRegimen::daily("a", 25.0), DoseRegimen::daily("b", 25.0)];
        let ebd = endpoint_by_dose(&pk, &safety, &pdy, &efficacy, &regs, &MetricMap::default(), MarginalBudget { posterior_draws: 50, exposure_draws: 30 }, 9).unwrap();
        assert_eq!(ebd.p[0], ebd.p[1]);
        assert_eq!(ebd.q[0], ebd.q[1]);
        assert_eq!(ebd.s[0], ebd.s[1]);
    }

    #[test]
    fn rejects_bad_inputs() {
        let pk = PopPkFit::from_population(PopPkParams::REFERENCE).unwrap();
        let (safety, pdy, efficacy) = fits(10, 2);
        let m = MetricMap::default();
        let zero_k = MarginalBudget { posterior_draws: 5, exposure_draws: 0 };
        assert!(endpoint_by_dose(&pk, &safety, &pdy, &efficacy, &regimens(), &m, zero_k, 1).is_err());
        let dup = vec![DoseRegimen::daily("a", 25.0), DoseRegimen::daily("a", 35.0)];
        assert!(endpoint_by_dose(&pk, &safety, &pdy, &efficacy, &dup, &m, MarginalBudget::default(), 1).is_err());
    }

    /// Nested Monte Carlo with fresh exposures for every posterior draw. At
    /// steady state the 24 h AUC of a daily schedule is `dose / CL`, so the
    /// oracle only needs log-normal clearances.
    #[test]
    fn agrees_with_nested_monte_carlo() {
        let pk = PopPkFit::from_population(PopPkParams::REFERENCE).unwrap();
        let (safety, pdy, efficacy) = fits(5000, 5);
        let regs = regimens();
        let budget = MarginalBudget { posterior_draws: 200, exposure_draws: 200 };
        let ebd = endpoint_by_dose(&pk, &safety, &pdy, &efficacy, &regs, &MetricMap::default(), budget, 11).unwrap();
        let means = ebd.means();

        let mut rng = rng_from_seed(123);
        let n = 5000;
        let omega_cl = 0.1f64.sqrt();
        for (j, dose) in [10.0, 35.0, 70.0].into_iter().enumerate() {
            let (mut sp, mut sq, mut ss) = (0.0, 0.0, 0.0);
            for m in 0..n {
                let (sd, pd, ed) = (&safety.draws[m], &pdy.draws[m], &efficacy.draws[m]);
                for _ in 0..n {
                    let cl = 1.8 * (omega_cl * rng.sample::<f64, _>(StandardNormal)).exp();
                    let z = dose / cl;
                    let lz = (z / 40.0).ln();
                    sp += logistic(sd.phi1 + sd.phi2.exp() * lz);
                    sq += 1.0 - norm_cdf((0.5 - pd.beta1 - pd.beta2 * lz) / pd.sigma);
                    ss += ed.mean_from_basis(&efficacy.basis.eval(z).unwrap());
                }
            }
            let total = (n * n) as f64;
            let (p, q, s) = (sp / total, sq / total, ss / total);
            assert!((means[j].0 - p).abs() < 0.02, "p {j}: {} vs {p}", means[j].0);
            assert!((means[j].1 - q).abs() < 0.02, "q {j}: {} vs {q}", means[j].1);
            assert!((means[j].2 - s).abs() < 0.02, "s {j}: {} vs {s}", means[j].2);
        }
    }
}
