use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::model::{DoseRegimen, IndividualPk, PopPkParams};
use crate::error::{Error, Result};
use crate::rng::rng_from_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationSample {
    pub patient_id: String,
    pub time_h: f64,
    pub concentration: f64,
}

/// Draws `n` individuals: ka and CL log-normal around the typical values,
/// V fixed at the population value.
pub fn simulate_individuals(pop: &PopPkParams, n: usize, seed: u64) -> Result<Vec<IndividualPk>> {
    pop.validate()?;
    if n == 0 {
        return Err(Error::pre("n must be >= 1"));
    }
    let mut rng = rng_from_seed(seed);
    Ok((0..n).map(|_| draw_individual(pop, &mut rng)).collect())
}

pub(crate) fn draw_individual<R: Rng + ?Sized>(pop: &PopPkParams, rng: &mut R) -> IndividualPk {
    let z: f64 = rng.sample(rand_distr::StandardNormal);
    let w: f64 = rng.sample(rand_distr::StandardNormal);
    IndividualPk {
        ka: pop.ka_pop * (pop.omega_ka_sq.sqrt() * z).exp(),
        cl: pop.cl_pop * (pop.omega_cl_sq.sqrt() * w).exp(),
        v: pop.v_pop,
    }
}

/// Noisy concentrations `f(t)(1 + eps)`, `eps ~ N(0, prop_error_sd^2)`.
///
/// Samples later than `truncation_h` are dropped. Negative draws (only
/// possible when `eps < -1`) are clamped to zero.
pub fn simulate_concentrations(
    patient_id: &str,
    ind: &IndividualPk,
    regimen: &DoseRegimen,
    times: &[f64],
    prop_error_sd: f64,
    truncation_h: Option<f64>,
    seed: u64,
) -> Result<Vec<ConcentrationSample>> {
    ind.validate()?;
    if !(prop_error_sd.is_finite() && prop_error_sd >= 0.0) {
        return Err(Error::invalid(format!("prop_error_sd must be >= 0, got {prop_error_sd}")));
    }
    if let Some(t) = times.iter().find(|t| !(t.is_finite() && **t >= 0.0)) {
        return Err(Error::invalid(format!("sampling time must be >= 0, got {t}")));
    }
    let mut rng = rng_from_seed(seed);
    let noise = Normal::new(0.0, prop_error_sd).map_err(|e| Error::invalid(e.to_string()))?;
    Ok(times
        .iter()
        .filter(|&&t| truncation_h.is_none_or(|cut| t <= cut))
        .map(|&t| {
            let f = ind.concentration(regimen, t);
            let eps = if prop_error_sd > 0.0 { noise.sample(&mut rng) } else { 0.0 };
            ConcentrationSample {
                patient_id: patient_id.to_string(),
                time_h: t,
                concentration: (f * (1.0 + eps)).max(0.0),
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pk::REFERENCE_SAMPLING_TIMES;

    #[test]
    fn zero_variance_gives_typical_individuals() {
        let pop = PopPkParams { omega_ka_sq: 0.0, omega_cl_sq: 0.0, ..PopPkParams::REFERENCE };
        let inds = simulate_individuals(&pop, 50, 3).unwrap();
        assert!(inds.iter().all(|i| *i == pop.typical()));
    }

    #[test]
    fn log_clearance_mean_within_three_standard_errors() {
        let pop = PopPkParams::REFERENCE;
        let n = 100_000;
        let inds = simulate_individuals(&pop, n, 11).unwrap();
        let mean = inds.iter().map(|i| i.cl.ln()).sum::<f64>() / n as f64;
        let se = (pop.omega_cl_sq / n as f64).sqrt();
        assert!((mean - 1.8f64.ln()).abs() < 3.0 * se, "{mean}");
    }

    #[test]
    fn deterministic_given_seed() {
        let a = simulate_individuals(&PopPkParams::REFERENCE, 20, 5).unwrap();
        let b = simulate_individuals(&PopPkParams::REFERENCE, 20, 5).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn noiseless_samples_equal_model() {
        let ind = PopPkParams::REFERENCE.typical();
        let r = DoseRegimen::daily("d", 50.0);
        let s = simulate_concentrations("p1", &ind, &r, &REFERENCE_SAMPLING_TIMES, 0.0, None, 1).unwrap();
        assert_eq!(s.len(), 19);
        for x in &s {
            assert_eq!(x.concentration, ind.concentration(&r, x.time_h));
        }
    }

    #[test]
    fn truncation_drops_later_samples() {
        let ind = PopPkParams::REFERENCE.typical();
        let r = DoseRegimen::daily("d", 50.0);
        let s = simulate_concentrations("p1", &ind, &r, &REFERENCE_SAMPLING_TIMES, 0.1, Some(30.0), 1).unwrap();
        let times: Vec<f64> = s.iter().map(|x| x.time_h).collect();
        assert_eq!(times.len(), 13);
        assert!(times.iter().all(|&t| t <= 30.0));
        assert!(!times.contains(&32.0) && !times.contains(&344.0));
    }
}
