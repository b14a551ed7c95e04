use serde::{Deserialize, Serialize};

use super::{check_exposure, check_gamma, default_knots, mean_var, run_sampler, FitOptions, ISplineBasis, PatientOutcome, DEFAULT_Z_REF};
use crate::error::{Error, Result};
use crate::sampler::{Diagnostics, LogDensity};

/// Monotone efficacy model `S = gamma0 + sum_l gamma_l I_l(Z) + N(0, sigma^2)`
/// with `gamma_l >= 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfficacyModelSpec {
    pub z_ref: f64,
    /// Boundary and interior knots, in exposure units.
    pub knots: Vec<f64>,
    pub df: usize,
    /// Normal (mean, sd) prior on `gamma0`.
    pub intercept_prior: (f64, f64),
    /// Gamma(shape, rate) prior on each `gamma_l`.
    pub coef_prior: (f64, f64),
    /// Gamma(shape, rate) prior on the residual precision.
    pub precision_prior: (f64, f64),
}

impl EfficacyModelSpec {
    /// Default priors on the given knots.
    pub fn with_knots(knots: Vec<f64>) -> Result<Self> {
        let spec = Self {
            z_ref: DEFAULT_Z_REF,
            df: knots.len() + 1,
            knots,
            intercept_prior: (0.0, 2.0),
            coef_prior: (1.0, 1.0),
            precision_prior: (0.01, 0.01),
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Default priors with knots placed by [`default_knots`].
    pub fn for_exposures(exposures: &[f64]) -> Result<Self> {
        Self::with_knots(default_knots(exposures)?)
    }

    pub fn basis(&self) -> Result<ISplineBasis> {
        ISplineBasis::new(&self.knots)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.z_ref > 0.0 && self.z_ref.is_finite()) {
            return Err(Error::invalid(format!("z_ref must be positive, got {}", self.z_ref)));
        }
        let basis = self.basis()?;
        if self.df != basis.df() || self.df < 1 {
            return Err(Error::invalid(format!(
                "df {} does not match {} knots (expected {})",
                self.df,
                self.knots.len(),
                basis.df()
            )));
        }
        let (m, sd) = self.intercept_prior;
        if !(m.is_finite() && sd > 0.0 && sd.is_finite()) {
            return Err(Error::invalid("intercept prior needs finite mean and positive sd"));
        }
        check_gamma("spline coefficient", self.coef_prior.0, self.coef_prior.1)?;
        check_gamma("efficacy precision", self.precision_prior.0, self.precision_prior.1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfficacyDraw {
    pub gamma0: f64,
    pub gamma: Vec<f64>,
    pub sigma: f64,
}

impl EfficacyDraw {
    /// Mean efficacy given basis values (or an average of basis values).
    pub fn mean_from_basis(&self, basis_values: &[f64]) -> f64 {
        self.gamma0 + self.gamma.iter().zip(basis_values).map(|(g, b)| g * b).sum::<f64>()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfficacyFit {
    pub spec: EfficacyModelSpec,
    pub basis: ISplineBasis,
    pub draws: Vec<EfficacyDraw>,
    pub diagnostics: Diagnostics,
}

impl EfficacyFit {
    pub fn posterior_mean(&self) -> EfficacyDraw {
        let n = self.draws.len() as f64;
        let l = self.spec.df;
        let mut gamma = vec![0.0; l];
        for d in &self.draws {
            for (acc, g) in gamma.iter_mut().zip(&d.gamma) {
                *acc += g / n;
            }
        }
        EfficacyDraw {
            gamma0: self.draws.iter().map(|d| d.gamma0).sum::<f64>() / n,
            gamma,
            sigma: self.draws.iter().map(|d| d.sigma).sum::<f64>() / n,
        }
    }

    /// Posterior-mean efficacy curve at `z`.
    pub fn mean_curve(&self, z: f64) -> Result<f64> {
        check_exposure(z)?;
        let b = self.basis.eval(z)?;
        Ok(self.posterior_mean().mean_from_basis(&b))
    }
}

/// Parameters `(gamma0, gamma_1..L, log tau)`.
///
/// With a coefficient prior of shape >= 1 the coefficients stay on their
/// natural scale with reflecting proposals at zero: on the log scale,
/// coefficients near zero leave the likelihood flat and the chain drifts.
/// A shape below 1 puts an integrable spike at zero that a natural-scale
/// walk cannot enter, so those coefficients are sampled as `log gamma_l`
/// (with Jacobian) instead.
struct EfficacyTarget<'a> {
    spec: &'a EfficacyModelSpec,
    basis_rows: Vec<Vec<f64>>,
    s: Vec<f64>,
    log_coefs: bool,
}

impl EfficacyTarget<'_> {
    fn coef(&self, v: f64) -> f64 {
        if self.log_coefs {
            v.exp()
        } else {
            v
        }
    }
}

impl LogDensity for EfficacyTarget<'_> {
    fn dim(&self) -> usize {
        self.spec.df + 2
    }

    fn lower_bound(&self, i: usize) -> Option<f64> {
        (!self.log_coefs && (1..=self.spec.df).contains(&i)).then_some(0.0)
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        let l = self.spec.df;
        let g0 = x[0];
        let gamma: Vec<f64> = x[1..=l].iter().map(|&v| self.coef(v)).collect();
        if gamma.iter().any(|g| g.is_infinite()) {
            return f64::NEG_INFINITY;
        }
        let log_tau = x[l + 1];
        let tau = log_tau.exp();
        let mut ss = 0.0;
        for (row, &s) in self.basis_rows.iter().zip(&self.s) {
            let mean = g0 + row.iter().zip(&gamma).map(|(b, g)| b * g).sum::<f64>();
            ss += (s - mean).powi(2);
        }
        let n = self.s.len() as f64;
        let (m0, sd0) = self.spec.intercept_prior;
        let (ca, cb) = self.spec.coef_prior;
        let (a0, b0) = self.spec.precision_prior;
        let coef_prior: f64 = if self.log_coefs {
            x[1..=l].iter().zip(&gamma).map(|(&u, &g)| ca * u - cb * g).sum()
        } else {
            gamma.iter().map(|&g| if ca == 1.0 { -cb * g } else { (ca - 1.0) * g.ln() - cb * g }).sum()
        };
        0.5 * n * log_tau - 0.5 * tau * ss - 0.5 * ((g0 - m0) / sd0).powi(2) + coef_prior + a0 * log_tau - b0 * tau
    }

    fn initial_point(&self) -> Vec<f64> {
        let l = self.spec.df;
        let (m, v) = mean_var(&self.s);
        let mut x = vec![m];
        let start = if self.log_coefs { 0.05f64.ln() } else { 0.05 };
        x.extend(std::iter::repeat_n(start, l));
        x.push(-(v.max(1e-4)).ln());
        x
    }
}

/// Posterior draws of `(gamma0, gamma_1..L, sigma)` given efficacy values.
/// Exposures outside the knot range are clamped to it.
pub fn fit_efficacy(data: &[PatientOutcome], spec: &EfficacyModelSpec, opts: &FitOptions) -> Result<EfficacyFit> {
    spec.validate()?;
    let basis = spec.basis()?;
    let mut rows = Vec::new();
    let mut s = Vec::new();
    for o in data {
        if let Some(v) = o.efficacy {
            check_exposure(o.exposure.efficacy)?;
            if !v.is_finite() {
                return Err(Error::pre(format!("non-finite efficacy value for patient {}", o.patient_id)));
            }
            rows.push(basis.eval(o.exposure.efficacy)?);
            s.push(v);
        }
    }
    if s.is_empty() {
        return Err(Error::pre("efficacy fit needs at least one observation"));
    }
    let target = EfficacyTarget { spec, basis_rows: rows, s, log_coefs: spec.coef_prior.0 < 1.0 };
    let (chains, diagnostics) = run_sampler(&target, opts)?;
    let l = spec.df;
    let draws = chains
        .iter()
        .map(|x| EfficacyDraw {
            gamma0: x[0],
            gamma: x[1..=l].iter().map(|&v| target.coef(v)).collect(),
            sigma: (-0.5 * x[l + 1]).exp(),
        })
        .collect();
    Ok(EfficacyFit { spec: spec.clone(), basis, draws, diagnostics })
}

/// Mean efficacy at exposure `z`, one value per posterior draw.
pub fn predict_efficacy(fit: &EfficacyFit, z: f64) -> Result<Vec<f64>> {
    check_exposure(z)?;
    let b = fit.basis.eval(z)?;
    Ok(fit.draws.iter().map(|d| d.mean_from_basis(&b)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn outcome(i: usize, z: f64, s: f64) -> PatientOutcome {
        PatientOutcome::new(i.to_string(), z, false, 0.0, s)
    }

    #[test]
    fn null_spline_is_flat() {
        let spec = EfficacyModelSpec::with_knots(vec![5.0, 20.0, 40.0]).unwrap();
        let fit = EfficacyFit {
            basis: spec.basis().unwrap(),
            draws: vec![EfficacyDraw { gamma0: -0.1, gamma: vec![0.0; 4], sigma: 0.1 }],
            spec,
            diagnostics: Diagnostics { rhat: vec![], ess: vec![] },
        };
        for z in [1.0, 10.0, 30.0, 100.0] {
            assert_eq!(predict_efficacy(&fit, z).unwrap(), vec![-0.1]);
        }
    }

    #[test]
    fn left_boundary_data_predict_intercept() {
        let spec = EfficacyModelSpec::with_knots(vec![5.0, 20.0, 40.0]).unwrap();
        let data: Vec<_> = (0..20).map(|i| outcome(i, 5.0, 0.1 + 0.05 * ((i % 5) as f64 - 2.0))).collect();
        let fit = fit_efficacy(&data, &spec, &FitOptions::default()).unwrap();
        let pred = predict_efficacy(&fit, 5.0).unwrap();
        let mean_pred = pred.iter().sum::<f64>() / pred.len() as f64;
        let mean_g0 = fit.draws.iter().map(|d| d.gamma0).sum::<f64>() / fit.draws.len() as f64;
        assert!((mean_pred - mean_g0).abs() < 1e-12);
    }

    #[test]
    fn monotone_fit_is_nondecreasing() {
        let data: Vec<_> = (0..30)
            .map(|i| {
                let z = 2.0 + 2.0 * i as f64;
                outcome(i, z, -0.2 + 0.6 * (z / 60.0).min(1.0))
            })
            .collect();
        let z: Vec<f64> = data.iter().map(|o| o.exposure.efficacy).collect();
        let spec = EfficacyModelSpec::for_exposures(&z).unwrap();
        let fit = fit_efficacy(&data, &spec, &FitOptions::default()).unwrap();
        let mut prev = f64::NEG_INFINITY;
        for i in 0..100 {
            let v = fit.mean_curve(1.0 + i as f64 * 0.7).unwrap();
            assert!(v >= prev - 1e-12);
            prev = v;
        }
        assert!(fit.draws.iter().all(|d| d.gamma.iter().all(|&g| g >= 0.0)));
    }

    #[test]
    fn plateau_is_recovered() {
        // plateau generator: -0.3 + 0.035 min(Z, 20), sd 0.05
        let mut rng = rng_from_seed(17);
        let data: Vec<_> = (0..500)
            .map(|i| {
                let z = 40.0 * (rng.random::<f64>() * 2.5 - 2.0).exp();
                outcome(i, z, -0.3 + 0.035 * z.min(20.0) + 0.05 * rng.sample::<f64, _>(StandardNormal))
            })
            .collect();
        let z: Vec<f64> = data.iter().map(|o| o.exposure.efficacy).collect();
        let spec = EfficacyModelSpec::for_exposures(&z).unwrap();
        let fit = fit_efficacy(&data, &spec, &FitOptions::default()).unwrap();
        let at39 = fit.mean_curve(39.0).unwrap();
        assert!((at39 - 0.4).abs() < 0.08, "{at39}");
    }

    #[test]
    fn vague_prior_reaches_zero_coefficients() {
        // no exposure effect: the shape-0.01 spike should absorb the coefficients
        let mut rng = rng_from_seed(5);
        let data: Vec<_> = (0..40)
            .map(|i| {
                let z = 5.0 + 45.0 * rng.random::<f64>();
                outcome(i, z, 0.05 * rng.sample::<f64, _>(StandardNormal))
            })
            .collect();
        let z: Vec<f64> = data.iter().map(|o| o.exposure.efficacy).collect();
        let spec = EfficacyModelSpec { coef_prior: (0.01, 0.01), ..EfficacyModelSpec::for_exposures(&z).unwrap() };
        let opts = FitOptions { require_mixing: false, ..FitOptions::default() };
        let fit = fit_efficacy(&data, &spec, &opts).unwrap();
        let tiny = fit.draws.iter().filter(|d| d.gamma.iter().sum::<f64>() < 1e-6).count();
        assert!(tiny * 2 > fit.draws.len(), "{tiny} of {}", fit.draws.len());
        assert!(fit.draws.iter().all(|d| d.gamma.iter().all(|g| g.is_finite() && *g >= 0.0)));
    }

    #[test]
    fn vague_prior_keeps_plateau() {
        let mut rng = rng_from_seed(17);
        let data: Vec<_> = (0..300)
            .map(|i| {
                let z = 40.0 * (rng.random::<f64>() * 2.5 - 2.0).exp();
                outcome(i, z, -0.3 + 0.035 * z.min(20.0) + 0.05 * rng.sample::<f64, _>(StandardNormal))
            })
            .collect();
        let z: Vec<f64> = data.iter().map(|o| o.exposure.efficacy).collect();
        let spec = EfficacyModelSpec { coef_prior: (0.01, 0.01), ..EfficacyModelSpec::for_exposures(&z).unwrap() };
        let opts = FitOptions { require_mixing: false, ..FitOptions::default() };
        let fit = fit_efficacy(&data, &spec, &opts).unwrap();
        for (zz, truth) in [(10.0, 0.05), (39.0, 0.4)] {
            let m = fit.mean_curve(zz).unwrap();
            assert!((m - truth).abs() < 0.08, "{zz}: {m}");
        }
    }

    #[test]
    fn validates_spec() {
        let mut spec = EfficacyModelSpec::with_knots(vec![1.0, 2.0]).unwrap();
        spec.df = 5;
        assert!(spec.validate().is_err());
        assert!(EfficacyModelSpec::with_knots(vec![2.0, 1.0]).is_err());
        let spec = EfficacyModelSpec::with_knots(vec![1.0, 2.0]).unwrap();
        assert!(fit_efficacy(&[], &spec, &FitOptions::default()).is_err());
    }
}
