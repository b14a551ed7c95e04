use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::hash_f64s;

/// Relative gap `|ka - k| / k` under which the absorption and elimination rate
/// constants are treated as equal and the analytic limit is used.
const DEGENERATE_RATE_GAP: f64 = 1e-9;

/// Beyond this many absorption half-lives the absorption exponential is zero
/// to double precision.
const ABSORPTION_CUTOFF: f64 = 745.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Administration {
    pub dose_mg: f64,
    pub time_h: f64,
}

/// An ordered list of oral administrations identifying one candidate regimen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DoseRegimen {
    label: String,
    administrations: Vec<Administration>,
}

impl DoseRegimen {
    pub fn new(label: impl Into<String>, administrations: Vec<Administration>) -> Result<Self> {
        let label = label.into();
        if administrations.is_empty() {
            return Err(Error::invalid(format!("regimen `{label}` has no administrations")));
        }
        for (i, a) in administrations.iter().enumerate() {
            if !(a.dose_mg.is_finite() && a.dose_mg > 0.0) {
                return Err(Error::invalid(format!(
                    "regimen `{label}`: dose #{} must be > 0, got {}",
                    i + 1,
                    a.dose_mg
                )));
            }
            if !(a.time_h.is_finite() && a.time_h >= 0.0) {
                return Err(Error::invalid(format!(
                    "regimen `{label}`: time #{} must be >= 0, got {}",
                    i + 1,
                    a.time_h
                )));
            }
        }
        if administrations.windows(2).any(|w| w[1].time_h <= w[0].time_h) {
            return Err(Error::invalid(format!(
                "regimen `{label}`: administration times must be strictly increasing"
            )));
        }
        Ok(Self { label, administrations })
    }

    /// `n` administrations of `dose_mg` every `interval_h` hours starting at 0.
    pub fn repeated(label: impl Into<String>, dose_mg: f64, interval_h: f64, n: usize) -> Result<Self> {
        if !(interval_h > 0.0) && n > 1 {
            return Err(Error::invalid("dosing interval must be > 0"));
        }
        let admins = (0..n)
            .map(|l| Administration { dose_mg, time_h: l as f64 * interval_h })
            .collect();
        Self::new(label, admins)
    }

    /// Reference protocol: once daily for 28 days.
    pub fn daily(label: impl Into<String>, dose_mg: f64) -> Self {
        Self::repeated(label, dose_mg, 24.0, 28).expect("positive dose")
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn administrations(&self) -> &[Administration] {
        &self.administrations
    }

    pub fn len(&self) -> usize {
        self.administrations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.administrations.is_empty()
    }

    pub fn first_time(&self) -> f64 {
        self.administrations[0].time_h
    }

    pub fn last_time(&self) -> f64 {
        self.administrations[self.administrations.len() - 1].time_h
    }

    /// Keeps only the first `n` administrations (at least one).
    pub fn truncated(&self, n: usize) -> Self {
        let n = n.clamp(1, self.administrations.len());
        Self {
            label: self.label.clone(),
            administrations: self.administrations[..n].to_vec(),
        }
    }

    /// Content hash of the dosing schedule (label excluded).
    pub fn fingerprint(&self) -> u64 {
        hash_f64s(self.administrations.iter().flat_map(|a| [a.dose_mg, a.time_h]))
    }

    /// Dose of the first administration; all reference regimens are flat.
    pub fn nominal_dose(&self) -> f64 {
        self.administrations[0].dose_mg
    }
}

/// Population-level PK parameters with log-normal IIV on ka and CL and a
/// proportional residual error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PopPkParams {
    pub ka_pop: f64,
    pub cl_pop: f64,
    pub v_pop: f64,
    pub omega_ka_sq: f64,
    pub omega_cl_sq: f64,
    pub prop_error_sd: f64,
}

impl PopPkParams {
    /// The simulation truth used throughout the reference scenarios.
    pub const REFERENCE: PopPkParams = PopPkParams {
        ka_pop: 1.0,
        cl_pop: 1.8,
        v_pop: 100.0,
        omega_ka_sq: 0.3,
        omega_cl_sq: 0.1,
        prop_error_sd: 0.1,
    };

    /// Typical values must be strictly positive; variances and the residual
    /// SD may be zero to express degenerate (deterministic) populations.
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("ka_pop", self.ka_pop), ("cl_pop", self.cl_pop), ("v_pop", self.v_pop)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(format!("{name} must be > 0, got {v}")));
            }
        }
        for (name, v) in [
            ("omega_ka_sq", self.omega_ka_sq),
            ("omega_cl_sq", self.omega_cl_sq),
            ("prop_error_sd", self.prop_error_sd),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::invalid(format!("{name} must be >= 0, got {v}")));
            }
        }
        Ok(())
    }

    pub fn typical(&self) -> IndividualPk {
        IndividualPk { ka: self.ka_pop, cl: self.cl_pop, v: self.v_pop }
    }
}

impl Default for PopPkParams {
    fn default() -> Self {
        Self::REFERENCE
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IndividualPk {
    pub ka: f64,
    pub cl: f64,
    pub v: f64,
}

impl IndividualPk {
    pub fn new(ka: f64, cl: f64, v: f64) -> Result<Self> {
        let p = Self { ka, cl, v };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("ka", self.ka), ("cl", self.cl), ("v", self.v)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(format!("{name} must be finite and > 0, got {v}")));
            }
        }
        Ok(())
    }

    /// Elimination rate constant CL/V.
    #[inline]
    pub fn k(&self) -> f64 {
        self.cl / self.v
    }

    /// Concentration at time `t` (no validation; see [`concentration_at`]).
    #[inline]
    pub fn concentration(&self, regimen: &DoseRegimen, t: f64) -> f64 {
        conc_sum(self.ka, self.k(), self.v, regimen.administrations(), t)
    }
}

/// Concentration from a single administration `s >= 0` hours after intake.
#[inline]
pub(crate) fn single_dose_conc(dose: f64, ka: f64, k: f64, v: f64, s: f64) -> f64 {
    let gap = ka - k;
    if (gap / k).abs() < DEGENERATE_RATE_GAP {
        return dose / v * k * s * (-k * s).exp();
    }
    let ka_s = ka * s;
    let e_ka = if ka_s > ABSORPTION_CUTOFF { 0.0 } else { (-ka_s).exp() };
    dose / v * ka / gap * ((-k * s).exp() - e_ka)
}

/// Antiderivative (from intake) of [`single_dose_conc`] evaluated at `s >= 0`.
#[inline]
pub(crate) fn single_dose_auc(dose: f64, ka: f64, k: f64, v: f64, s: f64) -> f64 {
    if s <= 0.0 {
        return 0.0;
    }
    let gap = ka - k;
    if (gap / k).abs() < DEGENERATE_RATE_GAP {
        let ks = k * s;
        return dose / v * (1.0 - (-ks).exp() * (1.0 + ks)) / k;
    }
    let elim = -(-k * s).exp_m1() / k;
    let absorb = -(-ka * s).exp_m1() / ka;
    dose / v * ka / gap * (elim - absorb)
}

#[inline]
pub(crate) fn conc_sum(ka: f64, k: f64, v: f64, admins: &[Administration], t: f64) -> f64 {
    let mut c = 0.0;
    for a in admins {
        if a.time_h > t {
            break;
        }
        c += single_dose_conc(a.dose_mg, ka, k, v, t - a.time_h);
    }
    c.max(0.0)
}

/// Superposition of the one-compartment oral profile over every
/// administration at or before `t`.
pub fn concentration_at(params: &IndividualPk, regimen: &DoseRegimen, t: f64) -> Result<f64> {
    params.validate()?;
    if !(t.is_finite() && t >= 0.0) {
        return Err(Error::invalid(format!("time must be finite and >= 0, got {t}")));
    }
    Ok(params.concentration(regimen, t))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn example() -> (IndividualPk, DoseRegimen) {
        (
            IndividualPk::new(1.0, 1.8, 100.0).unwrap(),
            DoseRegimen::repeated("single", 10.0, 24.0, 1).unwrap(),
        )
    }

    /// RK4 on the absorption/elimination ODE with step halving until the
    /// answer settles; independent of the closed form.
    fn ode_oracle(p: &IndividualPk, dose: f64, t_end: f64) -> f64 {
        let integrate = |steps: usize| {
            let h = t_end / steps as f64;
            let k = p.cl / p.v;
            let f = |g: f64, c: f64| (-p.ka * g, p.ka * g - k * c * p.v);
            let (mut gut, mut amount) = (dose, 0.0f64);
            for _ in 0..steps {
                let c = amount / p.v;
                let (a1, b1) = f(gut, c);
                let (a2, b2) = f(gut + 0.5 * h * a1, (amount + 0.5 * h * b1) / p.v);
                let (a3, b3) = f(gut + 0.5 * h * a2, (amount + 0.5 * h * b2) / p.v);
                let (a4, b4) = f(gut + h * a3, (amount + h * b3) / p.v);
                gut += h / 6.0 * (a1 + 2.0 * a2 + 2.0 * a3 + a4);
                amount += h / 6.0 * (b1 + 2.0 * b2 + 2.0 * b3 + b4);
            }
            amount / p.v
        };
        let mut steps = 64;
        let mut prev = integrate(steps);
        loop {
            steps *= 2;
            let next = integrate(steps);
            if (next - prev).abs() <= 1e-12 * next.abs() || steps > 1 << 20 {
                return next;
            }
            prev = next;
        }
    }

    #[test]
    fn zero_at_dosing_time() {
        let (p, r) = example();
        assert_eq!(concentration_at(&p, &r, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn two_hours_matches_ode() {
        let (p, r) = example();
        let c = concentration_at(&p, &r, 2.0).unwrap();
        let oracle = ode_oracle(&p, 10.0, 2.0);
        assert!(((c - oracle) / oracle).abs() < 1e-8, "{c} vs {oracle}");
        assert!((c - 0.08445).abs() < 5e-5);
    }

    #[test]
    fn vanishes_at_infinity() {
        let (p, r) = example();
        let c = concentration_at(&p, &r, 1e6).unwrap();
        assert!(c < 1e-300);
    }

    #[test]
    fn degenerate_rates_use_limit() {
        // ka == k exactly
        let p = IndividualPk::new(0.018, 1.8, 100.0).unwrap();
        let r = DoseRegimen::repeated("single", 10.0, 24.0, 1).unwrap();
        let t: f64 = 30.0;
        let expected = 10.0 / 100.0 * 0.018 * t * (-0.018 * t).exp();
        let c = concentration_at(&p, &r, t).unwrap();
        assert!((c - expected).abs() < 1e-15);
        // just outside the cutoff the general formula agrees with the limit
        let near = IndividualPk::new(0.018 * (1.0 + 1e-6), 1.8, 100.0).unwrap();
        let c_near = concentration_at(&near, &r, t).unwrap();
        assert!(((c_near - expected) / expected).abs() < 1e-5);
    }

    #[test]
    fn rejects_bad_inputs() {
        let (_, r) = example();
        let bad = IndividualPk { ka: f64::NAN, cl: 1.8, v: 100.0 };
        assert!(matches!(concentration_at(&bad, &r, 1.0), Err(Error::InvalidParameter(_))));
        let (p, _) = example();
        assert!(concentration_at(&p, &r, -1.0).is_err());
    }

    #[test]
    fn regimen_validation() {
        let a = |d, t| Administration { dose_mg: d, time_h: t };
        assert!(DoseRegimen::new("x", vec![]).is_err());
        assert!(DoseRegimen::new("x", vec![a(1.0, 0.0), a(1.0, 0.0)]).is_err());
        assert!(DoseRegimen::new("x", vec![a(0.0, 0.0)]).is_err());
        assert!(DoseRegimen::new("x", vec![a(1.0, 0.0), a(2.0, 12.0)]).is_ok());
    }

    #[test]
    fn fingerprint_ignores_label() {
        let a = DoseRegimen::daily("a", 10.0);
        let b = DoseRegimen::daily("b", 10.0);
        assert_eq!(a.fingerprint(), b.fingerprint());
        assert_ne!(a.fingerprint(), DoseRegimen::daily("a", 15.0).fingerprint());
    }
}
