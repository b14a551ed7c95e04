use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pk::{DoseRegimen, PopPkParams};

/// DLT generator: patient `i` has a DLT at the first administration where
/// `kappa_i * Z_l >= tau`, with `log kappa_i ~ N(0, omega_kappa^2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToxScenario {
    pub omega_kappa: f64,
    pub tau: f64,
}

impl ToxScenario {
    pub fn new(omega_kappa: f64, tau: f64) -> Result<Self> {
        let t = Self { omega_kappa, tau };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.omega_kappa > 0.0 && self.omega_kappa.is_finite()) {
            return Err(Error::invalid(format!("omega_kappa must be > 0, got {}", self.omega_kappa)));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::invalid(format!("tau must be > 0, got {}", self.tau)));
        }
        Ok(())
    }
}

/// Linear-with-plateau endpoint generator:
/// `N(upsilon0 + upsilon1 * min(z, z0), noise_sd^2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EffectScenario {
    pub upsilon0: f64,
    pub upsilon1: f64,
    pub z0: f64,
    #[serde(default = "default_noise_sd")]
    pub noise_sd: f64,
}

fn default_noise_sd() -> f64 {
    EffectScenario::NOISE_SD
}

impl EffectScenario {
    pub const NOISE_SD: f64 = 0.05;

    pub fn new(upsilon0: f64, upsilon1: f64, z0: f64) -> Result<Self> {
        let e = Self { upsilon0, upsilon1, z0, noise_sd: Self::NOISE_SD };
        e.validate()?;
        Ok(e)
    }

    /// Allows `noise_sd == 0` for deterministic test data; the library
    /// scenarios all use 0.05.
    pub fn validate(&self) -> Result<()> {
        if !(self.upsilon0.is_finite() && self.upsilon1.is_finite()) {
            return Err(Error::invalid("upsilon0 and upsilon1 must be finite"));
        }
        if !(self.z0 >= 0.0 && self.z0.is_finite()) {
            return Err(Error::invalid(format!("z0 must be >= 0, got {}", self.z0)));
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return Err(Error::invalid(format!("noise_sd must be >= 0, got {}", self.noise_sd)));
        }
        Ok(())
    }

    pub fn mean(&self, z: f64) -> f64 {
        self.upsilon0 + self.upsilon1 * z.min(self.z0)
    }
}

/// Toxicity scenarios 1 to 4.
///
/// Scenario 3 uses `tau = 26`, which puts its MTD about one level below
/// toxicity scenario 2 at the reference PK. With `tau = 14`
/// ([`TOX_SC3_ALT`]) it would coincide with scenario 4.
pub fn tox_scenario(index: usize) -> Result<ToxScenario> {
    match index {
        1 => Ok(ToxScenario { omega_kappa: 1.5, tau: 120.0 }),
        2 => Ok(ToxScenario { omega_kappa: 0.7, tau: 35.0 }),
        3 => Ok(ToxScenario { omega_kappa: 0.9, tau: 26.0 }),
        4 => Ok(ToxScenario { omega_kappa: 0.9, tau: 14.0 }),
        _ => Err(Error::invalid(format!("toxicity scenario must be 1..=4, got {index}"))),
    }
}

/// Alternative parameters for toxicity scenario 3, identical to scenario 4.
pub const TOX_SC3_ALT: ToxScenario = ToxScenario { omega_kappa: 0.9, tau: 14.0 };

/// PDy scenarios: 1 flat (no activity), 2 early plateau, 3 late plateau.
pub fn pdy_scenario(index: usize) -> Result<EffectScenario> {
    match index {
        1 => EffectScenario::new(0.15, 0.045, 0.0),
        2 => EffectScenario::new(0.0, 0.047, 14.0),
        3 => EffectScenario::new(0.0, 0.016, 39.0),
        _ => Err(Error::invalid(format!("PDy scenario must be 1..=3, got {index}"))),
    }
}

/// Efficacy scenarios: 1 null, 2 early plateau, 3 late plateau.
pub fn efficacy_scenario(index: usize) -> Result<EffectScenario> {
    match index {
        1 => EffectScenario::new(0.0, 0.0, 0.0),
        2 => EffectScenario::new(-0.3, 0.035, 20.0),
        3 => EffectScenario::new(-0.3, 0.018, 39.0),
        _ => Err(Error::invalid(format!("efficacy scenario must be 1..=3, got {index}"))),
    }
}

pub const REFERENCE_DOSES: [f64; 6] = [10.0, 15.0, 25.0, 35.0, 50.0, 70.0];

/// Scenarios reported in the main results table.
pub const MAIN_SCENARIOS: [(usize, usize, usize); 8] =
    [(1, 2, 2), (1, 3, 3), (2, 1, 1), (2, 2, 2), (2, 2, 3), (3, 1, 3), (3, 2, 1), (4, 2, 2)];

/// Extra combinations used only in the two-regimen sensitivity analysis.
pub const SENSITIVITY_SCENARIOS: [(usize, usize, usize); 3] = [(2, 3, 2), (3, 3, 1), (3, 1, 2)];

/// A complete data-generating scenario: true PK population, once-daily
/// regimens and the three endpoint generators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub label: String,
    pub tox: ToxScenario,
    pub pdy: EffectScenario,
    pub efficacy: EffectScenario,
    pub doses: Vec<f64>,
    pub pk: PopPkParams,
}

impl ScenarioSpec {
    /// Library scenario `{tox, pdy, efficacy}` with reference doses and PK.
    pub fn library(tox: usize, pdy: usize, efficacy: usize) -> Result<Self> {
        Ok(Self {
            label: format!("{{{tox},{pdy},{efficacy}}}"),
            tox: tox_scenario(tox)?,
            pdy: pdy_scenario(pdy)?,
            efficacy: efficacy_scenario(efficacy)?,
            doses: REFERENCE_DOSES.to_vec(),
            pk: PopPkParams::REFERENCE,
        })
    }

    /// Parses a label such as `"{2,1,1}"` or `"211"`.
    pub fn from_label(label: &str) -> Result<Self> {
        let digits: Vec<usize> = label
            .chars()
            .filter(|c| !matches!(c, '{' | '}' | ',' | ' '))
            .map(|c| c.to_digit(10).map(|d| d as usize))
            .collect::<Option<_>>()
            .ok_or_else(|| Error::invalid(format!("bad scenario label `{label}`")))?;
        match digits[..] {
            [t, p, e] => Self::library(t, p, e),
            _ => Err(Error::invalid(format!("scenario label `{label}` needs three indices"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.tox.validate()?;
        self.pdy.validate()?;
        self.efficacy.validate()?;
        self.pk.validate()?;
        if self.doses.is_empty() || self.doses.iter().any(|d| !(*d > 0.0 && d.is_finite())) {
            return Err(Error::invalid("scenario doses must be positive"));
        }
        if self.doses.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("scenario doses must be strictly increasing"));
        }
        Ok(())
    }

    /// Once-daily 28-day regimens labelled `1..=J`.
    pub fn regimens(&self) -> Vec<DoseRegimen> {
        self.doses
            .iter()
            .enumerate()
            .map(|(j, &d)| DoseRegimen::daily((j + 1).to_string(), d))
            .collect()
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: Self = toml::from_str(text)
            .map_err(|e| Error::Parse { location: "scenario".into(), message: e.to_string() })?;
        spec.validate()?;
        Ok(spec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plateau_means() {
        let e2 = efficacy_scenario(2).unwrap();
        assert!((e2.mean(30.0) - 0.4).abs() < 1e-12);
        assert!((e2.mean(10.0) - 0.05).abs() < 1e-12);
        let e1 = efficacy_scenario(1).unwrap();
        for z in [0.0, 5.0, 100.0] {
            assert_eq!(e1.mean(z), 0.0);
        }
        let p1 = pdy_scenario(1).unwrap();
        assert!((p1.mean(50.0) - 0.15).abs() < 1e-12);
    }

    #[test]
    fn label_parsing() {
        let a = ScenarioSpec::from_label("{2,1,1}").unwrap();
        let b = ScenarioSpec::from_label("211").unwrap();
        assert_eq!(a, b);
        assert_eq!(a.label, "{2,1,1}");
        assert!(ScenarioSpec::from_label("{5,1,1}").is_err());
        assert!(ScenarioSpec::from_label("21").is_err());
        assert!(ScenarioSpec::from_label("2x1").is_err());
    }

    #[test]
    fn toml_round_trip() {
        for &(t, p, e) in MAIN_SCENARIOS.iter().chain(&SENSITIVITY_SCENARIOS) {
            let s = ScenarioSpec::library(t, p, e).unwrap();
            assert_eq!(ScenarioSpec::from_toml(&s.to_toml()).unwrap(), s);
        }
    }

    #[test]
    fn printed_sc3_is_kept_separately() {
        assert_eq!(TOX_SC3_ALT, tox_scenario(4).unwrap());
        assert_ne!(tox_scenario(3).unwrap(), tox_scenario(4).unwrap());
    }

    #[test]
    fn invalid_generators() {
        assert!(ToxScenario::new(0.0, 1.0).is_err());
        assert!(ToxScenario::new(1.0, -1.0).is_err());
        assert!(EffectScenario::new(0.0, 0.1, -1.0).is_err());
        let mut s = ScenarioSpec::library(1, 1, 1).unwrap();
        s.doses = vec![10.0, 5.0];
        assert!(s.validate().is_err());
    }
}
