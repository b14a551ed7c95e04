use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::model::{conc_sum, single_dose_auc, DoseRegimen, IndividualPk};
use crate::error::{Error, Result};
use crate::optim::golden_section_max;

/// Individual exposure metrics derived from the concentration profile.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ExposureKind {
    /// Area under the curve over the 24 h following the last administration.
    Auc24,
    /// Area under the curve from the first administration to 24 h after the last.
    AucCum,
    Cmax,
    /// Pre-dose concentration just before a scheduled administration.
    Ctrough,
}

impl ExposureKind {
    pub const ALL: [ExposureKind; 4] =
        [ExposureKind::Auc24, ExposureKind::AucCum, ExposureKind::Cmax, ExposureKind::Ctrough];

    /// The window each metric is evaluated on by default for `regimen`.
    pub fn default_window(self, regimen: &DoseRegimen) -> Result<(f64, f64)> {
        let last = regimen.last_time();
        match self {
            ExposureKind::Auc24 => Ok((last, last + 24.0)),
            ExposureKind::AucCum | ExposureKind::Cmax => Ok((regimen.first_time(), last + 24.0)),
            ExposureKind::Ctrough => {
                let admins = regimen.administrations();
                if admins.len() < 2 {
                    return Err(Error::UnsupportedKind(
                        "Ctrough needs at least two administrations".into(),
                    ));
                }
                Ok((admins[admins.len() - 2].time_h, last))
            }
        }
    }

    /// Metric under its default window.
    pub fn evaluate(self, params: &IndividualPk, regimen: &DoseRegimen) -> Result<f64> {
        let window = self.default_window(regimen)?;
        derive_exposure(params, regimen, self, window)
    }
}

impl fmt::Display for ExposureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ExposureKind::Auc24 => "AUC24",
            ExposureKind::AucCum => "AUCcum",
            ExposureKind::Cmax => "Cmax",
            ExposureKind::Ctrough => "Ctrough",
        })
    }
}

impl FromStr for ExposureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "auc24" => Ok(ExposureKind::Auc24),
            "auccum" => Ok(ExposureKind::AucCum),
            "cmax" => Ok(ExposureKind::Cmax),
            "ctrough" => Ok(ExposureKind::Ctrough),
            other => Err(Error::UnsupportedKind(other.to_string())),
        }
    }
}

/// Closed-form AUC of the superposed profile over `[t0, t1]`.
pub(crate) fn auc_window(params: &IndividualPk, regimen: &DoseRegimen, t0: f64, t1: f64) -> f64 {
    let (ka, k, v) = (params.ka, params.k(), params.v);
    let mut total = 0.0;
    for a in regimen.administrations() {
        if a.time_h >= t1 {
            break;
        }
        let upper = t1 - a.time_h;
        let lower = (t0 - a.time_h).max(0.0);
        total += single_dose_auc(a.dose_mg, ka, k, v, upper)
            - single_dose_auc(a.dose_mg, ka, k, v, lower);
    }
    total.max(0.0)
}

fn cmax_window(params: &IndividualPk, regimen: &DoseRegimen, t0: f64, t1: f64) -> f64 {
    let (ka, k, v) = (params.ka, params.k(), params.v);
    let admins = regimen.administrations();
    let conc = |t: f64| conc_sum(ka, k, v, admins, t);

    // Interval boundaries inside the window: the profile is a*e^{-kt} - b*e^{-ka t}
    // between consecutive intakes, hence unimodal on each piece.
    let mut cuts = vec![t0];
    cuts.extend(admins.iter().map(|a| a.time_h).filter(|&t| t > t0 && t < t1));
    cuts.push(t1);

    let mut best = 0.0f64;
    for w in cuts.windows(2) {
        let (a, b) = (w[0], w[1]);
        if b <= a {
            continue;
        }
        let (_, c) = golden_section_max(conc, a, b, 1e-12);
        best = best.max(c);
    }
    best
}

/// Derives an individual exposure metric over `window = (t0, t1)`.
///
/// AUC kinds integrate the closed-form profile; `Cmax` is the largest value
/// found by per-interval golden-section search; `Ctrough` is the concentration
/// immediately before the administration scheduled at `t1`.
pub fn derive_exposure(
    params: &IndividualPk,
    regimen: &DoseRegimen,
    kind: ExposureKind,
    window: (f64, f64),
) -> Result<f64> {
    params.validate()?;
    let (t0, t1) = window;
    if !(t0.is_finite() && t1.is_finite()) || t0 < 0.0 {
        return Err(Error::invalid(format!("bad exposure window ({t0}, {t1})")));
    }
    match kind {
        ExposureKind::Auc24 | ExposureKind::AucCum => {
            if t0 >= t1 {
                return Err(Error::EmptyWindow(t0, t1));
            }
            Ok(auc_window(params, regimen, t0, t1))
        }
        ExposureKind::Cmax => {
            if t0 >= t1 {
                return Err(Error::EmptyWindow(t0, t1));
            }
            Ok(cmax_window(params, regimen, t0, t1))
        }
        ExposureKind::Ctrough => {
            let scheduled = regimen.administrations().iter().any(|a| a.time_h == t1);
            if !scheduled {
                return Err(Error::pre(format!(
                    "Ctrough window end {t1} is not a scheduled administration time"
                )));
            }
            let (ka, k, v) = (params.ka, params.k(), params.v);
            let before: Vec<_> = regimen
                .administrations()
                .iter()
                .copied()
                .filter(|a| a.time_h < t1)
                .collect();
            Ok(conc_sum(ka, k, v, &before, t1))
        }
    }
}
