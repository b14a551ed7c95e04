use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Weights and toxicity cut-offs of the piecewise gain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GainParams {
    pub alpha1: f64,
    pub alpha2: f64,
    pub alpha3: f64,
    pub delta_min: f64,
    pub delta_max: f64,
}

impl Default for GainParams {
    fn default() -> Self {
        Self { alpha1: 2.0, alpha2: 1.0, alpha3: -4.0, delta_min: 0.20, delta_max: 0.33 }
    }
}

impl GainParams {
    pub fn validate(&self) -> Result<()> {
        let Self { alpha1, alpha2, alpha3, delta_min, delta_max } = *self;
        if !(alpha1 >= 0.0 && alpha2 >= 0.0 && alpha1.is_finite() && alpha2.is_finite()) {
            return Err(Error::invalid(format!("alpha1 and alpha2 must be >= 0, got {alpha1}, {alpha2}")));
        }
        if !(alpha3 <= 0.0 && alpha3.is_finite()) {
            return Err(Error::invalid(format!("alpha3 must be <= 0, got {alpha3}")));
        }
        if !(0.0 < delta_min && delta_min < delta_max && delta_max < 1.0) {
            return Err(Error::invalid(format!(
                "need 0 < delta_min < delta_max < 1, got {delta_min}, {delta_max}"
            )));
        }
        Ok(())
    }

    /// Gain without validation; callers check `params` once up front.
    pub(crate) fn eval(&self, p: f64, q: f64, s: f64) -> f64 {
        if p >= self.delta_max {
            f64::NEG_INFINITY
        } else if p >= self.delta_min {
            self.alpha1 * s + self.alpha2 * q + self.alpha3 * (p - self.delta_min)
        } else {
            self.alpha1 * s + self.alpha2 * q
        }
    }
}

/// Gain of a regimen with DLT probability `p`, target-engagement probability
/// `q` and mean efficacy `s`. Returns `-inf` at or above `delta_max`.
pub fn gain(p: f64, q: f64, s: f64, params: &GainParams) -> Result<f64> {
    params.validate()?;
    if !(0.0..=1.0).contains(&p) || !(0.0..=1.0).contains(&q) || !s.is_finite() {
        return Err(Error::pre(format!("gain needs p, q in [0, 1] and finite s, got ({p}, {q}, {s})")));
    }
    Ok(params.eval(p, q, s))
}

/// Relative shortfall of each gain from the best one,
/// `(G_max - G_j) / |G_j|`, with `+inf` for `-inf` gains.
///
/// A zero gain maps to `+inf` when `G_max > 0` and to 0 otherwise.
pub fn relative_gain(gains: &[f64]) -> Result<Vec<f64>> {
    if gains.iter().any(|g| g.is_nan() || *g == f64::INFINITY) {
        return Err(Error::pre("gains must be finite or -inf"));
    }
    let g_max = gains.iter().copied().filter(|g| g.is_finite()).reduce(f64::max).ok_or(Error::NoAdmissibleRegimen)?;
    Ok(gains
        .iter()
        .map(|&g| {
            if g == f64::NEG_INFINITY {
                f64::INFINITY
            } else if g == 0.0 {
                if g_max > 0.0 { f64::INFINITY } else { 0.0 }
            } else {
                (g_max - g) / g.abs()
            }
        })
        .collect())
}

/// Lowest index whose relative gain is at most `x_percent / 100`.
pub fn mgd_x(rg: &[f64], x_percent: f64) -> Result<usize> {
    if !(x_percent >= 0.0) {
        return Err(Error::invalid(format!("x must be >= 0, got {x_percent}")));
    }
    let tol = x_percent / 100.0;
    rg.iter().position(|&r| r <= tol).ok_or(Error::NoAdmissibleRegimen)
}

/// Regimen with the highest probability of being the MGD; ties go to the
/// lowest index. `None` when every probability is zero.
pub fn od_x(u: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (j, &v) in u.iter().enumerate() {
        if v > 0.0 && best.is_none_or(|(_, b)| v > b) {
            best = Some((j, v));
        }
    }
    best.map(|(j, _)| j)
}
