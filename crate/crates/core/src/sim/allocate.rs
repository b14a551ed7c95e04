use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which tolerated regimens share the optimization cohort.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum AllocMode {
    /// Every tolerated regimen, in proportion to its probability.
    #[default]
    All,
    /// Only the two most probable regimens, probabilities renormalized.
    TopTwo,
}

impl fmt::Display for AllocMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AllocMode::All => "all",
            AllocMode::TopTwo => "top-two",
        })
    }
}

impl FromStr for AllocMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(AllocMode::All),
            "top-two" | "top_two" => Ok(AllocMode::TopTwo),
            other => Err(Error::invalid(format!("unknown allocation mode `{other}` (all, top-two)"))),
        }
    }
}

/// Splits `n` patients across regimens in proportion to `u`.
///
/// Each count starts as `round(n * u_j)` (after normalizing `u`), then the
/// rounding surplus or deficit is settled one patient at a time on the
/// entries with the largest rounding error, so the total is exactly `n`.
/// Ties favor the lower regimen: it keeps its extra patient on a surplus and
/// receives the extra patient on a deficit.
pub fn allocate_weighted(n: usize, u: &[f64], mode: AllocMode) -> Result<Vec<usize>> {
    if n == 0 {
        return Err(Error::pre("allocation needs n >= 1"));
    }
    if u.is_empty() || u.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::invalid("allocation probabilities must be finite and >= 0"));
    }
    let mut w = u.to_vec();
    if mode == AllocMode::TopTwo && w.len() > 2 {
        let mut order: Vec<usize> = (0..w.len()).collect();
        order.sort_by(|&a, &b| w[b].total_cmp(&w[a]).then(a.cmp(&b)));
        for &j in &order[2..] {
            w[j] = 0.0;
        }
    }
    let total: f64 = w.iter().sum();
    if total <= 0.0 {
        return Err(Error::pre("allocation probabilities are all zero"));
    }
    let exact: Vec<f64> = w.iter().map(|v| n as f64 * v / total).collect();
    let mut counts: Vec<usize> = exact.iter().map(|x| x.round() as usize).collect();
    let assigned: usize = counts.iter().sum();

    if assigned > n {
        let mut order: Vec<usize> = (0..counts.len()).filter(|&j| counts[j] > 0).collect();
        // largest overshoot first; on ties the higher regimen gives back
        order.sort_by(|&a, &b| {
            let (ea, eb) = (counts[a] as f64 - exact[a], counts[b] as f64 - exact[b]);
            eb.total_cmp(&ea).then(b.cmp(&a))
        });
        for &j in order.iter().take(assigned - n) {
            counts[j] -= 1;
        }
    } else if assigned < n {
        let mut order: Vec<usize> = (0..counts.len()).filter(|&j| w[j] > 0.0).collect();
        order.sort_by(|&a, &b| {
            let (ea, eb) = (exact[a] - counts[a] as f64, exact[b] - counts[b] as f64);
            eb.total_cmp(&ea).then(a.cmp(&b))
        });
        for &j in order.iter().cycle().take(n - assigned) {
            counts[j] += 1;
        }
    }
    Ok(counts)
}
