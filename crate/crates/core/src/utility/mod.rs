//! From exposure-response posteriors to a recommended regimen: population
//! endpoint draws per regimen, the gain function, MGD-x% and OD-x%.

mod gain;
mod marginal;

pub use gain::{gain, mgd_x, od_x, relative_gain, GainParams};
pub use marginal::{endpoint_by_dose, MarginalBudget};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default tolerance (percent) for MGD-x% and OD-x%.
pub const DEFAULT_X_PERCENT: f64 = 1.0;

/// Posterior draws of the population-level endpoints for each regimen.
///
/// `p[j][m]`, `q[j][m]` and `s[j][m]` share the posterior-parameter draw `m`
/// across regimens.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndpointByDose {
    pub labels: Vec<String>,
    pub p: Vec<Vec<f64>>,
    pub q: Vec<Vec<f64>>,
    pub s: Vec<Vec<f64>>,
}

impl EndpointByDose {
    pub fn new(labels: Vec<String>, p: Vec<Vec<f64>>, q: Vec<Vec<f64>>, s: Vec<Vec<f64>>) -> Result<Self> {
        let ebd = Self { labels, p, q, s };
        ebd.validate()?;
        Ok(ebd)
    }

    pub fn validate(&self) -> Result<()> {
        let j = self.labels.len();
        if j == 0 || self.p.len() != j || self.q.len() != j || self.s.len() != j {
            return Err(Error::pre("endpoint draws must cover every regimen"));
        }
        let m = self.p[0].len();
        if m == 0 {
            return Err(Error::pre("endpoint draws are empty"));
        }
        for r in 0..j {
            if self.p[r].len() != m || self.q[r].len() != m || self.s[r].len() != m {
                return Err(Error::pre("endpoint draw sets must have equal length"));
            }
            if self.p[r].iter().any(|v| !(0.0..=1.0).contains(v)) || self.q[r].iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::pre(format!("probabilities out of range for regimen {}", self.labels[r])));
            }
            if self.s[r].iter().any(|v| !v.is_finite()) {
                return Err(Error::pre(format!("non-finite efficacy draw for regimen {}", self.labels[r])));
            }
        }
        Ok(())
    }

    pub fn n_regimens(&self) -> usize {
        self.labels.len()
    }

    pub fn n_draws(&self) -> usize {
        self.p.first().map_or(0, Vec::len)
    }

    /// The first `n` regimens.
    pub fn prefix(&self, n: usize) -> Self {
        let n = n.min(self.n_regimens());
        Self {
            labels: self.labels[..n].to_vec(),
            p: self.p[..n].to_vec(),
            q: self.q[..n].to_vec(),
            s: self.s[..n].to_vec(),
        }
    }

    /// Posterior means `(p, q, s)` per regimen.
    pub fn means(&self) -> Vec<(f64, f64, f64)> {
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        (0..self.n_regimens()).map(|j| (mean(&self.p[j]), mean(&self.q[j]), mean(&self.s[j]))).collect()
    }

    /// Gains of every regimen under draw `m`.
    pub fn draw_gains(&self, m: usize, params: &GainParams) -> Vec<f64> {
        (0..self.n_regimens()).map(|j| params.eval(self.p[j][m], self.q[j][m], self.s[j][m])).collect()
    }
}

/// Frequencies of each regimen being the per-draw MGD-x%, plus the mass of
/// draws in which no regimen has a finite gain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UProbs {
    pub u: Vec<f64>,
    pub none: f64,
}

pub fn u_probs(ebd: &EndpointByDose, params: &GainParams, x_percent: f64) -> Result<UProbs> {
    params.validate()?;
    ebd.validate()?;
    let m = ebd.n_draws();
    let mut counts = vec![0usize; ebd.n_regimens()];
    let mut none = 0usize;
    for i in 0..m {
        let gains = ebd.draw_gains(i, params);
        match relative_gain(&gains) {
            Ok(rg) => counts[mgd_x(&rg, x_percent)?] += 1,
            Err(Error::NoAdmissibleRegimen) => none += 1,
            Err(e) => return Err(e),
        }
    }
    Ok(UProbs {
        u: counts.iter().map(|&c| c as f64 / m as f64).collect(),
        none: none as f64 / m as f64,
    })
}

/// Summary of one recommendation step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recommendation {
    pub labels: Vec<String>,
    pub mean_p: Vec<f64>,
    pub mean_q: Vec<f64>,
    pub mean_s: Vec<f64>,
    /// Plug-in gains from posterior-mean endpoints.
    pub gains: Vec<f64>,
    pub rg: Vec<f64>,
    pub u: Vec<f64>,
    pub none_mass: f64,
    pub mgd_x: Option<usize>,
    pub od_x: Option<usize>,
    pub x_percent: f64,
}

/// Plug-in MGD-x% and posterior OD-x% over all regimens of `ebd`.
pub fn recommend(ebd: &EndpointByDose, params: &GainParams, x_percent: f64) -> Result<Recommendation> {
    let up = u_probs(ebd, params, x_percent)?;
    let means = ebd.means();
    let gains: Vec<f64> = means.iter().map(|&(p, q, s)| params.eval(p, q, s)).collect();
    let (rg, mgd) = match relative_gain(&gains) {
        Ok(rg) => {
            let m = mgd_x(&rg, x_percent)?;
            (rg, Some(m))
        }
        Err(Error::NoAdmissibleRegimen) => (vec![f64::INFINITY; gains.len()], None),
        Err(e) => return Err(e),
    };
    Ok(Recommendation {
        labels: ebd.labels.clone(),
        mean_p: means.iter().map(|m| m.0).collect(),
        mean_q: means.iter().map(|m| m.1).collect(),
        mean_s: means.iter().map(|m| m.2).collect(),
        gains,
        rg,
        od_x: od_x(&up.u),
        u: up.u,
        none_mass: up.none,
        mgd_x: mgd,
        x_percent,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use proptest::prelude::*;
    use rand::Rng;

    fn ebd(p: Vec<Vec<f64>>, q: Vec<Vec<f64>>, s: Vec<Vec<f64>>) -> EndpointByDose {
        let labels = (0..p.len()).map(|j| format!("r{j}")).collect();
        EndpointByDose::new(labels, p, q, s).unwrap()
    }

    #[test]
    fn frequency_count() {
        // draws whose MGD is regimen 1, 1, 2 (0-based)
        let e = ebd(
            vec![vec![0.1; 3], vec![0.1; 3], vec![0.1; 3]],
            vec![vec![0.0; 3], vec![0.0; 3], vec![0.0; 3]],
            vec![vec![0.1, 0.1, 0.1], vec![0.5, 0.5, 0.2], vec![0.3, 0.3, 0.6]],
        );
        let up = u_probs(&e, &GainParams::default(), 1.0).unwrap();
        assert_eq!(up.u, vec![0.0, 2.0 / 3.0, 1.0 / 3.0]);
        assert_eq!(up.none, 0.0);
    }

    #[test]
    fn identical_draws_give_indicator() {
        let e = ebd(vec![vec![0.1; 5], vec![0.15; 5]], vec![vec![0.2; 5], vec![0.9; 5]], vec![vec![0.1; 5]; 2]);
        let up = u_probs(&e, &GainParams::default(), 1.0).unwrap();
        assert_eq!(up.u, vec![0.0, 1.0]);
    }

    #[test]
    fn all_toxic_draws_count_as_none() {
        let e = ebd(vec![vec![0.5, 0.1], vec![0.6, 0.1]], vec![vec![0.5; 2]; 2], vec![vec![0.1; 2]; 2]);
        let up = u_probs(&e, &GainParams::default(), 1.0).unwrap();
        assert_eq!(up.none, 0.5);
        assert_eq!(up.u.iter().sum::<f64>() + up.none, 1.0);
        let all_toxic = ebd(vec![vec![0.5; 2]; 2], vec![vec![0.5; 2]; 2], vec![vec![0.1; 2]; 2]);
        let rec = recommend(&all_toxic, &GainParams::default(), 1.0).unwrap();
        assert_eq!(rec.od_x, None);
        assert_eq!(rec.mgd_x, None);
        assert_eq!(rec.none_mass, 1.0);
    }

    #[test]
    fn plug_in_uses_posterior_means() {
        // one toxic draw would make the mean per-draw gain -inf; the plug-in stays finite
        let e = ebd(vec![vec![0.1, 0.1, 0.5], vec![0.05; 3]], vec![vec![0.9; 3], vec![0.1; 3]], vec![vec![0.2; 3]; 2]);
        let rec = recommend(&e, &GainParams::default(), 1.0).unwrap();
        assert!(rec.gains[0].is_finite());
        assert_eq!(rec.mgd_x, Some(0));
    }

    #[test]
    fn validates_shapes() {
        let labels = vec!["a".to_string()];
        assert!(EndpointByDose::new(labels.clone(), vec![vec![0.1]], vec![vec![0.1, 0.2]], vec![vec![0.0]]).is_err());
        assert!(EndpointByDose::new(labels.clone(), vec![vec![1.5]], vec![vec![0.1]], vec![vec![0.0]]).is_err());
        assert!(EndpointByDose::new(labels, vec![vec![]], vec![vec![]], vec![vec![]]).is_err());
    }

    /// Straight re-enumeration without the library's gain helpers.
    fn brute_force_u(p: &[Vec<f64>], q: &[Vec<f64>], s: &[Vec<f64>], x: f64) -> (Vec<f64>, f64) {
        let (a1, a2, a3, dmin, dmax) = (2.0, 1.0, -4.0, 0.2, 0.33);
        let j = p.len();
        let m = p[0].len();
        let mut counts = vec![0.0; j];
        let mut none = 0.0;
        for i in 0..m {
            let mut g = Vec::new();
            for r in 0..j {
                let v = if p[r][i] >= dmax {
                    None
                } else if p[r][i] >= dmin {
                    Some(a1 * s[r][i] + a2 * q[r][i] + a3 * (p[r][i] - dmin))
                } else {
                    Some(a1 * s[r][i] + a2 * q[r][i])
                };
                g.push(v);
            }
            let finite: Vec<f64> = g.iter().flatten().copied().collect();
            if finite.is_empty() {
                none += 1.0;
                continue;
            }
            let gmax = finite.iter().cloned().fold(f64::MIN, f64::max);
            let mut chosen = None;
            for (r, v) in g.iter().enumerate() {
                if let Some(v) = v {
                    let ok = if *v == 0.0 { gmax <= 0.0 } else { (gmax - v) / v.abs() <= x / 100.0 };
                    if ok {
                        chosen = Some(r);
                        break;
                    }
                }
            }
            counts[chosen.unwrap()] += 1.0;
        }
        (counts.iter().map(|c| c / m as f64).collect(), none / m as f64)
    }

    #[test]
    fn matches_brute_force_on_random_instances() {
        let mut rng = rng_from_seed(77);
        for _ in 0..100 {
            let j = rng.random_range(1..=6);
            let m = rng.random_range(1..=50);
            let mut draws = |lo: f64, hi: f64| -> Vec<Vec<f64>> {
                (0..j).map(|_| (0..m).map(|_| rng.random_range(lo..hi)).collect()).collect()
            };
            let p = draws(0.0, 0.45);
            let q = draws(0.0, 1.0);
            let s = draws(-0.5, 0.8);
            let x = [0.0, 1.0, 5.0][m % 3];
            let e = ebd(p.clone(), q.clone(), s.clone());
            let up = u_probs(&e, &GainParams::default(), x).unwrap();
            let (u, none) = brute_force_u(&p, &q, &s, x);
            assert_eq!(up.u, u);
            assert_eq!(up.none, none);
        }
    }

    proptest! {
        #[test]
        fn u_plus_none_is_one(
            p in prop::collection::vec(prop::collection::vec(0.0f64..0.5, 7), 1..5),
            q0 in 0.0f64..1.0,
        ) {
            let j = p.len();
            let q = vec![vec![q0; 7]; j];
            let s: Vec<Vec<f64>> = (0..j).map(|r| vec![0.1 * r as f64; 7]).collect();
            let e = ebd(p, q, s);
            let up = u_probs(&e, &GainParams::default(), 1.0).unwrap();
            prop_assert!((up.u.iter().sum::<f64>() + up.none - 1.0).abs() < 1e-12);
        }
    }
}
