//! Cubic I-spline basis (integrated quadratic M-splines).
//!
//! With boundary knots `a < b` and interior knots `k_1 < ... < k_m`, the basis
//! has `m + 3` members. Member `l` is the tail sum of the cubic B-splines on
//! the clamped knot vector `[a, a, a, a, k_1, ..., k_m, b, b, b, b]`, which is
//! the same function as the integral of the normalized quadratic M-spline.
//! Every member rises monotonically from 0 at `a` to 1 at `b`; arguments
//! outside `[a, b]` are clamped.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::quantile_sorted;

const ORDER: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ISplineBasis {
    knots: Vec<f64>,
    extended: Vec<f64>,
}

impl ISplineBasis {
    /// `knots` are the boundary and interior knots in increasing order.
    pub fn new(knots: &[f64]) -> Result<Self> {
        if knots.len() < 2 {
            return Err(Error::invalid("I-spline basis needs at least two boundary knots"));
        }
        if knots.iter().any(|k| !k.is_finite()) || knots.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid(format!("knots must be finite and strictly increasing: {knots:?}")));
        }
        let (a, b) = (knots[0], knots[knots.len() - 1]);
        let mut extended = vec![a; ORDER];
        extended.extend_from_slice(&knots[1..knots.len() - 1]);
        extended.extend(std::iter::repeat_n(b, ORDER));
        Ok(Self { knots: knots.to_vec(), extended })
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn lower(&self) -> f64 {
        self.knots[0]
    }

    pub fn upper(&self) -> f64 {
        self.knots[self.knots.len() - 1]
    }

    /// Number of basis functions (interior knots + 3).
    pub fn df(&self) -> usize {
        self.knots.len() + 1
    }

    /// Basis values at `z`, written into `out` (length `df`).
    pub fn eval_into(&self, z: f64, out: &mut [f64]) -> Result<()> {
        if !z.is_finite() {
            return Err(Error::invalid(format!("I-spline argument must be finite, got {z}")));
        }
        debug_assert_eq!(out.len(), self.df());
        let z = z.clamp(self.lower(), self.upper());
        if z >= self.upper() {
            out.fill(1.0);
            return Ok(());
        }
        let t = &self.extended;
        // span mu with t[mu] <= z < t[mu+1], mu in ORDER-1 ..= t.len()-ORDER-1
        let mut mu = ORDER - 1;
        while mu + 1 < t.len() - ORDER && t[mu + 1] <= z {
            mu += 1;
        }
        // de Boor / Cox recursion for the ORDER nonzero B-splines on the span
        let mut b = [0.0; ORDER];
        b[0] = 1.0;
        for k in 1..ORDER {
            let mut saved = 0.0;
            for r in 0..k {
                let left = t[mu + r + 1 - k];
                let right = t[mu + r + 1];
                let term = b[r] / (right - left);
                b[r] = saved + (right - z) * term;
                saved = (z - left) * term;
            }
            b[k] = saved;
        }
        // b[r] is B_{mu-3+r}; member l is sum of B_m for m >= l+1
        let first = mu + 1 - ORDER;
        for (l, o) in out.iter_mut().enumerate() {
            let start = l + 1;
            let mut s = 0.0;
            if start <= first {
                s = 1.0;
            } else {
                for (r, br) in b.iter().enumerate() {
                    if first + r >= start {
                        s += br;
                    }
                }
            }
            *o = s.clamp(0.0, 1.0);
        }
        Ok(())
    }

    pub fn eval(&self, z: f64) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.df()];
        self.eval_into(z, &mut out)?;
        Ok(out)
    }
}

/// I-spline basis at `z` for the given knots; `df` must equal `knots.len() + 1`.
pub fn ispline_basis(z: f64, knots: &[f64], df: usize) -> Result<Vec<f64>> {
    let basis = ISplineBasis::new(knots)?;
    if basis.df() != df {
        return Err(Error::invalid(format!(
            "{} knots give a cubic I-spline basis of size {}, not {df}",
            knots.len(),
            basis.df()
        )));
    }
    basis.eval(z)
}

/// Knot placement from observed exposures: boundaries at the 1st and 99th
/// percentiles, one interior knot at the median below 30 observations and
/// knots at the terciles from 30 on.
pub fn default_knots(exposures: &[f64]) -> Result<Vec<f64>> {
    if exposures.is_empty() || exposures.iter().any(|z| !z.is_finite()) {
        return Err(Error::pre("knot placement needs at least one finite exposure"));
    }
    let mut sorted = exposures.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut a = quantile_sorted(&sorted, 0.01);
    let mut b = quantile_sorted(&sorted, 0.99);
    let interior_q: &[f64] = if sorted.len() < 30 { &[0.5] } else { &[1.0 / 3.0, 2.0 / 3.0] };
    if b - a <= 1e-9 * a.abs().max(1.0) {
        // all exposures (nearly) equal: spread the knots around that value
        let half = 0.1 * a.abs().max(1e-6);
        a -= half;
        b += half;
    }
    let mut knots = vec![a];
    for &q in interior_q {
        let k = quantile_sorted(&sorted, q);
        let lo = *knots.last().unwrap();
        // keep knots strictly increasing when data are tied
        let k = if k <= lo || k >= b { lo + (b - lo) / (interior_q.len() as f64 + 1.0) } else { k };
        knots.push(k);
    }
    knots.push(b);
    Ok(knots)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Normalized quadratic M-splines on [a,a,a, interior, b,b,b] by the plain
    /// recursive definition, integrated with composite Simpson.
    fn mspline(i: usize, k: usize, t: &[f64], x: f64) -> f64 {
        if k == 1 {
            let last = t[i + 1] == t[t.len() - 1] && t[i] < t[i + 1];
            return if (t[i] <= x && x < t[i + 1]) || (last && x == t[i + 1]) {
                1.0 / (t[i + 1] - t[i])
            } else {
                0.0
            };
        }
        let width = t[i + k] - t[i];
        if width == 0.0 {
            return 0.0;
        }
        let kf = k as f64;
        kf * ((x - t[i]) * mspline(i, k - 1, t, x) + (t[i + k] - x) * mspline(i + 1, k - 1, t, x))
            / ((kf - 1.0) * width)
    }

    fn ispline_oracle(knots: &[f64], z: f64) -> Vec<f64> {
        let (a, b) = (knots[0], knots[knots.len() - 1]);
        let mut t = vec![a; 3];
        t.extend_from_slice(&knots[1..knots.len() - 1]);
        t.extend([b; 3]);
        let n_basis = t.len() - 3;
        let z = z.clamp(a, b);
        (0..n_basis)
            .map(|i| {
                // integrate piecewise between knots so Simpson sees smooth pieces
                let mut total = 0.0;
                for w in knots.windows(2) {
                    let (lo, hi) = (w[0], w[1].min(z));
                    if hi <= lo {
                        continue;
                    }
                    let n = 200;
                    let h = (hi - lo) / n as f64;
                    let mut s = 0.0;
                    for j in 0..=n {
                        let x = lo + j as f64 * h;
                        let x = if j == n { x - 1e-13 * (hi - lo) } else { x };
                        let c = if j == 0 || j == n { 1.0 } else if j % 2 == 1 { 4.0 } else { 2.0 };
                        s += c * mspline(i, 3, &t, x);
                    }
                    total += s * h / 3.0;
                }
                total
            })
            .collect()
    }

    #[test]
    fn boundaries() {
        let knots = [5.0, 12.0, 20.0, 40.0];
        let basis = ISplineBasis::new(&knots).unwrap();
        assert_eq!(basis.df(), 5);
        assert!(basis.eval(5.0).unwrap().iter().all(|&v| v == 0.0));
        assert!(basis.eval(40.0).unwrap().iter().all(|&v| v == 1.0));
        assert!(basis.eval(1.0).unwrap().iter().all(|&v| v == 0.0));
        assert!(basis.eval(100.0).unwrap().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn matches_integrated_mspline_oracle() {
        for knots in [vec![0.0, 1.0], vec![2.0, 7.0, 30.0], vec![5.0, 12.0, 20.0, 40.0]] {
            let basis = ISplineBasis::new(&knots).unwrap();
            let (a, b) = (knots[0], knots[knots.len() - 1]);
            for i in 0..=40 {
                let z = a + (b - a) * i as f64 / 40.0;
                let got = basis.eval(z).unwrap();
                let want = ispline_oracle(&knots, z);
                assert_eq!(got.len(), want.len());
                for (g, w) in got.iter().zip(&want) {
                    assert!((g - w).abs() < 1e-6, "knots {knots:?} z {z}: {got:?} vs {want:?}");
                }
            }
        }
    }

    #[test]
    fn rejects_bad_input() {
        assert!(ISplineBasis::new(&[1.0]).is_err());
        assert!(ISplineBasis::new(&[1.0, 1.0]).is_err());
        assert!(ISplineBasis::new(&[1.0, 3.0, 2.0]).is_err());
        let basis = ISplineBasis::new(&[1.0, 2.0]).unwrap();
        assert!(basis.eval(f64::NAN).is_err());
        assert!(ispline_basis(1.5, &[1.0, 2.0], 4).is_err());
        assert_eq!(ispline_basis(1.5, &[1.0, 2.0], 3).unwrap().len(), 3);
    }

    #[test]
    fn default_knot_rule() {
        let small: Vec<f64> = (1..=20).map(f64::from).collect();
        let k = default_knots(&small).unwrap();
        assert_eq!(k.len(), 3);
        assert!((k[1] - 10.5).abs() < 1e-12);
        assert!((k[0] - 1.19).abs() < 1e-12);
        assert!((k[2] - 19.81).abs() < 1e-12);

        let large: Vec<f64> = (0..=60).map(f64::from).collect();
        let k = default_knots(&large).unwrap();
        assert_eq!(k.len(), 4);
        assert!((k[1] - 20.0).abs() < 1e-12 && (k[2] - 40.0).abs() < 1e-12);

        let tied = default_knots(&[8.0; 10]).unwrap();
        assert!(tied.windows(2).all(|w| w[1] > w[0]));
        assert!(default_knots(&[]).is_err());
    }

    proptest! {
        #[test]
        fn monotone_and_bounded(
            gaps in prop::collection::vec(0.1f64..10.0, 1..6),
            start in 0.1f64..20.0,
            u1 in 0.0f64..1.0,
            u2 in 0.0f64..1.0,
        ) {
            let mut knots = vec![start];
            for g in gaps {
                knots.push(knots.last().unwrap() + g);
            }
            let basis = ISplineBasis::new(&knots).unwrap();
            let (a, b) = (basis.lower(), basis.upper());
            let (z1, z2) = (a + (b - a) * u1.min(u2), a + (b - a) * u1.max(u2));
            let i1 = basis.eval(z1).unwrap();
            let i2 = basis.eval(z2).unwrap();
            for (x, y) in i1.iter().zip(&i2) {
                prop_assert!((0.0..=1.0).contains(x));
                prop_assert!(*x <= *y + 1e-12);
            }
            // members are nested: I_0 >= I_1 >= ...
            for w in i1.windows(2) {
                prop_assert!(w[0] + 1e-12 >= w[1]);
            }
        }
    }
}
