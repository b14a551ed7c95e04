use serde::{Deserialize, Serialize};

use super::scenario::ScenarioSpec;
use super::trial::TrialResult;
use crate::error::{Error, Result};
use crate::exposure::MetricMap;
use crate::io::{fmt_sig, Table};
use crate::stats::{norm_cdf, quantile_sorted};
use crate::utility::GainParams;

/// Selection frequencies (percent) and mean patient numbers per regimen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatingCharacteristics {
    pub n_replicates: usize,
    pub mtd_pct: Vec<f64>,
    pub mgd_pct: Vec<f64>,
    pub od_pct: Vec<f64>,
    /// Escalation stopped with every dose too toxic.
    pub stop_pct: f64,
    /// U-DESPE failed to produce a recommendation after a model error.
    pub error_pct: f64,
    pub mean_patients: Vec<f64>,
    pub mean_dlts: Vec<f64>,
}

pub fn operating_characteristics(results: &[TrialResult]) -> Result<OperatingCharacteristics> {
    let first = results.first().ok_or_else(|| Error::pre("no trial results to summarize"))?;
    let j = first.patients.len();
    if results.iter().any(|r| r.patients.len() != j || r.dlts.len() != j) {
        return Err(Error::pre("trial results disagree on the number of regimens"));
    }
    let n = results.len() as f64;
    let pct = |pick: &dyn Fn(&TrialResult) -> Option<usize>| {
        let mut v = vec![0.0; j];
        for r in results {
            if let Some(k) = pick(r) {
                v[k] += 100.0 / n;
            }
        }
        v
    };
    let mean = |pick: &dyn Fn(&TrialResult) -> &[usize]| {
        let mut v = vec![0.0; j];
        for r in results {
            for (acc, &c) in v.iter_mut().zip(pick(r)) {
                *acc += c as f64 / n;
            }
        }
        v
    };
    Ok(OperatingCharacteristics {
        n_replicates: results.len(),
        mtd_pct: pct(&|r| r.mtd),
        mgd_pct: pct(&|r| r.mgd),
        od_pct: pct(&|r| r.od),
        stop_pct: 100.0 * results.iter().filter(|r| r.stopped_for_toxicity()).count() as f64 / n,
        error_pct: 100.0 * results.iter().filter(|r| r.error.is_some()).count() as f64 / n,
        mean_patients: mean(&|r| &r.patients),
        mean_dlts: mean(&|r| &r.dlts),
    })
}

fn opt_index(v: Option<usize>) -> String {
    v.map_or_else(String::new, |k| (k + 1).to_string())
}

/// One row per replicate; regimen indices are 1-based, empty when absent.
pub fn raw_results_table(results: &[TrialResult], sig: usize) -> Table {
    let j = results.first().map_or(0, |r| r.patients.len());
    let mut header: Vec<String> = ["replicate", "seed", "design", "stop_reason", "mtd", "mgd", "od"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend((1..=j).map(|k| format!("n_{k}")));
    header.extend((1..=j).map(|k| format!("dlt_{k}")));
    header.extend(
        ["escalation_path", "escalation_violations", "above_mtd", "pk_converged", "max_rhat", "error"]
            .iter()
            .map(|s| s.to_string()),
    );
    let mut t = Table { header, rows: Vec::new() };
    for r in results {
        let mut row = vec![
            r.replicate.to_string(),
            r.seed.to_string(),
            r.design.to_string(),
            r.stop_reason.map_or_else(String::new, |s| s.to_string()),
            opt_index(r.mtd),
            opt_index(r.mgd),
            opt_index(r.od),
        ];
        row.extend(r.patients.iter().map(|c| c.to_string()));
        row.extend(r.dlts.iter().map(|c| c.to_string()));
        row.push(r.escalation_path.iter().map(|k| (k + 1).to_string()).collect::<Vec<_>>().join(" "));
        row.push(r.escalation_violations.to_string());
        row.push(r.allocations_above_mtd.to_string());
        row.push(r.pk_converged.map_or_else(String::new, |c| c.to_string()));
        row.push(r.max_rhat.map_or_else(String::new, |x| fmt_sig(x, sig)));
        row.push(r.error.clone().unwrap_or_default());
        t.push(row);
    }
    t
}

/// Results-table layout: one row per criterion with the stop column and a
/// column per regimen.
pub fn summary_table(oc: &OperatingCharacteristics, sig: usize) -> Table {
    let j = oc.mtd_pct.len();
    let mut header = vec!["row".to_string(), "stop".to_string()];
    header.extend((1..=j).map(|k| k.to_string()));
    let mut t = Table { header, rows: Vec::new() };
    let line = |name: &str, stop: String, v: &[f64]| {
        let mut row = vec![name.to_string(), stop];
        row.extend(v.iter().map(|x| fmt_sig(*x, sig)));
        row
    };
    t.push(line("% MTD", fmt_sig(oc.stop_pct, sig), &oc.mtd_pct));
    t.push(line("% MGD-x%", String::new(), &oc.mgd_pct));
    t.push(line("% OD-x%", String::new(), &oc.od_pct));
    t.push(line("No patients", String::new(), &oc.mean_patients));
    t.push(line("No DLTs", String::new(), &oc.mean_dlts));
    t
}

/// Plot-ready truth of a scenario: per regimen, exposure quantiles of
/// `n` simulated patients on the full cycle and the true endpoint values and
/// gain at those exposures.
///
/// The true DLT probability at exposure `z` is `Pr(kappa z >= tau)`.
pub fn scenario_plot_table(
    scenario: &ScenarioSpec,
    metrics: &MetricMap,
    gain: &GainParams,
    threshold_c: f64,
    n: usize,
    seed: u64,
    sig: usize,
) -> Result<Table> {
    scenario.validate()?;
    gain.validate()?;
    if n == 0 {
        return Err(Error::pre("need at least one simulated patient"));
    }
    let individuals = crate::pk::simulate_individuals(&scenario.pk, n, seed)?;
    let mut t = Table::new(["regimen", "dose_mg", "quantile", "exposure", "p_dlt", "q_pdy", "s_efficacy", "gain"]);
    for (j, regimen) in scenario.regimens().iter().enumerate() {
        let mut z: Vec<f64> = individuals
            .iter()
            .map(|ind| metrics.safety.evaluate(ind, regimen))
            .collect::<Result<_>>()?;
        z.sort_by(f64::total_cmp);
        for qu in [0.1, 0.5, 0.9] {
            let zq = quantile_sorted(&z, qu);
            let p = 1.0 - norm_cdf((scenario.tox.tau / zq).ln() / scenario.tox.omega_kappa);
            let pdy_sd = scenario.pdy.noise_sd.max(1e-12);
            let q = 1.0 - norm_cdf((threshold_c - scenario.pdy.mean(zq)) / pdy_sd);
            let s = scenario.efficacy.mean(zq);
            let g = gain.eval(p, q, s);
            t.push(vec![
                (j + 1).to_string(),
                fmt_sig(regimen.nominal_dose(), sig),
                fmt_sig(qu, sig),
                fmt_sig(zq, sig),
                fmt_sig(p, sig),
                fmt_sig(q, sig),
                fmt_sig(s, sig),
                fmt_sig(g, sig),
            ]);
        }
    }
    Ok(t)
}
