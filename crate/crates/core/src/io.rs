//! Delimited-text readers and writers for observed data and results.
//!
//! Readers are strict: a malformed row fails with its line number. Numbers
//! are written with a fixed count of significant digits (4 by default) so
//! that output files are stable across platforms and parse back exactly at
//! that precision.

use std::collections::BTreeMap;
use std::io::Read;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::escalation::EscalationState;
use crate::pk::{ConcentrationSample, DoseRegimen};
use crate::sim::PatientRecord;

pub const DEFAULT_SIG_DIGITS: usize = 4;

/// Formats `x` with `sig` significant digits: plain notation for moderate
/// magnitudes, scientific otherwise; trailing zeros are trimmed.
pub fn fmt_sig(x: f64, sig: usize) -> String {
    if x.is_nan() {
        return "NaN".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let sig = sig.max(1);
    // round first so that e.g. 9.9996 moves to the next decade
    let sci = format!("{:.*e}", sig - 1, x);
    let (mantissa, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("exponent");
    if (-4..sig as i32).contains(&exp) {
        let decimals = (sig as i32 - 1 - exp).max(0) as usize;
        trim_zeros(format!("{:.*}", decimals, x))
    } else {
        format!("{}e{}", trim_zeros(mantissa.to_string()), exp)
    }
}

fn trim_zeros(s: String) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

fn csv_reader<R: Read>(input: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new().trim(csv::Trim::All).comment(Some(b'#')).from_reader(input)
}

fn parse_err(source: &str, e: csv::Error) -> Error {
    let location = match e.position() {
        Some(p) => format!("{source}:{}", p.line()),
        None => source.to_string(),
    };
    Error::Parse { location, message: e.to_string() }
}

fn row_err(source: &str, line: u64, message: impl Into<String>) -> Error {
    Error::Parse { location: format!("{source}:{line}"), message: message.into() }
}

/// Reads `patient_id,time_h,concentration` rows. Further columns, such as
/// a `regimen_label`, are ignored.
pub fn read_concentrations<R: Read>(input: R, source: &str) -> Result<Vec<ConcentrationSample>> {
    let mut rdr = csv_reader(input);
    let mut out = Vec::new();
    for row in rdr.deserialize::<ConcentrationSample>() {
        let s = row.map_err(|e| parse_err(source, e))?;
        if !(s.time_h.is_finite() && s.time_h >= 0.0 && s.concentration.is_finite() && s.concentration >= 0.0) {
            return Err(row_err(source, out.len() as u64 + 2, "time and concentration must be finite and >= 0"));
        }
        out.push(s);
    }
    Ok(out)
}

#[derive(Debug, Deserialize)]
struct OutcomeRow {
    patient_id: String,
    regimen_label: String,
    dlt: u8,
    pdy: Option<f64>,
    efficacy: Option<f64>,
    /// Administrations actually given; all of them when absent.
    n_received: Option<usize>,
}

/// Reads `patient_id,regimen_label,dlt,pdy,efficacy[,n_received]` rows.
/// Labels resolve against `regimens`; `pdy` and `efficacy` may be empty.
pub fn read_outcomes<R: Read>(input: R, source: &str, regimens: &[DoseRegimen]) -> Result<Vec<PatientRecord>> {
    let mut rdr = csv_reader(input);
    let mut out = Vec::new();
    for (i, row) in rdr.deserialize::<OutcomeRow>().enumerate() {
        let line = i as u64 + 2;
        let r = row.map_err(|e| parse_err(source, e))?;
        if r.dlt > 1 {
            return Err(row_err(source, line, format!("dlt must be 0 or 1, got {}", r.dlt)));
        }
        let regimen = regimens.iter().find(|g| g.label() == r.regimen_label).ok_or_else(|| {
            let known: Vec<&str> = regimens.iter().map(|g| g.label()).collect();
            row_err(source, line, format!("unknown regimen `{}` (known: {})", r.regimen_label, known.join(", ")))
        })?;
        let received = match r.n_received {
            None => regimen.clone(),
            Some(n) if n >= 1 && n <= regimen.len() => regimen.truncated(n),
            Some(n) => {
                return Err(row_err(source, line, format!("n_received must be in 1..={}, got {n}", regimen.len())))
            }
        };
        out.push(PatientRecord { id: r.patient_id, received, dlt: r.dlt == 1, pdy: r.pdy, efficacy: r.efficacy });
    }
    Ok(out)
}

/// Concentration rows in the layout [`read_concentrations`] reads, at full
/// precision.
pub fn concentrations_csv(samples: &[ConcentrationSample]) -> String {
    let mut t = Table::new(["patient_id", "time_h", "concentration"]);
    for s in samples {
        t.push(vec![s.patient_id.clone(), s.time_h.to_string(), s.concentration.to_string()]);
    }
    t.to_csv()
}

/// Outcome rows in the layout [`read_outcomes`] reads, at full precision.
/// The regimen label is the received regimen's label.
pub fn outcomes_csv(records: &[PatientRecord]) -> String {
    let mut t = Table::new(["patient_id", "regimen_label", "dlt", "pdy", "efficacy", "n_received"]);
    let opt = |v: Option<f64>| v.map_or_else(String::new, |x| x.to_string());
    for r in records {
        t.push(vec![
            r.id.clone(),
            r.received.label().to_string(),
            u8::from(r.dlt).to_string(),
            opt(r.pdy),
            opt(r.efficacy),
            r.received.len().to_string(),
        ]);
    }
    t.to_csv()
}

#[derive(Debug, Deserialize)]
struct StateRow {
    dose_index: usize,
    n_treated: usize,
    n_dlt: usize,
}

/// Reads `dose_index,n_treated,n_dlt` rows (1-based dose index, one row per
/// cohort or per dose; counts are summed) into a state over `n_doses`.
/// The last row's dose counts as the most recent cohort.
pub fn read_escalation_state<R: Read>(input: R, source: &str, n_doses: usize) -> Result<EscalationState> {
    let mut rdr = csv_reader(input);
    let mut state = EscalationState::new(n_doses);
    for (i, row) in rdr.deserialize::<StateRow>().enumerate() {
        let line = i as u64 + 2;
        let r = row.map_err(|e| parse_err(source, e))?;
        if r.dose_index == 0 || r.dose_index > n_doses {
            return Err(row_err(source, line, format!("dose_index must be in 1..={n_doses}, got {}", r.dose_index)));
        }
        state
            .record_cohort(crate::escalation::Cohort { dose_index: r.dose_index - 1, n: r.n_treated, n_dlt: r.n_dlt })
            .map_err(|e| row_err(source, line, e.to_string()))?;
    }
    Ok(state)
}

/// A header plus rows of preformatted cells, written comma-separated.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Self {
        Self { header: header.into_iter().map(Into::into).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
        w.write_record(&self.header).expect("in-memory write");
        for r in &self.rows {
            w.write_record(r).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
    }

    /// Column `name` as a map from row index to cell.
    pub fn column(&self, name: &str) -> Option<BTreeMap<usize, &str>> {
        let c = self.header.iter().position(|h| h == name)?;
        Some(self.rows.iter().enumerate().map(|(i, r)| (i, r[c].as_str())).collect())
    }
}

/// Parses a CSV document produced by [`Table::to_csv`].
pub fn read_table<R: Read>(input: R, source: &str) -> Result<Table> {
    let mut rdr = csv::ReaderBuilder::new().from_reader(input);
    let header = rdr.headers().map_err(|e| parse_err(source, e))?.iter().map(String::from).collect();
    let mut t = Table { header, rows: Vec::new() };
    for rec in rdr.records() {
        let rec = rec.map_err(|e| parse_err(source, e))?;
        t.rows.push(rec.iter().map(String::from).collect());
    }
    Ok(t)
}

/// Writes `contents` to each path only after all of them were produced, via
/// a temporary sibling and rename, so a failure leaves no partial file.
pub fn write_atomically(files: &[(std::path::PathBuf, String)]) -> Result<()> {
    let mut staged = Vec::with_capacity(files.len());
    for (path, contents) in files {
        let tmp = path.with_extension("partial");
        if let Err(e) = std::fs::write(&tmp, contents) {
            for t in &staged {
                let _ = std::fs::remove_file(t);
            }
            let _ = std::fs::remove_file(&tmp);
            return Err(e.into());
        }
        staged.push(tmp);
    }
    for ((path, _), tmp) in files.iter().zip(&staged) {
        std::fs::rename(tmp, path)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn significant_digits() {
        assert_eq!(fmt_sig(0.0, 4), "0");
        assert_eq!(fmt_sig(1.0, 4), "1");
        assert_eq!(fmt_sig(0.123456, 4), "0.1235");
        assert_eq!(fmt_sig(12.3456, 4), "12.35");
        assert_eq!(fmt_sig(-1234.56, 4), "-1235");
        assert_eq!(fmt_sig(123456.0, 4), "1.235e5");
        assert_eq!(fmt_sig(0.0000123456, 4), "1.235e-5");
        assert_eq!(fmt_sig(9.9996, 4), "10");
        assert_eq!(fmt_sig(f64::NEG_INFINITY, 4), "-inf");
    }

    #[test]
    fn reads_concentrations() {
        let text = "patient_id,time_h,concentration,regimen_label\n# comment\nA, 0.5, 0.1,1\nA,1,0.2,1\n";
        let c = read_concentrations(text.as_bytes(), "c.csv").unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c[1].time_h, 1.0);
        let bad = "patient_id,time_h,concentration\nA,x,1\n";
        match read_concentrations(bad.as_bytes(), "c.csv") {
            Err(Error::Parse { location, .. }) => assert!(location.starts_with("c.csv:")),
            other => panic!("{other:?}"),
        }
        let negative = "patient_id,time_h,concentration\nA,1,-1\n";
        assert!(read_concentrations(negative.as_bytes(), "c.csv").is_err());
    }

    #[test]
    fn reads_outcomes() {
        let regimens = vec![
            DoseRegimen::repeated("1", 10.0, 24.0, 28).unwrap(),
            DoseRegimen::repeated("2", 70.0, 24.0, 28).unwrap(),
        ];
        let text = "patient_id,regimen_label,dlt,pdy,efficacy,n_received\nA,1,0,0.3,0.1,\nB,2,1,,,3\n";
        let p = read_outcomes(text.as_bytes(), "o.csv", &regimens).unwrap();
        assert_eq!(p.len(), 2);
        assert_eq!(p[0].received.len(), 28);
        assert_eq!(p[1].received.len(), 3);
        assert!(p[1].dlt);
        assert_eq!(p[1].pdy, None);
        for bad in ["A,1,2,0,0,", "A,9,0,0,0,", "A,1,0,0,0,29"] {
            let text = format!("patient_id,regimen_label,dlt,pdy,efficacy,n_received\n{bad}\n");
            assert!(read_outcomes(text.as_bytes(), "o.csv", &regimens).is_err(), "{bad}");
        }
        // optional column may be left out entirely
        let text = "patient_id,regimen_label,dlt,pdy,efficacy\nA,2,0,1,1\n";
        assert_eq!(read_outcomes(text.as_bytes(), "o.csv", &regimens).unwrap()[0].received.len(), 28);
    }

    #[test]
    fn written_data_reads_back() {
        let regimens = vec![DoseRegimen::repeated("a", 10.0, 24.0, 5).unwrap()];
        let records = vec![
            PatientRecord { id: "p1".into(), received: regimens[0].truncated(2), dlt: true, pdy: Some(0.1 / 3.0), efficacy: None },
            PatientRecord { id: "p2".into(), received: regimens[0].clone(), dlt: false, pdy: None, efficacy: Some(-1e-9) },
        ];
        let back = read_outcomes(outcomes_csv(&records).as_bytes(), "o", &regimens).unwrap();
        assert_eq!(back, records);
        let conc = vec![ConcentrationSample { patient_id: "p1".into(), time_h: 0.5, concentration: 2.0 / 7.0 }];
        assert_eq!(read_concentrations(concentrations_csv(&conc).as_bytes(), "c").unwrap(), conc);
    }

    #[test]
    fn reads_state() {
        let text = "dose_index,n_treated,n_dlt\n1,3,0\n2,3,1\n";
        let s = read_escalation_state(text.as_bytes(), "s.csv", 6).unwrap();
        assert_eq!(s.n_treated, vec![3, 3, 0, 0, 0, 0]);
        assert_eq!(s.n_dlt[1], 1);
        assert_eq!(s.history.len(), 2);
        assert!(read_escalation_state("dose_index,n_treated,n_dlt\n7,3,0\n".as_bytes(), "s", 6).is_err());
        assert!(read_escalation_state("dose_index,n_treated,n_dlt\n1,3,4\n".as_bytes(), "s", 6).is_err());
    }

    #[test]
    fn table_round_trip() {
        let mut t = Table::new(["a", "b"]);
        t.push(vec!["1".into(), "x,y".into()]);
        let back = read_table(t.to_csv().as_bytes(), "t").unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn atomic_write_leaves_nothing_on_failure() {
        let dir = tempfile::tempdir().unwrap();
        let good = dir.path().join("a.csv");
        let bad = dir.path().join("missing").join("b.csv");
        assert!(write_atomically(&[(good.clone(), "x".into()), (bad, "y".into())]).is_err());
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn printed_values_parse_back_at_precision(x in -1e7f64..1e7, sig in 1usize..8) {
                let s = fmt_sig(x, sig);
                let back: f64 = s.parse().unwrap();
                prop_assert_eq!(fmt_sig(back, sig), s.clone());
                if x != 0.0 {
                    prop_assert!(((back - x) / x).abs() <= 0.5 * 10f64.powi(1 - sig as i32) + 1e-12);
                }
            }
        }
    }
}
