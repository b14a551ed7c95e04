//! Run configuration: a TOML file of flat dotted keys (`gain.alpha1 = 2`)
//! layered over built-in defaults.
//!
//! Every key and its default is listed by [`RunConfig::defaults_toml`].

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::escalation::EscalationSpec;
use crate::exposure::{MetricMap, PerEndpoint};
use crate::io::DEFAULT_SIG_DIGITS;
use crate::pk::{DoseRegimen, ExposureKind, PopPkParams, SaemConfig};
use crate::sampler::SamplerConfig;
use crate::sim::{AllocMode, AnalysisSettings, Design, ScenarioSpec, TrialBudget, TrialSettings};
use crate::utility::{GainParams, MarginalBudget};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSection {
    pub design: String,
    pub replicates: usize,
    pub seed: u64,
    /// Worker threads for replicates; 0 lets the pool decide.
    pub threads: usize,
    pub alloc_mode: String,
    pub out_dir: String,
    pub sig_digits: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSection {
    /// Library label such as `{2,1,1}`; ignored when `file` is set.
    pub label: String,
    /// TOML scenario file, relative to the config file.
    pub file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSection {
    pub concentrations: String,
    pub outcomes: String,
    pub escalation_state: String,
}

/// Candidate regimens for `recommend` and `escalate`, labelled `1..J`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimenSection {
    pub doses_mg: Vec<f64>,
    pub interval_h: f64,
    pub n_administrations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecommendSection {
    pub x_percent: f64,
    pub z_ref: f64,
    pub threshold_c: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetSection {
    pub n_escalation: usize,
    /// Patients in the optimization part; the one-step design escalates
    /// with both budgets combined.
    pub n_optimization: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EscalationSection {
    pub ewoc: f64,
    pub cohort_size: usize,
    pub accuracy_threshold: f64,
    pub accuracy_cohorts: usize,
    pub d_ref: f64,
    pub underdose_prob: f64,
    pub acceptable_prob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerSection {
    pub chains: usize,
    pub warmup: usize,
    pub draws: usize,
}

impl SamplerSection {
    pub fn to_config(&self) -> SamplerConfig {
        SamplerConfig { n_chains: self.chains, n_warmup: self.warmup, n_draws: self.draws, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaemSection {
    pub burn_in: usize,
    pub smoothing: usize,
    pub max_extra_smoothing: usize,
    pub tolerance: f64,
    pub annealing: f64,
    pub mh_sweeps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfficacySection {
    pub coef_shape: f64,
    pub coef_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSection {
    pub safety: String,
    pub pdy: String,
    pub efficacy: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub run: RunSection,
    pub scenario: ScenarioSection,
    pub data: DataSection,
    pub regimens: RegimenSection,
    pub gain: GainParams,
    pub recommend: RecommendSection,
    pub budget: BudgetSection,
    pub escalation: EscalationSection,
    pub sampler: SamplerSection,
    pub blrm_sampler: SamplerSection,
    pub saem: SaemSection,
    pub marginal: MarginalBudget,
    pub efficacy: EfficacySection,
    pub metrics: MetricSection,
    /// Population PK starting values for fitting observed data.
    pub pk: PopPkParams,
    /// Directory relative paths resolve against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        let analysis = AnalysisSettings::default();
        let esc = EscalationSpec::default();
        let budget = Design::TwoStep.default_budget();
        let saem = SaemConfig::default();
        let sampler = SamplerSection { chains: 4, warmup: 1000, draws: 1000 };
        Self {
            run: RunSection {
                design: Design::TwoStep.to_string(),
                replicates: 100,
                seed: 1,
                threads: 0,
                alloc_mode: AllocMode::All.to_string(),
                out_dir: "out".into(),
                sig_digits: DEFAULT_SIG_DIGITS,
            },
            scenario: ScenarioSection { label: "{2,1,1}".into(), file: String::new() },
            data: DataSection { concentrations: String::new(), outcomes: String::new(), escalation_state: String::new() },
            regimens: RegimenSection { doses_mg: esc.doses.clone(), interval_h: 24.0, n_administrations: 28 },
            gain: analysis.gain,
            recommend: RecommendSection {
                x_percent: analysis.x_percent,
                z_ref: analysis.z_ref,
                threshold_c: analysis.threshold_c,
            },
            budget: BudgetSection { n_escalation: budget.n_escalation, n_optimization: budget.n_optimization },
            escalation: EscalationSection {
                ewoc: esc.ewoc,
                cohort_size: esc.cohort_size,
                accuracy_threshold: esc.accuracy_threshold,
                accuracy_cohorts: esc.accuracy_cohorts,
                d_ref: esc.d_ref,
                underdose_prob: esc.underdose_prob_low,
                acceptable_prob: esc.acceptable_prob_high,
            },
            sampler: sampler.clone(),
            blrm_sampler: sampler,
            saem: SaemSection {
                burn_in: saem.burn_in,
                smoothing: saem.smoothing,
                max_extra_smoothing: saem.max_extra_smoothing,
                tolerance: saem.tolerance,
                annealing: saem.annealing,
                mh_sweeps: saem.mh_sweeps,
            },
            marginal: analysis.marginal,
            efficacy: EfficacySection { coef_shape: analysis.coef_prior.0, coef_rate: analysis.coef_prior.1 },
            metrics: MetricSection { safety: "auc24".into(), pdy: "auc24".into(), efficacy: "auc24".into() },
            pk: PopPkParams::default(),
            base_dir: PathBuf::new(),
        }
    }
}

/// Flattens nested tables into `a.b.c` keys; arrays are leaves.
fn flatten(prefix: &str, table: &toml::Table, out: &mut BTreeMap<String, toml::Value>) {
    for (k, v) in table {
        let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match v {
            toml::Value::Table(t) => flatten(&key, t, out),
            other => {
                out.insert(key, other.clone());
            }
        }
    }
}

fn set_path(table: &mut toml::Table, key: &str, value: toml::Value) {
    match key.split_once('.') {
        Some((head, rest)) => {
            let child = table.entry(head).or_insert_with(|| toml::Value::Table(toml::Table::new()));
            if let toml::Value::Table(t) = child {
                set_path(t, rest, value);
            }
        }
        None => {
            table.insert(key.to_string(), value);
        }
    }
}

fn default_flat() -> BTreeMap<String, toml::Value> {
    let table = toml::Table::try_from(RunConfig::default()).expect("defaults serialize");
    let mut flat = BTreeMap::new();
    flatten("", &table, &mut flat);
    flat
}

fn nearest_key<'a>(key: &str, known: impl Iterator<Item = &'a String>) -> Option<&'a String> {
    known.min_by(|a, b| strsim::levenshtein(key, a).cmp(&strsim::levenshtein(key, b)))
}

fn config_err(field: &str, message: impl Into<String>) -> Error {
    Error::Config { field: field.to_string(), message: message.into() }
}

/// Accepts an integer where the default is a float; any other type change
/// is an error naming the expected type and default.
fn coerce(key: &str, value: toml::Value, default: &toml::Value) -> Result<toml::Value> {
    use toml::Value as V;
    match (&value, default) {
        (V::Integer(i), V::Float(_)) => Ok(V::Float(*i as f64)),
        (V::Array(items), V::Array(_)) => Ok(V::Array(
            items
                .iter()
                .map(|x| match x {
                    V::Integer(i) => V::Float(*i as f64),
                    other => other.clone(),
                })
                .collect(),
        )),
        (a, b) if a.type_str() == b.type_str() => Ok(value),
        (a, b) => Err(config_err(key, format!("expected a {}, got a {} (default {b})", b.type_str(), a.type_str()))),
    }
}

impl RunConfig {
    /// Parses TOML text; relative paths resolve against `base_dir`.
    pub fn from_toml_str(text: &str, base_dir: &Path) -> Result<Self> {
        let user: toml::Table =
            toml::from_str(text).map_err(|e| Error::Parse { location: "config".into(), message: e.to_string() })?;
        let mut flat = BTreeMap::new();
        flatten("", &user, &mut flat);
        let defaults = default_flat();
        let mut merged = toml::Table::try_from(RunConfig::default()).expect("defaults serialize");
        for (key, value) in flat {
            let Some(default) = defaults.get(&key) else {
                let hint = nearest_key(&key, defaults.keys())
                    .map(|k| format!("; nearest valid key is `{k}`"))
                    .unwrap_or_default();
                return Err(config_err(&key, format!("unknown key{hint}")));
            };
            let value = coerce(&key, value, default)?;
            set_path(&mut merged, &key, value);
        }
        let mut cfg: RunConfig = merged
            .try_into()
            .map_err(|e: toml::de::Error| Error::Parse { location: "config".into(), message: e.to_string() })?;
        cfg.base_dir = base_dir.to_path_buf();
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads and validates a config file.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_toml_str(&text, &base).map_err(|e| match e {
            Error::Parse { message, .. } => Error::Parse { location: path.display().to_string(), message },
            other => other,
        })
    }

    /// Every key with its default, one `key = value` line each.
    pub fn defaults_toml() -> String {
        default_flat().iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    fn default_of(key: &str) -> String {
        default_flat().get(key).map_or_else(|| "none".into(), |v| v.to_string())
    }

    pub fn validate(&self) -> Result<()> {
        let check = |field: &str, ok: bool, expected: &str| -> Result<()> {
            if ok {
                Ok(())
            } else {
                Err(config_err(field, format!("expected {expected} (default {})", Self::default_of(field))))
            }
        };
        let prob = |v: f64| v > 0.0 && v < 1.0;
        self.design()?;
        self.alloc_mode()?;
        self.metric_map()?;
        check("run.replicates", self.run.replicates >= 1, ">= 1")?;
        check("run.sig_digits", (1..=17).contains(&self.run.sig_digits), "an integer in 1..=17")?;
        let g = &self.gain;
        for (k, v) in [("gain.alpha1", g.alpha1), ("gain.alpha2", g.alpha2), ("gain.alpha3", g.alpha3)] {
            check(k, v.is_finite(), "a finite number")?;
        }
        check("gain.delta_min", g.delta_min > 0.0 && g.delta_min < 1.0, "a value in (0, 1)")?;
        check("gain.delta_max", g.delta_max > g.delta_min && g.delta_max < 1.0, "a value in (gain.delta_min, 1)")?;
        check("recommend.x_percent", self.recommend.x_percent >= 0.0, ">= 0")?;
        check("recommend.z_ref", self.recommend.z_ref > 0.0, "> 0")?;
        check("recommend.threshold_c", (0.0..=1.0).contains(&self.recommend.threshold_c), "a value in [0, 1]")?;
        check("budget.n_escalation", self.budget.n_escalation >= 1, ">= 1")?;
        let e = &self.escalation;
        check("escalation.ewoc", prob(e.ewoc), "a value in (0, 1)")?;
        check("escalation.cohort_size", e.cohort_size >= 1, ">= 1")?;
        check("escalation.accuracy_threshold", prob(e.accuracy_threshold), "a value in (0, 1)")?;
        check("escalation.d_ref", e.d_ref > 0.0, "> 0")?;
        check("escalation.underdose_prob", prob(e.underdose_prob), "a value in (0, 1)")?;
        check("escalation.acceptable_prob", prob(e.acceptable_prob), "a value in (0, 1)")?;
        for (name, s) in [("sampler", &self.sampler), ("blrm_sampler", &self.blrm_sampler)] {
            check(&format!("{name}.chains"), s.chains >= 1, ">= 1")?;
            check(&format!("{name}.draws"), s.draws >= 1, ">= 1")?;
        }
        check("saem.tolerance", self.saem.tolerance > 0.0, "> 0")?;
        check("saem.annealing", self.saem.annealing > 0.0 && self.saem.annealing <= 1.0, "a value in (0, 1]")?;
        check("saem.mh_sweeps", self.saem.mh_sweeps >= 1, ">= 1")?;
        check("marginal.posterior_draws", self.marginal.posterior_draws >= 1, ">= 1")?;
        check("marginal.exposure_draws", self.marginal.exposure_draws >= 1, ">= 1")?;
        check("efficacy.coef_shape", self.efficacy.coef_shape > 0.0, "> 0")?;
        check("efficacy.coef_rate", self.efficacy.coef_rate > 0.0, "> 0")?;
        let r = &self.regimens;
        check(
            "regimens.doses_mg",
            r.doses_mg.len() >= 2 && r.doses_mg.iter().all(|d| *d > 0.0) && r.doses_mg.windows(2).all(|w| w[1] > w[0]),
            "at least two strictly increasing positive doses",
        )?;
        check("regimens.interval_h", r.interval_h > 0.0, "> 0")?;
        check("regimens.n_administrations", r.n_administrations >= 1, ">= 1")?;
        self.pk.validate().map_err(|e| config_err("pk", e.to_string()))?;
        for (k, v) in [
            ("scenario.file", &self.scenario.file),
            ("data.concentrations", &self.data.concentrations),
            ("data.outcomes", &self.data.outcomes),
            ("data.escalation_state", &self.data.escalation_state),
        ] {
            let path = self.resolve(v);
            if !v.is_empty() && !path.is_file() {
                return Err(Error::Io(std::io::Error::new(
                    std::io::ErrorKind::NotFound,
                    format!("{k}: no such file `{}`", path.display()),
                )));
            }
        }
        Ok(())
    }

    pub fn resolve(&self, path: &str) -> PathBuf {
        let p = Path::new(path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn design(&self) -> Result<Design> {
        self.run.design.parse().map_err(|e: Error| config_err("run.design", e.to_string()))
    }

    pub fn alloc_mode(&self) -> Result<AllocMode> {
        self.run.alloc_mode.parse().map_err(|e: Error| config_err("run.alloc_mode", e.to_string()))
    }

    pub fn metric_map(&self) -> Result<MetricMap> {
        let parse = |field: &str, v: &str| -> Result<ExposureKind> {
            v.parse().map_err(|_| config_err(field, format!("unknown metric `{v}` (auc24, auccum, cmax, ctrough)")))
        };
        Ok(PerEndpoint {
            safety: parse("metrics.safety", &self.metrics.safety)?,
            pdy: parse("metrics.pdy", &self.metrics.pdy)?,
            efficacy: parse("metrics.efficacy", &self.metrics.efficacy)?,
        })
    }

    pub fn regimens(&self) -> Result<Vec<DoseRegimen>> {
        let r = &self.regimens;
        r.doses_mg
            .iter()
            .enumerate()
            .map(|(j, &d)| DoseRegimen::repeated((j + 1).to_string(), d, r.interval_h, r.n_administrations))
            .collect()
    }

    pub fn scenario(&self) -> Result<ScenarioSpec> {
        if self.scenario.file.is_empty() {
            ScenarioSpec::from_label(&self.scenario.label).map_err(|e| config_err("scenario.label", e.to_string()))
        } else {
            let path = self.resolve(&self.scenario.file);
            let text = std::fs::read_to_string(&path)?;
            ScenarioSpec::from_toml(&text).map_err(|e| match e {
                Error::Parse { message, .. } => Error::Parse { location: path.display().to_string(), message },
                other => other,
            })
        }
    }

    pub fn analysis_settings(&self) -> Result<AnalysisSettings> {
        let s = &self.saem;
        let a = AnalysisSettings {
            gain: self.gain,
            x_percent: self.recommend.x_percent,
            metrics: self.metric_map()?,
            z_ref: self.recommend.z_ref,
            threshold_c: self.recommend.threshold_c,
            sampler: self.sampler.to_config(),
            require_mixing: false,
            saem: SaemConfig {
                burn_in: s.burn_in,
                smoothing: s.smoothing,
                max_extra_smoothing: s.max_extra_smoothing,
                tolerance: s.tolerance,
                annealing: s.annealing,
                mh_sweeps: s.mh_sweeps,
                ..SaemConfig::default()
            },
            marginal: self.marginal,
            coef_prior: (self.efficacy.coef_shape, self.efficacy.coef_rate),
            safety_underdose_prob: self.escalation.underdose_prob,
            safety_acceptable_prob: self.escalation.acceptable_prob,
        };
        a.validate()?;
        Ok(a)
    }

    pub fn blrm_sampler_config(&self) -> SamplerConfig {
        self.blrm_sampler.to_config()
    }

    /// Escalation over the configured regimens' nominal doses, with the
    /// toxicity interval shared with the gain function.
    pub fn escalation_spec(&self) -> EscalationSpec {
        let e = &self.escalation;
        EscalationSpec {
            doses: self.regimens.doses_mg.clone(),
            d_ref: e.d_ref,
            delta_min: self.gain.delta_min,
            delta_max: self.gain.delta_max,
            ewoc: e.ewoc,
            cohort_size: e.cohort_size,
            max_n: self.budget.n_escalation,
            accuracy_threshold: e.accuracy_threshold,
            accuracy_cohorts: e.accuracy_cohorts,
            underdose_prob_low: e.underdose_prob,
            acceptable_prob_high: e.acceptable_prob,
        }
    }

    pub fn trial_settings(&self) -> Result<TrialSettings> {
        let design = self.design()?;
        let budget = match design {
            Design::OneStep => {
                TrialBudget { n_escalation: self.budget.n_escalation + self.budget.n_optimization, n_optimization: 0 }
            }
            _ => TrialBudget { n_escalation: self.budget.n_escalation, n_optimization: self.budget.n_optimization },
        };
        let settings = TrialSettings {
            design,
            budget,
            alloc_mode: self.alloc_mode()?,
            escalation: self.escalation_spec(),
            blrm_sampler: self.blrm_sampler.to_config(),
            analysis: self.analysis_settings()?,
        };
        settings.validate()?;
        Ok(settings)
    }
}
