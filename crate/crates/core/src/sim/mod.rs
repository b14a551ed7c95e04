//! Trial simulation: data generation from exposure-driven scenarios and the
//! one-step, two-step and multi-step designs, with operating
//! characteristics over replicates.

mod allocate;
mod analysis;
mod generate;
mod report;
mod scenario;
mod trial;

pub use allocate::{allocate_weighted, AllocMode};
pub use analysis::{analyze, Analysis, AnalysisSettings, PatientRecord};
pub use generate::{
    dlt_given_kappa, per_administration_exposure, simulate_dlt_process, simulate_effect, simulate_patient, DltOutcome,
    SimPatient,
};
pub use report::{operating_characteristics, raw_results_table, scenario_plot_table, summary_table, OperatingCharacteristics};
pub use scenario::{
    efficacy_scenario, pdy_scenario, tox_scenario, EffectScenario, ScenarioSpec, ToxScenario, MAIN_SCENARIOS,
    REFERENCE_DOSES, SENSITIVITY_SCENARIOS, TOX_SC3_ALT,
};
pub use trial::{run_escalation, run_replicates, run_trial, EscalationRun, Design, TrialBudget, TrialResult, TrialSettings};
