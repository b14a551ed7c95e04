//! Command-line front end: `simulate`, `recommend`, `escalate`, `defaults`.
//!
//! Exit codes: 0 success, 2 usage, 3 input/output, 4 configuration or
//! input validation, 5 estimation or simulation failure.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use doseopt::config::RunConfig;
use doseopt::escalation::{calibrate_prior, fit_blrm_dose, next_dose, Decision};
use doseopt::exposure::FitOptions;
use doseopt::io::{fmt_sig, read_concentrations, read_escalation_state, read_outcomes, write_atomically, Table};
use doseopt::sim::{
    analyze, operating_characteristics, raw_results_table, run_replicates, scenario_plot_table, summary_table,
};
use doseopt::utility::{recommend, Recommendation};
use doseopt::Error;

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_CONFIG: i32 = 4;
pub const EXIT_COMPUTE: i32 = 5;

/// Patients drawn for the scenario plot data.
const PLOT_PATIENTS: usize = 2000;

#[derive(Debug, Parser)]
#[command(name = "doseopt", version, about = "Exposure-driven Bayesian dose optimization")]
struct Cli {
    /// TOML run configuration (flat dotted keys); defaults apply without it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    replicates: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// one-step, two-step or multi-step.
    #[arg(long, global = true)]
    design: Option<String>,
    /// all or top-two.
    #[arg(long, global = true)]
    alloc_mode: Option<String>,
    #[arg(long, global = true, env = "DOSEOPT_THREADS")]
    threads: Option<usize>,
    /// Print every config key with its default and exit.
    #[arg(long)]
    defaults: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Replay trials of a scenario and write operating characteristics.
    Simulate,
    /// Fit observed concentrations and outcomes and recommend a regimen.
    Recommend,
    /// Next escalation decision from per-dose counts.
    Escalate,
    /// Print every config key with its default.
    Defaults,
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Io(_) => EXIT_IO,
        Error::Config { .. } | Error::Parse { .. } | Error::InvalidParameter(_) => EXIT_CONFIG,
        _ => EXIT_COMPUTE,
    }
}

/// Runs the command line and returns the process exit code.
pub fn run_cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn load_config(cli: &Cli) -> doseopt::Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => {
            if !path.is_file() {
                return Err(Error::Io(std::io::Error::new(
                    std::io::ErrorKind::NotFound,
                    format!("config file `{}` not found", path.display()),
                )));
            }
            RunConfig::from_file(path)?
        }
        None => RunConfig { base_dir: PathBuf::from("."), ..RunConfig::default() },
    };
    if let Some(n) = cli.replicates {
        cfg.run.replicates = n;
    }
    if let Some(s) = cli.seed {
        cfg.run.seed = s;
    }
    if let Some(d) = &cli.design {
        cfg.run.design = d.clone();
    }
    if let Some(m) = &cli.alloc_mode {
        cfg.run.alloc_mode = m.clone();
    }
    if let Some(t) = cli.threads {
        cfg.run.threads = t;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn out_dir(cli: &Cli, cfg: &RunConfig) -> doseopt::Result<PathBuf> {
    let dir = cli.out.clone().unwrap_or_else(|| cfg.resolve(&cfg.run.out_dir));
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn run(cli: Cli) -> doseopt::Result<()> {
    if cli.defaults || matches!(cli.command, Some(Command::Defaults)) {
        print!("{}", RunConfig::defaults_toml());
        return Ok(());
    }
    let Some(command) = &cli.command else {
        return Err(Error::Config { field: "command".into(), message: "expected simulate, recommend or escalate".into() });
    };
    let cfg = load_config(&cli)?;
    match command {
        Command::Simulate => simulate(&cli, &cfg),
        Command::Recommend => recommend_cmd(&cli, &cfg),
        Command::Escalate => escalate(&cli, &cfg),
        Command::Defaults => unreachable!("handled above"),
    }
}

fn required_data(cfg: &RunConfig, field: &str, value: &str) -> doseopt::Result<PathBuf> {
    if value.is_empty() {
        return Err(Error::Config { field: field.into(), message: "a data file is required for this command".into() });
    }
    let path = cfg.resolve(value);
    if !path.is_file() {
        return Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("{field}: no such file `{}`", path.display()),
        )));
    }
    Ok(path)
}

fn simulate(cli: &Cli, cfg: &RunConfig) -> doseopt::Result<()> {
    let scenario = cfg.scenario()?;
    let settings = cfg.trial_settings()?;
    let sig = cfg.run.sig_digits;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.run.threads)
        .build()
        .map_err(|e| Error::Config { field: "run.threads".into(), message: e.to_string() })?;
    let results = pool.install(|| run_replicates(&scenario, &settings, cfg.run.replicates, cfg.run.seed))?;
    let oc = operating_characteristics(&results)?;
    let summary = summary_table(&oc, sig);
    let plot = scenario_plot_table(
        &scenario,
        &settings.analysis.metrics,
        &settings.analysis.gain,
        settings.analysis.threshold_c,
        PLOT_PATIENTS,
        cfg.run.seed,
        sig,
    )?;
    let dir = out_dir(cli, cfg)?;
    write_atomically(&[
        (dir.join("raw.csv"), raw_results_table(&results, sig).to_csv()),
        (dir.join("summary.csv"), summary.to_csv()),
        (dir.join("scenario_plot.csv"), plot.to_csv()),
    ])?;
    println!("scenario {} | {} design | {} replicates", scenario.label, settings.design, cfg.run.replicates);
    print!("{}", summary.to_csv());
    Ok(())
}

/// Recommendation table: one row per regimen.
pub fn recommendation_table(rec: &Recommendation, doses: &[f64], sig: usize) -> Table {
    let mut t = Table::new(["regimen", "dose_mg", "mean_p", "mean_q", "mean_s", "gain", "rg", "u", "mgd", "od"]);
    let flag = |sel: Option<usize>, j: usize| if sel == Some(j) { "1" } else { "0" }.to_string();
    for j in 0..rec.labels.len() {
        t.push(vec![
            rec.labels[j].clone(),
            fmt_sig(doses[j], sig),
            fmt_sig(rec.mean_p[j], sig),
            fmt_sig(rec.mean_q[j], sig),
            fmt_sig(rec.mean_s[j], sig),
            fmt_sig(rec.gains[j], sig),
            fmt_sig(rec.rg[j], sig),
            fmt_sig(rec.u[j], sig),
            flag(rec.mgd_x, j),
            flag(rec.od_x, j),
        ]);
    }
    t
}

fn open(path: &Path) -> doseopt::Result<std::fs::File> {
    Ok(std::fs::File::open(path)?)
}

fn recommend_cmd(cli: &Cli, cfg: &RunConfig) -> doseopt::Result<()> {
    let conc_path = required_data(cfg, "data.concentrations", &cfg.data.concentrations)?;
    let out_path = required_data(cfg, "data.outcomes", &cfg.data.outcomes)?;
    let regimens = cfg.regimens()?;
    let conc = read_concentrations(open(&conc_path)?, &conc_path.display().to_string())?;
    let patients = read_outcomes(open(&out_path)?, &out_path.display().to_string(), &regimens)?;
    let settings = cfg.analysis_settings()?;
    let safety_spec = settings.safety_spec(&cfg.pk, &regimens)?;
    let analysis = analyze(&conc, &patients, &regimens, &cfg.pk, &safety_spec, &settings, cfg.run.seed)?;
    let rec = recommend(&analysis.endpoints, &settings.gain, settings.x_percent)?;
    let table = recommendation_table(&rec, &cfg.regimens.doses_mg, cfg.run.sig_digits);
    let dir = out_dir(cli, cfg)?;
    write_atomically(&[(dir.join("recommendation.csv"), table.to_csv())])?;
    let name = |k: Option<usize>| k.map_or_else(|| "none".to_string(), |k| rec.labels[k].clone());
    let x = fmt_sig(settings.x_percent, cfg.run.sig_digits);
    println!("MGD-{x}%: {}", name(rec.mgd_x));
    println!("OD-{x}%: {}", name(rec.od_x));
    if !analysis.pk_converged {
        eprintln!("warning: population PK fit stopped before meeting its convergence criterion");
    }
    if let Some(r) = analysis.max_rhat().filter(|r| *r >= 1.1) {
        eprintln!("warning: max split-R-hat {r:.3} >= 1.1");
    }
    print!("{}", table.to_csv());
    Ok(())
}

fn escalate(cli: &Cli, cfg: &RunConfig) -> doseopt::Result<()> {
    let state_path = required_data(cfg, "data.escalation_state", &cfg.data.escalation_state)?;
    let spec = cfg.escalation_spec();
    let state = read_escalation_state(open(&state_path)?, &state_path.display().to_string(), spec.doses.len())?;
    let prior = calibrate_prior(&spec)?;
    let sampler = cfg.blrm_sampler_config().with_seed(cfg.run.seed);
    let post = fit_blrm_dose(&state, &spec, &prior, &FitOptions { sampler, require_mixing: false })?;
    let decision = next_dose(&state, &post, &spec);
    let sig = cfg.run.sig_digits;
    let admissible = doseopt::escalation::admissible_doses(&post, &spec);
    let mut t = Table::new(["dose", "dose_mg", "n", "dlt", "mean_p", "p_under", "p_target", "p_over", "admissible"]);
    for j in 0..spec.doses.len() {
        t.push(vec![
            (j + 1).to_string(),
            fmt_sig(spec.doses[j], sig),
            state.n_treated[j].to_string(),
            state.n_dlt[j].to_string(),
            fmt_sig(post.mean_prob(j), sig),
            fmt_sig(post.prob_below(j, spec.delta_min), sig),
            fmt_sig(post.prob_interval(j, spec.delta_min, spec.delta_max), sig),
            fmt_sig(post.prob_above(j, spec.delta_max), sig),
            u8::from(admissible.contains(&j)).to_string(),
        ]);
    }
    let line = match decision {
        Decision::Continue(j) => format!("next dose: {}", j + 1),
        Decision::StopWithMtd { mtd, reason } => format!("stop ({reason}): MTD dose {}", mtd + 1),
        Decision::StopNoMtd => "stop: every dose exceeds the overdose limit, no MTD".to_string(),
    };
    let dir = out_dir(cli, cfg)?;
    write_atomically(&[(dir.join("escalation.csv"), t.to_csv()), (dir.join("decision.txt"), format!("{line}\n"))])?;
    println!("{line}");
    print!("{}", t.to_csv());
    Ok(())
}
