use std::path::{Path, PathBuf};
use std::process::Command;

use doseopt::config::RunConfig;
use doseopt::io::{concentrations_csv, outcomes_csv, read_concentrations, read_outcomes, read_table};
use doseopt::sim::{analyze, simulate_patient, PatientRecord, ScenarioSpec};
use doseopt::utility::recommend;
use doseopt_cli::{run_cli, EXIT_CONFIG, EXIT_IO};

/// Small budgets so each command finishes in seconds.
const CHEAP: &str = r#"
sampler.chains = 2
sampler.warmup = 300
sampler.draws = 300
blrm_sampler.chains = 2
blrm_sampler.warmup = 300
blrm_sampler.draws = 300
saem.burn_in = 60
saem.smoothing = 30
saem.max_extra_smoothing = 0
marginal.posterior_draws = 200
marginal.exposure_draws = 50
"#;

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn cli(args: &[&str]) -> i32 {
    run_cli(std::iter::once("doseopt").chain(args.iter().copied()))
}

fn files_in(dir: &Path) -> Vec<String> {
    if !dir.exists() {
        return Vec::new();
    }
    let mut v: Vec<String> =
        std::fs::read_dir(dir).unwrap().map(|e| e.unwrap().file_name().to_string_lossy().into_owned()).collect();
    v.sort();
    v
}

#[test]
fn simulate_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "sc211.toml",
        &format!("{CHEAP}scenario.label = \"{{2,1,1}}\"\nbudget.n_escalation = 9\nbudget.n_optimization = 6\n"),
    );
    let cfg = cfg.to_str().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let code = cli(&["simulate", "--config", cfg, "--replicates", "2", "--seed", "7", "--out", out.to_str().unwrap()]);
        assert_eq!(code, 0);
    }
    assert_eq!(files_in(&a), vec!["raw.csv", "scenario_plot.csv", "summary.csv"]);
    for f in ["raw.csv", "summary.csv", "scenario_plot.csv"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    let raw = read_table(std::fs::File::open(a.join("raw.csv")).unwrap(), "raw").unwrap();
    assert_eq!(raw.rows.len(), 2);
    assert!(raw.column("seed").unwrap().values().all(|s| !s.is_empty()));
}

/// Patients on every regimen of `{1,2,2}`, with their planned regimens as
/// the config's candidate list.
fn synthetic_dataset(dir: &Path) -> PathBuf {
    let scenario = ScenarioSpec::library(1, 2, 2).unwrap();
    let regimens = scenario.regimens();
    let mut conc = Vec::new();
    let mut records = Vec::new();
    for i in 0..36 {
        let j = i % regimens.len();
        let p = simulate_patient(format!("p{i}"), j, &regimens[j], &scenario, &Default::default(), 100 + i as u64)
            .unwrap();
        conc.extend(p.concentrations.iter().cloned());
        records.push(PatientRecord {
            id: p.id.clone(),
            received: p.received.clone(),
            dlt: p.dlt.dlt,
            pdy: Some(p.pdy),
            efficacy: Some(p.efficacy),
        });
    }
    write(dir, "conc.csv", &concentrations_csv(&conc));
    write(dir, "outcomes.csv", &outcomes_csv(&records));
    write(
        dir,
        "run.toml",
        &format!("{CHEAP}data.concentrations = \"conc.csv\"\ndata.outcomes = \"outcomes.csv\"\nrun.seed = 11\n"),
    )
}

#[test]
fn recommend_matches_library() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = synthetic_dataset(dir.path());
    let out = dir.path().join("out");
    assert_eq!(cli(&["recommend", "--config", cfg_path.to_str().unwrap(), "--out", out.to_str().unwrap()]), 0);
    let table = read_table(std::fs::File::open(out.join("recommendation.csv")).unwrap(), "rec").unwrap();

    // the same pipeline through library calls
    let cfg = RunConfig::from_file(&cfg_path).unwrap();
    let regimens = cfg.regimens().unwrap();
    let conc = read_concentrations(std::fs::File::open(dir.path().join("conc.csv")).unwrap(), "c").unwrap();
    let patients =
        read_outcomes(std::fs::File::open(dir.path().join("outcomes.csv")).unwrap(), "o", &regimens).unwrap();
    let settings = cfg.analysis_settings().unwrap();
    let safety = settings.safety_spec(&cfg.pk, &regimens).unwrap();
    let analysis = analyze(&conc, &patients, &regimens, &cfg.pk, &safety, &settings, cfg.run.seed).unwrap();
    let rec = recommend(&analysis.endpoints, &settings.gain, settings.x_percent).unwrap();

    let od = table.column("od").unwrap();
    let cli_od = od.iter().find(|(_, v)| **v == "1").map(|(k, _)| *k);
    assert_eq!(cli_od, rec.od_x);
    let mgd = table.column("mgd").unwrap();
    assert_eq!(mgd.iter().find(|(_, v)| **v == "1").map(|(k, _)| *k), rec.mgd_x);
    // printed values agree with the library at the printed precision
    for (col, values) in [("mean_p", &rec.mean_p), ("u", &rec.u), ("gain", &rec.gains)] {
        for (j, cell) in table.column(col).unwrap() {
            let printed: f64 = cell.parse().unwrap();
            let exact = values[j];
            if exact.is_finite() {
                assert!((printed - exact).abs() <= 5e-4 * exact.abs().max(1e-300), "{col}[{j}]: {printed} vs {exact}");
            } else {
                assert_eq!(printed, exact);
            }
        }
    }
}

#[test]
fn missing_data_file_leaves_no_output() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = synthetic_dataset(dir.path());
    std::fs::remove_file(dir.path().join("outcomes.csv")).unwrap();
    let out = dir.path().join("out");
    let code = cli(&["recommend", "--config", cfg_path.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code, EXIT_IO);
    assert!(files_in(&out).is_empty());
}

#[test]
fn binary_reports_distinct_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bin = env!("CARGO_BIN_EXE_doseopt");
    let bad = write(dir.path(), "bad.toml", "gain.delta_min = 0.5\n");
    let status = Command::new(bin).args(["simulate", "--config", bad.to_str().unwrap()]).output().unwrap();
    assert_eq!(status.status.code(), Some(EXIT_CONFIG));
    assert!(String::from_utf8_lossy(&status.stderr).contains("gain.delta_max"));
    let typo = write(dir.path(), "typo.toml", "gain.alpah1 = 2\n");
    let status = Command::new(bin).args(["simulate", "--config", typo.to_str().unwrap()]).output().unwrap();
    assert_eq!(status.status.code(), Some(EXIT_CONFIG));
    assert!(String::from_utf8_lossy(&status.stderr).contains("gain.alpha1"));
    let status = Command::new(bin).args(["defaults"]).output().unwrap();
    assert!(status.status.success());
    assert!(String::from_utf8_lossy(&status.stdout).contains("recommend.z_ref = 40.0"));
}

#[test]
fn escalate_from_state_file() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "state.csv", "dose_index,n_treated,n_dlt\n1,3,0\n2,3,0\n");
    let cfg = write(dir.path(), "run.toml", &format!("{CHEAP}data.escalation_state = \"state.csv\"\n"));
    let out = dir.path().join("out");
    assert_eq!(cli(&["escalate", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]), 0);
    let decision = std::fs::read_to_string(out.join("decision.txt")).unwrap();
    // no skipping: after dose 2 the next dose is at most 3
    let next: usize = decision.trim().strip_prefix("next dose: ").unwrap().parse().unwrap();
    assert!((1..=3).contains(&next), "{decision}");
    let table = read_table(std::fs::File::open(out.join("escalation.csv")).unwrap(), "esc").unwrap();
    assert_eq!(table.rows.len(), 6);

    write(dir.path(), "state.csv", "dose_index,n_treated,n_dlt\n1,3,3\n");
    assert_eq!(cli(&["escalate", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]), 0);
    let decision = std::fs::read_to_string(out.join("decision.txt")).unwrap();
    assert!(decision.starts_with("stop"), "{decision}");
}

#[test]
fn shipped_configs_and_scenarios_load() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../..");
    for name in ["two_step.toml", "top_two.toml"] {
        let cfg = RunConfig::from_file(&root.join("configs").join(name)).unwrap();
        cfg.validate().unwrap();
        cfg.trial_settings().unwrap();
        cfg.scenario().unwrap();
    }
    // data files are the user's to supply
    let rec = RunConfig::from_file(&root.join("configs/recommend.toml")).unwrap_err();
    assert!(matches!(rec, doseopt::Error::Io(_)), "{rec}");
    for entry in std::fs::read_dir(root.join("scenarios")).unwrap() {
        let path = entry.unwrap().path();
        let sc = ScenarioSpec::from_toml(&std::fs::read_to_string(&path).unwrap()).unwrap();
        let stem = path.file_stem().unwrap().to_str().unwrap().to_string();
        assert_eq!(sc, ScenarioSpec::from_label(&stem).unwrap(), "{stem}");
    }
}
