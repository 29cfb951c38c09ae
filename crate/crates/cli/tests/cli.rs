use std::fs;
use std::path::Path;
use std::process::Command;

use sprmab_cli::{run_experiment, sweep_rho, sweep_rho_with, time_policies, ExperimentConfig, RunError};
use sprmab_core::domains::{Family, Setting};
use sprmab_core::Instance;

fn small_config(out: &Path) -> ExperimentConfig {
    let mut c = ExperimentConfig::new(Family::Cpap, Setting { n_types: 3, n_states: 3, budget: 1, rho: 2, horizon: 4 });
    c.out_dir = out.to_path_buf();
    c.n_episodes = 10;
    c
}

fn write_config(dir: &Path, body: &str) -> std::path::PathBuf {
    let path = dir.join("experiment.toml");
    fs::write(&path, body).unwrap();
    path
}

const CONFIG: &str = r#"
policies = ["spi", "random"]
n_episodes = 10
instance_seeds = [0]

[domain]
family = "cpap"

[setting]
n_types = 3
n_states = 3
budget = 1
rho = 2
horizon = 4
"#;

#[test]
fn two_policies_give_two_rows_and_random_normalizes_to_zero() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = small_config(dir.path());
    config.policies = vec!["spi".into(), "random".into()];
    let report = run_experiment(&config).unwrap();
    assert_eq!(report.rows.len(), 2);
    let random = report.rows.iter().find(|r| r.policy == "random").unwrap();
    assert!(random.normalized.unwrap().abs() < 1e-12);
    assert!(random.runtime_ms.is_none());
    let csv = fs::read_to_string(dir.path().join("results.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    assert!(dir.path().join("table.txt").exists());
    let saved = ExperimentConfig::load(&dir.path().join("config.toml")).unwrap();
    assert_eq!(saved, config);
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path());
    run_experiment(&config).unwrap();
    let first = fs::read(dir.path().join("results.csv")).unwrap();
    run_experiment(&config).unwrap();
    assert_eq!(fs::read(dir.path().join("results.csv")).unwrap(), first);
}

#[test]
fn every_row_respects_the_upper_bound_up_to_noise() {
    let dir = tempfile::tempdir().unwrap();
    for family in [Family::Cpap, Family::Mhmh, Family::Random, Family::Ehrenfest] {
        let mut config = small_config(dir.path());
        config.domain.family = family;
        config.instance_seeds = vec![0, 1];
        config.n_episodes = 40;
        for row in run_experiment(&config).unwrap().rows {
            assert!(row.mean_reward <= row.upper_bound + 3.0 * row.ci95 + 1e-9, "{family:?}: {row:?}");
        }
    }
}

#[test]
fn resampled_mode_averages_draws_into_one_row() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = small_config(dir.path());
    config.policies = vec!["spi".into(), "meanfield".into()];
    config.instance_seeds = vec![3, 4];
    config.resample_instances = 3;
    let report = run_experiment(&config).unwrap();
    assert_eq!(report.mode, "resampled-3");
    assert_eq!(report.rows.len(), 4);
    assert_eq!(report.rows.iter().map(|r| r.instance_seed).collect::<Vec<_>>(), vec![3, 3, 4, 4]);
    assert!(fs::read_to_string(dir.path().join("table.txt")).unwrap().contains("mode resampled-3"));
}

#[test]
fn timing_fills_the_runtime_column() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = small_config(dir.path());
    config.timing = true;
    for row in run_experiment(&config).unwrap().rows {
        let ms = row.runtime_ms.unwrap();
        assert!(ms.is_finite() && ms >= 0.0);
    }
}

#[test]
fn trajectories_are_dumped_per_policy() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = small_config(dir.path());
    config.policies = vec!["spi".into()];
    config.dump_trajectories = true;
    run_experiment(&config).unwrap();
    let text = fs::read_to_string(dir.path().join("trajectories/instance-0-spi.jsonl")).unwrap();
    // episodes × horizon × arms records
    assert_eq!(text.lines().count(), 10 * 4 * 6);
    assert!(!dir.path().join("trajectories/instance-0-random.jsonl").exists());
}

#[test]
fn single_rho_sweep_writes_one_row() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = small_config(dir.path());
    config.policies = vec!["spi".into()];
    let report = sweep_rho(&config, &[3]).unwrap();
    assert_eq!(report.points.len(), 1);
    assert_eq!(report.slope, None);
    let csv = fs::read_to_string(dir.path().join("gap.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "rho,gap,ci,normalized_gap,normalized_ci");
    assert_eq!(csv.lines().count(), 2);
    assert!(dir.path().join("gap_fit.json").exists());
}

#[test]
fn injected_constant_gap_is_reported_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = small_config(dir.path());
    config.instance_seeds = vec![0, 1, 2];
    let g = 0.125;
    let report = sweep_rho_with(&config, &[1, 2, 4, 8], "constant", |inst: &Instance, ub, _| {
        Ok((ub - g * inst.n_arms() as f64, 0.0))
    })
    .unwrap();
    for p in &report.points {
        assert!((p.gap - g).abs() < 1e-12, "{p:?}");
        assert_eq!(p.ci, 0.0);
    }
    assert!(report.slope.unwrap().abs() < 1e-9);
}

#[test]
fn sweep_rejects_unsorted_rho_lists() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path());
    for bad in [&[][..], &[4, 2], &[2, 2], &[0, 1]] {
        assert!(matches!(sweep_rho(&config, bad), Err(RunError::Config(_))), "{bad:?}");
    }
}

#[test]
fn timing_a_single_arm_gives_positive_finite_times() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = ExperimentConfig::new(Family::Cpap, Setting { n_types: 1, n_states: 2, budget: 1, rho: 1, horizon: 3 });
    config.out_dir = dir.path().to_path_buf();
    config.n_episodes = 4;
    config.policies = vec!["spi".into(), "whittle-finite".into(), "whittle-infinite".into()];
    let rows = time_policies(&config).unwrap();
    assert_eq!(rows.len(), 3);
    for r in &rows {
        assert!(r.mean_ms > 0.0 && r.mean_ms.is_finite(), "{r:?}");
        assert!(r.std_ms.is_finite());
        assert_eq!(r.n_draws, 3);
    }
    assert!(dir.path().join("timing.csv").exists());
    config.policies = vec!["spi".into(), "random".into()];
    assert!(matches!(time_policies(&config), Err(RunError::Config(_))));
}

#[test]
fn exit_codes_follow_the_error_kind() {
    assert_eq!(RunError::Config("x".into()).exit_code(), 2);
    assert_eq!(RunError::Solver { seed: 0, message: "x".into(), replay: None }.exit_code(), 3);
    assert_eq!(RunError::Audit { seed: 0, policy: "spi".into(), detail: "x".into() }.exit_code(), 4);
}

fn sprmab() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_sprmab"));
    cmd.env_remove("SPRMAB_THREADS");
    cmd
}

#[test]
fn binary_run_succeeds_and_prints_the_table() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), CONFIG);
    let out = dir.path().join("out");
    let output = sprmab()
        .args(["run", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(&out)
        .args(["--seeds", "0..2", "--episodes", "6"])
        .env("SPRMAB_THREADS", "2")
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(0), "{}", String::from_utf8_lossy(&output.stderr));
    let stdout = String::from_utf8(output.stdout).unwrap();
    assert!(stdout.contains("spi") && stdout.contains("mode fixed"));
    let csv = fs::read_to_string(out.join("results.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 2 * 2);
    assert!(csv.lines().skip(1).all(|l| l.ends_with(",6")));
}

#[test]
fn binary_reports_config_errors_with_exit_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        CONFIG.replace("\"random\"", "\"ucb\""),
        CONFIG.replace("n_episodes = 10", "n_episodes = 10\nepisodes = 3"),
        CONFIG.replace("n_episodes = 10", "n_episodes = 1"),
    ];
    for body in cases {
        let config = write_config(dir.path(), &body);
        let status = sprmab().args(["run", "--config"]).arg(&config).arg("--out").arg(dir.path()).status().unwrap();
        assert_eq!(status.code(), Some(2), "{body}");
    }
    let config = write_config(dir.path(), CONFIG);
    let status = sprmab().args(["run", "--config"]).arg(&config).env("SPRMAB_THREADS", "zero").status().unwrap();
    assert_eq!(status.code(), Some(2));
    let status = sprmab().args(["run", "--config"]).arg(dir.path().join("missing.toml")).status().unwrap();
    assert_eq!(status.code(), Some(2));
}

#[test]
fn binary_exports_instances_that_load_back() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), CONFIG);
    let out = dir.path().join("instances");
    let status = sprmab().args(["export-instance", "--config"]).arg(&config).arg("--out").arg(&out).args(["--seeds", "5..7"]).status().unwrap();
    assert_eq!(status.code(), Some(0));
    for seed in [5, 6] {
        let inst = Instance::load(&out.join(format!("instance-{seed}.json"))).unwrap();
        assert_eq!((inst.n_types(), inst.rho, inst.budget, inst.horizon), (3, 2, 1, 4));
    }
}

#[test]
fn binary_dumps_the_lp() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), CONFIG);
    for variant in ["dummy", "sprmab", "meanfield"] {
        let output = sprmab().args(["dump-lp", "--config"]).arg(&config).args(["--variant", variant]).output().unwrap();
        assert_eq!(output.status.code(), Some(0));
        let text = String::from_utf8(output.stdout).unwrap();
        assert!(text.to_lowercase().contains("maximize"), "{variant}");
    }
}

#[test]
fn bundled_configs_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs");
    let mut n = 0;
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        let config = ExperimentConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        let budget_binds = config.setting.budget <= config.setting.n_types;
        assert_eq!(config.warnings().is_empty(), budget_binds, "{}", path.display());
        n += 1;
    }
    assert!(n >= 4);
    let output = sprmab().arg("example-config").output().unwrap();
    ExperimentConfig::from_toml(&String::from_utf8(output.stdout).unwrap()).unwrap();
}
