//! Experiment drivers: policy grids, ρ sweeps and timing runs.

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use sprmab_core::domains::{build_instance, Setting};
use sprmab_core::lp::upper_bound;
use sprmab_core::policies::PolicyKind;
use sprmab_core::rng::hash_key;
use sprmab_core::sim::{normalize_scores, prepare_timed, write_trajectories, SimError, Simulator, Summary};
use sprmab_core::Instance;

use crate::config::ExperimentConfig;
use crate::report;
use crate::RunError;

/// One row of `results.csv`, in column order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultRow {
    pub domain: String,
    pub setting: String,
    pub instance_seed: u64,
    pub policy: String,
    pub mean_reward: f64,
    pub ci95: f64,
    pub upper_bound: f64,
    /// `(mean − random) / (upper bound − random)`; blank if the range is degenerate.
    pub normalized: Option<f64>,
    /// Blank unless timing is enabled.
    pub runtime_ms: Option<f64>,
    pub n_episodes: usize,
}

impl ResultRow {
    /// Gap to the upper bound is below 3% of the bound.
    pub fn near_optimal(&self) -> bool {
        self.upper_bound - self.mean_reward < 0.03 * self.upper_bound.abs()
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub rows: Vec<ResultRow>,
    pub mode: String,
    pub warnings: Vec<String>,
    pub out_dir: PathBuf,
}

impl ExperimentReport {
    pub fn rows_for(&self, kind: PolicyKind) -> impl Iterator<Item = &ResultRow> {
        self.rows.iter().filter(move |r| r.policy == kind.name())
    }
}

/// Results of all policies on one concrete instance.
struct DrawResult {
    upper_bound: f64,
    /// One summary per requested policy, in request order.
    summaries: Vec<Summary>,
    random_mean: f64,
}

fn instance_for(config: &ExperimentConfig, setting: Setting, seed: u64) -> Result<Instance, RunError> {
    build_instance(config.domain.family, setting, &config.domain.params, seed)
        .map_err(|e| RunError::Config(format!("instance {seed}: {e}")))
}

/// Saves the offending instance for replay and builds the error.
fn solver_failure(config: &ExperimentConfig, instance: &Instance, seed: u64, message: String) -> RunError {
    let path = config.out_dir.join(format!("failed-instance-{seed}.json"));
    let replay = fs::create_dir_all(&config.out_dir).ok().and_then(|_| instance.save(&path).ok()).map(|_| path);
    RunError::Solver { seed, message, replay }
}

fn sim_failure(config: &ExperimentConfig, instance: &Instance, seed: u64, kind: PolicyKind, err: SimError) -> RunError {
    match err {
        SimError::InfeasibleAction { .. } => RunError::Audit { seed, policy: kind.name().into(), detail: err.to_string() },
        SimError::Io(e) => RunError::Io(e),
        other => solver_failure(config, instance, seed, format!("{kind}: {other}")),
    }
}

/// Concrete instance seeds behind one configured seed.
fn draw_seeds(config: &ExperimentConfig, seed: u64) -> Vec<u64> {
    if config.resample_instances == 1 {
        vec![seed]
    } else {
        (0..config.resample_instances as u64).map(|m| hash_key(&[seed, m])).collect()
    }
}

fn evaluate_policy(
    config: &ExperimentConfig,
    sim: &Simulator,
    seed: u64,
    kind: PolicyKind,
    dump: bool,
) -> Result<Summary, RunError> {
    let instance = sim.instance();
    let (policy, precompute) = prepare_timed(kind, instance, &config.policy_options())
        .map_err(|e| solver_failure(config, instance, seed, format!("{kind}: {e}")))?;
    let (summary, _) = sim
        .evaluate_prepared(policy.as_ref(), precompute, config.n_episodes, config.base_seed)
        .map_err(|e| sim_failure(config, instance, seed, kind, e))?;
    if summary.audit_violations > 0 {
        return Err(RunError::Audit {
            seed,
            policy: kind.name().into(),
            detail: format!("{} violations", summary.audit_violations),
        });
    }
    if dump {
        let dir = config.out_dir.join("trajectories");
        fs::create_dir_all(&dir)?;
        let mut out = BufWriter::new(fs::File::create(dir.join(format!("instance-{seed}-{}.jsonl", kind.name())))?);
        for e in 0..config.n_episodes as u64 {
            let (_, records) = sim
                .run_episode_recorded(policy.as_ref(), config.base_seed.wrapping_add(e))
                .map_err(|err| sim_failure(config, instance, seed, kind, err))?;
            write_trajectories(&mut out, &records).map_err(|err| sim_failure(config, instance, seed, kind, err))?;
        }
    }
    Ok(summary)
}

fn evaluate_draw(config: &ExperimentConfig, kinds: &[PolicyKind], seed: u64) -> Result<DrawResult, RunError> {
    let instance = instance_for(config, config.setting, seed)?;
    let ub = upper_bound(&instance).map_err(|e| solver_failure(config, &instance, seed, format!("upper bound: {e}")))?;
    let sim = Simulator::new(&instance).map_err(|e| solver_failure(config, &instance, seed, e.to_string()))?;

    // the random policy anchors normalization even when it is not reported
    let mut all = kinds.to_vec();
    if !all.contains(&PolicyKind::Random) {
        all.push(PolicyKind::Random);
    }
    let run = |&kind: &PolicyKind| {
        let dump = config.dump_trajectories && kinds.contains(&kind);
        evaluate_policy(config, &sim, seed, kind, dump)
    };
    // timed runs stay sequential so policies do not compete for cores
    let summaries: Vec<Summary> = if config.timing {
        all.iter().map(run).collect::<Result<_, _>>()?
    } else {
        all.par_iter().map(run).collect::<Result<_, _>>()?
    };
    let random_mean = summaries[all.iter().position(|&k| k == PolicyKind::Random).unwrap()].mean;
    Ok(DrawResult { upper_bound: ub, summaries: summaries[..kinds.len()].to_vec(), random_mean })
}

fn average(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    sum / n as f64
}

/// Half-width of the mean of independent estimates with half-widths `cis`.
fn pooled_ci(cis: impl Iterator<Item = f64>) -> f64 {
    let (sq, n) = cis.fold((0.0, 0usize), |(s, n), c| (s + c * c, n + 1));
    sq.sqrt() / n as f64
}

fn make_row(config: &ExperimentConfig, seed: u64, index: usize, draws: &[DrawResult]) -> ResultRow {
    let summaries: Vec<&Summary> = draws.iter().map(|d| &d.summaries[index]).collect();
    let normalized: Option<Vec<f64>> = draws
        .iter()
        .zip(&summaries)
        .map(|(d, s)| normalize_scores(&[s.mean], d.upper_bound, d.random_mean).ok().map(|v| v[0]))
        .collect();
    ResultRow {
        domain: config.domain.family.name().to_string(),
        setting: config.setting.to_string(),
        instance_seed: seed,
        policy: summaries[0].policy.name().to_string(),
        mean_reward: average(summaries.iter().map(|s| s.mean)),
        ci95: pooled_ci(summaries.iter().map(|s| s.ci95)),
        upper_bound: average(draws.iter().map(|d| d.upper_bound)),
        normalized: normalized.map(|v| average(v.into_iter())),
        runtime_ms: config.timing.then(|| average(summaries.iter().map(|s| s.runtime_ms()))),
        n_episodes: config.n_episodes,
    }
}

/// Runs every policy on every instance draw and writes `results.csv`,
/// `table.txt` and the resolved `config.toml` into the output directory.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport, RunError> {
    config.validate()?;
    let kinds = config.policy_kinds()?;
    let jobs: Vec<(usize, u64)> = config
        .instance_seeds
        .iter()
        .enumerate()
        .flat_map(|(i, &seed)| draw_seeds(config, seed).into_iter().map(move |d| (i, d)))
        .collect();
    let run = |&(_, draw): &(usize, u64)| evaluate_draw(config, &kinds, draw);
    let results: Vec<DrawResult> = if config.timing {
        jobs.iter().map(run).collect::<Result<_, _>>()?
    } else {
        jobs.par_iter().map(run).collect::<Result<_, _>>()?
    };

    let mut rows = Vec::with_capacity(config.instance_seeds.len() * kinds.len());
    let per_seed = config.resample_instances;
    for (i, &seed) in config.instance_seeds.iter().enumerate() {
        let draws = &results[i * per_seed..(i + 1) * per_seed];
        rows.extend((0..kinds.len()).map(|k| make_row(config, seed, k, draws)));
    }

    let report = ExperimentReport { rows, mode: config.mode(), warnings: config.warnings(), out_dir: config.out_dir.clone() };
    fs::create_dir_all(&config.out_dir)?;
    report::write_csv(&config.out_dir.join("results.csv"), &report.rows)?;
    fs::write(config.out_dir.join("table.txt"), report::render_table(config, &report.rows))?;
    fs::write(config.out_dir.join("config.toml"), config.to_toml())?;
    Ok(report)
}

/// Gap statistics at one replication factor, averaged over instance seeds.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GapPoint {
    pub rho: usize,
    /// Per-arm gap `(upper bound − mean) / (ρN)`.
    pub gap: f64,
    pub ci: f64,
    /// Relative gap `1 − mean / upper bound`.
    pub normalized_gap: f64,
    pub normalized_ci: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepReport {
    pub policy: String,
    pub points: Vec<GapPoint>,
    /// Least-squares slope of `ln gap` against `ln ρ`; needs two positive gaps.
    pub slope: Option<f64>,
    pub normalized_slope: Option<f64>,
}

/// Least-squares slope of `ln y` on `ln x` over the points with `y > 0`.
pub fn log_log_slope(points: &[(f64, f64)]) -> Option<f64> {
    let logs: Vec<(f64, f64)> = points.iter().filter(|(x, y)| *x > 0.0 && *y > 0.0).map(|(x, y)| (x.ln(), y.ln())).collect();
    if logs.len() < 2 {
        return None;
    }
    let n = logs.len() as f64;
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = logs.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = logs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Sweeps ρ with the first configured policy; writes `gap.csv` and `gap_fit.json`.
pub fn sweep_rho(config: &ExperimentConfig, rhos: &[usize]) -> Result<SweepReport, RunError> {
    let kind = *config.policy_kinds()?.first().expect("validated config has a policy");
    sweep_rho_with(config, rhos, kind.name(), |instance, _, seed| {
        let sim = Simulator::new(instance).map_err(|e| solver_failure(config, instance, seed, e.to_string()))?;
        let s = evaluate_policy(config, &sim, seed, kind, false)?;
        Ok((s.mean, s.ci95))
    })
}

/// Sweep harness with an injected evaluator `(instance, upper bound, seed) → (mean, ci95)`.
pub fn sweep_rho_with<F>(config: &ExperimentConfig, rhos: &[usize], label: &str, evaluate: F) -> Result<SweepReport, RunError>
where
    F: Fn(&Instance, f64, u64) -> Result<(f64, f64), RunError> + Sync,
{
    config.validate()?;
    if rhos.is_empty() || rhos.contains(&0) || rhos.windows(2).any(|w| w[0] >= w[1]) {
        return Err(RunError::Config(format!("rho list {rhos:?} must be positive and strictly ascending")));
    }
    let jobs: Vec<(usize, u64)> = rhos.iter().flat_map(|&rho| config.instance_seeds.iter().map(move |&s| (rho, s))).collect();
    let samples: Vec<(f64, f64, f64, f64)> = jobs
        .par_iter()
        .map(|&(rho, seed)| {
            let setting = Setting { rho, ..config.setting };
            let instance = instance_for(config, setting, seed)?;
            let ub = upper_bound(&instance).map_err(|e| solver_failure(config, &instance, seed, format!("upper bound: {e}")))?;
            let (mean, ci) = evaluate(&instance, ub, seed)?;
            let arms = instance.n_arms() as f64;
            Ok(((ub - mean) / arms, ci / arms, 1.0 - mean / ub, ci / ub.abs()))
        })
        .collect::<Result<_, RunError>>()?;

    let k = config.instance_seeds.len();
    let points: Vec<GapPoint> = rhos
        .iter()
        .zip(samples.chunks(k))
        .map(|(&rho, chunk)| GapPoint {
            rho,
            gap: average(chunk.iter().map(|c| c.0)),
            ci: pooled_ci(chunk.iter().map(|c| c.1)),
            normalized_gap: average(chunk.iter().map(|c| c.2)),
            normalized_ci: pooled_ci(chunk.iter().map(|c| c.3)),
        })
        .collect();
    let fit = |f: fn(&GapPoint) -> f64| log_log_slope(&points.iter().map(|p| (p.rho as f64, f(p))).collect::<Vec<_>>());
    let report = SweepReport {
        policy: label.to_string(),
        slope: fit(|p| p.gap),
        normalized_slope: fit(|p| p.normalized_gap),
        points,
    };
    fs::create_dir_all(&config.out_dir)?;
    report::write_csv(&config.out_dir.join("gap.csv"), &report.points)?;
    write_json(&config.out_dir.join("gap_fit.json"), &report)?;
    Ok(report)
}

/// Mean and standard deviation of per-draw policy wall time.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimingRow {
    pub policy: String,
    pub mean_ms: f64,
    pub std_ms: f64,
    pub n_draws: usize,
}

/// Instance seeds for timing: the configured ones, extended to at least three.
fn timing_seeds(config: &ExperimentConfig) -> Vec<u64> {
    let mut seeds = config.instance_seeds.clone();
    while seeds.len() < 3 {
        let next = seeds.last().map_or(0, |s| s + 1);
        seeds.push(next);
    }
    seeds
}

/// Times each policy (precomputation plus selection) over at least three
/// instance draws, one policy at a time; writes `timing.csv`.
pub fn time_policies(config: &ExperimentConfig) -> Result<Vec<TimingRow>, RunError> {
    config.validate()?;
    let kinds = config.policy_kinds()?;
    let whittle = [PolicyKind::WhittleOriginal, PolicyKind::WhittleInfinite, PolicyKind::WhittleFinite];
    if !kinds.contains(&PolicyKind::Spi) || !kinds.iter().any(|k| whittle.contains(k)) {
        return Err(RunError::Config("timing needs spi and at least one Whittle policy".into()));
    }
    let seeds = timing_seeds(config);
    let mut times = vec![Vec::with_capacity(seeds.len()); kinds.len()];
    for &seed in &seeds {
        let instance = instance_for(config, config.setting, seed)?;
        let sim = Simulator::new(&instance).map_err(|e| solver_failure(config, &instance, seed, e.to_string()))?;
        for (k, &kind) in kinds.iter().enumerate() {
            times[k].push(evaluate_policy(config, &sim, seed, kind, false)?.runtime_ms());
        }
    }
    let rows: Vec<TimingRow> = kinds
        .iter()
        .zip(&times)
        .map(|(kind, t)| {
            let mean = average(t.iter().copied());
            let var = t.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (t.len() - 1) as f64;
            TimingRow { policy: kind.name().to_string(), mean_ms: mean, std_ms: var.sqrt(), n_draws: t.len() }
        })
        .collect();
    fs::create_dir_all(&config.out_dir)?;
    report::write_csv(&config.out_dir.join("timing.csv"), &rows)?;
    Ok(rows)
}

/// Writes one generated instance per configured seed as JSON.
pub fn export_instances(config: &ExperimentConfig, dir: &Path) -> Result<Vec<PathBuf>, RunError> {
    fs::create_dir_all(dir)?;
    config
        .instance_seeds
        .iter()
        .map(|&seed| {
            let path = dir.join(format!("instance-{seed}.json"));
            instance_for(config, config.setting, seed)?.save(&path).map_err(|e| RunError::Config(e.to_string()))?;
            Ok(path)
        })
        .collect()
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), RunError> {
    let text = serde_json::to_string_pretty(value).expect("report serializes");
    fs::write(path, text + "\n")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slope_of_a_power_law() {
        let pts: Vec<(f64, f64)> = [1.0, 2.0, 4.0, 8.0].iter().map(|&x: &f64| (x, 3.0 * x.powf(-0.5))).collect();
        assert!((log_log_slope(&pts).unwrap() + 0.5).abs() < 1e-12);
        assert_eq!(log_log_slope(&pts[..1]), None);
        assert_eq!(log_log_slope(&[(1.0, 0.0), (2.0, 1.0)]), None);
    }

    #[test]
    fn pooled_ci_of_equal_estimates() {
        // the mean of k estimates with equal half-width h has half-width h/√k
        assert!((pooled_ci([2.0; 4].into_iter()) - 1.0).abs() < 1e-15);
        assert_eq!(average([1.0, 2.0, 6.0].into_iter()), 3.0);
    }

    #[test]
    fn near_optimal_marker_uses_three_percent() {
        let mut row = ResultRow {
            domain: "cpap".into(),
            setting: "(1,2,1,1,1)".into(),
            instance_seed: 0,
            policy: "spi".into(),
            mean_reward: 97.1,
            ci95: 0.0,
            upper_bound: 100.0,
            normalized: None,
            runtime_ms: None,
            n_episodes: 2,
        };
        assert!(row.near_optimal());
        row.mean_reward = 97.0;
        assert!(!row.near_optimal());
    }

    #[test]
    fn timing_uses_at_least_three_draws() {
        let mut c = ExperimentConfig::new(sprmab_core::domains::Family::Cpap, Setting { n_types: 1, n_states: 2, budget: 1, rho: 1, horizon: 1 });
        c.instance_seeds = vec![5];
        assert_eq!(timing_seeds(&c), vec![5, 6, 7]);
        c.instance_seeds = vec![1, 2, 3, 4];
        assert_eq!(timing_seeds(&c).len(), 4);
    }
}
