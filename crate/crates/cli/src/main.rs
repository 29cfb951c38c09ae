use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use sprmab_cli::{
    export_instances, parse_list, parse_seed_range, run_experiment, sweep_rho, time_policies, ExperimentConfig, Overrides, RunError,
};
use sprmab_core::domains::build_instance;
use sprmab_core::lp::{build_occupancy_lp, Variant};

/// Environment variable holding the worker thread count.
const THREADS_VAR: &str = "SPRMAB_THREADS";

#[derive(Parser)]
#[command(name = "sprmab", version, about = "Single-pull restless bandit experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides `out_dir`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Instance seeds `A..B` (end exclusive) or a single seed.
    #[arg(long)]
    seeds: Option<String>,
    /// Comma-separated policy names.
    #[arg(long)]
    policies: Option<String>,
    /// Episodes per evaluation.
    #[arg(long)]
    episodes: Option<usize>,
    /// Average each reported row over this many instance draws.
    #[arg(long)]
    resample_instances: Option<usize>,
    /// Write every episode's trajectory as JSON lines.
    #[arg(long)]
    dump_trajectories: bool,
    /// Record policy wall times in the results.
    #[arg(long)]
    timing: bool,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig, RunError> {
        let mut config = ExperimentConfig::load(&self.config)?;
        config.apply(Overrides {
            out_dir: self.out.clone(),
            seeds: self.seeds.as_deref().map(parse_seed_range).transpose()?,
            policies: self.policies.as_deref().map(parse_list),
            n_episodes: self.episodes,
            resample_instances: self.resample_instances,
            dump_trajectories: self.dump_trajectories,
            timing: self.timing,
        })?;
        for w in config.warnings() {
            eprintln!("warning: {w}");
        }
        Ok(config)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum LpVariant {
    Dummy,
    Sprmab,
    Meanfield,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate the configured policies and write results.csv and table.txt.
    Run(Common),
    /// Sweep the replication factor and write gap.csv and gap_fit.json.
    SweepRho {
        #[command(flatten)]
        common: Common,
        /// Comma-separated ascending ρ values (default: `rhos` from the config).
        #[arg(long)]
        rhos: Option<String>,
    },
    /// Time the configured policies and write timing.csv.
    Time(Common),
    /// Write the generated instances as JSON files.
    ExportInstance(Common),
    /// Print one occupancy LP in LP text format.
    DumpLp {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "dummy")]
        variant: LpVariant,
    },
    /// Print a commented example config.
    ExampleConfig,
}

fn configure_threads() -> Result<(), RunError> {
    let Ok(value) = std::env::var(THREADS_VAR) else {
        return Ok(());
    };
    let threads: usize = value
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| RunError::Config(format!("{THREADS_VAR} must be a positive integer, got `{value}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| RunError::Config(format!("cannot start {threads} worker threads: {e}")))
}

fn execute(command: Command) -> Result<(), RunError> {
    match command {
        Command::Run(common) => {
            let config = common.load()?;
            let report = run_experiment(&config)?;
            print!("{}", std::fs::read_to_string(report.out_dir.join("table.txt"))?);
            eprintln!("wrote {}", report.out_dir.join("results.csv").display());
        }
        Command::SweepRho { common, rhos } => {
            let config = common.load()?;
            let rhos: Vec<usize> = match rhos {
                Some(text) => parse_list(&text)
                    .iter()
                    .map(|r| r.parse().map_err(|_| RunError::Config(format!("bad rho `{r}`"))))
                    .collect::<Result<_, _>>()?,
                None => config.rhos.clone(),
            };
            let report = sweep_rho(&config, &rhos)?;
            println!("{:>6}  {:>12}  {:>12}  {:>14}  {:>12}", "rho", "gap", "ci", "normalized_gap", "normalized_ci");
            for p in &report.points {
                println!("{:>6}  {:>12.6}  {:>12.6}  {:>14.6}  {:>12.6}", p.rho, p.gap, p.ci, p.normalized_gap, p.normalized_ci);
            }
            let show = |s: Option<f64>| s.map_or_else(|| "n/a".to_string(), |v| format!("{v:.3}"));
            println!("log-log slope: gap {}, normalized gap {}", show(report.slope), show(report.normalized_slope));
        }
        Command::Time(common) => {
            let config = common.load()?;
            println!("{:<17} {:>12} {:>12}", "policy", "mean_ms", "std_ms");
            for row in time_policies(&config)? {
                println!("{:<17} {:>12.3} {:>12.3}", row.policy, row.mean_ms, row.std_ms);
            }
        }
        Command::ExportInstance(common) => {
            let config = common.load()?;
            for path in export_instances(&config, &config.out_dir)? {
                println!("{}", path.display());
            }
        }
        Command::DumpLp { common, variant } => {
            let config = common.load()?;
            let seed = config.instance_seeds[0];
            let instance = build_instance(config.domain.family, config.setting, &config.domain.params, seed)
                .map_err(|e| RunError::Config(e.to_string()))?;
            let variant = match variant {
                LpVariant::Dummy => Variant::Dummy,
                LpVariant::Sprmab => Variant::SprmabLp,
                LpVariant::Meanfield => Variant::MeanField,
            };
            let lp = build_occupancy_lp(&instance, variant).map_err(|e| RunError::Solver { seed, message: e.to_string(), replay: None })?;
            print!("{}", lp.to_lp_format());
        }
        Command::ExampleConfig => print!("{}", include_str!("../configs/cpap_grid.toml")),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match configure_threads().and_then(|_| execute(cli.command)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
