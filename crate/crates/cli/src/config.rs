//! Experiment configuration: one TOML file describes one experiment.

use std::ops::Range;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use sprmab_core::domains::{Family, FamilyParams, Setting};
use sprmab_core::policies::{PolicyKind, PolicyOptions, DEFAULT_INDEX_TOL};

use crate::RunError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainConfig {
    pub family: Family,
    #[serde(default)]
    pub params: FamilyParams,
}

/// Everything needed to reproduce an experiment.
///
/// `instance_seeds` names the instance draws. With `resample_instances = 1`
/// every draw gets its own result rows; with `M > 1` each seed stands for `M`
/// derived draws whose results are averaged into a single row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub domain: DomainConfig,
    pub setting: Setting,
    #[serde(default = "default_policies")]
    pub policies: Vec<String>,
    #[serde(default = "default_episodes")]
    pub n_episodes: usize,
    /// Episode `e` of every evaluation uses seed `base_seed + e`.
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default = "default_instance_seeds")]
    pub instance_seeds: Vec<u64>,
    #[serde(default = "default_resample")]
    pub resample_instances: usize,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    /// Stop the single-pull index walk at the first non-positive index.
    #[serde(default = "default_true")]
    pub spi_cutoff: bool,
    #[serde(default = "default_index_tol")]
    pub index_tol: f64,
    #[serde(default)]
    pub dump_trajectories: bool,
    /// Record wall times in `results.csv`; off by default so reruns are byte-identical.
    #[serde(default)]
    pub timing: bool,
    /// Replication factors for `sweep-rho`.
    #[serde(default)]
    pub rhos: Vec<usize>,
}

fn default_policies() -> Vec<String> {
    PolicyKind::ALL.iter().map(|k| k.name().to_string()).collect()
}

fn default_episodes() -> usize {
    200
}

fn default_instance_seeds() -> Vec<u64> {
    vec![0]
}

fn default_resample() -> usize {
    1
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("results")
}

fn default_true() -> bool {
    true
}

fn default_index_tol() -> f64 {
    DEFAULT_INDEX_TOL
}

/// Command-line overrides; `None` keeps the config value.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out_dir: Option<PathBuf>,
    pub seeds: Option<Range<u64>>,
    pub policies: Option<Vec<String>>,
    pub n_episodes: Option<usize>,
    pub resample_instances: Option<usize>,
    pub dump_trajectories: bool,
    pub timing: bool,
}

impl ExperimentConfig {
    pub fn new(family: Family, setting: Setting) -> Self {
        Self {
            domain: DomainConfig { family, params: FamilyParams::default() },
            setting,
            policies: default_policies(),
            n_episodes: default_episodes(),
            base_seed: 0,
            instance_seeds: default_instance_seeds(),
            resample_instances: 1,
            out_dir: default_out_dir(),
            spi_cutoff: true,
            index_tol: DEFAULT_INDEX_TOL,
            dump_trajectories: false,
            timing: false,
            rhos: Vec::new(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, RunError> {
        let config: Self = toml::from_str(text).map_err(|e| RunError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, RunError> {
        let text = std::fs::read_to_string(path).map_err(|e| RunError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn apply(&mut self, o: Overrides) -> Result<(), RunError> {
        if let Some(dir) = o.out_dir {
            self.out_dir = dir;
        }
        if let Some(seeds) = o.seeds {
            self.instance_seeds = seeds.collect();
        }
        if let Some(p) = o.policies {
            self.policies = p;
        }
        if let Some(n) = o.n_episodes {
            self.n_episodes = n;
        }
        if let Some(m) = o.resample_instances {
            self.resample_instances = m;
        }
        self.dump_trajectories |= o.dump_trajectories;
        self.timing |= o.timing;
        self.validate()
    }

    pub fn validate(&self) -> Result<(), RunError> {
        let s = &self.setting;
        let fail = |msg: String| Err(RunError::Config(msg));
        if s.n_types == 0 || s.n_states == 0 || s.rho == 0 || s.horizon == 0 {
            return fail(format!("setting {s} needs positive N, S, ρ and T"));
        }
        if self.n_episodes < 2 {
            return fail(format!("n_episodes must be at least 2, got {}", self.n_episodes));
        }
        if self.instance_seeds.is_empty() {
            return fail("instance_seeds is empty".into());
        }
        if self.resample_instances == 0 {
            return fail("resample_instances must be positive".into());
        }
        if !(self.index_tol > 0.0) {
            return fail(format!("index_tol must be positive, got {}", self.index_tol));
        }
        if self.policies.is_empty() {
            return fail("no policies selected".into());
        }
        self.policy_kinds()?;
        Ok(())
    }

    pub fn policy_kinds(&self) -> Result<Vec<PolicyKind>, RunError> {
        let mut kinds = Vec::with_capacity(self.policies.len());
        for name in &self.policies {
            let kind: PolicyKind = name.parse().map_err(|_| {
                let known: Vec<&str> = PolicyKind::ALL.iter().map(|k| k.name()).collect();
                RunError::Config(format!("unknown policy `{name}` (expected one of {})", known.join(", ")))
            })?;
            if kinds.contains(&kind) {
                return Err(RunError::Config(format!("policy `{name}` listed twice")));
            }
            kinds.push(kind);
        }
        Ok(kinds)
    }

    pub fn policy_options(&self) -> PolicyOptions {
        PolicyOptions { spi_cutoff: self.spi_cutoff, index_tol: self.index_tol }
    }

    /// Non-fatal remarks about the configuration.
    pub fn warnings(&self) -> Vec<String> {
        let s = &self.setting;
        let mut out = Vec::new();
        if s.budget > s.n_types {
            out.push(format!(
                "budget Kρ = {} exceeds the number of arms ρN = {}; the budget never binds",
                s.budget * s.rho,
                s.n_types * s.rho
            ));
        }
        if s.budget == 0 {
            out.push("budget is zero; every policy is passive".into());
        }
        out
    }

    /// Label for the instance-evaluation mode.
    pub fn mode(&self) -> String {
        if self.resample_instances == 1 {
            "fixed".into()
        } else {
            format!("resampled-{}", self.resample_instances)
        }
    }
}

/// Parses `A..B` (end exclusive) or a single seed `A`.
pub fn parse_seed_range(text: &str) -> Result<Range<u64>, RunError> {
    let bad = || RunError::Config(format!("bad seed range `{text}` (expected A..B or A)"));
    let parse = |s: &str| s.trim().parse::<u64>().map_err(|_| bad());
    match text.split_once("..") {
        Some((a, b)) => {
            let (a, b) = (parse(a)?, parse(b)?);
            if a >= b {
                return Err(bad());
            }
            Ok(a..b)
        }
        None => {
            let a = parse(text)?;
            Ok(a..a + 1)
        }
    }
}

/// Splits a comma-separated list, dropping empty items.
pub fn parse_list(text: &str) -> Vec<String> {
    text.split(',').map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect()
}
