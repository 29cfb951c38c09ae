//! Arm MDPs, instances and the dummy-state expansion.
//!
//! An [`ArmModel`] is a two-action MDP over a finite state space. Expanding it
//! with [`expand_with_dummies`] duplicates the state space: dummy state
//! `s + |S|` is where an arm lands after being pulled, it evolves by the
//! passive kernel under either action and pays the passive reward, so a pulled
//! arm can never benefit from a second pull.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng;

/// Tolerance on stochastic row sums.
pub const ROW_SUM_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid arm model `{label}`: {message}")]
    InvalidArm { label: String, message: String },
    #[error("model `{0}` already contains dummy states")]
    AlreadyExpanded(String),
    #[error("invalid instance: {0}")]
    InvalidInstance(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed model file: {0}")]
    Format(#[from] serde_json::Error),
}

/// Binary action set: passive (0) and active (1).
pub const PASSIVE: usize = 0;
pub const ACTIVE: usize = 1;

/// A two-action arm MDP.
#[derive(Debug, Clone, PartialEq)]
pub struct ArmModel {
    label: String,
    n_states: usize,
    /// Dense `P(s, a, s')` at `(s * 2 + a) * n_states + s'`.
    transitions: Vec<f64>,
    /// `r(s, a)` at `s * 2 + a`.
    rewards: Vec<f64>,
    /// For expanded models, `dummy_of[i]` is the origin of dummy state `n_normal + i`.
    dummy_of: Option<Vec<usize>>,
    /// Nonzero support of each `(s, a)` row, same layout as `rewards`.
    support: Vec<Vec<(usize, f64)>>,
}

impl ArmModel {
    /// Builds a model from nested rows `transitions[s][a][s']` and `rewards[s][a]`.
    ///
    /// Rows within [`ROW_SUM_TOL`] of one are renormalized; anything else is
    /// rejected.
    pub fn new(
        label: impl Into<String>,
        transitions: &[[Vec<f64>; 2]],
        rewards: &[[f64; 2]],
    ) -> Result<Self, ModelError> {
        let label = label.into();
        let model = Self::from_nested_unchecked(label.clone(), transitions, rewards)?;
        let report = validate_arm(&model);
        if !report.ok {
            return Err(ModelError::InvalidArm {
                label,
                message: report.first_error().unwrap_or_default(),
            });
        }
        Ok(model.renormalized())
    }

    /// Builds a model without stochasticity checks, only shape checks.
    ///
    /// Used to inspect malformed inputs with [`validate_arm`].
    pub fn from_nested_unchecked(
        label: impl Into<String>,
        transitions: &[[Vec<f64>; 2]],
        rewards: &[[f64; 2]],
    ) -> Result<Self, ModelError> {
        let label = label.into();
        let n = transitions.len();
        if n == 0 {
            return Err(ModelError::InvalidArm { label, message: "no states".into() });
        }
        if rewards.len() != n {
            return Err(ModelError::InvalidArm {
                label,
                message: format!("{} reward rows for {} states", rewards.len(), n),
            });
        }
        let mut flat = Vec::with_capacity(2 * n * n);
        for (s, rows) in transitions.iter().enumerate() {
            for (a, row) in rows.iter().enumerate() {
                if row.len() != n {
                    return Err(ModelError::InvalidArm {
                        label,
                        message: format!("row ({s}, {a}) has {} entries, expected {n}", row.len()),
                    });
                }
                flat.extend_from_slice(row);
            }
        }
        let rewards = rewards.iter().flat_map(|r| r.iter().copied()).collect();
        Ok(Self::from_flat(label, n, flat, rewards, None))
    }

    fn from_flat(
        label: String,
        n_states: usize,
        transitions: Vec<f64>,
        rewards: Vec<f64>,
        dummy_of: Option<Vec<usize>>,
    ) -> Self {
        let support = (0..2 * n_states)
            .map(|row| {
                transitions[row * n_states..(row + 1) * n_states]
                    .iter()
                    .enumerate()
                    .filter(|(_, &p)| p > 0.0)
                    .map(|(s, &p)| (s, p))
                    .collect()
            })
            .collect();
        Self { label, n_states, transitions, rewards, dummy_of, support }
    }

    fn renormalized(self) -> Self {
        let n = self.n_states;
        let mut transitions = self.transitions;
        for row in transitions.chunks_mut(n) {
            let sum: f64 = row.iter().sum();
            if sum != 1.0 {
                row.iter_mut().for_each(|p| *p /= sum);
            }
        }
        Self::from_flat(self.label, n, transitions, self.rewards, self.dummy_of)
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// Total number of states, including dummy states.
    pub fn n_states(&self) -> usize {
        self.n_states
    }

    /// Number of non-dummy states.
    pub fn n_normal(&self) -> usize {
        match &self.dummy_of {
            Some(d) => self.n_states - d.len(),
            None => self.n_states,
        }
    }

    pub fn is_expanded(&self) -> bool {
        self.dummy_of.is_some()
    }

    pub fn dummy_of(&self) -> Option<&[usize]> {
        self.dummy_of.as_deref()
    }

    pub fn is_dummy(&self, s: usize) -> bool {
        self.dummy_of.is_some() && s >= self.n_normal()
    }

    /// The normal state a (possibly dummy) state stands for.
    pub fn origin(&self, s: usize) -> usize {
        match &self.dummy_of {
            Some(d) if s >= self.n_normal() => d[s - self.n_normal()],
            _ => s,
        }
    }

    #[inline]
    pub fn p(&self, s: usize, a: usize, next: usize) -> f64 {
        self.transitions[(s * 2 + a) * self.n_states + next]
    }

    #[inline]
    pub fn row(&self, s: usize, a: usize) -> &[f64] {
        let start = (s * 2 + a) * self.n_states;
        &self.transitions[start..start + self.n_states]
    }

    /// Nonzero entries of `P(s, a, ·)`.
    #[inline]
    pub fn support(&self, s: usize, a: usize) -> &[(usize, f64)] {
        &self.support[s * 2 + a]
    }

    #[inline]
    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.rewards[s * 2 + a]
    }

    /// Largest minus smallest reward over all state-action pairs.
    pub fn reward_span(&self) -> f64 {
        let max = self.rewards.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let min = self.rewards.iter().copied().fold(f64::INFINITY, f64::min);
        max - min
    }

    /// Expected value of `values` after one step from `(s, a)`.
    #[inline]
    pub fn expect(&self, s: usize, a: usize, values: &[f64]) -> f64 {
        self.support(s, a).iter().map(|&(n, p)| p * values[n]).sum()
    }

    pub fn transitions_nested(&self) -> Vec<[Vec<f64>; 2]> {
        (0..self.n_states)
            .map(|s| [self.row(s, PASSIVE).to_vec(), self.row(s, ACTIVE).to_vec()])
            .collect()
    }

    pub fn rewards_nested(&self) -> Vec<[f64; 2]> {
        (0..self.n_states).map(|s| [self.reward(s, 0), self.reward(s, 1)]).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Issue {
    pub severity: Severity,
    pub message: String,
}

/// Outcome of a validation pass; `ok` iff no issue is an error.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub ok: bool,
    pub issues: Vec<Issue>,
}

impl ValidationReport {
    fn from_issues(issues: Vec<Issue>) -> Self {
        let ok = issues.iter().all(|i| i.severity != Severity::Error);
        Self { ok, issues }
    }

    pub fn errors(&self) -> impl Iterator<Item = &Issue> {
        self.issues.iter().filter(|i| i.severity == Severity::Error)
    }

    pub fn warnings(&self) -> impl Iterator<Item = &Issue> {
        self.issues.iter().filter(|i| i.severity == Severity::Warning)
    }

    pub fn first_error(&self) -> Option<String> {
        self.errors().next().map(|i| i.message.clone())
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for issue in &self.issues {
            writeln!(f, "{:?}: {}", issue.severity, issue.message)?;
        }
        Ok(())
    }
}

fn error(issues: &mut Vec<Issue>, message: String) {
    issues.push(Issue { severity: Severity::Error, message });
}

/// Checks stochasticity, value ranges and the dummy-state equalities.
pub fn validate_arm(model: &ArmModel) -> ValidationReport {
    let mut issues = Vec::new();
    let n = model.n_states;
    for s in 0..n {
        for a in 0..2 {
            let row = model.row(s, a);
            if let Some(p) = row.iter().find(|p| !p.is_finite() || **p < 0.0 || **p > 1.0) {
                error(&mut issues, format!("P({s}, {a}, ·) has entry {p} outside [0, 1]"));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                error(&mut issues, format!("P({s}, {a}, ·): row sum {sum} ≠ 1"));
            }
            if !model.reward(s, a).is_finite() {
                error(&mut issues, format!("r({s}, {a}) is not finite"));
            }
        }
    }

    if let Some(dummy_of) = &model.dummy_of {
        let normal = model.n_normal();
        for (i, &origin) in dummy_of.iter().enumerate() {
            let sd = normal + i;
            if origin >= normal {
                error(&mut issues, format!("dummy state {sd} maps to non-normal state {origin}"));
                continue;
            }
            if model.row(sd, PASSIVE) != model.row(sd, ACTIVE) {
                error(&mut issues, format!("dummy state {sd}: action rows differ"));
            }
            let r0 = model.reward(origin, PASSIVE);
            if model.reward(sd, PASSIVE) != r0 || model.reward(sd, ACTIVE) != r0 {
                error(
                    &mut issues,
                    format!(
                        "dummy reward tie broken at {sd}: r(s_d,0)={}, r(s_d,1)={}, r(s,0)={r0}",
                        model.reward(sd, PASSIVE),
                        model.reward(sd, ACTIVE)
                    ),
                );
            }
            for a in 0..2 {
                if model.row(sd, a)[..normal].iter().any(|&p| p > 0.0) {
                    error(&mut issues, format!("dummy state {sd} leaks mass to normal states under action {a}"));
                }
            }
        }
    }

    for target in 0..n {
        let reachable = (0..n).filter(|&s| s != target).any(|s| (0..2).any(|a| model.p(s, a, target) > 0.0));
        if !reachable && n > 1 {
            issues.push(Issue {
                severity: Severity::Warning,
                message: format!("state {target} is unreachable from other states"),
            });
        }
    }
    ValidationReport::from_issues(issues)
}

/// Duplicates the state space so that pulled arms live in dummy states.
///
/// Dummy state of `s` is `s + |S|`. Normal states keep their passive kernel,
/// the active kernel is redirected onto the dummy copies of its targets, and
/// every dummy state follows the passive kernel (within the dummy block) under
/// both actions while paying the passive reward.
pub fn expand_with_dummies(model: &ArmModel) -> Result<ArmModel, ModelError> {
    if model.is_expanded() {
        return Err(ModelError::AlreadyExpanded(model.label.clone()));
    }
    let n = model.n_states;
    let m = 2 * n;
    let mut transitions = vec![0.0; 2 * m * m];
    let mut rewards = vec![0.0; 2 * m];
    let idx = |s: usize, a: usize, next: usize| (s * 2 + a) * m + next;
    for s in 0..n {
        let sd = s + n;
        for next in 0..n {
            let p0 = model.p(s, PASSIVE, next);
            transitions[idx(s, PASSIVE, next)] = p0;
            transitions[idx(s, ACTIVE, next + n)] = model.p(s, ACTIVE, next);
            transitions[idx(sd, PASSIVE, next + n)] = p0;
            transitions[idx(sd, ACTIVE, next + n)] = p0;
        }
        rewards[s * 2] = model.reward(s, PASSIVE);
        rewards[s * 2 + 1] = model.reward(s, ACTIVE);
        rewards[sd * 2] = model.reward(s, PASSIVE);
        rewards[sd * 2 + 1] = model.reward(s, PASSIVE);
    }
    Ok(ArmModel::from_flat(model.label.clone(), m, transitions, rewards, Some((0..n).collect())))
}

/// A population of `rho` arms for each of `N` types sharing a budget.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub types: Vec<ArmModel>,
    pub rho: usize,
    /// Per-class budget `K`; at most `K * rho` arms are activated per step.
    pub budget: usize,
    pub horizon: usize,
    /// Per-type initial distribution over normal states.
    pub initial: Vec<Vec<f64>>,
}

impl Instance {
    pub fn new(
        types: Vec<ArmModel>,
        rho: usize,
        budget: usize,
        horizon: usize,
        initial: Vec<Vec<f64>>,
    ) -> Result<Self, ModelError> {
        let instance = Self { types, rho, budget, horizon, initial };
        let report = instance.validate();
        if !report.ok {
            return Err(ModelError::InvalidInstance(report.first_error().unwrap_or_default()));
        }
        Ok(instance.with_renormalized_initial())
    }

    fn with_renormalized_initial(mut self) -> Self {
        for dist in &mut self.initial {
            let sum: f64 = dist.iter().sum();
            dist.iter_mut().for_each(|p| *p /= sum);
        }
        self
    }

    pub fn n_types(&self) -> usize {
        self.types.len()
    }

    pub fn n_arms(&self) -> usize {
        self.rho * self.types.len()
    }

    /// Arms that may be pulled in one step across the whole population.
    pub fn total_budget(&self) -> usize {
        self.budget * self.rho
    }

    pub fn validate(&self) -> ValidationReport {
        let mut issues = Vec::new();
        if self.types.is_empty() {
            error(&mut issues, "instance has no arm types".into());
        }
        if self.rho == 0 {
            error(&mut issues, "rho must be positive".into());
        }
        if self.horizon == 0 {
            error(&mut issues, "horizon must be positive".into());
        }
        if self.initial.len() != self.types.len() {
            error(
                &mut issues,
                format!("{} initial distributions for {} types", self.initial.len(), self.types.len()),
            );
        }
        for (n, (model, dist)) in self.types.iter().zip(&self.initial).enumerate() {
            for issue in validate_arm(model).issues {
                issues.push(Issue { severity: issue.severity, message: format!("type {n}: {}", issue.message) });
            }
            if dist.len() != model.n_normal() {
                error(
                    &mut issues,
                    format!("type {n}: initial distribution has {} entries, expected {}", dist.len(), model.n_normal()),
                );
                continue;
            }
            if dist.iter().any(|p| !p.is_finite() || *p < 0.0) {
                error(&mut issues, format!("type {n}: initial distribution has negative entries"));
            }
            let sum: f64 = dist.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                error(&mut issues, format!("type {n}: initial distribution sums to {sum}"));
            }
        }
        if self.total_budget() > self.n_arms() {
            issues.push(Issue {
                severity: Severity::Warning,
                message: format!(
                    "budget K*rho = {} exceeds the {} arms; the budget never binds",
                    self.total_budget(),
                    self.n_arms()
                ),
            });
        }
        ValidationReport::from_issues(issues)
    }

    /// Same instance with every type replaced by its dummy expansion.
    pub fn expanded_types(&self) -> Result<Vec<ArmModel>, ModelError> {
        self.types.iter().map(expand_with_dummies).collect()
    }

    /// Copy of this instance with a different replication factor.
    pub fn with_rho(&self, rho: usize) -> Self {
        Self { rho, ..self.clone() }
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        let file: InstanceFile = serde_json::from_str(text)?;
        file.into_instance()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&InstanceFile::from(self)).expect("instance serializes")
    }
}

/// On-disk form of one arm type.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArmFile {
    pub n_states: usize,
    /// `transitions[s][a][s']`.
    pub transitions: Vec<[Vec<f64>; 2]>,
    /// `rewards[s][a]`.
    pub rewards: Vec<[f64; 2]>,
    #[serde(default)]
    pub label: String,
}

/// On-disk form of an [`Instance`].
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceFile {
    pub types: Vec<ArmFile>,
    pub rho: usize,
    pub budget: usize,
    pub horizon: usize,
    pub initial: Vec<Vec<f64>>,
}

impl InstanceFile {
    pub fn into_instance(self) -> Result<Instance, ModelError> {
        let types = self
            .types
            .into_iter()
            .map(|t| {
                if t.transitions.len() != t.n_states {
                    return Err(ModelError::InvalidArm {
                        label: t.label.clone(),
                        message: format!("n_states = {} but {} transition rows", t.n_states, t.transitions.len()),
                    });
                }
                ArmModel::new(t.label, &t.transitions, &t.rewards)
            })
            .collect::<Result<Vec<_>, _>>()?;
        Instance::new(types, self.rho, self.budget, self.horizon, self.initial)
    }
}

impl From<&Instance> for InstanceFile {
    fn from(instance: &Instance) -> Self {
        Self {
            types: instance
                .types
                .iter()
                .map(|m| ArmFile {
                    n_states: m.n_states(),
                    transitions: m.transitions_nested(),
                    rewards: m.rewards_nested(),
                    label: m.label().to_string(),
                })
                .collect(),
            rho: instance.rho,
            budget: instance.budget,
            horizon: instance.horizon,
            initial: instance.initial.clone(),
        }
    }
}

/// One materialized arm.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ArmSlot {
    pub type_idx: usize,
    pub state: usize,
    pub pulled: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Population {
    pub arms: Vec<ArmSlot>,
}

/// Materializes `rho * N` arms with initial states drawn from the per-type
/// initial distributions. Arms are laid out type-major: arm `n * rho + j` is
/// the `j`-th copy of type `n`.
pub fn replicate(instance: &Instance, seed: u64) -> Population {
    let mut arms = Vec::with_capacity(instance.n_arms());
    for (n, dist) in instance.initial.iter().enumerate() {
        for j in 0..instance.rho {
            let id = (n * instance.rho + j) as u64;
            let u = rng::uniform(&[seed, id, u64::MAX]);
            arms.push(ArmSlot { type_idx: n, state: rng::sample_discrete(dist, u), pulled: false });
        }
    }
    Population { arms }
}
