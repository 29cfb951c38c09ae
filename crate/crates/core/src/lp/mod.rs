//! Occupancy-measure linear programs and an embedded simplex solver.
//!
//! Three relaxations of the single-pull problem are built here, all posed per
//! class (arms of one type share one normalized occupancy measure):
//!
//! * [`Variant::MeanField`] — budget only, over the original state space;
//! * [`Variant::SprmabLp`] — adds, per type, `Σ_t Σ_s μ(s, 1; t) ≤ 1`;
//! * [`Variant::Dummy`] — the dummy-expanded model, whose dynamics make the
//!   single-pull requirement structural.
//!
//! Their optima are ordered `Dummy ≤ SprmabLp ≤ MeanField`, and `ρ × Dummy`
//! bounds every feasible policy's expected total reward from above.

mod lu;
mod simplex;

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{expand_with_dummies, ArmModel, Instance, ModelError, ACTIVE, PASSIVE};
pub use lu::SparseCol;
use simplex::{SimplexOutcome, StandardLp};

#[derive(Debug, Error)]
pub enum LpError {
    #[error("simplex made no progress after {iterations} iterations")]
    SolverStall { iterations: usize },
    #[error("horizon must be positive")]
    ZeroHorizon,
    #[error("the dummy LP expects unexpanded types; type {0} already has dummy states")]
    AlreadyExpanded(usize),
    #[error("malformed LP: {0}")]
    Invalid(String),
    #[error("LP is {0:?}")]
    NotOptimal(LpStatus),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    MeanField,
    SprmabLp,
    Dummy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Relation {
    Le,
    Eq,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    pub name: String,
    pub coeffs: Vec<(usize, f64)>,
    pub relation: Relation,
    pub rhs: f64,
}

/// Column layout `(type, state, action, time) ↔ column`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VarIndex {
    offsets: Vec<usize>,
    n_states: Vec<usize>,
    horizon: usize,
}

impl VarIndex {
    pub fn new(n_states: Vec<usize>, horizon: usize) -> Self {
        let mut offsets = Vec::with_capacity(n_states.len());
        let mut acc = 0;
        for &s in &n_states {
            offsets.push(acc);
            acc += s * 2 * horizon;
        }
        offsets.push(acc);
        Self { offsets, n_states, horizon }
    }

    #[inline]
    pub fn col(&self, n: usize, s: usize, a: usize, t: usize) -> usize {
        self.offsets[n] + (t * self.n_states[n] + s) * 2 + a
    }

    /// Inverse of [`VarIndex::col`].
    pub fn key(&self, col: usize) -> (usize, usize, usize, usize) {
        let n = self.offsets.partition_point(|&o| o <= col) - 1;
        let local = col - self.offsets[n];
        let a = local % 2;
        let ts = local / 2;
        (n, ts % self.n_states[n], a, ts / self.n_states[n])
    }

    pub fn n_vars(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    pub fn n_types(&self) -> usize {
        self.n_states.len()
    }

    pub fn n_states(&self, n: usize) -> usize {
        self.n_states[n]
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }
}

/// `max objective·x` subject to `constraints` and `0 ≤ x ≤ upper`.
#[derive(Debug, Clone)]
pub struct LpProblem {
    pub variant: Option<Variant>,
    pub objective: Vec<f64>,
    pub constraints: Vec<Constraint>,
    /// Per-variable upper bounds; lower bounds are zero.
    pub upper: Vec<f64>,
    pub var_index: Option<VarIndex>,
    /// Optional starting basis: for each constraint, the variable to make
    /// basic in its row (`None` keeps the row's slack or artificial).
    pub start_basis: Option<Vec<Option<usize>>>,
}

impl LpProblem {
    /// A problem with `n_vars` nonnegative, unbounded variables.
    pub fn new(objective: Vec<f64>) -> Self {
        let n = objective.len();
        Self {
            variant: None,
            objective,
            constraints: Vec::new(),
            upper: vec![f64::INFINITY; n],
            var_index: None,
            start_basis: None,
        }
    }

    pub fn n_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn add(&mut self, name: impl Into<String>, coeffs: Vec<(usize, f64)>, relation: Relation, rhs: f64) {
        self.constraints.push(Constraint { name: name.into(), coeffs, relation, rhs });
    }

    fn check(&self) -> Result<(), LpError> {
        let n = self.n_vars();
        if self.upper.len() != n {
            return Err(LpError::Invalid(format!("{} bounds for {n} variables", self.upper.len())));
        }
        for c in &self.constraints {
            if let Some(&(j, _)) = c.coeffs.iter().find(|(j, _)| *j >= n) {
                return Err(LpError::Invalid(format!("row `{}` references column {j} of {n}", c.name)));
            }
            if !c.rhs.is_finite() || c.coeffs.iter().any(|(_, v)| !v.is_finite()) {
                return Err(LpError::Invalid(format!("row `{}` has non-finite data", c.name)));
            }
        }
        if let Some(start) = &self.start_basis {
            if start.len() != self.constraints.len() || start.iter().flatten().any(|&j| j >= n) {
                return Err(LpError::Invalid("starting basis does not match the rows".into()));
            }
        }
        if let Some(idx) = &self.var_index {
            if idx.n_vars() != n {
                return Err(LpError::Invalid("variable index does not cover the columns".into()));
            }
        }
        Ok(())
    }

    fn to_standard(&self) -> StandardLp {
        let n = self.n_vars();
        let mut cols = vec![SparseCol::default(); n];
        let mut rhs = Vec::new();
        let mut is_eq = Vec::new();
        for (i, c) in self.constraints.iter().enumerate() {
            for &(j, v) in &c.coeffs {
                if v != 0.0 {
                    cols[j].push(i, v);
                }
            }
            rhs.push(c.rhs);
            is_eq.push(c.relation == Relation::Eq);
        }
        for (j, &u) in self.upper.iter().enumerate() {
            if u.is_finite() {
                cols[j].push(rhs.len(), 1.0);
                rhs.push(u);
                is_eq.push(false);
            }
        }
        let start = self.start_basis.as_ref().map(|start| {
            let m = rhs.len();
            (0..m).map(|i| start.get(i).copied().flatten().unwrap_or(n + i)).collect()
        });
        StandardLp { n_rows: rhs.len(), cols, cost: self.objective.clone(), rhs, is_eq, start }
    }

    /// Writes the problem in CPLEX LP text format.
    pub fn to_lp_format(&self) -> String {
        let name = |j: usize| match &self.var_index {
            Some(idx) => {
                let (n, s, a, t) = idx.key(j);
                format!("mu_n{n}_s{s}_a{a}_t{t}")
            }
            None => format!("x{j}"),
        };
        let term = |out: &mut String, first: bool, v: f64, j: usize| {
            let sign = if v < 0.0 { "-" } else if first { "" } else { "+" };
            let _ = write!(out, " {sign} {} {}", v.abs(), name(j));
        };
        let mut out = String::from("\\ occupancy-measure LP\nMaximize\n obj:");
        let mut first = true;
        for (j, &c) in self.objective.iter().enumerate() {
            if c != 0.0 {
                term(&mut out, first, c, j);
                first = false;
            }
        }
        if first {
            out.push_str(" 0 x0");
        }
        out.push_str("\nSubject To\n");
        for c in &self.constraints {
            let _ = write!(out, " {}:", c.name);
            let mut first = true;
            for &(j, v) in &c.coeffs {
                term(&mut out, first, v, j);
                first = false;
            }
            if first {
                let _ = write!(out, " 0 {}", name(0));
            }
            let rel = match c.relation {
                Relation::Le => "<=",
                Relation::Eq => "=",
            };
            let _ = writeln!(out, " {rel} {}", c.rhs);
        }
        out.push_str("Bounds\n");
        for (j, &u) in self.upper.iter().enumerate() {
            if u.is_finite() {
                let _ = writeln!(out, " 0 <= {} <= {u}", name(j));
            }
        }
        out.push_str("End\n");
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub status: LpStatus,
    pub objective: f64,
    pub values: Vec<f64>,
    pub iterations: usize,
    pub var_index: Option<VarIndex>,
}

impl LpSolution {
    /// `μ_n(s, a; t)`; panics when the problem was not built from an instance.
    pub fn occupancy(&self, n: usize, s: usize, a: usize, t: usize) -> f64 {
        let idx = self.var_index.as_ref().expect("solution carries no occupancy layout");
        self.values[idx.col(n, s, a, t)]
    }

    pub fn is_optimal(&self) -> bool {
        self.status == LpStatus::Optimal
    }
}

/// Solves a problem; infeasibility and unboundedness are statuses, a stall is an error.
pub fn solve_lp(problem: &LpProblem) -> Result<LpSolution, LpError> {
    problem.check()?;
    let n = problem.n_vars();
    let standard = problem.to_standard();
    let (status, values, objective, iterations) = match simplex::solve(&standard) {
        SimplexOutcome::Optimal { x, objective, iterations } => (LpStatus::Optimal, x, objective, iterations),
        SimplexOutcome::Infeasible { iterations } => (LpStatus::Infeasible, vec![0.0; n], f64::NAN, iterations),
        SimplexOutcome::Unbounded { iterations } => (LpStatus::Unbounded, vec![0.0; n], f64::INFINITY, iterations),
        SimplexOutcome::Stall { iterations } => return Err(LpError::SolverStall { iterations }),
    };
    Ok(LpSolution { status, objective, values, iterations, var_index: problem.var_index.clone() })
}

/// Builds one of the three occupancy LPs with per-class normalization.
///
/// Rows are laid out as: `T` activation rows, then per type the initial rows
/// (`t = 0`) and flow rows (`t ≥ 1`) in time-major order, then (for
/// [`Variant::SprmabLp`]) one single-pull row per type.
pub fn build_occupancy_lp(instance: &Instance, variant: Variant) -> Result<LpProblem, LpError> {
    let horizon = instance.horizon;
    if horizon == 0 {
        return Err(LpError::ZeroHorizon);
    }
    let types = match variant {
        Variant::Dummy => {
            if let Some(n) = instance.types.iter().position(|m| m.is_expanded()) {
                return Err(LpError::AlreadyExpanded(n));
            }
            instance.types.iter().map(expand_with_dummies).collect::<Result<Vec<_>, _>>()?
        }
        _ => instance.types.clone(),
    };
    let idx = VarIndex::new(types.iter().map(|m| m.n_states()).collect(), horizon);
    let mut objective = vec![0.0; idx.n_vars()];
    for (n, m) in types.iter().enumerate() {
        for t in 0..horizon {
            for s in 0..m.n_states() {
                for a in 0..2 {
                    objective[idx.col(n, s, a, t)] = m.reward(s, a);
                }
            }
        }
    }
    let mut lp = LpProblem::new(objective);
    lp.variant = Some(variant);

    for t in 0..horizon {
        let coeffs = types
            .iter()
            .enumerate()
            .flat_map(|(n, m)| (0..m.n_states()).map(move |s| (n, s)))
            .map(|(n, s)| (idx.col(n, s, ACTIVE, t), 1.0))
            .collect();
        lp.add(format!("budget_t{t}"), coeffs, Relation::Le, instance.budget as f64);
    }

    let mut flow_rows: Vec<Vec<usize>> = Vec::with_capacity(types.len());
    for (n, m) in types.iter().enumerate() {
        let ns = m.n_states();
        flow_rows.push((lp.constraints.len()..lp.constraints.len() + ns * horizon).collect());
        for s in 0..ns {
            let mass = instance.initial[n].get(s).copied().unwrap_or(0.0);
            lp.add(
                format!("init_n{n}_s{s}"),
                vec![(idx.col(n, s, 0, 0), 1.0), (idx.col(n, s, 1, 0), 1.0)],
                Relation::Eq,
                mass,
            );
        }
        for t in 1..horizon {
            let mut inflow: Vec<Vec<(usize, f64)>> = vec![Vec::new(); ns];
            for s in 0..ns {
                for a in 0..2 {
                    for &(next, p) in m.support(s, a) {
                        inflow[next].push((idx.col(n, s, a, t - 1), -p));
                    }
                }
            }
            for (s, inflow) in inflow.into_iter().enumerate() {
                let mut coeffs = vec![(idx.col(n, s, 0, t), 1.0), (idx.col(n, s, 1, t), 1.0)];
                coeffs.extend(inflow);
                lp.add(format!("flow_n{n}_s{s}_t{t}"), coeffs, Relation::Eq, 0.0);
            }
        }
    }

    if variant == Variant::SprmabLp {
        for (n, m) in types.iter().enumerate() {
            let coeffs = (0..horizon)
                .flat_map(|t| (0..m.n_states()).map(move |s| (s, t)))
                .map(|(s, t)| (idx.col(n, s, ACTIVE, t), 1.0))
                .collect();
            lp.add(format!("single_pull_n{n}"), coeffs, Relation::Le, 1.0);
        }
    }
    if let Some(actions) = warm_start_actions(&types, instance, variant == Variant::SprmabLp) {
        let mut start = vec![None; lp.constraints.len()];
        for (n, m) in types.iter().enumerate() {
            for t in 0..horizon {
                for s in 0..m.n_states() {
                    start[flow_rows[n][t * m.n_states() + s]] = Some(idx.col(n, s, actions[n][t][s], t));
                }
            }
        }
        lp.start_basis = Some(start);
    }
    lp.var_index = Some(idx);
    Ok(lp)
}

/// Finite-horizon policy of one type maximizing reward plus a subsidy
/// `lambda` for every passive step; ties go to the passive action.
fn subsidized_policy(m: &ArmModel, horizon: usize, lambda: f64) -> Vec<Vec<usize>> {
    let ns = m.n_states();
    let mut v = vec![0.0; ns];
    let mut policy = vec![vec![PASSIVE; ns]; horizon];
    for t in (0..horizon).rev() {
        let next: Vec<f64> = (0..ns)
            .map(|s| {
                let q0 = m.reward(s, PASSIVE) + lambda + m.expect(s, PASSIVE, &v);
                let q1 = m.reward(s, ACTIVE) + m.expect(s, ACTIVE, &v);
                if q1 > q0 + 1e-12 * (1.0 + q0.abs()) {
                    policy[t][s] = ACTIVE;
                    q1
                } else {
                    q0
                }
            })
            .collect();
        v = next;
    }
    policy
}

/// A starting basis from per-type dynamic programming: the activation
/// decisions of the subsidized single-type problems, with the smallest
/// common subsidy that makes the expected activations respect every budget
/// row (and, for the single-pull LP, every single-pull row). When the
/// budget does not bind at zero subsidy this basis is already optimal.
/// Returns `None` if no subsidy yields a feasible start.
fn warm_start_actions(types: &[ArmModel], instance: &Instance, single_pull: bool) -> Option<Vec<Vec<Vec<usize>>>> {
    const SLACK: f64 = 1e-9;
    let horizon = instance.horizon;
    let budget = instance.budget as f64;
    let feasible = |policies: &[Vec<Vec<usize>>]| {
        let mut per_t = vec![0.0; horizon];
        for (n, (m, policy)) in types.iter().zip(policies).enumerate() {
            let mut mu: Vec<f64> = (0..m.n_states()).map(|s| instance.initial[n].get(s).copied().unwrap_or(0.0)).collect();
            let mut pulls = 0.0;
            for (t, acts) in policy.iter().enumerate() {
                let mut next = vec![0.0; mu.len()];
                for (s, &mass) in mu.iter().enumerate() {
                    if mass == 0.0 {
                        continue;
                    }
                    if acts[s] == ACTIVE {
                        per_t[t] += mass;
                        pulls += mass;
                    }
                    for &(s2, p) in m.support(s, acts[s]) {
                        next[s2] += mass * p;
                    }
                }
                mu = next;
            }
            if single_pull && pulls > 1.0 + SLACK {
                return false;
            }
        }
        per_t.iter().all(|&a| a <= budget + SLACK)
    };
    let solve = |lambda: f64| -> Vec<Vec<Vec<usize>>> { types.iter().map(|m| subsidized_policy(m, horizon, lambda)).collect() };

    let at_zero = solve(0.0);
    if feasible(&at_zero) {
        return Some(at_zero);
    }
    let span = types.iter().map(|m| m.reward_span()).fold(0.0, f64::max);
    let (mut lo, mut hi) = (0.0, (horizon as f64 + 1.0) * (span + 1.0));
    let mut best = solve(hi);
    if !feasible(&best) {
        return None;
    }
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        let candidate = solve(mid);
        if feasible(&candidate) {
            hi = mid;
            best = candidate;
        } else {
            lo = mid;
        }
    }
    Some(best)
}

/// Builds and solves an occupancy LP, requiring an optimal outcome.
pub fn solve_occupancy_lp(instance: &Instance, variant: Variant) -> Result<LpSolution, LpError> {
    let solution = solve_lp(&build_occupancy_lp(instance, variant)?)?;
    match solution.status {
        LpStatus::Optimal => Ok(solution),
        other => Err(LpError::NotOptimal(other)),
    }
}

/// Total-reward upper bound: `ρ ×` the dummy LP's per-class optimum.
pub fn upper_bound(instance: &Instance) -> Result<f64, LpError> {
    Ok(instance.rho as f64 * solve_occupancy_lp(instance, Variant::Dummy)?.objective)
}
