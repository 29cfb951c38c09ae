//! Index policies for the single-pull problem.
//!
//! Every policy sees the population in the dummy-expanded state space: an arm
//! whose state is at least its type's number of normal states has already been
//! pulled. Policies built on unexpanded models (original Whittle, mean-field,
//! random) look at the originating normal state together with the pulled flag.

mod meanfield;
mod select;
mod spi;
mod whittle;

use std::fmt;
use std::str::FromStr;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lp::{solve_occupancy_lp, LpError, Variant};
use crate::model::{Instance, ModelError};

pub use meanfield::{mean_field_select, MeanFieldTable, Priority};
pub use select::{greedy_budget_select, random_select};
pub use spi::{compute_chi, spi_indices, spi_select, ActivationProbabilities};
pub use whittle::{
    finite_gap, infinite_gap, q_difference_indices, relative_value_iteration, whittle_finite_detailed, whittle_index_finite, whittle_index_infinite,
    whittle_infinite_detailed, WhittleComputation, WhittleError, DEFAULT_INDEX_TOL,
};

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error(transparent)]
    Lp(#[from] LpError),
    #[error(transparent)]
    Whittle(#[from] WhittleError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("unknown policy `{0}`")]
    Unknown(String),
}

/// Index values per `(type, state, time)`.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexTable {
    /// `values[n][t * n_states[n] + s]`; stationary tables store a single `t`.
    values: Vec<Vec<f64>>,
    n_states: Vec<usize>,
    /// Normal-state count per type when the table is over an expanded space.
    n_normal: Vec<usize>,
    horizon: usize,
    time_dependent: bool,
}

impl IndexTable {
    /// Time-dependent table from `values[n][t][s]`.
    pub fn time_dependent(values: Vec<Vec<Vec<f64>>>, n_normal: Vec<usize>) -> Self {
        let horizon = values.first().map_or(0, |v| v.len());
        let n_states = values.iter().map(|v| v.first().map_or(0, |r| r.len())).collect();
        let values = values.into_iter().map(|v| v.concat()).collect();
        Self { values, n_states, n_normal, horizon, time_dependent: true }
    }

    /// Stationary table from `values[n][s]`.
    pub fn stationary(values: Vec<Vec<f64>>, n_normal: Vec<usize>) -> Self {
        let n_states = values.iter().map(|v| v.len()).collect();
        Self { values, n_states, n_normal, horizon: 1, time_dependent: false }
    }

    /// Stacks single-type tables (all stationary or all time-dependent).
    pub fn concat(tables: Vec<IndexTable>) -> Self {
        let time_dependent = tables.first().is_some_and(|t| t.time_dependent);
        debug_assert!(tables.iter().all(|t| t.time_dependent == time_dependent));
        let horizon = tables.iter().map(|t| t.horizon).max().unwrap_or(1);
        let mut out = Self { values: Vec::new(), n_states: Vec::new(), n_normal: Vec::new(), horizon, time_dependent };
        for t in tables {
            out.values.extend(t.values);
            out.n_states.extend(t.n_states);
            out.n_normal.extend(t.n_normal);
        }
        out
    }

    #[inline]
    pub fn get(&self, n: usize, s: usize, t: usize) -> f64 {
        let t = if self.time_dependent { t } else { 0 };
        self.values[n][t * self.n_states[n] + s]
    }

    pub fn is_time_dependent(&self) -> bool {
        self.time_dependent
    }

    pub fn n_types(&self) -> usize {
        self.values.len()
    }

    pub fn n_states(&self, n: usize) -> usize {
        self.n_states[n]
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    #[inline]
    pub fn is_dummy(&self, n: usize, s: usize) -> bool {
        s >= self.n_normal[n]
    }
}

/// One arm as seen by a selector: its type and its expanded-space state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ArmState {
    pub type_idx: usize,
    pub state: usize,
}

/// Everything a policy may look at when choosing actions at time `t`.
#[derive(Debug, Clone, Copy)]
pub struct SelectionContext<'a> {
    pub arms: &'a [ArmState],
    /// Normal-state count of each type.
    pub n_normal: &'a [usize],
    pub t: usize,
    /// Total number of arms that may be activated (`K·ρ`).
    pub budget: usize,
}

impl SelectionContext<'_> {
    #[inline]
    pub fn is_pulled(&self, i: usize) -> bool {
        let a = self.arms[i];
        a.state >= self.n_normal[a.type_idx]
    }

    /// `(type, originating normal state)` of arm `i`.
    #[inline]
    pub fn origin(&self, i: usize) -> (usize, usize) {
        let a = self.arms[i];
        let normal = self.n_normal[a.type_idx];
        (a.type_idx, if a.state >= normal { a.state - normal } else { a.state })
    }

    pub fn pulled_mask(&self) -> Vec<bool> {
        (0..self.arms.len()).map(|i| self.is_pulled(i)).collect()
    }

    pub fn expanded_states(&self) -> Vec<(usize, usize)> {
        self.arms.iter().map(|a| (a.type_idx, a.state)).collect()
    }

    pub fn origin_states(&self) -> Vec<(usize, usize)> {
        (0..self.arms.len()).map(|i| self.origin(i)).collect()
    }
}

pub trait Policy: Send + Sync {
    fn kind(&self) -> PolicyKind;

    /// 0/1 action per arm.
    fn select(&self, ctx: &SelectionContext<'_>, rng: &mut dyn RngCore) -> Vec<bool>;

    /// Exact distribution over action vectors; deterministic policies return
    /// their single choice with probability one.
    fn action_distribution(&self, ctx: &SelectionContext<'_>) -> Vec<(f64, Vec<bool>)> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        vec![(1.0, self.select(ctx, &mut rng))]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyKind {
    Spi,
    #[serde(rename = "meanfield")]
    MeanField,
    WhittleOriginal,
    WhittleInfinite,
    WhittleFinite,
    #[serde(rename = "qdiff")]
    QDiff,
    Random,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 7] = [
        PolicyKind::Spi,
        PolicyKind::MeanField,
        PolicyKind::WhittleOriginal,
        PolicyKind::WhittleInfinite,
        PolicyKind::WhittleFinite,
        PolicyKind::QDiff,
        PolicyKind::Random,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::Spi => "spi",
            PolicyKind::MeanField => "meanfield",
            PolicyKind::WhittleOriginal => "whittle-original",
            PolicyKind::WhittleInfinite => "whittle-infinite",
            PolicyKind::WhittleFinite => "whittle-finite",
            PolicyKind::QDiff => "qdiff",
            PolicyKind::Random => "random",
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PolicyKind {
    type Err = PolicyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PolicyKind::ALL.into_iter().find(|k| k.name() == s).ok_or_else(|| PolicyError::Unknown(s.to_string()))
    }
}

/// Knobs that alter policy construction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyOptions {
    /// Stop the single-pull index walk at the first index ≤ 0.
    pub spi_cutoff: bool,
    /// Bisection tolerance for Whittle indices.
    pub index_tol: f64,
}

impl Default for PolicyOptions {
    fn default() -> Self {
        Self { spi_cutoff: true, index_tol: DEFAULT_INDEX_TOL }
    }
}

/// The single-pull index policy.
#[derive(Debug, Clone)]
pub struct SpiPolicy {
    pub indices: IndexTable,
    pub cutoff: bool,
}

impl Policy for SpiPolicy {
    fn kind(&self) -> PolicyKind {
        PolicyKind::Spi
    }

    fn select(&self, ctx: &SelectionContext<'_>, _rng: &mut dyn RngCore) -> Vec<bool> {
        spi_select(&self.indices, &ctx.expanded_states(), ctx.t, ctx.budget, self.cutoff)
    }
}

#[derive(Debug, Clone)]
pub struct MeanFieldPolicy {
    pub table: MeanFieldTable,
}

impl Policy for MeanFieldPolicy {
    fn kind(&self) -> PolicyKind {
        PolicyKind::MeanField
    }

    fn select(&self, ctx: &SelectionContext<'_>, _rng: &mut dyn RngCore) -> Vec<bool> {
        mean_field_select(&self.table, &ctx.origin_states(), ctx.t, ctx.budget, &ctx.pulled_mask())
    }
}

/// Greedy top-budget policy over an index table (Whittle variants, Q-difference).
#[derive(Debug, Clone)]
pub struct GreedyIndexPolicy {
    pub kind: PolicyKind,
    pub indices: IndexTable,
    /// Whether `indices` is over the expanded state space.
    pub expanded: bool,
}

impl Policy for GreedyIndexPolicy {
    fn kind(&self) -> PolicyKind {
        self.kind
    }

    fn select(&self, ctx: &SelectionContext<'_>, _rng: &mut dyn RngCore) -> Vec<bool> {
        let states = if self.expanded { ctx.expanded_states() } else { ctx.origin_states() };
        greedy_budget_select(&self.indices, &states, ctx.t, ctx.budget, &ctx.pulled_mask())
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RandomPolicy;

impl Policy for RandomPolicy {
    fn kind(&self) -> PolicyKind {
        PolicyKind::Random
    }

    fn select(&self, ctx: &SelectionContext<'_>, rng: &mut dyn RngCore) -> Vec<bool> {
        random_select(&ctx.origin_states(), ctx.t, ctx.budget, &ctx.pulled_mask(), rng)
    }

    fn action_distribution(&self, ctx: &SelectionContext<'_>) -> Vec<(f64, Vec<bool>)> {
        let free: Vec<usize> = (0..ctx.arms.len()).filter(|&i| !ctx.is_pulled(i)).collect();
        let k = ctx.budget.min(free.len());
        let mut subsets = Vec::new();
        let mut chosen = Vec::with_capacity(k);
        fn rec(free: &[usize], k: usize, start: usize, chosen: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
            if chosen.len() == k {
                out.push(chosen.clone());
                return;
            }
            for i in start..free.len() {
                chosen.push(free[i]);
                rec(free, k, i + 1, chosen, out);
                chosen.pop();
            }
        }
        rec(&free, k, 0, &mut chosen, &mut subsets);
        let p = 1.0 / subsets.len() as f64;
        subsets
            .into_iter()
            .map(|subset| {
                let mut actions = vec![false; ctx.arms.len()];
                for i in subset {
                    actions[i] = true;
                }
                (p, actions)
            })
            .collect()
    }
}

/// Runs a policy's precomputation (LP solve or index tables) for an instance.
pub fn prepare(kind: PolicyKind, instance: &Instance, options: &PolicyOptions) -> Result<Box<dyn Policy>, PolicyError> {
    Ok(match kind {
        PolicyKind::Spi => {
            let solution = solve_occupancy_lp(instance, Variant::Dummy)?;
            let expanded = instance.expanded_types()?;
            let chi = compute_chi(&solution);
            Box::new(SpiPolicy { indices: spi_indices(&chi, &expanded), cutoff: options.spi_cutoff })
        }
        PolicyKind::MeanField => {
            let solution = solve_occupancy_lp(instance, Variant::MeanField)?;
            Box::new(MeanFieldPolicy { table: MeanFieldTable::from_solution(&solution) })
        }
        PolicyKind::WhittleOriginal => {
            let tables = instance
                .types
                .iter()
                .map(|m| whittle_index_infinite(m, options.index_tol))
                .collect::<Result<Vec<_>, _>>()?;
            Box::new(GreedyIndexPolicy { kind, indices: IndexTable::concat(tables), expanded: false })
        }
        PolicyKind::WhittleInfinite => {
            let tables = instance
                .expanded_types()?
                .iter()
                .map(|m| whittle_index_infinite(m, options.index_tol))
                .collect::<Result<Vec<_>, _>>()?;
            Box::new(GreedyIndexPolicy { kind, indices: IndexTable::concat(tables), expanded: true })
        }
        PolicyKind::WhittleFinite => {
            let tables = instance
                .expanded_types()?
                .iter()
                .map(|m| whittle_index_finite(m, instance.horizon, options.index_tol))
                .collect::<Result<Vec<_>, _>>()?;
            Box::new(GreedyIndexPolicy { kind, indices: IndexTable::concat(tables), expanded: true })
        }
        PolicyKind::QDiff => {
            let tables =
                instance.expanded_types()?.iter().map(|m| q_difference_indices(m, instance.horizon)).collect();
            Box::new(GreedyIndexPolicy { kind, indices: IndexTable::concat(tables), expanded: true })
        }
        PolicyKind::Random => Box::new(RandomPolicy),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn policy_names_round_trip() {
        for kind in PolicyKind::ALL {
            assert_eq!(kind.name().parse::<PolicyKind>().unwrap(), kind);
            let json = serde_json::to_string(&kind).unwrap();
            assert_eq!(json, format!("\"{}\"", kind.name()));
        }
        assert!("whittle".parse::<PolicyKind>().is_err());
    }

    #[test]
    fn stationary_table_ignores_time() {
        let t = IndexTable::stationary(vec![vec![1.0, 2.0]], vec![2]);
        assert_eq!(t.get(0, 1, 0), t.get(0, 1, 7));
        assert!(!t.is_time_dependent());
    }

    #[test]
    fn random_distribution_is_uniform_over_subsets() {
        let arms = [ArmState { type_idx: 0, state: 0 }, ArmState { type_idx: 0, state: 2 }, ArmState { type_idx: 0, state: 1 }, ArmState { type_idx: 0, state: 0 }];
        let ctx = SelectionContext { arms: &arms, n_normal: &[2], t: 0, budget: 2 };
        let dist = RandomPolicy.action_distribution(&ctx);
        // arm 1 is pulled: choose 2 of the 3 others
        assert_eq!(dist.len(), 3);
        assert!(dist.iter().all(|(p, a)| (*p - 1.0 / 3.0).abs() < 1e-15 && !a[1] && a.iter().filter(|x| **x).count() == 2));
    }
}
