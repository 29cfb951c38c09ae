//! Three-tier priority policy derived from the mean-field (budget-only) LP.

use crate::lp::LpSolution;
use crate::model::{ACTIVE, PASSIVE};

use super::spi::chi_ratio;

/// Occupancy of action 0 below this counts as zero.
const PASSIVE_ZERO: f64 = 1e-9;
/// Occupancy of action 1 above this counts as positive.
const ACTIVE_POSITIVE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Priority {
    /// `μ(s,0;t) = 0 < μ(s,1;t)`: always pull.
    High,
    /// Both actions carry mass: pull by descending `χ`.
    Medium,
    /// `μ(s,1;t) = 0` (including unvisited states): never pull.
    Low,
}

/// Mean-field occupancies per `(type, time, state)` over the original states.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanFieldTable {
    /// `mu[n][t][s] = (μ(s,0;t), μ(s,1;t))`.
    pub mu: Vec<Vec<Vec<(f64, f64)>>>,
}

impl MeanFieldTable {
    pub fn from_solution(solution: &LpSolution) -> Self {
        let idx = solution.var_index.as_ref().expect("occupancy LP solution");
        let mu = (0..idx.n_types())
            .map(|n| {
                (0..idx.horizon())
                    .map(|t| {
                        (0..idx.n_states(n))
                            .map(|s| (solution.occupancy(n, s, PASSIVE, t), solution.occupancy(n, s, ACTIVE, t)))
                            .collect()
                    })
                    .collect()
            })
            .collect();
        Self { mu }
    }

    pub fn priority(&self, n: usize, s: usize, t: usize) -> Priority {
        let (mu0, mu1) = self.mu[n][t][s];
        if mu1 <= ACTIVE_POSITIVE {
            Priority::Low
        } else if mu0 < PASSIVE_ZERO {
            Priority::High
        } else {
            Priority::Medium
        }
    }

    pub fn chi(&self, n: usize, s: usize, t: usize) -> f64 {
        let (mu0, mu1) = self.mu[n][t][s];
        chi_ratio(mu0, mu1)
    }
}

/// Pulls non-pulled arms in high-priority states first, then fills the
/// remaining budget from medium-priority states by descending `χ`; ties go to
/// the lower arm id. Low-priority arms are never pulled.
pub fn mean_field_select(
    table: &MeanFieldTable,
    states: &[(usize, usize)],
    t: usize,
    budget: usize,
    pulled: &[bool],
) -> Vec<bool> {
    let mut candidates: Vec<(Priority, f64, usize)> = states
        .iter()
        .enumerate()
        .filter(|&(i, _)| !pulled[i])
        .filter_map(|(i, &(n, s))| match table.priority(n, s, t) {
            Priority::Low => None,
            p => Some((p, table.chi(n, s, t), i)),
        })
        .collect();
    candidates.sort_by(|a, b| a.0.cmp(&b.0).then(b.1.total_cmp(&a.1)).then(a.2.cmp(&b.2)));
    let mut actions = vec![false; states.len()];
    for &(_, _, i) in candidates.iter().take(budget) {
        actions[i] = true;
    }
    actions
}
