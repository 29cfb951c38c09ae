//! The single-pull index: `χ(s, t) · r(s, 1)` from the dummy LP's occupancy.

use crate::lp::LpSolution;
use crate::model::{ArmModel, ACTIVE, PASSIVE};

use super::IndexTable;

/// Below this total occupancy a state is treated as unvisited.
const ZERO_MASS: f64 = 1e-12;

/// `χ_n(s, t)` — the LP's probability of activating in `(s, t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationProbabilities {
    /// `chi[n][t][s]`.
    pub chi: Vec<Vec<Vec<f64>>>,
}

impl ActivationProbabilities {
    pub fn get(&self, n: usize, s: usize, t: usize) -> f64 {
        self.chi[n][t][s]
    }
}

/// Ratio of active to total occupancy; zero where the state carries no mass.
pub fn chi_ratio(mu0: f64, mu1: f64) -> f64 {
    let (mu0, mu1) = (mu0.max(0.0), mu1.max(0.0));
    let total = mu0 + mu1;
    if total < ZERO_MASS {
        0.0
    } else {
        (mu1 / total).clamp(0.0, 1.0)
    }
}

pub fn compute_chi(solution: &LpSolution) -> ActivationProbabilities {
    let idx = solution.var_index.as_ref().expect("occupancy LP solution");
    let chi = (0..idx.n_types())
        .map(|n| {
            (0..idx.horizon())
                .map(|t| {
                    (0..idx.n_states(n))
                        .map(|s| chi_ratio(solution.occupancy(n, s, PASSIVE, t), solution.occupancy(n, s, ACTIVE, t)))
                        .collect()
                })
                .collect()
        })
        .collect();
    ActivationProbabilities { chi }
}

/// `index(n, s, t) = χ_n(s, t) · r_n(s, 1)` over the expanded models' states.
pub fn spi_indices(chi: &ActivationProbabilities, types: &[ArmModel]) -> IndexTable {
    let values = chi
        .chi
        .iter()
        .zip(types)
        .map(|(per_t, m)| per_t.iter().map(|row| row.iter().enumerate().map(|(s, c)| c * m.reward(s, ACTIVE)).collect()).collect())
        .collect();
    IndexTable::time_dependent(values, types.iter().map(|m| m.n_normal()).collect())
}

/// Walks arms by descending index (ties to the lower arm id); each visited arm
/// uses one unit of budget, but only arms outside dummy states are pulled.
/// With `cutoff`, the walk stops at the first index ≤ 0.
pub fn spi_select(indices: &IndexTable, states: &[(usize, usize)], t: usize, budget: usize, cutoff: bool) -> Vec<bool> {
    let mut actions = vec![false; states.len()];
    if budget == 0 {
        return actions;
    }
    let mut order: Vec<(f64, usize)> = states.iter().enumerate().map(|(i, &(n, s))| (indices.get(n, s, t), i)).collect();
    order.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut remaining = budget;
    for (value, i) in order {
        if remaining == 0 || (cutoff && value <= 0.0) {
            break;
        }
        remaining -= 1;
        let (n, s) = states[i];
        if !indices.is_dummy(n, s) {
            actions[i] = true;
        }
    }
    actions
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(values: Vec<f64>, n_normal: usize) -> IndexTable {
        IndexTable::time_dependent(vec![vec![values]], vec![n_normal])
    }

    #[test]
    fn chi_examples() {
        assert_eq!(chi_ratio(0.6, 0.2), 0.25);
        assert_eq!(chi_ratio(0.0, 0.0), 0.0);
        assert_eq!(chi_ratio(0.0, 0.5), 1.0);
        assert_eq!(chi_ratio(1e-14, 1e-14), 0.0);
    }

    #[test]
    fn index_is_chi_times_active_reward() {
        let m = crate::model::expand_with_dummies(
            &ArmModel::new(
                "m",
                &[[vec![1.0, 0.0], vec![0.0, 1.0]], [vec![0.0, 1.0], vec![1.0, 0.0]]],
                &[[1.0, 2.0], [0.0, 4.0]],
            )
            .unwrap(),
        )
        .unwrap();
        let chi = ActivationProbabilities { chi: vec![vec![vec![0.25, 0.0, 0.3, 0.5]]] };
        let t = spi_indices(&chi, &[m]);
        assert_eq!(t.get(0, 0, 0), 0.5);
        assert_eq!(t.get(0, 1, 0), 0.0);
        // dummy of state 0 pays r(0, 0) = 1 under action 1
        assert!((t.get(0, 2, 0) - 0.3).abs() < 1e-15);
        assert_eq!(t.get(0, 3, 0), 0.0);
    }

    #[test]
    fn dummy_arm_consumes_budget_without_a_pull() {
        // states: arm 0 in dummy state 2, arms 1 and 2 in normal states
        let t = table(vec![0.8, 0.1, 0.9, 0.0], 2);
        let actions = spi_select(&t, &[(0, 2), (0, 0), (0, 1)], 0, 1, true);
        assert_eq!(actions, vec![false, false, false]);
    }

    #[test]
    fn both_positive_normal_arms_pulled() {
        let t = table(vec![0.8, 0.5], 2);
        assert_eq!(spi_select(&t, &[(0, 0), (0, 1)], 0, 2, true), vec![true, true]);
    }

    #[test]
    fn zero_indices_leave_budget_unspent() {
        let t = table(vec![0.0, 0.0], 2);
        assert_eq!(spi_select(&t, &[(0, 0), (0, 1), (0, 0)], 0, 5, true), vec![false; 3]);
        // without the cutoff, zero-index arms are visited and pulled
        assert_eq!(spi_select(&t, &[(0, 0), (0, 1), (0, 0)], 0, 5, false), vec![true; 3]);
    }

    #[test]
    fn ties_go_to_the_lower_arm_id() {
        let t = table(vec![0.5, 0.5], 2);
        assert_eq!(spi_select(&t, &[(0, 1), (0, 0)], 0, 1, true), vec![true, false]);
    }
}
