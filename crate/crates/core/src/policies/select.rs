//! Budgeted selectors shared by the index baselines.

use rand::RngCore;

use super::IndexTable;

/// Pulls up to `budget` non-pulled arms with the largest indices; ties go to
/// the lower arm id. Arms sitting in dummy states are never candidates.
pub fn greedy_budget_select(
    indices: &IndexTable,
    states: &[(usize, usize)],
    t: usize,
    budget: usize,
    pulled: &[bool],
) -> Vec<bool> {
    let mut candidates: Vec<(f64, usize)> = states
        .iter()
        .enumerate()
        .filter(|&(i, &(n, s))| !pulled[i] && !indices.is_dummy(n, s))
        .map(|(i, &(n, s))| (indices.get(n, s, t), i))
        .collect();
    let mut actions = vec![false; states.len()];
    let k = budget.min(candidates.len());
    if k == 0 {
        return actions;
    }
    let cmp = |a: &(f64, usize), b: &(f64, usize)| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1));
    if k < candidates.len() {
        candidates.select_nth_unstable_by(k - 1, cmp);
    }
    for &(_, i) in &candidates[..k] {
        actions[i] = true;
    }
    actions
}

/// Pulls `min(budget, #non-pulled)` distinct non-pulled arms uniformly at random.
pub fn random_select(
    states: &[(usize, usize)],
    _t: usize,
    budget: usize,
    pulled: &[bool],
    rng: &mut dyn RngCore,
) -> Vec<bool> {
    let free: Vec<usize> = (0..states.len()).filter(|&i| !pulled[i]).collect();
    let k = budget.min(free.len());
    let mut actions = vec![false; states.len()];
    for j in rand::seq::index::sample(rng, free.len(), k) {
        actions[free[j]] = true;
    }
    actions
}
