//! Whittle-type indices: infinite-horizon (relative value iteration),
//! finite-horizon (backward induction) and the Q-difference heuristic.
//!
//! An index is the passive subsidy `λ` at which both actions are equally
//! attractive in a state. With subsidy `λ` paid for every passive step, the
//! gap `f(λ) = Q(s,1) − Q(s,0)` is non-increasing in `λ`; its zero is located
//! by bisection after bracketing.

use thiserror::Error;

use crate::model::{ArmModel, ACTIVE, PASSIVE};

use super::IndexTable;

pub const DEFAULT_INDEX_TOL: f64 = 1e-6;
const MAX_BISECTIONS: usize = 60;
const MAX_EXPANSIONS: usize = 64;
const MAX_SWEEPS: usize = 100_000;
const SPAN_TOL: f64 = 1e-9;
const MAX_POLICY_ITERATIONS: usize = 1_000;
/// Aperiodicity transform weight: `h ← (1 − τ) h + τ T h`.
const APERIODICITY: f64 = 0.5;
/// Allowed numerical wiggle when checking that `f` is non-increasing.
const MONOTONE_SLACK: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WhittleError {
    #[error("relative value iteration did not converge for λ = {lambda} after {sweeps} sweeps (span {span:e})")]
    NonConvergent { lambda: f64, sweeps: usize, span: f64 },
    #[error("no index crossing for state {state}: {reason}")]
    BracketFail { state: usize, reason: String },
}

/// Diagnostics of one index search.
#[derive(Debug, Clone, PartialEq)]
pub struct WhittleComputation {
    pub state: usize,
    /// Decision epoch for finite-horizon indices.
    pub t: Option<usize>,
    pub index: f64,
    pub initial_bracket: (f64, f64),
    pub final_bracket: (f64, f64),
    /// `(λ, Q(s,1) − Q(s,0), gain)` for every evaluation; the gain is `NaN`
    /// for finite-horizon evaluations.
    pub evaluations: Vec<(f64, f64, f64)>,
    /// Total value-iteration sweeps spent.
    pub sweeps: usize,
    /// `Q(s,1) − Q(s,0)` at the returned index.
    pub residual: f64,
    /// Relative value function at the returned index (infinite horizon only).
    pub bias: Vec<f64>,
}

fn initial_bracket(model: &ArmModel) -> (f64, f64) {
    let span = model.reward_span();
    let w = if span > 0.0 { 2.0 * span } else { 2.0 };
    (-w, w)
}

/// Bisection on a non-increasing `f`, with bracket doubling and a monotonicity audit.
fn bisect<F>(state: usize, mut bracket: (f64, f64), tol: f64, mut f: F) -> Result<(f64, f64, (f64, f64), Vec<(f64, f64)>), WhittleError>
where
    F: FnMut(f64) -> Result<f64, WhittleError>,
{
    let mut evals: Vec<(f64, f64)> = Vec::new();
    let mut eval = |x: f64, evals: &mut Vec<(f64, f64)>| -> Result<f64, WhittleError> {
        let v = f(x)?;
        evals.push((x, v));
        Ok(v)
    };
    let fail = |reason: String| WhittleError::BracketFail { state, reason };

    let (mut lo, mut hi) = bracket;
    let mut f_lo = eval(lo, &mut evals)?;
    let mut f_hi = eval(hi, &mut evals)?;
    if f_lo < f_hi - MONOTONE_SLACK {
        return Err(fail(format!("f({lo}) = {f_lo} < f({hi}) = {f_hi}")));
    }
    let mut expansions = 0;
    while f_lo < 0.0 {
        if expansions == MAX_EXPANSIONS {
            return Err(fail(format!("gap stays negative down to λ = {lo}")));
        }
        expansions += 1;
        (hi, f_hi) = (lo, f_lo);
        lo *= 2.0;
        f_lo = eval(lo, &mut evals)?;
        if f_lo < f_hi - MONOTONE_SLACK {
            return Err(fail(format!("gap increases in λ near {lo}")));
        }
    }
    while f_hi > 0.0 {
        if expansions == MAX_EXPANSIONS {
            return Err(fail(format!("gap stays positive up to λ = {hi}")));
        }
        expansions += 1;
        (lo, f_lo) = (hi, f_hi);
        hi *= 2.0;
        f_hi = eval(hi, &mut evals)?;
        if f_hi > f_lo + MONOTONE_SLACK {
            return Err(fail(format!("gap increases in λ near {hi}")));
        }
    }
    bracket = (lo, hi);

    let (mut best, mut best_f) = if f_lo.abs() <= f_hi.abs() { (lo, f_lo) } else { (hi, f_hi) };
    if best_f == 0.0 {
        return Ok((best, best_f, (lo, hi), evals));
    }
    for _ in 0..MAX_BISECTIONS {
        let mid = 0.5 * (lo + hi);
        let f_mid = eval(mid, &mut evals)?;
        if f_mid > f_lo + MONOTONE_SLACK || f_mid < f_hi - MONOTONE_SLACK {
            return Err(fail(format!(
                "gap not monotone on [{lo}, {hi}]: f = ({f_lo}, {f_mid}, {f_hi}) (bracket started at {bracket:?})"
            )));
        }
        if f_mid.abs() < best_f.abs() || (f_mid.abs() == best_f.abs() && (mid - 0.5 * (lo + hi)).abs() < (best - 0.5 * (lo + hi)).abs()) {
            best = mid;
            best_f = f_mid;
        }
        if f_mid > 0.0 {
            (lo, f_lo) = (mid, f_mid);
        } else {
            (hi, f_hi) = (mid, f_mid);
        }
        if hi - lo <= tol && best_f.abs() <= tol {
            break;
        }
    }
    Ok((best, best_f, (lo, hi), evals))
}

/// One Bellman sweep value for state `s` with subsidy `lambda`.
#[inline]
fn q_values(model: &ArmModel, s: usize, lambda: f64, h: &[f64]) -> (f64, f64) {
    (
        model.reward(s, PASSIVE) + lambda + model.expect(s, PASSIVE, h),
        model.reward(s, ACTIVE) + model.expect(s, ACTIVE, h),
    )
}

/// Relative value iteration for the subsidized average-reward problem.
///
/// `h` is used as the warm start and holds the relative values (reference
/// state 0) on return. Returns `(gain, sweeps)`.
pub fn relative_value_iteration(model: &ArmModel, lambda: f64, h: &mut Vec<f64>) -> Result<(f64, usize), WhittleError> {
    let n = model.n_states();
    h.resize(n, 0.0);
    let mut next = vec![0.0; n];
    let mut span = f64::INFINITY;
    for sweep in 1..=MAX_SWEEPS {
        let (mut dmin, mut dmax) = (f64::INFINITY, f64::NEG_INFINITY);
        for s in 0..n {
            let (q0, q1) = q_values(model, s, lambda, h);
            let v = (1.0 - APERIODICITY) * h[s] + APERIODICITY * q0.max(q1);
            let d = v - h[s];
            dmin = dmin.min(d);
            dmax = dmax.max(d);
            next[s] = v;
        }
        let reference = next[0];
        for (hs, v) in h.iter_mut().zip(&next) {
            *hs = v - reference;
        }
        span = dmax - dmin;
        if span < SPAN_TOL {
            return Ok((0.5 * (dmin + dmax) / APERIODICITY, sweep));
        }
    }
    // Slowly mixing chains can exhaust the sweep budget; finish exactly with
    // policy iteration started from the current greedy policy.
    policy_iteration(model, lambda, h)
        .map(|gain| (gain, MAX_SWEEPS))
        .ok_or(WhittleError::NonConvergent { lambda, sweeps: MAX_SWEEPS, span })
}

/// Howard policy iteration for the subsidized average-reward problem under
/// the unichain assumption. Starts from the greedy policy of `h` and writes
/// the exact relative values (reference state 0) back into `h`. Returns
/// `None` when a policy's evaluation system is singular (multichain).
fn policy_iteration(model: &ArmModel, lambda: f64, h: &mut [f64]) -> Option<f64> {
    let n = model.n_states();
    let greedy = |h: &[f64], s: usize, current: Option<usize>| {
        let (q0, q1) = q_values(model, s, lambda, h);
        let margin = 1e-12 * (1.0 + q0.abs().max(q1.abs()));
        match current {
            Some(ACTIVE) if q1 >= q0 - margin => ACTIVE,
            Some(PASSIVE) if q0 >= q1 - margin => PASSIVE,
            _ if q1 > q0 => ACTIVE,
            _ => PASSIVE,
        }
    };
    let mut policy: Vec<usize> = (0..n).map(|s| greedy(h, s, None)).collect();
    for _ in 0..MAX_POLICY_ITERATIONS {
        // unknowns: gain in slot 0 (h(0) = 0 is fixed), h(s) in slot s ≥ 1
        let mut a = vec![vec![0.0; n]; n];
        let mut b = vec![0.0; n];
        for s in 0..n {
            let act = policy[s];
            b[s] = model.reward(s, act) + if act == PASSIVE { lambda } else { 0.0 };
            a[s][0] = 1.0;
            if s > 0 {
                a[s][s] += 1.0;
            }
            for &(next, p) in model.support(s, act) {
                if next > 0 {
                    a[s][next] -= p;
                }
            }
        }
        let x = solve_dense(a, b)?;
        let gain = x[0];
        h[0] = 0.0;
        h[1..].copy_from_slice(&x[1..]);
        let improved: Vec<usize> = (0..n).map(|s| greedy(h, s, Some(policy[s]))).collect();
        if improved == policy {
            return Some(gain);
        }
        policy = improved;
    }
    None
}

/// Gaussian elimination with partial pivoting; `None` if singular.
fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let factor = a[row][col] / a[col][col];
            if factor != 0.0 {
                for k in col..n {
                    a[row][k] -= factor * a[col][k];
                }
                b[row] -= factor * b[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let tail: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - tail) / a[row][row];
    }
    Some(x)
}

/// `Q(s,1) − Q(s,0)` of the subsidized average-reward problem, solved from scratch.
pub fn infinite_gap(model: &ArmModel, lambda: f64, s: usize) -> Result<f64, WhittleError> {
    let mut h = Vec::new();
    relative_value_iteration(model, lambda, &mut h)?;
    let (q0, q1) = q_values(model, s, lambda, &h);
    Ok(q1 - q0)
}

/// Per-state infinite-horizon index searches; dummy states get index 0
/// without a search.
pub fn whittle_infinite_detailed(model: &ArmModel, tol: f64) -> Result<Vec<WhittleComputation>, WhittleError> {
    let bracket = initial_bracket(model);
    let mut h = vec![0.0; model.n_states()];
    let mut out = Vec::with_capacity(model.n_states());
    for s in 0..model.n_states() {
        if model.is_dummy(s) {
            out.push(WhittleComputation {
                state: s,
                t: None,
                index: 0.0,
                initial_bracket: (0.0, 0.0),
                final_bracket: (0.0, 0.0),
                evaluations: Vec::new(),
                sweeps: 0,
                residual: 0.0,
                bias: Vec::new(),
            });
            continue;
        }
        let mut sweeps = 0;
        let mut gains = Vec::new();
        let (index, residual, final_bracket, evals) = bisect(s, bracket, tol, |lambda| {
            let (gain, k) = relative_value_iteration(model, lambda, &mut h)?;
            sweeps += k;
            gains.push(gain);
            let (q0, q1) = q_values(model, s, lambda, &h);
            Ok(q1 - q0)
        })?;
        let mut bias = h.clone();
        relative_value_iteration(model, index, &mut bias)?;
        out.push(WhittleComputation {
            state: s,
            t: None,
            index,
            initial_bracket: bracket,
            final_bracket,
            evaluations: evals.iter().zip(&gains).map(|(&(l, f), &g)| (l, f, g)).collect(),
            sweeps,
            residual,
            bias,
        });
    }
    Ok(out)
}

/// Stationary Whittle index of every state of `model`.
pub fn whittle_index_infinite(model: &ArmModel, tol: f64) -> Result<IndexTable, WhittleError> {
    let values = whittle_infinite_detailed(model, tol)?.into_iter().map(|c| c.index).collect();
    Ok(IndexTable::stationary(vec![values], vec![model.n_normal()]))
}

/// `Q_t(s,1) − Q_t(s,0)` of the finite-horizon problem with passive subsidy
/// `lambda` paid at every step from `t` to the horizon.
pub fn finite_gap(model: &ArmModel, horizon: usize, lambda: f64, s: usize, t: usize) -> f64 {
    let n = model.n_states();
    let mut v = vec![0.0; n];
    let mut next = vec![0.0; n];
    for _ in (t + 1..horizon).rev() {
        for (x, slot) in next.iter_mut().enumerate() {
            let (q0, q1) = q_values(model, x, lambda, &v);
            *slot = q0.max(q1);
        }
        std::mem::swap(&mut v, &mut next);
    }
    let (q0, q1) = q_values(model, s, lambda, &v);
    q1 - q0
}

/// Per-`(s, t)` finite-horizon index searches; dummy states get index 0.
pub fn whittle_finite_detailed(model: &ArmModel, horizon: usize, tol: f64) -> Result<Vec<WhittleComputation>, WhittleError> {
    let bracket = initial_bracket(model);
    let mut out = Vec::with_capacity(horizon * model.n_states());
    for t in 0..horizon {
        for s in 0..model.n_states() {
            if model.is_dummy(s) {
                out.push(WhittleComputation {
                    state: s,
                    t: Some(t),
                    index: 0.0,
                    initial_bracket: (0.0, 0.0),
                    final_bracket: (0.0, 0.0),
                    evaluations: Vec::new(),
                    sweeps: 0,
                    residual: 0.0,
                    bias: Vec::new(),
                });
                continue;
            }
            let mut sweeps = 0;
            let (index, residual, final_bracket, evals) = bisect(s, bracket, tol, |lambda| {
                sweeps += horizon - t;
                Ok(finite_gap(model, horizon, lambda, s, t))
            })?;
            out.push(WhittleComputation {
                state: s,
                t: Some(t),
                index,
                initial_bracket: bracket,
                final_bracket,
                evaluations: evals.into_iter().map(|(l, f)| (l, f, f64::NAN)).collect(),
                sweeps,
                residual,
                bias: Vec::new(),
            });
        }
    }
    Ok(out)
}

/// Time-dependent finite-horizon Whittle index of every `(s, t)`.
pub fn whittle_index_finite(model: &ArmModel, horizon: usize, tol: f64) -> Result<IndexTable, WhittleError> {
    let n = model.n_states();
    let mut values = vec![vec![0.0; n]; horizon];
    for c in whittle_finite_detailed(model, horizon, tol)? {
        values[c.t.unwrap()][c.state] = c.index;
    }
    Ok(IndexTable::time_dependent(vec![values], vec![model.n_normal()]))
}

/// `Q_t(s,1) − Q_t(s,0)` from unsubsidized backward induction; dummy states get 0.
pub fn q_difference_indices(model: &ArmModel, horizon: usize) -> IndexTable {
    let n = model.n_states();
    let mut values = vec![vec![0.0; n]; horizon];
    let mut v = vec![0.0; n];
    let mut next = vec![0.0; n];
    for t in (0..horizon).rev() {
        for s in 0..n {
            let (q0, q1) = q_values(model, s, 0.0, &v);
            values[t][s] = if model.is_dummy(s) { 0.0 } else { q1 - q0 };
            next[s] = q0.max(q1);
        }
        std::mem::swap(&mut v, &mut next);
    }
    IndexTable::time_dependent(vec![values], vec![model.n_normal()])
}
