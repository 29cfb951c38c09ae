//! Exact values for tiny instances by dynamic programming over joint states.
//!
//! A joint state is the vector of per-arm states in the dummy-expanded space;
//! an arm's pulled flag is implied by whether its state lies in the dummy
//! block. Joint states are encoded as mixed-radix integers and value tables
//! are dense.

use thiserror::Error;

use crate::model::{ArmModel, Instance, ModelError};
use crate::policies::{ArmState, Policy, SelectionContext};

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("joint state space too large: {reason} (computed {states} joint states)")]
    CapExceeded { states: u128, reason: String },
    #[error("policy chose an infeasible action at t = {t}: {reason}")]
    InfeasibleAction { t: usize, reason: String },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Size limits for the joint DP.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleCap {
    pub max_arms: usize,
    pub max_states: usize,
    pub max_horizon: usize,
    /// Bound on `joint states × (T + 1)`.
    pub max_entries: u128,
}

impl Default for OracleCap {
    fn default() -> Self {
        Self { max_arms: 4, max_states: 3, max_horizon: 5, max_entries: 10_000_000 }
    }
}

/// Decoded joint state.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JointState {
    /// Expanded-space state of every arm.
    pub states: Vec<usize>,
    pub pulled: Vec<bool>,
    pub t: usize,
}

/// Mixed-radix indexing of the joint expanded state space.
#[derive(Debug, Clone)]
pub struct JointSpace {
    models: Vec<ArmModel>,
    arm_type: Vec<usize>,
    n_normal: Vec<usize>,
    strides: Vec<usize>,
    size: usize,
}

impl JointSpace {
    pub fn new(instance: &Instance, cap: &OracleCap) -> Result<Self, OracleError> {
        let arm_type: Vec<usize> = (0..instance.n_types()).flat_map(|n| std::iter::repeat(n).take(instance.rho)).collect();
        let radices: Vec<usize> = arm_type.iter().map(|&n| 2 * instance.types[n].n_normal()).collect();
        let states: u128 = radices.iter().map(|&r| r as u128).product();
        let exceeded = |reason: String| Err(OracleError::CapExceeded { states, reason });
        if arm_type.len() > cap.max_arms {
            return exceeded(format!("{} arms > {}", arm_type.len(), cap.max_arms));
        }
        if let Some(m) = instance.types.iter().find(|m| m.n_normal() > cap.max_states) {
            return exceeded(format!("{} states per arm > {}", m.n_normal(), cap.max_states));
        }
        if instance.horizon > cap.max_horizon {
            return exceeded(format!("horizon {} > {}", instance.horizon, cap.max_horizon));
        }
        if states * (instance.horizon as u128 + 1) > cap.max_entries {
            return exceeded(format!("table exceeds {} entries", cap.max_entries));
        }
        let mut strides = Vec::with_capacity(radices.len());
        let mut acc = 1;
        for r in &radices {
            strides.push(acc);
            acc *= r;
        }
        Ok(Self {
            models: instance.expanded_types()?,
            n_normal: instance.types.iter().map(|m| m.n_normal()).collect(),
            arm_type,
            strides,
            size: acc,
        })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn n_arms(&self) -> usize {
        self.arm_type.len()
    }

    pub fn encode(&self, states: &[usize]) -> usize {
        states.iter().zip(&self.strides).map(|(s, k)| s * k).sum()
    }

    pub fn decode_into(&self, mut idx: usize, out: &mut Vec<ArmState>) {
        out.clear();
        for &n in &self.arm_type {
            let radix = 2 * self.n_normal[n];
            out.push(ArmState { type_idx: n, state: idx % radix });
            idx /= radix;
        }
    }

    pub fn decode(&self, idx: usize, t: usize) -> JointState {
        let mut arms = Vec::new();
        self.decode_into(idx, &mut arms);
        JointState {
            pulled: arms.iter().map(|a| a.state >= self.n_normal[a.type_idx]).collect(),
            states: arms.into_iter().map(|a| a.state).collect(),
            t,
        }
    }

    /// Joint distribution at `t = 0`: arms draw independently from their
    /// type's initial distribution.
    pub fn initial(&self, instance: &Instance) -> Vec<(usize, f64)> {
        let mut dist = vec![(0usize, 1.0)];
        for (i, &n) in self.arm_type.iter().enumerate() {
            let support: Vec<(usize, f64)> =
                instance.initial[n].iter().copied().enumerate().filter(|&(_, p)| p > 0.0).collect();
            dist = dist
                .iter()
                .flat_map(|&(idx, p)| support.iter().map(move |&(s, q)| (idx + s * self.strides[i], p * q)))
                .collect();
        }
        dist
    }

    /// Immediate reward and successor distribution under `actions`.
    pub fn transition(&self, arms: &[ArmState], actions: &[bool], out: &mut Vec<(usize, f64)>) -> f64 {
        out.clear();
        out.push((0, 1.0));
        let mut reward = 0.0;
        for (i, (arm, &pull)) in arms.iter().zip(actions).enumerate() {
            let m = &self.models[arm.type_idx];
            let a = usize::from(pull);
            reward += m.reward(arm.state, a);
            let support = m.support(arm.state, a);
            if let [(next, _)] = support {
                for e in out.iter_mut() {
                    e.0 += next * self.strides[i];
                }
                continue;
            }
            let prev = std::mem::take(out);
            for (idx, p) in prev {
                for &(next, q) in support {
                    out.push((idx + next * self.strides[i], p * q));
                }
            }
        }
        reward
    }

    fn is_free(&self, arm: &ArmState) -> bool {
        arm.state < self.n_normal[arm.type_idx]
    }
}

/// Feasible action vectors for the current joint state, ordered by number of
/// pulls and then lexicographically over the free arms.
fn feasible_actions(free: &[usize], n_arms: usize, budget: usize) -> Vec<Vec<bool>> {
    let k = budget.min(free.len());
    let mut masks: Vec<u32> = (0u32..1 << free.len()).filter(|m| m.count_ones() as usize <= k).collect();
    masks.sort_by_key(|m| (m.count_ones(), m.reverse_bits()));
    masks
        .into_iter()
        .map(|m| {
            let mut a = vec![false; n_arms];
            for (j, &i) in free.iter().enumerate() {
                a[i] = m >> j & 1 == 1;
            }
            a
        })
        .collect()
}

/// Optimal value table from backward induction: `values[t][joint]`.
#[derive(Debug, Clone)]
pub struct OptimalSolution {
    pub space: JointSpace,
    pub values: Vec<Vec<f64>>,
    /// Expected optimal total reward from the initial distribution.
    pub value: f64,
}

impl OptimalSolution {
    /// An optimal action for `arms` at `t`; ties favour fewer pulls.
    pub fn optimal_action(&self, instance: &Instance, arms: &[ArmState], t: usize) -> Vec<bool> {
        best_action(&self.space, instance.total_budget(), arms, &self.values[t + 1]).1
    }
}

fn best_action(space: &JointSpace, budget: usize, arms: &[ArmState], next_values: &[f64]) -> (f64, Vec<bool>) {
    let free: Vec<usize> = (0..arms.len()).filter(|&i| space.is_free(&arms[i])).collect();
    let mut succ = Vec::new();
    let mut best: Option<(f64, Vec<bool>)> = None;
    for actions in feasible_actions(&free, arms.len(), budget) {
        let r = space.transition(arms, &actions, &mut succ);
        let q = r + succ.iter().map(|&(j, p)| p * next_values[j]).sum::<f64>();
        if best.as_ref().is_none_or(|(v, _)| q > v + 1e-12) {
            best = Some((q, actions));
        }
    }
    best.expect("the empty action is always feasible")
}

pub fn solve_optimum(instance: &Instance, cap: &OracleCap) -> Result<OptimalSolution, OracleError> {
    let space = JointSpace::new(instance, cap)?;
    let horizon = instance.horizon;
    let budget = instance.total_budget();
    let mut values = vec![vec![0.0; space.size()]; horizon + 1];
    let mut arms = Vec::new();
    for t in (0..horizon).rev() {
        let (head, tail) = values.split_at_mut(t + 1);
        for idx in 0..space.size() {
            space.decode_into(idx, &mut arms);
            head[t][idx] = best_action(&space, budget, &arms, &tail[0]).0;
        }
    }
    let value = space.initial(instance).iter().map(|&(j, p)| p * values[0][j]).sum();
    Ok(OptimalSolution { space, values, value })
}

/// Exact optimal expected total reward with the default cap.
pub fn exact_optimum(instance: &Instance) -> Result<f64, OracleError> {
    Ok(solve_optimum(instance, &OracleCap::default())?.value)
}

/// Exact expected total reward of `policy`, propagating the joint
/// distribution forward through the policy's action distribution.
pub fn exact_policy_value_capped(instance: &Instance, policy: &dyn Policy, cap: &OracleCap) -> Result<f64, OracleError> {
    let space = JointSpace::new(instance, cap)?;
    let budget = instance.total_budget();
    let mut dist = vec![0.0; space.size()];
    for (j, p) in space.initial(instance) {
        dist[j] += p;
    }
    let mut total = 0.0;
    let mut arms = Vec::new();
    let mut succ = Vec::new();
    for t in 0..instance.horizon {
        let mut next = vec![0.0; space.size()];
        for (idx, &p) in dist.iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            space.decode_into(idx, &mut arms);
            let ctx = SelectionContext { arms: &arms, n_normal: &space.n_normal, t, budget };
            for (q, actions) in policy.action_distribution(&ctx) {
                let pulls = actions.iter().filter(|&&a| a).count();
                if pulls > budget {
                    return Err(OracleError::InfeasibleAction { t, reason: format!("{pulls} pulls exceed budget {budget}") });
                }
                if let Some(i) = (0..arms.len()).find(|&i| actions[i] && !space.is_free(&arms[i])) {
                    return Err(OracleError::InfeasibleAction { t, reason: format!("arm {i} was already pulled") });
                }
                let r = space.transition(&arms, &actions, &mut succ);
                total += p * q * r;
                for &(j, w) in &succ {
                    next[j] += p * q * w;
                }
            }
        }
        dist = next;
    }
    Ok(total)
}

pub fn exact_policy_value(instance: &Instance, policy: &dyn Policy) -> Result<f64, OracleError> {
    exact_policy_value_capped(instance, policy, &OracleCap::default())
}


/// A reproducible corpus of random instances within the default cap:
/// `ρN ≤ 4`, `|S| ∈ {2, 3}`, `T ≤ max_horizon`, `1 ≤ K ≤ N`.
pub fn capped_corpus(count: usize, max_horizon: usize, seed: u64) -> Vec<Instance> {
    use crate::domains::{build_instance, Family, FamilyParams, Setting};
    (0..count as u64)
        .map(|i| {
            let u = |j: u64| crate::rng::uniform(&[seed, i, j]);
            let pick = |j: u64, lo: usize, hi: usize| lo + (u(j) * (hi - lo + 1) as f64) as usize;
            let n_types = pick(0, 1, 4);
            let setting = Setting {
                n_types,
                n_states: pick(1, 2, 3),
                budget: pick(2, 1, n_types),
                rho: pick(3, 1, 4 / n_types),
                horizon: pick(4, 1, max_horizon),
            };
            build_instance(Family::Random, setting, &FamilyParams::default(), crate::rng::hash_key(&[seed, i]))
                .expect("random family parameters are valid")
        })
        .collect()
}
