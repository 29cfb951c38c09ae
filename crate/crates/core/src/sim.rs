//! Monte Carlo evaluation with hard constraint enforcement.
//!
//! Arms always evolve in the dummy-expanded space, so an arm is "pulled"
//! exactly when its state lies in the dummy block. The simulator, not the
//! policy, is the authority on feasibility: an action vector that exceeds the
//! budget or touches a pulled arm is rejected with [`SimError::InfeasibleAction`].

use std::io::Write;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{replicate, ArmModel, Instance, ModelError};
use crate::policies::{prepare, ArmState, Policy, PolicyError, PolicyKind, PolicyOptions, SelectionContext};
use crate::rng;

/// Stream tag separating policy randomness from transition randomness.
const POLICY_STREAM: u64 = 0x504f_4c49;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("infeasible action at t = {t}: {reason}")]
    InfeasibleAction { t: usize, reason: String },
    #[error("degenerate normalization range: upper bound {upper} ≤ random mean {random}")]
    DegenerateRange { upper: f64, random: f64 },
    #[error("at least two episodes are needed for a confidence interval, got {0}")]
    TooFewEpisodes(usize),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub seed: u64,
    pub total_reward: f64,
    /// Number of pulls at each step.
    pub pulls_per_step: Vec<usize>,
    /// Steps at which each arm was pulled.
    pub pull_times: Vec<Vec<usize>>,
    /// Summed wall time spent inside the policy's `select`.
    #[serde(skip)]
    pub selection_time: Duration,
}

/// One `(episode, t, arm)` record of a trajectory dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub episode: u64,
    pub t: usize,
    pub arm: usize,
    pub state: usize,
    pub action: u8,
    pub reward: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub policy: PolicyKind,
    pub mean: f64,
    /// 95% half-width `1.96 · sd / √n`.
    pub ci95: f64,
    pub n_episodes: usize,
    /// Precomputation time (LP solve or index tables).
    pub precompute_ms: f64,
    /// Summed selection time over all episodes.
    pub selection_ms: f64,
    /// Constraint violations found by the post-hoc audit.
    pub audit_violations: usize,
}

impl Summary {
    /// Policy wall time: precomputation plus selection.
    pub fn runtime_ms(&self) -> f64 {
        self.precompute_ms + self.selection_ms
    }
}

/// Mean and normal-approximation 95% half-width.
pub fn mean_ci(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, 1.96 * var.sqrt() / n.sqrt())
}

/// Constraint violations in one recorded episode.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    Budget { t: usize, pulls: usize },
    MultiPull { arm: usize, times: Vec<usize> },
}

/// Checks `Σ_n a_n(t) ≤ budget` for every `t` and `Σ_t a_n(t) ≤ 1` for every arm.
pub fn audit(result: &EpisodeResult, budget: usize) -> Vec<Violation> {
    let mut out: Vec<Violation> = result
        .pulls_per_step
        .iter()
        .enumerate()
        .filter(|(_, &p)| p > budget)
        .map(|(t, &pulls)| Violation::Budget { t, pulls })
        .collect();
    out.extend(
        result
            .pull_times
            .iter()
            .enumerate()
            .filter(|(_, times)| times.len() > 1)
            .map(|(arm, times)| Violation::MultiPull { arm, times: times.clone() }),
    );
    out
}

/// Maps `[lower-ref, upper]` to `[0, 1]`: upper bound → 1, random policy → 0.
pub fn normalize_scores(means: &[f64], upper_bound: f64, random_mean: f64) -> Result<Vec<f64>, SimError> {
    if upper_bound <= random_mean {
        return Err(SimError::DegenerateRange { upper: upper_bound, random: random_mean });
    }
    Ok(means.iter().map(|m| (m - random_mean) / (upper_bound - random_mean)).collect())
}

/// Prepares a policy and reports how long the precomputation took.
pub fn prepare_timed(
    kind: PolicyKind,
    instance: &Instance,
    options: &PolicyOptions,
) -> Result<(Box<dyn Policy>, Duration), PolicyError> {
    let start = Instant::now();
    let policy = prepare(kind, instance, options)?;
    Ok((policy, start.elapsed()))
}

/// Simulation engine for one instance.
#[derive(Debug, Clone)]
pub struct Simulator<'a> {
    instance: &'a Instance,
    types: Vec<ArmModel>,
    n_normal: Vec<usize>,
}

impl<'a> Simulator<'a> {
    pub fn new(instance: &'a Instance) -> Result<Self, SimError> {
        Ok(Self {
            instance,
            types: instance.expanded_types()?,
            n_normal: instance.types.iter().map(|m| m.n_normal()).collect(),
        })
    }

    pub fn instance(&self) -> &Instance {
        self.instance
    }

    pub fn expanded_types(&self) -> &[ArmModel] {
        &self.types
    }

    pub fn n_normal(&self) -> &[usize] {
        &self.n_normal
    }

    pub fn budget(&self) -> usize {
        self.instance.total_budget()
    }

    /// Initial expanded-space states for the episode with `seed`.
    pub fn initial_states(&self, seed: u64) -> Vec<ArmState> {
        replicate(self.instance, seed).arms.into_iter().map(|a| ArmState { type_idx: a.type_idx, state: a.state }).collect()
    }

    /// Checks an action vector against the budget and the single-pull rule.
    pub fn check_actions(&self, states: &[ArmState], actions: &[bool], t: usize) -> Result<(), SimError> {
        if actions.len() != states.len() {
            return Err(SimError::InfeasibleAction {
                t,
                reason: format!("{} actions for {} arms", actions.len(), states.len()),
            });
        }
        let pulls = actions.iter().filter(|&&a| a).count();
        if pulls > self.budget() {
            return Err(SimError::InfeasibleAction { t, reason: format!("{pulls} pulls exceed budget {}", self.budget()) });
        }
        if let Some(i) = (0..states.len()).find(|&i| actions[i] && states[i].state >= self.n_normal[states[i].type_idx]) {
            return Err(SimError::InfeasibleAction { t, reason: format!("arm {i} was already pulled") });
        }
        Ok(())
    }

    /// Applies one feasible action vector; transitions use the uniform draw
    /// keyed by `(seed, arm, t)`.
    pub fn step(&self, states: &[ArmState], actions: &[bool], t: usize, seed: u64) -> Result<(Vec<ArmState>, f64), SimError> {
        self.check_actions(states, actions, t)?;
        let mut reward = 0.0;
        let next = states
            .iter()
            .zip(actions)
            .enumerate()
            .map(|(i, (arm, &pull))| {
                let m = &self.types[arm.type_idx];
                let a = usize::from(pull);
                reward += m.reward(arm.state, a);
                let u = rng::uniform(&[seed, i as u64, t as u64]);
                ArmState { type_idx: arm.type_idx, state: rng::sample_sparse(m.support(arm.state, a), u) }
            })
            .collect();
        Ok((next, reward))
    }

    fn episode(
        &self,
        policy: &dyn Policy,
        seed: u64,
        mut record: Option<&mut Vec<TrajectoryRecord>>,
    ) -> Result<EpisodeResult, SimError> {
        let mut states = self.initial_states(seed);
        let mut policy_rng = rng::stream(&[seed, POLICY_STREAM]);
        let horizon = self.instance.horizon;
        let mut result = EpisodeResult {
            seed,
            total_reward: 0.0,
            pulls_per_step: Vec::with_capacity(horizon),
            pull_times: vec![Vec::new(); states.len()],
            selection_time: Duration::ZERO,
        };
        for t in 0..horizon {
            let ctx = SelectionContext { arms: &states, n_normal: &self.n_normal, t, budget: self.budget() };
            let start = Instant::now();
            let actions = policy.select(&ctx, &mut policy_rng);
            result.selection_time += start.elapsed();
            let (next, reward) = self.step(&states, &actions, t, seed)?;
            if let Some(rec) = record.as_deref_mut() {
                for (i, (arm, &a)) in states.iter().zip(&actions).enumerate() {
                    rec.push(TrajectoryRecord {
                        episode: seed,
                        t,
                        arm: i,
                        state: arm.state,
                        action: u8::from(a),
                        reward: self.types[arm.type_idx].reward(arm.state, usize::from(a)),
                    });
                }
            }
            let mut pulls = 0;
            for (i, &a) in actions.iter().enumerate() {
                if a {
                    pulls += 1;
                    result.pull_times[i].push(t);
                }
            }
            result.pulls_per_step.push(pulls);
            result.total_reward += reward;
            states = next;
        }
        Ok(result)
    }

    pub fn run_episode(&self, policy: &dyn Policy, seed: u64) -> Result<EpisodeResult, SimError> {
        self.episode(policy, seed, None)
    }

    /// Runs an episode and returns its full trajectory.
    pub fn run_episode_recorded(
        &self,
        policy: &dyn Policy,
        seed: u64,
    ) -> Result<(EpisodeResult, Vec<TrajectoryRecord>), SimError> {
        let mut records = Vec::new();
        let result = self.episode(policy, seed, Some(&mut records))?;
        Ok((result, records))
    }

    /// Runs episodes with seeds `base_seed..base_seed + n` in parallel.
    pub fn run_episodes(&self, policy: &dyn Policy, n_episodes: usize, base_seed: u64) -> Result<Vec<EpisodeResult>, SimError> {
        (0..n_episodes as u64)
            .into_par_iter()
            .map(|e| self.run_episode(policy, base_seed.wrapping_add(e)))
            .collect()
    }

    /// Evaluates a prepared policy; `precompute` is folded into the timing.
    pub fn evaluate_prepared(
        &self,
        policy: &dyn Policy,
        precompute: Duration,
        n_episodes: usize,
        base_seed: u64,
    ) -> Result<(Summary, Vec<EpisodeResult>), SimError> {
        if n_episodes < 2 {
            return Err(SimError::TooFewEpisodes(n_episodes));
        }
        let episodes = self.run_episodes(policy, n_episodes, base_seed)?;
        let rewards: Vec<f64> = episodes.iter().map(|e| e.total_reward).collect();
        let (mean, ci95) = mean_ci(&rewards);
        let budget = self.budget();
        let summary = Summary {
            policy: policy.kind(),
            mean,
            ci95,
            n_episodes,
            precompute_ms: precompute.as_secs_f64() * 1e3,
            selection_ms: episodes.iter().map(|e| e.selection_time.as_secs_f64()).sum::<f64>() * 1e3,
            audit_violations: episodes.iter().map(|e| audit(e, budget).len()).sum(),
        };
        Ok((summary, episodes))
    }

    /// Prepares and evaluates a policy by kind.
    pub fn evaluate(
        &self,
        kind: PolicyKind,
        options: &PolicyOptions,
        n_episodes: usize,
        base_seed: u64,
    ) -> Result<Summary, SimError> {
        let (policy, precompute) = prepare_timed(kind, self.instance, options)?;
        Ok(self.evaluate_prepared(policy.as_ref(), precompute, n_episodes, base_seed)?.0)
    }
}

/// Writes trajectory records as JSON lines.
pub fn write_trajectories(out: &mut impl Write, records: &[TrajectoryRecord]) -> Result<(), SimError> {
    for r in records {
        serde_json::to_writer(&mut *out, r).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domains::{cpap_arm, CpapReward};
    use crate::policies::{IndexTable, RandomPolicy, SpiPolicy};

    fn cpap_instance(rho: usize, budget: usize, horizon: usize) -> Instance {
        let m = cpap_arm(3, 0.7, CpapReward::BothActions, "c".into()).unwrap();
        Instance::new(vec![m], rho, budget, horizon, vec![vec![0.0, 0.0, 1.0]]).unwrap()
    }

    struct Fixed(Vec<bool>);

    impl Policy for Fixed {
        fn kind(&self) -> PolicyKind {
            PolicyKind::Random
        }
        fn select(&self, _ctx: &SelectionContext<'_>, _rng: &mut dyn rand::RngCore) -> Vec<bool> {
            self.0.clone()
        }
    }

    #[test]
    fn passive_death_chain_steps_down() {
        let inst = cpap_instance(1, 1, 3);
        let sim = Simulator::new(&inst).unwrap();
        let (next, reward) = sim.step(&[ArmState { type_idx: 0, state: 2 }], &[false], 0, 1).unwrap();
        assert_eq!(next[0].state, 1);
        assert_eq!(reward, 3.0);
    }

    #[test]
    fn over_budget_and_double_pull_are_rejected() {
        let inst = cpap_instance(2, 1, 3);
        let sim = Simulator::new(&inst).unwrap();
        let states = [ArmState { type_idx: 0, state: 2 }, ArmState { type_idx: 0, state: 4 }];
        assert!(matches!(sim.step(&states, &[true, true], 0, 0), Err(SimError::InfeasibleAction { .. })));
        assert!(matches!(sim.step(&states, &[false, true], 0, 0), Err(SimError::InfeasibleAction { .. })));
        assert!(sim.step(&states, &[true, false], 0, 0).is_ok());
    }

    #[test]
    fn zero_budget_gives_the_passive_trajectory() {
        let inst = cpap_instance(3, 0, 4);
        let sim = Simulator::new(&inst).unwrap();
        let r = sim.run_episode(&RandomPolicy, 5).unwrap();
        // 3 arms from the top state: 3 + 2 + 1 + 1 each
        assert_eq!(r.total_reward, 21.0);
        assert!(r.pulls_per_step.iter().all(|&p| p == 0));
    }

    #[test]
    fn single_arm_single_step_pull() {
        let m = ArmModel::new("one", &[[vec![1.0], vec![1.0]]], &[[1.0, 4.0]]).unwrap();
        let inst = Instance::new(vec![m], 1, 1, 1, vec![vec![1.0]]).unwrap();
        let sim = Simulator::new(&inst).unwrap();
        let policy = prepare(PolicyKind::Spi, &inst, &PolicyOptions::default()).unwrap();
        let r = sim.run_episode(policy.as_ref(), 0).unwrap();
        assert_eq!(r.total_reward, 4.0);
        assert_eq!(r.pull_times[0], vec![0]);
    }

    #[test]
    fn episodes_are_reproducible() {
        let inst = cpap_instance(5, 2, 5);
        let sim = Simulator::new(&inst).unwrap();
        let a = sim.run_episode(&RandomPolicy, 42).unwrap();
        let b = sim.run_episode(&RandomPolicy, 42).unwrap();
        assert_eq!(a.total_reward, b.total_reward);
        assert_eq!(a.pull_times, b.pull_times);
    }

    #[test]
    fn deterministic_instance_has_zero_ci() {
        let m = ArmModel::new("det", &[[vec![0.0, 1.0], vec![1.0, 0.0]], [vec![1.0, 0.0], vec![0.0, 1.0]]], &[[0.0, 1.0], [2.0, 0.5]])
            .unwrap();
        let inst = Instance::new(vec![m], 3, 1, 4, vec![vec![1.0, 0.0]]).unwrap();
        let sim = Simulator::new(&inst).unwrap();
        let s = sim.evaluate(PolicyKind::Spi, &PolicyOptions::default(), 20, 0).unwrap();
        assert_eq!(s.ci95, 0.0);
        assert_eq!(s.audit_violations, 0);
    }

    #[test]
    fn ci_matches_the_analytic_half_width() {
        // iid N(0, 1)-ish synthetic rewards via Box-Muller on keyed uniforms
        let n = 1000;
        let values: Vec<f64> = (0..n)
            .map(|i| {
                let (u1, u2) = (rng::uniform(&[9, i, 0]).max(1e-300), rng::uniform(&[9, i, 1]));
                3.0 * (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
            })
            .collect();
        let (_, ci) = mean_ci(&values);
        let analytic = 1.96 * 3.0 / (n as f64).sqrt();
        assert!((ci - analytic).abs() <= 0.1 * analytic, "{ci} vs {analytic}");
    }

    #[test]
    fn audit_flags_recorded_violations() {
        let r = EpisodeResult {
            seed: 0,
            total_reward: 0.0,
            pulls_per_step: vec![1, 3],
            pull_times: vec![vec![0, 1], vec![1], vec![1]],
            selection_time: Duration::ZERO,
        };
        let v = audit(&r, 2);
        assert_eq!(v.len(), 2);
        assert!(v.contains(&Violation::Budget { t: 1, pulls: 3 }));
    }

    #[test]
    fn normalization_maps_bounds() {
        assert_eq!(normalize_scores(&[10.0, 4.0, 7.0], 10.0, 4.0).unwrap(), vec![1.0, 0.0, 0.5]);
        assert!(matches!(normalize_scores(&[1.0], 4.0, 4.0), Err(SimError::DegenerateRange { .. })));
    }

    #[test]
    fn infeasible_policy_surfaces_as_an_error() {
        let inst = cpap_instance(2, 1, 2);
        let sim = Simulator::new(&inst).unwrap();
        assert!(matches!(sim.run_episode(&Fixed(vec![true, true]), 0), Err(SimError::InfeasibleAction { .. })));
        // pulling the same arm twice is stopped at t = 1
        let err = sim.run_episode(&Fixed(vec![true, false]), 0).unwrap_err();
        assert!(matches!(err, SimError::InfeasibleAction { t: 1, .. }));
    }

    #[test]
    fn episode_rewards_are_uncorrelated() {
        let inst = cpap_instance(4, 2, 6);
        let sim = Simulator::new(&inst).unwrap();
        let rewards: Vec<f64> = sim.run_episodes(&RandomPolicy, 1000, 77).unwrap().iter().map(|e| e.total_reward).collect();
        let n = rewards.len() as f64;
        let mean = rewards.iter().sum::<f64>() / n;
        let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
        let lag1 = rewards.windows(2).map(|w| (w[0] - mean) * (w[1] - mean)).sum::<f64>() / (n * var);
        assert!(lag1.abs() < 3.0 / n.sqrt(), "{lag1}");
    }

    #[test]
    fn trajectory_dump_is_json_lines() {
        let inst = cpap_instance(2, 1, 2);
        let sim = Simulator::new(&inst).unwrap();
        let policy = SpiPolicy { indices: IndexTable::time_dependent(vec![vec![vec![1.0; 6]; 2]], vec![3]), cutoff: true };
        let (_, records) = sim.run_episode_recorded(&policy, 3).unwrap();
        assert_eq!(records.len(), 2 * 2);
        let mut buf = Vec::new();
        write_trajectories(&mut buf, &records).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 4);
        let first: TrajectoryRecord = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        assert_eq!(first, records[0]);
    }
}
