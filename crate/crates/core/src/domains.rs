//! Instance generators for the benchmark families.
//!
//! Every generator is a pure function of its spec and seed. Per-type
//! parameters are drawn from a stream keyed by `(seed, family, type)`, so
//! growing the number of types keeps the earlier types unchanged.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ArmModel, Instance, ModelError};
use crate::rng;

#[derive(Debug, Error)]
pub enum DomainError {
    #[error("invalid domain parameters: {0}")]
    Parameters(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Cpap,
    Mhmh,
    Ehrenfest,
    Random,
}

impl Family {
    fn tag(self) -> u64 {
        match self {
            Family::Cpap => 1,
            Family::Mhmh => 2,
            Family::Ehrenfest => 3,
            Family::Random => 4,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Family::Cpap => "cpap",
            Family::Mhmh => "mhmh",
            Family::Ehrenfest => "ehrenfest",
            Family::Random => "random",
        }
    }
}

/// Whether CPAP adherence rewards accrue under both actions or only when pulled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CpapReward {
    #[default]
    BothActions,
    ActiveOnly,
}

/// Family-specific knobs; each family reads only its own fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FamilyParams {
    pub cpap_reward: CpapReward,
    /// Range for every MHMH `η` parameter.
    pub mhmh_eta: (f64, f64),
    /// Range for the reliable-arm engaged reward `C`.
    pub mhmh_c: (f64, f64),
    pub ehrenfest_dt: f64,
    pub ehrenfest_c: (f64, f64),
    pub ehrenfest_mu: (f64, f64),
    pub ehrenfest_lambda: (f64, f64),
}

impl Default for FamilyParams {
    fn default() -> Self {
        Self {
            cpap_reward: CpapReward::BothActions,
            mhmh_eta: (0.1, 0.9),
            mhmh_c: (0.1, 0.9),
            ehrenfest_dt: 0.01,
            ehrenfest_c: (1.0, 10.0),
            ehrenfest_mu: (0.0, 10.0),
            ehrenfest_lambda: (0.0, 10.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSpec {
    pub family: Family,
    pub n_types: usize,
    /// Number of states; for Ehrenfest this is the top level `S` (states `0..=S`).
    pub n_states: usize,
    pub seed: u64,
    #[serde(default)]
    pub params: FamilyParams,
}

fn type_stream(spec: &DomainSpec, n: usize) -> rand_chacha::ChaCha8Rng {
    rng::stream(&[spec.seed, spec.family.tag(), n as u64])
}

fn draw(rng: &mut impl Rng, (lo, hi): (f64, f64)) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

/// Draws strictly inside an open interval.
fn draw_open(rng: &mut impl Rng, range: (f64, f64)) -> f64 {
    loop {
        let x = draw(rng, range);
        if x > range.0 && x < range.1 {
            return x;
        }
    }
}

fn dense_rows(n: usize) -> Vec<[Vec<f64>; 2]> {
    (0..n).map(|_| [vec![0.0; n], vec![0.0; n]]).collect()
}

/// One CPAP birth-death arm with active up-probability `q`.
pub fn cpap_arm(n_states: usize, q: f64, reward: CpapReward, label: String) -> Result<ArmModel, DomainError> {
    if n_states < 2 {
        return Err(DomainError::Parameters("CPAP needs at least 2 states".into()));
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(DomainError::Parameters(format!("up-probability {q} outside [0, 1]")));
    }
    let top = n_states - 1;
    let mut p = dense_rows(n_states);
    for s in 0..n_states {
        p[s][0][s.saturating_sub(1)] = 1.0;
        let up = (s + 1).min(top);
        let down = s.saturating_sub(1);
        p[s][1][up] += q;
        p[s][1][down] += 1.0 - q;
    }
    let rewards: Vec<[f64; 2]> = (0..n_states)
        .map(|s| {
            let r = (s + 1) as f64;
            match reward {
                CpapReward::BothActions => [r, r],
                CpapReward::ActiveOnly => [0.0, r],
            }
        })
        .collect();
    Ok(ArmModel::new(label, &p, &rewards)?)
}

pub fn make_cpap(spec: &DomainSpec) -> Result<Vec<ArmModel>, DomainError> {
    (0..spec.n_types)
        .map(|n| {
            let q = type_stream(spec, n).random::<f64>();
            cpap_arm(spec.n_states, q, spec.params.cpap_reward, format!("cpap-{n}"))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MhmhKind {
    Greedy,
    Reliable,
}

/// Passive-dynamics parameters of one MHMH arm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MhmhParams {
    /// Start → engaged without a call.
    pub eta_start: f64,
    /// Reliable arms: stay engaged without a call (ignored for greedy arms).
    pub eta_engaged: f64,
    /// Dropout → start under either action.
    pub eta_dropout: f64,
    /// Reliable engaged reward (greedy arms pay 1).
    pub c: f64,
}

pub const MHMH_START: usize = 0;
pub const MHMH_ENGAGED: usize = 1;
pub const MHMH_DROPOUT: usize = 2;

/// One MHMH arm over (start, engaged, dropout).
pub fn mhmh_arm(kind: MhmhKind, params: MhmhParams, label: String) -> Result<ArmModel, DomainError> {
    for (name, v) in [
        ("eta_start", params.eta_start),
        ("eta_engaged", params.eta_engaged),
        ("eta_dropout", params.eta_dropout),
        ("c", params.c),
    ] {
        if !(v > 0.0 && v < 1.0) {
            return Err(DomainError::Parameters(format!("MHMH {name} = {v} outside (0, 1)")));
        }
    }
    let (ss, se, sd) = (MHMH_START, MHMH_ENGAGED, MHMH_DROPOUT);
    let mut p = dense_rows(3);
    p[ss][1][se] = 1.0;
    p[ss][0][se] = params.eta_start;
    p[ss][0][sd] = 1.0 - params.eta_start;
    match kind {
        MhmhKind::Greedy => {
            p[se][1][sd] = 1.0;
            p[se][0][sd] = 1.0;
        }
        MhmhKind::Reliable => {
            p[se][1][se] = 1.0;
            p[se][0][se] = params.eta_engaged;
            p[se][0][sd] = 1.0 - params.eta_engaged;
        }
    }
    for a in 0..2 {
        p[sd][a][ss] = params.eta_dropout;
        p[sd][a][sd] = 1.0 - params.eta_dropout;
    }
    let mut rewards = vec![[0.0; 2]; 3];
    rewards[se][1] = match kind {
        MhmhKind::Greedy => 1.0,
        MhmhKind::Reliable => params.c,
    };
    Ok(ArmModel::new(label, &p, &rewards)?)
}

/// Kind of MHMH type `n` out of `n_types`: the first `⌈N/2⌉` are greedy.
pub fn mhmh_kind(n: usize, n_types: usize) -> MhmhKind {
    if n < n_types.div_ceil(2) {
        MhmhKind::Greedy
    } else {
        MhmhKind::Reliable
    }
}

pub fn make_mhmh(spec: &DomainSpec) -> Result<Vec<ArmModel>, DomainError> {
    let p = &spec.params;
    for (name, (lo, hi)) in [("mhmh_eta", p.mhmh_eta), ("mhmh_c", p.mhmh_c)] {
        if !(0.0 <= lo && lo < hi && hi <= 1.0) {
            return Err(DomainError::Parameters(format!("{name} range ({lo}, {hi}) not inside (0, 1)")));
        }
    }
    (0..spec.n_types)
        .map(|n| {
            let mut r = type_stream(spec, n);
            let params = MhmhParams {
                eta_start: draw_open(&mut r, p.mhmh_eta),
                eta_engaged: draw_open(&mut r, p.mhmh_eta),
                eta_dropout: draw_open(&mut r, p.mhmh_eta),
                c: draw_open(&mut r, p.mhmh_c),
            };
            let kind = mhmh_kind(n, spec.n_types);
            mhmh_arm(kind, params, format!("mhmh-{}-{n}", if kind == MhmhKind::Greedy { "greedy" } else { "reliable" }))
        })
        .collect()
}

/// Rates of one Ehrenfest project.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EhrenfestParams {
    pub c: f64,
    pub mu: f64,
    pub lambda: f64,
}

/// Discretized Ehrenfest project over states `0..=top`.
pub fn ehrenfest_arm(params: EhrenfestParams, top: usize, dt: f64, label: String) -> Result<ArmModel, DomainError> {
    let EhrenfestParams { c, mu, lambda } = params;
    let s_max = top as f64;
    if top == 0 || dt <= 0.0 || mu < 0.0 || lambda < 0.0 || dt * (mu * s_max).max(lambda * s_max) >= 1.0 {
        return Err(DomainError::Parameters(format!(
            "invalid discretization: dt = {dt}, mu = {mu}, lambda = {lambda}, S = {top}"
        )));
    }
    let n = top + 1;
    let mut p = dense_rows(n);
    let mut rewards = vec![[0.0; 2]; n];
    for s in 0..n {
        let sf = s as f64;
        let down = mu * sf * dt;
        let up = lambda * (s_max - sf) * dt;
        if s > 0 {
            p[s][1][s - 1] = down;
        }
        p[s][1][s] += 1.0 - down;
        if s < top {
            p[s][0][s + 1] = up;
        }
        p[s][0][s] += 1.0 - up;
        rewards[s][1] = c * sf * dt;
    }
    Ok(ArmModel::new(label, &p, &rewards)?)
}

/// Per-type Ehrenfest rates drawn from the configured ranges.
pub fn ehrenfest_params(spec: &DomainSpec) -> Vec<EhrenfestParams> {
    let p = &spec.params;
    (0..spec.n_types)
        .map(|n| {
            let mut r = type_stream(spec, n);
            EhrenfestParams {
                c: draw_open(&mut r, p.ehrenfest_c),
                mu: draw_open(&mut r, p.ehrenfest_mu),
                lambda: draw_open(&mut r, p.ehrenfest_lambda),
            }
        })
        .collect()
}

pub fn make_ehrenfest(spec: &DomainSpec) -> Result<Vec<ArmModel>, DomainError> {
    ehrenfest_params(spec)
        .into_iter()
        .enumerate()
        .map(|(n, params)| ehrenfest_arm(params, spec.n_states, spec.params.ehrenfest_dt, format!("ehrenfest-{n}")))
        .collect()
}

/// Continuous-time Whittle index of an Ehrenfest project in state `s`.
pub fn closed_form_whittle(c: f64, mu: f64, lambda: f64, top: usize, s: usize) -> f64 {
    let (s, top) = (s as f64, top as f64);
    c / (mu * top) * (mu * s * s - lambda * (top - s).powi(2))
}

/// Row drawn uniformly from the probability simplex.
fn flat_dirichlet(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    let draws: Vec<f64> = (0..n).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
    let total: f64 = draws.iter().sum();
    draws.into_iter().map(|x| x / total).collect()
}

pub fn make_random(spec: &DomainSpec) -> Result<Vec<ArmModel>, DomainError> {
    if spec.n_states < 2 {
        return Err(DomainError::Parameters("random family needs at least 2 states".into()));
    }
    let ns = spec.n_states;
    (0..spec.n_types)
        .map(|n| {
            let mut r = type_stream(spec, n);
            let p: Vec<[Vec<f64>; 2]> = (0..ns).map(|_| [flat_dirichlet(&mut r, ns), flat_dirichlet(&mut r, ns)]).collect();
            let rewards: Vec<[f64; 2]> = (0..ns).map(|s| [0.0, r.random::<f64>() * (s + 1) as f64]).collect();
            Ok(ArmModel::new(format!("random-{n}"), &p, &rewards)?)
        })
        .collect()
}

pub fn generate(spec: &DomainSpec) -> Result<Vec<ArmModel>, DomainError> {
    match spec.family {
        Family::Cpap => make_cpap(spec),
        Family::Mhmh => make_mhmh(spec),
        Family::Ehrenfest => make_ehrenfest(spec),
        Family::Random => make_random(spec),
    }
}

/// Per-type initial distributions: MHMH arms all start in the start state;
/// every other family starts each type in one fixed state drawn by seed.
pub fn initial_distributions(spec: &DomainSpec, types: &[ArmModel]) -> Vec<Vec<f64>> {
    types
        .iter()
        .enumerate()
        .map(|(n, m)| {
            let ns = m.n_normal();
            let start = match spec.family {
                Family::Mhmh => MHMH_START,
                _ => (rng::uniform(&[spec.seed, spec.family.tag(), n as u64, 0x1417]) * ns as f64) as usize,
            };
            let mut d = vec![0.0; ns];
            d[start.min(ns - 1)] = 1.0;
            d
        })
        .collect()
}

/// The `(N, S, K, ρ, T)` tuple that names an experiment setting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Setting {
    pub n_types: usize,
    pub n_states: usize,
    pub budget: usize,
    pub rho: usize,
    pub horizon: usize,
}

impl std::fmt::Display for Setting {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({},{},{},{},{})", self.n_types, self.n_states, self.budget, self.rho, self.horizon)
    }
}

/// Generates a full instance for `setting` with the given seed.
pub fn build_instance(
    family: Family,
    setting: Setting,
    params: &FamilyParams,
    seed: u64,
) -> Result<Instance, DomainError> {
    let spec = DomainSpec {
        family,
        n_types: setting.n_types,
        n_states: setting.n_states,
        seed,
        params: params.clone(),
    };
    let types = generate(&spec)?;
    let initial = initial_distributions(&spec, &types);
    Ok(Instance::new(types, setting.rho, setting.budget, setting.horizon, initial)?)
}
