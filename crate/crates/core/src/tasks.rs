//! Task emission models: the reward-learning task (Q-learning drift) and the
//! flanker task (controlled plus automatic drift), composed into the per-state
//! drift-diffusion emission.
//!
//! Coding: action 1 (rich choice / correct response) is the upper boundary.
//! Latent state 1 is engaged/focused, state 0 lapsed/reduced.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::wiener::{self, DdmParams, LogDensityGrad};

/// Number of subject-level shared components per task: `(α_lapsed, α_engaged, β_engaged)`.
pub const SHARED: usize = 3;

/// Names of the shared components, in storage order.
pub const SHARED_NAMES: [&str; SHARED] = ["boundary_lapsed", "boundary_engaged", "start_engaged"];

/// One observed trial.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub stimulus: u8,
    pub action: u8,
    /// Response time in seconds.
    pub rt: f64,
    pub reward: Option<u8>,
}

impl TrialRecord {
    pub fn validate(&self, needs_reward: bool) -> Result<()> {
        if self.stimulus > 1 || self.action > 1 {
            return Err(Error::InvalidData(alloc::format!(
                "stimulus/action must be 0 or 1, got {}/{}",
                self.stimulus,
                self.action
            )));
        }
        if !(self.rt.is_finite() && self.rt > 0.0) {
            return Err(Error::InvalidData(alloc::format!(
                "response time must be positive, got {}",
                self.rt
            )));
        }
        match (needs_reward, self.reward) {
            (true, Some(r)) if r <= 1 => Ok(()),
            (true, _) => Err(Error::InvalidData("reward-learning trial needs a 0/1 reward".into())),
            (false, None) => Ok(()),
            (false, Some(_)) => Err(Error::InvalidData("reward given for a task without rewards".into())),
        }
    }
}

/// Expected reward `Q(a, s)`, stored as `values[a][s]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QTable {
    pub values: [[f64; 2]; 2],
}

impl Default for QTable {
    fn default() -> Self {
        Self {
            values: [[0.5, 0.0], [0.0, 0.5]],
        }
    }
}

impl QTable {
    #[inline]
    pub fn get(&self, action: u8, stimulus: u8) -> f64 {
        self.values[action as usize][stimulus as usize]
    }
}

/// Task-specific scalars of the reward-learning task.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrtParams {
    /// Learning rate `b ∈ (0, 1)`.
    pub learn_rate: f64,
    /// Reward sensitivity `c > 0`.
    pub reward_sensitivity: f64,
    pub nondecision: f64,
}

impl PrtParams {
    pub fn to_scalars(&self) -> Vec<f64> {
        vec![self.learn_rate, self.reward_sensitivity, self.nondecision]
    }
}

/// Task-specific scalars of the flanker task.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FtParams {
    pub drift_controlled: f64,
    pub drift_automatic: f64,
    /// Attenuation `ρ ∈ (0, 1)` of controlled drift in the reduced state.
    pub attenuation: f64,
    pub nondecision: f64,
}

impl FtParams {
    pub fn to_scalars(&self) -> Vec<f64> {
        vec![
            self.drift_controlled,
            self.drift_automatic,
            self.attenuation,
            self.nondecision,
        ]
    }
}

/// Subject-level shared parameters of one task on the natural scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubjectSharedParams {
    pub boundary_lapsed: f64,
    pub boundary_engaged: f64,
    pub start_engaged: f64,
}

impl SubjectSharedParams {
    pub fn as_array(&self) -> [f64; SHARED] {
        [self.boundary_lapsed, self.boundary_engaged, self.start_engaged]
    }

    pub fn from_array(a: [f64; SHARED]) -> Self {
        Self {
            boundary_lapsed: a[0],
            boundary_engaged: a[1],
            start_engaged: a[2],
        }
    }
}

/// Engaged-state drift `c {Q(1,s) - Q(0,s)}`; the lapsed state has zero drift.
#[inline]
pub fn prt_drift(q: &QTable, stimulus: u8, state: u8, c: f64) -> f64 {
    if state == 0 {
        0.0
    } else {
        c * (q.get(1, stimulus) - q.get(0, stimulus))
    }
}

/// One Q-learning step on the realized `(action, stimulus)` pair.
pub fn q_update(q: &QTable, action: u8, stimulus: u8, reward: u8, learn_rate: f64) -> QTable {
    let mut next = *q;
    let cell = &mut next.values[action as usize][stimulus as usize];
    *cell += learn_rate * (reward as f64 - *cell);
    next
}

#[inline]
fn congruency_sign(stimulus: u8) -> f64 {
    if stimulus == 1 {
        1.0
    } else {
        -1.0
    }
}

/// `v_c + sgn(s - 1/2) v_a` when focused, `ρ v_c + sgn(s - 1/2) v_a` when reduced.
#[inline]
pub fn ft_drift(stimulus: u8, state: u8, p: &FtParams) -> f64 {
    let controlled = if state == 1 {
        p.drift_controlled
    } else {
        p.attenuation * p.drift_controlled
    };
    controlled + congruency_sign(stimulus) * p.drift_automatic
}

/// Task-specific parameters of either built-in paradigm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TaskParams {
    Prt(PrtParams),
    Ft(FtParams),
}

/// Log emission density of one trial in one latent state.
///
/// `q` is the Q-table in force before this trial and is required for the
/// reward-learning task.
pub fn emission_log_likelihood(
    trial: &TrialRecord,
    state: u8,
    shared: &SubjectSharedParams,
    task_params: &TaskParams,
    q: Option<&QTable>,
) -> Result<f64> {
    let (drift, lapsed_start, tau) = match task_params {
        TaskParams::Prt(p) => {
            let q = q.ok_or_else(|| Error::InvalidData("reward-learning emission needs a Q-table".into()))?;
            (
                prt_drift(q, trial.stimulus, state, p.reward_sensitivity),
                Some(0.5),
                p.nondecision,
            )
        }
        TaskParams::Ft(p) => (ft_drift(trial.stimulus, state, p), None, p.nondecision),
    };
    let ddm = state_ddm(&shared.as_array(), state, lapsed_start, drift, tau);
    wiener::wfpt_log_density(trial.rt, trial.action, &ddm)
}

/// Assemble the DDM parameters of `state` from shared components and the trial drift.
#[inline]
pub fn state_ddm(shared: &[f64; SHARED], state: u8, lapsed_start: Option<f64>, drift: f64, tau: f64) -> DdmParams {
    let (boundary, start_frac) = if state == 0 {
        (shared[0], lapsed_start.unwrap_or(shared[2]))
    } else {
        (shared[1], shared[2])
    };
    DdmParams {
        boundary,
        start_frac,
        drift,
        nondecision: tau,
    }
}

/// Emission log density with partials in the shared components, the drift and τ.
#[derive(Debug, Clone, Copy, Default)]
pub struct EmissionGrad {
    pub value: f64,
    pub d_shared: [f64; SHARED],
    pub d_drift: f64,
    pub d_nondecision: f64,
}

#[inline]
pub fn emission_grad(
    trial: &TrialRecord,
    shared: &[f64; SHARED],
    state: u8,
    lapsed_start: Option<f64>,
    drift: f64,
    tau: f64,
) -> EmissionGrad {
    let ddm = state_ddm(shared, state, lapsed_start, drift, tau);
    let g: LogDensityGrad = wiener::log_density_grad(trial.rt, trial.action == 1, &ddm);
    let mut d_shared = [0.0; SHARED];
    if state == 0 {
        d_shared[0] = g.d_boundary;
        if lapsed_start.is_none() {
            d_shared[2] = g.d_start;
        }
    } else {
        d_shared[1] = g.d_boundary;
        d_shared[2] = g.d_start;
    }
    EmissionGrad {
        value: g.value,
        d_shared,
        d_drift: g.d_drift,
        d_nondecision: g.d_nondecision,
    }
}

/// Support of a task-specific scalar; decides its unconstrained reparameterization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScalarDomain {
    /// `(0, ∞)`, log scale.
    Positive,
    /// `(0, 1)`, logit scale.
    Unit,
    /// `(0, min RT)`, scaled logit.
    NonDecision,
}

/// Per-trial drifts of both states and their derivatives in the task scalars.
#[derive(Debug, Clone, Default)]
pub struct DriftTable {
    pub n_scalars: usize,
    /// `drift[j][state]`
    pub drift: Vec<[f64; 2]>,
    /// Row-major `[trial][state][scalar]`.
    pub grad: Vec<f64>,
}

impl DriftTable {
    pub fn reset(&mut self, n_trials: usize, n_scalars: usize) {
        self.n_scalars = n_scalars;
        self.drift.clear();
        self.drift.resize(n_trials, [0.0; 2]);
        self.grad.clear();
        self.grad.resize(n_trials * 2 * n_scalars, 0.0);
    }

    #[inline]
    pub fn grad(&self, trial: usize, state: usize) -> &[f64] {
        let start = (trial * 2 + state) * self.n_scalars;
        &self.grad[start..start + self.n_scalars]
    }

    #[inline]
    fn grad_mut(&mut self, trial: usize, state: usize) -> &mut [f64] {
        let start = (trial * 2 + state) * self.n_scalars;
        &mut self.grad[start..start + self.n_scalars]
    }
}

/// A behavioral paradigm as seen by the estimator: its task-specific scalars,
/// how trial drifts follow from them, and how the lapsed start is set.
///
/// The shared components `(α_lapsed, α_engaged, β_engaged)` are common to all tasks.
pub trait TaskModel: Send + Sync + fmt::Debug {
    fn name(&self) -> &'static str;
    fn scalar_names(&self) -> &'static [&'static str];
    fn scalar_domains(&self) -> &'static [ScalarDomain];
    /// Index of τ among the scalars.
    fn nondecision_index(&self) -> usize;
    fn uses_reward(&self) -> bool;
    /// Fixed lapsed-state start, or `None` to reuse the shared engaged start.
    fn lapsed_start(&self) -> Option<f64>;
    /// Drifts for every trial and both states, with derivatives in the scalars.
    fn drifts(&self, trials: &[TrialRecord], scalars: &[f64], out: &mut DriftTable);
    /// A neutral starting value for the scalars, given the minimum observed RT.
    fn initial_scalars(&self, min_rt: f64) -> Vec<f64>;
}

/// Reward-learning task with Q-learning driven drift.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RewardLearningTask {
    pub initial_q: QTable,
}

impl RewardLearningTask {
    /// Q-table in force before each trial.
    pub fn q_trajectory(&self, trials: &[TrialRecord], learn_rate: f64) -> Vec<QTable> {
        let mut q = self.initial_q;
        let mut out = Vec::with_capacity(trials.len());
        for t in trials {
            out.push(q);
            q = q_update(&q, t.action, t.stimulus, t.reward.unwrap_or(0), learn_rate);
        }
        out
    }
}

impl TaskModel for RewardLearningTask {
    fn name(&self) -> &'static str {
        "prt"
    }
    fn scalar_names(&self) -> &'static [&'static str] {
        &["learn_rate", "reward_sensitivity", "nondecision"]
    }
    fn scalar_domains(&self) -> &'static [ScalarDomain] {
        &[ScalarDomain::Unit, ScalarDomain::Positive, ScalarDomain::NonDecision]
    }
    fn nondecision_index(&self) -> usize {
        2
    }
    fn uses_reward(&self) -> bool {
        true
    }
    fn lapsed_start(&self) -> Option<f64> {
        Some(0.5)
    }

    fn drifts(&self, trials: &[TrialRecord], scalars: &[f64], out: &mut DriftTable) {
        let (b, c) = (scalars[0], scalars[1]);
        out.reset(trials.len(), 3);
        let mut q = self.initial_q.values;
        // dQ/db, same layout as q
        let mut dq = [[0.0f64; 2]; 2];
        for (j, t) in trials.iter().enumerate() {
            let s = t.stimulus as usize;
            let diff = q[1][s] - q[0][s];
            let ddiff = dq[1][s] - dq[0][s];
            out.drift[j] = [0.0, c * diff];
            let g = out.grad_mut(j, 1);
            g[0] = c * ddiff;
            g[1] = diff;
            // Update on every realized pair whatever the latent state.
            let (a, r) = (t.action as usize, t.reward.unwrap_or(0) as f64);
            let old = q[a][s];
            dq[a][s] = dq[a][s] * (1.0 - b) + (r - old);
            q[a][s] = old + b * (r - old);
        }
    }

    fn initial_scalars(&self, min_rt: f64) -> Vec<f64> {
        vec![0.1, 2.0, 0.9 * min_rt]
    }
}

/// Flanker task with controlled and automatic drift components.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FlankerTask;

impl TaskModel for FlankerTask {
    fn name(&self) -> &'static str {
        "flanker"
    }
    fn scalar_names(&self) -> &'static [&'static str] {
        &["drift_controlled", "drift_automatic", "attenuation", "nondecision"]
    }
    fn scalar_domains(&self) -> &'static [ScalarDomain] {
        &[
            ScalarDomain::Positive,
            ScalarDomain::Positive,
            ScalarDomain::Unit,
            ScalarDomain::NonDecision,
        ]
    }
    fn nondecision_index(&self) -> usize {
        3
    }
    fn uses_reward(&self) -> bool {
        false
    }
    fn lapsed_start(&self) -> Option<f64> {
        None
    }

    fn drifts(&self, trials: &[TrialRecord], scalars: &[f64], out: &mut DriftTable) {
        let p = FtParams {
            drift_controlled: scalars[0],
            drift_automatic: scalars[1],
            attenuation: scalars[2],
            nondecision: scalars[3],
        };
        out.reset(trials.len(), 4);
        for (j, t) in trials.iter().enumerate() {
            let sign = congruency_sign(t.stimulus);
            out.drift[j] = [ft_drift(t.stimulus, 0, &p), ft_drift(t.stimulus, 1, &p)];
            let g0 = out.grad_mut(j, 0);
            g0[0] = p.attenuation;
            g0[1] = sign;
            g0[2] = p.drift_controlled;
            let g1 = out.grad_mut(j, 1);
            g1[0] = 1.0;
            g1[1] = sign;
        }
    }

    fn initial_scalars(&self, min_rt: f64) -> Vec<f64> {
        vec![2.0, 1.0, 0.3, 0.9 * min_rt]
    }
}

/// Serializable choice of a built-in paradigm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TaskSpec {
    RewardLearning {
        #[serde(default)]
        initial_q: QTable,
    },
    Flanker,
}

impl TaskSpec {
    pub fn reward_learning() -> Self {
        TaskSpec::RewardLearning {
            initial_q: QTable::default(),
        }
    }

    pub fn model(&self) -> &dyn TaskModel {
        self
    }

    fn inner(&self) -> (&dyn TaskModel, Option<RewardLearningTask>) {
        match self {
            TaskSpec::RewardLearning { initial_q } => (&FlankerTask, Some(RewardLearningTask { initial_q: *initial_q })),
            TaskSpec::Flanker => (&FlankerTask, None),
        }
    }
}

macro_rules! delegate {
    ($self:ident, $m:ident ( $($arg:expr),* )) => {
        match $self.inner() {
            (_, Some(prt)) => prt.$m($($arg),*),
            (ft, None) => ft.$m($($arg),*),
        }
    };
}

impl TaskModel for TaskSpec {
    fn name(&self) -> &'static str {
        delegate!(self, name())
    }
    fn scalar_names(&self) -> &'static [&'static str] {
        delegate!(self, scalar_names())
    }
    fn scalar_domains(&self) -> &'static [ScalarDomain] {
        delegate!(self, scalar_domains())
    }
    fn nondecision_index(&self) -> usize {
        delegate!(self, nondecision_index())
    }
    fn uses_reward(&self) -> bool {
        delegate!(self, uses_reward())
    }
    fn lapsed_start(&self) -> Option<f64> {
        delegate!(self, lapsed_start())
    }
    fn drifts(&self, trials: &[TrialRecord], scalars: &[f64], out: &mut DriftTable) {
        delegate!(self, drifts(trials, scalars, out))
    }
    fn initial_scalars(&self, min_rt: f64) -> Vec<f64> {
        delegate!(self, initial_scalars(min_rt))
    }
}
