//! Synthetic multi-task datasets drawn from the full generative model: binary
//! covariates, Gaussian factors, covariate-driven latent-state chains, and
//! state-dependent diffusion decisions with online reward learning.

use alloc::format;
use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, RngExt};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Subject};
use crate::error::{Error, Result};
use crate::estimator::{ModelParams, ModelSpec};
use crate::exec::{Executor, Sequential};
use crate::factor::{FactorModel, TaskLoadings};
use crate::markov::{transition_matrix, HmmParams, TransitionCoef};
use crate::math::ln;
use crate::rng::keyed_rng;
use crate::tasks::{prt_drift, q_update, state_ddm, DriftTable, TaskModel, TaskSpec, TrialRecord, SHARED};
use crate::wiener::{sample_ddm, SamplerConfig};

const KEY_SUBJECT: u64 = 0x7375_626a;
const KEY_TRIAL: u64 = 0x7472_6961;

/// Which loading matrices generated the data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LoadingSetting {
    /// Loadings shared across tasks.
    Sharing,
    /// All loadings zero.
    None,
    /// User-supplied loadings.
    Custom,
}

/// Built-in study designs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Setting1,
    Setting2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub n_subjects: usize,
    /// Trials per task.
    pub trials: Vec<usize>,
    /// Probability of stimulus 1 per task (rich in reward learning, congruent in flanker).
    pub stimulus_prob: Vec<f64>,
    /// Probability that each binary covariate equals 1.
    pub covariate_prob: f64,
    /// Reward probability after a correct response to the rich stimulus.
    pub reward_prob_rich: f64,
    /// Reward probability after a correct response to the lean stimulus.
    pub reward_prob_lean: f64,
    pub spec: ModelSpec,
    pub true_params: ModelParams,
    pub psi_setting: LoadingSetting,
    pub seed: u64,
    /// Replicate index, part of every random-stream key.
    #[serde(default)]
    pub replicate: u64,
    #[serde(default)]
    pub sampler: SamplerConfig,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let k = self.spec.n_tasks();
        self.spec.validate()?;
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.n_subjects == 0 {
            return bad("n_subjects must be positive");
        }
        if self.trials.len() != k || self.stimulus_prob.len() != k {
            return bad("trials and stimulus_prob need one entry per task");
        }
        if self.trials.contains(&0) {
            return bad("trial counts must be positive");
        }
        let probs = self
            .stimulus_prob
            .iter()
            .chain([&self.covariate_prob, &self.reward_prob_rich, &self.reward_prob_lean]);
        for &p in probs {
            if !(0.0..=1.0).contains(&p) {
                return bad("probabilities must lie in [0, 1]");
            }
        }
        let tp = &self.true_params;
        if tp.factor.tasks.len() != k || tp.scalars.len() != k || tp.hmm.len() != k {
            return bad("true_params must cover every task");
        }
        tp.factor.validate()?;
        let p = tp.hmm[0].n_covariates();
        for kk in 0..k {
            let task = &self.spec.tasks[kk];
            if tp.scalars[kk].len() != task.scalar_names().len() {
                return Err(Error::Config(format!(
                    "task {kk}: expected scalars {:?}",
                    task.scalar_names()
                )));
            }
            if tp.hmm[kk].n_covariates() != p || tp.factor.tasks[kk].covar_load.len() != p {
                return bad("every task needs the same number of covariates");
            }
            let h = &tp.hmm[kk];
            if !(h.init_prob_engaged >= 0.0 && h.init_prob_engaged <= 1.0) {
                return bad("initial state probabilities must lie in [0, 1]");
            }
        }
        if self.psi_setting == LoadingSetting::None
            && tp
                .factor
                .tasks
                .iter()
                .flat_map(|t| t.factor_load.iter().flatten())
                .any(|&v| v != 0.0)
        {
            return bad("the no-sharing setting requires all loadings to be zero");
        }
        Ok(())
    }

    pub fn n_covariates(&self) -> usize {
        self.true_params.hmm.first().map_or(0, |h| h.n_covariates())
    }
}

/// Latent quantities behind a simulated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimTruth {
    pub params: ModelParams,
    /// Per subject, the factor draw.
    pub factors: Vec<Vec<f64>>,
    /// `[subject][task][trial]` latent states.
    pub states: Vec<Vec<Vec<u8>>>,
    /// `[subject][task]` natural-scale shared components.
    pub shared: Vec<Vec<[f64; SHARED]>>,
}

fn coef(intercept: f64, slope: f64) -> TransitionCoef {
    TransitionCoef {
        intercept,
        slopes: vec![slope],
    }
}

/// Population values common to both designs, with the design's loadings.
pub fn setting_preset(which: Preset, n_subjects: usize, seed: u64) -> SimConfig {
    let spec = ModelSpec::standard(vec![TaskSpec::reward_learning(), TaskSpec::Flanker]);
    let (psi_rl, psi_fl, setting) = match which {
        Preset::Setting1 => (
            vec![vec![0.1, 0.2, -0.1], vec![0.0, 0.1, -0.1]],
            vec![vec![0.1, 0.15, -0.1], vec![-0.15, -0.1, 0.1]],
            LoadingSetting::Sharing,
        ),
        Preset::Setting2 => (vec![vec![0.0; 3]; 2], vec![vec![0.0; 3]; 2], LoadingSetting::None),
    };
    let task = |mu: [f64; 3], psi: Vec<Vec<f64>>, k: usize| {
        let mut t = TaskLoadings::new(mu.to_vec(), 1, 2, spec.shared_mask[k].clone(), spec.links[k].clone());
        t.factor_load = psi;
        t
    };
    let true_params = ModelParams {
        factor: FactorModel {
            n_factors: 2,
            tasks: vec![
                task([ln(0.4), ln(1.5), ln(1.2)], psi_rl, 0),
                task([ln(1.1), ln(2.0), ln(0.5)], psi_fl, 1),
            ],
        },
        scalars: vec![vec![0.03, 2.5, 0.14], vec![3.0, 1.5, 0.1, 0.14]],
        hmm: vec![
            HmmParams::new(0.95, coef(-0.3, -0.3), coef(1.3, 1.3)),
            HmmParams::new(0.8, coef(-0.6, -0.6), coef(1.2, 1.2)),
        ],
    };
    SimConfig {
        n_subjects,
        trials: vec![100, 70],
        stimulus_prob: vec![0.5, 0.65],
        covariate_prob: 0.7,
        reward_prob_rich: 0.75,
        reward_prob_lean: 0.30,
        spec,
        true_params,
        psi_setting: setting,
        seed,
        replicate: 0,
        sampler: SamplerConfig::default(),
    }
}

struct SimulatedSubject {
    subject: Subject,
    factors: Vec<f64>,
    states: Vec<Vec<u8>>,
    shared: Vec<[f64; SHARED]>,
}

fn bernoulli<R: Rng + ?Sized>(rng: &mut R, p: f64) -> u8 {
    u8::from(rng.random::<f64>() < p)
}

fn simulate_task(cfg: &SimConfig, i: usize, k: usize, x: &[f64], shared: &[f64; SHARED]) -> Result<(Vec<TrialRecord>, Vec<u8>)> {
    let task = &cfg.spec.tasks[k];
    let scalars = &cfg.true_params.scalars[k];
    let h = &cfg.true_params.hmm[k];
    let c = transition_matrix(h, x);
    let tau = scalars[task.nondecision_index()];
    let lapsed = task.lapsed_start();
    let mut q = match task {
        TaskSpec::RewardLearning { initial_q } => Some(*initial_q),
        TaskSpec::Flanker => None,
    };
    let mut trials = Vec::with_capacity(cfg.trials[k]);
    let mut states = Vec::with_capacity(cfg.trials[k]);
    let mut state = 0u8;
    let mut single = DriftTable::default();
    for j in 0..cfg.trials[k] {
        let mut rng = keyed_rng(cfg.seed, &[KEY_TRIAL, cfg.replicate, i as u64, k as u64, j as u64]);
        let p_engaged = if j == 0 { h.init_prob_engaged } else { c[state as usize][1] };
        state = bernoulli(&mut rng, p_engaged);
        let stimulus = bernoulli(&mut rng, cfg.stimulus_prob[k]);
        let drift = match (task, &q) {
            (TaskSpec::RewardLearning { .. }, Some(q)) => prt_drift(q, stimulus, state, scalars[1]),
            _ => {
                let probe = TrialRecord {
                    stimulus,
                    action: 0,
                    rt: 1.0,
                    reward: None,
                };
                task.drifts(&[probe], scalars, &mut single);
                single.drift[0][state as usize]
            }
        };
        let ddm = state_ddm(shared, state, lapsed, drift, tau);
        let draw = sample_ddm(&ddm, &cfg.sampler, &mut rng)?;
        let reward = match &mut q {
            Some(qt) => {
                let r = if draw.choice != stimulus {
                    0
                } else if stimulus == 1 {
                    bernoulli(&mut rng, cfg.reward_prob_rich)
                } else {
                    bernoulli(&mut rng, cfg.reward_prob_lean)
                };
                *qt = q_update(qt, draw.choice, stimulus, r, scalars[0]);
                Some(r)
            }
            None => None,
        };
        trials.push(TrialRecord {
            stimulus,
            action: draw.choice,
            rt: draw.rt,
            reward,
        });
        states.push(state);
    }
    Ok((trials, states))
}

fn simulate_subject(cfg: &SimConfig, i: usize) -> Result<SimulatedSubject> {
    let mut rng = keyed_rng(cfg.seed, &[KEY_SUBJECT, cfg.replicate, i as u64]);
    let p = cfg.n_covariates();
    let x: Vec<f64> = (0..p).map(|_| f64::from(bernoulli(&mut rng, cfg.covariate_prob))).collect();
    let f: Vec<f64> = (0..cfg.true_params.factor.n_factors)
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();
    let n_tasks = cfg.spec.n_tasks();
    let mut tasks = Vec::with_capacity(n_tasks);
    let mut states = Vec::with_capacity(n_tasks);
    let mut shared = Vec::with_capacity(n_tasks);
    for k in 0..n_tasks {
        let theta = cfg.true_params.factor.subject_params(k, &x, &f);
        let mut sh = [0.0; SHARED];
        sh.copy_from_slice(&theta[..SHARED]);
        let (t, s) = simulate_task(cfg, i, k, &x, &sh)?;
        tasks.push(t);
        states.push(s);
        shared.push(sh);
    }
    Ok(SimulatedSubject {
        subject: Subject {
            id: (i + 1).to_string(),
            covariates: x,
            tasks,
        },
        factors: f,
        states,
        shared,
    })
}

/// Draws a dataset with its latent truth. Output depends only on `cfg`.
pub fn simulate_dataset(cfg: &SimConfig) -> Result<(Dataset, SimTruth)> {
    simulate_dataset_with(cfg, &Sequential)
}

/// As [`simulate_dataset`], spreading subjects over `exec`.
pub fn simulate_dataset_with<E: Executor>(cfg: &SimConfig, exec: &E) -> Result<(Dataset, SimTruth)> {
    cfg.validate()?;
    let sims = exec.map(cfg.n_subjects, |i| simulate_subject(cfg, i));
    let mut subjects = Vec::with_capacity(cfg.n_subjects);
    let mut truth = SimTruth {
        params: cfg.true_params.clone(),
        factors: Vec::with_capacity(cfg.n_subjects),
        states: Vec::with_capacity(cfg.n_subjects),
        shared: Vec::with_capacity(cfg.n_subjects),
    };
    for s in sims {
        let s = s?;
        subjects.push(s.subject);
        truth.factors.push(s.factors);
        truth.states.push(s.states);
        truth.shared.push(s.shared);
    }
    let data = Dataset {
        task_ids: (1..=cfg.spec.n_tasks() as u32).collect(),
        n_covariates: cfg.n_covariates(),
        subjects,
    };
    Ok((data, truth))
}
