//! Replication-study metrics: relative bias, empirical SE, hard-threshold
//! recovery scores, correlations, and posterior predictive action probabilities.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::markov::HmmParams;
use crate::math::sqrt;
use crate::tasks::{state_ddm, DriftTable, TaskModel, TrialRecord, SHARED};
use crate::wiener::upper_probability;

/// Bias of replicate estimates. When the truth is zero the value is the
/// absolute bias and `relative` is false.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bias {
    pub value: f64,
    pub relative: bool,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn relative_bias(estimates: &[f64], truth: f64) -> Result<Bias> {
    if estimates.is_empty() {
        return Err(Error::InvalidData("relative bias needs at least one replicate".into()));
    }
    let diff = mean(estimates) - truth;
    Ok(if truth == 0.0 {
        Bias {
            value: diff,
            relative: false,
        }
    } else {
        Bias {
            value: diff / truth,
            relative: true,
        }
    })
}

/// Sample SD of the replicate estimates (divisor `n - 1`).
pub fn empirical_se(estimates: &[f64]) -> Result<f64> {
    let n = estimates.len();
    if n < 2 {
        return Err(Error::InvalidData("empirical SE needs at least two replicates".into()));
    }
    let m = mean(estimates);
    let ss: f64 = estimates.iter().map(|v| (v - m) * (v - m)).sum();
    Ok(sqrt(ss / (n - 1) as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecoveryScores {
    pub accuracy: f64,
    pub f1: f64,
    /// Neither predictions nor truth contain a positive; F1 is reported as 0.
    pub f1_undefined: bool,
}

/// Accuracy and F1 of `probs ≥ 0.5` against 0/1 labels, class 1 positive.
pub fn recovery_scores(probs: &[f64], truth: &[u8]) -> Result<RecoveryScores> {
    if probs.len() != truth.len() {
        return Err(Error::Dimension(format!(
            "{} predictions for {} labels",
            probs.len(),
            truth.len()
        )));
    }
    if probs.is_empty() {
        return Err(Error::InvalidData("recovery scores need at least one label".into()));
    }
    let (mut tp, mut fp, mut fneg, mut correct) = (0usize, 0usize, 0usize, 0usize);
    for (&p, &t) in probs.iter().zip(truth) {
        let pred = p >= 0.5;
        let pos = t == 1;
        match (pred, pos) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fneg += 1,
            (false, false) => {}
        }
        if pred == pos {
            correct += 1;
        }
    }
    let accuracy = correct as f64 / probs.len() as f64;
    let denom = 2 * tp + fp + fneg;
    Ok(RecoveryScores {
        accuracy,
        f1: if denom == 0 { 0.0 } else { 2.0 * tp as f64 / denom as f64 },
        f1_undefined: denom == 0,
    })
}

/// Relative spread below which a sample counts as constant.
const ROUNDING_SPREAD: f64 = 1e-12;

/// Pearson correlation; `None` when either side has zero variance, counting
/// spread at rounding level of the values as zero.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<Option<f64>> {
    if x.len() != y.len() {
        return Err(Error::Dimension(format!("{} vs {} values", x.len(), y.len())));
    }
    if x.len() < 3 {
        return Err(Error::InvalidData("correlation needs at least three pairs".into()));
    }
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    let n = x.len() as f64;
    let flat = |ss: f64, m: f64, v: &[f64]| {
        let scale = v.iter().fold(m.abs(), |acc, a| acc.max(a.abs()));
        let spread = ROUNDING_SPREAD * scale;
        ss <= n * spread * spread
    };
    if flat(sxx, mx, x) || flat(syy, my, y) {
        return Ok(None);
    }
    Ok(Some((sxy / sqrt(sxx * syy)).clamp(-1.0, 1.0)))
}

/// Per shared component, correlation across subjects of estimated and true values.
pub fn shared_param_correlation(estimated: &[[f64; SHARED]], truth: &[[f64; SHARED]]) -> Result<[Option<f64>; SHARED]> {
    let mut out = [None; SHARED];
    for (c, r) in out.iter_mut().enumerate() {
        let e: Vec<f64> = estimated.iter().map(|v| v[c]).collect();
        let t: Vec<f64> = truth.iter().map(|v| v[c]).collect();
        *r = pearson(&e, &t)?;
    }
    Ok(out)
}

/// Posterior predictive probability of action 1 on each trial:
/// `Σ_l ζ_jl Pr(upper boundary | state l)`.
pub fn predicted_action_probabilities(
    task: &dyn TaskModel,
    trials: &[TrialRecord],
    shared: &[f64; SHARED],
    scalars: &[f64],
    zeta: &[[f64; 2]],
) -> Result<Vec<f64>> {
    if zeta.len() != trials.len() {
        return Err(Error::Dimension(format!(
            "{} state weights for {} trials",
            zeta.len(),
            trials.len()
        )));
    }
    let mut dt = DriftTable::default();
    task.drifts(trials, scalars, &mut dt);
    let tau = scalars[task.nondecision_index()];
    let lapsed = task.lapsed_start();
    let mut out = Vec::with_capacity(trials.len());
    for (j, z) in zeta.iter().enumerate() {
        let mut p = 0.0;
        for l in 0..2u8 {
            let ddm = state_ddm(shared, l, lapsed, dt.drift[j][l as usize], tau);
            ddm.validate()?;
            p += z[l as usize] * upper_probability(ddm.boundary, ddm.start_frac, ddm.drift);
        }
        out.push(p);
    }
    Ok(out)
}

/// Named scalar estimates of one task: task scalars, initial engaged
/// probability, then transition coefficients by origin state.
pub fn task_parameters(task: &dyn TaskModel, scalars: &[f64], hmm: &HmmParams) -> Vec<(String, f64)> {
    let prefix = task.name();
    let mut out: Vec<(String, f64)> = task
        .scalar_names()
        .iter()
        .zip(scalars)
        .map(|(n, &v)| (format!("{prefix}.{n}"), v))
        .collect();
    out.push((format!("{prefix}.initial_engaged"), hmm.init_prob_engaged));
    for (l, c) in hmm.trans_coef.iter().enumerate() {
        out.push((format!("{prefix}.transition_from{l}.intercept"), c.intercept));
        for (s, &g) in c.slopes.iter().enumerate() {
            out.push((format!("{prefix}.transition_from{l}.x{}", s + 1), g));
        }
    }
    out
}

/// One row of the bias table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterSummary {
    pub parameter: String,
    pub truth: f64,
    pub mean: f64,
    pub rb: f64,
    /// False when the truth is zero and `rb` holds the absolute bias.
    pub rb_relative: bool,
    /// Absent with fewer than two replicates.
    pub ese: Option<f64>,
}

pub fn summarize_parameter(parameter: &str, truth: f64, estimates: &[f64]) -> Result<ParameterSummary> {
    let b = relative_bias(estimates, truth)?;
    Ok(ParameterSummary {
        parameter: parameter.into(),
        truth,
        mean: mean(estimates),
        rb: b.value,
        rb_relative: b.relative,
        ese: empirical_se(estimates).ok(),
    })
}

/// Recovery scores of one task in one replicate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskScores {
    pub state: RecoveryScores,
    pub action: RecoveryScores,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationSummary {
    pub parameters: Vec<ParameterSummary>,
    /// `[replicate][task]`.
    pub scores: Vec<Vec<TaskScores>>,
    /// `[replicate][task][component]`.
    pub correlations: Vec<Vec<[Option<f64>; SHARED]>>,
}

impl ReplicationSummary {
    /// Mean over replicates of a per-task score.
    pub fn mean_score(&self, task: usize, pick: impl Fn(&TaskScores) -> f64) -> f64 {
        let v: Vec<f64> = self.scores.iter().map(|r| pick(&r[task])).collect();
        mean(&v)
    }

    pub fn parameter(&self, name: &str) -> Option<&ParameterSummary> {
        self.parameters.iter().find(|p| p.parameter == name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::markov::TransitionCoef;
    use crate::tasks::TaskSpec;

    #[test]
    fn relative_bias_examples() {
        assert_eq!(relative_bias(&[2.0, 2.0], 2.0).unwrap().value, 0.0);
        assert!((relative_bias(&[3.0], 2.0).unwrap().value - 0.5).abs() < 1e-15);
        let rb = relative_bias(&[0.0241], 0.03).unwrap();
        assert!((rb.value + 0.1967).abs() < 1e-3 && rb.relative);
        let z = relative_bias(&[0.1, 0.3], 0.0).unwrap();
        assert!(!z.relative && (z.value - 0.2).abs() < 1e-15);
        assert!(relative_bias(&[], 1.0).is_err());
    }

    #[test]
    fn empirical_se_examples() {
        assert_eq!(empirical_se(&[4.0; 5]).unwrap(), 0.0);
        assert!((empirical_se(&[1.0, 3.0]).unwrap() - 2f64.sqrt()).abs() < 1e-15);
        assert!(empirical_se(&[1.0]).is_err());
    }

    #[test]
    fn empirical_se_of_normal_draws() {
        use rand_distr::{Distribution, Normal};
        let mut rng = crate::rng::keyed_rng(3, &[1]);
        let d = Normal::new(0.0, 2.5).unwrap();
        let v: Vec<f64> = (0..10_000).map(|_| d.sample(&mut rng)).collect();
        // SD of the sample SD is about σ/√(2n) = 0.7%.
        assert!((empirical_se(&v).unwrap() / 2.5 - 1.0).abs() < 0.03);
    }

    #[test]
    fn recovery_score_examples() {
        let s = recovery_scores(&[0.9, 0.4, 0.2, 0.8], &[1, 1, 0, 1]).unwrap();
        // tp 2, fn 1, tn 1: precision 1, recall 2/3
        assert!((s.accuracy - 0.75).abs() < 1e-15);
        assert!((s.f1 - 0.8).abs() < 1e-15);
        let s = recovery_scores(&[1.0, 0.0, 1.0], &[1, 0, 1]).unwrap();
        assert_eq!((s.accuracy, s.f1), (1.0, 1.0));
        let s = recovery_scores(&[0.0, 0.1], &[1, 1]).unwrap();
        assert_eq!((s.accuracy, s.f1), (0.0, 0.0));
        let s = recovery_scores(&[0.0, 0.1], &[0, 0]).unwrap();
        assert!(s.f1_undefined && s.accuracy == 1.0);
        assert_eq!(recovery_scores(&[0.5], &[1]).unwrap().accuracy, 1.0);
        assert!(recovery_scores(&[0.5], &[1, 0]).is_err());
    }

    #[test]
    fn pearson_examples() {
        let t = [1.0, 2.0, 4.0, 3.5];
        let neg: Vec<f64> = t.iter().map(|v| -v).collect();
        assert!((pearson(&t, &t).unwrap().unwrap() - 1.0).abs() < 1e-15);
        assert!((pearson(&t, &neg).unwrap().unwrap() + 1.0).abs() < 1e-15);
        assert_eq!(pearson(&t, &[2.0; 4]).unwrap(), None);
        let jittered = [0.3, 0.3 + 1e-16, 0.3 - 5e-17, 0.3];
        assert_eq!(pearson(&t, &jittered).unwrap(), None);
        assert!(pearson(&t[..2], &t[..2]).is_err());
        let est = [[1.0, 2.0, 0.3], [2.0, 2.0, 0.4], [3.0, 2.0, 0.2]];
        let r = shared_param_correlation(&est, &est).unwrap();
        assert_eq!(r[1], None);
        assert!((r[0].unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn action_probabilities_mix_state_choice_probabilities() {
        let ft = TaskSpec::Flanker;
        let trials = [
            TrialRecord {
                stimulus: 1,
                action: 1,
                rt: 0.5,
                reward: None,
            },
            TrialRecord {
                stimulus: 0,
                action: 0,
                rt: 0.6,
                reward: None,
            },
        ];
        let shared = [1.1, 2.0, 1.0 / 3.0];
        let scalars = [3.0, 1.5, 0.1, 0.14];
        let zeta = [[0.25, 0.75], [1.0, 0.0]];
        let p = predicted_action_probabilities(&ft, &trials, &shared, &scalars, &zeta).unwrap();
        let lapsed = upper_probability(1.1, 1.0 / 3.0, 0.3 + 1.5);
        let engaged = upper_probability(2.0, 1.0 / 3.0, 3.0 + 1.5);
        assert!((p[0] - (0.25 * lapsed + 0.75 * engaged)).abs() < 1e-14);
        assert!((p[1] - upper_probability(1.1, 1.0 / 3.0, 0.3 - 1.5)).abs() < 1e-14);
    }

    #[test]
    fn parameter_names_follow_storage_order() {
        let h = HmmParams::new(0.9, TransitionCoef::zeros(1), TransitionCoef::zeros(1));
        let names: Vec<String> = task_parameters(&TaskSpec::reward_learning(), &[0.03, 2.5, 0.14], &h)
            .into_iter()
            .map(|p| p.0)
            .collect();
        assert_eq!(names[0], "prt.learn_rate");
        assert_eq!(names[3], "prt.initial_engaged");
        assert_eq!(names[6], "prt.transition_from1.intercept");
        assert_eq!(names.len(), 8);
    }
}
