//! The EM–VA loop, initialization, restarts and the single-task baseline.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use rand_distr::{Distribution, StandardNormal};

use super::steps::{
    chain_entropy, chain_terms, e_step, gaussian_terms, m_step_ddm, m_step_hmm, m_step_initial, update_variational, Problem,
};
use super::{
    CanonicalFactors, FitConfig, FitObserver, FitResult, IterationRecord, ModelParams, ModelSpec, NoObserver, RestartSummary,
    VariationalState,
};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::exec::Executor;
use crate::factor::{canonicalize, FactorModel, TaskLoadings};
use crate::markov::{HmmParams, TransitionCoef};
use crate::math::{exp, logit, sigmoid, sqrt};
use crate::rng::keyed_rng;
use crate::tasks::{ScalarDomain, TaskModel};

const INIT_PROB_ENGAGED: f64 = 0.9;
const JITTER_SD: f64 = 0.25;
const KEY_JITTER: u64 = 0x6a69_7474;
const KEY_LOADINGS: u64 = 0x6c6f_6164;

fn normal(rng: &mut impl rand::Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Method-of-moments start for restart 0; later restarts jitter it. Loadings
/// are drawn at random whenever factors are present.
pub fn initial_params(problem: &Problem<'_>, restart: usize) -> ModelParams {
    let data = problem.data;
    let cfg = problem.config;
    let d_f = cfg.n_factors;
    let p = data.n_covariates;
    let mut tasks = Vec::new();
    let mut all_scalars = Vec::new();
    let mut hmm = Vec::new();
    for k in 0..data.n_tasks() {
        let task = &problem.spec.tasks[k];
        let links = &problem.spec.links[k];
        let min_rt = data.min_rt(k);
        let mut scalars = task.initial_scalars(min_rt);
        let tau0 = scalars[task.nondecision_index()];
        let (mut sum, mut n) = (0.0, 0usize);
        for s in &data.subjects {
            for t in &s.tasks[k] {
                sum += t.rt;
                n += 1;
            }
        }
        // zero-drift unbiased diffusion: E[decision time] = a²/4
        let mean_decision = (sum / n.max(1) as f64 - tau0).max(1e-3);
        let a = (2.0 * sqrt(mean_decision)).clamp(0.3, 4.0);
        let natural = [0.5 * a, a, 0.5];
        let mut intercept: Vec<f64> = natural
            .iter()
            .enumerate()
            .map(|(c, &v)| links.0[c].forward(v, c).unwrap_or(0.0))
            .collect();

        let task_key = data.task_ids[k] as u64;
        if restart > 0 {
            let mut rng = keyed_rng(cfg.seed, &[KEY_JITTER, restart as u64, task_key]);
            for mu in intercept.iter_mut() {
                *mu += JITTER_SD * normal(&mut rng);
            }
            let upper = problem.tau_upper[k];
            for (v, d) in scalars.iter_mut().zip(task.scalar_domains()) {
                let e = JITTER_SD * normal(&mut rng);
                *v = match d {
                    ScalarDomain::Positive => *v * exp(e),
                    ScalarDomain::Unit => sigmoid(logit(*v) + e),
                    ScalarDomain::NonDecision => upper * sigmoid(logit((*v / upper).clamp(1e-9, 1.0 - 1e-9)) + e),
                };
            }
        }
        let mut loadings = TaskLoadings::new(intercept, p, d_f, problem.spec.shared_mask[k].clone(), links.clone());
        if d_f > 0 {
            let mut rng = keyed_rng(cfg.seed, &[KEY_LOADINGS, restart as u64, task_key]);
            for row in loadings.factor_load.iter_mut() {
                for psi in row.iter_mut() {
                    *psi = cfg.init_loading_sd * normal(&mut rng);
                }
            }
            loadings.enforce_structural_zeros();
        }
        tasks.push(loadings);
        all_scalars.push(scalars);
        hmm.push(HmmParams::new(
            INIT_PROB_ENGAGED,
            TransitionCoef::zeros(p),
            TransitionCoef::zeros(p),
        ));
    }
    ModelParams {
        factor: FactorModel { n_factors: d_f, tasks },
        scalars: all_scalars,
        hmm,
    }
}

fn flatten(params: &ModelParams) -> Vec<f64> {
    let mut v = Vec::new();
    for (k, t) in params.factor.tasks.iter().enumerate() {
        v.extend_from_slice(&t.intercept);
        v.extend(t.covar_load.iter().flatten());
        v.extend(t.factor_load.iter().flatten());
        v.extend_from_slice(&params.scalars[k]);
        let h = &params.hmm[k];
        v.push(h.init_prob_engaged);
        for c in &h.trans_coef {
            v.push(c.intercept);
            v.extend_from_slice(&c.slopes);
        }
    }
    v
}

struct Run {
    params: ModelParams,
    var: VariationalState,
    trace: Vec<f64>,
    converged: bool,
    flagged: BTreeSet<usize>,
}

fn run_em<E: Executor, O: FitObserver + ?Sized>(
    problem: &Problem<'_>,
    mut params: ModelParams,
    restart: usize,
    exec: &E,
    observer: &mut O,
) -> Result<Run> {
    let data = problem.data;
    let cfg = problem.config;
    let n_tasks = data.n_tasks();
    let n_subjects = data.n_subjects();
    let d_f = cfg.n_factors;
    let n_trials = data.n_trials().max(1) as f64;
    let mut var = VariationalState::prior(n_subjects, d_f);
    let mut radius = vec![1.0; n_tasks];
    let mut trace: Vec<f64> = Vec::new();
    let mut flagged = BTreeSet::new();
    let mut converged = false;
    let mut previous = flatten(&params);

    for iteration in 1..=cfg.max_iterations {
        let post = e_step(problem, &params, &var, exec)?;
        let log_marginal: f64 = post.iter().flatten().map(|p| p.log_marginal).sum();

        for (h, pi) in params.hmm.iter_mut().zip(m_step_initial(&post, n_tasks)) {
            h.init_prob_engaged = pi;
        }
        params.hmm = m_step_hmm(&post, data, &params.hmm)?;

        if d_f > 0 {
            let updates = exec.map(n_subjects, |i| update_variational(problem, i, &params, &var, &post[i]));
            for (i, up) in updates.into_iter().enumerate() {
                if up.flagged {
                    flagged.insert(i);
                }
                var.mean[i] = up.mean;
                var.sd[i] = up.sd;
            }
        }

        let mut emission = 0.0;
        for k in 0..n_tasks {
            let out = m_step_ddm(problem, k, &params, &var, &post, radius[k], exec);
            radius[k] = out.radius;
            emission -= out.objective;
            params.factor.tasks[k] = out.loadings;
            params.scalars[k] = out.scalars;
        }

        let mut value = emission;
        for (i, subj) in data.subjects.iter().enumerate() {
            value += gaussian_terms(&var.mean[i], &var.sd[i]);
            for k in 0..n_tasks {
                value += chain_terms(&post[i][k], &params.hmm[k], &subj.covariates) + chain_entropy(&post[i][k]);
            }
        }
        if !value.is_finite() {
            return Err(Error::NonFiniteElbo { iteration });
        }
        if let Some(&prev) = trace.last() {
            if iteration > 3 && value < prev - cfg.elbo_slack * prev.abs() {
                return Err(Error::ElboDecrease {
                    iteration,
                    previous: prev,
                    current: value,
                });
            }
        }
        let current = flatten(&params);
        let max_param_delta = current.iter().zip(&previous).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        previous = current;
        trace.push(value);
        observer.on_iteration(&IterationRecord {
            restart,
            iteration,
            elbo: value,
            max_param_delta,
            log_marginal_per_trial: log_marginal / n_trials,
        });
        if trace.len() > 1 {
            let prev = trace[trace.len() - 2];
            if ((value - prev) / value).abs() < cfg.tolerance {
                converged = true;
                break;
            }
        }
    }
    Ok(Run {
        params,
        var,
        trace,
        converged,
        flagged,
    })
}

/// Start for restart 0 taken from single-task fits; loadings stay random.
fn warm_start<E: Executor>(problem: &Problem<'_>, exec: &E) -> Option<ModelParams> {
    let mut params = initial_params(problem, 0);
    let split_cfg = FitConfig {
        n_factors: 0,
        restarts: 1,
        warm_start_split: false,
        ..problem.config.clone()
    };
    for k in 0..problem.data.n_tasks() {
        let sub = problem.data.task_subset(k);
        let spec = problem.spec.task_subset(k);
        let fit = fit_shift(&sub, &spec, &split_cfg, exec, &mut NoObserver).ok()?;
        params.factor.tasks[k].intercept = fit.params.factor.tasks[0].intercept.clone();
        params.factor.tasks[k].covar_load = fit.params.factor.tasks[0].covar_load.clone();
        params.scalars[k] = fit.params.scalars[0].clone();
        params.hmm[k] = fit.params.hmm[0].clone();
    }
    Some(params)
}

/// Fits the joint model with `config.n_factors` shared factors, running
/// `config.restarts` initializations and keeping the one with the largest final ELBO.
pub fn fit_shift<E: Executor, O: FitObserver + ?Sized>(
    data: &Dataset,
    spec: &ModelSpec,
    config: &FitConfig,
    exec: &E,
    observer: &mut O,
) -> Result<FitResult> {
    let problem = Problem::new(data, spec, config)?;
    let warm = if config.warm_start_split && config.n_factors > 0 {
        warm_start(&problem, exec)
    } else {
        None
    };
    let mut summaries = Vec::new();
    let mut best: Option<(usize, Run)> = None;
    for r in 0..config.restarts {
        let init = match (&warm, r) {
            (Some(w), 0) => w.clone(),
            _ => initial_params(&problem, r),
        };
        let summary = match run_em(&problem, init, r, exec, observer) {
            Ok(run) => {
                let s = RestartSummary {
                    restart_id: r,
                    final_elbo: run.trace.last().copied(),
                    iterations: run.trace.len(),
                    converged: run.converged,
                    error: None,
                };
                let better = match &best {
                    None => true,
                    Some((_, b)) => run.trace.last() > b.trace.last(),
                };
                if better {
                    best = Some((r, run));
                }
                s
            }
            Err(e) => RestartSummary {
                restart_id: r,
                final_elbo: None,
                iterations: 0,
                converged: false,
                error: Some(e.to_string()),
            },
        };
        observer.on_restart(&summary);
        summaries.push(summary);
    }
    let Some((restart_id, run)) = best else {
        return Err(Error::AllRestartsFailed(
            summaries
                .iter()
                .map(|s| format!("restart {}: {}", s.restart_id, s.error.as_deref().unwrap_or("unknown")))
                .collect(),
        ));
    };
    let exec_post = e_step(&problem, &run.params, &run.var, exec)?;
    let canonical = if config.n_factors > 0 {
        canonicalize(&run.params.factor, &run.var.mean)
            .ok()
            .map(|(factor, scores)| CanonicalFactors { factor, scores })
    } else {
        None
    };
    Ok(FitResult {
        iterations: run.trace.len(),
        params: run.params,
        variational: run.var,
        posteriors: exec_post,
        elbo_trace: run.trace,
        converged: run.converged,
        restart_id,
        restarts: summaries,
        canonical,
        flagged_subjects: run.flagged.into_iter().collect(),
    })
}

/// Fits each task on its own with no factors. Result `k` covers the subjects
/// that have trials in task `k`, in dataset order.
pub fn fit_split<E: Executor, O: FitObserver + ?Sized>(
    data: &Dataset,
    spec: &ModelSpec,
    config: &FitConfig,
    exec: &E,
    observer: &mut O,
) -> Result<Vec<FitResult>> {
    let cfg = FitConfig {
        n_factors: 0,
        warm_start_split: false,
        ..config.clone()
    };
    (0..data.n_tasks())
        .map(|k| fit_shift(&data.task_subset(k), &spec.task_subset(k), &cfg, exec, observer))
        .collect()
}
