//! The individual E- and M-steps and the evidence lower bound.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::kernel::{self, SubjectTask, TaskEval};
use super::packing::TaskLayout;
use super::{FitConfig, ModelParams, ModelSpec, VariationalState};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::exec::Executor;
use crate::factor::TaskLoadings;
use crate::markov::{self, HmmParams, PosteriorWeights};
use crate::math::ln;
use crate::optim::{lbfgs, LbfgsOptions};
use crate::quadrature::{gauss_hermite, QuadratureRule};
use crate::tasks::{DriftTable, TaskModel};

/// Inputs shared by every step of a fit.
#[derive(Debug, Clone)]
pub struct Problem<'a> {
    pub data: &'a Dataset,
    pub spec: &'a ModelSpec,
    pub config: &'a FitConfig,
    pub rule: QuadratureRule,
    /// Exclusive upper bound on each task's non-decision time.
    pub tau_upper: Vec<f64>,
}

/// Margin kept between the non-decision time and the smallest RT of a task.
pub const TAU_MARGIN: f64 = 1e-6;

pub const PI_CLIP: f64 = 1e-6;

impl<'a> Problem<'a> {
    pub fn new(data: &'a Dataset, spec: &'a ModelSpec, config: &'a FitConfig) -> Result<Self> {
        spec.validate()?;
        config.validate()?;
        data.validate(&spec.task_models())?;
        let tau_upper: Vec<f64> = (0..data.n_tasks()).map(|k| data.min_rt(k) - TAU_MARGIN).collect();
        if let Some(k) = tau_upper.iter().position(|&u| !(u > 0.0)) {
            return Err(Error::InvalidData(format!(
                "task {}: response times too short",
                data.task_ids[k]
            )));
        }
        Ok(Self {
            data,
            spec,
            config,
            rule: gauss_hermite(config.quadrature_nodes, config.n_factors)?,
            tau_upper,
        })
    }

    pub fn n_factors(&self) -> usize {
        self.config.n_factors
    }

    fn subject_task<'b>(
        &'b self,
        i: usize,
        k: usize,
        loadings: &'b TaskLoadings,
        scalars: &'b [f64],
        drifts: &'b DriftTable,
        zeta: &'b [[f64; 2]],
    ) -> SubjectTask<'b> {
        let s = &self.data.subjects[i];
        SubjectTask {
            trials: &s.tasks[k],
            zeta,
            task: &self.spec.tasks[k],
            scalars,
            drifts,
            loadings,
            x: &s.covariates,
        }
    }
}

fn drifts_for(problem: &Problem<'_>, i: usize, k: usize, scalars: &[f64]) -> DriftTable {
    let mut dt = DriftTable::default();
    problem.spec.tasks[k].drifts(&problem.data.subjects[i].tasks[k], scalars, &mut dt);
    dt
}

fn empty_posterior() -> PosteriorWeights {
    PosteriorWeights {
        zeta: Vec::new(),
        xi: Vec::new(),
        log_marginal: 0.0,
    }
}

/// Posterior state weights of every subject and task at `f_i = m_i`.
pub fn e_step<E: Executor>(
    problem: &Problem<'_>,
    params: &ModelParams,
    var: &VariationalState,
    exec: &E,
) -> Result<Vec<Vec<PosteriorWeights>>> {
    let n_tasks = problem.data.n_tasks();
    let rows = exec.map(problem.data.n_subjects(), |i| -> Result<Vec<PosteriorWeights>> {
        let subj = &problem.data.subjects[i];
        (0..n_tasks)
            .map(|k| {
                if subj.tasks[k].is_empty() {
                    return Ok(empty_posterior());
                }
                let scalars = &params.scalars[k];
                let drifts = drifts_for(problem, i, k, scalars);
                let st = problem.subject_task(i, k, &params.factor.tasks[k], scalars, &drifts, &[]);
                let le = kernel::log_emissions(&st, &var.mean[i]);
                markov::forward_backward(&le, &params.hmm[k], &subj.covariates).map_err(|e| e.at(i, k))
            })
            .collect()
    });
    rows.into_iter().collect()
}

/// Initial-state probabilities: mean first-trial engaged weight, clipped.
pub fn m_step_initial(posteriors: &[Vec<PosteriorWeights>], n_tasks: usize) -> Vec<f64> {
    (0..n_tasks)
        .map(|k| {
            let (mut sum, mut n) = (0.0, 0usize);
            for p in posteriors {
                if let Some(z) = p[k].zeta.first() {
                    sum += z[1];
                    n += 1;
                }
            }
            let pi = if n == 0 { 0.5 } else { sum / n as f64 };
            pi.clamp(PI_CLIP, 1.0 - PI_CLIP)
        })
        .collect()
}

/// Transition coefficients by ξ-weighted logistic regression, per task and origin state.
pub fn m_step_hmm(posteriors: &[Vec<PosteriorWeights>], data: &Dataset, current: &[HmmParams]) -> Result<Vec<HmmParams>> {
    let mut out = current.to_vec();
    for (k, h) in out.iter_mut().enumerate() {
        for l in 0..2 {
            let mut succ = Vec::new();
            let mut tot = Vec::new();
            let mut cov = Vec::new();
            for (i, p) in posteriors.iter().enumerate() {
                if p[k].xi.is_empty() {
                    continue;
                }
                let (mut y, mut n) = (0.0, 0.0);
                for x in &p[k].xi {
                    y += x[l][1];
                    n += x[l][0] + x[l][1];
                }
                succ.push(y);
                tot.push(n);
                cov.push(data.subjects[i].covariates.clone());
            }
            if succ.is_empty() {
                continue;
            }
            h.trans_coef[l] = markov::fit_transition_logistic(&succ, &tot, &cov, &h.trans_coef[l])?;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct VariationalUpdate {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
    /// Objective of the mean solve before and after.
    pub mean_objective: (f64, f64),
    /// Objective of the SD solve before and after.
    pub sd_objective: (f64, f64),
    /// True if either solve failed and its incumbent was kept.
    pub flagged: bool,
}

/// Coordinate update of a diagonal Gaussian against a prior `N(0, I)`:
/// first the mean with the SD held fixed, then the SD (on the log scale) with the new mean.
///
/// `expected_loglik(m, s)` returns `V(m, s)` with its gradients in `m` and `s`.
pub fn optimize_variational<F>(m0: &[f64], s0: &[f64], max_iter: usize, mut expected_loglik: F) -> VariationalUpdate
where
    F: FnMut(&[f64], &[f64]) -> (f64, Vec<f64>, Vec<f64>),
{
    let d = m0.len();
    let opts = |f0: f64| LbfgsOptions {
        max_iter,
        grad_tol: 1e-8 * f0.abs().max(1.0),
        f_rel_tol: 1e-14,
        initial_radius: 1.0,
        max_radius: 4.0,
        ..Default::default()
    };
    let s_fixed = s0.to_vec();
    let mut mean_obj = |m: &[f64], g: &mut [f64]| {
        let (v, gm, _) = expected_loglik(m, &s_fixed);
        for c in 0..d {
            g[c] = -gm[c] + m[c];
        }
        -v + 0.5 * m.iter().map(|x| x * x).sum::<f64>()
    };
    let mut scratch = vec![0.0; d];
    let f_m0 = mean_obj(m0, &mut scratch);
    let res_m = lbfgs(&mut mean_obj, m0, &opts(f_m0));
    let mut flagged = res_m.status.is_failure();
    let (mean, mean_after) = if res_m.f.is_finite() && res_m.f <= f_m0 {
        (res_m.x, res_m.f)
    } else {
        flagged = true;
        (m0.to_vec(), f_m0)
    };

    let mean_fixed = mean.clone();
    let mut sd_obj = |u: &[f64], g: &mut [f64]| {
        let s: Vec<f64> = u.iter().map(|&v| crate::math::exp(v)).collect();
        let (v, _, gs) = expected_loglik(&mean_fixed, &s);
        for c in 0..d {
            g[c] = -gs[c] * s[c] + s[c] * s[c] - 1.0;
        }
        -v + s.iter().map(|x| 0.5 * x * x - ln(*x)).sum::<f64>()
    };
    let u0: Vec<f64> = s0.iter().map(|&v| ln(v)).collect();
    let f_s0 = sd_obj(&u0, &mut scratch);
    let res_s = lbfgs(&mut sd_obj, &u0, &opts(f_s0));
    flagged |= res_s.status.is_failure();
    let (sd, sd_after) = if res_s.f.is_finite() && res_s.f <= f_s0 {
        (res_s.x.iter().map(|&v| crate::math::exp(v)).collect(), res_s.f)
    } else {
        flagged = true;
        (s0.to_vec(), f_s0)
    };
    VariationalUpdate {
        mean,
        sd,
        mean_objective: (f_m0, mean_after),
        sd_objective: (f_s0, sd_after),
        flagged,
    }
}

/// Variational update of subject `i` given its posterior state weights.
pub fn update_variational(
    problem: &Problem<'_>,
    i: usize,
    params: &ModelParams,
    var: &VariationalState,
    posteriors: &[PosteriorWeights],
) -> VariationalUpdate {
    let subj = &problem.data.subjects[i];
    let n_tasks = problem.data.n_tasks();
    let drifts: Vec<DriftTable> = (0..n_tasks).map(|k| drifts_for(problem, i, k, &params.scalars[k])).collect();
    let d_f = problem.n_factors();
    let floor = problem.config.zeta_floor;
    let eval = |m: &[f64], s: &[f64]| {
        let (mut v, mut gm, mut gs) = (0.0, vec![0.0; d_f], vec![0.0; d_f]);
        for k in 0..n_tasks {
            if subj.tasks[k].is_empty() {
                continue;
            }
            let loadings = &params.factor.tasks[k];
            let st = problem.subject_task(i, k, loadings, &params.scalars[k], &drifts[k], &posteriors[k].zeta);
            let te = kernel::eval(&st, m, s, &problem.rule, floor, true);
            let (a, b) = te.factor_grads(&problem.rule, &loadings.factor_load);
            v += te.value;
            for c in 0..d_f {
                gm[c] += a[c];
                gs[c] += b[c];
            }
        }
        (v, gm, gs)
    };
    optimize_variational(&var.mean[i], &var.sd[i], problem.config.subject_max_iter, eval)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DdmStepOutcome {
    pub loadings: TaskLoadings,
    pub scalars: Vec<f64>,
    /// Negative ζ-weighted expected emission log-likelihood before and after.
    pub objective_before: f64,
    pub objective: f64,
    /// Trust radius to start the next solve with.
    pub radius: f64,
    /// The solve failed and the incumbent was kept.
    pub failed: bool,
}

/// Emission-parameter update of task `k`: minimizes `-Σ_i Σ_j Σ_l ζ ℓ̃` over the
/// intercepts, free loadings, optional covariate effects and task scalars.
pub fn m_step_ddm<E: Executor>(
    problem: &Problem<'_>,
    k: usize,
    params: &ModelParams,
    var: &VariationalState,
    posteriors: &[Vec<PosteriorWeights>],
    radius: f64,
    exec: &E,
) -> DdmStepOutcome {
    let task = &problem.spec.tasks[k];
    let base = &params.factor.tasks[k];
    let layout = TaskLayout::new(
        base,
        problem.data.n_covariates,
        problem.config.fit_covariate_effects,
        task.scalar_domains(),
        problem.tau_upper[k],
    );
    let subjects: Vec<usize> = (0..problem.data.n_subjects())
        .filter(|&i| !problem.data.subjects[i].tasks[k].is_empty())
        .collect();
    let d_f = problem.n_factors();
    let floor = problem.config.zeta_floor;
    let n_params = layout.len();

    let objective = |u: &[f64], grad: &mut [f64]| -> f64 {
        let mut loadings = base.clone();
        let mut scalars = params.scalars[k].clone();
        layout.unpack(u, &mut loadings, &mut scalars);
        if scalars.iter().any(|v| !v.is_finite() || *v <= 0.0) {
            return f64::INFINITY;
        }
        let parts: Vec<(f64, Vec<f64>)> = exec.map(subjects.len(), |idx| {
            let i = subjects[idx];
            let drifts = drifts_for(problem, i, k, &scalars);
            let st = problem.subject_task(i, k, &loadings, &scalars, &drifts, &posteriors[i][k].zeta);
            let te: TaskEval = kernel::eval(&st, &var.mean[i], &var.sd[i], &problem.rule, floor, true);
            let mut g = vec![0.0; n_params];
            layout.accumulate(&mut g, &te, &problem.data.subjects[i].covariates, &scalars, d_f);
            (te.value, g)
        });
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut value = 0.0;
        for (v, g) in parts {
            value += v;
            for (a, b) in grad.iter_mut().zip(&g) {
                *a -= b;
            }
        }
        -value
    };

    let u0 = layout.pack(base, &params.scalars[k]);
    let mut scratch = vec![0.0; n_params];
    let mut objective = objective;
    let f0 = objective(&u0, &mut scratch);
    let opts = LbfgsOptions {
        max_iter: problem.config.ddm_max_iter,
        grad_tol: 1e-7 * f0.abs().max(1.0),
        f_rel_tol: 1e-10,
        initial_radius: radius,
        max_radius: 4.0,
        min_radius: 1e-8,
        ..Default::default()
    };
    // Start from a desaturated copy; the incumbent still bounds the accepted value.
    let mut start = u0.clone();
    layout.desaturate(&mut start);
    let res = lbfgs(&mut objective, &start, &opts);
    let mut loadings = base.clone();
    let mut scalars = params.scalars[k].clone();
    if res.f.is_finite() && res.f <= f0 && !res.status.is_failure() || (res.f.is_finite() && res.f < f0) {
        layout.unpack(&res.x, &mut loadings, &mut scalars);
        loadings.enforce_structural_zeros();
        DdmStepOutcome {
            loadings,
            scalars,
            objective_before: f0,
            objective: res.f,
            radius: res.radius.max(1e-3),
            failed: res.status.is_failure(),
        }
    } else {
        DdmStepOutcome {
            loadings,
            scalars,
            objective_before: f0,
            objective: f0,
            radius: (0.5 * radius).max(1e-3),
            failed: true,
        }
    }
}

/// Hidden-chain part of the bound for one subject and task:
/// `Σ_l ζ_1l log π_l + Σ_j Σ_lm ξ_jlm log C_lm`.
pub(crate) fn chain_terms(post: &PosteriorWeights, h: &HmmParams, x: &[f64]) -> f64 {
    let Some(z1) = post.zeta.first() else {
        return 0.0;
    };
    let lp = h.log_initial();
    let lc = markov::log_transition_matrix(h, x);
    let mut v = 0.0;
    for l in 0..2 {
        if z1[l] > 0.0 {
            v += z1[l] * lp[l];
        }
    }
    for xi in &post.xi {
        for l in 0..2 {
            for m in 0..2 {
                if xi[l][m] > 0.0 {
                    v += xi[l][m] * lc[l][m];
                }
            }
        }
    }
    v
}

/// Entropy of a two-state chain posterior given its one- and two-slice marginals.
pub fn chain_entropy(post: &PosteriorWeights) -> f64 {
    let xlogx = |p: f64| if p > 0.0 { p * ln(p) } else { 0.0 };
    let Some(z1) = post.zeta.first() else {
        return 0.0;
    };
    let mut h = -(xlogx(z1[0]) + xlogx(z1[1]));
    for (j, xi) in post.xi.iter().enumerate() {
        for l in 0..2 {
            for m in 0..2 {
                h -= xlogx(xi[l][m]);
            }
            h += xlogx(post.zeta[j][l]);
        }
    }
    h
}

/// `-½|m|² + Σ log s - ½|s|²`.
pub(crate) fn gaussian_terms(m: &[f64], s: &[f64]) -> f64 {
    m.iter().map(|v| -0.5 * v * v).sum::<f64>() + s.iter().map(|&v| ln(v) - 0.5 * v * v).sum::<f64>()
}

/// Evidence lower bound summed over subjects, including the entropy of the
/// state-path posteriors.
pub fn elbo<E: Executor>(
    problem: &Problem<'_>,
    params: &ModelParams,
    var: &VariationalState,
    posteriors: &[Vec<PosteriorWeights>],
    exec: &E,
) -> f64 {
    let n_tasks = problem.data.n_tasks();
    let per_subject = exec.map(problem.data.n_subjects(), |i| {
        let subj = &problem.data.subjects[i];
        let mut v = gaussian_terms(&var.mean[i], &var.sd[i]);
        for k in 0..n_tasks {
            if subj.tasks[k].is_empty() {
                continue;
            }
            let drifts = drifts_for(problem, i, k, &params.scalars[k]);
            let st = problem.subject_task(
                i,
                k,
                &params.factor.tasks[k],
                &params.scalars[k],
                &drifts,
                &posteriors[i][k].zeta,
            );
            v += kernel::eval(&st, &var.mean[i], &var.sd[i], &problem.rule, problem.config.zeta_floor, false).value;
            v += chain_terms(&posteriors[i][k], &params.hmm[k], &subj.covariates) + chain_entropy(&posteriors[i][k]);
        }
        v
    });
    per_subject.into_iter().sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn initial_probability_is_clipped_mean() {
        let post = |z: f64| {
            vec![PosteriorWeights {
                zeta: vec![[1.0 - z, z]],
                xi: vec![],
                log_marginal: 0.0,
            }]
        };
        let p = m_step_initial(&[post(0.9), post(0.8), post(1.0)], 1);
        assert!((p[0] - 0.9).abs() < 1e-15);
        let p = m_step_initial(&[post(1.0), post(1.0)], 1);
        assert_eq!(p[0], 1.0 - PI_CLIP);
        let p = m_step_initial(&[post(0.0), post(1.0), post(1.0), post(0.0)], 1);
        assert_eq!(p[0], 0.5);
    }

    #[test]
    fn variational_update_matches_conjugate_gaussian() {
        // V(m, s) = Σ_c -½ a_c ((m_c - b_c)² + s_c²): the exact expectation of a quadratic log-likelihood.
        let a = [3.0, 0.5];
        let b = [0.7, -1.2];
        let v = |m: &[f64], s: &[f64]| {
            let mut val = 0.0;
            let mut gm = vec![0.0; 2];
            let mut gs = vec![0.0; 2];
            for c in 0..2 {
                val += -0.5 * a[c] * ((m[c] - b[c]).powi(2) + s[c] * s[c]);
                gm[c] = -a[c] * (m[c] - b[c]);
                gs[c] = -a[c] * s[c];
            }
            (val, gm, gs)
        };
        let up = optimize_variational(&[0.0, 0.0], &[1.0, 1.0], 50, v);
        for c in 0..2 {
            assert!((up.mean[c] - a[c] * b[c] / (1.0 + a[c])).abs() < 1e-6);
            assert!((up.sd[c] - (1.0 / (1.0 + a[c])).sqrt()).abs() < 1e-6);
        }
        assert!(up.mean_objective.1 <= up.mean_objective.0);
        assert!(up.sd_objective.1 <= up.sd_objective.0);
        assert!(!up.flagged);
    }

    #[test]
    fn flat_likelihood_gives_prior() {
        let up = optimize_variational(&[0.3, -0.2], &[0.5, 2.0], 50, |_, _| (-4.0, vec![0.0; 2], vec![0.0; 2]));
        for c in 0..2 {
            assert!(up.mean[c].abs() < 1e-8);
            assert!((up.sd[c] - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn gaussian_terms_at_prior() {
        assert!((gaussian_terms(&[0.0, 0.0], &[1.0, 1.0]) + 1.0).abs() < 1e-15);
    }

    #[test]
    fn chain_entropy_matches_path_enumeration() {
        let h = HmmParams::new(
            0.7,
            markov::TransitionCoef {
                intercept: -0.4,
                slopes: vec![0.8],
            },
            markov::TransitionCoef {
                intercept: 1.1,
                slopes: vec![-0.5],
            },
        );
        let x = [0.6];
        let le = [[-1.0, -0.2], [-0.3, -2.0], [-0.9, -0.8], [-1.5, -0.1], [0.2, -0.4]];
        let post = markov::forward_backward(&le, &h, &x).unwrap();
        let lp = h.log_initial();
        let lc = markov::log_transition_matrix(&h, &x);
        let n = le.len();
        let logs: Vec<f64> = (0..1usize << n)
            .map(|path| {
                let u = |j: usize| (path >> j) & 1;
                let mut v = lp[u(0)] + le[0][u(0)];
                for j in 1..n {
                    v += lc[u(j - 1)][u(j)] + le[j][u(j)];
                }
                v
            })
            .collect();
        let total = logs.iter().map(|v| v.exp()).sum::<f64>().ln();
        let exact: f64 = logs.iter().map(|v| -(v - total).exp() * (v - total)).sum();
        assert!((chain_entropy(&post) - exact).abs() < 1e-12);
    }
}
