//! EM with a variational approximation for the joint multi-task model, and the
//! single-task baseline obtained by fitting each task alone without factors.

mod fit;
mod kernel;
mod packing;
mod steps;

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::factor::{FactorModel, Link, LinkSpec};
use crate::markov::{HmmParams, PosteriorWeights};
use crate::tasks::{TaskModel, TaskSpec, SHARED};

pub use fit::{fit_shift, fit_split, initial_params};
pub use steps::{
    e_step, elbo, m_step_ddm, m_step_hmm, m_step_initial, optimize_variational, update_variational, DdmStepOutcome, Problem,
    VariationalUpdate, PI_CLIP, TAU_MARGIN,
};

/// Structural description of the model: which tasks, how their shared
/// components are linked, and which of them load on the factors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub tasks: Vec<TaskSpec>,
    /// Per task, one link per shared component.
    pub links: Vec<LinkSpec>,
    /// Per task, whether each shared component loads on the factors.
    pub shared_mask: Vec<Vec<bool>>,
}

impl ModelSpec {
    /// `(log, log, logit)` links with every shared component loading on the factors.
    pub fn standard(tasks: Vec<TaskSpec>) -> Self {
        let k = tasks.len();
        Self {
            tasks,
            links: vec![LinkSpec(vec![Link::Log, Link::Log, Link::Logit]); k],
            shared_mask: vec![vec![true; SHARED]; k],
        }
    }

    pub fn n_tasks(&self) -> usize {
        self.tasks.len()
    }

    pub fn task_subset(&self, k: usize) -> Self {
        Self {
            tasks: vec![self.tasks[k]],
            links: vec![self.links[k].clone()],
            shared_mask: vec![self.shared_mask[k].clone()],
        }
    }

    pub fn task_models(&self) -> Vec<&dyn TaskModel> {
        self.tasks.iter().map(|t| t as &dyn TaskModel).collect()
    }

    pub fn validate(&self) -> crate::Result<()> {
        let k = self.tasks.len();
        if k == 0 || self.links.len() != k || self.shared_mask.len() != k {
            return Err(crate::Error::Config("model needs one link set and mask per task".into()));
        }
        if self.links.iter().any(|l| l.len() != SHARED) || self.shared_mask.iter().any(|m| m.len() != SHARED) {
            return Err(crate::Error::Config(alloc::format!(
                "each task has {SHARED} shared components (boundary_lapsed, boundary_engaged, start_engaged)"
            )));
        }
        Ok(())
    }
}

/// Numerical settings of a fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitConfig {
    /// Number of latent factors; 0 gives independent per-task fits.
    pub n_factors: usize,
    /// Gauss–Hermite nodes per factor dimension.
    pub quadrature_nodes: usize,
    /// Relative ELBO change below which the fit has converged.
    pub tolerance: f64,
    pub max_iterations: usize,
    pub restarts: usize,
    pub seed: u64,
    /// Estimate covariate effects on the shared components; held at zero otherwise.
    pub fit_covariate_effects: bool,
    /// Start restart 0 from single-task estimates.
    pub warm_start_split: bool,
    /// Allowed relative ELBO decrease per iteration after the third.
    pub elbo_slack: f64,
    pub subject_max_iter: usize,
    pub ddm_max_iter: usize,
    /// SD of the random initial factor loadings.
    pub init_loading_sd: f64,
    /// Posterior state weights at or below this are skipped in emission sums.
    pub zeta_floor: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            n_factors: 2,
            quadrature_nodes: crate::quadrature::DEFAULT_NODES,
            tolerance: 1e-5,
            max_iterations: 200,
            restarts: 10,
            seed: 0,
            fit_covariate_effects: false,
            warm_start_split: true,
            elbo_slack: 1e-3,
            subject_max_iter: 50,
            ddm_max_iter: 200,
            init_loading_sd: 0.1,
            zeta_floor: 1e-10,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> crate::Result<()> {
        let bad = |m: &str| Err(crate::Error::Config(m.into()));
        if self.quadrature_nodes == 0 || self.quadrature_nodes > crate::quadrature::MAX_NODES {
            return bad("quadrature_nodes must be in 1..=50");
        }
        if !(self.tolerance >= 0.0) {
            return bad("tolerance must be non-negative");
        }
        if self.max_iterations == 0 || self.restarts == 0 {
            return bad("max_iterations and restarts must be positive");
        }
        if !(self.elbo_slack >= 0.0) || !(self.init_loading_sd >= 0.0) || !(self.zeta_floor >= 0.0) {
            return bad("elbo_slack, init_loading_sd and zeta_floor must be non-negative");
        }
        if self.n_factors > 4 {
            return bad("n_factors above 4 makes the tensor quadrature impractical");
        }
        Ok(())
    }
}

/// Full parameter set: factor layer over the shared components, task scalars
/// on the natural scale, and the latent-state chain of each task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub factor: FactorModel,
    pub scalars: Vec<Vec<f64>>,
    pub hmm: Vec<HmmParams>,
}

/// Diagonal Gaussian `q(f_i) = N(mean_i, diag(sd_i²))` per subject.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariationalState {
    pub mean: Vec<Vec<f64>>,
    pub sd: Vec<Vec<f64>>,
}

impl VariationalState {
    pub fn prior(n_subjects: usize, n_factors: usize) -> Self {
        Self {
            mean: vec![vec![0.0; n_factors]; n_subjects],
            sd: vec![vec![1.0; n_factors]; n_subjects],
        }
    }
}

/// One EM iteration as reported to an observer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub restart: usize,
    pub iteration: usize,
    pub elbo: f64,
    pub max_param_delta: f64,
    /// Sum of per-sequence log marginal likelihoods at the E-step, per trial.
    pub log_marginal_per_trial: f64,
}

pub trait FitObserver {
    fn on_iteration(&mut self, _record: &IterationRecord) {}
    fn on_restart(&mut self, _summary: &RestartSummary) {}
}

/// Observer that ignores everything.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoObserver;

impl FitObserver for NoObserver {}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestartSummary {
    pub restart_id: usize,
    pub final_elbo: Option<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub error: Option<String>,
}

/// Canonical representative of the factor layer with matching factor scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CanonicalFactors {
    pub factor: FactorModel,
    pub scores: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub params: ModelParams,
    pub variational: VariationalState,
    /// `[subject][task]`; empty for a task without trials.
    pub posteriors: Vec<Vec<PosteriorWeights>>,
    pub elbo_trace: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub restart_id: usize,
    pub restarts: Vec<RestartSummary>,
    pub canonical: Option<CanonicalFactors>,
    /// Subjects whose variational update failed at least once (incumbent kept).
    pub flagged_subjects: Vec<usize>,
}

impl FitResult {
    pub fn final_elbo(&self) -> f64 {
        self.elbo_trace.last().copied().unwrap_or(f64::NEG_INFINITY)
    }
}
