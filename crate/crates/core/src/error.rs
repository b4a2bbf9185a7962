use alloc::string::String;
use alloc::vec::Vec;

/// Errors raised by the model, estimator and simulator.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {value}")]
    InvalidParameter { name: &'static str, value: f64 },

    #[error("link domain error in component {component}: value {value} outside the domain of the {link} link")]
    LinkDomain {
        component: usize,
        link: &'static str,
        value: f64,
    },

    #[error("degenerate likelihood: subject {subject}, task {task}, trial {trial} has zero density in both states")]
    DegenerateLikelihood { subject: usize, task: usize, trial: usize },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("brute-force enumeration refused for {0} trials (limit 16)")]
    TooManyTrials(usize),

    #[error("Newton-Raphson did not converge in {iterations} steps (gradient sup-norm {gradient_norm:e})")]
    NewtonNonConvergence { iterations: usize, gradient_norm: f64 },

    #[error("canonicalization failed: leading {dim}x{dim} loading block is rank deficient; reorder shared columns")]
    RankDeficient { dim: usize },

    #[error("ELBO decreased from {previous} to {current} at iteration {iteration} beyond the allowed slack")]
    ElboDecrease { iteration: usize, previous: f64, current: f64 },

    #[error("non-finite ELBO at iteration {iteration}")]
    NonFiniteElbo { iteration: usize },

    #[error("all {} restarts failed: {}", .0.len(), join(.0))]
    AllRestartsFailed(Vec<String>),

    #[error("{0}")]
    Config(String),
}

fn join(v: &[String]) -> String {
    let mut s = String::new();
    for (i, m) in v.iter().enumerate() {
        if i > 0 {
            s.push_str("; ");
        }
        s.push_str(m);
    }
    s
}

impl Error {
    /// Fills in the subject and task of a degenerate-likelihood error.
    pub fn at(self, subject_idx: usize, task_idx: usize) -> Self {
        match self {
            Error::DegenerateLikelihood { trial, .. } => Error::DegenerateLikelihood {
                subject: subject_idx,
                task: task_idx,
                trial,
            },
            other => other,
        }
    }

    /// True for failures of the numerical procedure itself, as opposed to bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::DegenerateLikelihood { .. }
                | Error::NewtonNonConvergence { .. }
                | Error::RankDeficient { .. }
                | Error::ElboDecrease { .. }
                | Error::NonFiniteElbo { .. }
                | Error::AllRestartsFailed(_)
        )
    }
}

pub type Result<T, E = Error> = core::result::Result<T, E>;
