//! Multi-task trial data grouped by subject.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tasks::{TaskModel, TrialRecord};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Subject {
    pub id: String,
    pub covariates: Vec<f64>,
    /// Trials per task, in the dataset's task order. A task may be empty.
    pub tasks: Vec<Vec<TrialRecord>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    /// External task identifiers, one per task position.
    pub task_ids: Vec<u32>,
    pub n_covariates: usize,
    pub subjects: Vec<Subject>,
}

impl Dataset {
    pub fn n_tasks(&self) -> usize {
        self.task_ids.len()
    }

    pub fn n_subjects(&self) -> usize {
        self.subjects.len()
    }

    /// Checks shapes and trial contents against the task models.
    pub fn validate(&self, tasks: &[&dyn TaskModel]) -> Result<()> {
        if tasks.len() != self.n_tasks() {
            return Err(Error::Dimension(format!(
                "dataset has {} tasks, model has {}",
                self.n_tasks(),
                tasks.len()
            )));
        }
        if self.subjects.is_empty() {
            return Err(Error::InvalidData("dataset has no subjects".into()));
        }
        for s in &self.subjects {
            if s.covariates.len() != self.n_covariates {
                return Err(Error::InvalidData(format!(
                    "subject {}: {} covariates, expected {}",
                    s.id,
                    s.covariates.len(),
                    self.n_covariates
                )));
            }
            if s.covariates.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidData(format!("subject {}: non-finite covariate", s.id)));
            }
            if s.tasks.len() != self.n_tasks() {
                return Err(Error::InvalidData(format!("subject {}: wrong number of task blocks", s.id)));
            }
            for (k, trials) in s.tasks.iter().enumerate() {
                for (j, t) in trials.iter().enumerate() {
                    t.validate(tasks[k].uses_reward()).map_err(|e| {
                        let why = match e {
                            Error::InvalidData(m) => m,
                            other => format!("{other}"),
                        };
                        Error::InvalidData(format!("subject {}, task {}, trial {}: {why}", s.id, self.task_ids[k], j + 1))
                    })?;
                }
            }
        }
        for k in 0..self.n_tasks() {
            if self.subjects.iter().all(|s| s.tasks[k].is_empty()) {
                return Err(Error::InvalidData(format!("task {} has no trials", self.task_ids[k])));
            }
        }
        Ok(())
    }

    /// Smallest response time observed in task `k`.
    pub fn min_rt(&self, k: usize) -> f64 {
        self.subjects
            .iter()
            .flat_map(|s| s.tasks[k].iter().map(|t| t.rt))
            .fold(f64::INFINITY, f64::min)
    }

    /// Single-task view keeping subjects that have trials in task `k`.
    pub fn task_subset(&self, k: usize) -> Dataset {
        Dataset {
            task_ids: alloc::vec![self.task_ids[k]],
            n_covariates: self.n_covariates,
            subjects: self
                .subjects
                .iter()
                .filter(|s| !s.tasks[k].is_empty())
                .map(|s| Subject {
                    id: s.id.clone(),
                    covariates: s.covariates.clone(),
                    tasks: alloc::vec![s.tasks[k].clone()],
                })
                .collect(),
        }
    }

    /// Drops trials whose RT falls outside `[lo, hi]` seconds; returns the count removed.
    pub fn truncate_rts(&mut self, lo: f64, hi: f64) -> usize {
        let mut removed = 0;
        for s in &mut self.subjects {
            for trials in &mut s.tasks {
                let before = trials.len();
                trials.retain(|t| t.rt >= lo && t.rt <= hi);
                removed += before - trials.len();
            }
        }
        removed
    }

    pub fn n_trials(&self) -> usize {
        self.subjects.iter().flat_map(|s| s.tasks.iter()).map(Vec::len).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tasks::TaskSpec;
    use alloc::vec;

    fn tr(rt: f64) -> TrialRecord {
        TrialRecord {
            stimulus: 1,
            action: 0,
            rt,
            reward: Some(0),
        }
    }

    fn data() -> Dataset {
        Dataset {
            task_ids: vec![1, 2],
            n_covariates: 1,
            subjects: vec![
                Subject {
                    id: "a".into(),
                    covariates: vec![1.0],
                    tasks: vec![vec![tr(0.3), tr(0.1)], vec![]],
                },
                Subject {
                    id: "b".into(),
                    covariates: vec![0.0],
                    tasks: vec![vec![tr(2.0)], vec![TrialRecord { reward: None, ..tr(0.5) }]],
                },
            ],
        }
    }

    #[test]
    fn subset_and_min_rt() {
        let d = data();
        assert_eq!(d.min_rt(0), 0.1);
        let s = d.task_subset(1);
        assert_eq!(s.task_ids, vec![2]);
        assert_eq!(s.n_subjects(), 1);
        assert_eq!(s.subjects[0].id, "b");
    }

    #[test]
    fn truncation_counts_removed_trials() {
        let mut d = data();
        assert_eq!(d.truncate_rts(0.15, 1.5), 2);
        assert_eq!(d.n_trials(), 2);
    }

    #[test]
    fn validation_checks_shapes() {
        let d = data();
        let prt = TaskSpec::reward_learning();
        let ft = TaskSpec::Flanker;
        d.validate(&[&prt, &ft]).unwrap();
        assert!(d.validate(&[&prt]).is_err());
        let mut bad = d.clone();
        bad.subjects[0].covariates.clear();
        assert!(bad.validate(&[&prt, &ft]).is_err());
    }
}
