//! Replication-study evaluation: compares fits against simulation truth,
//! in memory or from a directory of replicate outputs.
//!
//! Replicate directory layout: one subdirectory per replicate holding
//! `truth.json`, `dataset.csv`, `covariates.csv`, and one subdirectory per fit
//! holding `estimates.json` and `posteriors.csv`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use shift_core::data::Dataset;
use shift_core::estimator::{FitResult, ModelParams, ModelSpec};
use shift_core::markov::HmmParams;
use shift_core::metrics::{
    predicted_action_probabilities, recovery_scores, shared_param_correlation, summarize_parameter, task_parameters,
    ParameterSummary, TaskScores,
};
use shift_core::simulator::SimTruth;
use shift_core::tasks::{SHARED, SHARED_NAMES};

use crate::error::{CliError, Result};
use crate::formats::{read_dataset, read_params, read_posteriors, EngagedWeights, Method, ParamsDocument, RtUnit};

fn arr(v: &[f64]) -> [f64; SHARED] {
    let mut a = [0.0; SHARED];
    a.copy_from_slice(&v[..SHARED]);
    a
}

/// Generating quantities, indexed like the dataset.
#[derive(Debug, Clone)]
pub struct TruthView {
    pub params: ModelParams,
    /// `[subject][task]`.
    pub shared: Vec<Vec<[f64; SHARED]>>,
    /// `[subject][task][trial]`.
    pub states: Vec<Vec<Vec<u8>>>,
}

impl TruthView {
    pub fn from_sim(truth: &SimTruth) -> Self {
        Self {
            params: truth.params.clone(),
            shared: truth.shared.clone(),
            states: truth.states.clone(),
        }
    }

    pub fn from_document(doc: &ParamsDocument, path: &Path) -> Result<Self> {
        let states = doc
            .subjects
            .iter()
            .map(|s| {
                s.states
                    .clone()
                    .ok_or_else(|| CliError::format(path, format!("subject {}: no latent states", s.id)))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            params: doc.model_params(),
            shared: doc
                .subjects
                .iter()
                .map(|s| s.shared.iter().map(|v| arr(v)).collect())
                .collect(),
            states,
        })
    }
}

/// Fitted quantities, indexed like the dataset.
#[derive(Debug, Clone)]
pub struct FitView {
    pub method: Method,
    pub scalars: Vec<Vec<f64>>,
    pub hmm: Vec<HmmParams>,
    /// `[subject][task]` natural-scale estimates.
    pub shared: Vec<Vec<[f64; SHARED]>>,
    /// `[subject][task][trial]` engaged-state weights.
    pub engaged: Vec<Vec<Vec<f64>>>,
}

impl FitView {
    pub fn from_shift(data: &Dataset, fit: &FitResult) -> Self {
        let fm = &fit.params.factor;
        Self {
            method: Method::Shift,
            scalars: fit.params.scalars.clone(),
            hmm: fit.params.hmm.clone(),
            shared: data
                .subjects
                .iter()
                .enumerate()
                .map(|(i, s)| {
                    (0..data.n_tasks())
                        .map(|k| arr(&fm.subject_params(k, &s.covariates, &fit.variational.mean[i])))
                        .collect()
                })
                .collect(),
            engaged: fit
                .posteriors
                .iter()
                .map(|row| row.iter().map(|p| p.zeta.iter().map(|z| z[1]).collect()).collect())
                .collect(),
        }
    }

    /// `fits[k]` covers task `k` for the subjects that have trials in it.
    pub fn from_split(data: &Dataset, fits: &[FitResult]) -> Self {
        let mut engaged = vec![vec![Vec::new(); data.n_tasks()]; data.n_subjects()];
        for (k, fit) in fits.iter().enumerate() {
            let mut rows = fit.posteriors.iter();
            for (i, s) in data.subjects.iter().enumerate() {
                if s.tasks[k].is_empty() {
                    continue;
                }
                if let Some(row) = rows.next() {
                    engaged[i][k] = row[0].zeta.iter().map(|z| z[1]).collect();
                }
            }
        }
        Self {
            method: Method::Split,
            scalars: fits.iter().map(|f| f.params.scalars[0].clone()).collect(),
            hmm: fits.iter().map(|f| f.params.hmm[0].clone()).collect(),
            shared: data
                .subjects
                .iter()
                .map(|s| {
                    fits.iter()
                        .map(|f| arr(&f.params.factor.subject_params(0, &s.covariates, &[])))
                        .collect()
                })
                .collect(),
            engaged,
        }
    }

    pub fn from_files(data: &Dataset, doc: &ParamsDocument, post: &EngagedWeights, path: &Path) -> Result<Self> {
        let method = doc
            .method
            .ok_or_else(|| CliError::format(path, "estimates document names no method"))?;
        let params = doc.model_params();
        let by_id: BTreeMap<&str, usize> = doc.subjects.iter().enumerate().map(|(i, s)| (s.id.as_str(), i)).collect();
        let mut shared = Vec::with_capacity(data.n_subjects());
        let mut engaged = Vec::with_capacity(data.n_subjects());
        for s in &data.subjects {
            let i = *by_id
                .get(s.id.as_str())
                .ok_or_else(|| CliError::format(path, format!("no estimates for subject {}", s.id)))?;
            shared.push(doc.subjects[i].shared.iter().map(|v| arr(v)).collect());
            engaged.push(
                data.task_ids
                    .iter()
                    .map(|&t| post.get(&(s.id.clone(), t)).cloned().unwrap_or_default())
                    .collect(),
            );
        }
        Ok(Self {
            method,
            scalars: params.scalars,
            hmm: params.hmm,
            shared,
            engaged,
        })
    }
}

/// Metrics of one fit in one replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateMetrics {
    pub method: Method,
    pub parameters: Vec<(String, f64)>,
    /// Per task.
    pub scores: Vec<TaskScores>,
    /// Per task and shared component.
    pub correlations: Vec<[Option<f64>; SHARED]>,
}

pub fn named_parameters(spec: &ModelSpec, scalars: &[Vec<f64>], hmm: &[HmmParams]) -> Vec<(String, f64)> {
    (0..spec.n_tasks())
        .flat_map(|k| task_parameters(&spec.tasks[k], &scalars[k], &hmm[k]))
        .collect()
}

pub fn evaluate_replicate(spec: &ModelSpec, data: &Dataset, truth: &TruthView, fit: &FitView) -> Result<ReplicateMetrics> {
    let n_tasks = data.n_tasks();
    let mut scores = Vec::with_capacity(n_tasks);
    let mut correlations = Vec::with_capacity(n_tasks);
    for k in 0..n_tasks {
        let task = &spec.tasks[k];
        let (mut state_p, mut state_t, mut act_p, mut act_t) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for (i, s) in data.subjects.iter().enumerate() {
            let trials = &s.tasks[k];
            let w = &fit.engaged[i][k];
            if w.len() != trials.len() || truth.states[i][k].len() != trials.len() {
                return Err(CliError::Check(format!(
                    "subject {}, task {}: {} trials, {} posterior weights, {} true states",
                    s.id,
                    data.task_ids[k],
                    trials.len(),
                    w.len(),
                    truth.states[i][k].len()
                )));
            }
            state_p.extend_from_slice(w);
            state_t.extend_from_slice(&truth.states[i][k]);
            let zeta: Vec<[f64; 2]> = w.iter().map(|&p| [1.0 - p, p]).collect();
            act_p.extend(predicted_action_probabilities(
                task,
                trials,
                &fit.shared[i][k],
                &fit.scalars[k],
                &zeta,
            )?);
            act_t.extend(trials.iter().map(|t| t.action));
        }
        scores.push(TaskScores {
            state: recovery_scores(&state_p, &state_t)?,
            action: recovery_scores(&act_p, &act_t)?,
        });
        let est: Vec<[f64; SHARED]> = fit.shared.iter().map(|r| r[k]).collect();
        let tru: Vec<[f64; SHARED]> = truth.shared.iter().map(|r| r[k]).collect();
        correlations.push(if est.len() >= 3 {
            shared_param_correlation(&est, &tru)?
        } else {
            [None; SHARED]
        });
    }
    Ok(ReplicateMetrics {
        method: fit.method,
        parameters: named_parameters(spec, &fit.scalars, &fit.hmm),
        scores,
        correlations,
    })
}

/// Relative bias and empirical SE of every named parameter over replicates.
pub fn summarize(truth: &[(String, f64)], reps: &[&ReplicateMetrics]) -> Result<Vec<ParameterSummary>> {
    truth
        .iter()
        .map(|(name, t)| {
            let est: Vec<f64> = reps
                .iter()
                .map(|r| {
                    r.parameters
                        .iter()
                        .find(|(n, _)| n == name)
                        .map(|p| p.1)
                        .ok_or_else(|| CliError::Check(format!("parameter {name} missing from a fit")))
                })
                .collect::<Result<_>>()?;
            Ok(summarize_parameter(name, *t, &est)?)
        })
        .collect()
}

/// One row of the bias table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub setting: String,
    pub n: usize,
    pub method: String,
    pub parameter: String,
    pub truth: f64,
    pub mean: f64,
    pub rb: f64,
    pub rb_relative: bool,
    pub ese: Option<f64>,
    pub replicates: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub setting: String,
    pub n: usize,
    pub replicate: String,
    pub method: String,
    pub task_id: u32,
    pub state_accuracy: f64,
    pub state_f1: f64,
    pub action_accuracy: f64,
    pub action_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationRow {
    pub setting: String,
    pub n: usize,
    pub replicate: String,
    pub method: String,
    pub task_id: u32,
    pub component: String,
    pub r: Option<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct Evaluation {
    pub table: Vec<TableRow>,
    pub scores: Vec<ScoreRow>,
    pub correlations: Vec<CorrelationRow>,
}

fn sorted_dirs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| CliError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    out.sort();
    Ok(out)
}

/// Evaluates every replicate under `dir`.
pub fn evaluate_dir(dir: &Path) -> Result<Evaluation> {
    let mut setting = None;
    let mut n = None;
    let mut truth_params: Option<Vec<(String, f64)>> = None;
    let mut per_method: BTreeMap<&'static str, Vec<ReplicateMetrics>> = BTreeMap::new();
    let mut eval = Evaluation::default();
    for rep in sorted_dirs(dir)? {
        let truth_path = rep.join("truth.json");
        if !truth_path.exists() {
            continue;
        }
        let rep_name = rep.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let truth_doc = read_params(&truth_path)?;
        let spec = truth_doc.model_spec();
        let data = read_dataset(&rep.join("dataset.csv"), Some(&rep.join("covariates.csv")), RtUnit::S)?;
        let truth = TruthView::from_document(&truth_doc, &truth_path)?;
        let label = truth_doc.setting.clone().unwrap_or_else(|| "custom".into());
        if setting.get_or_insert_with(|| label.clone()) != &label || *n.get_or_insert(data.n_subjects()) != data.n_subjects() {
            return Err(CliError::Check(format!("{}: replicates mix designs", rep.display())));
        }
        let tp = named_parameters(&spec, &truth.params.scalars, &truth.params.hmm);
        truth_params.get_or_insert(tp);
        for fit_dir in sorted_dirs(&rep)? {
            let est_path = fit_dir.join("estimates.json");
            if !est_path.exists() {
                continue;
            }
            let doc = read_params(&est_path)?;
            let post = read_posteriors(&fit_dir.join("posteriors.csv"))?;
            let view = FitView::from_files(&data, &doc, &post, &est_path)?;
            let m = evaluate_replicate(&spec, &data, &truth, &view)?;
            for (k, (sc, cor)) in m.scores.iter().zip(&m.correlations).enumerate() {
                eval.scores.push(ScoreRow {
                    setting: label.clone(),
                    n: data.n_subjects(),
                    replicate: rep_name.clone(),
                    method: m.method.name().into(),
                    task_id: data.task_ids[k],
                    state_accuracy: sc.state.accuracy,
                    state_f1: sc.state.f1,
                    action_accuracy: sc.action.accuracy,
                    action_f1: sc.action.f1,
                });
                for (c, r) in cor.iter().enumerate() {
                    eval.correlations.push(CorrelationRow {
                        setting: label.clone(),
                        n: data.n_subjects(),
                        replicate: rep_name.clone(),
                        method: m.method.name().into(),
                        task_id: data.task_ids[k],
                        component: SHARED_NAMES[c].into(),
                        r: *r,
                    });
                }
            }
            per_method.entry(m.method.name()).or_default().push(m);
        }
    }
    let Some(tp) = truth_params else {
        return Err(CliError::Check(format!("{}: no replicates with truth.json", dir.display())));
    };
    for (method, reps) in &per_method {
        let refs: Vec<&ReplicateMetrics> = reps.iter().collect();
        for p in summarize(&tp, &refs)? {
            eval.table.push(TableRow {
                setting: setting.clone().unwrap_or_default(),
                n: n.unwrap_or(0),
                method: (*method).into(),
                parameter: p.parameter,
                truth: p.truth,
                mean: p.mean,
                rb: p.rb,
                rb_relative: p.rb_relative,
                ese: p.ese,
                replicates: reps.len(),
            });
        }
    }
    Ok(eval)
}

/// `(setting, N, method)` column key of the comparison table.
type Column = (String, usize, String);

/// Wide comparison table: one row per parameter, RB and ESE columns per (setting, N, method).
pub fn report(tables: &[Vec<TableRow>]) -> (Vec<String>, Vec<Vec<String>>) {
    let mut columns: Vec<Column> = Vec::new();
    let mut params: Vec<String> = Vec::new();
    let mut cells: BTreeMap<(String, Column), (f64, Option<f64>)> = BTreeMap::new();
    for row in tables.iter().flatten() {
        let col = (row.setting.clone(), row.n, row.method.clone());
        if !columns.contains(&col) {
            columns.push(col.clone());
        }
        if !params.contains(&row.parameter) {
            params.push(row.parameter.clone());
        }
        cells.insert((row.parameter.clone(), col), (row.rb, row.ese));
    }
    let mut header = vec!["parameter".to_string()];
    for (s, n, m) in &columns {
        header.push(format!("{s}/N={n}/{m}/rb"));
        header.push(format!("{s}/N={n}/{m}/ese"));
    }
    let rows = params
        .iter()
        .map(|p| {
            let mut r = vec![p.clone()];
            for col in &columns {
                match cells.get(&(p.clone(), col.clone())) {
                    Some((rb, ese)) => {
                        r.push(format!("{rb:.4}"));
                        r.push(ese.map(|e| format!("{e:.4}")).unwrap_or_default());
                    }
                    None => {
                        r.push(String::new());
                        r.push(String::new());
                    }
                }
            }
            r
        })
        .collect();
    (header, rows)
}
