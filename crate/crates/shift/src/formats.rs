//! On-disk layouts: trial CSV, covariate CSV, versioned parameter documents,
//! and posterior state weights.
//!
//! Trial CSV header: `subject_id,task_id,trial,stimulus,action,rt_seconds,reward`
//! with an empty reward for tasks without feedback. Covariate CSV header:
//! `subject_id,x1,…,xp`.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use shift_core::data::{Dataset, Subject};
use shift_core::estimator::{FitResult, ModelParams, ModelSpec, RestartSummary};
use shift_core::factor::{FactorModel, LinkSpec, TaskLoadings};
use shift_core::markov::{HmmParams, PosteriorWeights, TransitionCoef};
use shift_core::tasks::{TaskModel, TaskSpec, TrialRecord, SHARED_NAMES};

use crate::error::{CliError, Result};

pub const PARAMS_FORMAT: &str = "shift-params";
pub const PARAMS_VERSION: u32 = 1;

/// Unit of the RT column on ingestion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum RtUnit {
    #[default]
    S,
    Ms,
}

impl RtUnit {
    fn to_seconds(self, v: f64) -> f64 {
        match self {
            RtUnit::S => v,
            RtUnit::Ms => v / 1000.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TrialRow {
    subject_id: String,
    task_id: u32,
    trial: usize,
    stimulus: u8,
    action: u8,
    rt_seconds: f64,
    reward: Option<u8>,
}

fn csv_reader(path: &Path) -> Result<csv::Reader<fs::File>> {
    let file = fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    Ok(csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    let file = fs::File::create(path).map_err(|e| CliError::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> CliError + '_ {
    move |e| CliError::format(path, e)
}

/// Reads trials and optional covariates. Subjects keep the order of first
/// appearance, tasks are ordered by id, trials by their index.
pub fn read_dataset(trials: &Path, covariates: Option<&Path>, unit: RtUnit) -> Result<Dataset> {
    let mut rdr = csv_reader(trials)?;
    let mut order: Vec<String> = Vec::new();
    let mut rows: BTreeMap<String, BTreeMap<u32, Vec<(usize, TrialRecord)>>> = BTreeMap::new();
    let mut task_ids = std::collections::BTreeSet::new();
    for row in rdr.deserialize::<TrialRow>() {
        let row = row.map_err(csv_err(trials))?;
        if !rows.contains_key(&row.subject_id) {
            order.push(row.subject_id.clone());
        }
        task_ids.insert(row.task_id);
        rows.entry(row.subject_id.clone())
            .or_default()
            .entry(row.task_id)
            .or_default()
            .push((
                row.trial,
                TrialRecord {
                    stimulus: row.stimulus,
                    action: row.action,
                    rt: unit.to_seconds(row.rt_seconds),
                    reward: row.reward,
                },
            ));
    }
    if order.is_empty() {
        return Err(CliError::format(trials, "no trials"));
    }
    let task_ids: Vec<u32> = task_ids.into_iter().collect();

    let covs = match covariates {
        Some(p) => Some(read_covariates(p)?),
        None => None,
    };
    let n_covariates = covs.as_ref().map_or(0, |c| c.0);
    let mut subjects = Vec::with_capacity(order.len());
    for id in order {
        let mut per_task = rows.remove(&id).unwrap_or_default();
        let tasks = task_ids
            .iter()
            .map(|t| {
                let mut v = per_task.remove(t).unwrap_or_default();
                v.sort_by_key(|(j, _)| *j);
                if v.windows(2).any(|w| w[0].0 == w[1].0) {
                    return Err(CliError::format(
                        trials,
                        format!("subject {id}, task {t}: repeated trial index"),
                    ));
                }
                Ok(v.into_iter().map(|(_, r)| r).collect())
            })
            .collect::<Result<Vec<_>>>()?;
        let covariates = match &covs {
            Some((_, map)) => map
                .get(&id)
                .cloned()
                .ok_or_else(|| CliError::format(covariates_path(covariates), format!("no covariates for subject {id}")))?,
            None => Vec::new(),
        };
        subjects.push(Subject { id, covariates, tasks });
    }
    Ok(Dataset {
        task_ids,
        n_covariates,
        subjects,
    })
}

fn covariates_path(p: Option<&Path>) -> &Path {
    p.unwrap_or(Path::new("covariates"))
}

fn read_covariates(path: &Path) -> Result<(usize, BTreeMap<String, Vec<f64>>)> {
    let mut rdr = csv_reader(path)?;
    let header = rdr.headers().map_err(csv_err(path))?.clone();
    if header.get(0) != Some("subject_id") {
        return Err(CliError::format(path, "first column must be subject_id"));
    }
    let p = header.len() - 1;
    let mut out = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err(path))?;
        let vals = rec
            .iter()
            .skip(1)
            .map(|v| v.parse::<f64>().map_err(|e| CliError::format(path, format!("{v:?}: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        out.insert(rec[0].to_string(), vals);
    }
    Ok((p, out))
}

pub fn write_dataset(data: &Dataset, trials: &Path, covariates: &Path) -> Result<()> {
    let mut w = csv_writer(trials)?;
    for s in &data.subjects {
        for (k, ts) in s.tasks.iter().enumerate() {
            for (j, t) in ts.iter().enumerate() {
                w.serialize(TrialRow {
                    subject_id: s.id.clone(),
                    task_id: data.task_ids[k],
                    trial: j + 1,
                    stimulus: t.stimulus,
                    action: t.action,
                    rt_seconds: t.rt,
                    reward: t.reward,
                })
                .map_err(csv_err(trials))?;
            }
        }
    }
    w.flush().map_err(|e| CliError::io(trials, e))?;

    let mut w = csv_writer(covariates)?;
    let mut header = vec!["subject_id".to_string()];
    header.extend((1..=data.n_covariates).map(|c| format!("x{c}")));
    w.write_record(&header).map_err(csv_err(covariates))?;
    for s in &data.subjects {
        let mut rec = vec![s.id.clone()];
        rec.extend(s.covariates.iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(csv_err(covariates))?;
    }
    w.flush().map_err(|e| CliError::io(covariates, e))
}

/// Model spec inferred from the data: tasks with rewards are reward-learning tasks, others flanker tasks.
pub fn infer_spec(data: &Dataset) -> ModelSpec {
    let tasks = (0..data.n_tasks())
        .map(|k| {
            let rewarded = data
                .subjects
                .iter()
                .flat_map(|s| s.tasks[k].iter())
                .any(|t| t.reward.is_some());
            if rewarded {
                TaskSpec::reward_learning()
            } else {
                TaskSpec::Flanker
            }
        })
        .collect();
    ModelSpec::standard(tasks)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Named {
    pub name: String,
    pub value: f64,
}

fn named(names: &[&str], values: &[f64]) -> Vec<Named> {
    names
        .iter()
        .zip(values)
        .map(|(n, &v)| Named {
            name: (*n).to_string(),
            value: v,
        })
        .collect()
}

/// Natural-scale view of one task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NaturalBlock {
    pub scalars: Vec<Named>,
    /// Shared components at zero covariates and zero factors.
    pub population_shared: Vec<Named>,
    pub initial_engaged: f64,
}

/// Link-scale view of one task: factor layer and transition coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkBlock {
    pub links: LinkSpec,
    pub shared_mask: Vec<bool>,
    pub intercept: Vec<f64>,
    /// `p` rows by component.
    pub covariate_effects: Vec<Vec<f64>>,
    /// Factor rows by component.
    pub loadings: Vec<Vec<f64>>,
    /// Indexed by origin state.
    pub transitions: [TransitionCoef; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskBlock {
    pub task_id: u32,
    pub model: TaskSpec,
    pub natural: NaturalBlock,
    pub link: LinkBlock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubjectBlock {
    pub id: String,
    pub covariates: Vec<f64>,
    /// Factor values (truth) or variational means (estimates).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub factors: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub factor_sd: Option<Vec<f64>>,
    /// Natural-scale shared components per task.
    pub shared: Vec<Vec<f64>>,
    /// Latent states per task (truth only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub states: Option<Vec<Vec<u8>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitDiagnostics {
    pub task_ids: Vec<u32>,
    pub elbo_trace: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub restart_id: usize,
    pub restarts: Vec<RestartSummary>,
    pub flagged_subjects: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CanonicalBlock {
    pub intercept: Vec<Vec<f64>>,
    pub loadings: Vec<Vec<Vec<f64>>>,
    /// Per subject, in document subject order.
    pub scores: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DocumentKind {
    Truth,
    Estimates,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Shift,
    Split,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Shift => "shift",
            Method::Split => "split",
        }
    }
}

/// Versioned parameter document shared by ground truth and fitted estimates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsDocument {
    pub format: String,
    pub version: u32,
    pub kind: DocumentKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub method: Option<Method>,
    /// Free-form design label, e.g. the simulation preset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub setting: Option<String>,
    pub n_factors: usize,
    pub tasks: Vec<TaskBlock>,
    pub subjects: Vec<SubjectBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub canonical: Option<CanonicalBlock>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub diagnostics: Vec<FitDiagnostics>,
}

fn task_block(task_id: u32, model: &TaskSpec, loadings: &TaskLoadings, scalars: &[f64], hmm: &HmmParams) -> TaskBlock {
    let pop: Vec<f64> = loadings
        .intercept
        .iter()
        .zip(&loadings.links.0)
        .map(|(&e, l)| l.inverse(e))
        .collect();
    TaskBlock {
        task_id,
        model: *model,
        natural: NaturalBlock {
            scalars: named(model.scalar_names(), scalars),
            population_shared: named(&SHARED_NAMES, &pop),
            initial_engaged: hmm.init_prob_engaged,
        },
        link: LinkBlock {
            links: loadings.links.clone(),
            shared_mask: loadings.shared_mask.clone(),
            intercept: loadings.intercept.clone(),
            covariate_effects: loadings.covar_load.clone(),
            loadings: loadings.factor_load.clone(),
            transitions: hmm.trans_coef.clone(),
        },
    }
}

impl ParamsDocument {
    fn new(kind: DocumentKind, spec: &ModelSpec, task_ids: &[u32], params: &ModelParams) -> Self {
        let tasks = (0..spec.n_tasks())
            .map(|k| {
                task_block(
                    task_ids[k],
                    &spec.tasks[k],
                    &params.factor.tasks[k],
                    &params.scalars[k],
                    &params.hmm[k],
                )
            })
            .collect();
        Self {
            format: PARAMS_FORMAT.into(),
            version: PARAMS_VERSION,
            kind,
            method: None,
            setting: None,
            n_factors: params.factor.n_factors,
            tasks,
            subjects: Vec::new(),
            canonical: None,
            diagnostics: Vec::new(),
        }
    }

    /// Ground truth of a simulated dataset.
    pub fn truth(spec: &ModelSpec, data: &Dataset, truth: &shift_core::simulator::SimTruth, setting: Option<String>) -> Self {
        let mut doc = Self::new(DocumentKind::Truth, spec, &data.task_ids, &truth.params);
        doc.setting = setting;
        doc.subjects = data
            .subjects
            .iter()
            .enumerate()
            .map(|(i, s)| SubjectBlock {
                id: s.id.clone(),
                covariates: s.covariates.clone(),
                factors: Some(truth.factors[i].clone()),
                factor_sd: None,
                shared: truth.shared[i].iter().map(|v| v.to_vec()).collect(),
                states: Some(truth.states[i].clone()),
            })
            .collect();
        doc
    }

    /// Joint fit with shared factors.
    pub fn from_shift(spec: &ModelSpec, data: &Dataset, fit: &FitResult) -> Self {
        let mut doc = Self::new(DocumentKind::Estimates, spec, &data.task_ids, &fit.params);
        doc.method = Some(Method::Shift);
        let fm = &fit.params.factor;
        doc.subjects = data
            .subjects
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let m = &fit.variational.mean[i];
                SubjectBlock {
                    id: s.id.clone(),
                    covariates: s.covariates.clone(),
                    factors: (fm.n_factors > 0).then(|| m.clone()),
                    factor_sd: (fm.n_factors > 0).then(|| fit.variational.sd[i].clone()),
                    shared: (0..spec.n_tasks())
                        .map(|k| fm.subject_params(k, &s.covariates, m)[..SHARED_NAMES.len()].to_vec())
                        .collect(),
                    states: None,
                }
            })
            .collect();
        doc.canonical = fit.canonical.as_ref().map(|c| CanonicalBlock {
            intercept: c.factor.tasks.iter().map(|t| t.intercept.clone()).collect(),
            loadings: c.factor.tasks.iter().map(|t| t.factor_load.clone()).collect(),
            scores: c.scores.clone(),
        });
        doc.diagnostics = vec![diagnostics(fit, &data.task_ids, data)];
        doc
    }

    /// Per-task fits without factors, merged into one document.
    pub fn from_split(spec: &ModelSpec, data: &Dataset, fits: &[FitResult]) -> Self {
        let params = ModelParams {
            factor: FactorModel {
                n_factors: 0,
                tasks: fits.iter().map(|f| f.params.factor.tasks[0].clone()).collect(),
            },
            scalars: fits.iter().map(|f| f.params.scalars[0].clone()).collect(),
            hmm: fits.iter().map(|f| f.params.hmm[0].clone()).collect(),
        };
        let mut doc = Self::new(DocumentKind::Estimates, spec, &data.task_ids, &params);
        doc.method = Some(Method::Split);
        doc.subjects = data
            .subjects
            .iter()
            .map(|s| SubjectBlock {
                id: s.id.clone(),
                covariates: s.covariates.clone(),
                factors: None,
                factor_sd: None,
                shared: (0..spec.n_tasks())
                    .map(|k| params.factor.subject_params(k, &s.covariates, &[])[..SHARED_NAMES.len()].to_vec())
                    .collect(),
                states: None,
            })
            .collect();
        doc.diagnostics = fits
            .iter()
            .enumerate()
            .map(|(k, f)| diagnostics(f, &[data.task_ids[k]], &data.task_subset(k)))
            .collect();
        doc
    }

    pub fn model_spec(&self) -> ModelSpec {
        ModelSpec {
            tasks: self.tasks.iter().map(|t| t.model).collect(),
            links: self.tasks.iter().map(|t| t.link.links.clone()).collect(),
            shared_mask: self.tasks.iter().map(|t| t.link.shared_mask.clone()).collect(),
        }
    }

    /// Rebuilds the raw parameter set from the link and natural blocks.
    pub fn model_params(&self) -> ModelParams {
        ModelParams {
            factor: FactorModel {
                n_factors: self.n_factors,
                tasks: self
                    .tasks
                    .iter()
                    .map(|t| TaskLoadings {
                        intercept: t.link.intercept.clone(),
                        covar_load: t.link.covariate_effects.clone(),
                        factor_load: t.link.loadings.clone(),
                        shared_mask: t.link.shared_mask.clone(),
                        links: t.link.links.clone(),
                    })
                    .collect(),
            },
            scalars: self
                .tasks
                .iter()
                .map(|t| t.natural.scalars.iter().map(|n| n.value).collect())
                .collect(),
            hmm: self
                .tasks
                .iter()
                .map(|t| HmmParams {
                    init_prob_engaged: t.natural.initial_engaged,
                    trans_coef: t.link.transitions.clone(),
                })
                .collect(),
        }
    }

    pub fn validate(&self, path: &Path) -> Result<()> {
        if self.format != PARAMS_FORMAT || self.version != PARAMS_VERSION {
            return Err(CliError::format(
                path,
                format!(
                    "expected {PARAMS_FORMAT} version {PARAMS_VERSION}, found {} version {}",
                    self.format, self.version
                ),
            ));
        }
        for t in &self.tasks {
            let names = t.model.scalar_names();
            if t.natural.scalars.len() != names.len() || t.natural.scalars.iter().zip(names).any(|(a, b)| a.name != *b) {
                return Err(CliError::format(
                    path,
                    format!("task {}: scalars must be {names:?}", t.task_id),
                ));
            }
        }
        let spec = self.model_spec();
        spec.validate()?;
        self.model_params().factor.validate()?;
        Ok(())
    }
}

fn diagnostics(fit: &FitResult, task_ids: &[u32], data: &Dataset) -> FitDiagnostics {
    FitDiagnostics {
        task_ids: task_ids.to_vec(),
        elbo_trace: fit.elbo_trace.clone(),
        converged: fit.converged,
        iterations: fit.iterations,
        restart_id: fit.restart_id,
        restarts: fit.restarts.clone(),
        flagged_subjects: fit.flagged_subjects.iter().map(|&i| data.subjects[i].id.clone()).collect(),
    }
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| CliError::format(path, e))?;
    s.push('\n');
    fs::write(path, s).map_err(|e| CliError::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let s = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&s).map_err(|e| CliError::format(path, e))
}

pub fn read_params(path: &Path) -> Result<ParamsDocument> {
    let doc: ParamsDocument = read_json(path)?;
    doc.validate(path)?;
    Ok(doc)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct PosteriorRow {
    subject_id: String,
    task_id: u32,
    trial: usize,
    prob_engaged: f64,
    decoded_state: u8,
}

/// Writes `[subject][task]` state weights, one row per trial.
pub fn write_posteriors(data: &Dataset, post: &[Vec<PosteriorWeights>], path: &Path) -> Result<()> {
    let mut w = csv_writer(path)?;
    for (s, ps) in data.subjects.iter().zip(post) {
        for (k, p) in ps.iter().enumerate() {
            for (j, (z, d)) in p.zeta.iter().zip(p.decode()).enumerate() {
                w.serialize(PosteriorRow {
                    subject_id: s.id.clone(),
                    task_id: data.task_ids[k],
                    trial: j + 1,
                    prob_engaged: z[1],
                    decoded_state: d,
                })
                .map_err(csv_err(path))?;
            }
        }
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Engaged-state weights keyed by `(subject, task_id)`, in trial order.
pub type EngagedWeights = BTreeMap<(String, u32), Vec<f64>>;

pub fn read_posteriors(path: &Path) -> Result<EngagedWeights> {
    let mut rdr = csv_reader(path)?;
    let mut rows: BTreeMap<(String, u32), Vec<(usize, f64)>> = BTreeMap::new();
    for r in rdr.deserialize::<PosteriorRow>() {
        let r = r.map_err(csv_err(path))?;
        rows.entry((r.subject_id, r.task_id))
            .or_default()
            .push((r.trial, r.prob_engaged));
    }
    Ok(rows
        .into_iter()
        .map(|(k, mut v)| {
            v.sort_by_key(|x| x.0);
            (k, v.into_iter().map(|x| x.1).collect())
        })
        .collect())
}

/// Writes any serializable rows as CSV.
pub fn write_rows<T: Serialize>(rows: &[T], path: &Path) -> Result<()> {
    let mut w = csv_writer(path)?;
    for r in rows {
        w.serialize(r).map_err(csv_err(path))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut rdr = csv_reader(path)?;
    rdr.deserialize().map(|r| r.map_err(csv_err(path))).collect()
}

/// Appends a line to a text file, creating it if needed.
pub fn append_line(path: &Path, line: &str) -> Result<()> {
    let mut f = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| CliError::io(path, e))?;
    writeln!(f, "{line}").map_err(|e| CliError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use shift_core::simulator::{setting_preset, simulate_dataset, Preset};

    #[test]
    fn dataset_roundtrip_through_csv() {
        let cfg = setting_preset(Preset::Setting1, 3, 4);
        let (data, _) = simulate_dataset(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let (t, c) = (dir.path().join("d.csv"), dir.path().join("c.csv"));
        write_dataset(&data, &t, &c).unwrap();
        let back = read_dataset(&t, Some(&c), RtUnit::S).unwrap();
        assert_eq!(back, data);
        assert_eq!(infer_spec(&back), cfg.spec);
    }

    #[test]
    fn millisecond_ingestion_scales_rts() {
        let dir = tempfile::tempdir().unwrap();
        let t = dir.path().join("d.csv");
        fs::write(
            &t,
            "subject_id,task_id,trial,stimulus,action,rt_seconds,reward\na,2,2,1,1,640,\na,2,1,0,1,500,\n",
        )
        .unwrap();
        let d = read_dataset(&t, None, RtUnit::Ms).unwrap();
        assert_eq!(d.task_ids, vec![2]);
        assert_eq!(d.n_covariates, 0);
        let rts: Vec<f64> = d.subjects[0].tasks[0].iter().map(|t| t.rt).collect();
        assert_eq!(rts, vec![0.5, 0.64]);
    }

    #[test]
    fn missing_covariates_are_reported() {
        let dir = tempfile::tempdir().unwrap();
        let t = dir.path().join("d.csv");
        let c = dir.path().join("c.csv");
        fs::write(
            &t,
            "subject_id,task_id,trial,stimulus,action,rt_seconds,reward\na,2,1,0,1,0.5,\n",
        )
        .unwrap();
        fs::write(&c, "subject_id,x1\nb,1\n").unwrap();
        let e = read_dataset(&t, Some(&c), RtUnit::S).unwrap_err();
        assert_eq!(e.exit_code(), 4);
    }

    #[test]
    fn params_document_roundtrip() {
        let cfg = setting_preset(Preset::Setting1, 4, 2);
        let (data, truth) = simulate_dataset(&cfg).unwrap();
        let doc = ParamsDocument::truth(&cfg.spec, &data, &truth, Some("setting1".into()));
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("truth.json");
        write_json(&doc, &p).unwrap();
        let back = read_params(&p).unwrap();
        assert_eq!(back, doc);
        assert_eq!(back.model_params(), cfg.true_params);
        assert_eq!(back.model_spec(), cfg.spec);
        assert_eq!(back.tasks[0].natural.scalars[0].name, "learn_rate");
        assert!((back.tasks[1].natural.population_shared[2].value - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.json");
        fs::write(
            &p,
            r#"{"format":"shift-params","version":1,"kind":"truth","n_factors":0,"tasks":[],"subjects":[],"extra":1}"#,
        )
        .unwrap();
        assert!(read_params(&p).is_err());
    }
}
