//! Structured JSON-lines event log.

use std::path::{Path, PathBuf};

use serde_json::{json, Map, Value};
use shift_core::estimator::{FitObserver, IterationRecord, RestartSummary};

use crate::error::Result;
use crate::formats::append_line;

/// Appends one JSON object per event to a file; a log without a path discards events.
#[derive(Debug, Clone, Default)]
pub struct EventLog {
    path: Option<PathBuf>,
}

impl EventLog {
    pub fn to_file(path: &Path) -> Result<Self> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| crate::error::CliError::io(dir, e))?;
        }
        std::fs::write(path, "").map_err(|e| crate::error::CliError::io(path, e))?;
        Ok(Self {
            path: Some(path.to_path_buf()),
        })
    }

    pub fn discard() -> Self {
        Self::default()
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    /// `fields` must be a JSON object; its keys are merged after `event`.
    pub fn emit(&self, event: &str, fields: Value) -> Result<()> {
        let Some(path) = &self.path else { return Ok(()) };
        let mut obj = Map::new();
        obj.insert("event".into(), Value::from(event));
        if let Value::Object(m) = fields {
            obj.extend(m);
        }
        append_line(path, &Value::Object(obj).to_string())
    }
}

/// Forwards estimator progress to an [`EventLog`]. The first write failure is
/// kept and returned by [`LogObserver::finish`].
pub struct LogObserver<'a> {
    log: &'a EventLog,
    context: Value,
    pub failure: Option<crate::error::CliError>,
}

impl<'a> LogObserver<'a> {
    pub fn new(log: &'a EventLog, context: Value) -> Self {
        Self {
            log,
            context,
            failure: None,
        }
    }

    fn emit(&mut self, event: &str, mut fields: Value) {
        if self.failure.is_some() {
            return;
        }
        if let (Value::Object(f), Value::Object(c)) = (&mut fields, &self.context) {
            for (k, v) in c {
                f.insert(k.clone(), v.clone());
            }
        }
        if let Err(e) = self.log.emit(event, fields) {
            self.failure = Some(e);
        }
    }

    pub fn finish(self) -> Result<()> {
        self.failure.map_or(Ok(()), Err)
    }
}

impl FitObserver for LogObserver<'_> {
    fn on_iteration(&mut self, r: &IterationRecord) {
        self.emit(
            "iteration",
            json!({
                "restart": r.restart,
                "iteration": r.iteration,
                "elbo": r.elbo,
                "max_param_delta": r.max_param_delta,
                "log_marginal_per_trial": r.log_marginal_per_trial,
            }),
        );
    }

    fn on_restart(&mut self, s: &RestartSummary) {
        self.emit(
            "restart",
            json!({
                "restart": s.restart_id,
                "final_elbo": s.final_elbo,
                "iterations": s.iterations,
                "converged": s.converged,
                "error": s.error,
            }),
        );
    }
}
