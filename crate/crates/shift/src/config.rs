//! Run configuration document. Unknown keys are rejected and every section is
//! validated before any computation starts. The JSON schema shipped in
//! `schema/run_config.schema.json` describes the same layout.

use std::path::Path;

use serde::{Deserialize, Serialize};
use shift_core::estimator::{FitConfig, ModelSpec};
use shift_core::simulator::{setting_preset, Preset, SimConfig};

use crate::error::{CliError, Result};
use crate::formats::{read_json, Method, RtUnit};

/// Default RT window applied by `--truncate`, in seconds.
pub const TRUNCATE_BOUNDS: [f64; 2] = [0.150, 1.500];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IngestConfig {
    #[serde(default)]
    pub rt_unit: RtUnit,
    /// Drop trials outside `truncate_bounds`.
    #[serde(default)]
    pub truncate: bool,
    #[serde(default = "default_bounds")]
    pub truncate_bounds: [f64; 2],
}

fn default_bounds() -> [f64; 2] {
    TRUNCATE_BOUNDS
}

impl Default for IngestConfig {
    fn default() -> Self {
        Self {
            rt_unit: RtUnit::S,
            truncate: false,
            truncate_bounds: TRUNCATE_BOUNDS,
        }
    }
}

/// Simulation section: a preset, optionally overridden, or a full design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSection {
    #[serde(default)]
    pub preset: Option<Preset>,
    #[serde(default)]
    pub n_subjects: Option<usize>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub replicate: Option<u64>,
    /// Complete design; mutually exclusive with `preset`.
    #[serde(default)]
    pub design: Option<SimConfig>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Task models, links and shared-component mask; inferred from the data when absent.
    #[serde(default)]
    pub model: Option<ModelSpec>,
    #[serde(default)]
    pub fit: Option<FitConfig>,
    #[serde(default)]
    pub method: Option<Method>,
    #[serde(default)]
    pub simulate: Option<SimulateSection>,
    #[serde(default)]
    pub ingest: Option<IngestConfig>,
    /// Worker threads; 0 means one per core.
    #[serde(default)]
    pub workers: Option<usize>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let cfg: RunConfig = read_json(path).map_err(|e| match e {
            CliError::Format { path, message } => CliError::Config(format!("{}: {message}", path.display())),
            other => other,
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(m) = &self.model {
            m.validate()?;
        }
        if let Some(f) = &self.fit {
            f.validate()?;
        }
        if let Some(i) = &self.ingest {
            let [lo, hi] = i.truncate_bounds;
            if !(lo >= 0.0 && hi > lo) {
                return Err(CliError::Config("truncate_bounds must satisfy 0 <= lower < upper".into()));
            }
        }
        if let Some(s) = &self.simulate {
            if s.preset.is_some() && s.design.is_some() {
                return Err(CliError::Config("simulate: give either preset or design, not both".into()));
            }
            if let Some(d) = &s.design {
                d.validate()?;
            }
        }
        Ok(())
    }

    /// Simulation design with command-line overrides applied.
    pub fn sim_config(
        &self,
        preset: Option<Preset>,
        n: Option<usize>,
        seed: Option<u64>,
        replicate: Option<u64>,
    ) -> Result<SimConfig> {
        let section = self.simulate.clone().unwrap_or(SimulateSection {
            preset: None,
            n_subjects: None,
            seed: None,
            replicate: None,
            design: None,
        });
        let mut cfg = match (preset.or(section.preset), section.design) {
            (Some(p), _) => setting_preset(p, 100, 0),
            (None, Some(d)) => d,
            (None, None) => return Err(CliError::Config("simulate needs --preset or a design in the config".into())),
        };
        if let Some(n) = n.or(section.n_subjects) {
            cfg.n_subjects = n;
        }
        if let Some(s) = seed.or(section.seed) {
            cfg.seed = s;
        }
        if let Some(r) = replicate.or(section.replicate) {
            cfg.replicate = r;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn load_str(s: &str) -> Result<RunConfig> {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        std::fs::write(&p, s).unwrap();
        RunConfig::load(&p)
    }

    #[test]
    fn empty_document_is_valid() {
        assert_eq!(load_str("{}").unwrap(), RunConfig::default());
    }

    #[test]
    fn unknown_keys_are_config_errors() {
        let e = load_str(r#"{"fit": {"n_factors": 2, "bogus": 1}}"#).unwrap_err();
        assert_eq!(e.exit_code(), 2);
        let e = load_str(r#"{"colour": "red"}"#).unwrap_err();
        assert_eq!(e.exit_code(), 2);
    }

    #[test]
    fn invalid_values_are_config_errors() {
        let e = load_str(r#"{"fit": {"quadrature_nodes": 0}}"#).unwrap_err();
        assert_eq!(e.exit_code(), 2);
        let e = load_str(r#"{"ingest": {"truncate_bounds": [1.5, 0.15]}}"#).unwrap_err();
        assert_eq!(e.exit_code(), 2);
    }

    #[test]
    fn partial_fit_section_keeps_defaults() {
        let c = load_str(r#"{"fit": {"n_factors": 1, "seed": 9}, "method": "split"}"#).unwrap();
        let f = c.fit.unwrap();
        assert_eq!((f.n_factors, f.seed, f.quadrature_nodes), (1, 9, 5));
        assert_eq!(c.method, Some(Method::Split));
    }

    #[test]
    fn command_line_overrides_preset_fields() {
        let c = load_str(r#"{"simulate": {"preset": "setting2", "n_subjects": 12, "seed": 3}}"#).unwrap();
        let s = c.sim_config(None, Some(7), None, None).unwrap();
        assert_eq!((s.n_subjects, s.seed), (7, 3));
        assert!(RunConfig::default().sim_config(None, None, None, None).is_err());
    }

    #[test]
    fn shipped_schema_lists_every_fit_field() {
        let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../schema/run_config.schema.json");
        let schema: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
        let listed = schema["$defs"]["fit"]["properties"].as_object().unwrap();
        let actual = serde_json::to_value(FitConfig::default()).unwrap();
        let actual = actual.as_object().unwrap();
        assert_eq!(listed.keys().collect::<Vec<_>>(), actual.keys().collect::<Vec<_>>());
        for (k, v) in actual {
            assert_eq!(&listed[k]["default"], v, "{k}");
        }
    }
}
