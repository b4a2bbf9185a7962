//! Command-line entry point. Every failure maps to a fixed exit code:
//! 2 configuration, 3 numerical or failed check, 4 input/output and data.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;
use shift_core::data::Dataset;
use shift_core::estimator::{fit_shift, fit_split, FitResult};
use shift_core::markov::PosteriorWeights;
use shift_core::simulator::{simulate_dataset_with, LoadingSetting, Preset};

use crate::checks;
use crate::config::{IngestConfig, RunConfig};
use crate::error::{CliError, Result};
use crate::evaluate::{evaluate_dir, report, TableRow};
use crate::formats::{
    infer_spec, read_dataset, read_rows, write_dataset, write_json, write_posteriors, write_rows, Method, ParamsDocument, RtUnit,
};
use crate::log::{EventLog, LogObserver};
use crate::pool::Pool;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PresetArg {
    Setting1,
    Setting2,
}

impl From<PresetArg> for Preset {
    fn from(p: PresetArg) -> Self {
        match p {
            PresetArg::Setting1 => Preset::Setting1,
            PresetArg::Setting2 => Preset::Setting2,
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "shift",
    version,
    about = "Joint drift-diffusion / hidden-Markov models across behavioral tasks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate a dataset with its ground truth.
    Simulate {
        #[arg(long, value_enum)]
        preset: Option<PresetArg>,
        /// Number of subjects.
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Replicate index; distinct replicates use independent streams.
        #[arg(long)]
        replicate: Option<u64>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Worker threads; 0 means one per core.
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Fit the joint model or the per-task baseline.
    Fit {
        #[arg(long, value_enum)]
        method: Option<Method>,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Trial CSV.
        #[arg(long)]
        data: PathBuf,
        /// Covariate CSV; subjects get no covariates when absent.
        #[arg(long)]
        covariates: Option<PathBuf>,
        #[arg(long, value_enum)]
        rt_unit: Option<RtUnit>,
        /// Drop trials outside the configured RT window.
        #[arg(long)]
        truncate: bool,
        #[arg(long)]
        n_factors: Option<usize>,
        #[arg(long)]
        restarts: Option<usize>,
        #[arg(long)]
        quadrature_nodes: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Score every fit in a replicate directory against its truth.
    Evaluate {
        /// Directory of replicate subdirectories.
        #[arg(long)]
        dir: PathBuf,
        /// Output directory; defaults to `--dir`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Merge evaluation tables into one comparison table.
    Report {
        /// `table.csv` files written by `evaluate`.
        #[arg(long, required = true, num_args = 1..)]
        tables: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the fast invariant suite.
    Selfcheck {
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

/// Parses `argv` (including the program name), runs the command and returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error [{}]: {e}", e.kind());
            e.exit_code()
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    path.map_or_else(|| Ok(RunConfig::default()), RunConfig::load)
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn execute(cmd: Command) -> Result<()> {
    match cmd {
        Command::Simulate {
            preset,
            n,
            seed,
            replicate,
            config,
            out,
            workers,
        } => {
            let cfg = load_config(config.as_deref())?;
            let preset = preset.map(Preset::from);
            let sim = cfg.sim_config(preset, n, seed, replicate)?;
            let pool = Pool::new(workers.or(cfg.workers).unwrap_or(0))?;
            create_dir(&out)?;
            let log = EventLog::to_file(&out.join("log.jsonl"))?;
            let (data, truth) = simulate_dataset_with(&sim, &pool)?;
            let label = match preset.or(cfg.simulate.as_ref().and_then(|s| s.preset)) {
                Some(Preset::Setting1) => "setting1",
                Some(Preset::Setting2) => "setting2",
                None => match sim.psi_setting {
                    LoadingSetting::None => "custom-no-sharing",
                    _ => "custom",
                },
            };
            write_dataset(&data, &out.join("dataset.csv"), &out.join("covariates.csv"))?;
            let doc = ParamsDocument::truth(&sim.spec, &data, &truth, Some(label.into()));
            write_json(&doc, &out.join("truth.json"))?;
            write_json(&sim, &out.join("design.json"))?;
            log.emit(
                "simulated",
                json!({"setting": label, "subjects": data.n_subjects(), "trials": data.n_trials(), "seed": sim.seed, "replicate": sim.replicate}),
            )?;
            println!(
                "simulated {} subjects ({} trials) into {}",
                data.n_subjects(),
                data.n_trials(),
                out.display()
            );
            Ok(())
        }
        Command::Fit {
            method,
            config,
            data,
            covariates,
            rt_unit,
            truncate,
            n_factors,
            restarts,
            quadrature_nodes,
            seed,
            out,
            workers,
        } => {
            let cfg = load_config(config.as_deref())?;
            let ingest = cfg.ingest.clone().unwrap_or_default();
            let ingest = IngestConfig {
                rt_unit: rt_unit.unwrap_or(ingest.rt_unit),
                truncate: truncate || ingest.truncate,
                ..ingest
            };
            let mut fit_cfg = cfg.fit.clone().unwrap_or_default();
            if let Some(v) = n_factors {
                fit_cfg.n_factors = v;
            }
            if let Some(v) = restarts {
                fit_cfg.restarts = v;
            }
            if let Some(v) = quadrature_nodes {
                fit_cfg.quadrature_nodes = v;
            }
            if let Some(v) = seed {
                fit_cfg.seed = v;
            }
            fit_cfg.validate()?;
            let method = method.or(cfg.method).unwrap_or(Method::Shift);
            let pool = Pool::new(workers.or(cfg.workers).unwrap_or(0))?;

            let mut dataset = read_dataset(&data, covariates.as_deref(), ingest.rt_unit)?;
            create_dir(&out)?;
            let log = EventLog::to_file(&out.join("log.jsonl"))?;
            if ingest.truncate {
                let [lo, hi] = ingest.truncate_bounds;
                let removed = dataset.truncate_rts(lo, hi);
                log.emit("truncated", json!({"lower": lo, "upper": hi, "removed": removed}))?;
            }
            let spec = match &cfg.model {
                Some(m) => m.clone(),
                None => infer_spec(&dataset),
            };
            log.emit(
                "fit_start",
                json!({"method": method.name(), "subjects": dataset.n_subjects(), "trials": dataset.n_trials(), "n_factors": fit_cfg.n_factors, "restarts": fit_cfg.restarts, "seed": fit_cfg.seed}),
            )?;
            let started = Instant::now();
            let mut observer = LogObserver::new(&log, json!({"method": method.name()}));
            let (doc, posteriors, elbo) = match method {
                Method::Shift => {
                    let fit = fit_shift(&dataset, &spec, &fit_cfg, &pool, &mut observer)?;
                    let doc = ParamsDocument::from_shift(&spec, &dataset, &fit);
                    (doc, fit.posteriors.clone(), vec![fit.final_elbo()])
                }
                Method::Split => {
                    let fits = fit_split(&dataset, &spec, &fit_cfg, &pool, &mut observer)?;
                    let doc = ParamsDocument::from_split(&spec, &dataset, &fits);
                    (
                        doc,
                        split_posteriors(&dataset, &fits),
                        fits.iter().map(FitResult::final_elbo).collect(),
                    )
                }
            };
            observer.finish()?;
            write_json(&doc, &out.join("estimates.json"))?;
            write_posteriors(&dataset, &posteriors, &out.join("posteriors.csv"))?;
            log.emit(
                "fit_done",
                json!({"method": method.name(), "final_elbo": elbo, "seconds": started.elapsed().as_secs_f64()}),
            )?;
            println!("{} fit written to {} (final ELBO {:?})", method.name(), out.display(), elbo);
            Ok(())
        }
        Command::Evaluate { dir, out } => {
            let out = out.unwrap_or_else(|| dir.clone());
            let eval = evaluate_dir(&dir)?;
            create_dir(&out)?;
            write_rows(&eval.table, &out.join("table.csv"))?;
            write_rows(&eval.scores, &out.join("scores.csv"))?;
            write_rows(&eval.correlations, &out.join("correlations.csv"))?;
            println!(
                "evaluated {} score rows and {} parameter rows into {}",
                eval.scores.len(),
                eval.table.len(),
                out.display()
            );
            Ok(())
        }
        Command::Report { tables, out } => {
            let tables = tables.iter().map(|p| read_rows::<TableRow>(p)).collect::<Result<Vec<_>>>()?;
            let (header, rows) = report(&tables);
            let mut w = csv::Writer::from_path(&out).map_err(|e| CliError::format(&out, e))?;
            w.write_record(&header).map_err(|e| CliError::format(&out, e))?;
            for r in &rows {
                w.write_record(r).map_err(|e| CliError::format(&out, e))?;
            }
            w.flush().map_err(|e| CliError::io(&out, e))?;
            println!("report with {} parameters written to {}", rows.len(), out.display());
            Ok(())
        }
        Command::Selfcheck { seed } => {
            let reports = checks::run_all(seed)?;
            for r in &reports {
                println!(
                    "{} {}: max error {:.3e} (tolerance {:.0e}, {} cases, {:.2} s)",
                    if r.passed { "PASS" } else { "FAIL" },
                    r.name,
                    r.max_error,
                    r.tolerance,
                    r.cases,
                    r.seconds
                );
            }
            match reports.iter().find(|r| !r.passed) {
                Some(r) => Err(CliError::Check(format!("{} exceeded its tolerance", r.name))),
                None => Ok(()),
            }
        }
    }
}

/// Reassembles per-task posteriors into `[subject][task]`, empty where a subject has no trials.
pub fn split_posteriors(data: &Dataset, fits: &[FitResult]) -> Vec<Vec<PosteriorWeights>> {
    let empty = PosteriorWeights {
        zeta: Vec::new(),
        xi: Vec::new(),
        log_marginal: 0.0,
    };
    let mut out = vec![vec![empty; data.n_tasks()]; data.n_subjects()];
    for (k, fit) in fits.iter().enumerate() {
        let mut rows = fit.posteriors.iter();
        for (i, s) in data.subjects.iter().enumerate() {
            if s.tasks[k].is_empty() {
                continue;
            }
            if let Some(row) = rows.next() {
                out[i][k] = row[0].clone();
            }
        }
    }
    out
}
