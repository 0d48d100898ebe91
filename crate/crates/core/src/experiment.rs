//! Single runs and parameter sweeps over the network model, with JSON and
//! CSV artifacts.
//!
//! `run_single` writes `summary.json` (resolved config, seed, engine
//! report, diagnostics) and `timing.json` (wall time). `run_sweep` writes
//! `sweep.csv`, one row per grid point, engine and replication, plus a
//! `summary.json` with the resolved config of every grid point and all run
//! records. Wall time is kept out of `summary.json` so that reruns produce
//! identical bytes.
//!
//! `sweep.csv` columns, in order:
//!
//! 1. one column per sweep axis, named by its key path
//! 2. `engine, replication, seed, estimate, budget_used, budget_limit,
//!    budget_exhausted, completed, extinction_level, resolution_floor,
//!    pred_rel_bias, pred_rel_var, pred_rel_bias_first_order,
//!    pred_rel_var_first_order, classical_rel_var, mc_trajectories, mc_hits,
//!    mc_min_resolvable, mc_rel_var_pred, policy_selections,
//!    mean_selected_index, degenerate_selections, fallback_selections,
//!    inner_budget_used, inner_budget_limit, inner_budget_exhausted`
//! 3. `p_0 … p_{K-1}`, then `A_0 …`, `S_0 …`, `cost_0 …`
//! 4. `policy_freq_0 … policy_freq_{|U|-1}` when `smc+policy` runs, with
//!    `|U|` the largest policy set in the sweep
//!
//! Cells that do not apply to an engine are left empty.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::config::{grid_points, ConfigError, Engine, ExperimentConfig, ParamError};
use crate::mc::{run_mc, McReport};
use crate::netmodel::{NetModel, NetSnapshot};
use crate::policy::{run_smc_with_reconfiguration, ReconfigurationReport};
use crate::rng::hash_words;
use crate::sim::SimError;
use crate::smc::{predict_diagnostics, run_smc, Diagnostics, SmcError, SmcReport};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Smc(#[from] SmcError),
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("csv output: {0}")]
    Csv(#[from] csv::Error),
}

impl From<ParamError> for ExperimentError {
    fn from(e: ParamError) -> Self {
        ExperimentError::Config(ConfigError::Invalid(e))
    }
}

impl From<SimError> for ExperimentError {
    fn from(e: SimError) -> Self {
        ExperimentError::Smc(SmcError::Sim(e))
    }
}

#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EngineReport {
    Mc(McReport),
    Smc(SmcReport<NetSnapshot>),
    #[serde(rename = "smc+policy")]
    SmcPolicy(ReconfigurationReport<NetSnapshot>),
}

impl EngineReport {
    pub fn estimate(&self) -> f64 {
        match self {
            EngineReport::Mc(r) => r.estimate,
            EngineReport::Smc(r) => r.estimate,
            EngineReport::SmcPolicy(r) => r.smc.estimate,
        }
    }

    pub fn smc(&self) -> Option<&SmcReport<NetSnapshot>> {
        match self {
            EngineReport::Mc(_) => None,
            EngineReport::Smc(r) => Some(r),
            EngineReport::SmcPolicy(r) => Some(&r.smc),
        }
    }
}

/// One engine execution at one configuration.
#[derive(Debug, Clone, Serialize)]
pub struct RunRecord {
    pub engine: Engine,
    pub seed: u64,
    pub estimate: f64,
    pub report: EngineReport,
    /// Predicted bias and variance; absent for MC and incomplete runs.
    pub diagnostics: Option<Diagnostics>,
}

/// Runs `engine` once under `cfg` (sweep section ignored).
pub fn execute(cfg: &ExperimentConfig, engine: Engine, seed: u64) -> Result<RunRecord, ExperimentError> {
    let model = NetModel::new(cfg.model)?;
    let report = match engine {
        Engine::Mc => {
            cfg.mc.validate(model.horizon_steps())?;
            EngineReport::Mc(run_mc(&model, &cfg.mc, seed)?)
        }
        Engine::Smc => EngineReport::Smc(run_smc(&model, &cfg.levels, &cfg.smc, seed)?),
        Engine::SmcPolicy => {
            let set = cfg.policy.policy_set(&cfg.model)?;
            EngineReport::SmcPolicy(run_smc_with_reconfiguration(
                &model,
                &cfg.levels,
                &cfg.smc,
                &set,
                &cfg.policy.lookahead(),
                seed,
            )?)
        }
    };
    let diagnostics = report.smc().and_then(|r| predict_diagnostics(r, &cfg.smc).ok());
    Ok(RunRecord {
        engine,
        seed,
        estimate: report.estimate(),
        report,
        diagnostics,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct SingleSummary<'a> {
    pub config: &'a ExperimentConfig,
    pub seed: u64,
    pub engine: Engine,
    pub estimate: f64,
    pub result: &'a EngineReport,
    pub diagnostics: &'a Option<Diagnostics>,
}

pub struct SingleArtifact {
    pub record: RunRecord,
    /// Contents of `summary.json`.
    pub summary_json: String,
    pub wall_seconds: f64,
}

/// Runs the configured engine once, without writing anything.
pub fn single_artifact(cfg: &ExperimentConfig) -> Result<SingleArtifact, ExperimentError> {
    cfg.validate()?;
    let mut resolved = cfg.clone();
    resolved.sweep = Default::default();
    let start = Instant::now();
    let record = execute(&resolved, resolved.engine, resolved.seed)?;
    let wall_seconds = start.elapsed().as_secs_f64();
    let summary = SingleSummary {
        config: &resolved,
        seed: resolved.seed,
        engine: record.engine,
        estimate: record.estimate,
        result: &record.report,
        diagnostics: &record.diagnostics,
    };
    let summary_json = to_json(&summary);
    Ok(SingleArtifact {
        record,
        summary_json,
        wall_seconds,
    })
}

/// Runs once and writes `summary.json` and `timing.json` into `cfg.out_dir`.
pub fn run_single(cfg: &ExperimentConfig) -> Result<SingleArtifact, ExperimentError> {
    let artifact = single_artifact(cfg)?;
    write_file(&cfg.out_dir, "summary.json", &artifact.summary_json)?;
    write_file(&cfg.out_dir, "timing.json", &timing_json(artifact.wall_seconds))?;
    Ok(artifact)
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepPoint {
    pub index: usize,
    pub axes: Vec<(String, f64)>,
    pub config: ExperimentConfig,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRun {
    pub point: usize,
    pub replication: u64,
    #[serde(flatten)]
    pub record: RunRecord,
}

pub struct SweepArtifact {
    pub points: Vec<SweepPoint>,
    pub runs: Vec<SweepRun>,
    /// Contents of `sweep.csv`.
    pub csv: String,
    /// Contents of `summary.json`.
    pub summary_json: String,
    pub wall_seconds: f64,
}

/// Seed for replication `rep` at a grid point.
pub fn point_seed(master: u64, axes: &[(String, f64)], rep: u64) -> u64 {
    let mut words: Vec<u64> = axes.iter().map(|(_, v)| v.to_bits()).collect();
    words.push(rep);
    hash_words(master, &words)
}

/// Runs the full grid without writing anything.
///
/// Every engine at a grid point and replication receives the same seed, so
/// engines are compared on paired runs.
pub fn sweep_artifact(cfg: &ExperimentConfig) -> Result<SweepArtifact, ExperimentError> {
    cfg.validate()?;
    let points: Vec<SweepPoint> = grid_points(&cfg.sweep.axes)
        .into_iter()
        .enumerate()
        .map(|(index, axes)| {
            let config = cfg.at_point(&axes)?;
            Ok(SweepPoint { index, axes, config })
        })
        .collect::<Result<_, ParamError>>()?;
    let engines = cfg.sweep_engines();
    let mut jobs = Vec::new();
    for p in &points {
        for &engine in &engines {
            for rep in 0..cfg.replications {
                jobs.push((p.index, engine, rep));
            }
        }
    }
    let start = Instant::now();
    let runs = jobs
        .par_iter()
        .map(|&(point, engine, replication)| {
            let p = &points[point];
            let seed = point_seed(cfg.seed, &p.axes, replication);
            let mut resolved = p.config.clone();
            resolved.seed = seed;
            let record = execute(&resolved, engine, seed)?;
            Ok(SweepRun {
                point,
                replication,
                record,
            })
        })
        .collect::<Result<Vec<_>, ExperimentError>>()?;
    let wall_seconds = start.elapsed().as_secs_f64();

    let policy_columns = if engines.contains(&Engine::SmcPolicy) {
        points.iter().map(|p| p.config.policy.size).max().unwrap_or(0)
    } else {
        0
    };
    let csv = render_csv(cfg, &points, &runs, policy_columns)?;

    #[derive(Serialize)]
    struct Summary<'a> {
        config: &'a ExperimentConfig,
        seed: u64,
        engines: &'a [Engine],
        replications: u64,
        columns: Vec<String>,
        points: &'a [SweepPoint],
        runs: &'a [SweepRun],
    }
    let summary_json = to_json(&Summary {
        config: cfg,
        seed: cfg.seed,
        engines: &engines,
        replications: cfg.replications,
        columns: csv_header(cfg, policy_columns),
        points: &points,
        runs: &runs,
    });
    Ok(SweepArtifact {
        points,
        runs,
        csv,
        summary_json,
        wall_seconds,
    })
}

/// Runs the grid and writes `sweep.csv`, `summary.json` and `timing.json`.
pub fn run_sweep(cfg: &ExperimentConfig) -> Result<SweepArtifact, ExperimentError> {
    let artifact = sweep_artifact(cfg)?;
    write_file(&cfg.out_dir, "sweep.csv", &artifact.csv)?;
    write_file(&cfg.out_dir, "summary.json", &artifact.summary_json)?;
    write_file(&cfg.out_dir, "timing.json", &timing_json(artifact.wall_seconds))?;
    Ok(artifact)
}

const FIXED_COLUMNS: &[&str] = &[
    "engine",
    "replication",
    "seed",
    "estimate",
    "budget_used",
    "budget_limit",
    "budget_exhausted",
    "completed",
    "extinction_level",
    "resolution_floor",
    "pred_rel_bias",
    "pred_rel_var",
    "pred_rel_bias_first_order",
    "pred_rel_var_first_order",
    "classical_rel_var",
    "mc_trajectories",
    "mc_hits",
    "mc_min_resolvable",
    "mc_rel_var_pred",
    "policy_selections",
    "mean_selected_index",
    "degenerate_selections",
    "fallback_selections",
    "inner_budget_used",
    "inner_budget_limit",
    "inner_budget_exhausted",
];

pub fn csv_header(cfg: &ExperimentConfig, policy_columns: usize) -> Vec<String> {
    let k = cfg.levels.stages();
    let mut h: Vec<String> = cfg.sweep.axes.iter().map(|a| a.name.clone()).collect();
    h.extend(FIXED_COLUMNS.iter().map(|s| s.to_string()));
    for prefix in ["p", "A", "S", "cost"] {
        h.extend((0..k).map(|i| format!("{prefix}_{i}")));
    }
    h.extend((0..policy_columns).map(|i| format!("policy_freq_{i}")));
    h
}

fn cell<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn render_csv(
    cfg: &ExperimentConfig,
    points: &[SweepPoint],
    runs: &[SweepRun],
    policy_columns: usize,
) -> Result<String, ExperimentError> {
    let k = cfg.levels.stages();
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(csv_header(cfg, policy_columns))?;
    for run in runs {
        let rec = &run.record;
        let mut row: Vec<String> = points[run.point].axes.iter().map(|(_, v)| v.to_string()).collect();
        let smc = rec.report.smc();
        let mc = match &rec.report {
            EngineReport::Mc(r) => Some(r),
            _ => None,
        };
        let pol = match &rec.report {
            EngineReport::SmcPolicy(r) => Some(r),
            _ => None,
        };
        let diag = rec.diagnostics.as_ref();
        let (budget_used, budget_limit, exhausted) = match (smc, mc) {
            (Some(s), _) => (s.budget_used, s.budget_limit, s.budget_exhausted),
            (None, Some(m)) => (m.steps_used, m.trajectories * m.horizon_steps, false),
            _ => unreachable!("every report is either mc or smc"),
        };
        row.extend([
            rec.engine.to_string(),
            run.replication.to_string(),
            rec.seed.to_string(),
            rec.estimate.to_string(),
            budget_used.to_string(),
            budget_limit.to_string(),
            exhausted.to_string(),
            cell(smc.map(|s| s.completed)),
            cell(smc.and_then(|s| s.extinction_level)),
            cell(smc.map(|s| s.resolution_floor)),
            cell(diag.map(|d| d.chain.rel_bias)),
            cell(diag.map(|d| d.chain.rel_var)),
            cell(diag.map(|d| d.chain.first_order_bias)),
            cell(diag.map(|d| d.chain.first_order_var)),
            cell(diag.map(|d| d.classical_rel_var)),
            cell(mc.map(|m| m.trajectories)),
            cell(mc.map(|m| m.hits)),
            cell(mc.map(|m| m.min_resolvable)),
            cell(mc.and_then(|m| m.rel_var_pred)),
            cell(pol.map(|p| p.selections)),
            cell(pol.and_then(|p| p.mean_selected_index)),
            cell(pol.map(|p| p.degenerate_selections)),
            cell(pol.map(|p| p.fallback_selections)),
            cell(pol.map(|p| p.inner_budget_used)),
            cell(pol.map(|p| p.inner_budget_limit)),
            cell(pol.map(|p| p.inner_budget_exhausted)),
        ]);
        let level = |i: usize| smc.and_then(|s| s.levels.get(i));
        row.extend((0..k).map(|i| cell(level(i).map(|l| l.estimate))));
        row.extend((0..k).map(|i| cell(level(i).map(|l| l.attempts))));
        row.extend((0..k).map(|i| cell(level(i).map(|l| l.successes))));
        row.extend((0..k).map(|i| cell(level(i).map(|l| l.cost))));
        row.extend((0..policy_columns).map(|i| cell(pol.and_then(|p| p.selection_frequencies.get(i)))));
        w.write_record(&row)?;
    }
    let bytes = w.into_inner().map_err(|e| csv::Error::from(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("artifacts serialize");
    s.push('\n');
    s
}

fn timing_json(wall_seconds: f64) -> String {
    to_json(&serde_json::json!({ "wall_seconds": wall_seconds }))
}

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<(), ExperimentError> {
    let io = |source| ExperimentError::Io {
        path: dir.join(name),
        source,
    };
    std::fs::create_dir_all(dir).map_err(io)?;
    std::fs::write(dir.join(name), contents).map_err(io)
}
