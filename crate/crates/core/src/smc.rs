//! Fixed-level splitting with budget-aware population control.
//!
//! Each stage `k` draws checkpoints with replacement from the current pool
//! and continues them with fresh randomness until they reach `l_{k+1}`, run
//! out of horizon, or are absorbed. Sampling at a stage stops at a batch
//! boundary once both the success and the attempt targets are met, or when
//! the global step budget is spent. The stage estimate is `S_k / A_k`; the
//! successful first-hitting checkpoints are resampled into a pool whose size
//! adapts to the observed difficulty, and the overall estimate is the product
//! of the stage estimates.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{self, AnalysisError, ChainPrediction, StagePrediction};
use crate::config::ParamError;
use crate::levels::LevelSchedule;
use crate::rng::{Purpose, RngStream, StreamId};
use crate::sim::{propagate_until, BudgetLedger, Checkpoint, ModelFactory, SimError, Simulator, StopReason};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SmcError {
    #[error("no successful checkpoints to resample from")]
    Extinction,
    #[error("checkpoint pool is empty")]
    EmptyPool,
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Config(#[from] ParamError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SmcConfig {
    /// `S_tar`: successful crossings required per stage.
    pub success_target: u64,
    /// `A_tar`: attempts required per stage.
    pub attempt_target: u64,
    /// `M0`: size of the initial pool.
    pub initial_pool: usize,
    /// `M_m`: lower bound on pool sizes.
    pub min_pool: usize,
    /// `M_M`: upper bound on pool sizes.
    pub max_pool: usize,
    /// `ς ≥ 1`.
    pub safety_factor: f64,
    /// `p_min`, floor applied to the stage estimate when sizing pools.
    pub probability_floor: f64,
    /// `C_T`: total step budget.
    pub budget: u64,
    /// Attempts between evaluations of the stopping rule.
    pub batch_size: u64,
}

impl Default for SmcConfig {
    fn default() -> Self {
        Self {
            success_target: 20,
            attempt_target: 100,
            initial_pool: 100,
            min_pool: 20,
            max_pool: 200,
            safety_factor: 1.5,
            probability_floor: 0.05,
            budget: 5_000_000,
            batch_size: 1,
        }
    }
}

impl SmcConfig {
    pub fn validate(&self) -> Result<(), ParamError> {
        let err = |f: &str, m: &str| Err(ParamError::new(f, m));
        if self.success_target < 1 {
            return err("success_target", "S_tar ≥ 1 required");
        }
        if self.attempt_target < 1 {
            return err("attempt_target", "A_tar ≥ 1 required");
        }
        if self.min_pool < 1 || self.min_pool > self.max_pool {
            return err("min_pool", "1 ≤ M_m ≤ M_M required");
        }
        if self.initial_pool < self.min_pool || self.initial_pool > self.max_pool {
            return err("initial_pool", "M_m ≤ M0 ≤ M_M required");
        }
        if !(self.safety_factor >= 1.0 && self.safety_factor.is_finite()) {
            return err("safety_factor", "ς ≥ 1 required");
        }
        if !(self.probability_floor > 0.0 && self.probability_floor <= 1.0) {
            return err("probability_floor", "0 < p_min ≤ 1 required");
        }
        if self.budget < 1 {
            return err("budget", "C_T ≥ 1 required");
        }
        if self.batch_size < 1 {
            return err("batch_size", "batch_size ≥ 1 required");
        }
        Ok(())
    }
}

/// Outcome of one stage.
#[derive(Debug, Clone, Serialize)]
pub struct LevelRecord<Snap> {
    /// Stage index `k` (from `l_k` to `l_{k+1}`).
    pub level: usize,
    pub attempts: u64,
    pub successes: u64,
    /// `S_k / A_k`, zero when no attempt completed.
    pub estimate: f64,
    /// Steps charged while working on this stage.
    pub cost: u64,
    /// Size of the pool handed to the next stage, if one was built.
    pub next_pool_size: Option<usize>,
    /// Whether the stage ended because the budget ran out before the
    /// stopping rule was satisfied.
    pub budget_exhausted: bool,
    /// Successful first-hitting checkpoints at `l_{k+1}`, in attempt order.
    #[serde(skip)]
    pub checkpoints: Vec<Checkpoint<Snap>>,
}

/// Result of a full run.
#[derive(Debug, Clone, Serialize)]
pub struct SmcReport<Snap> {
    pub levels: Vec<LevelRecord<Snap>>,
    /// Product estimate, or zero on extinction or insufficient budget.
    pub estimate: f64,
    pub budget_used: u64,
    pub budget_limit: u64,
    pub budget_exhausted: bool,
    pub extinction_level: Option<usize>,
    /// `(1/A_tar)^K`.
    pub resolution_floor: f64,
    /// Whether every stage completed with at least one success.
    pub completed: bool,
}

impl<Snap> SmcReport<Snap> {
    pub fn stage_estimates(&self) -> Vec<f64> {
        self.levels.iter().map(|l| l.estimate).collect()
    }

    pub fn total_attempts(&self) -> u64 {
        self.levels.iter().map(|l| l.attempts).sum()
    }
}

/// Predicted relative bias and variance for a finished run, using the
/// observed stage estimates in place of the true stage probabilities.
#[derive(Debug, Clone, Serialize)]
pub struct Diagnostics {
    pub stages: Vec<StagePrediction>,
    pub chain: ChainPrediction,
    /// Classical relative variance with `M ≈ A_k` at each stage.
    pub classical_rel_var: f64,
}

/// Hook invoked with the first-hitting checkpoints of each level before
/// they are resampled into the next pool. Used by the reconfiguration
/// engine to attach policies to checkpoints.
pub trait LevelHook<S: Simulator> {
    fn on_level_reached(
        &mut self,
        level: usize,
        checkpoints: &mut [Checkpoint<S::Snapshot>],
        sim: &mut S,
    ) -> Result<(), SmcError>;
}

/// A hook that does nothing.
pub struct NoHook;

impl<S: Simulator> LevelHook<S> for NoHook {
    fn on_level_reached(
        &mut self,
        _level: usize,
        _checkpoints: &mut [Checkpoint<S::Snapshot>],
        _sim: &mut S,
    ) -> Result<(), SmcError> {
        Ok(())
    }
}

/// Pool size for the next stage:
/// `min(M_M, max(M_m, ceil(ς S_tar / max(p̂, p_min))))`.
pub fn next_pool_size(stage_estimate: f64, cfg: &SmcConfig) -> usize {
    let p = stage_estimate.max(cfg.probability_floor);
    let raw = cfg.safety_factor * cfg.success_target as f64 / p;
    let rounded = raw.round();
    // ignore floating residue: ς S / p may land a few ulps above an integer
    let size = if (raw - rounded).abs() <= 1e-9 * rounded.max(1.0) {
        rounded
    } else {
        raw.ceil()
    };
    (size as usize).clamp(cfg.min_pool, cfg.max_pool)
}

/// Draws `target` checkpoints uniformly with replacement.
pub fn resample_pool<Snap: Clone>(
    successes: &[Checkpoint<Snap>],
    target: usize,
    rng: &mut RngStream,
) -> Result<Vec<Checkpoint<Snap>>, SmcError> {
    if successes.is_empty() {
        return Err(SmcError::Extinction);
    }
    Ok((0..target)
        .map(|_| successes[rng.index(successes.len())].clone())
        .collect())
}

/// Runs stage `level` from `pool` towards `levels.threshold(level + 1)`.
///
/// `sim` is a scratch instance; each attempt restores a checkpoint into it.
pub fn run_level<S: Simulator>(
    sim: &mut S,
    pool: &[Checkpoint<S::Snapshot>],
    level: usize,
    levels: &LevelSchedule,
    cfg: &SmcConfig,
    ledger: &mut BudgetLedger,
    seed: u64,
) -> Result<LevelRecord<S::Snapshot>, SmcError> {
    if pool.is_empty() {
        return Err(SmcError::EmptyPool);
    }
    let target = levels.threshold(level + 1);
    let start_cost = ledger.used();
    let mut attempts = 0u64;
    let mut checkpoints = Vec::new();
    let mut budget_exhausted = false;
    loop {
        let successes = checkpoints.len() as u64;
        if attempts % cfg.batch_size == 0
            && successes >= cfg.success_target
            && attempts >= cfg.attempt_target
        {
            break;
        }
        if ledger.is_exhausted() {
            budget_exhausted = true;
            break;
        }
        let mut select = RngStream::new(seed, StreamId::new(Purpose::Select, level as u32, attempts));
        let source = &pool[select.index(pool.len())];
        sim.restore(&source.snapshot);
        let mut noise =
            RngStream::new(seed, StreamId::new(Purpose::Propagate, level as u32, attempts));
        let run = propagate_until(sim, target, &mut noise, ledger)?;
        match run.stop {
            StopReason::Crossed => {
                checkpoints.push(Checkpoint::capture(sim, level + 1));
                attempts += 1;
            }
            StopReason::Horizon => attempts += 1,
            StopReason::BudgetExhausted => {
                // truncated attempt: charged, but neither success nor attempt
                budget_exhausted = true;
                break;
            }
        }
    }
    let successes = checkpoints.len() as u64;
    Ok(LevelRecord {
        level,
        attempts,
        successes,
        estimate: if attempts == 0 {
            0.0
        } else {
            successes as f64 / attempts as f64
        },
        cost: ledger.used() - start_cost,
        next_pool_size: None,
        budget_exhausted,
        checkpoints,
    })
}

/// Seeded splitting run over `levels`.
pub fn run_smc<F: ModelFactory>(
    factory: &F,
    levels: &LevelSchedule,
    cfg: &SmcConfig,
    seed: u64,
) -> Result<SmcReport<<F::Sim as Simulator>::Snapshot>, SmcError> {
    run_smc_with_hook(factory, levels, cfg, seed, &mut NoHook)
}

pub fn run_smc_with_hook<F, H>(
    factory: &F,
    levels: &LevelSchedule,
    cfg: &SmcConfig,
    seed: u64,
    hook: &mut H,
) -> Result<SmcReport<<F::Sim as Simulator>::Snapshot>, SmcError>
where
    F: ModelFactory,
    H: LevelHook<F::Sim>,
{
    cfg.validate()?;
    let stages = levels.stages();
    let mut ledger = BudgetLedger::new(cfg.budget);
    let mut pool: Vec<_> = (0..cfg.initial_pool)
        .map(|i| {
            let mut rng = RngStream::new(seed, StreamId::new(Purpose::Init, 0, i as u64));
            Checkpoint::capture(&factory.create(&mut rng), 0)
        })
        .collect();
    let mut sim = factory.create(&mut RngStream::new(seed, StreamId::new(Purpose::Init, 0, u64::MAX)));

    let mut records = Vec::with_capacity(stages);
    let mut budget_exhausted = false;
    let mut extinction_level = None;
    for k in 0..stages {
        let mut record = run_level(&mut sim, &pool, k, levels, cfg, &mut ledger, seed)?;
        if record.budget_exhausted {
            budget_exhausted = true;
            records.push(record);
            break;
        }
        if record.successes == 0 {
            extinction_level = Some(k);
            records.push(record);
            break;
        }
        hook.on_level_reached(k + 1, &mut record.checkpoints, &mut sim)?;
        if k + 1 < stages {
            let size = next_pool_size(record.estimate, cfg);
            let mut rng = RngStream::new(seed, StreamId::new(Purpose::Resample, k as u32, 0));
            pool = resample_pool(&record.checkpoints, size, &mut rng)?;
            record.next_pool_size = Some(size);
            records.push(record);
            if ledger.is_exhausted() {
                budget_exhausted = true;
                break;
            }
        } else {
            records.push(record);
        }
    }

    let completed = records.len() == stages && !budget_exhausted && extinction_level.is_none();
    let estimate = if completed {
        records.iter().map(|r| r.estimate).product()
    } else {
        0.0
    };
    Ok(SmcReport {
        levels: records,
        estimate,
        budget_used: ledger.used(),
        budget_limit: cfg.budget,
        budget_exhausted,
        extinction_level,
        resolution_floor: (1.0 / cfg.attempt_target as f64).powi(stages as i32),
        completed,
    })
}

/// Stage and chain predictions for a completed report.
pub fn predict_diagnostics<Snap>(
    report: &SmcReport<Snap>,
    cfg: &SmcConfig,
) -> Result<Diagnostics, AnalysisError> {
    if !report.completed {
        return Err(AnalysisError::Incomplete);
    }
    let stages = report
        .levels
        .iter()
        .map(|l| analysis::stage_prediction(l.estimate, cfg.success_target))
        .collect::<Result<Vec<_>, _>>()?;
    let chain = analysis::chain_prediction(&stages)?;
    let classical_rel_var = report
        .levels
        .iter()
        .map(|l| analysis::classical_variance(&[l.estimate], l.attempts))
        .sum::<Result<f64, _>>()?;
    Ok(Diagnostics {
        stages,
        chain,
        classical_rel_var,
    })
}
