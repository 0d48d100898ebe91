//! Plain Monte Carlo baseline: independent full trajectories, hit counting.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::ParamError;
use crate::rng::{Purpose, RngStream, StreamId};
use crate::sim::{propagate_until, BudgetLedger, ModelFactory, SimError, Simulator, StopReason};

/// Either a step budget (trajectory count `⌊budget / J⌋`) or a fixed count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum McConfig {
    BudgetSteps(u64),
    Trajectories(u64),
}

impl Default for McConfig {
    fn default() -> Self {
        McConfig::BudgetSteps(5_000_000)
    }
}

impl McConfig {
    /// Number of trajectories for a model with `horizon_steps` steps.
    pub fn trajectories(&self, horizon_steps: u64) -> u64 {
        match *self {
            McConfig::BudgetSteps(b) => b / horizon_steps.max(1),
            McConfig::Trajectories(n) => n,
        }
    }

    pub fn validate(&self, horizon_steps: u64) -> Result<(), ParamError> {
        if self.trajectories(horizon_steps) < 1 {
            return Err(ParamError::new(
                "mc",
                "budget must cover at least one full trajectory (N ≥ 1)",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McReport {
    pub trajectories: u64,
    pub hits: u64,
    pub estimate: f64,
    /// `(1 − p̂)/(p̂ N)`; absent when no hit was observed.
    pub rel_var_pred: Option<f64>,
    /// `1/N`.
    pub min_resolvable: f64,
    pub horizon_steps: u64,
    /// Steps actually executed (trajectories stop at absorption).
    pub steps_used: u64,
}

/// Runs `N` independent trajectories to absorption or horizon.
///
/// Trajectory `i` uses its own stream, so the result does not depend on how
/// the work is scheduled across threads.
pub fn run_mc<F>(factory: &F, cfg: &McConfig, seed: u64) -> Result<McReport, SimError>
where
    F: ModelFactory,
    F::Sim: Send,
{
    let probe = factory.create(&mut RngStream::new(seed, StreamId::new(Purpose::Init, 0, u64::MAX)));
    let horizon_steps = probe.time().horizon_steps();
    let n = cfg.trajectories(horizon_steps);
    let outcomes = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut sim = factory.create(&mut RngStream::new(seed, StreamId::new(Purpose::Init, 0, i)));
            let mut rng = RngStream::new(seed, StreamId::new(Purpose::Trajectory, 0, i));
            let mut ledger = BudgetLedger::unlimited();
            let run = propagate_until(&mut sim, f64::INFINITY, &mut rng, &mut ledger)?;
            Ok((run.stop == StopReason::Crossed, run.steps))
        })
        .collect::<Result<Vec<_>, SimError>>()?;
    let hits = outcomes.iter().filter(|(hit, _)| *hit).count() as u64;
    let steps_used = outcomes.iter().map(|(_, s)| s).sum();
    let estimate = if n == 0 { 0.0 } else { hits as f64 / n as f64 };
    Ok(McReport {
        trajectories: n,
        hits,
        estimate,
        rel_var_pred: (hits > 0).then(|| (1.0 - estimate) / (estimate * n as f64)),
        min_resolvable: 1.0 / n as f64,
        horizon_steps,
        steps_used,
    })
}
