//! Restartable simulator contract shared by every engine.
//!
//! A [`Simulator`] is a time-stepped stochastic state machine that can be
//! paused, copied out as a snapshot and restored later. Each step consumes
//! fresh randomness from an [`RngStream`]; restoring the same snapshot twice
//! and continuing with different streams gives independent continuations.
//!
//! Cost is counted in simulator steps. Engines never call
//! [`Simulator::step`] directly; they go through a [`BudgetLedger`] so every
//! executed step is charged exactly once.

use std::fmt;

use serde::Serialize;
use thiserror::Error;

use crate::rng::RngStream;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("step {step} would exceed the horizon of {horizon} steps")]
    HorizonExceeded { step: u64, horizon: u64 },
    #[error("invalid timing: {0}")]
    InvalidTime(String),
}

/// Discrete simulation clock: `step_index` out of `horizon_steps` steps of
/// `step_duration` seconds each.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SimTime {
    step_index: u64,
    step_duration: f64,
    horizon_steps: u64,
}

impl SimTime {
    /// Clock at step 0 covering `horizon` seconds in steps of `step_duration`.
    pub fn new(step_duration: f64, horizon: f64) -> Result<Self, SimError> {
        if !(step_duration.is_finite() && step_duration > 0.0) {
            return Err(SimError::InvalidTime(format!(
                "step duration must be positive, got {step_duration}"
            )));
        }
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(SimError::InvalidTime(format!(
                "horizon must be positive, got {horizon}"
            )));
        }
        let steps = (horizon / step_duration).round();
        if steps < 1.0 {
            return Err(SimError::InvalidTime(format!(
                "horizon {horizon} s is shorter than one step of {step_duration} s"
            )));
        }
        Ok(Self {
            step_index: 0,
            step_duration,
            horizon_steps: steps as u64,
        })
    }

    pub fn at(step_index: u64, step_duration: f64, horizon_steps: u64) -> Self {
        debug_assert!(step_index <= horizon_steps);
        Self {
            step_index,
            step_duration,
            horizon_steps,
        }
    }

    pub fn step_index(&self) -> u64 {
        self.step_index
    }

    pub fn step_duration(&self) -> f64 {
        self.step_duration
    }

    pub fn horizon_steps(&self) -> u64 {
        self.horizon_steps
    }

    pub fn remaining(&self) -> u64 {
        self.horizon_steps - self.step_index
    }

    pub fn at_horizon(&self) -> bool {
        self.step_index >= self.horizon_steps
    }

    /// Elapsed simulated time in seconds.
    pub fn elapsed(&self) -> f64 {
        self.step_index as f64 * self.step_duration
    }

    pub fn advance(&mut self) -> Result<(), SimError> {
        if self.at_horizon() {
            return Err(SimError::HorizonExceeded {
                step: self.step_index,
                horizon: self.horizon_steps,
            });
        }
        self.step_index += 1;
        Ok(())
    }
}

/// The restartable-simulator contract.
pub trait Simulator {
    /// Full value copy of the simulator state.
    type Snapshot: Clone + fmt::Debug + Send + Sync;

    fn time(&self) -> SimTime;

    /// Advances one step using fresh randomness from `rng`.
    ///
    /// Fails with [`SimError::HorizonExceeded`] when already at the horizon.
    fn step(&mut self, rng: &mut RngStream) -> Result<(), SimError>;

    fn snapshot(&self) -> Self::Snapshot;

    fn restore(&mut self, snapshot: &Self::Snapshot);

    /// Reaction coordinate of the current state.
    fn coordinate(&self) -> f64;

    /// Whether the current state lies in the absorbing failure set.
    fn is_absorbed(&self) -> bool;
}

/// Builds fresh simulator instances at their initial condition.
pub trait ModelFactory: Sync {
    type Sim: Simulator;

    fn create(&self, rng: &mut RngStream) -> Self::Sim;
}

impl<F, S> ModelFactory for F
where
    F: Fn(&mut RngStream) -> S + Sync,
    S: Simulator,
{
    type Sim = S;

    fn create(&self, rng: &mut RngStream) -> S {
        self(rng)
    }
}

/// A stored first-hitting state.
#[derive(Debug, Clone)]
pub struct Checkpoint<Snap> {
    pub snapshot: Snap,
    /// Index of the level this state first reached.
    pub level_index: usize,
    pub hit_step: u64,
    pub coordinate_value: f64,
}

impl<Snap: Clone> Checkpoint<Snap> {
    /// Captures the simulator's current state as a checkpoint of `level_index`.
    pub fn capture<S>(sim: &S, level_index: usize) -> Self
    where
        S: Simulator<Snapshot = Snap>,
    {
        Self {
            snapshot: sim.snapshot(),
            level_index,
            hit_step: sim.time().step_index(),
            coordinate_value: sim.coordinate(),
        }
    }
}

/// Step budget. The only place where steps are charged.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BudgetLedger {
    limit: u64,
    used: u64,
}

impl BudgetLedger {
    pub fn new(limit: u64) -> Self {
        Self { limit, used: 0 }
    }

    pub fn unlimited() -> Self {
        Self::new(u64::MAX)
    }

    pub fn limit(&self) -> u64 {
        self.limit
    }

    pub fn used(&self) -> u64 {
        self.used
    }

    pub fn remaining(&self) -> u64 {
        self.limit - self.used
    }

    pub fn is_exhausted(&self) -> bool {
        self.used >= self.limit
    }

    /// Steps `sim` once and charges one unit, unless the budget is spent.
    /// Returns `Ok(false)` without touching the simulator when exhausted.
    pub fn step<S: Simulator>(
        &mut self,
        sim: &mut S,
        rng: &mut RngStream,
    ) -> Result<bool, SimError> {
        if self.is_exhausted() {
            return Ok(false);
        }
        sim.step(rng)?;
        self.used += 1;
        Ok(true)
    }
}

/// Why a continuation stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum StopReason {
    /// Reached the target level (or the absorbing failure set).
    Crossed,
    /// Ran to the end of the horizon without crossing.
    Horizon,
    /// Budget ran out mid-continuation.
    BudgetExhausted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Continuation {
    pub stop: StopReason,
    pub steps: u64,
}

/// Propagates `sim` until its coordinate reaches `threshold`, it is
/// absorbed, the horizon is reached, or `ledger` is exhausted.
///
/// The crossing test runs before the first step, so a state already at or
/// above `threshold` returns [`StopReason::Crossed`] with zero steps.
pub fn propagate_until<S: Simulator>(
    sim: &mut S,
    threshold: f64,
    rng: &mut RngStream,
    ledger: &mut BudgetLedger,
) -> Result<Continuation, SimError> {
    let mut steps = 0;
    loop {
        if sim.is_absorbed() || sim.coordinate() >= threshold {
            return Ok(Continuation {
                stop: StopReason::Crossed,
                steps,
            });
        }
        if sim.time().at_horizon() {
            return Ok(Continuation {
                stop: StopReason::Horizon,
                steps,
            });
        }
        if !ledger.step(sim, rng)? {
            return Ok(Continuation {
                stop: StopReason::BudgetExhausted,
                steps,
            });
        }
        steps += 1;
    }
}
