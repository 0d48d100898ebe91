//! Delay-critical wireless service model.
//!
//! A single service queue with constant normalized load `Λ` is drained by a
//! capacity `C = 1/(1+e^{-η})` that depends on a latent health state `η`.
//! Health recovers at rate `ν (1-C)^φ` and is eroded by log-normal stress
//! `e^F`, where `F` is an AR(1) process. The delay is estimated with Little's
//! law as `D = B/C`, and a persistence counter `ϱ` counts consecutive steps
//! with `D ≥ δ`, saturating at the grace length `H`. Reaching `ϱ = H` is the
//! absorbing non-recovery failure.
//!
//! Within a step, delay and persistence are evaluated on the state at entry
//! (time `j`), then backlog, health and stress advance to `j+1`.

use serde::{Deserialize, Serialize};

use crate::config::ParamError;
use crate::rng::RngStream;
use crate::sim::{ModelFactory, SimError, SimTime, Simulator};

const HEALTH_CLAMP: f64 = 50.0;

/// Model parameters. Defaults are the baseline profile of the use case.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetParams {
    /// Normalized arrival workload `Λ`, in (0, 1).
    pub arrival_load: f64,
    /// Step duration `Δ` in seconds.
    pub step_duration: f64,
    /// Horizon `T` in seconds.
    pub horizon: f64,
    /// Initial backlog `B[0]` in service-time units (seconds).
    pub initial_backlog: f64,
    /// Initial latent health `η[0]`.
    pub initial_health: f64,
    /// Initial latent log-stress `F[0]`; the stress mean when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub initial_stress: Option<f64>,
    /// Baseline recovery rate `ν0` per step.
    pub recovery_rate: f64,
    /// Recovery nonlinearity `φ0 > 1`.
    pub recovery_exponent: f64,
    /// AR(1) coefficient `ρ` of the latent stress, in [0, 1).
    pub stress_correlation: f64,
    /// Long-term mean `μF` of the latent stress.
    pub stress_mean: f64,
    /// Innovation standard deviation `σF > 0` of the latent stress.
    pub stress_std: f64,
    /// Critical delay threshold `δ` in seconds.
    pub delay_threshold: f64,
    /// Recovery target time `t_tar` in seconds.
    pub recovery_target: f64,
}

impl Default for NetParams {
    fn default() -> Self {
        Self {
            arrival_load: 0.7,
            step_duration: 0.05,
            horizon: 60.0,
            initial_backlog: 0.0,
            initial_health: 0.95,
            initial_stress: None,
            recovery_rate: 0.2,
            recovery_exponent: 2.0,
            stress_correlation: 0.75,
            stress_mean: -5.0,
            stress_std: 0.55,
            delay_threshold: 0.1,
            recovery_target: 5.0,
        }
    }
}

/// Ceiling of `num/den` that ignores floating residue around integers.
fn ceil_ratio(num: f64, den: f64) -> f64 {
    let x = num / den;
    let r = x.round();
    if (x - r).abs() <= 1e-9 * r.abs().max(1.0) {
        r
    } else {
        x.ceil()
    }
}

impl NetParams {
    pub fn validate(&self) -> Result<(), ParamError> {
        fn check(ok: bool, field: &str, msg: &str) -> Result<(), ParamError> {
            if ok {
                Ok(())
            } else {
                Err(ParamError::new(field, msg))
            }
        }
        let finite = [
            ("arrival_load", self.arrival_load),
            ("step_duration", self.step_duration),
            ("horizon", self.horizon),
            ("initial_backlog", self.initial_backlog),
            ("initial_health", self.initial_health),
            ("recovery_rate", self.recovery_rate),
            ("recovery_exponent", self.recovery_exponent),
            ("stress_correlation", self.stress_correlation),
            ("stress_mean", self.stress_mean),
            ("stress_std", self.stress_std),
            ("delay_threshold", self.delay_threshold),
            ("recovery_target", self.recovery_target),
        ];
        for (field, v) in finite {
            check(v.is_finite(), field, "must be finite")?;
        }
        if let Some(f0) = self.initial_stress {
            check(f0.is_finite(), "initial_stress", "must be finite")?;
        }
        check(
            self.arrival_load > 0.0 && self.arrival_load < 1.0,
            "arrival_load",
            "Λ ∈ (0,1) required",
        )?;
        check(self.step_duration > 0.0, "step_duration", "Δ > 0 required")?;
        check(self.horizon > 0.0, "horizon", "T > 0 required")?;
        check(
            self.horizon_steps() >= 1,
            "horizon",
            "T must span at least one step",
        )?;
        check(self.initial_backlog >= 0.0, "initial_backlog", "B[0] ≥ 0 required")?;
        check(self.recovery_rate > 0.0, "recovery_rate", "ν0 > 0 required")?;
        check(
            self.recovery_exponent > 1.0,
            "recovery_exponent",
            "φ0 > 1 required",
        )?;
        check(
            (0.0..1.0).contains(&self.stress_correlation),
            "stress_correlation",
            "ρ ∈ [0,1) required",
        )?;
        check(self.stress_std > 0.0, "stress_std", "σF > 0 required")?;
        check(self.delay_threshold > 0.0, "delay_threshold", "δ > 0 required")?;
        check(self.recovery_target > 0.0, "recovery_target", "t_tar > 0 required")?;
        Ok(())
    }

    /// Number of steps `J = round(T/Δ)`.
    pub fn horizon_steps(&self) -> u64 {
        (self.horizon / self.step_duration).round().max(0.0) as u64
    }

    /// Grace length `H = ceil(t_tar/Δ)`, at least 1.
    pub fn grace_steps(&self) -> u32 {
        ceil_ratio(self.recovery_target, self.step_duration).max(1.0) as u32
    }

    pub fn baseline_policy(&self) -> PolicyContext {
        PolicyContext {
            recovery_rate: self.recovery_rate,
            recovery_exponent: self.recovery_exponent,
        }
    }
}

/// Augmented model state at step `j`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NetState {
    pub step: u64,
    /// Backlog `B` in service-time units.
    pub backlog: f64,
    /// Latent health `η`.
    pub health: f64,
    /// Latent log-stress `F`.
    pub stress: f64,
    /// Consecutive-exceedance counter `ϱ` in `0..=H`.
    pub persistence: u32,
}

/// Recovery dynamics currently in force.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PolicyContext {
    pub recovery_rate: f64,
    pub recovery_exponent: f64,
}

/// Logistic capacity `1/(1+e^{-η})`; `η` is clamped to ±50 first.
pub fn capacity(health: f64) -> f64 {
    let h = health.clamp(-HEALTH_CLAMP, HEALTH_CLAMP);
    1.0 / (1.0 + (-h).exp())
}

/// Little's-law delay `B/C` in seconds.
pub fn delay(state: &NetState) -> f64 {
    state.backlog / capacity(state.health)
}

/// Validated parameters plus the derived step counts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NetModel {
    params: NetParams,
    grace: u32,
    horizon_steps: u64,
}

impl NetModel {
    pub fn new(params: NetParams) -> Result<Self, ParamError> {
        params.validate()?;
        Ok(Self {
            params,
            grace: params.grace_steps(),
            horizon_steps: params.horizon_steps(),
        })
    }

    pub fn params(&self) -> &NetParams {
        &self.params
    }

    pub fn grace_steps(&self) -> u32 {
        self.grace
    }

    pub fn horizon_steps(&self) -> u64 {
        self.horizon_steps
    }

    pub fn initial_state(&self) -> NetState {
        NetState {
            step: 0,
            backlog: self.params.initial_backlog,
            health: self.params.initial_health,
            stress: self.params.initial_stress.unwrap_or(self.params.stress_mean),
            persistence: 0,
        }
    }

    /// `min(D/δ, 1) + ϱ/H`, in `[0, 2]`.
    ///
    /// Failure states (`ϱ = H`) map to the ceiling 2 so that the top level
    /// coincides with the absorbing failure set.
    pub fn reaction_coordinate(&self, state: &NetState) -> f64 {
        if self.is_failure(state) {
            return 2.0;
        }
        (delay(state) / self.params.delay_threshold).min(1.0)
            + state.persistence as f64 / self.grace as f64
    }

    pub fn is_failure(&self, state: &NetState) -> bool {
        state.persistence >= self.grace
    }

    /// One transition `j -> j+1` driven by the standard-normal draw `gamma`.
    pub fn step_dynamics(&self, s: &NetState, ctx: &PolicyContext, gamma: f64) -> NetState {
        let p = &self.params;
        let c = capacity(s.health);
        let d = s.backlog / c;
        let persistence = if d >= p.delay_threshold {
            (s.persistence + 1).min(self.grace)
        } else {
            0
        };
        NetState {
            step: s.step + 1,
            backlog: (s.backlog + (p.arrival_load - c) * p.step_duration).max(0.0),
            health: s.health + ctx.recovery_rate * (1.0 - c).powf(ctx.recovery_exponent)
                - s.stress.exp(),
            stress: p.stress_correlation * s.stress
                + (1.0 - p.stress_correlation) * p.stress_mean
                + gamma * p.stress_std,
            persistence,
        }
    }

    pub fn simulator(&self) -> NetSimulator {
        NetSimulator {
            model: *self,
            state: self.initial_state(),
            policy: self.params.baseline_policy(),
        }
    }
}

impl ModelFactory for NetModel {
    type Sim = NetSimulator;

    /// The initial condition is deterministic; randomness enters through steps.
    fn create(&self, _rng: &mut RngStream) -> NetSimulator {
        self.simulator()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NetSnapshot {
    pub state: NetState,
    pub policy: PolicyContext,
}

/// [`NetModel`] driven through the [`Simulator`] contract.
#[derive(Debug, Clone)]
pub struct NetSimulator {
    model: NetModel,
    state: NetState,
    policy: PolicyContext,
}

impl NetSimulator {
    pub fn state(&self) -> &NetState {
        &self.state
    }

    pub fn model(&self) -> &NetModel {
        &self.model
    }

    pub fn policy(&self) -> PolicyContext {
        self.policy
    }

    pub fn set_policy(&mut self, policy: PolicyContext) {
        self.policy = policy;
    }

    pub fn delay(&self) -> f64 {
        delay(&self.state)
    }

    /// Steps with an externally supplied normal draw.
    pub fn step_with(&mut self, gamma: f64) -> Result<(), SimError> {
        if self.state.step >= self.model.horizon_steps {
            return Err(SimError::HorizonExceeded {
                step: self.state.step,
                horizon: self.model.horizon_steps,
            });
        }
        self.state = self.model.step_dynamics(&self.state, &self.policy, gamma);
        Ok(())
    }
}

impl Simulator for NetSimulator {
    type Snapshot = NetSnapshot;

    fn time(&self) -> SimTime {
        SimTime::at(
            self.state.step,
            self.model.params.step_duration,
            self.model.horizon_steps,
        )
    }

    fn step(&mut self, rng: &mut RngStream) -> Result<(), SimError> {
        let gamma = rng.standard_normal();
        self.step_with(gamma)
    }

    fn snapshot(&self) -> NetSnapshot {
        NetSnapshot {
            state: self.state,
            policy: self.policy,
        }
    }

    fn restore(&mut self, snapshot: &NetSnapshot) {
        self.state = snapshot.state;
        self.policy = snapshot.policy;
    }

    fn coordinate(&self) -> f64 {
        self.model.reaction_coordinate(&self.state)
    }

    fn is_absorbed(&self) -> bool {
        self.model.is_failure(&self.state)
    }
}
