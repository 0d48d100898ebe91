//! Small synthetic simulators with known answers, used to validate the
//! engines.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::Serialize;

use crate::levels::LevelSchedule;
use crate::rng::RngStream;
use crate::sim::{ModelFactory, SimError, SimTime, Simulator};

/// Independent Bernoulli stages.
///
/// From stage `k` the next step succeeds with probability `probs[k]`;
/// otherwise the attempt stalls for the rest of the horizon. The coordinate
/// is the stage index and reaching the last stage is the failure, so the
/// exact failure probability is `Π probs`.
#[derive(Debug, Clone, PartialEq)]
pub struct BernoulliChain {
    probs: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ChainState {
    pub stage: usize,
    pub stalled: bool,
    pub step: u64,
}

#[derive(Debug, Clone)]
pub struct BernoulliSim {
    probs: Arc<[f64]>,
    state: ChainState,
}

impl BernoulliChain {
    pub fn new(probs: Vec<f64>) -> Result<Self, String> {
        if probs.is_empty() {
            return Err("at least one stage required".into());
        }
        if let Some(p) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(format!("stage probability {p} outside [0, 1]"));
        }
        Ok(Self { probs })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn exact_probability(&self) -> f64 {
        self.probs.iter().product()
    }

    /// Integer levels `0, 1, …, K`.
    pub fn levels(&self) -> LevelSchedule {
        LevelSchedule::new((0..=self.probs.len()).map(|k| k as f64).collect())
            .expect("integer levels are increasing")
    }

    pub fn simulator(&self) -> BernoulliSim {
        BernoulliSim {
            probs: self.probs.clone().into(),
            state: ChainState {
                stage: 0,
                stalled: false,
                step: 0,
            },
        }
    }
}

impl ModelFactory for BernoulliChain {
    type Sim = BernoulliSim;

    fn create(&self, _rng: &mut RngStream) -> BernoulliSim {
        self.simulator()
    }
}

impl Simulator for BernoulliSim {
    type Snapshot = ChainState;

    fn time(&self) -> SimTime {
        SimTime::at(self.state.step, 1.0, self.probs.len() as u64)
    }

    fn step(&mut self, rng: &mut RngStream) -> Result<(), SimError> {
        let horizon = self.probs.len() as u64;
        if self.state.step >= horizon {
            return Err(SimError::HorizonExceeded { step: self.state.step, horizon });
        }
        self.state.step += 1;
        let u = rng.uniform();
        if !self.state.stalled && self.state.stage < self.probs.len() {
            if u < self.probs[self.state.stage] {
                self.state.stage += 1;
            } else {
                self.state.stalled = true;
            }
        }
        Ok(())
    }

    fn snapshot(&self) -> ChainState {
        self.state
    }

    fn restore(&mut self, snapshot: &ChainState) {
        self.state = *snapshot;
    }

    fn coordinate(&self) -> f64 {
        self.state.stage as f64
    }

    fn is_absorbed(&self) -> bool {
        self.state.stage == self.probs.len()
    }
}

/// Deterministic climber: one level per step, horizon `2 * top`.
#[derive(Debug, Clone)]
pub struct FixedScript {
    top: usize,
    stage: usize,
    step: u64,
}

impl FixedScript {
    pub fn always_up(top: usize) -> Self {
        Self { top, stage: 0, step: 0 }
    }

    pub fn simulator(&self) -> Self {
        self.clone()
    }

    pub fn jump_to(&mut self, stage: usize) {
        self.stage = stage;
    }
}

impl ModelFactory for FixedScript {
    type Sim = FixedScript;

    fn create(&self, _rng: &mut RngStream) -> FixedScript {
        self.clone()
    }
}

impl Simulator for FixedScript {
    type Snapshot = (usize, u64);

    fn time(&self) -> SimTime {
        SimTime::at(self.step, 1.0, 2 * self.top as u64)
    }

    fn step(&mut self, _rng: &mut RngStream) -> Result<(), SimError> {
        let horizon = 2 * self.top as u64;
        if self.step >= horizon {
            return Err(SimError::HorizonExceeded { step: self.step, horizon });
        }
        self.step += 1;
        self.stage = (self.stage + 1).min(self.top);
        Ok(())
    }

    fn snapshot(&self) -> (usize, u64) {
        (self.stage, self.step)
    }

    fn restore(&mut self, s: &(usize, u64)) {
        self.stage = s.0;
        self.step = s.1;
    }

    fn coordinate(&self) -> f64 {
        self.stage as f64
    }

    fn is_absorbed(&self) -> bool {
        self.stage >= self.top
    }
}

/// Three-state Markov chain `0, 1, 2` with absorbing state 2 and a short
/// horizon, small enough to enumerate every path.
#[derive(Debug, Clone, PartialEq)]
pub struct ThreeStateChain {
    /// Row-stochastic transitions out of states 0 and 1.
    pub rows: [[f64; 3]; 2],
    pub horizon: u64,
}

#[derive(Debug, Clone)]
pub struct ThreeStateSim {
    chain: ThreeStateChain,
    state: u8,
    step: u64,
}

impl ThreeStateChain {
    pub fn new(rows: [[f64; 3]; 2], horizon: u64) -> Result<Self, String> {
        for row in &rows {
            if row.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err("probabilities must lie in [0, 1]".into());
            }
            if (row.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
                return Err("rows must sum to 1".into());
            }
        }
        if horizon == 0 {
            return Err("horizon must be positive".into());
        }
        Ok(Self { rows, horizon })
    }

    pub fn levels(&self) -> LevelSchedule {
        LevelSchedule::new(vec![0.0, 1.0, 2.0]).expect("static levels")
    }

    pub fn simulator(&self) -> ThreeStateSim {
        ThreeStateSim {
            chain: self.clone(),
            state: 0,
            step: 0,
        }
    }

    /// Probability of visiting state 2 within the horizon, by walking every
    /// path of the transition tree. Also returns the number of leaf paths.
    pub fn enumerate_hitting_probability(&self) -> (f64, u64) {
        fn walk(rows: &[[f64; 3]; 2], state: usize, left: u64, weight: f64, leaves: &mut u64) -> f64 {
            if state == 2 {
                *leaves += 1;
                return weight;
            }
            if left == 0 {
                *leaves += 1;
                return 0.0;
            }
            (0..3)
                .filter(|&next| rows[state][next] > 0.0)
                .map(|next| walk(rows, next, left - 1, weight * rows[state][next], leaves))
                .sum()
        }
        let mut leaves = 0;
        let p = walk(&self.rows, 0, self.horizon, 1.0, &mut leaves);
        (p, leaves)
    }
}

impl ModelFactory for ThreeStateChain {
    type Sim = ThreeStateSim;

    fn create(&self, _rng: &mut RngStream) -> ThreeStateSim {
        self.simulator()
    }
}

impl Simulator for ThreeStateSim {
    type Snapshot = (u8, u64);

    fn time(&self) -> SimTime {
        SimTime::at(self.step, 1.0, self.chain.horizon)
    }

    fn step(&mut self, rng: &mut RngStream) -> Result<(), SimError> {
        if self.step >= self.chain.horizon {
            return Err(SimError::HorizonExceeded { step: self.step, horizon: self.chain.horizon });
        }
        self.step += 1;
        let u = rng.uniform();
        if self.state < 2 {
            let row = &self.chain.rows[self.state as usize];
            self.state = if u < row[0] {
                0
            } else if u < row[0] + row[1] {
                1
            } else {
                2
            };
        }
        Ok(())
    }

    fn snapshot(&self) -> (u8, u64) {
        (self.state, self.step)
    }

    fn restore(&mut self, s: &(u8, u64)) {
        self.state = s.0;
        self.step = s.1;
    }

    fn coordinate(&self) -> f64 {
        self.state as f64
    }

    fn is_absorbed(&self) -> bool {
        self.state == 2
    }
}

/// Wraps a simulator and counts every step invocation in a shared counter.
#[derive(Debug, Clone)]
pub struct CountingSim<S> {
    pub inner: S,
    pub calls: Arc<AtomicU64>,
}

impl<S: Simulator> Simulator for CountingSim<S> {
    type Snapshot = S::Snapshot;

    fn time(&self) -> SimTime {
        self.inner.time()
    }

    fn step(&mut self, rng: &mut RngStream) -> Result<(), SimError> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        self.inner.step(rng)
    }

    fn snapshot(&self) -> S::Snapshot {
        self.inner.snapshot()
    }

    fn restore(&mut self, snapshot: &S::Snapshot) {
        self.inner.restore(snapshot)
    }

    fn coordinate(&self) -> f64 {
        self.inner.coordinate()
    }

    fn is_absorbed(&self) -> bool {
        self.inner.is_absorbed()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn enumeration_matches_closed_form_for_geometric_chain() {
        // from 0: stay or jump straight to 2
        let chain = ThreeStateChain::new([[0.9, 0.0, 0.1], [0.0, 1.0, 0.0]], 6).unwrap();
        let (p, leaves) = chain.enumerate_hitting_probability();
        assert!((p - (1.0 - 0.9f64.powi(6))).abs() < 1e-15);
        assert_eq!(leaves, 7);
    }

    #[test]
    fn bernoulli_chain_validation() {
        assert!(BernoulliChain::new(vec![]).is_err());
        assert!(BernoulliChain::new(vec![1.5]).is_err());
        let c = BernoulliChain::new(vec![0.3, 0.2]).unwrap();
        assert!((c.exact_probability() - 0.06).abs() < 1e-15);
        assert_eq!(c.levels().stages(), 2);
    }
}
