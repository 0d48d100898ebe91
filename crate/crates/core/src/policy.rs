//! State-contingent recovery policies selected by checkpoint lookahead.
//!
//! When an outer trajectory first reaches the host level, the stored
//! checkpoint is branched into `N'` continuations under every candidate
//! policy. Each candidate is scored by
//!
//! ```text
//! J(u) = Σ_{l=k}^{K'} ln p̂_l(u) + c(u),   c(u) = κ (ν(u) − ν0) / ν0
//! ```
//!
//! and the minimizer is fixed for the remainder of that trajectory. Inner
//! branches draw from their own seed and a separate budget, so they never
//! perturb the outer estimate beyond the chosen policy itself.

use serde::{Deserialize, Serialize};

use crate::config::ParamError;
use crate::levels::LevelSchedule;
use crate::netmodel::{NetSimulator, PolicyContext};
use crate::rng::{hash_words, Purpose, RngStream, StreamId};
use crate::sim::{propagate_until, BudgetLedger, Checkpoint, ModelFactory, SimError, Simulator, StopReason};
use crate::smc::{run_smc_with_hook, LevelHook, SmcConfig, SmcError, SmcReport};

/// A simulator whose recovery dynamics can be switched at run time. The
/// active policy must be part of the snapshot.
pub trait PolicyControlled: Simulator {
    fn apply_policy(&mut self, policy: PolicyContext);
}

impl PolicyControlled for NetSimulator {
    fn apply_policy(&mut self, policy: PolicyContext) {
        self.set_policy(policy);
    }
}

/// Recovery-rate candidates `ν(u_i) = ν0 (1 + i ρ')`, `i = 0..|U|`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PolicySet {
    pub size: usize,
    /// `ρ'` in (0, 1].
    pub increment: f64,
    /// `ν0`.
    pub base_rate: f64,
    /// `φ`, shared by every candidate.
    pub exponent: f64,
    /// `κ ≥ 0`.
    pub cost_scale: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Candidate {
    pub index: usize,
    pub recovery_rate: f64,
    pub cost: f64,
    pub exponent: f64,
}

impl Candidate {
    pub fn context(&self) -> PolicyContext {
        PolicyContext {
            recovery_rate: self.recovery_rate,
            recovery_exponent: self.exponent,
        }
    }
}

impl PolicySet {
    /// Validates the family, including the stability bound `ν_max Δ ≤ 1`.
    pub fn new(
        size: usize,
        increment: f64,
        base_rate: f64,
        exponent: f64,
        cost_scale: f64,
        step_duration: f64,
    ) -> Result<Self, ParamError> {
        if size < 1 {
            return Err(ParamError::new("policy.size", "|U| ≥ 1 required"));
        }
        if !(increment > 0.0 && increment <= 1.0) {
            return Err(ParamError::new("policy.increment", "ρ' ∈ (0,1] required"));
        }
        if !(base_rate > 0.0 && base_rate.is_finite()) {
            return Err(ParamError::new("model.recovery_rate", "ν0 > 0 required"));
        }
        if !(cost_scale >= 0.0 && cost_scale.is_finite()) {
            return Err(ParamError::new("policy.cost_scale", "κ ≥ 0 required"));
        }
        let set = Self {
            size,
            increment,
            base_rate,
            exponent,
            cost_scale,
        };
        let fastest = set.rate(size - 1);
        if fastest * step_duration > 1.0 {
            return Err(ParamError::new(
                "policy.size",
                &format!("ν(u_max)·Δ ≤ 1 required, got {}", fastest * step_duration),
            ));
        }
        Ok(set)
    }

    fn rate(&self, index: usize) -> f64 {
        self.base_rate * (1.0 + index as f64 * self.increment)
    }

    pub fn candidates(&self) -> Vec<Candidate> {
        (0..self.size)
            .map(|i| {
                let rate = self.rate(i);
                Candidate {
                    index: i,
                    recovery_rate: rate,
                    cost: self.cost_scale * (rate - self.base_rate) / self.base_rate,
                    exponent: self.exponent,
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LookaheadConfig {
    /// Level whose first hit triggers selection.
    pub host_level: usize,
    /// `N'`: continuations per candidate and stage.
    pub continuations: u64,
    /// `K'`, the last stage scored; `None` is myopic (`K' = host_level`).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub depth: Option<usize>,
    /// Step budget for all inner simulations of a run.
    pub inner_budget: u64,
    /// Seed for inner simulations; derived from the run seed when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub inner_seed: Option<u64>,
    /// Success count substituted for zero counts when scoring (`0.5` gives
    /// `1/(2N')`).
    pub zero_count_floor: f64,
}

impl Default for LookaheadConfig {
    fn default() -> Self {
        Self {
            host_level: 2,
            continuations: 25,
            depth: None,
            inner_budget: 50_000_000,
            inner_seed: None,
            zero_count_floor: 0.5,
        }
    }
}

impl LookaheadConfig {
    pub fn depth(&self) -> usize {
        self.depth.unwrap_or(self.host_level)
    }

    pub fn validate(&self, levels: &LevelSchedule) -> Result<(), ParamError> {
        let k = levels.stages();
        if self.host_level < 1 || self.host_level >= k {
            return Err(ParamError::new(
                "policy.host_level",
                &format!("1 ≤ host_level < K = {k} required"),
            ));
        }
        if self.depth() < self.host_level || self.depth() >= k {
            return Err(ParamError::new(
                "policy.depth",
                "host_level ≤ K' ≤ K − 1 required",
            ));
        }
        if self.continuations < 1 {
            return Err(ParamError::new("policy.continuations", "N' ≥ 1 required"));
        }
        if !(self.zero_count_floor > 0.0 && self.zero_count_floor < 1.0) {
            return Err(ParamError::new(
                "policy.zero_count_floor",
                "floor must lie in (0, 1)",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CandidateEvaluation {
    pub index: usize,
    pub recovery_rate: f64,
    pub cost: f64,
    /// Successes per scored stage `l = k ..= K'`.
    pub successes: Vec<u64>,
    /// `successes / N'` per stage.
    pub estimates: Vec<f64>,
    /// Estimates with zero counts replaced by the floor.
    pub scored: Vec<f64>,
    /// `Σ ln scored + cost`.
    pub objective: f64,
    /// Some stage had zero successes.
    pub has_zero: bool,
    pub budget_exhausted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PolicyEvaluation {
    pub host_level: usize,
    pub depth: usize,
    pub candidates: Vec<CandidateEvaluation>,
    pub selected: usize,
    /// Every candidate had a zero stage estimate.
    pub degenerate: bool,
}

/// Estimates `p̂_l(u)` for `l = host ..= K'` by branching `x_star`.
///
/// Stage `host` runs `N'` continuations from `x_star` itself; deeper stages
/// draw their starting points with replacement from the previous stage's
/// successes.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_candidate<S: PolicyControlled>(
    sim: &mut S,
    x_star: &Checkpoint<S::Snapshot>,
    candidate: &Candidate,
    levels: &LevelSchedule,
    cfg: &LookaheadConfig,
    ledger: &mut BudgetLedger,
    seed: u64,
    serial: u64,
) -> Result<CandidateEvaluation, SimError> {
    let host = cfg.host_level;
    let n = cfg.continuations;
    let ctx = candidate.context();
    let mut successes = Vec::new();
    let mut budget_exhausted = false;
    let mut pool = vec![x_star.clone()];
    for (stage, level) in (host..=cfg.depth()).enumerate() {
        let target = levels.threshold(level + 1);
        let mut hits = Vec::new();
        if !pool.is_empty() && !budget_exhausted {
            for c in 0..n {
                let source = if stage == 0 {
                    &pool[0]
                } else {
                    let id = StreamId::new(
                        Purpose::LookaheadSelect { candidate: candidate.index as u32, stage: stage as u32 },
                        host as u32,
                        serial,
                    );
                    let mut pick = RngStream::new(seed, id.with_detail(c));
                    &pool[pick.index(pool.len())]
                };
                sim.restore(&source.snapshot);
                sim.apply_policy(ctx);
                let id = StreamId::new(
                    Purpose::Lookahead { candidate: candidate.index as u32, stage: stage as u32 },
                    host as u32,
                    serial,
                );
                let mut rng = RngStream::new(seed, id.with_detail(c));
                match propagate_until(sim, target, &mut rng, ledger)?.stop {
                    StopReason::Crossed => hits.push(Checkpoint::capture(sim, level + 1)),
                    StopReason::Horizon => {}
                    StopReason::BudgetExhausted => {
                        budget_exhausted = true;
                        break;
                    }
                }
            }
        }
        successes.push(hits.len() as u64);
        pool = hits;
    }
    let estimates: Vec<f64> = successes.iter().map(|&s| s as f64 / n as f64).collect();
    let scored: Vec<f64> = successes
        .iter()
        .map(|&s| if s == 0 { cfg.zero_count_floor } else { s as f64 } / n as f64)
        .collect();
    let objective = scored.iter().map(|p| p.ln()).sum::<f64>() + candidate.cost;
    Ok(CandidateEvaluation {
        index: candidate.index,
        recovery_rate: candidate.recovery_rate,
        cost: candidate.cost,
        has_zero: successes.contains(&0),
        successes,
        estimates,
        scored,
        objective,
        budget_exhausted,
    })
}

/// Result of [`select_policy`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Selection {
    pub index: usize,
    pub degenerate: bool,
}

/// Argmin of the objective; ties go to the lower index (lower cost).
///
/// When every candidate has a zero stage estimate the objective is mostly
/// floor values, so the choice falls back to the fewest total successes,
/// again breaking ties towards lower cost.
pub fn select_policy(candidates: &[CandidateEvaluation]) -> Selection {
    assert!(!candidates.is_empty(), "no candidates evaluated");
    if candidates.iter().all(|c| c.has_zero) {
        let best = candidates
            .iter()
            .min_by_key(|c| (c.successes.iter().sum::<u64>(), c.index))
            .expect("non-empty");
        return Selection {
            index: best.index,
            degenerate: true,
        };
    }
    let mut best = &candidates[0];
    for c in &candidates[1..] {
        if c.objective < best.objective {
            best = c;
        }
    }
    Selection {
        index: best.index,
        degenerate: false,
    }
}

/// Level hook running the lookahead at the host level.
pub struct ReconfigurationHook<'a> {
    candidates: Vec<Candidate>,
    cfg: &'a LookaheadConfig,
    levels: &'a LevelSchedule,
    seed: u64,
    ledger: BudgetLedger,
    serial: u64,
    counts: Vec<u64>,
    degenerate: u64,
    fallbacks: u64,
    keep_evaluations: usize,
    evaluations: Vec<PolicyEvaluation>,
}

impl<'a> ReconfigurationHook<'a> {
    pub fn new(policies: &PolicySet, cfg: &'a LookaheadConfig, levels: &'a LevelSchedule, inner_seed: u64) -> Self {
        Self {
            candidates: policies.candidates(),
            cfg,
            levels,
            seed: inner_seed,
            ledger: BudgetLedger::new(cfg.inner_budget),
            serial: 0,
            counts: vec![0; policies.size],
            degenerate: 0,
            fallbacks: 0,
            keep_evaluations: 0,
            evaluations: Vec::new(),
        }
    }

    /// Retain the first `n` full evaluations for inspection.
    pub fn keep_evaluations(mut self, n: usize) -> Self {
        self.keep_evaluations = n;
        self
    }

    fn choose<S: PolicyControlled>(
        &mut self,
        sim: &mut S,
        x_star: &Checkpoint<S::Snapshot>,
    ) -> Result<usize, SimError> {
        if self.ledger.is_exhausted() {
            self.fallbacks += 1;
            return Ok(0);
        }
        let mut evals = Vec::with_capacity(self.candidates.len());
        for candidate in &self.candidates {
            evals.push(evaluate_candidate(
                sim, x_star, candidate, self.levels, self.cfg, &mut self.ledger, self.seed, self.serial,
            )?);
        }
        if evals.iter().any(|e| e.budget_exhausted) {
            self.fallbacks += 1;
            return Ok(0);
        }
        let selection = select_policy(&evals);
        if selection.degenerate {
            self.degenerate += 1;
        }
        if self.evaluations.len() < self.keep_evaluations {
            self.evaluations.push(PolicyEvaluation {
                host_level: self.cfg.host_level,
                depth: self.cfg.depth(),
                candidates: evals,
                selected: selection.index,
                degenerate: selection.degenerate,
            });
        }
        Ok(selection.index)
    }
}

impl<S: PolicyControlled> LevelHook<S> for ReconfigurationHook<'_> {
    fn on_level_reached(
        &mut self,
        level: usize,
        checkpoints: &mut [Checkpoint<S::Snapshot>],
        sim: &mut S,
    ) -> Result<(), SmcError> {
        if level != self.cfg.host_level {
            return Ok(());
        }
        for checkpoint in checkpoints.iter_mut() {
            let chosen = self.choose(sim, checkpoint)?;
            sim.restore(&checkpoint.snapshot);
            sim.apply_policy(self.candidates[chosen].context());
            checkpoint.snapshot = sim.snapshot();
            self.counts[chosen] += 1;
            self.serial += 1;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ReconfigurationReport<Snap> {
    pub smc: SmcReport<Snap>,
    pub candidates: Vec<Candidate>,
    /// Thresholds used by both the outer estimate and the lookahead.
    pub levels: Vec<f64>,
    pub selection_counts: Vec<u64>,
    pub selection_frequencies: Vec<f64>,
    pub selections: u64,
    pub mean_selected_index: Option<f64>,
    pub degenerate_selections: u64,
    /// Selections that fell back to the baseline because the inner budget ran out.
    pub fallback_selections: u64,
    pub inner_budget_used: u64,
    pub inner_budget_limit: u64,
    pub inner_budget_exhausted: bool,
    pub evaluations: Vec<PolicyEvaluation>,
}

/// Seed used for lookahead branches when none is configured.
pub fn derived_inner_seed(seed: u64) -> u64 {
    hash_words(seed, &[0x100c_a7e5])
}

pub fn run_smc_with_reconfiguration<F>(
    factory: &F,
    levels: &LevelSchedule,
    smc_cfg: &SmcConfig,
    policies: &PolicySet,
    look_cfg: &LookaheadConfig,
    seed: u64,
) -> Result<ReconfigurationReport<<F::Sim as Simulator>::Snapshot>, SmcError>
where
    F: ModelFactory,
    F::Sim: PolicyControlled,
{
    run_reconfiguration_keeping(factory, levels, smc_cfg, policies, look_cfg, seed, 0)
}

/// As [`run_smc_with_reconfiguration`], retaining the first `keep` evaluations.
pub fn run_reconfiguration_keeping<F>(
    factory: &F,
    levels: &LevelSchedule,
    smc_cfg: &SmcConfig,
    policies: &PolicySet,
    look_cfg: &LookaheadConfig,
    seed: u64,
    keep: usize,
) -> Result<ReconfigurationReport<<F::Sim as Simulator>::Snapshot>, SmcError>
where
    F: ModelFactory,
    F::Sim: PolicyControlled,
{
    look_cfg.validate(levels)?;
    let inner_seed = look_cfg.inner_seed.unwrap_or_else(|| derived_inner_seed(seed));
    let mut hook = ReconfigurationHook::new(policies, look_cfg, levels, inner_seed).keep_evaluations(keep);
    let smc = run_smc_with_hook(factory, levels, smc_cfg, seed, &mut hook)?;
    let selections: u64 = hook.counts.iter().sum();
    let selection_frequencies = hook
        .counts
        .iter()
        .map(|&c| if selections == 0 { 0.0 } else { c as f64 / selections as f64 })
        .collect();
    let mean_selected_index = (selections > 0).then(|| {
        hook.counts
            .iter()
            .enumerate()
            .map(|(i, &c)| i as f64 * c as f64)
            .sum::<f64>()
            / selections as f64
    });
    Ok(ReconfigurationReport {
        smc,
        candidates: hook.candidates.clone(),
        levels: levels.thresholds().to_vec(),
        selection_counts: hook.counts.clone(),
        selection_frequencies,
        selections,
        mean_selected_index,
        degenerate_selections: hook.degenerate,
        fallback_selections: hook.fallbacks,
        inner_budget_used: hook.ledger.used(),
        inner_budget_limit: hook.ledger.limit(),
        inner_budget_exhausted: hook.ledger.is_exhausted(),
        evaluations: hook.evaluations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netmodel::{NetModel, NetParams};
    use crate::smc::run_smc;
    use proptest::prelude::*;

    fn eval(index: usize, successes: Vec<u64>, n: u64, cost: f64) -> CandidateEvaluation {
        let scored: Vec<f64> = successes
            .iter()
            .map(|&s| if s == 0 { 0.5 } else { s as f64 } / n as f64)
            .collect();
        CandidateEvaluation {
            index,
            recovery_rate: 0.2,
            cost,
            estimates: successes.iter().map(|&s| s as f64 / n as f64).collect(),
            objective: scored.iter().map(|p| p.ln()).sum::<f64>() + cost,
            scored,
            has_zero: successes.contains(&0),
            successes,
            budget_exhausted: false,
        }
    }

    #[test]
    fn candidate_family() {
        let set = PolicySet::new(5, 0.5, 0.2, 2.0, 0.5, 0.05).unwrap();
        let c = set.candidates();
        assert_eq!(c[0].recovery_rate, 0.2);
        assert_eq!(c[0].cost, 0.0);
        assert!((c[4].recovery_rate - 0.6).abs() < 1e-15);
        assert!((c[1].cost - 0.25).abs() < 1e-15);
        assert!(PolicySet::new(0, 0.5, 0.2, 2.0, 0.5, 0.05).is_err());
        assert!(PolicySet::new(5, 1.5, 0.2, 2.0, 0.5, 0.05).is_err());
        // 0.2 * (1 + 200 * 0.5) * 0.05 > 1
        assert!(PolicySet::new(201, 0.5, 0.2, 2.0, 0.5, 0.05).is_err());
    }

    #[test]
    fn singleton_selects_baseline() {
        let s = select_policy(&[eval(0, vec![3], 25, 0.0)]);
        assert_eq!(s, Selection { index: 0, degenerate: false });
    }

    #[test]
    fn myopic_objective_arithmetic() {
        // p̂ = (0.5, 0.25), costs (0, κρ') with κ = ρ' = 1/2
        let a = eval(0, vec![2], 4, 0.0);
        let b = eval(1, vec![1], 4, 0.25);
        assert!((a.objective - 0.5f64.ln()).abs() < 1e-12);
        assert!((b.objective - (0.25f64.ln() + 0.25)).abs() < 1e-12);
        assert_eq!(select_policy(&[a, b]).index, 1);
    }

    #[test]
    fn equal_estimates_pick_cheapest() {
        let evals: Vec<_> = (0..4).map(|i| eval(i, vec![10], 25, 0.25 * i as f64)).collect();
        assert_eq!(select_policy(&evals).index, 0);
    }

    #[test]
    fn all_zero_is_degenerate() {
        let evals = vec![
            eval(0, vec![2, 0], 25, 0.0),
            eval(1, vec![0, 0], 25, 0.25),
            eval(2, vec![0, 0], 25, 0.5),
        ];
        assert_eq!(select_policy(&evals), Selection { index: 1, degenerate: true });
    }

    #[test]
    fn zero_candidate_scored_with_half_count() {
        let e = eval(0, vec![0], 25, 0.0);
        assert!((e.objective - (1.0f64 / 50.0).ln()).abs() < 1e-12);
        let winner = select_policy(&[eval(0, vec![5], 25, 0.0), eval(1, vec![0], 25, 0.25)]);
        assert_eq!(winner.index, 1);
    }

    proptest! {
        #[test]
        fn common_scale_keeps_argmin(
            probs in prop::collection::vec(0.05f64..1.0, 1..8),
            scale in 0.05f64..1.0,
        ) {
            let objective = |p: f64, i: usize| p.ln() + 0.25 * i as f64;
            let argmin = |f: &dyn Fn(usize) -> f64| {
                (0..probs.len()).fold(0, |best, i| if f(i) < f(best) { i } else { best })
            };
            let plain = argmin(&|i| objective(probs[i], i));
            let scaled = argmin(&|i| objective(probs[i] * scale, i));
            let (jp, js) = (objective(probs[plain], plain), objective(probs[scaled], scaled));
            // equal up to ties broken by rounding
            prop_assert!(plain == scaled || (jp - objective(probs[scaled], scaled)).abs() < 1e-12 || (js - objective(probs[plain] * scale, plain)).abs() < 1e-12);
        }
    }

    fn table_model() -> NetModel {
        NetModel::new(NetParams::default()).unwrap()
    }

    fn host_checkpoint(model: &NetModel) -> Checkpoint<crate::netmodel::NetSnapshot> {
        // congested state just past the first critical exceedance
        let mut sim = model.simulator();
        let mut snap = sim.snapshot();
        snap.state.backlog = 0.12;
        snap.state.health = -0.3;
        snap.state.stress = -3.5;
        snap.state.persistence = 1;
        snap.state.step = 200;
        sim.restore(&snap);
        assert!(sim.coordinate() >= 1.0);
        Checkpoint::capture(&sim, 2)
    }

    #[test]
    fn quantized_estimates_and_always_crossing() {
        let model = table_model();
        let levels = LevelSchedule::default();
        let cfg = LookaheadConfig::default();
        let x = host_checkpoint(&model);
        let set = PolicySet::new(3, 0.5, 0.2, 2.0, 0.5, 0.05).unwrap();
        let mut sim = model.simulator();
        let mut ledger = BudgetLedger::unlimited();
        for c in set.candidates() {
            let e = evaluate_candidate(&mut sim, &x, &c, &levels, &cfg, &mut ledger, 1, 0).unwrap();
            assert_eq!(e.estimates.len(), 1);
            let scaled = e.estimates[0] * 25.0;
            assert!((scaled - scaled.round()).abs() < 1e-12);
        }

    }

    #[test]
    fn forced_failure_scores_one() {
        // exceedance already on the books with one step of grace left
        let model = table_model();
        let mut x = host_checkpoint(&model);
        x.snapshot.state.persistence = model.grace_steps() - 1;
        x.snapshot.state.backlog = 1.0;
        let levels = LevelSchedule::default();
        let cfg = LookaheadConfig::default();
        let set = PolicySet::new(3, 0.5, 0.2, 2.0, 0.5, 0.05).unwrap();
        let mut sim = model.simulator();
        let mut ledger = BudgetLedger::unlimited();
        for c in set.candidates() {
            let e = evaluate_candidate(&mut sim, &x, &c, &levels, &cfg, &mut ledger, 2, 0).unwrap();
            assert_eq!(e.estimates, vec![1.0]);
            assert!((e.objective - c.cost).abs() < 1e-12);
        }
    }

    #[test]
    fn stronger_recovery_does_not_raise_progress_probability() {
        let model = table_model();
        let levels = LevelSchedule::default();
        let cfg = LookaheadConfig { continuations: 400, ..LookaheadConfig::default() };
        let x = host_checkpoint(&model);
        let set = PolicySet::new(9, 0.5, 0.2, 2.0, 0.5, 0.05).unwrap();
        let c = set.candidates();
        let mut sim = model.simulator();
        let mut ledger = BudgetLedger::unlimited();
        let mut base = 0.0;
        let mut fast = 0.0;
        for seed in 0..5 {
            base += evaluate_candidate(&mut sim, &x, &c[0], &levels, &cfg, &mut ledger, seed, 0).unwrap().estimates[0];
            // independent streams: a different serial
            fast += evaluate_candidate(&mut sim, &x, &c[8], &levels, &cfg, &mut ledger, seed, 1).unwrap().estimates[0];
        }
        assert!(fast <= base, "fast {fast} vs base {base}");
    }

    #[test]
    fn singleton_policy_layer_is_bit_identical_to_plain_smc() {
        let model = table_model();
        let levels = LevelSchedule::default();
        let smc_cfg = SmcConfig { budget: 400_000, ..SmcConfig::default() };
        let set = PolicySet::new(1, 0.5, 0.2, 2.0, 0.5, 0.05).unwrap();
        let look = LookaheadConfig::default();
        let plain = run_smc(&model, &levels, &smc_cfg, 4).unwrap();
        let with = run_smc_with_reconfiguration(&model, &levels, &smc_cfg, &set, &look, 4).unwrap();
        assert_eq!(
            serde_json::to_string(&plain).unwrap(),
            serde_json::to_string(&with.smc).unwrap()
        );
        assert_eq!(with.levels, levels.thresholds());
    }

    #[test]
    fn inner_seed_does_not_touch_resumed_trajectory_given_policy() {
        // Two policies that are numerically identical: whatever is selected,
        // the outer run must not depend on the inner seed.
        let model = table_model();
        let levels = LevelSchedule::default();
        let smc_cfg = SmcConfig { budget: 400_000, ..SmcConfig::default() };
        let set = PolicySet { size: 2, increment: 1e-300, base_rate: 0.2, exponent: 2.0, cost_scale: 0.0 };
        let run = |inner| {
            let look = LookaheadConfig { inner_seed: Some(inner), ..LookaheadConfig::default() };
            run_smc_with_reconfiguration(&model, &levels, &smc_cfg, &set, &look, 4).unwrap()
        };
        let (a, b) = (run(1), run(2));
        assert_eq!(
            serde_json::to_string(&a.smc).unwrap(),
            serde_json::to_string(&b.smc).unwrap()
        );
        assert_eq!(a.levels, b.levels);
    }

    #[test]
    fn selection_is_reproducible() {
        let model = table_model();
        let levels = LevelSchedule::default();
        let smc_cfg = SmcConfig { budget: 300_000, ..SmcConfig::default() };
        let set = PolicySet::new(5, 0.5, 0.2, 2.0, 0.5, 0.05).unwrap();
        let look = LookaheadConfig::default();
        let a = run_smc_with_reconfiguration(&model, &levels, &smc_cfg, &set, &look, 7).unwrap();
        let b = run_smc_with_reconfiguration(&model, &levels, &smc_cfg, &set, &look, 7).unwrap();
        assert_eq!(a.selection_counts, b.selection_counts);
        assert_eq!(a.smc.estimate, b.smc.estimate);
    }

    #[test]
    fn exhausted_inner_budget_falls_back_to_baseline() {
        let model = table_model();
        let levels = LevelSchedule::default();
        let smc_cfg = SmcConfig { budget: 400_000, ..SmcConfig::default() };
        let set = PolicySet::new(5, 0.5, 0.2, 2.0, 0.5, 0.05).unwrap();
        let look = LookaheadConfig { inner_budget: 10, ..LookaheadConfig::default() };
        let r = run_smc_with_reconfiguration(&model, &levels, &smc_cfg, &set, &look, 3).unwrap();
        if r.selections > 0 {
            assert!(r.inner_budget_exhausted);
            assert_eq!(r.fallback_selections, r.selections);
            assert_eq!(r.selection_counts[0], r.selections);
        }
        assert!(r.inner_budget_used <= 10);
    }

    #[test]
    fn lookahead_config_validation() {
        let levels = LevelSchedule::default();
        assert!(LookaheadConfig::default().validate(&levels).is_ok());
        assert!(LookaheadConfig { host_level: 4, ..Default::default() }.validate(&levels).is_err());
        assert!(LookaheadConfig { host_level: 0, ..Default::default() }.validate(&levels).is_err());
        assert!(LookaheadConfig { depth: Some(4), ..Default::default() }.validate(&levels).is_err());
        assert!(LookaheadConfig { depth: Some(3), ..Default::default() }.validate(&levels).is_ok());
        assert!(LookaheadConfig { continuations: 0, ..Default::default() }.validate(&levels).is_err());
    }

    #[test]
    fn deeper_lookahead_chains_stages() {
        let model = table_model();
        let levels = LevelSchedule::default();
        let cfg = LookaheadConfig { depth: Some(3), ..LookaheadConfig::default() };
        let x = host_checkpoint(&model);
        let set = PolicySet::new(2, 0.5, 0.2, 2.0, 0.5, 0.05).unwrap();
        let mut sim = model.simulator();
        let mut ledger = BudgetLedger::unlimited();
        let e = evaluate_candidate(&mut sim, &x, &set.candidates()[0], &levels, &cfg, &mut ledger, 5, 0).unwrap();
        assert_eq!(e.estimates.len(), 2);
        if e.successes[0] == 0 {
            assert_eq!(e.successes[1], 0);
            assert!(e.has_zero);
        }
        let expected: f64 = e.scored.iter().map(|p| p.ln()).sum::<f64>() + e.cost;
        assert!((e.objective - expected).abs() < 1e-12);
    }
}
