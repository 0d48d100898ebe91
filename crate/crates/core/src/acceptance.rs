//! Built-in acceptance checks, shared by `resmc verify` and the
//! `acceptance` integration test.

use rayon::prelude::*;
use serde::Serialize;

use crate::analysis::{
    compose_terms, exact_stage_moments, geometric_sd, mean_and_se, mean_confidence_interval,
    sample_variance, spearman,
};
use crate::config::{Engine, ExperimentConfig, SweepAxis};
use crate::experiment::{single_artifact, sweep_artifact};
use crate::levels::LevelSchedule;
use crate::mc::{run_mc, McConfig};
use crate::netmodel::{NetModel, NetParams};
use crate::policy::{run_smc_with_reconfiguration, LookaheadConfig, PolicySet};
use crate::rng::hash_words;
use crate::smc::{next_pool_size, run_smc, SmcConfig};
use crate::toy::{BernoulliChain, ThreeStateChain};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scale {
    /// Everything at full size.
    Full,
    /// Skips the 10⁵-replication check and shrinks the network budgets ten-fold.
    Quick,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CriterionResult {
    pub id: u32,
    pub name: &'static str,
    /// `None` when skipped at this scale.
    pub passed: Option<bool>,
    pub detail: String,
}

impl CriterionResult {
    fn new(id: u32, name: &'static str, passed: bool, detail: String) -> Self {
        Self { id, name, passed: Some(passed), detail }
    }

    fn skipped(id: u32, name: &'static str, why: &str) -> Self {
        Self { id, name, passed: None, detail: why.to_string() }
    }

    /// `PASS`/`FAIL`/`SKIP` line for reports.
    pub fn line(&self) -> String {
        let tag = match self.passed {
            Some(true) => "PASS",
            Some(false) => "FAIL",
            None => "SKIP",
        };
        format!("[{tag}] {:>2} {}: {}", self.id, self.name, self.detail)
    }
}

pub const CRITERIA: &[(u32, &str)] = &[
    (1, "MC resolution accounting"),
    (2, "SMC resolution floor"),
    (3, "single-stage bias against the negative-binomial oracle"),
    (4, "two-stage bias and variance composition"),
    (5, "brute-force equivalence on a three-state chain"),
    (6, "rare-regime superiority over MC"),
    (7, "cross-engine agreement in the non-rare regime"),
    (8, "pool-size arithmetic"),
    (9, "policy trends in stress variability"),
    (10, "byte-identical artifacts"),
];

fn name(id: u32) -> &'static str {
    CRITERIA.iter().find(|c| c.0 == id).expect("known criterion").1
}

/// Runs criterion `id` (1 ..= 10).
pub fn run_criterion(id: u32, scale: Scale, seed: u64) -> CriterionResult {
    match id {
        1 => mc_resolution(),
        2 => smc_resolution_floor(seed),
        3 => single_stage_bias(scale, seed),
        4 => two_stage_composition(seed),
        5 => brute_force_chain(seed),
        6 => rare_regime(scale, seed),
        7 => cross_engine(scale, seed),
        8 => pool_arithmetic(),
        9 => policy_trends(seed),
        10 => determinism(seed),
        _ => panic!("unknown criterion {id}"),
    }
}

pub fn run_all(scale: Scale, seed: u64) -> Vec<CriterionResult> {
    CRITERIA.iter().map(|&(id, _)| run_criterion(id, scale, seed)).collect()
}

fn mc_resolution() -> CriterionResult {
    let model = NetModel::new(NetParams::default()).expect("default parameters are valid");
    let cfg = McConfig::BudgetSteps(5_000_000);
    let report = run_mc(&model, &cfg, 1).expect("mc run");
    let n = report.trajectories;
    let rel = (report.min_resolvable - 2.4e-4).abs() / 2.4e-4;
    let ok = n.abs_diff(4167) <= 1 && rel <= 0.02 && report.steps_used <= 5_000_000;
    CriterionResult::new(
        1,
        name(1),
        ok,
        format!("N = {n}, min_resolvable = {:.4e} ({:.2}% off 2.4e-4)", report.min_resolvable, 100.0 * rel),
    )
}

fn smc_resolution_floor(seed: u64) -> CriterionResult {
    let model = NetModel::new(NetParams::default()).expect("default parameters are valid");
    let levels = LevelSchedule::default();
    let report = run_smc(&model, &levels, &SmcConfig::default(), seed).expect("smc run");
    let ok = report.resolution_floor == 1e-8 && levels.stages() == 4;
    CriterionResult::new(2, name(2), ok, format!("K = {}, floor = {:e}", levels.stages(), report.resolution_floor))
}

fn success_dominated(target: u64) -> SmcConfig {
    SmcConfig {
        success_target: target,
        attempt_target: 1,
        initial_pool: 1,
        min_pool: 1,
        max_pool: 200,
        batch_size: 1,
        budget: u64::MAX / 2,
        ..SmcConfig::default()
    }
}

fn replicate<F: Fn(u64) -> f64 + Sync>(n: u64, seed: u64, salt: u64, f: F) -> Vec<f64> {
    (0..n).into_par_iter().map(|r| f(hash_words(seed, &[salt, r]))).collect()
}

fn single_stage_bias(scale: Scale, seed: u64) -> CriterionResult {
    if scale == Scale::Quick {
        return CriterionResult::skipped(3, name(3), "10⁵-replication check skipped in quick mode");
    }
    let (p, s) = (0.2, 20);
    let chain = BernoulliChain::new(vec![p]).expect("valid chain");
    let cfg = success_dominated(s);
    let levels = chain.levels();
    let xs = replicate(100_000, seed, 3, |sd| run_smc(&chain, &levels, &cfg, sd).expect("smc run").estimate);
    let (mean, se) = mean_and_se(&xs);
    let oracle = exact_stage_moments(p, s).expect("oracle").mean;
    let first_order = p * (1.0 + (1.0 - p) / s as f64);
    let z = (mean - oracle) / se;
    let off = (oracle - first_order).abs() / first_order;
    let bias_off = ((oracle / p - 1.0) - (1.0 - p) / s as f64).abs() / ((1.0 - p) / s as f64);
    let ok = z.abs() <= 3.0 && off <= 0.25 && bias_off <= 0.25;
    CriterionResult::new(
        3,
        name(3),
        ok,
        format!(
            "mean {mean:.6} vs oracle {oracle:.6} ({z:+.2} SE); oracle vs {first_order:.3}: {:.2}%, relative bias {:.4} vs {:.4}",
            100.0 * off,
            oracle / p - 1.0,
            (1.0 - p) / s as f64
        ),
    )
}

fn two_stage_composition(seed: u64) -> CriterionResult {
    let probs = [0.3, 0.2];
    let s = 20;
    let chain = BernoulliChain::new(probs.to_vec()).expect("valid chain");
    let cfg = success_dominated(s);
    let levels = chain.levels();
    let xs = replicate(20_000, seed, 4, |sd| run_smc(&chain, &levels, &cfg, sd).expect("smc run").estimate);
    let p = chain.exact_probability();
    let (mean, _) = mean_and_se(&xs);
    let emp_bias = mean / p - 1.0;
    let emp_var = sample_variance(&xs) / (p * p);
    let terms: Vec<_> = probs
        .iter()
        .map(|&q| exact_stage_moments(q, s).expect("oracle").terms(q))
        .collect();
    let pred = compose_terms(&terms).expect("composition");
    let rb = (emp_bias - pred.rel_bias).abs() / pred.rel_bias.abs();
    let rv = (emp_var - pred.rel_var).abs() / pred.rel_var;
    CriterionResult::new(
        4,
        name(4),
        rb <= 0.3 && rv <= 0.3,
        format!(
            "rel bias {emp_bias:.4} vs {:.4} ({:.1}%), rel var {emp_var:.4} vs {:.4} ({:.1}%)",
            pred.rel_bias,
            100.0 * rb,
            pred.rel_var,
            100.0 * rv
        ),
    )
}

/// The chain used by the brute-force check.
pub fn brute_force_toy() -> ThreeStateChain {
    ThreeStateChain::new([[0.7, 0.25, 0.05], [0.4, 0.4, 0.2]], 8).expect("valid chain")
}

fn brute_force_chain(seed: u64) -> CriterionResult {
    let chain = brute_force_toy();
    let (exact, leaves) = chain.enumerate_hitting_probability();
    let levels = chain.levels();
    let cfg = SmcConfig::default();
    let xs = replicate(2000, seed, 5, |sd| run_smc(&chain, &levels, &cfg, sd).expect("smc run").estimate);
    let (mean, se) = mean_and_se(&xs);
    let z = (mean - exact) / se;
    CriterionResult::new(
        5,
        name(5),
        z.abs() <= 3.0 && leaves <= 10_000,
        format!("exact {exact:.6} over {leaves} paths, SMC mean {mean:.6} ({z:+.2} SE)"),
    )
}

struct RegimeRow {
    delta: f64,
    mc_zero: usize,
    smc_positive: usize,
    gsd: f64,
}

fn rare_regime(scale: Scale, seed: u64) -> CriterionResult {
    let runs = 20;
    let (budget, grid): (u64, &[f64]) = match scale {
        Scale::Full => (5_000_000, &[0.2, 0.25, 0.3, 0.35, 0.4]),
        Scale::Quick => (500_000, &[0.1, 0.15, 0.2, 0.25]),
    };
    let rows: Vec<RegimeRow> = grid
        .iter()
        .map(|&delta| {
            let model = NetModel::new(NetParams { delay_threshold: delta, ..NetParams::default() })
                .expect("valid parameters");
            let smc_cfg = SmcConfig { budget, ..SmcConfig::default() };
            let levels = LevelSchedule::default();
            let pairs: Vec<(f64, f64)> = (0..runs)
                .into_par_iter()
                .map(|r| {
                    let sd = hash_words(seed, &[6, delta.to_bits(), r]);
                    let mc = run_mc(&model, &McConfig::BudgetSteps(budget), sd).expect("mc run");
                    let smc = run_smc(&model, &levels, &smc_cfg, sd).expect("smc run");
                    (mc.estimate, smc.estimate)
                })
                .collect();
            let positive: Vec<f64> = pairs.iter().map(|p| p.1).filter(|&x| x > 0.0).collect();
            RegimeRow {
                delta,
                mc_zero: pairs.iter().filter(|p| p.0 == 0.0).count(),
                smc_positive: positive.len(),
                gsd: if positive.len() >= 2 { geometric_sd(&positive) } else { f64::NAN },
            }
        })
        .collect();
    let need = (0.9 * runs as f64).ceil() as usize;
    let meets = |r: &RegimeRow| r.mc_zero >= need && r.smc_positive >= need && r.gsd < 10.0;
    let detail: Vec<String> = rows
        .iter()
        .map(|r| {
            format!(
                "δ={}: MC zero {}/{runs}, SMC>0 {}/{runs}, gsd {:.2}",
                r.delta, r.mc_zero, r.smc_positive, r.gsd
            )
        })
        .collect();
    CriterionResult::new(
        6,
        name(6),
        rows.iter().any(meets),
        format!("budget {budget}; {}", detail.join("; ")),
    )
}

/// Parameters of the cross-engine comparison. With the baseline stress
/// variability the failure probability stays below 10⁻² for every `δ`, so
/// the latent stress is made more variable.
pub fn cross_engine_params() -> NetParams {
    NetParams { stress_std: 0.65, delay_threshold: 0.1, ..NetParams::default() }
}

fn cross_engine(scale: Scale, seed: u64) -> CriterionResult {
    let budget = match scale {
        Scale::Full => 5_000_000,
        Scale::Quick => 500_000,
    };
    let params = cross_engine_params();
    let model = NetModel::new(params).expect("valid parameters");
    let smc_cfg = SmcConfig { budget, ..SmcConfig::default() };
    let levels = LevelSchedule::default();
    let pairs: Vec<(f64, f64)> = (0..10u64)
        .into_par_iter()
        .map(|r| {
            let sd = hash_words(seed, &[7, r]);
            let mc = run_mc(&model, &McConfig::BudgetSteps(budget), sd).expect("mc run");
            let smc = run_smc(&model, &levels, &smc_cfg, sd).expect("smc run");
            (mc.estimate, smc.estimate)
        })
        .collect();
    let mc: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let smc: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let (mc_lo, mc_hi) = mean_confidence_interval(&mc);
    let (smc_lo, smc_hi) = mean_confidence_interval(&smc);
    let mc_mean = mc.iter().sum::<f64>() / 10.0;
    let in_range = (1e-2..=1e-1).contains(&mc_mean);
    let overlap = mc_lo <= smc_hi && smc_lo <= mc_hi;
    CriterionResult::new(
        7,
        name(7),
        in_range && overlap,
        format!(
            "σF={}, δ={}, budget {budget}: MC {mc_mean:.3e} CI [{mc_lo:.3e}, {mc_hi:.3e}], SMC CI [{smc_lo:.3e}, {smc_hi:.3e}]",
            params.stress_std, params.delay_threshold
        ),
    )
}

fn pool_arithmetic() -> CriterionResult {
    let cfg = SmcConfig::default();
    let got = [next_pool_size(0.5, &cfg), next_pool_size(1.0, &cfg), next_pool_size(0.01, &cfg)];
    CriterionResult::new(8, name(8), got == [60, 30, 200], format!("p̂ = 0.5, 1, 0.01 → {got:?}"))
}

fn policy_trends(seed: u64) -> CriterionResult {
    let sigmas = [0.45, 0.575, 0.8];
    let seeds = 10u64;
    let look = LookaheadConfig::default();
    let levels = LevelSchedule::default();
    let smc_cfg = SmcConfig::default();
    let run = |sigma: f64, size: usize| {
        let params = NetParams { stress_std: sigma, ..NetParams::default() };
        let model = NetModel::new(params).expect("valid parameters");
        let set = PolicySet::new(size, 0.5, params.recovery_rate, params.recovery_exponent, 0.5, params.step_duration)
            .expect("valid policy set");
        (0..seeds)
            .into_par_iter()
            .map(|r| {
                let sd = hash_words(seed, &[9, r]);
                run_smc_with_reconfiguration(&model, &levels, &smc_cfg, &set, &look, sd).expect("policy run")
            })
            .collect::<Vec<_>>()
    };
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut means = Vec::new();
    let mut five = Vec::new();
    for &sigma in &sigmas {
        let reports = run(sigma, 5);
        let idx: Vec<f64> = reports.iter().filter_map(|r| r.mean_selected_index).collect();
        five = reports.iter().map(|r| r.smc.estimate).collect();
        xs.extend(std::iter::repeat_n(sigma, idx.len()));
        ys.extend(idx.iter().copied());
        means.push(if idx.is_empty() { f64::NAN } else { idx.iter().sum::<f64>() / idx.len() as f64 });
    }
    let rho = spearman(&xs, &ys);
    // the trend is judged by rank correlation; monotone means are reported only
    let monotone = means.windows(2).all(|w| w[0] <= w[1]);
    // the last grid value is σF = 0.8
    let one: Vec<f64> = run(0.8, 1).iter().map(|r| r.smc.estimate).collect();
    let (m5, m1) = (five.iter().sum::<f64>() / seeds as f64, one.iter().sum::<f64>() / seeds as f64);
    let (c5, c1) = (mean_confidence_interval(&five), mean_confidence_interval(&one));
    let not_worse = m5 <= m1 || (c5.0 <= c1.1 && c1.0 <= c5.1);
    CriterionResult::new(
        9,
        name(9),
        rho > 0.0 && not_worse,
        format!(
            "mean index {:?} over σF {sigmas:?} (monotone: {monotone}), Spearman {rho:.3} ({} runs with selections); σF=0.8: |U|=5 {m5:.3e} vs |U|=1 {m1:.3e}",
            means.iter().map(|m| (m * 1000.0).round() / 1000.0).collect::<Vec<_>>(),
            ys.len()
        ),
    )
}

/// Small configuration exercising every engine, used by the determinism check.
pub fn determinism_config(seed: u64) -> ExperimentConfig {
    let mut cfg = ExperimentConfig { seed, replications: 2, ..ExperimentConfig::default() };
    cfg.smc.budget = 300_000;
    cfg.mc = McConfig::Trajectories(100);
    cfg.policy.inner_budget = 300_000;
    cfg.sweep.engines = vec![Engine::Mc, Engine::Smc, Engine::SmcPolicy];
    cfg.sweep.axes = vec![SweepAxis { name: "model.delay_threshold".into(), values: vec![0.1, 0.3] }];
    cfg
}

fn determinism(seed: u64) -> CriterionResult {
    let cfg = determinism_config(seed);
    let a = sweep_artifact(&cfg).expect("sweep");
    let b = sweep_artifact(&cfg).expect("sweep");
    let mut same = a.csv == b.csv && a.summary_json == b.summary_json;
    for engine in [Engine::Mc, Engine::Smc, Engine::SmcPolicy] {
        let mut single = cfg.clone();
        single.sweep = Default::default();
        single.engine = engine;
        let x = single_artifact(&single).expect("run");
        let y = single_artifact(&single).expect("run");
        same &= x.summary_json == y.summary_json;
    }
    CriterionResult::new(
        10,
        name(10),
        same,
        format!("{} CSV rows and 4 JSON summaries compared byte for byte", a.runs.len()),
    )
}
