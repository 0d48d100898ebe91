//! Closed-form accuracy predictions for the splitting estimator, an exact
//! negative-binomial oracle for single-stage bias, and small statistics
//! helpers used by checks and sweeps.
//!
//! Under success-dominated stopping the attempt count `A` of a stage is
//! negative-binomial, and the stage estimate is `S_tar / A`. First-order
//! expansion gives relative bias and relative variance of `(1-p)/S_tar`.
//! With independent stages these compose multiplicatively:
//!
//! ```text
//! bias = Π (1 + b_k) − 1
//! var  = Π ((1 + b_k)² + v_k) − Π (1 + b_k)²
//! ```

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalysisError {
    #[error("stage probability {0} outside (0, 1]")]
    UndefinedProbability(f64),
    #[error("success target must be at least 1")]
    ZeroTarget,
    #[error("pool size must be at least 1")]
    ZeroPool,
    #[error("no stages given")]
    NoStages,
    #[error("tail cutoff {cutoff} is below the success target {target}")]
    CutoffBelowTarget { cutoff: u64, target: u64 },
    #[error("truncation bound {bound:e} at cutoff {cutoff} is not below 1e-12")]
    TruncationTooLoose { bound: f64, cutoff: u64 },
    #[error("report did not complete all stages")]
    Incomplete,
}

/// Certified precision of the negative-binomial series.
pub const ORACLE_TAIL_TOLERANCE: f64 = 1e-12;

fn check_probability(p: f64) -> Result<(), AnalysisError> {
    if p > 0.0 && p <= 1.0 {
        Ok(())
    } else {
        Err(AnalysisError::UndefinedProbability(p))
    }
}

/// Relative bias and relative variance of one stage estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StageTerms {
    pub rel_bias: f64,
    pub rel_var: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StagePrediction {
    pub p: f64,
    pub success_target: u64,
    pub rel_bias: f64,
    pub rel_var: f64,
    pub mean_attempts: f64,
    pub attempts_var: f64,
}

impl StagePrediction {
    pub fn terms(&self) -> StageTerms {
        StageTerms {
            rel_bias: self.rel_bias,
            rel_var: self.rel_var,
        }
    }
}

pub fn stage_prediction(p: f64, success_target: u64) -> Result<StagePrediction, AnalysisError> {
    check_probability(p)?;
    if success_target == 0 {
        return Err(AnalysisError::ZeroTarget);
    }
    let s = success_target as f64;
    Ok(StagePrediction {
        p,
        success_target,
        rel_bias: (1.0 - p) / s,
        rel_var: (1.0 - p) / s,
        mean_attempts: s / p,
        attempts_var: s * (1.0 - p) / (p * p),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ChainPrediction {
    pub stages: usize,
    pub rel_bias: f64,
    pub rel_var: f64,
    pub first_order_bias: f64,
    pub first_order_var: f64,
}

pub fn compose_terms(terms: &[StageTerms]) -> Result<ChainPrediction, AnalysisError> {
    if terms.is_empty() {
        return Err(AnalysisError::NoStages);
    }
    let mean_factor: f64 = terms.iter().map(|t| 1.0 + t.rel_bias).product();
    let second_factor: f64 = terms
        .iter()
        .map(|t| (1.0 + t.rel_bias).powi(2) + t.rel_var)
        .product();
    Ok(ChainPrediction {
        stages: terms.len(),
        rel_bias: mean_factor - 1.0,
        rel_var: second_factor - mean_factor * mean_factor,
        first_order_bias: terms.iter().map(|t| t.rel_bias).sum(),
        first_order_var: terms.iter().map(|t| t.rel_var).sum(),
    })
}

pub fn chain_prediction(stages: &[StagePrediction]) -> Result<ChainPrediction, AnalysisError> {
    compose_terms(&stages.iter().map(StagePrediction::terms).collect::<Vec<_>>())
}

/// `Σ (1 − p_k) / (p_k M)`.
pub fn classical_variance(probs: &[f64], pool: u64) -> Result<f64, AnalysisError> {
    if pool == 0 {
        return Err(AnalysisError::ZeroPool);
    }
    probs.iter().try_fold(0.0, |acc, &p| {
        check_probability(p)?;
        Ok(acc + (1.0 - p) / (p * pool as f64))
    })
}

/// Exact moments of `S/A` for `A` negative-binomial (trials to `S` successes).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StageMoments {
    /// `E[S/A]`.
    pub mean: f64,
    /// `E[(S/A)²]`.
    pub second_moment: f64,
    /// Upper bound on the neglected tail of either series.
    pub tail_bound: f64,
    pub cutoff: u64,
}

impl StageMoments {
    pub fn terms(&self, p: f64) -> StageTerms {
        StageTerms {
            rel_bias: self.mean / p - 1.0,
            rel_var: (self.second_moment - self.mean * self.mean) / (p * p),
        }
    }
}

/// Sums `(S/a)^r · NegBin(a; S, p)` for `a = S ..= cutoff`, `r ∈ {1, 2}`.
///
/// The PMF is advanced in log space. Beyond the cutoff consecutive terms
/// shrink by at most `q = (a/(a+1−S))(1−p)`, which decreases in `a`, so the
/// tail is bounded by a geometric series.
pub fn stage_moments(p: f64, success_target: u64, cutoff: u64) -> Result<StageMoments, AnalysisError> {
    check_probability(p)?;
    if success_target == 0 {
        return Err(AnalysisError::ZeroTarget);
    }
    if cutoff < success_target {
        return Err(AnalysisError::CutoffBelowTarget {
            cutoff,
            target: success_target,
        });
    }
    let s = success_target as f64;
    let ln_q = (1.0 - p).ln();
    let mut ln_pmf = s * p.ln();
    let mut mean = 0.0;
    let mut second = 0.0;
    let mut a = success_target;
    loop {
        let ratio = s / a as f64;
        let pmf = ln_pmf.exp();
        mean += ratio * pmf;
        second += ratio * ratio * pmf;
        // log PMF at a + 1
        ln_pmf += (a as f64).ln() - ((a + 1 - success_target) as f64).ln() + ln_q;
        a += 1;
        if a > cutoff {
            break;
        }
    }
    // a == cutoff + 1 here and ln_pmf is its log PMF
    let next_term = s / a as f64 * ln_pmf.exp();
    let shrink = a as f64 / (a + 1 - success_target) as f64 * (1.0 - p);
    let tail_bound = if next_term == 0.0 {
        0.0
    } else if shrink < 1.0 {
        next_term / (1.0 - shrink)
    } else {
        f64::INFINITY
    };
    Ok(StageMoments {
        mean,
        second_moment: second,
        tail_bound,
        cutoff,
    })
}

/// `E[S_tar/A]` summed up to `tail_cutoff`, failing unless the neglected
/// tail is certified below [`ORACLE_TAIL_TOLERANCE`].
pub fn exact_stage_bias_oracle(p: f64, success_target: u64, tail_cutoff: u64) -> Result<f64, AnalysisError> {
    let m = stage_moments(p, success_target, tail_cutoff)?;
    if !(m.tail_bound < ORACLE_TAIL_TOLERANCE) {
        return Err(AnalysisError::TruncationTooLoose {
            bound: m.tail_bound,
            cutoff: tail_cutoff,
        });
    }
    Ok(m.mean)
}

/// [`stage_moments`] with the cutoff doubled until the tail is certified.
pub fn exact_stage_moments(p: f64, success_target: u64) -> Result<StageMoments, AnalysisError> {
    check_probability(p)?;
    let mut cutoff = ((8.0 * success_target as f64 / p).ceil() as u64).max(success_target + 64);
    loop {
        let m = stage_moments(p, success_target, cutoff)?;
        if m.tail_bound < ORACLE_TAIL_TOLERANCE / 10.0 || cutoff > 1 << 32 {
            return Ok(m);
        }
        cutoff *= 2;
    }
}

/// Sample mean and standard error of the mean.
pub fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

pub fn sample_variance(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
}

/// Two-sided 97.5% Student-t quantiles for small degrees of freedom.
pub fn t_quantile_975(dof: usize) -> f64 {
    const TABLE: [f64; 30] = [
        12.706, 4.303, 3.182, 2.776, 2.571, 2.447, 2.365, 2.306, 2.262, 2.228, 2.201, 2.179,
        2.160, 2.145, 2.131, 2.120, 2.110, 2.101, 2.093, 2.086, 2.080, 2.074, 2.069, 2.064,
        2.060, 2.056, 2.052, 2.048, 2.045, 2.042,
    ];
    match dof {
        0 => f64::INFINITY,
        d if d <= 30 => TABLE[d - 1],
        _ => 1.96,
    }
}

/// 95% t-interval for the mean of `xs`.
pub fn mean_confidence_interval(xs: &[f64]) -> (f64, f64) {
    let (mean, se) = mean_and_se(xs);
    let h = t_quantile_975(xs.len().saturating_sub(1)) * se;
    (mean - h, mean + h)
}

/// 95% Wilson score interval for `hits` out of `n`.
pub fn wilson_interval(hits: u64, n: u64) -> (f64, f64) {
    let z = 1.96_f64;
    let n = n as f64;
    let p = hits as f64 / n;
    let denom = 1.0 + z * z / n;
    let centre = (p + z * z / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z * z / (4.0 * n * n)).sqrt() / denom;
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut out = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = rank;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(xs: &[f64], ys: &[f64]) -> f64 {
    let (rx, ry) = (ranks(xs), ranks(ys));
    let n = rx.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

/// Geometric standard deviation `exp(sd(ln x))` of positive values.
pub fn geometric_sd(xs: &[f64]) -> f64 {
    let logs: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    sample_variance(&logs).sqrt().exp()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn stage_prediction_examples() {
        let certain = stage_prediction(1.0, 20).unwrap();
        assert_eq!((certain.rel_bias, certain.rel_var), (0.0, 0.0));
        let s = stage_prediction(0.2, 20).unwrap();
        assert!((s.rel_bias - 0.04).abs() < 1e-15);
        assert!((s.rel_var - 0.04).abs() < 1e-15);
        assert_eq!(stage_prediction(0.5, 20).unwrap().mean_attempts, 40.0);
        assert!((stage_prediction(0.5, 20).unwrap().attempts_var - 40.0).abs() < 1e-12);
        assert!(stage_prediction(0.0, 20).is_err());
        assert!(stage_prediction(0.5, 0).is_err());
    }

    #[test]
    fn chain_examples() {
        let s = stage_prediction(0.2, 20).unwrap();
        let one = chain_prediction(&[s]).unwrap();
        assert!((one.rel_bias - s.rel_bias).abs() < 1e-15);
        assert!((one.rel_var - s.rel_var).abs() < 1e-15);

        let two = chain_prediction(&[s, s]).unwrap();
        assert!((two.rel_bias - 0.0816).abs() < 1e-12);
        let expected_var = (1.04f64.powi(2) + 0.04).powi(2) - 1.04f64.powi(4);
        assert!((two.rel_var - expected_var).abs() < 1e-12);

        let v = 0.01;
        let flat = compose_terms(&[StageTerms { rel_bias: 0.0, rel_var: v }; 5]).unwrap();
        assert!((flat.rel_var - ((1.0 + v).powi(5) - 1.0)).abs() < 1e-12);
        assert!(chain_prediction(&[]).is_err());
    }

    #[test]
    fn classical_variance_examples() {
        assert_eq!(classical_variance(&[1.0, 1.0, 1.0], 50).unwrap(), 0.0);
        assert!((classical_variance(&[0.5; 4], 100).unwrap() - 0.04).abs() < 1e-15);
        let a = classical_variance(&[0.3, 0.2], 100).unwrap();
        let b = classical_variance(&[0.3, 0.2], 200).unwrap();
        assert!((a - 2.0 * b).abs() < 1e-15);
        assert!(classical_variance(&[0.0], 10).is_err());
        assert!(classical_variance(&[0.5], 0).is_err());
    }

    #[test]
    fn oracle_near_deterministic_limit() {
        let p = 0.999;
        let m = exact_stage_bias_oracle(p, 20, 2_000).unwrap();
        assert!((m - p * (1.0 + (1.0 - p) / 20.0)).abs() < 1e-4);
    }

    #[test]
    fn oracle_close_to_first_order_at_p_02() {
        let m = exact_stage_bias_oracle(0.2, 20, 5_000).unwrap();
        let first_order = 0.2 * 1.04;
        assert!(((m - first_order) / first_order).abs() < 0.25);
        assert!(m > 0.2);
    }

    #[test]
    fn geometric_case_two_cutoffs_agree() {
        // E[1/A] for A ~ Geometric(1/2) is ln 2
        let a = exact_stage_bias_oracle(0.5, 1, 200).unwrap();
        let b = exact_stage_bias_oracle(0.5, 1, 1_000_000).unwrap();
        assert!((a - b).abs() < 1e-12);
        assert!((b - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn oracle_rejects_loose_cutoff() {
        assert!(matches!(
            exact_stage_bias_oracle(0.2, 20, 40),
            Err(AnalysisError::TruncationTooLoose { .. })
        ));
        assert!(stage_moments(0.2, 20, 10).is_err());
    }

    #[test]
    fn oracle_moments_are_cutoff_stable() {
        for &(p, s) in &[(0.1, 20u64), (0.3, 20), (0.5, 50), (0.05, 5)] {
            let m = exact_stage_moments(p, s).unwrap();
            let doubled = stage_moments(p, s, m.cutoff * 2).unwrap();
            assert!((m.mean - doubled.mean).abs() < 1e-10);
            assert!((m.second_moment - doubled.second_moment).abs() < 1e-10);
        }
    }

    #[test]
    fn exact_terms_near_first_order_for_success_dominated_stages() {
        for &p in &[0.1, 0.2, 0.3, 0.5] {
            let exact = exact_stage_moments(p, 20).unwrap().terms(p);
            let approx = stage_prediction(p, 20).unwrap();
            assert!((exact.rel_bias - approx.rel_bias).abs() / approx.rel_bias < 0.25, "p={p}");
        }
    }

    #[test]
    fn intervals_and_ranks() {
        let (lo, hi) = wilson_interval(0, 100);
        assert_eq!(lo, 0.0);
        assert!(hi > 0.0 && hi < 0.05);
        let (lo, hi) = wilson_interval(30, 100);
        assert!(lo < 0.3 && hi > 0.3);
        assert!((spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]) - 1.0).abs() < 1e-12);
        assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]) + 1.0).abs() < 1e-12);
        assert_eq!(ranks(&[2.0, 1.0, 2.0]), vec![2.5, 1.0, 2.5]);
        assert!((geometric_sd(&[1.0, std::f64::consts::E]) - (0.5f64.sqrt()).exp()).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn stage_terms_decrease_in_target_and_probability(
            p in 0.01f64..0.98, s in 1u64..200,
        ) {
            let a = stage_prediction(p, s).unwrap();
            let more_s = stage_prediction(p, s + 1).unwrap();
            let more_p = stage_prediction(p + 0.01, s).unwrap();
            prop_assert!(more_s.rel_bias < a.rel_bias && more_s.rel_var < a.rel_var);
            prop_assert!(more_p.rel_bias < a.rel_bias && more_p.rel_var < a.rel_var);
        }

        #[test]
        fn first_order_sums_bound_and_approximate(
            terms in prop::collection::vec((0.0f64..0.05, 0.0f64..0.05), 1..5)
        ) {
            let t: Vec<_> = terms.iter().map(|&(b, v)| StageTerms { rel_bias: b, rel_var: v }).collect();
            let c = compose_terms(&t).unwrap();
            prop_assert!(c.first_order_bias <= c.rel_bias + 1e-15);
            prop_assert!(c.first_order_var <= c.rel_var + 1e-15);
            if c.first_order_bias > 0.0 {
                let rel = (c.rel_bias - c.first_order_bias) / c.first_order_bias;
                prop_assert!(rel < 0.1, "bias gap {rel}");
            }
        }

        #[test]
        fn first_order_variance_for_small_terms(
            terms in prop::collection::vec((0.0f64..0.01, 1e-6f64..0.01), 1..5)
        ) {
            // the variance composition carries (1+b)² cross terms, so the
            // linear sum is only close once the terms are this small
            let t: Vec<_> = terms.iter().map(|&(b, v)| StageTerms { rel_bias: b, rel_var: v }).collect();
            let c = compose_terms(&t).unwrap();
            let rel = (c.rel_var - c.first_order_var) / c.first_order_var;
            prop_assert!(rel < 0.1, "variance gap {rel}");
        }
    }
}
