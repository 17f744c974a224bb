//! IPS and balanced point estimators with their closed-form variances.
//!
//! With `N = n_log + n_aug` and `π_bal = (1 − α)·π_old + α·π_aug`:
//!
//! ```text
//! IPS:       (1/N) Σ_i π_t(a_i|x_i) / π_src(i)(a_i|x_i) · r_i
//! balanced:  (1/N) Σ_i π_t(a_i|x_i) / π_bal(a_i|x_i)    · r_i
//!
//! Var IPS  = n_log/N² · E_x Σ_a π_t² m / π_old + n_aug/N² · E_x Σ_a π_t² m / π_aug − R²/N
//! Var BAL  = (E_x Σ_a π_t² m / π_bal − R²) / N
//! ```
//!
//! where `m(x, a) = E[r²(x, a)]` and `R` is the target's true utility. Both
//! variance expressions are exact when each of the `N` records draws its
//! source at random with probability `α` for augmentation. With fixed
//! per-source counts the IPS expression stays exact while the balanced one
//! becomes an upper bound; see [`crate::oracle`] for the exact value.

use serde::{Deserialize, Serialize};

use crate::data::{LoggedDataset, Source};
use crate::env::{true_utility, Environment, SecondMomentModel};
use crate::error::{MvalError, Result};
use crate::policy::{mix_policies, MixProfile, Policy};

/// Negative totals smaller than this (relative to the expectation term) are
/// rounding and reported as zero.
const NEGATIVE_ROUNDING: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub point_estimate: f64,
    pub n_used: usize,
    /// `(log, aug)` shares of the point estimate; they sum to it.
    pub per_source_contributions: (f64, f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceFormula {
    Ips,
    Balanced,
    Bound,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceReport {
    pub value: f64,
    pub expectation_term: f64,
    pub r_squared_term: f64,
    pub formula: VarianceFormula,
}

impl VarianceReport {
    fn finish(expectation_term: f64, r_squared_term: f64, formula: VarianceFormula) -> Result<Self> {
        let mut value = expectation_term - r_squared_term;
        if value < 0.0 {
            if value < -NEGATIVE_ROUNDING * expectation_term.abs().max(1.0) {
                return Err(MvalError::NegativeVariance { value });
            }
            value = 0.0;
        }
        Ok(VarianceReport {
            value,
            expectation_term,
            r_squared_term,
            formula,
        })
    }
}

/// Per-cell importance weights `π_t(a|x) / π_bal(a|x)`; `None` marks cells
/// where the target has mass but the mixture has none.
#[derive(Debug, Clone)]
pub(crate) struct BalancedWeights {
    actions: usize,
    weights: Vec<Option<f64>>,
}

impl BalancedWeights {
    pub(crate) fn new(p_target: &Policy, p_balanced: &Policy) -> Result<Self> {
        p_target.check_shape(p_balanced.shape())?;
        let weights = p_target
            .as_flat()
            .iter()
            .zip(p_balanced.as_flat())
            .map(|(&t, &b)| match (t > 0.0, b > 0.0) {
                (_, true) => Some(t / b),
                (false, false) => Some(0.0),
                (true, false) => None,
            })
            .collect();
        Ok(BalancedWeights {
            actions: p_target.actions(),
            weights,
        })
    }

    #[inline]
    pub(crate) fn get(&self, context: usize, action: usize) -> Option<f64> {
        self.weights[context * self.actions + action]
    }

    pub(crate) fn estimate(&self, data: &LoggedDataset) -> Result<EstimateReport> {
        let n = data.len();
        let (mut log_sum, mut aug_sum) = (0.0, 0.0);
        for (index, s) in data.samples().iter().enumerate() {
            let w = self
                .get(s.context_id, s.action_id)
                .ok_or(MvalError::ZeroBalancedPropensity { index })?;
            match s.source {
                Source::Log => log_sum += w * s.reward,
                Source::Aug => aug_sum += w * s.reward,
            }
        }
        Ok(report(n, log_sum, aug_sum))
    }
}

fn report(n: usize, log_sum: f64, aug_sum: f64) -> EstimateReport {
    if n == 0 {
        return EstimateReport {
            point_estimate: 0.0,
            n_used: 0,
            per_source_contributions: (0.0, 0.0),
        };
    }
    let nf = n as f64;
    EstimateReport {
        point_estimate: (log_sum + aug_sum) / nf,
        n_used: n,
        per_source_contributions: (log_sum / nf, aug_sum / nf),
    }
}

/// IPS estimate: each record is reweighted by its own source policy.
pub fn ips_estimate(data: &LoggedDataset, p_target: &Policy) -> Result<EstimateReport> {
    p_target.check_shape(data.shape())?;
    let (mut log_sum, mut aug_sum) = (0.0, 0.0);
    for (index, s) in data.samples().iter().enumerate() {
        let source = data.policy(s.source).ok_or(MvalError::MissingSourcePolicy(match s.source {
            Source::Log => "log",
            Source::Aug => "aug",
        }))?;
        let propensity = source.prob(s.context_id, s.action_id);
        if propensity <= 0.0 {
            return Err(MvalError::ZeroPropensity { index });
        }
        let term = p_target.prob(s.context_id, s.action_id) / propensity * s.reward;
        match s.source {
            Source::Log => log_sum += term,
            Source::Aug => aug_sum += term,
        }
    }
    Ok(report(data.len(), log_sum, aug_sum))
}

/// Balanced estimate: every record is reweighted by the mixture policy.
pub fn balanced_estimate(
    data: &LoggedDataset,
    p_target: &Policy,
    p_old: &Policy,
    p_aug: &Policy,
    mix: MixProfile,
) -> Result<EstimateReport> {
    p_target.check_shape(data.shape())?;
    data.check_counts(mix)?;
    let balanced = mix_policies(p_old, p_aug, mix)?;
    BalancedWeights::new(p_target, &balanced)?.estimate(data)
}

/// `E_x Σ_a π_t²(a|x)·m(x, a) / π(a|x)`.
pub(crate) fn weighted_second_moment(
    p_target: &Policy,
    divisor: &Policy,
    m: &SecondMomentModel,
    env: &Environment,
) -> Result<f64> {
    env.check_policy(p_target)?;
    env.check_policy(divisor)?;
    m.check_shape(env.shape())?;
    let mut total = 0.0;
    for (x, &px) in env.context_probs().iter().enumerate() {
        if px == 0.0 {
            continue;
        }
        let mut inner = 0.0;
        for a in 0..env.actions() {
            let t = p_target.prob(x, a);
            let num = t * t * m.get(x, a);
            if num == 0.0 {
                continue;
            }
            let d = divisor.prob(x, a);
            if d <= 0.0 {
                return Err(MvalError::InfiniteVariance { context: x, action: a });
            }
            inner += num / d;
        }
        total += px * inner;
    }
    Ok(total)
}

/// Variance of one importance-weighted term `π_t/π · r` with `(x, a, r)`
/// drawn from `π`: `E_x Σ_a π_t² m / π − R²`.
pub fn single_term_variance(
    p: &Policy,
    p_target: &Policy,
    m: &SecondMomentModel,
    env: &Environment,
) -> Result<f64> {
    let e = weighted_second_moment(p_target, p, m, env)?;
    let r = true_utility(p_target, env)?;
    Ok(VarianceReport::finish(e, r * r, VarianceFormula::Ips)?.value)
}

pub fn ips_variance_closed_form(
    p_target: &Policy,
    p_old: &Policy,
    p_aug: &Policy,
    mix: MixProfile,
    m: &SecondMomentModel,
    env: &Environment,
) -> Result<VarianceReport> {
    let n = mix.total() as f64;
    let mut expectation = 0.0;
    if mix.n_log() > 0 {
        expectation += mix.n_log() as f64 / (n * n) * weighted_second_moment(p_target, p_old, m, env)?;
    }
    if mix.n_aug() > 0 {
        expectation += mix.n_aug() as f64 / (n * n) * weighted_second_moment(p_target, p_aug, m, env)?;
    }
    let r = true_utility(p_target, env)?;
    VarianceReport::finish(expectation, r * r / n, VarianceFormula::Ips)
}

pub fn balanced_variance_closed_form(
    p_target: &Policy,
    p_old: &Policy,
    p_aug: &Policy,
    mix: MixProfile,
    m: &SecondMomentModel,
    env: &Environment,
) -> Result<VarianceReport> {
    let n = mix.total() as f64;
    let balanced = mix_policies(p_old, p_aug, mix)?;
    let e = weighted_second_moment(p_target, &balanced, m, env)?;
    let r = true_utility(p_target, env)?;
    VarianceReport::finish(e / n, r * r / n, VarianceFormula::Balanced)
}

/// Unbiased sample variance (divisor `n − 1`).
pub fn empirical_variance(values: &[f64]) -> Result<f64> {
    if values.len() < 2 {
        return Err(MvalError::TooFewValues(values.len()));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    Ok(values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::LoggedSample;
    use crate::env::second_moment;

    fn s(x: usize, a: usize, r: f64, source: Source) -> LoggedSample {
        LoggedSample {
            context_id: x,
            action_id: a,
            reward: r,
            source,
        }
    }

    #[test]
    fn ips_weight_one_and_two() {
        let p = Policy::new(&[vec![0.5, 0.5]]).unwrap();
        let d = LoggedDataset::from_samples(1, 2, vec![s(0, 0, 1.0, Source::Log)])
            .unwrap()
            .with_policy(Source::Log, p.clone())
            .unwrap();
        assert_eq!(ips_estimate(&d, &p).unwrap().point_estimate, 1.0);
        let t = Policy::deterministic(2, &[0]);
        assert_eq!(ips_estimate(&d, &t).unwrap().point_estimate, 2.0);
    }

    #[test]
    fn ips_same_policy_is_sample_mean() {
        let p = Policy::new(&[vec![0.2, 0.8], vec![0.6, 0.4]]).unwrap();
        let rewards = [0.0, 1.0, 1.0, 0.0, 1.0];
        let samples = rewards
            .iter()
            .enumerate()
            .map(|(i, &r)| s(i % 2, (i / 2) % 2, r, if i < 3 { Source::Log } else { Source::Aug }))
            .collect();
        let d = LoggedDataset::from_samples(2, 2, samples)
            .unwrap()
            .with_policy(Source::Log, p.clone())
            .unwrap()
            .with_policy(Source::Aug, p.clone())
            .unwrap();
        let est = ips_estimate(&d, &p).unwrap();
        assert!((est.point_estimate - 0.6).abs() < 1e-15);
        let (l, g) = est.per_source_contributions;
        assert!((l + g - est.point_estimate).abs() < 1e-15);
    }

    #[test]
    fn ips_detects_corrupt_log() {
        let d = LoggedDataset::from_samples(1, 2, vec![s(0, 1, 1.0, Source::Log)])
            .unwrap()
            .with_policy(Source::Log, Policy::deterministic(2, &[0]))
            .unwrap();
        assert!(matches!(
            ips_estimate(&d, &Policy::uniform(1, 2)),
            Err(MvalError::ZeroPropensity { index: 0 })
        ));
        let bare = LoggedDataset::from_samples(1, 2, vec![s(0, 1, 1.0, Source::Aug)]).unwrap();
        assert!(matches!(
            ips_estimate(&bare, &Policy::uniform(1, 2)),
            Err(MvalError::MissingSourcePolicy("aug"))
        ));
    }

    #[test]
    fn balanced_two_sample_instance() {
        let t = Policy::deterministic(2, &[0]);
        let old = Policy::new(&[vec![0.2, 0.8]]).unwrap();
        let aug = Policy::new(&[vec![0.8, 0.2]]).unwrap();
        let d = LoggedDataset::from_samples(1, 2, vec![s(0, 0, 1.0, Source::Log), s(0, 0, 1.0, Source::Aug)]).unwrap();
        let mix = MixProfile::new(1, 1).unwrap();
        let est = balanced_estimate(&d, &t, &old, &aug, mix).unwrap();
        assert!((est.point_estimate - 2.0).abs() < 1e-15);
    }

    #[test]
    fn balanced_zero_numerator_and_errors() {
        let t = Policy::deterministic(2, &[0]);
        let old = Policy::deterministic(2, &[1]);
        let d = LoggedDataset::from_samples(1, 2, vec![s(0, 1, 1.0, Source::Log)]).unwrap();
        let mix = MixProfile::new(1, 0).unwrap();
        assert_eq!(balanced_estimate(&d, &t, &old, &old, mix).unwrap().point_estimate, 0.0);
        assert!(matches!(
            balanced_estimate(&d, &t, &old, &old, MixProfile::new(1, 1).unwrap()),
            Err(MvalError::CountMismatch { .. })
        ));
        let d = LoggedDataset::from_samples(1, 2, vec![s(0, 0, 1.0, Source::Log)]).unwrap();
        assert!(matches!(
            balanced_estimate(&d, &t, &old, &old, mix),
            Err(MvalError::ZeroBalancedPropensity { index: 0 })
        ));
    }

    #[test]
    fn balanced_matches_ips_with_one_source_policy() {
        let p = Policy::new(&[vec![0.3, 0.7], vec![0.5, 0.5]]).unwrap();
        let t = Policy::new(&[vec![0.9, 0.1], vec![0.2, 0.8]]).unwrap();
        let samples = vec![s(0, 0, 1.0, Source::Log), s(1, 1, 1.0, Source::Aug), s(0, 1, 0.5, Source::Aug)];
        let d = LoggedDataset::from_samples(2, 2, samples)
            .unwrap()
            .with_policy(Source::Log, p.clone())
            .unwrap()
            .with_policy(Source::Aug, p.clone())
            .unwrap();
        let ips = ips_estimate(&d, &t).unwrap().point_estimate;
        let bal = balanced_estimate(&d, &t, &p, &p, d.mix().unwrap()).unwrap().point_estimate;
        assert!((ips - bal).abs() < 1e-15);
    }

    #[test]
    fn ips_variance_one_context_instance() {
        let env = Environment::bernoulli_uniform(&[vec![1.0, 0.0]]).unwrap();
        let m = second_moment(&env);
        let t = Policy::deterministic(2, &[0]);
        let old = Policy::uniform(1, 2);
        let v = ips_variance_closed_form(&t, &old, &old, MixProfile::new(1, 0).unwrap(), &m, &env).unwrap();
        assert!((v.value - 1.0).abs() < 1e-15);
        assert!((v.expectation_term - 2.0).abs() < 1e-15);
        assert!((v.r_squared_term - 1.0).abs() < 1e-15);
        assert_eq!(v.formula, VarianceFormula::Ips);
    }

    #[test]
    fn ips_variance_support_gap_is_infinite() {
        let env = Environment::bernoulli_uniform(&[vec![0.5, 0.5]]).unwrap();
        let m = second_moment(&env);
        let t = Policy::uniform(1, 2);
        let old = Policy::deterministic(2, &[0]);
        assert!(matches!(
            ips_variance_closed_form(&t, &old, &t, MixProfile::new(3, 1).unwrap(), &m, &env),
            Err(MvalError::InfiniteVariance { context: 0, action: 1 })
        ));
    }

    #[test]
    fn balanced_variance_at_full_augmentation_is_ips_with_aug_divisor() {
        let env = Environment::bernoulli_uniform(&[vec![0.3, 0.6, 0.9]]).unwrap();
        let m = second_moment(&env);
        let t = Policy::new(&[vec![0.2, 0.3, 0.5]]).unwrap();
        let old = Policy::new(&[vec![0.6, 0.3, 0.1]]).unwrap();
        let aug = Policy::new(&[vec![0.1, 0.2, 0.7]]).unwrap();
        let mix = MixProfile::new(0, 4).unwrap();
        let bal = balanced_variance_closed_form(&t, &old, &aug, mix, &m, &env).unwrap();
        let ips = ips_variance_closed_form(&t, &old, &aug, mix, &m, &env).unwrap();
        assert!((bal.value - ips.value).abs() < 1e-15);
        assert_eq!(bal.formula, VarianceFormula::Balanced);
    }

    #[test]
    fn single_term_examples() {
        let env = Environment::bernoulli_uniform(&[vec![1.0, 0.0]]).unwrap();
        let m = second_moment(&env);
        let t = Policy::deterministic(2, &[0]);
        assert_eq!(single_term_variance(&t, &t, &m, &env).unwrap(), 0.0);
        // single-sample distribution: w·r = 2 w.p. 1/2, 0 otherwise -> var 1
        let v = single_term_variance(&Policy::uniform(1, 2), &t, &m, &env).unwrap();
        assert!((v - 1.0).abs() < 1e-15);
        // value + R² scales linearly in m
        let v3 = single_term_variance(&Policy::uniform(1, 2), &t, &m.scaled(3.0), &env).unwrap();
        assert!((v3 + 1.0 - 3.0 * (v + 1.0)).abs() < 1e-14);
    }

    #[test]
    fn empirical_variance_examples() {
        assert_eq!(empirical_variance(&[1.0, 2.0, 3.0]).unwrap(), 1.0);
        assert_eq!(empirical_variance(&[4.0; 5]).unwrap(), 0.0);
        assert_eq!(empirical_variance(&[0.0, 2.0]).unwrap(), 2.0);
        assert!(matches!(empirical_variance(&[1.0]), Err(MvalError::TooFewValues(1))));
    }

    #[test]
    fn negative_variance_is_reported_not_clamped() {
        assert!(matches!(
            VarianceReport::finish(1.0, 1.5, VarianceFormula::Ips),
            Err(MvalError::NegativeVariance { .. })
        ));
        let tiny = VarianceReport::finish(1.0, 1.0 + 1e-16, VarianceFormula::Ips).unwrap();
        assert_eq!(tiny.value, 0.0);
    }

    #[test]
    fn variance_report_json_fields() {
        let v = VarianceReport::finish(2.0, 1.0, VarianceFormula::Balanced).unwrap();
        let json = serde_json::to_string(&v).unwrap();
        assert_eq!(
            json,
            r#"{"value":1.0,"expectation_term":2.0,"r_squared_term":1.0,"formula":"balanced"}"#
        );
    }
}
