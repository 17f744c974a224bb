//! Exact estimator moments by enumerating the outcome distribution of a
//! single record.
//!
//! This is an independent check on the closed-form variances: nothing here
//! uses the `π_t² m / π` algebra, only the raw outcome probabilities
//! `Pr(x)·π_src(a|x)·Pr(r | x, a)` and the estimator's per-record value.
//!
//! Two sampling designs are supported:
//!
//! * [`SamplingDesign::Stratified`]: exactly `n_log` records from the log
//!   policy and `n_aug` from the augmentation policy (how logs are gathered
//!   in practice and in the simulator).
//! * [`SamplingDesign::Mixture`]: each of the `N` records independently picks
//!   the augmentation source with probability `α`.
//!
//! Under the mixture design both closed forms are exact. Under the stratified
//! design the IPS form is exact while the balanced form overstates the
//! variance by `α(1 − α)(μ_log − μ_aug)² / N`, where `μ_src` is the mean
//! per-record value under each source.

use serde::{Deserialize, Serialize};

use crate::env::{true_utility, Environment, RewardKind};
use crate::error::{MvalError, Result};
use crate::policy::{mix_policies, MixProfile, Policy};

pub const DEFAULT_BUDGET: u128 = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    Ips,
    Balanced,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingDesign {
    Stratified,
    Mixture,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExactMoments {
    pub mean: f64,
    pub variance: f64,
    pub true_utility: f64,
    /// The mean misses the true utility (mixture lacks target support).
    pub biased: bool,
}

/// One possible record: its probability and the value it adds to the
/// estimator sum before the `1/N` scaling.
#[derive(Debug, Clone, Copy)]
struct Outcome {
    prob: f64,
    value: f64,
}

fn reward_support(env: &Environment, x: usize, a: usize) -> Result<Vec<(f64, f64)>> {
    let mean = env.mean(x, a);
    match env.kind() {
        RewardKind::Bernoulli => Ok(vec![(1.0 - mean, 0.0), (mean, 1.0)]),
        RewardKind::FixedGaussian { sigma } if sigma == 0.0 => Ok(vec![(1.0, mean)]),
        RewardKind::FixedGaussian { .. } => Err(MvalError::NotEnumerable),
    }
}

/// Outcome list of one record drawn from `source`, valued with `weight`.
fn outcomes<F>(env: &Environment, source: &Policy, weight: F) -> Result<Vec<Outcome>>
where
    F: Fn(usize, usize) -> f64,
{
    let mut out = Vec::new();
    for (x, &px) in env.context_probs().iter().enumerate() {
        for a in 0..env.actions() {
            let pa = px * source.prob(x, a);
            if pa == 0.0 {
                continue;
            }
            let w = weight(x, a);
            for (pr, r) in reward_support(env, x, a)? {
                if pr > 0.0 {
                    out.push(Outcome {
                        prob: pa * pr,
                        value: w * r,
                    });
                }
            }
        }
    }
    Ok(out)
}

fn moments(outcomes: &[Outcome]) -> (f64, f64) {
    let mean: f64 = outcomes.iter().map(|o| o.prob * o.value).sum();
    let var: f64 = outcomes.iter().map(|o| o.prob * (o.value - mean).powi(2)).sum();
    (mean, var)
}

/// Per-source single-record outcome lists `(log, aug)`.
fn source_outcomes(
    env: &Environment,
    p_target: &Policy,
    p_old: &Policy,
    p_aug: &Policy,
    mix: MixProfile,
    estimator: EstimatorKind,
    budget: u128,
) -> Result<(Vec<Outcome>, Vec<Outcome>)> {
    for p in [p_target, p_old, p_aug] {
        env.check_policy(p)?;
    }
    let per_record = (env.contexts() * env.actions() * 2) as u128;
    if per_record > budget {
        return Err(MvalError::TooLarge {
            needed: per_record,
            budget,
        });
    }
    match estimator {
        EstimatorKind::Ips => {
            Ok((
                outcomes(env, p_old, |x, a| p_target.prob(x, a) / p_old.prob(x, a))?,
                outcomes(env, p_aug, |x, a| p_target.prob(x, a) / p_aug.prob(x, a))?,
            ))
        }
        EstimatorKind::Balanced => {
            let bal = mix_policies(p_old, p_aug, mix)?;
            let w = |x: usize, a: usize| {
                let b = bal.prob(x, a);
                if b > 0.0 {
                    p_target.prob(x, a) / b
                } else {
                    0.0
                }
            };
            Ok((outcomes(env, p_old, w)?, outcomes(env, p_aug, w)?))
        }
    }
}

fn finish(mean: f64, variance: f64, env: &Environment, p_target: &Policy) -> Result<ExactMoments> {
    let truth = true_utility(p_target, env)?;
    Ok(ExactMoments {
        mean,
        variance,
        true_utility: truth,
        biased: (mean - truth).abs() > 1e-12 * truth.abs().max(1.0),
    })
}

/// Exact mean and variance of the IPS or balanced estimator, combining
/// single-record moments through independence of the records.
#[allow(clippy::too_many_arguments)]
pub fn exact_estimator_moments(
    env: &Environment,
    p_target: &Policy,
    p_old: &Policy,
    p_aug: &Policy,
    mix: MixProfile,
    estimator: EstimatorKind,
    design: SamplingDesign,
) -> Result<ExactMoments> {
    let (log, aug) = source_outcomes(env, p_target, p_old, p_aug, mix, estimator, DEFAULT_BUDGET)?;
    let n = mix.total() as f64;
    let (mean, variance) = match design {
        SamplingDesign::Stratified => {
            let (nl, na) = (mix.n_log() as f64, mix.n_aug() as f64);
            let (ml, vl) = if mix.n_log() > 0 { moments(&log) } else { (0.0, 0.0) };
            let (ma, va) = if mix.n_aug() > 0 { moments(&aug) } else { (0.0, 0.0) };
            ((nl * ml + na * ma) / n, (nl * vl + na * va) / (n * n))
        }
        SamplingDesign::Mixture => {
            let mixed = mixture_outcomes(&log, &aug, mix);
            let (m, v) = moments(&mixed);
            (m, v / n)
        }
    };
    finish(mean, variance, env, p_target)
}

fn mixture_outcomes(log: &[Outcome], aug: &[Outcome], mix: MixProfile) -> Vec<Outcome> {
    let scale = |o: &Outcome, s: f64| Outcome {
        prob: o.prob * s,
        value: o.value,
    };
    let mut out: Vec<Outcome> = Vec::with_capacity(log.len() + aug.len());
    if mix.n_log() > 0 {
        out.extend(log.iter().map(|o| scale(o, mix.log_share())));
    }
    if mix.n_aug() > 0 {
        out.extend(aug.iter().map(|o| scale(o, mix.alpha())));
    }
    out
}

/// Brute-force version of [`exact_estimator_moments`]: enumerates every
/// joint outcome of all `N` records, without using independence. Only
/// feasible for a handful of records; kept as a check on the shortcut.
#[allow(clippy::too_many_arguments)]
pub fn exact_moments_joint(
    env: &Environment,
    p_target: &Policy,
    p_old: &Policy,
    p_aug: &Policy,
    mix: MixProfile,
    estimator: EstimatorKind,
    design: SamplingDesign,
    budget: u128,
) -> Result<ExactMoments> {
    let (log, aug) = source_outcomes(env, p_target, p_old, p_aug, mix, estimator, budget)?;
    let per_record: Vec<Vec<Outcome>> = match design {
        SamplingDesign::Stratified => std::iter::repeat_n(log.clone(), mix.n_log())
            .chain(std::iter::repeat_n(aug.clone(), mix.n_aug()))
            .collect(),
        SamplingDesign::Mixture => vec![mixture_outcomes(&log, &aug, mix); mix.total()],
    };
    let needed = per_record
        .iter()
        .try_fold(1u128, |acc, o| acc.checked_mul(o.len() as u128))
        .unwrap_or(u128::MAX);
    if needed > budget {
        return Err(MvalError::TooLarge { needed, budget });
    }
    let n = mix.total() as f64;
    let (mut s1, mut s2) = (0.0, 0.0);
    let mut idx = vec![0usize; per_record.len()];
    'outer: loop {
        let (mut p, mut v) = (1.0, 0.0);
        for (k, &i) in idx.iter().enumerate() {
            p *= per_record[k][i].prob;
            v += per_record[k][i].value;
        }
        let est = v / n;
        s1 += p * est;
        s2 += p * est * est;
        for k in (0..idx.len()).rev() {
            idx[k] += 1;
            if idx[k] < per_record[k].len() {
                continue 'outer;
            }
            idx[k] = 0;
        }
        break;
    }
    finish(s1, s2 - s1 * s1, env, p_target)
}
