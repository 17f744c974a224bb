//! Synthetic experiments: scored logging policies, shifted targets, logged
//! data sampling, rejection replay and seeded Monte-Carlo variance trials.
//!
//! Every random draw comes from a ChaCha stream whose seed is derived from a
//! tuple of integers with [`stream_seed`], so results never depend on the
//! order in which parallel work finishes.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{LoggedDataset, LoggedSample, Source};
use crate::env::{Environment, RewardKind, SecondMomentModel};
use crate::error::{MvalError, Result};
use crate::estimators::{empirical_variance, BalancedWeights};
use crate::learner::{self, FeatureContext, FitConfig, ITEM_DIM, USER_DIM};
use crate::oracle::SamplingDesign;
use crate::policy::{mix_policies, MixProfile, Policy};
use crate::solver::mval_policy;

/// Bootstrap resamples used for the standard error of a trial variance.
pub const BOOTSTRAP_RESAMPLES: usize = 200;

const BOOTSTRAP_STREAM: u64 = u64::MAX;
const LOG_STREAM: u64 = 0;
const AUG_STREAM: u64 = 1;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Hashes a key tuple such as `(seed, grid, repeat, trial)` into one seed.
pub fn stream_seed(parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(0x6D56_414C_u64, |h, &p| splitmix64(splitmix64(h) ^ p))
}

pub fn stream_rng(parts: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(stream_seed(parts))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub contexts: usize,
    pub actions: usize,
    /// Bernoulli means are drawn uniformly from `[0, max_mean]`.
    pub max_mean: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            contexts: 100,
            actions: 19,
            max_mean: 0.1,
            seed: 0,
        }
    }
}

/// An environment together with the user/item features used to score its
/// actions.
#[derive(Debug, Clone)]
pub struct SyntheticWorld {
    pub env: Environment,
    pub features: Vec<FeatureContext>,
}

/// Equally likely contexts, each with its own user vector and pool of item
/// vectors (entries uniform on `[0, 1)`).
pub fn synthetic_world(cfg: &SyntheticConfig) -> Result<SyntheticWorld> {
    if cfg.contexts == 0 || cfg.actions == 0 {
        return Err(MvalError::InvalidConfig("contexts and actions must be positive".into()));
    }
    if !(0.0..=1.0).contains(&cfg.max_mean) {
        return Err(MvalError::InvalidConfig(format!("max_mean {} outside [0, 1]", cfg.max_mean)));
    }
    let mut rng = stream_rng(&[cfg.seed, 0x454E_56]);
    let mut features = Vec::with_capacity(cfg.contexts);
    let mut means = Vec::with_capacity(cfg.contexts);
    for _ in 0..cfg.contexts {
        let u: Vec<f64> = (0..USER_DIM).map(|_| rng.random()).collect();
        let items: Vec<Vec<f64>> = (0..cfg.actions)
            .map(|_| (0..ITEM_DIM).map(|_| rng.random()).collect())
            .collect();
        features.push(FeatureContext::from_user_items(&u, &items)?);
        means.push((0..cfg.actions).map(|_| rng.random::<f64>() * cfg.max_mean).collect::<Vec<_>>());
    }
    let probs = vec![1.0 / cfg.contexts as f64; cfg.contexts];
    let env = Environment::new(probs, &means, RewardKind::Bernoulli)?;
    Ok(SyntheticWorld { env, features })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicyGenConfig {
    /// Determinism factor: rank `k` gets weight `(1 + eta)^(-k)`.
    pub eta: f64,
    /// Fraction of the top action's mass moved by [`derive_target`].
    pub delta: f64,
    /// 1-based rank receiving the moved mass.
    pub target_rank: usize,
    pub seed: u64,
    pub weight_mean: f64,
    pub weight_std: f64,
}

impl Default for PolicyGenConfig {
    fn default() -> Self {
        PolicyGenConfig {
            eta: 0.0,
            delta: 0.0,
            target_rank: 2,
            seed: 0,
            weight_mean: 0.0,
            weight_std: 1.0,
        }
    }
}

impl PolicyGenConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return Err(MvalError::InvalidConfig(format!("eta must be finite and >= 0, got {}", self.eta)));
        }
        if !(0.0..=1.0).contains(&self.delta) {
            return Err(MvalError::InvalidConfig(format!("delta must lie in [0, 1], got {}", self.delta)));
        }
        if self.target_rank < 2 {
            return Err(MvalError::RankOutOfRange {
                rank: self.target_rank,
                actions: 0,
            });
        }
        if !(self.weight_std >= 0.0 && self.weight_std.is_finite() && self.weight_mean.is_finite()) {
            return Err(MvalError::InvalidConfig("weight distribution parameters must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct ScoredPolicy {
    pub policy: Policy,
    /// Actions of each context, best first.
    pub ranking: Vec<Vec<usize>>,
}

/// Actions sorted by descending key, ties broken by action id.
fn rank_desc(keys: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..keys.len()).collect();
    idx.sort_by(|&i, &j| keys[j].total_cmp(&keys[i]).then(i.cmp(&j)));
    idx
}

/// Rank-based policy from a random linear scorer over the action features.
pub fn generate_scored_policy(features: &[FeatureContext], cfg: &PolicyGenConfig) -> Result<ScoredPolicy> {
    cfg.validate()?;
    let first = features.first().ok_or(MvalError::InvalidConfig("no contexts".into()))?;
    let (d, dim) = (first.actions(), first.dim());
    let normal = Normal::new(cfg.weight_mean, cfg.weight_std)
        .map_err(|e| MvalError::InvalidConfig(e.to_string()))?;
    let mut rng = stream_rng(&[cfg.seed, 0x504F_4C]);
    let v: Vec<f64> = (0..dim).map(|_| normal.sample(&mut rng)).collect();

    let base = 1.0 + cfg.eta;
    let weights: Vec<f64> = (0..d).map(|k| base.powi(-(k as i32))).collect();
    let total: f64 = weights.iter().sum();

    let mut table = Vec::with_capacity(features.len() * d);
    let mut ranking = Vec::with_capacity(features.len());
    for ctx in features {
        if ctx.actions() != d || ctx.dim() != dim {
            return Err(MvalError::DimMismatch {
                expected: d,
                found: ctx.actions(),
            });
        }
        let scores: Vec<f64> = ctx
            .features
            .iter()
            .map(|phi| phi.iter().zip(&v).map(|(a, b)| a * b).sum())
            .collect();
        let order = rank_desc(&scores);
        let mut row = vec![0.0; d];
        for (k, &a) in order.iter().enumerate() {
            row[a] = weights[k] / total;
        }
        table.extend(row);
        ranking.push(order);
    }
    Ok(ScoredPolicy {
        policy: Policy::from_flat(features.len(), d, table),
        ranking,
    })
}

/// Moves `delta` of the top action's mass to the action at `target_rank`
/// (1-based, ranked by `p_log` with ties broken by action id).
pub fn derive_target(p_log: &Policy, delta: f64, target_rank: usize) -> Result<Policy> {
    if !(0.0..=1.0).contains(&delta) {
        return Err(MvalError::InvalidConfig(format!("delta must lie in [0, 1], got {delta}")));
    }
    let d = p_log.actions();
    if target_rank < 2 || target_rank > d {
        return Err(MvalError::RankOutOfRange {
            rank: target_rank,
            actions: d,
        });
    }
    let mut table = p_log.as_flat().to_vec();
    for (x, row) in table.chunks_exact_mut(d).enumerate() {
        let order = rank_desc(p_log.row(x));
        let (top, dest) = (order[0], order[target_rank - 1]);
        let moved = delta * row[top];
        row[top] -= moved;
        row[dest] += moved;
    }
    Ok(Policy::from_flat(p_log.contexts(), d, table))
}

/// Alias-free categorical sampler over contexts and per-context actions.
struct Sampler {
    contexts: WeightedIndex<f64>,
    rows: Vec<WeightedIndex<f64>>,
}

impl Sampler {
    fn new(env: &Environment, p: &Policy) -> Result<Self> {
        env.check_policy(p)?;
        let bad = |e: rand::distr::weighted::Error| MvalError::InvalidConfig(e.to_string());
        let contexts = WeightedIndex::new(env.context_probs().iter().copied()).map_err(bad)?;
        let rows = p
            .rows()
            .map(|row| WeightedIndex::new(row.iter().copied()).map_err(bad))
            .collect::<Result<Vec<_>>>()?;
        Ok(Sampler { contexts, rows })
    }

    fn draw<R: Rng + ?Sized>(&self, env: &Environment, rng: &mut R) -> (usize, usize, f64) {
        let x = self.contexts.sample(rng);
        let a = self.rows[x].sample(rng);
        (x, a, env.sample_reward(x, a, rng))
    }
}

fn draw_samples<R: Rng + ?Sized>(
    env: &Environment,
    sampler: &Sampler,
    n: usize,
    source: Source,
    rng: &mut R,
) -> Vec<LoggedSample> {
    (0..n)
        .map(|_| {
            let (context_id, action_id, reward) = sampler.draw(env, rng);
            LoggedSample {
                context_id,
                action_id,
                reward,
                source,
            }
        })
        .collect()
}

/// `n` i.i.d. records from `p`, tagged `source`, with `p` attached.
pub fn sample_logged_data(env: &Environment, p: &Policy, n: usize, seed: u64, source: Source) -> Result<LoggedDataset> {
    let sampler = Sampler::new(env, p)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = draw_samples(env, &sampler, n, source, &mut rng);
    let (k, d) = env.shape();
    LoggedDataset::from_samples(k, d, samples)?.with_policy(source, p.clone())
}

/// Replays `p` on uniformly logged data: each record is kept when a fresh
/// draw from `p` matches its action. Kept records are relabelled as log
/// records of `p`.
pub fn rejection_sample(uniform_log: &LoggedDataset, p: &Policy, seed: u64) -> Result<LoggedDataset> {
    let (k, d) = uniform_log.shape();
    p.check_shape((k, d))?;
    for source in [Source::Log, Source::Aug] {
        if uniform_log.count(source) == 0 {
            continue;
        }
        let attached = uniform_log.policy(source).ok_or(MvalError::MissingSourcePolicy(match source {
            Source::Log => "log",
            Source::Aug => "aug",
        }))?;
        if !attached.is_uniform(1e-12) {
            return Err(MvalError::NotUniformSource);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut kept = Vec::new();
    for s in uniform_log.samples() {
        // inverse-CDF draw of a' ~ p(.|x)
        let u: f64 = rng.random();
        let row = p.row(s.context_id);
        let mut acc = 0.0;
        let mut draw = d - 1;
        for (a, &q) in row.iter().enumerate() {
            acc += q;
            if u < acc {
                draw = a;
                break;
            }
        }
        if draw == s.action_id {
            kept.push(LoggedSample {
                source: Source::Log,
                ..*s
            });
        }
    }
    LoggedDataset::from_samples(k, d, kept)?.with_policy(Source::Log, p.clone())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugStrategy {
    /// Per-context exact variance minimizer.
    Mval,
    /// Linear-softmax fit of the variance objective on action features.
    Precomputed,
    /// Augment with the target itself.
    Target,
    Uniform,
    /// Cycle through several targets (multi-policy evaluation only).
    RoundRobin,
}

impl AugStrategy {
    pub fn name(self) -> &'static str {
        match self {
            AugStrategy::Mval => "mval",
            AugStrategy::Precomputed => "precomputed",
            AugStrategy::Target => "target",
            AugStrategy::Uniform => "uniform",
            AugStrategy::RoundRobin => "round_robin",
        }
    }
}

/// Extra inputs some strategies need.
#[derive(Debug, Clone, Copy, Default)]
pub struct StrategyInputs<'a> {
    pub m: Option<&'a SecondMomentModel>,
    pub features: Option<&'a [FeatureContext]>,
    pub fit: FitConfig,
}

/// The augmentation policy a single-target strategy would deploy.
pub fn augmentation_policy(
    strategy: AugStrategy,
    p_log: &Policy,
    p_target: &Policy,
    mix: MixProfile,
    inputs: &StrategyInputs,
) -> Result<Policy> {
    let (k, d) = p_log.shape();
    let need_m = || {
        inputs
            .m
            .ok_or_else(|| MvalError::InvalidConfig(format!("strategy {} needs a second-moment model", strategy.name())))
    };
    match strategy {
        AugStrategy::Target | AugStrategy::RoundRobin => Ok(p_target.clone()),
        AugStrategy::Uniform => Ok(Policy::uniform(k, d)),
        AugStrategy::Mval => mval_policy(p_target, p_log, need_m()?, mix.alpha()).map(|(p, _)| p),
        AugStrategy::Precomputed => {
            let features = inputs
                .features
                .ok_or_else(|| MvalError::InvalidConfig("strategy precomputed needs action features".into()))?;
            let params = learner::precomputed_mval_fit(features, p_log, p_target, need_m()?, mix.alpha(), inputs.fit)?;
            learner::policy_from_params(&params, features)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialConfig {
    pub n_log: usize,
    pub n_aug: usize,
    pub trials: usize,
    pub seed: u64,
    /// `Stratified` draws exactly `n_log` and `n_aug` records per trial;
    /// `Mixture` draws every record from the balanced mixture.
    pub design: SamplingDesign,
}

impl TrialConfig {
    pub fn new(n_log: usize, n_aug: usize, trials: usize, seed: u64) -> Self {
        TrialConfig {
            n_log,
            n_aug,
            trials,
            seed,
            design: SamplingDesign::Stratified,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialReport {
    pub method: String,
    pub estimates: Vec<f64>,
    pub empirical_variance: f64,
    pub mean: f64,
    /// Bootstrap standard error of `empirical_variance`.
    pub stderr: f64,
}

impl TrialReport {
    fn from_estimates(method: &str, estimates: Vec<f64>, seed: u64) -> Result<Self> {
        let empirical_variance = empirical_variance(&estimates)?;
        let mean = estimates.iter().sum::<f64>() / estimates.len() as f64;
        let stderr = bootstrap_variance_stderr(&estimates, seed)?;
        Ok(TrialReport {
            method: method.to_string(),
            estimates,
            empirical_variance,
            mean,
            stderr,
        })
    }
}

/// Standard deviation of the sample variance over bootstrap resamples.
pub fn bootstrap_variance_stderr(values: &[f64], seed: u64) -> Result<f64> {
    let n = values.len();
    if n < 2 {
        return Err(MvalError::TooFewValues(n));
    }
    let mut rng = stream_rng(&[seed, BOOTSTRAP_STREAM]);
    let mut buf = vec![0.0; n];
    let vars = (0..BOOTSTRAP_RESAMPLES)
        .map(|_| {
            for slot in buf.iter_mut() {
                *slot = values[rng.random_range(0..n)];
            }
            empirical_variance(&buf)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(empirical_variance(&vars)?.sqrt())
}

/// Augmentation policies and how many records each contributes per trial.
#[derive(Debug, Clone)]
pub struct AugPlan {
    pub components: Vec<(Policy, usize)>,
}

impl AugPlan {
    pub fn single(p: Policy, n_aug: usize) -> Self {
        AugPlan {
            components: vec![(p, n_aug)],
        }
    }

    /// `n_aug` split as evenly as possible across `policies`, earlier
    /// policies taking the remainder.
    pub fn round_robin(policies: &[Policy], n_aug: usize) -> Result<Self> {
        if policies.is_empty() {
            return Err(MvalError::EmptyClass);
        }
        let j = policies.len();
        Ok(AugPlan {
            components: policies
                .iter()
                .enumerate()
                .map(|(i, p)| (p.clone(), n_aug / j + usize::from(i < n_aug % j)))
                .collect(),
        })
    }

    pub fn total(&self) -> usize {
        self.components.iter().map(|(_, n)| n).sum()
    }

    /// Count-weighted average of the components.
    pub fn pooled(&self) -> Result<Policy> {
        let (first, _) = self.components.first().ok_or(MvalError::EmptyClass)?;
        let total = self.total();
        if total == 0 {
            return Ok(first.clone());
        }
        let mut table = vec![0.0; first.as_flat().len()];
        for (p, n) in &self.components {
            first.check_shape(p.shape())?;
            let w = *n as f64 / total as f64;
            for (t, v) in table.iter_mut().zip(p.as_flat()) {
                *t += w * v;
            }
        }
        Ok(Policy::from_flat(first.contexts(), first.actions(), table))
    }
}

/// Monte-Carlo trials of the balanced estimator for several targets that
/// share the same logged and augmented records. One report per target.
pub fn run_trials_multi(
    env: &Environment,
    p_log: &Policy,
    targets: &[Policy],
    plan: &AugPlan,
    method: &str,
    cfg: &TrialConfig,
) -> Result<Vec<TrialReport>> {
    if cfg.n_log + cfg.n_aug == 0 {
        return Err(MvalError::EmptyMix);
    }
    if plan.total() != cfg.n_aug {
        return Err(MvalError::InvalidConfig(format!(
            "augmentation plan draws {} records, config asks for {}",
            plan.total(),
            cfg.n_aug
        )));
    }
    let mix = MixProfile::new(cfg.n_log, cfg.n_aug)?;
    let pooled = plan.pooled()?;
    let balanced = mix_policies(p_log, &pooled, mix)?;
    let weights = targets
        .iter()
        .map(|t| BalancedWeights::new(t, &balanced))
        .collect::<Result<Vec<_>>>()?;

    let log_sampler = Sampler::new(env, p_log)?;
    let aug_samplers = plan
        .components
        .iter()
        .map(|(p, n)| Ok((Sampler::new(env, p)?, *n)))
        .collect::<Result<Vec<_>>>()?;
    let bal_sampler = Sampler::new(env, &balanced)?;

    let n_total = mix.total() as f64;
    let per_trial = (0..cfg.trials as u64)
        .into_par_iter()
        .map(|t| {
            let records = match cfg.design {
                SamplingDesign::Stratified => {
                    let mut log_rng = stream_rng(&[cfg.seed, t, LOG_STREAM]);
                    let mut aug_rng = stream_rng(&[cfg.seed, t, AUG_STREAM]);
                    let mut r = draw_samples(env, &log_sampler, cfg.n_log, Source::Log, &mut log_rng);
                    for (sampler, n) in &aug_samplers {
                        r.extend(draw_samples(env, sampler, *n, Source::Aug, &mut aug_rng));
                    }
                    r
                }
                SamplingDesign::Mixture => {
                    let mut rng = stream_rng(&[cfg.seed, t, LOG_STREAM]);
                    draw_samples(env, &bal_sampler, mix.total(), Source::Log, &mut rng)
                }
            };
            weights
                .iter()
                .map(|w| {
                    let mut sum = 0.0;
                    for (index, s) in records.iter().enumerate() {
                        let wt = w
                            .get(s.context_id, s.action_id)
                            .ok_or(MvalError::ZeroBalancedPropensity { index })?;
                        sum += wt * s.reward;
                    }
                    Ok(sum / n_total)
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?;

    (0..targets.len())
        .map(|j| {
            let est: Vec<f64> = per_trial.iter().map(|row| row[j]).collect();
            TrialReport::from_estimates(method, est, stream_seed(&[cfg.seed, j as u64]))
        })
        .collect()
}

/// Trials of the balanced estimator with a fixed augmentation policy.
pub fn run_trials_with(
    env: &Environment,
    p_log: &Policy,
    p_target: &Policy,
    p_aug: &Policy,
    method: &str,
    cfg: &TrialConfig,
) -> Result<TrialReport> {
    let plan = AugPlan::single(p_aug.clone(), cfg.n_aug);
    let mut reports = run_trials_multi(env, p_log, std::slice::from_ref(p_target), &plan, method, cfg)?;
    Ok(reports.remove(0))
}

/// Resolves `strategy` into an augmentation policy and runs the trials.
pub fn run_variance_trials(
    env: &Environment,
    p_log: &Policy,
    p_target: &Policy,
    strategy: AugStrategy,
    inputs: &StrategyInputs,
    cfg: &TrialConfig,
) -> Result<TrialReport> {
    if strategy == AugStrategy::RoundRobin {
        return Err(MvalError::InvalidConfig("round_robin needs several targets".into()));
    }
    let mix = MixProfile::new(cfg.n_log, cfg.n_aug)?;
    let p_aug = augmentation_policy(strategy, p_log, p_target, mix, inputs)?;
    run_trials_with(env, p_log, p_target, &p_aug, strategy.name(), cfg)
}
