//! Randomized self-check: closed-form variances against exact enumeration,
//! and the water-filling solver against the grid oracle and its closed-form
//! special cases. Backs the `oracle-check` command.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{second_moment, Environment};
use crate::error::Result;
use crate::estimators::{balanced_variance_closed_form, ips_variance_closed_form};
use crate::oracle::{exact_estimator_moments, EstimatorKind, SamplingDesign};
use crate::policy::{mix_policies, MixProfile, Policy};
use crate::sim::stream_rng;
use crate::solver::{minvar_ips_policy, mval_grid_oracle, mval_objective, mval_solve_context, ContextWeights};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SuiteConfig {
    pub max_contexts: usize,
    pub max_actions: usize,
    /// Random instances per check.
    pub instances: usize,
    pub grid_resolution: usize,
    pub seed: u64,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        SuiteConfig {
            max_contexts: 3,
            max_actions: 3,
            instances: 200,
            grid_resolution: 400,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub cases: usize,
    pub failures: usize,
    pub max_error: f64,
    pub tolerance: f64,
}

impl CheckResult {
    fn new(name: &str, tolerance: f64) -> Self {
        CheckResult {
            name: name.to_string(),
            cases: 0,
            failures: 0,
            max_error: 0.0,
            tolerance,
        }
    }

    fn record(&mut self, error: f64) {
        self.cases += 1;
        self.max_error = self.max_error.max(error);
        if !(error <= self.tolerance) {
            self.failures += 1;
        }
    }

    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub checks: Vec<CheckResult>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(CheckResult::passed)
    }
}

/// A row on the simplex with every entry at least `floor / len`-ish.
pub fn random_row<R: Rng + ?Sized>(rng: &mut R, len: usize, floor: f64) -> Vec<f64> {
    let raw: Vec<f64> = (0..len).map(|_| floor + rng.random::<f64>()).collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / s).collect()
}

pub fn random_policy<R: Rng + ?Sized>(rng: &mut R, contexts: usize, actions: usize, floor: f64) -> Policy {
    let rows: Vec<Vec<f64>> = (0..contexts).map(|_| random_row(rng, actions, floor)).collect();
    Policy::new(&rows).expect("random rows are valid")
}

pub fn random_bernoulli_env<R: Rng + ?Sized>(rng: &mut R, contexts: usize, actions: usize) -> Environment {
    let means: Vec<Vec<f64>> = (0..contexts)
        .map(|_| (0..actions).map(|_| rng.random::<f64>()).collect())
        .collect();
    let probs = random_row(rng, contexts, 0.1);
    Environment::new(probs, &means, crate::env::RewardKind::Bernoulli).expect("valid environment")
}

/// Difference between the mixture-design and fixed-count variances of the
/// balanced estimator: `α(1 − α)(μ_log − μ_aug)² / N`, where `μ_src` is the
/// mean weighted reward of one record from that source.
pub fn stratification_gap(env: &Environment, t: &Policy, old: &Policy, aug: &Policy, mix: MixProfile) -> Result<f64> {
    let bal = mix_policies(old, aug, mix)?;
    let mu = |src: &Policy| -> f64 {
        let mut total = 0.0;
        for x in 0..env.contexts() {
            for a in 0..env.actions() {
                let b = bal.prob(x, a);
                if b > 0.0 {
                    total += env.context_probs()[x] * src.prob(x, a) * t.prob(x, a) / b * env.mean(x, a);
                }
            }
        }
        total
    };
    let a = mix.alpha();
    let d = mu(old) - mu(aug);
    Ok(a * (1.0 - a) * d * d / mix.total() as f64)
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}

fn check_estimators(cfg: &SuiteConfig, rng: &mut ChaCha8Rng, out: &mut Vec<CheckResult>) -> Result<()> {
    let mut bal_mix = CheckResult::new("balanced closed form = exact (mixture design)", 1e-10);
    let mut ips_mix = CheckResult::new("ips closed form = exact (mixture design)", 1e-10);
    let mut ips_strat = CheckResult::new("ips closed form = exact (fixed counts)", 1e-10);
    let mut gap = CheckResult::new("balanced closed form - exact = stratification gap (fixed counts)", 1e-10);
    for _ in 0..cfg.instances {
        let k = rng.random_range(1..=cfg.max_contexts.max(1));
        let d = rng.random_range(1..=cfg.max_actions.max(1));
        let total = rng.random_range(1..=3usize);
        let n_aug = rng.random_range(0..=total);
        let mix = MixProfile::new(total - n_aug, n_aug)?;
        let env = random_bernoulli_env(rng, k, d);
        let t = random_policy(rng, k, d, 0.0);
        let old = random_policy(rng, k, d, 0.05);
        let aug = random_policy(rng, k, d, 0.05);
        let m = second_moment(&env);

        let closed_bal = balanced_variance_closed_form(&t, &old, &aug, mix, &m, &env)?.value;
        let closed_ips = ips_variance_closed_form(&t, &old, &aug, mix, &m, &env)?.value;
        let ex = |kind, design| exact_estimator_moments(&env, &t, &old, &aug, mix, kind, design).map(|e| e.variance);
        let bal_m = ex(EstimatorKind::Balanced, SamplingDesign::Mixture)?;
        let bal_s = ex(EstimatorKind::Balanced, SamplingDesign::Stratified)?;
        let ips_s = ex(EstimatorKind::Ips, SamplingDesign::Stratified)?;
        bal_mix.record(rel(closed_bal, bal_m));
        ips_strat.record(rel(closed_ips, ips_s));
        gap.record(rel(closed_bal - bal_s, stratification_gap(&env, &t, &old, &aug, mix)?));
        // with a single source both designs coincide
        if mix.n_aug() == 0 || mix.n_log() == 0 {
            ips_mix.record(rel(closed_ips, ex(EstimatorKind::Ips, SamplingDesign::Mixture)?));
        }
    }
    out.extend([bal_mix, ips_strat, ips_mix, gap]);
    Ok(())
}

fn random_weights(rng: &mut ChaCha8Rng, d: usize) -> (ContextWeights, Vec<f64>) {
    let t = random_row(rng, d, 0.0);
    let m: Vec<f64> = (0..d).map(|_| rng.random_range(0.05..1.0)).collect();
    let q = random_row(rng, d, 0.0);
    (ContextWeights::from_target(0, &t, &m).expect("valid weights"), q)
}

fn check_solver(cfg: &SuiteConfig, rng: &mut ChaCha8Rng, out: &mut Vec<CheckResult>) -> Result<()> {
    let res = cfg.grid_resolution;
    let mut obj = CheckResult::new("solver objective <= grid oracle objective", 1e-9);
    let mut dist = CheckResult::new("solver within 2/resolution of grid oracle", 2.0 / res as f64);
    let mut alpha_one = CheckResult::new("alpha = 1 solution = minimum-variance IPS policy", 1e-9);
    let mut det = CheckResult::new("deterministic target is returned exactly", 0.0);
    let max_a = cfg.max_actions.clamp(1, crate::solver::GRID_MAX_ACTIONS);
    for _ in 0..cfg.instances {
        let d = rng.random_range(1..=max_a);
        let (w, q) = random_weights(rng, d);
        let alpha = rng.random_range(0.01..1.0);
        let (pi, _) = mval_solve_context(&w, &q, alpha)?;
        let grid = mval_grid_oracle(&w, &q, alpha, res)?;
        let f_pi = mval_objective(&w.c, &q, alpha, &pi);
        let f_grid = mval_objective(&w.c, &q, alpha, &grid);
        obj.record((f_pi - f_grid).max(0.0) / f_grid.abs().max(1.0));
        let linf = pi.iter().zip(&grid).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        // the grid optimum is only resolved to one grid step
        dist.record(linf);

        let t = random_row(rng, d, 0.0);
        let m: Vec<f64> = (0..d).map(|_| rng.random_range(0.05..1.0)).collect();
        let w1 = ContextWeights::from_target(0, &t, &m)?;
        let (p1, _) = mval_solve_context(&w1, &q, 1.0)?;
        let closed = minvar_ips_policy(&t, &m)?;
        alpha_one.record(p1.iter().zip(&closed).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));

        let star = rng.random_range(0..d);
        let mut onehot = vec![0.0; d];
        onehot[star] = 1.0;
        let wd = ContextWeights::from_target(0, &onehot, &m)?;
        let (pd, _) = mval_solve_context(&wd, &q, alpha)?;
        det.record(pd.iter().zip(&onehot).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
    }
    out.extend([obj, dist, alpha_one, det]);
    Ok(())
}

pub fn run_suite(cfg: &SuiteConfig) -> Result<SuiteReport> {
    let mut rng = stream_rng(&[cfg.seed, 0x4F52_4143]);
    let mut checks = Vec::new();
    check_estimators(cfg, &mut rng, &mut checks)?;
    check_solver(cfg, &mut rng, &mut checks)?;
    Ok(SuiteReport { checks })
}
