//! Linear-softmax policies over per-action feature vectors, fitted either to
//! the augmentation-variance objective (a policy that can be executed
//! without solving anything per context) or to the balanced value estimate.
//!
//! Both objectives are smooth functions of the action probabilities, so
//! they share one chain rule: for a context with probabilities `π`, features
//! `φ_b` and `s_b = ∂L/∂π_b`,
//! `∂L/∂w = Σ_b π_b (s_b − Σ_a π_a s_a) φ_b`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::LoggedDataset;
use crate::env::SecondMomentModel;
use crate::error::{MvalError, Result};
use crate::policy::{mix_policies, MixProfile, Policy};
use crate::policyclass::PiMaxEnvelope;

/// Logits are clamped to this magnitude before the softmax.
pub const LOGIT_CLAMP: f64 = 50.0;

pub const USER_DIM: usize = 5;
pub const ITEM_DIM: usize = 5;
pub const CROSS_DIM: usize = USER_DIM * ITEM_DIM;

const ARMIJO_C: f64 = 1e-4;
const MAX_HALVINGS: usize = 60;

/// All pairwise products `u_i · item_j`, row-major in `i`.
pub fn featurize(u: &[f64], item: &[f64]) -> Vec<f64> {
    u.iter().flat_map(|ui| item.iter().map(move |ij| ui * ij)).collect()
}

/// Feature vectors of every action available in one context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureContext {
    pub features: Vec<Vec<f64>>,
}

impl FeatureContext {
    pub fn new(features: Vec<Vec<f64>>) -> Result<Self> {
        let dim = features.first().map_or(0, Vec::len);
        for f in &features {
            if f.len() != dim {
                return Err(MvalError::DimMismatch {
                    expected: dim,
                    found: f.len(),
                });
            }
        }
        Ok(FeatureContext { features })
    }

    /// User/item cross features for each item.
    pub fn from_user_items(u: &[f64], items: &[Vec<f64>]) -> Result<Self> {
        FeatureContext::new(items.iter().map(|item| featurize(u, item)).collect())
    }

    pub fn actions(&self) -> usize {
        self.features.len()
    }

    pub fn dim(&self) -> usize {
        self.features.first().map_or(0, Vec::len)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnerParams {
    pub w: Vec<f64>,
    /// Objective value after each accepted step, starting with the initial
    /// point.
    #[serde(skip)]
    pub training_log: Vec<f64>,
}

impl LearnerParams {
    pub fn zeros(dim: usize) -> Self {
        LearnerParams {
            w: vec![0.0; dim],
            training_log: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub steps: usize,
    /// First trial step of the line search.
    pub step_size: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            steps: 500,
            step_size: 1.0,
        }
    }
}

/// Anything that supplies the per-cell numerator weights: a single target
/// policy or a class envelope.
pub trait TargetTable {
    fn shape(&self) -> (usize, usize);
    fn cell(&self, context: usize, action: usize) -> f64;
}

impl TargetTable for Policy {
    fn shape(&self) -> (usize, usize) {
        Policy::shape(self)
    }
    fn cell(&self, context: usize, action: usize) -> f64 {
        self.prob(context, action)
    }
}

impl TargetTable for PiMaxEnvelope {
    fn shape(&self) -> (usize, usize) {
        PiMaxEnvelope::shape(self)
    }
    fn cell(&self, context: usize, action: usize) -> f64 {
        self.get(context, action)
    }
}

fn check_contexts(w: &[f64], contexts: &[FeatureContext], actions: Option<usize>) -> Result<usize> {
    let first = contexts.first().ok_or(MvalError::DimMismatch { expected: 1, found: 0 })?;
    let d = actions.unwrap_or(first.actions());
    for ctx in contexts {
        if ctx.actions() != d {
            return Err(MvalError::DimMismatch {
                expected: d,
                found: ctx.actions(),
            });
        }
        if ctx.dim() != w.len() {
            return Err(MvalError::DimMismatch {
                expected: w.len(),
                found: ctx.dim(),
            });
        }
    }
    Ok(d)
}

/// Softmax row and a mask of logits that were not clamped.
fn softmax(w: &[f64], ctx: &FeatureContext) -> (Vec<f64>, Vec<bool>) {
    let raw: Vec<f64> = ctx
        .features
        .iter()
        .map(|phi| phi.iter().zip(w).map(|(a, b)| a * b).sum::<f64>())
        .collect();
    let free: Vec<bool> = raw.iter().map(|z| z.abs() < LOGIT_CLAMP).collect();
    let z: Vec<f64> = raw.iter().map(|z| z.clamp(-LOGIT_CLAMP, LOGIT_CLAMP)).collect();
    let zmax = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - zmax).exp()).collect();
    let total: f64 = e.iter().sum();
    (e.into_iter().map(|v| v / total).collect(), free)
}

/// `Σ_b π_b (s_b − Σ_a π_a s_a) φ_b`, accumulated into `grad`.
fn chain_rule(pi: &[f64], free: &[bool], s: &[f64], ctx: &FeatureContext, grad: &mut [f64]) {
    let mean: f64 = pi.iter().zip(s).map(|(p, v)| p * v).sum();
    for b in 0..pi.len() {
        if !free[b] {
            continue;
        }
        let coef = pi[b] * (s[b] - mean);
        if coef == 0.0 {
            continue;
        }
        for (g, f) in grad.iter_mut().zip(&ctx.features[b]) {
            *g += coef * f;
        }
    }
}

pub fn policy_from_params(params: &LearnerParams, contexts: &[FeatureContext]) -> Result<Policy> {
    let d = check_contexts(&params.w, contexts, None)?;
    let mut table = Vec::with_capacity(contexts.len() * d);
    for ctx in contexts {
        table.extend(softmax(&params.w, ctx).0);
    }
    Ok(Policy::from_flat(contexts.len(), d, table))
}

/// Sums per-context `(value, gradient)` pairs in context order so the result
/// does not depend on scheduling.
fn reduce(parts: Vec<(f64, Vec<f64>)>, dim: usize) -> (f64, Vec<f64>) {
    let mut value = 0.0;
    let mut grad = vec![0.0; dim];
    for (v, g) in parts {
        value += v;
        for (a, b) in grad.iter_mut().zip(g) {
            *a += b;
        }
    }
    (value, grad)
}

/// `Σ_x Σ_a c(x, a) / ((1 − α) π_old(a|x) + α π_w(a|x))` with
/// `c = target² · m`, and its exact gradient in `w`.
pub fn op2_objective<T: TargetTable + Sync>(
    params: &LearnerParams,
    contexts: &[FeatureContext],
    p_old: &Policy,
    target: &T,
    m: &SecondMomentModel,
    alpha: f64,
) -> Result<(f64, Vec<f64>)> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(if alpha == 0.0 { MvalError::ZeroAlpha } else { MvalError::InvalidAlpha(alpha) });
    }
    let d = check_contexts(&params.w, contexts, Some(p_old.actions()))?;
    let shape = (contexts.len(), d);
    p_old.check_shape(shape)?;
    if target.shape() != shape {
        return Err(MvalError::ShapeMismatch {
            expected: shape,
            found: target.shape(),
        });
    }
    m.check_shape(shape)?;
    let beta = 1.0 - alpha;
    let dim = params.w.len();
    let parts = contexts
        .par_iter()
        .enumerate()
        .map(|(x, ctx)| {
            let (pi, free) = softmax(&params.w, ctx);
            let mut value = 0.0;
            let mut s = vec![0.0; d];
            for a in 0..d {
                let t = target.cell(x, a);
                let c = t * t * m.get(x, a);
                if c == 0.0 {
                    continue;
                }
                let den = beta * p_old.prob(x, a) + alpha * pi[a];
                if den <= 0.0 {
                    return Err(MvalError::InfiniteObjective { context: x, action: a });
                }
                value += c / den;
                s[a] = -alpha * c / (den * den);
            }
            let mut grad = vec![0.0; dim];
            chain_rule(&pi, &free, &s, ctx, &mut grad);
            Ok((value, grad))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(reduce(parts, dim))
}

/// Gradient descent with an Armijo backtracking line search. The trial step
/// starts at twice the last accepted step, so the search can grow as well
/// as shrink.
fn descend<F>(w0: Vec<f64>, config: FitConfig, mut eval: F) -> Result<LearnerParams>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let (mut f, mut g) = eval(&w0)?;
    if !f.is_finite() {
        return Err(MvalError::DivergedObjective { step: 0 });
    }
    let mut w = w0;
    let mut log = vec![f];
    let mut step = config.step_size;
    for it in 0..config.steps {
        let gnorm2: f64 = g.iter().map(|v| v * v).sum();
        if gnorm2 <= 1e-30 {
            break;
        }
        let mut accepted = false;
        for _ in 0..MAX_HALVINGS {
            let trial: Vec<f64> = w.iter().zip(&g).map(|(a, b)| a - step * b).collect();
            let (ft, gt) = eval(&trial)?;
            if !ft.is_nan() && ft <= f - ARMIJO_C * step * gnorm2 {
                if !ft.is_finite() {
                    return Err(MvalError::DivergedObjective { step: it + 1 });
                }
                w = trial;
                f = ft;
                g = gt;
                log.push(f);
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
        step *= 2.0;
    }
    Ok(LearnerParams { w, training_log: log })
}

/// Fits a linear-softmax augmentation policy by minimizing [`op2_objective`]
/// from `w = 0`.
pub fn precomputed_mval_fit<T: TargetTable + Sync>(
    contexts: &[FeatureContext],
    p_old: &Policy,
    target: &T,
    m: &SecondMomentModel,
    alpha: f64,
    config: FitConfig,
) -> Result<LearnerParams> {
    let dim = contexts.first().map_or(0, FeatureContext::dim);
    descend(vec![0.0; dim], config, |w| {
        let params = LearnerParams {
            w: w.to_vec(),
            training_log: Vec::new(),
        };
        op2_objective(&params, contexts, p_old, target, m, alpha)
    })
}

/// Balanced value estimate of `π_w` on `data` and its gradient.
pub fn balanced_value(
    params: &LearnerParams,
    data: &LoggedDataset,
    p_balanced: &Policy,
    contexts: &[FeatureContext],
) -> Result<(f64, Vec<f64>)> {
    let d = check_contexts(&params.w, contexts, Some(p_balanced.actions()))?;
    p_balanced.check_shape((contexts.len(), d))?;
    p_balanced.check_shape(data.shape())?;
    let n = data.len().max(1) as f64;
    // k(x, a) = Σ_{i at (x, a)} r_i / π_bal(a|x) / N
    let mut k = vec![0.0; contexts.len() * d];
    for (index, s) in data.samples().iter().enumerate() {
        let b = p_balanced.prob(s.context_id, s.action_id);
        if b <= 0.0 {
            return Err(MvalError::ZeroBalancedPropensity { index });
        }
        k[s.context_id * d + s.action_id] += s.reward / b / n;
    }
    let dim = params.w.len();
    let parts = contexts
        .par_iter()
        .enumerate()
        .map(|(x, ctx)| {
            let s = &k[x * d..(x + 1) * d];
            if s.iter().all(|v| *v == 0.0) {
                return (0.0, vec![0.0; dim]);
            }
            let (pi, free) = softmax(&params.w, ctx);
            let value: f64 = pi.iter().zip(s).map(|(p, v)| p * v).sum();
            let mut grad = vec![0.0; dim];
            chain_rule(&pi, &free, s, ctx, &mut grad);
            (value, grad)
        })
        .collect();
    Ok(reduce(parts, dim))
}

/// Maximizes the balanced value estimate over linear-softmax policies.
/// `training_log` records the estimate (not its negation).
pub fn erm_balanced_fit(
    data: &LoggedDataset,
    p_old: &Policy,
    p_aug: &Policy,
    mix: MixProfile,
    contexts: &[FeatureContext],
    config: FitConfig,
) -> Result<LearnerParams> {
    if data.is_empty() {
        return Err(MvalError::InvalidConfig("empty dataset".into()));
    }
    data.check_counts(mix)?;
    let bal = mix_policies(p_old, p_aug, mix)?;
    let dim = contexts.first().map_or(0, FeatureContext::dim);
    let mut fit = descend(vec![0.0; dim], config, |w| {
        let params = LearnerParams {
            w: w.to_vec(),
            training_log: Vec::new(),
        };
        let (v, g) = balanced_value(&params, data, &bal, contexts)?;
        Ok((-v, g.into_iter().map(|x| -x).collect()))
    })?;
    for v in &mut fit.training_log {
        *v = -*v;
    }
    Ok(fit)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{LoggedSample, Source};
    use crate::solver::{mval_solve_context, ContextWeights};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_contexts(rng: &mut ChaCha8Rng, k: usize, d: usize) -> Vec<FeatureContext> {
        (0..k)
            .map(|_| {
                let u: Vec<f64> = (0..USER_DIM).map(|_| rng.random_range(-1.0..1.0)).collect();
                let items: Vec<Vec<f64>> = (0..d)
                    .map(|_| (0..ITEM_DIM).map(|_| rng.random_range(-1.0..1.0)).collect())
                    .collect();
                FeatureContext::from_user_items(&u, &items).unwrap()
            })
            .collect()
    }

    fn tv(a: &[f64], b: &[f64]) -> f64 {
        0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>()
    }

    #[test]
    fn featurize_examples() {
        let mut e1 = [0.0; 5];
        e1[0] = 1.0;
        let mut e2 = [0.0; 5];
        e2[1] = 1.0;
        let f = featurize(&e1, &e2);
        assert_eq!(f.len(), CROSS_DIM);
        assert_eq!(f.iter().filter(|v| **v != 0.0).count(), 1);
        assert_eq!(f[1], 1.0);
        assert!(featurize(&[0.0; 5], &[1.0, 2.0, 3.0, 4.0, 5.0]).iter().all(|v| *v == 0.0));
        let f = featurize(&[1.0; 5], &[2.0, 0.0, 0.0, 0.0, 0.0]);
        for i in 0..5 {
            for j in 0..5 {
                assert_eq!(f[i * 5 + j], if j == 0 { 2.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn softmax_policy_properties() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ctx = random_contexts(&mut rng, 4, 6);
        let p = policy_from_params(&LearnerParams::zeros(CROSS_DIM), &ctx).unwrap();
        assert!(p.is_uniform(1e-15));

        // a shared offset on every action's feature leaves rows unchanged
        let w: Vec<f64> = (0..CROSS_DIM).map(|_| rng.random_range(-0.5..0.5)).collect();
        let params = LearnerParams { w: w.clone(), training_log: vec![] };
        let shifted: Vec<FeatureContext> = ctx
            .iter()
            .map(|c| {
                let mut f = c.features.clone();
                for row in &mut f {
                    row[0] += 3.0;
                }
                FeatureContext::new(f).unwrap()
            })
            .collect();
        let a = policy_from_params(&params, &ctx).unwrap();
        let b = policy_from_params(&params, &shifted).unwrap();
        for (x, y) in a.as_flat().iter().zip(b.as_flat()) {
            assert!((x - y).abs() < 1e-12);
        }

        // saturation: scaling weights (below the clamp) concentrates mass on
        // the argmax at the rate set by the score gap
        let score = |c: &FeatureContext, a: usize| c.features[a].iter().zip(&w).map(|(p, q)| p * q).sum::<f64>();
        let top = ctx
            .iter()
            .flat_map(|c| (0..c.actions()).map(move |a| (c, a)))
            .map(|(c, a)| score(c, a).abs())
            .fold(0.0, f64::max);
        let scale = 49.0 / top;
        let big = LearnerParams { w: w.iter().map(|v| v * scale).collect(), training_log: vec![] };
        let sat = policy_from_params(&big, &ctx).unwrap();
        for (x, c) in ctx.iter().enumerate() {
            let mut scores: Vec<(f64, usize)> = (0..c.actions()).map(|a| (score(c, a), a)).collect();
            scores.sort_by(|a, b| b.0.total_cmp(&a.0));
            let gap = (scores[0].0 - scores[1].0) * scale;
            let floor = 1.0 / (1.0 + (c.actions() - 1) as f64 * (-gap).exp());
            assert!(sat.prob(x, scores[0].1) >= floor - 1e-12);
        }
    }

    #[test]
    fn rows_stay_on_simplex_for_large_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let ctx = random_contexts(&mut rng, 10, 19);
        for _ in 0..20 {
            let w: Vec<f64> = (0..CROSS_DIM).map(|_| rng.random_range(-50.0..50.0)).collect();
            let p = policy_from_params(&LearnerParams { w, training_log: vec![] }, &ctx).unwrap();
            for row in p.rows() {
                assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-15 * 4.0);
                assert!(row.iter().all(|v| (0.0..=1.0).contains(v)));
            }
        }
    }

    #[test]
    fn op2_uniform_value() {
        let ctx = vec![FeatureContext::new(vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap()];
        let old = Policy::uniform(1, 2);
        let target = Policy::uniform(1, 2);
        let m = SecondMomentModel::uniform(1, 2, 1.0).unwrap();
        // c = 0.25 per action, denominators 0.5
        let (v, g) = op2_objective(&LearnerParams::zeros(2), &ctx, &old, &target, &m, 0.5).unwrap();
        assert!((v - 1.0).abs() < 1e-15);
        assert!(g.iter().all(|x| x.abs() < 1e-15));
    }

    #[test]
    fn op2_gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let ctx = random_contexts(&mut rng, 3, 4);
        let old = Policy::new(&[vec![0.4, 0.3, 0.2, 0.1], vec![0.1, 0.1, 0.1, 0.7], vec![0.25; 4]]).unwrap();
        let t = Policy::new(&[vec![0.1, 0.2, 0.3, 0.4], vec![0.5, 0.2, 0.2, 0.1], vec![0.7, 0.1, 0.1, 0.1]]).unwrap();
        let m = SecondMomentModel::fitted(&[vec![0.3, 0.5, 0.2, 0.9], vec![0.1; 4], vec![1.0, 0.4, 0.6, 0.2]]).unwrap();
        for _ in 0..10 {
            let w: Vec<f64> = (0..CROSS_DIM).map(|_| rng.random_range(-1.0..1.0)).collect();
            let (_, g) = op2_objective(&LearnerParams { w: w.clone(), training_log: vec![] }, &ctx, &old, &t, &m, 0.3).unwrap();
            let h = 1e-5;
            for i in 0..CROSS_DIM {
                let mut wp = w.clone();
                let mut wm = w.clone();
                wp[i] += h;
                wm[i] -= h;
                let fp = op2_objective(&LearnerParams { w: wp, training_log: vec![] }, &ctx, &old, &t, &m, 0.3).unwrap().0;
                let fm = op2_objective(&LearnerParams { w: wm, training_log: vec![] }, &ctx, &old, &t, &m, 0.3).unwrap().0;
                let fd = (fp - fm) / (2.0 * h);
                assert!((fd - g[i]).abs() <= 1e-5 * g[i].abs().max(1e-3), "{i}: {fd} vs {}", g[i]);
            }
        }
    }

    #[test]
    fn op2_small_alpha_limit() {
        let ctx = vec![FeatureContext::new(vec![vec![1.0], vec![-1.0]]).unwrap()];
        let old = Policy::new(&[vec![0.3, 0.7]]).unwrap();
        let t = Policy::new(&[vec![0.6, 0.4]]).unwrap();
        let m = SecondMomentModel::uniform(1, 2, 1.0).unwrap();
        let limit = 0.36 / 0.3 + 0.16 / 0.7;
        let params = LearnerParams { w: vec![0.8], training_log: vec![] };
        let (v, g) = op2_objective(&params, &ctx, &old, &t, &m, 1e-8).unwrap();
        assert!((v - limit).abs() < 1e-6);
        assert!(g[0].abs() < 1e-6);
        assert!(matches!(op2_objective(&params, &ctx, &old, &t, &m, 0.0), Err(MvalError::ZeroAlpha)));
    }

    #[test]
    fn fit_recovers_deterministic_target() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let ctx = random_contexts(&mut rng, 1, 3);
        let t = Policy::deterministic(3, &[2]);
        let m = SecondMomentModel::uniform(1, 3, 1.0).unwrap();
        let fit = precomputed_mval_fit(&ctx, &Policy::uniform(1, 3), &t, &m, 1.0, FitConfig { steps: 3000, step_size: 1.0 }).unwrap();
        let p = policy_from_params(&fit, &ctx).unwrap();
        assert!(tv(p.row(0), t.row(0)) < 1e-3, "{:?}", p.row(0));
        assert!(fit.training_log.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn fit_recovers_target_with_constant_moment() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let ctx = random_contexts(&mut rng, 1, 3);
        let t = Policy::new(&[vec![0.2, 0.5, 0.3]]).unwrap();
        let m = SecondMomentModel::uniform(1, 3, 0.4).unwrap();
        let fit = precomputed_mval_fit(&ctx, &Policy::uniform(1, 3), &t, &m, 1.0, FitConfig { steps: 3000, step_size: 1.0 }).unwrap();
        let p = policy_from_params(&fit, &ctx).unwrap();
        assert!(tv(p.row(0), t.row(0)) < 1e-3, "{:?}", p.row(0));
        let uniform = op2_objective(&LearnerParams::zeros(CROSS_DIM), &ctx, &Policy::uniform(1, 3), &t, &m, 1.0).unwrap().0;
        assert!(*fit.training_log.last().unwrap() <= uniform);
    }

    /// With one-hot features per (context, action) the class contains every
    /// policy table, so the fitted policy must approach the per-context
    /// water-filling solution.
    #[test]
    fn overparameterized_fit_matches_exact_solver() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let (k, d) = (20, 4);
        let dim = k * d;
        let ctx: Vec<FeatureContext> = (0..k)
            .map(|x| {
                FeatureContext::new(
                    (0..d)
                        .map(|a| {
                            let mut f = vec![0.0; dim];
                            f[x * d + a] = 1.0;
                            f
                        })
                        .collect(),
                )
                .unwrap()
            })
            .collect();
        let rand_row = |rng: &mut ChaCha8Rng| {
            let v: Vec<f64> = (0..d).map(|_| rng.random_range(0.05..1.0)).collect();
            let s: f64 = v.iter().sum();
            v.into_iter().map(|x| x / s).collect::<Vec<_>>()
        };
        let old = Policy::new(&(0..k).map(|_| rand_row(&mut rng)).collect::<Vec<_>>()).unwrap();
        let t = Policy::new(&(0..k).map(|_| rand_row(&mut rng)).collect::<Vec<_>>()).unwrap();
        let m = SecondMomentModel::fitted(&(0..k).map(|_| (0..d).map(|_| rng.random_range(0.1..1.0)).collect()).collect::<Vec<_>>()).unwrap();
        let alpha = 0.5;
        let fit = precomputed_mval_fit(&ctx, &old, &t, &m, alpha, FitConfig { steps: 4000, step_size: 1.0 }).unwrap();
        let p = policy_from_params(&fit, &ctx).unwrap();
        for x in 0..k {
            let w = ContextWeights::from_target(x, t.row(x), m.row(x)).unwrap();
            let (exact, _) = mval_solve_context(&w, old.row(x), alpha).unwrap();
            assert!(tv(p.row(x), &exact) <= 2e-2, "context {x}: {:?} vs {:?}", p.row(x), exact);
        }
    }

    fn log_dataset(rewarded: usize, n: usize) -> LoggedDataset {
        let samples = (0..n)
            .map(|i| LoggedSample {
                context_id: 0,
                action_id: i % 2,
                reward: if i % 2 == rewarded { 1.0 } else { 0.0 },
                source: if i < n / 2 { Source::Log } else { Source::Aug },
            })
            .collect();
        LoggedDataset::from_samples(1, 2, samples).unwrap()
    }

    #[test]
    fn erm_prefers_the_rewarded_action() {
        let ctx = vec![FeatureContext::new(vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap()];
        let data = log_dataset(0, 1000);
        let u = Policy::uniform(1, 2);
        let mix = data.mix().unwrap();
        let fit = erm_balanced_fit(&data, &u, &u, mix, &ctx, FitConfig::default()).unwrap();
        let p = policy_from_params(&fit, &ctx).unwrap();
        assert!(p.prob(0, 0) >= 0.99, "{:?}", p.row(0));
        let bal = mix_policies(&u, &u, mix).unwrap();
        let learned = balanced_value(&fit, &data, &bal, &ctx).unwrap().0;
        let baseline = balanced_value(&LearnerParams::zeros(2), &data, &bal, &ctx).unwrap().0;
        assert!(learned >= baseline);
    }

    #[test]
    fn erm_with_zero_rewards_keeps_initial_params() {
        let ctx = vec![FeatureContext::new(vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap()];
        let mut data = log_dataset(0, 10);
        data = LoggedDataset::from_samples(
            1,
            2,
            data.samples().iter().map(|s| LoggedSample { reward: 0.0, ..*s }).collect(),
        )
        .unwrap();
        let u = Policy::uniform(1, 2);
        let fit = erm_balanced_fit(&data, &u, &u, data.mix().unwrap(), &ctx, FitConfig::default()).unwrap();
        assert_eq!(fit.w, vec![0.0, 0.0]);
        assert_eq!(fit.training_log, vec![0.0]);
    }

    #[test]
    fn dimension_errors() {
        let ctx = vec![
            FeatureContext::new(vec![vec![1.0, 0.0]]).unwrap(),
            FeatureContext::new(vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap(),
        ];
        assert!(matches!(
            policy_from_params(&LearnerParams::zeros(2), &ctx),
            Err(MvalError::DimMismatch { .. })
        ));
        assert!(FeatureContext::new(vec![vec![1.0], vec![1.0, 2.0]]).is_err());
    }

    #[test]
    fn params_serialize_as_w_only() {
        let p = LearnerParams { w: vec![0.5, -1.0], training_log: vec![3.0] };
        assert_eq!(serde_json::to_string(&p).unwrap(), r#"{"w":[0.5,-1.0]}"#);
    }
}
