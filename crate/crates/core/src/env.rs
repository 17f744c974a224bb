//! Simulation ground truth: context distribution, reward law, and the
//! quantities derived from it.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{MvalError, Result};
use crate::policy::Policy;

const PROB_SUM_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardKind {
    /// Click-style rewards in `{0, 1}` with mean `r̄(x, a)`.
    Bernoulli,
    /// `r̄(x, a) + σ·N(0, 1)` with a single global `σ`.
    FixedGaussian { sigma: f64 },
}

/// A finite contextual-bandit environment.
#[derive(Debug, Clone, PartialEq)]
pub struct Environment {
    context_probs: Vec<f64>,
    actions: usize,
    mean_reward: Vec<f64>,
    reward_variance: Vec<f64>,
    kind: RewardKind,
}

impl Environment {
    pub fn new(context_probs: Vec<f64>, mean_reward: &[Vec<f64>], kind: RewardKind) -> Result<Self> {
        let contexts = context_probs.len();
        if contexts == 0 || mean_reward.len() != contexts {
            return Err(MvalError::InvalidEnvironment(format!(
                "{} context probabilities for {} reward rows",
                contexts,
                mean_reward.len()
            )));
        }
        let actions = mean_reward[0].len();
        if actions == 0 || mean_reward.iter().any(|r| r.len() != actions) {
            return Err(MvalError::InvalidEnvironment("reward table is not rectangular".into()));
        }
        if context_probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(MvalError::InvalidEnvironment("negative or non-finite context probability".into()));
        }
        let total: f64 = context_probs.iter().sum();
        if (total - 1.0).abs() > PROB_SUM_TOLERANCE {
            return Err(MvalError::InvalidEnvironment(format!("context probabilities sum to {total}")));
        }
        let mean_reward: Vec<f64> = mean_reward.iter().flatten().copied().collect();
        if mean_reward.iter().any(|r| !r.is_finite()) {
            return Err(MvalError::InvalidEnvironment("non-finite mean reward".into()));
        }
        let reward_variance = match kind {
            RewardKind::Bernoulli => {
                if mean_reward.iter().any(|r| !(0.0..=1.0).contains(r)) {
                    return Err(MvalError::InvalidEnvironment("bernoulli mean outside [0, 1]".into()));
                }
                mean_reward.iter().map(|r| r * (1.0 - r)).collect()
            }
            RewardKind::FixedGaussian { sigma } => {
                if !sigma.is_finite() || sigma < 0.0 {
                    return Err(MvalError::InvalidEnvironment(format!("reward sigma {sigma}")));
                }
                vec![sigma * sigma; mean_reward.len()]
            }
        };
        Ok(Environment {
            context_probs,
            actions,
            mean_reward,
            reward_variance,
            kind,
        })
    }

    /// Bernoulli environment with uniformly likely contexts.
    pub fn bernoulli_uniform(mean_reward: &[Vec<f64>]) -> Result<Self> {
        let k = mean_reward.len().max(1);
        Environment::new(vec![1.0 / k as f64; mean_reward.len()], mean_reward, RewardKind::Bernoulli)
    }

    pub fn contexts(&self) -> usize {
        self.context_probs.len()
    }

    pub fn actions(&self) -> usize {
        self.actions
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.contexts(), self.actions)
    }

    pub fn context_probs(&self) -> &[f64] {
        &self.context_probs
    }

    pub fn kind(&self) -> RewardKind {
        self.kind
    }

    #[inline]
    pub fn mean(&self, context: usize, action: usize) -> f64 {
        self.mean_reward[context * self.actions + action]
    }

    #[inline]
    pub fn variance(&self, context: usize, action: usize) -> f64 {
        self.reward_variance[context * self.actions + action]
    }

    pub fn mean_rows(&self) -> Vec<Vec<f64>> {
        self.mean_reward.chunks_exact(self.actions).map(<[f64]>::to_vec).collect()
    }

    pub fn sample_reward<R: Rng + ?Sized>(&self, context: usize, action: usize, rng: &mut R) -> f64 {
        let mean = self.mean(context, action);
        match self.kind {
            RewardKind::Bernoulli => {
                if rng.random::<f64>() < mean {
                    1.0
                } else {
                    0.0
                }
            }
            RewardKind::FixedGaussian { sigma } => {
                let z: f64 = StandardNormal.sample(rng);
                mean + sigma * z
            }
        }
    }

    pub(crate) fn check_policy(&self, p: &Policy) -> Result<()> {
        if p.shape() != self.shape() {
            return Err(MvalError::ShapeMismatch {
                expected: self.shape(),
                found: p.shape(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MomentProvenance {
    ExactFromEnv,
    UniformConstant(f64),
    Fitted,
}

/// Working estimate of `E_r[r²(x, a)]` per cell.
#[derive(Debug, Clone, PartialEq)]
pub struct SecondMomentModel {
    contexts: usize,
    actions: usize,
    values: Vec<f64>,
    provenance: MomentProvenance,
}

impl SecondMomentModel {
    /// The same constant for every cell; the uninformed choice when no reward
    /// model is available.
    pub fn uniform(contexts: usize, actions: usize, c: f64) -> Result<Self> {
        if !c.is_finite() || c < 0.0 {
            return Err(MvalError::InvalidWeights(format!("second moment {c}")));
        }
        Ok(SecondMomentModel {
            contexts,
            actions,
            values: vec![c; contexts * actions],
            provenance: MomentProvenance::UniformConstant(c),
        })
    }

    /// A table coming from some regression or external source.
    pub fn fitted(rows: &[Vec<f64>]) -> Result<Self> {
        let contexts = rows.len();
        let actions = rows.first().map_or(0, Vec::len);
        if contexts == 0 || actions == 0 || rows.iter().any(|r| r.len() != actions) {
            return Err(MvalError::NotRectangular);
        }
        let values: Vec<f64> = rows.iter().flatten().copied().collect();
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(MvalError::InvalidWeights("second moments must be finite and >= 0".into()));
        }
        Ok(SecondMomentModel {
            contexts,
            actions,
            values,
            provenance: MomentProvenance::Fitted,
        })
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.contexts, self.actions)
    }

    pub fn provenance(&self) -> MomentProvenance {
        self.provenance
    }

    #[inline]
    pub fn get(&self, context: usize, action: usize) -> f64 {
        self.values[context * self.actions + action]
    }

    pub fn row(&self, context: usize) -> &[f64] {
        &self.values[context * self.actions..(context + 1) * self.actions]
    }

    /// Multiplies every cell by `k`.
    pub fn scaled(&self, k: f64) -> Self {
        SecondMomentModel {
            values: self.values.iter().map(|v| v * k).collect(),
            provenance: MomentProvenance::Fitted,
            ..*self
        }
    }

    pub(crate) fn check_shape(&self, shape: (usize, usize)) -> Result<()> {
        if self.shape() != shape {
            return Err(MvalError::ShapeMismatch {
                expected: shape,
                found: self.shape(),
            });
        }
        Ok(())
    }
}

/// `m(x, a) = r̄² + σ²` straight from the environment.
pub fn second_moment(env: &Environment) -> SecondMomentModel {
    let values = env
        .mean_reward
        .iter()
        .zip(&env.reward_variance)
        .map(|(r, v)| r * r + v)
        .collect();
    SecondMomentModel {
        contexts: env.contexts(),
        actions: env.actions(),
        values,
        provenance: MomentProvenance::ExactFromEnv,
    }
}

/// Expected reward of `p`: `Σ_x Pr(x) Σ_a r̄(x, a)·π(a|x)`.
pub fn true_utility(p: &Policy, env: &Environment) -> Result<f64> {
    env.check_policy(p)?;
    Ok(env
        .context_probs
        .iter()
        .enumerate()
        .map(|(x, px)| {
            let inner: f64 = p.row(x).iter().enumerate().map(|(a, pa)| pa * env.mean(x, a)).sum();
            px * inner
        })
        .sum())
}
