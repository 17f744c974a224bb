//! JSON documents exchanged with the command-line tool.
//!
//! Environment (policies ride along under `"policies"`):
//!
//! ```json
//! {"contexts": 2, "actions": 3, "context_probs": [0.5, 0.5],
//!  "mean_reward": [[0.1, 0.2, 0.3], [0.3, 0.2, 0.1]], "reward_kind": "bernoulli",
//!  "policies": {"log": [[...], [...]], "target": [[...], [...]]}}
//! ```
//!
//! `reward_kind` may also be `"fixed_gaussian"` with a `"reward_sigma"`; an
//! optional `"second_moment"` matrix overrides the `E[r²]` derived from the
//! reward law. Policy classes are either a list of policy matrices or
//! `{"center": [[...]], "tau": t}`; feature contexts are
//! `{"contexts": [{"u": [...], "items": [[...], ...]}]}`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::env::{second_moment, Environment, RewardKind, SecondMomentModel};
use crate::error::{MvalError, Result};
use crate::learner::FeatureContext;
use crate::policy::{validate_policy, Policy};
use crate::policyclass::{PolicyClass, TrustRegionKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvDocument {
    pub contexts: usize,
    pub actions: usize,
    pub context_probs: Vec<f64>,
    pub mean_reward: Vec<Vec<f64>>,
    pub reward_kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reward_sigma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub second_moment: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub policies: BTreeMap<String, Vec<Vec<f64>>>,
}

impl EnvDocument {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn from_environment(env: &Environment, policies: &[(&str, &Policy)]) -> Self {
        let (reward_kind, reward_sigma) = match env.kind() {
            RewardKind::Bernoulli => ("bernoulli".to_string(), None),
            RewardKind::FixedGaussian { sigma } => ("fixed_gaussian".to_string(), Some(sigma)),
        };
        EnvDocument {
            contexts: env.contexts(),
            actions: env.actions(),
            context_probs: env.context_probs().to_vec(),
            mean_reward: env.mean_rows(),
            reward_kind,
            reward_sigma,
            second_moment: None,
            policies: policies
                .iter()
                .map(|(name, p)| (name.to_string(), p.to_rows()))
                .collect(),
        }
    }

    pub fn environment(&self) -> Result<Environment> {
        let kind = match self.reward_kind.as_str() {
            "bernoulli" => RewardKind::Bernoulli,
            "fixed_gaussian" => RewardKind::FixedGaussian {
                sigma: self.reward_sigma.unwrap_or(0.0),
            },
            other => return Err(MvalError::InvalidEnvironment(format!("unknown reward_kind `{other}`"))),
        };
        let env = Environment::new(self.context_probs.clone(), &self.mean_reward, kind)?;
        if env.shape() != (self.contexts, self.actions) {
            return Err(MvalError::ShapeMismatch {
                expected: (self.contexts, self.actions),
                found: env.shape(),
            });
        }
        Ok(env)
    }

    pub fn has_policy(&self, name: &str) -> bool {
        self.policies.contains_key(name)
    }

    pub fn policy(&self, name: &str) -> Result<Policy> {
        let rows = self
            .policies
            .get(name)
            .ok_or_else(|| MvalError::InvalidConfig(format!("environment document has no `{name}` policy")))?;
        let p = validate_policy(rows)?;
        p.check_shape((self.contexts, self.actions))?;
        Ok(p)
    }

    /// The explicit `second_moment` table if present, else the one implied
    /// by the reward law.
    pub fn moment_model(&self, env: &Environment) -> Result<SecondMomentModel> {
        match &self.second_moment {
            Some(rows) => {
                let m = SecondMomentModel::fitted(rows)?;
                m.check_shape(env.shape())?;
                Ok(m)
            }
            None => Ok(second_moment(env)),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        to_sorted_json(self)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ClassDocument {
    TrustRegion {
        center: Vec<Vec<f64>>,
        tau: f64,
        #[serde(default = "two_sided")]
        kind: TrustRegionKind,
    },
    Finite(Vec<Vec<Vec<f64>>>),
}

fn two_sided() -> TrustRegionKind {
    TrustRegionKind::TwoSided
}

impl ClassDocument {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn class(&self) -> Result<PolicyClass> {
        match self {
            ClassDocument::Finite(list) => {
                PolicyClass::finite(list.iter().map(|rows| validate_policy(rows)).collect::<Result<_>>()?)
            }
            ClassDocument::TrustRegion { center, tau, kind } => {
                PolicyClass::trust_region(validate_policy(center)?, *tau, *kind)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextRecord {
    pub u: Vec<f64>,
    pub items: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextsDocument {
    pub contexts: Vec<ContextRecord>,
}

impl ContextsDocument {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn feature_contexts(&self) -> Result<Vec<FeatureContext>> {
        self.contexts
            .iter()
            .map(|c| FeatureContext::from_user_items(&c.u, &c.items))
            .collect()
    }
}

/// Pretty JSON with object keys in sorted order and a trailing newline.
pub fn to_sorted_json<T: Serialize>(value: &T) -> Result<String> {
    // serde_json::Value objects are BTreeMaps, so going through Value sorts keys
    let v = serde_json::to_value(value)?;
    let mut s = serde_json::to_string_pretty(&v)?;
    s.push('\n');
    Ok(s)
}
