//! Policy classes, their per-cell upper envelope `π_max`, and augmentation
//! for evaluating a whole class at once.
//!
//! For every member `π` of a class, `Var[R̂_bal(π)] ≤ (1/N) E_x Σ_a π_max² m / π_bal`,
//! so minimizing that bound is the single-policy program with `π_max` in
//! place of the target.

use serde::{Deserialize, Serialize};

use crate::env::{Environment, SecondMomentModel};
use crate::error::{MvalError, Result};
use crate::policy::{mix_policies, MixProfile, Policy};
use crate::solver::{solve_rows, ContextWeights, SolverDiagnostics};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrustRegionKind {
    /// `π(a|x) ∈ [π_t/τ, τ·π_t]`.
    TwoSided,
    /// `π(a|x) ∈ [0, τ·π_t]`.
    OneSided,
}

#[derive(Debug, Clone, PartialEq)]
pub enum PolicyClass {
    Finite(Vec<Policy>),
    TrustRegion {
        center: Policy,
        tau: f64,
        kind: TrustRegionKind,
    },
}

impl PolicyClass {
    pub fn finite(policies: Vec<Policy>) -> Result<Self> {
        let first = policies.first().ok_or(MvalError::EmptyClass)?;
        for p in &policies[1..] {
            first.check_shape(p.shape())?;
        }
        Ok(PolicyClass::Finite(policies))
    }

    pub fn trust_region(center: Policy, tau: f64, kind: TrustRegionKind) -> Result<Self> {
        if !(tau >= 1.0) || !tau.is_finite() {
            return Err(MvalError::InvalidTau(tau));
        }
        Ok(PolicyClass::TrustRegion { center, tau, kind })
    }

    pub fn envelope(&self) -> Result<PiMaxEnvelope> {
        match self {
            PolicyClass::Finite(ps) => pi_max_finite(ps),
            PolicyClass::TrustRegion { center, tau, kind } => match kind {
                TrustRegionKind::TwoSided => pi_max_trust_region(center, *tau),
                TrustRegionKind::OneSided => pi_max_one_sided(center, *tau),
            },
        }
    }
}

/// Per-cell maximum probability over a policy class. Rows sum to at least
/// one; this is an envelope, not a distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct PiMaxEnvelope {
    contexts: usize,
    actions: usize,
    table: Vec<f64>,
    approximate: bool,
}

impl PiMaxEnvelope {
    /// The cheap approximation `π_max ≈ π_t`, exact up to scaling while
    /// `τ·π_t ≤ 1` in every cell.
    pub fn approximate_from_center(center: &Policy) -> Self {
        PiMaxEnvelope {
            contexts: center.contexts(),
            actions: center.actions(),
            table: center.as_flat().to_vec(),
            approximate: true,
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let contexts = rows.len();
        let actions = rows.first().map_or(0, Vec::len);
        if contexts == 0 || actions == 0 || rows.iter().any(|r| r.len() != actions) {
            return Err(MvalError::NotRectangular);
        }
        let table: Vec<f64> = rows.iter().flatten().copied().collect();
        if table.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(MvalError::InvalidWeights("envelope entries must be finite and >= 0".into()));
        }
        Ok(PiMaxEnvelope {
            contexts,
            actions,
            table,
            approximate: false,
        })
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.contexts, self.actions)
    }

    pub fn is_approximate(&self) -> bool {
        self.approximate
    }

    #[inline]
    pub fn get(&self, context: usize, action: usize) -> f64 {
        self.table[context * self.actions + action]
    }

    pub fn row(&self, context: usize) -> &[f64] {
        &self.table[context * self.actions..(context + 1) * self.actions]
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.table.chunks_exact(self.actions).map(<[f64]>::to_vec).collect()
    }

    pub fn scaled(&self, k: f64) -> Self {
        PiMaxEnvelope {
            table: self.table.iter().map(|v| v * k).collect(),
            ..self.clone()
        }
    }

    /// Entrywise `self ≥ p`.
    pub fn dominates(&self, p: &Policy) -> bool {
        p.shape() == self.shape() && self.table.iter().zip(p.as_flat()).all(|(e, v)| e >= v)
    }
}

pub fn pi_max_finite(policies: &[Policy]) -> Result<PiMaxEnvelope> {
    let first = policies.first().ok_or(MvalError::EmptyClass)?;
    let mut table = first.as_flat().to_vec();
    for p in &policies[1..] {
        first.check_shape(p.shape())?;
        for (e, v) in table.iter_mut().zip(p.as_flat()) {
            *e = e.max(*v);
        }
    }
    Ok(PiMaxEnvelope {
        contexts: first.contexts(),
        actions: first.actions(),
        table,
        approximate: false,
    })
}

/// Exact envelope of `{π : π(a|x) ∈ [π_t(a|x)/τ, τ·π_t(a|x)]}`: each cell can
/// grow until either its own box binds or every other cell sits at its
/// lower bound, i.e. `min(τ·π_t(a), 1 − Σ_{a'≠a} π_t(a')/τ)`.
pub fn pi_max_trust_region(center: &Policy, tau: f64) -> Result<PiMaxEnvelope> {
    if !(tau >= 1.0) || !tau.is_finite() {
        return Err(MvalError::InvalidTau(tau));
    }
    let (contexts, actions) = center.shape();
    if tau == 1.0 {
        return Ok(PiMaxEnvelope {
            contexts,
            actions,
            table: center.as_flat().to_vec(),
            approximate: false,
        });
    }
    let mut table = Vec::with_capacity(contexts * actions);
    for x in 0..contexts {
        let row = center.row(x);
        let lower_sum: f64 = row.iter().map(|p| p / tau).sum();
        if lower_sum > 1.0 + 1e-12 {
            return Err(MvalError::InfeasibleClass { context: x, lower_sum });
        }
        for (a, &p) in row.iter().enumerate() {
            let others: f64 = row.iter().enumerate().filter(|&(b, _)| b != a).map(|(_, q)| q / tau).sum();
            table.push((tau * p).min(1.0 - others).clamp(0.0, 1.0));
        }
    }
    Ok(PiMaxEnvelope {
        contexts,
        actions,
        table,
        approximate: false,
    })
}

/// Envelope of the one-sided region `{π : π(a|x) ≤ τ·π_t(a|x)}`.
pub fn pi_max_one_sided(center: &Policy, tau: f64) -> Result<PiMaxEnvelope> {
    if !(tau >= 1.0) || !tau.is_finite() {
        return Err(MvalError::InvalidTau(tau));
    }
    Ok(PiMaxEnvelope {
        contexts: center.contexts(),
        actions: center.actions(),
        table: center.as_flat().iter().map(|p| (tau * p).min(1.0)).collect(),
        approximate: false,
    })
}

/// `(1/N) E_x Σ_a π_max²(a|x) m(x, a) / π_bal(a|x)`.
pub fn variance_bound(
    envelope: &PiMaxEnvelope,
    p_old: &Policy,
    p_aug: &Policy,
    mix: MixProfile,
    m: &SecondMomentModel,
    env: &Environment,
) -> Result<f64> {
    let shape = env.shape();
    if envelope.shape() != shape {
        return Err(MvalError::ShapeMismatch {
            expected: shape,
            found: envelope.shape(),
        });
    }
    env.check_policy(p_old)?;
    m.check_shape(shape)?;
    let bal = mix_policies(p_old, p_aug, mix)?;
    let mut total = 0.0;
    for (x, &px) in env.context_probs().iter().enumerate() {
        if px == 0.0 {
            continue;
        }
        let mut inner = 0.0;
        for a in 0..env.actions() {
            let e = envelope.get(x, a);
            let num = e * e * m.get(x, a);
            if num == 0.0 {
                continue;
            }
            let d = bal.prob(x, a);
            if d <= 0.0 {
                return Err(MvalError::InfiniteBound { context: x, action: a });
            }
            inner += num / d;
        }
        total += px * inner;
    }
    Ok(total / mix.total() as f64)
}

/// Per-context augmentation policy minimizing the class variance bound.
pub fn mval_solve_multi(
    envelope: &PiMaxEnvelope,
    p_old: &Policy,
    alpha: f64,
    m: &SecondMomentModel,
) -> Result<Policy> {
    mval_solve_multi_with_diagnostics(envelope, p_old, alpha, m).map(|(p, _)| p)
}

pub fn mval_solve_multi_with_diagnostics(
    envelope: &PiMaxEnvelope,
    p_old: &Policy,
    alpha: f64,
    m: &SecondMomentModel,
) -> Result<(Policy, Vec<SolverDiagnostics>)> {
    if envelope.shape() != p_old.shape() {
        return Err(MvalError::ShapeMismatch {
            expected: p_old.shape(),
            found: envelope.shape(),
        });
    }
    m.check_shape(p_old.shape())?;
    let rows = (0..p_old.contexts())
        .map(|x| ContextWeights::from_target(x, envelope.row(x), m.row(x)))
        .collect::<Result<Vec<_>>>()?;
    solve_rows(&rows, p_old, alpha)
}
