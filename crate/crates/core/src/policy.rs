//! Row-stochastic policy tables and the sample-count profile that mixes them.

use serde::{Deserialize, Serialize};

use crate::error::{MvalError, Result};

/// Rows within this distance of the simplex are accepted and renormalized.
pub const ROW_SUM_TOLERANCE: f64 = 1e-9;

/// A policy `π(a|x)` over dense context ids `0..contexts` and action ids
/// `0..actions`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    contexts: usize,
    actions: usize,
    table: Vec<f64>,
}

impl Policy {
    /// Validates a raw table; see [`validate_policy`].
    pub fn new(rows: &[Vec<f64>]) -> Result<Self> {
        validate_policy(rows)
    }

    pub fn uniform(contexts: usize, actions: usize) -> Self {
        assert!(contexts > 0 && actions > 0, "empty policy");
        Policy {
            contexts,
            actions,
            table: vec![1.0 / actions as f64; contexts * actions],
        }
    }

    /// Point mass on `choice[x]` in every context.
    pub fn deterministic(actions: usize, choice: &[usize]) -> Self {
        assert!(actions > 0 && !choice.is_empty(), "empty policy");
        let mut table = vec![0.0; choice.len() * actions];
        for (x, &a) in choice.iter().enumerate() {
            assert!(a < actions, "action out of range");
            table[x * actions + a] = 1.0;
        }
        Policy {
            contexts: choice.len(),
            actions,
            table,
        }
    }

    /// Builds a policy from rows that are already exact simplex members.
    pub(crate) fn from_flat(contexts: usize, actions: usize, table: Vec<f64>) -> Self {
        debug_assert_eq!(table.len(), contexts * actions);
        Policy {
            contexts,
            actions,
            table,
        }
    }

    pub fn contexts(&self) -> usize {
        self.contexts
    }

    pub fn actions(&self) -> usize {
        self.actions
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.contexts, self.actions)
    }

    #[inline]
    pub fn prob(&self, context: usize, action: usize) -> f64 {
        self.table[context * self.actions + action]
    }

    pub fn row(&self, context: usize) -> &[f64] {
        &self.table[context * self.actions..(context + 1) * self.actions]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.table.chunks_exact(self.actions)
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.rows().map(<[f64]>::to_vec).collect()
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.table
    }

    /// True when every row is the uniform distribution within `tol`.
    pub fn is_uniform(&self, tol: f64) -> bool {
        let u = 1.0 / self.actions as f64;
        self.table.iter().all(|&p| (p - u).abs() <= tol)
    }

    pub(crate) fn check_shape(&self, other: (usize, usize)) -> Result<()> {
        if self.shape() != other {
            return Err(MvalError::ShapeMismatch {
                expected: self.shape(),
                found: other,
            });
        }
        Ok(())
    }
}

/// Checks that `raw` is a rectangular table of finite, non-negative entries
/// whose rows sum to one within [`ROW_SUM_TOLERANCE`], then renormalizes
/// each row exactly and clamps entries to `[0, 1]`.
pub fn validate_policy(raw: &[Vec<f64>]) -> Result<Policy> {
    let contexts = raw.len();
    let actions = raw.first().map_or(0, Vec::len);
    if contexts == 0 || actions == 0 || raw.iter().any(|r| r.len() != actions) {
        return Err(MvalError::NotRectangular);
    }
    let mut table = Vec::with_capacity(contexts * actions);
    for (row, values) in raw.iter().enumerate() {
        for (col, &value) in values.iter().enumerate() {
            if !value.is_finite() {
                return Err(MvalError::NonFinite { row, col });
            }
            if value < 0.0 {
                return Err(MvalError::NegativeEntry { row, col, value });
            }
        }
        let sum: f64 = values.iter().sum();
        let deviation = (sum - 1.0).abs();
        if deviation > ROW_SUM_TOLERANCE {
            return Err(MvalError::RowSumOutOfTolerance { row, sum, deviation });
        }
        table.extend(values.iter().map(|&p| (p / sum).min(1.0)));
    }
    Ok(Policy {
        contexts,
        actions,
        table,
    })
}

/// Sample counts of the existing log and of the augmentation round.
///
/// The mixing weight `α = n_aug / N` is always derived from the integer
/// counts and never stored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MixProfile {
    n_log: usize,
    n_aug: usize,
}

impl MixProfile {
    pub fn new(n_log: usize, n_aug: usize) -> Result<Self> {
        if n_log + n_aug == 0 {
            return Err(MvalError::EmptyMix);
        }
        Ok(MixProfile { n_log, n_aug })
    }

    pub fn n_log(&self) -> usize {
        self.n_log
    }

    pub fn n_aug(&self) -> usize {
        self.n_aug
    }

    pub fn total(&self) -> usize {
        self.n_log + self.n_aug
    }

    pub fn alpha(&self) -> f64 {
        self.n_aug as f64 / self.total() as f64
    }

    /// `1 − α`, computed from counts so that `α + (1 − α)` is exact.
    pub fn log_share(&self) -> f64 {
        self.n_log as f64 / self.total() as f64
    }
}

/// The balanced (mixture) policy `(1 − α)·π_old + α·π_aug`.
pub fn mix_policies(p_old: &Policy, p_aug: &Policy, mix: MixProfile) -> Result<Policy> {
    p_old.check_shape(p_aug.shape())?;
    if mix.n_aug() == 0 {
        return Ok(p_old.clone());
    }
    if mix.n_log() == 0 {
        return Ok(p_aug.clone());
    }
    let (wl, wa) = (mix.log_share(), mix.alpha());
    let table = p_old
        .table
        .iter()
        .zip(&p_aug.table)
        .map(|(&o, &g)| (wl * o + wa * g).min(1.0))
        .collect();
    Ok(Policy::from_flat(p_old.contexts, p_old.actions, table))
}
