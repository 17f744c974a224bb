//! Per-context minimum variance augmentation policy.
//!
//! For one context with weights `c_a = π_t²(a)·m(a)`, existing log row `q`
//! and augmentation share `α`, the program is
//!
//! ```text
//! minimize   Σ_a c_a / ((1 − α)·q_a + α·π_a)
//! subject to Σ_a π_a = 1,  π_a ≥ 0
//! ```
//!
//! The objective is separable and convex, and its KKT conditions give the
//! water-filling form `π_a(λ) = max(0, (√(α·c_a/λ) − (1 − α)·q_a) / α)`.
//! The multiplier `λ` is located by bisection on the (decreasing) total mass
//! and then refined exactly on the active set found by the bisection.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::SecondMomentModel;
use crate::error::{MvalError, Result};
use crate::policy::Policy;

const MAX_BISECTION_ITERS: usize = 200;
const MASS_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextWeights {
    pub context_id: usize,
    pub c: Vec<f64>,
}

impl ContextWeights {
    pub fn new(context_id: usize, c: Vec<f64>) -> Result<Self> {
        if c.is_empty() {
            return Err(MvalError::InvalidWeights("no actions".into()));
        }
        if let Some(bad) = c.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(MvalError::InvalidWeights(format!("weight {bad}")));
        }
        Ok(ContextWeights { context_id, c })
    }

    /// `c_a = π_t²(a)·m(a)`; pass an envelope row for the multi-policy case.
    pub fn from_target(context_id: usize, target_row: &[f64], m_row: &[f64]) -> Result<Self> {
        if target_row.len() != m_row.len() {
            return Err(MvalError::InvalidWeights("target and moment rows differ in length".into()));
        }
        let c = target_row.iter().zip(m_row).map(|(t, m)| t * t * m).collect();
        ContextWeights::new(context_id, c)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverDiagnostics {
    pub context_id: usize,
    /// Lagrange multiplier of the simplex constraint.
    pub lambda: f64,
    pub active_set: Vec<usize>,
    pub bisection_iters: usize,
    pub simplex_residual: f64,
    /// All weights were zero; the uniform row was returned.
    pub degenerate: bool,
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha == 0.0 {
        return Err(MvalError::ZeroAlpha);
    }
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(MvalError::InvalidAlpha(alpha));
    }
    Ok(())
}

fn check_row(c: &[f64], old_row: &[f64]) -> Result<()> {
    if c.len() != old_row.len() {
        return Err(MvalError::InvalidWeights(format!(
            "{} weights for {} logged probabilities",
            c.len(),
            old_row.len()
        )));
    }
    if old_row.iter().any(|q| !q.is_finite() || *q < 0.0) {
        return Err(MvalError::InvalidWeights("logged row has negative or non-finite entries".into()));
    }
    Ok(())
}

/// The per-context objective `Σ_a c_a / ((1 − α) q_a + α π_a)`; terms with
/// `c_a = 0` contribute nothing, and a zero denominator under positive
/// weight is `+∞`.
pub fn mval_objective(c: &[f64], old_row: &[f64], alpha: f64, pi: &[f64]) -> f64 {
    let beta = 1.0 - alpha;
    c.iter()
        .zip(old_row)
        .zip(pi)
        .map(|((&ca, &qa), &pa)| {
            if ca == 0.0 {
                return 0.0;
            }
            let d = beta * qa + alpha * pa;
            if d <= 0.0 {
                f64::INFINITY
            } else {
                ca / d
            }
        })
        .sum()
}

/// The minimum variance IPS logging row: `π(a) ∝ π_t(a)·√m(a)`.
pub fn minvar_ips_policy(target_row: &[f64], m_row: &[f64]) -> Result<Vec<f64>> {
    if target_row.len() != m_row.len() {
        return Err(MvalError::InvalidWeights("target and moment rows differ in length".into()));
    }
    let raw: Vec<f64> = target_row.iter().zip(m_row).map(|(t, m)| t * m.max(0.0).sqrt()).collect();
    let total: f64 = raw.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        return Err(MvalError::DegenerateWeights);
    }
    Ok(raw.into_iter().map(|v| v / total).collect())
}

/// Solves the per-context program by water-filling.
pub fn mval_solve_context(
    weights: &ContextWeights,
    old_row: &[f64],
    alpha: f64,
) -> Result<(Vec<f64>, SolverDiagnostics)> {
    check_alpha(alpha)?;
    let c = &weights.c;
    check_row(c, old_row)?;
    let n = c.len();

    if c.iter().all(|&v| v == 0.0) {
        return Ok((
            vec![1.0 / n as f64; n],
            SolverDiagnostics {
                context_id: weights.context_id,
                lambda: 0.0,
                active_set: (0..n).collect(),
                bisection_iters: 0,
                simplex_residual: 0.0,
                degenerate: true,
            },
        ));
    }

    let beta = 1.0 - alpha;
    // √(α c_a), the numerator scale of every water level.
    let root: Vec<f64> = c.iter().map(|&v| (alpha * v).sqrt()).collect();
    let mass = |lambda: f64| -> f64 {
        let s = lambda.sqrt();
        root.iter()
            .zip(old_row)
            .filter(|(r, _)| **r > 0.0)
            .map(|(r, q)| ((r / s - beta * q) / alpha).max(0.0))
            .sum()
    };

    // Bracket the root of mass(λ) = 1; mass is decreasing in λ.
    let c_max = c.iter().cloned().fold(0.0, f64::max);
    let (mut lo, mut hi) = (alpha * c_max, alpha * c_max);
    while mass(lo) < 1.0 {
        lo *= 0.25;
    }
    while mass(hi) > 1.0 {
        hi *= 4.0;
    }
    let mut lambda = (lo * hi).sqrt();
    let mut iters = 0;
    while iters < MAX_BISECTION_ITERS {
        iters += 1;
        lambda = (lo * hi).sqrt();
        let m = mass(lambda);
        if (m - 1.0).abs() <= MASS_TOLERANCE || hi / lo - 1.0 < 1e-15 {
            break;
        }
        if m > 1.0 {
            lo = lambda;
        } else {
            hi = lambda;
        }
    }

    // Exact refinement: on a fixed active set A the constraint gives
    // √λ = Σ_A √(α c_a) / (α + (1 − α) Σ_A q_a).
    let s0 = lambda.sqrt();
    let mut active: Vec<bool> = (0..n).map(|a| root[a] > 0.0 && root[a] / s0 > beta * old_row[a]).collect();
    let mut level = s0;
    for _ in 0..=2 * n {
        let (num, q_sum) = (0..n)
            .filter(|&a| active[a])
            .fold((0.0, 0.0), |(r, q), a| (r + root[a], q + old_row[a]));
        level = num / (alpha + beta * q_sum);
        let mut changed = false;
        for a in 0..n {
            let should = root[a] > 0.0 && root[a] > level * beta * old_row[a];
            if should != active[a] {
                active[a] = should;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }

    let mut pi: Vec<f64> = (0..n)
        .map(|a| {
            if active[a] {
                ((root[a] / level - beta * old_row[a]) / alpha).max(0.0)
            } else {
                0.0
            }
        })
        .collect();
    let total: f64 = pi.iter().sum();
    for p in &mut pi {
        *p /= total;
    }
    let simplex_residual = (pi.iter().sum::<f64>() - 1.0).abs();

    Ok((
        pi,
        SolverDiagnostics {
            context_id: weights.context_id,
            lambda: level * level,
            active_set: (0..n).filter(|&a| active[a]).collect(),
            bisection_iters: iters,
            simplex_residual,
            degenerate: false,
        },
    ))
}

/// `(π_minvar − (1 − α)·q) / α` when it is a valid distribution, i.e. when
/// enough augmentation budget exists to make the mixture equal the minimum
/// variance IPS policy. `None` means the closed form does not apply.
pub fn large_alpha_closed_form(target_row: &[f64], m_row: &[f64], old_row: &[f64], alpha: f64) -> Option<Vec<f64>> {
    if check_alpha(alpha).is_err() || old_row.len() != target_row.len() {
        return None;
    }
    let minvar = minvar_ips_policy(target_row, m_row).ok()?;
    let beta = 1.0 - alpha;
    let mut pi = Vec::with_capacity(minvar.len());
    for (p, q) in minvar.iter().zip(old_row) {
        let v = (p - beta * q) / alpha;
        if v < -1e-12 {
            return None;
        }
        pi.push(v.max(0.0));
    }
    let total: f64 = pi.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return None;
    }
    Some(pi)
}

pub const GRID_MAX_ACTIONS: usize = 4;
pub const GRID_MAX_RESOLUTION: usize = 2000;

/// Exhaustive minimizer of the per-context objective over the simplex grid
/// `{k / resolution}`. Separability lets a min-plus dynamic program visit
/// every grid point implicitly; it does not rely on convexity or on the
/// KKT form, so it serves as an independent optimum certificate.
pub fn mval_grid_oracle(weights: &ContextWeights, old_row: &[f64], alpha: f64, resolution: usize) -> Result<Vec<f64>> {
    let n = weights.c.len();
    if n > GRID_MAX_ACTIONS {
        return Err(MvalError::TooManyActions {
            max: GRID_MAX_ACTIONS,
            found: n,
        });
    }
    if resolution == 0 || resolution > GRID_MAX_RESOLUTION {
        return Err(MvalError::InvalidResolution(resolution));
    }
    check_alpha(alpha)?;
    check_row(&weights.c, old_row)?;
    let r = resolution;
    let beta = 1.0 - alpha;
    let term = |a: usize, k: usize| -> f64 {
        let ca = weights.c[a];
        if ca == 0.0 {
            return 0.0;
        }
        let d = beta * old_row[a] + alpha * (k as f64 / r as f64);
        if d <= 0.0 {
            f64::INFINITY
        } else {
            ca / d
        }
    };

    // best[s]: minimum over allocations of s units to actions 0..=j.
    let mut best: Vec<f64> = (0..=r).map(|k| term(0, k)).collect();
    let mut choice: Vec<Vec<usize>> = Vec::with_capacity(n);
    choice.push((0..=r).collect());
    for a in 1..n {
        let cost: Vec<f64> = (0..=r).map(|k| term(a, k)).collect();
        let mut next = vec![f64::INFINITY; r + 1];
        let mut pick = vec![0usize; r + 1];
        for s in 0..=r {
            for k in 0..=s {
                let v = best[s - k] + cost[k];
                if v < next[s] {
                    next[s] = v;
                    pick[s] = k;
                }
            }
        }
        best = next;
        choice.push(pick);
    }

    let mut units = vec![0usize; n];
    let mut remaining = r;
    for a in (1..n).rev() {
        units[a] = choice[a][remaining];
        remaining -= units[a];
    }
    units[0] = remaining;
    Ok(units.into_iter().map(|k| k as f64 / r as f64).collect())
}

/// Lower bound on the variance drop from moving one record's divisor for a
/// cell from `ε` to `(Nε + 1)/N`: `Y / (ε (Nε + 1))`, with `Y = π_t² m`.
pub fn variance_decrease_single_sample(epsilon: f64, n_before: usize, y: f64) -> f64 {
    y / (epsilon * (n_before as f64 * epsilon + 1.0))
}

/// Solves every context of a target/log pair in parallel.
pub fn mval_policy(
    p_target: &Policy,
    p_old: &Policy,
    m: &SecondMomentModel,
    alpha: f64,
) -> Result<(Policy, Vec<SolverDiagnostics>)> {
    p_target.check_shape(p_old.shape())?;
    m.check_shape(p_target.shape())?;
    let rows = (0..p_target.contexts())
        .map(|x| ContextWeights::from_target(x, p_target.row(x), m.row(x)))
        .collect::<Result<Vec<_>>>()?;
    solve_rows(&rows, p_old, alpha)
}

pub(crate) fn solve_rows(
    rows: &[ContextWeights],
    p_old: &Policy,
    alpha: f64,
) -> Result<(Policy, Vec<SolverDiagnostics>)> {
    let solved = rows
        .par_iter()
        .map(|w| mval_solve_context(w, p_old.row(w.context_id), alpha))
        .collect::<Result<Vec<_>>>()?;
    let (contexts, actions) = p_old.shape();
    let mut table = Vec::with_capacity(contexts * actions);
    let mut diags = Vec::with_capacity(contexts);
    for (row, d) in solved {
        table.extend(row);
        diags.push(d);
    }
    Ok((Policy::from_flat(contexts, actions, table), diags))
}
