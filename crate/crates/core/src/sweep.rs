//! Parameter sweeps over the synthetic experiment: logging determinism
//! (`eta_sweep`), target shift (`delta_sweep`) and several simultaneous
//! targets (`multi_policy`).
//!
//! Each grid point is repeated with a fresh scoring vector per repeat; the
//! reported variance is the mean over repeats of the per-repeat trial
//! variance, with its standard error across repeats.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::{second_moment, SecondMomentModel};
use crate::error::{MvalError, Result};
use crate::learner::{self, FitConfig};
use crate::oracle::SamplingDesign;
use crate::policy::{MixProfile, Policy};
use crate::policyclass::{mval_solve_multi, pi_max_finite};
use crate::sim::{
    augmentation_policy, derive_target, generate_scored_policy, run_trials_multi, stream_seed, synthetic_world,
    AugPlan, AugStrategy, PolicyGenConfig, StrategyInputs, SyntheticConfig, SyntheticWorld, TrialConfig,
};

const POLICY_STREAM: u64 = 0x504F;
const TRIAL_STREAM: u64 = 0x5452;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepMode {
    EtaSweep,
    DeltaSweep,
    MultiPolicy,
}

/// Which second-moment table the optimizing strategies plan with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MomentSource {
    /// Constant `E[r²]`; rewards are unknown when data is planned.
    #[default]
    Uniform,
    /// The environment's true `E[r²]`.
    Exact,
}

fn default_eta() -> f64 {
    4.0
}
fn default_delta() -> f64 {
    0.4
}
fn default_contexts() -> usize {
    100
}
fn default_actions() -> usize {
    19
}
fn default_max_mean() -> f64 {
    0.1
}
fn default_target_rank() -> usize {
    2
}
fn default_target_ranks() -> Vec<usize> {
    vec![2, 3, 4]
}
fn default_fit_steps() -> usize {
    200
}
fn default_weight_std() -> f64 {
    1.0
}
fn default_design() -> SamplingDesign {
    SamplingDesign::Stratified
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub mode: SweepMode,
    /// Grid for `eta_sweep` and `multi_policy`.
    #[serde(default)]
    pub eta_grid: Vec<f64>,
    /// Grid for `delta_sweep`.
    #[serde(default)]
    pub delta_grid: Vec<f64>,
    /// Fixed eta of a `delta_sweep`.
    #[serde(default = "default_eta")]
    pub eta: f64,
    /// Fixed delta of the other modes.
    #[serde(default = "default_delta")]
    pub delta: f64,
    pub n_log: usize,
    pub n_aug: usize,
    pub trials: usize,
    pub repeats: usize,
    pub seed: u64,
    #[serde(default)]
    pub strategies: Vec<AugStrategy>,
    #[serde(default = "default_contexts")]
    pub contexts: usize,
    #[serde(default = "default_actions")]
    pub actions: usize,
    #[serde(default = "default_max_mean")]
    pub max_mean: f64,
    /// Defaults to `seed`.
    #[serde(default)]
    pub env_seed: Option<u64>,
    #[serde(default = "default_target_rank")]
    pub target_rank: usize,
    #[serde(default = "default_target_ranks")]
    pub target_ranks: Vec<usize>,
    #[serde(default)]
    pub second_moment: MomentSource,
    #[serde(default = "default_fit_steps")]
    pub fit_steps: usize,
    #[serde(default)]
    pub weight_mean: f64,
    #[serde(default = "default_weight_std")]
    pub weight_std: f64,
    #[serde(default = "default_design")]
    pub design: SamplingDesign,
}

impl SweepConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: SweepConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn grid(&self) -> &[f64] {
        match self.mode {
            SweepMode::EtaSweep | SweepMode::MultiPolicy => &self.eta_grid,
            SweepMode::DeltaSweep => &self.delta_grid,
        }
    }

    /// Configured strategies, or the mode's default set.
    pub fn strategies(&self) -> Vec<AugStrategy> {
        if !self.strategies.is_empty() {
            return self.strategies.clone();
        }
        match self.mode {
            SweepMode::MultiPolicy => vec![AugStrategy::Mval, AugStrategy::RoundRobin, AugStrategy::Uniform],
            _ => vec![AugStrategy::Mval, AugStrategy::Precomputed, AugStrategy::Target, AugStrategy::Uniform],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(MvalError::InvalidConfig(msg));
        if self.grid().is_empty() {
            return bad("empty grid".into());
        }
        if self.trials < 2 || self.repeats == 0 {
            return bad("need at least 2 trials and 1 repeat".into());
        }
        if self.n_log + self.n_aug == 0 {
            return Err(MvalError::EmptyMix);
        }
        if self.grid().iter().any(|v| !v.is_finite()) {
            return bad("grid values must be finite".into());
        }
        for s in self.strategies() {
            let ok = match self.mode {
                SweepMode::MultiPolicy => s != AugStrategy::Target,
                _ => s != AugStrategy::RoundRobin,
            };
            if !ok {
                return bad(format!("strategy {} is not available in this mode", s.name()));
            }
        }
        if self.mode == SweepMode::MultiPolicy && self.target_ranks.is_empty() {
            return bad("multi_policy needs target ranks".into());
        }
        let ranks: &[usize] = match self.mode {
            SweepMode::MultiPolicy => &self.target_ranks,
            _ => std::slice::from_ref(&self.target_rank),
        };
        for &rank in ranks {
            if rank < 2 || rank > self.actions {
                return Err(MvalError::RankOutOfRange {
                    rank,
                    actions: self.actions,
                });
            }
        }
        Ok(())
    }

    fn world_config(&self) -> SyntheticConfig {
        SyntheticConfig {
            contexts: self.contexts,
            actions: self.actions,
            max_mean: self.max_mean,
            seed: self.env_seed.unwrap_or(self.seed),
        }
    }

    fn policy_config(&self, value: f64, repeat: usize) -> PolicyGenConfig {
        let (eta, delta) = match self.mode {
            SweepMode::DeltaSweep => (self.eta, value),
            _ => (value, self.delta),
        };
        PolicyGenConfig {
            eta,
            delta,
            target_rank: self.target_rank,
            seed: stream_seed(&[self.seed, repeat as u64, POLICY_STREAM]),
            weight_mean: self.weight_mean,
            weight_std: self.weight_std,
        }
    }
}

/// One row of the sweep report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub grid_value: f64,
    pub strategy: String,
    pub variance: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub grid_value: f64,
    pub strategy: AugStrategy,
    /// Trial variance of each repeat (averaged over targets in
    /// `multi_policy` mode).
    pub repeat_variances: Vec<f64>,
    pub variance: f64,
    pub stderr: f64,
}

impl SweepPoint {
    pub fn row(&self) -> SweepRow {
        SweepRow {
            grid_value: self.grid_value,
            strategy: self.strategy.name().to_string(),
            variance: self.variance,
            stderr: self.stderr,
        }
    }

    /// Standard-error bars `[v − se, v + se]` intersect.
    pub fn bars_overlap(&self, other: &SweepPoint) -> bool {
        (self.variance - other.variance).abs() <= self.stderr + other.stderr
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    pub mode: SweepMode,
    /// Grid-major, then strategies in configured order.
    pub points: Vec<SweepPoint>,
}

impl SweepReport {
    pub fn rows(&self) -> Vec<SweepRow> {
        self.points.iter().map(SweepPoint::row).collect()
    }

    pub fn point(&self, grid_value: f64, strategy: AugStrategy) -> Option<&SweepPoint> {
        self.points
            .iter()
            .find(|p| p.grid_value == grid_value && p.strategy == strategy)
    }

    /// `grid_value,strategy,variance,stderr`
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for row in self.rows() {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Array of row objects with sorted keys.
    pub fn write_json<W: Write>(&self, mut writer: W) -> Result<()> {
        let value = serde_json::to_value(self.rows())?;
        serde_json::to_writer_pretty(&mut writer, &value)?;
        writeln!(writer)?;
        Ok(())
    }
}

fn moment_model(cfg: &SweepConfig, world: &SyntheticWorld) -> Result<SecondMomentModel> {
    match cfg.second_moment {
        MomentSource::Uniform => SecondMomentModel::uniform(cfg.contexts, cfg.actions, 1.0),
        MomentSource::Exact => Ok(second_moment(&world.env)),
    }
}

/// Trial variance of every strategy for one (grid point, repeat).
fn run_cell(
    cfg: &SweepConfig,
    world: &SyntheticWorld,
    m: &SecondMomentModel,
    grid_index: usize,
    repeat: usize,
) -> Result<Vec<f64>> {
    let value = cfg.grid()[grid_index];
    let pcfg = cfg.policy_config(value, repeat);
    let p_log = generate_scored_policy(&world.features, &pcfg)?.policy;
    let mix = MixProfile::new(cfg.n_log, cfg.n_aug)?;
    let trial_cfg = TrialConfig {
        n_log: cfg.n_log,
        n_aug: cfg.n_aug,
        trials: cfg.trials,
        seed: stream_seed(&[cfg.seed, grid_index as u64, repeat as u64, TRIAL_STREAM]),
        design: cfg.design,
    };
    let fit = FitConfig {
        steps: cfg.fit_steps,
        step_size: 1.0,
    };
    let inputs = StrategyInputs {
        m: Some(m),
        features: Some(&world.features),
        fit,
    };

    let targets: Vec<Policy> = match cfg.mode {
        SweepMode::MultiPolicy => cfg
            .target_ranks
            .iter()
            .map(|&rank| derive_target(&p_log, pcfg.delta, rank))
            .collect::<Result<_>>()?,
        _ => vec![derive_target(&p_log, pcfg.delta, cfg.target_rank)?],
    };

    cfg.strategies()
        .into_iter()
        .map(|strategy| {
            let plan = match (cfg.mode, strategy) {
                (SweepMode::MultiPolicy, AugStrategy::RoundRobin) => AugPlan::round_robin(&targets, cfg.n_aug)?,
                (SweepMode::MultiPolicy, AugStrategy::Uniform) => {
                    AugPlan::single(Policy::uniform(cfg.contexts, cfg.actions), cfg.n_aug)
                }
                (SweepMode::MultiPolicy, AugStrategy::Mval) => {
                    let env = pi_max_finite(&targets)?;
                    AugPlan::single(mval_solve_multi(&env, &p_log, mix.alpha(), m)?, cfg.n_aug)
                }
                (SweepMode::MultiPolicy, AugStrategy::Precomputed) => {
                    let env = pi_max_finite(&targets)?;
                    let params = learner::precomputed_mval_fit(&world.features, &p_log, &env, m, mix.alpha(), fit)?;
                    AugPlan::single(learner::policy_from_params(&params, &world.features)?, cfg.n_aug)
                }
                (_, s) => AugPlan::single(augmentation_policy(s, &p_log, &targets[0], mix, &inputs)?, cfg.n_aug),
            };
            let reports = run_trials_multi(&world.env, &p_log, &targets, &plan, strategy.name(), &trial_cfg)?;
            Ok(reports.iter().map(|r| r.empirical_variance).sum::<f64>() / reports.len() as f64)
        })
        .collect()
}

pub fn run_sweep(cfg: &SweepConfig) -> Result<SweepReport> {
    cfg.validate()?;
    let world = synthetic_world(&cfg.world_config())?;
    let m = moment_model(cfg, &world)?;
    let strategies = cfg.strategies();
    let grid = cfg.grid();

    let jobs: Vec<(usize, usize)> = (0..grid.len())
        .flat_map(|g| (0..cfg.repeats).map(move |r| (g, r)))
        .collect();
    let cells = jobs
        .par_iter()
        .map(|&(g, r)| run_cell(cfg, &world, &m, g, r))
        .collect::<Result<Vec<_>>>()?;

    let mut points = Vec::with_capacity(grid.len() * strategies.len());
    for (g, &value) in grid.iter().enumerate() {
        for (s, &strategy) in strategies.iter().enumerate() {
            let vars: Vec<f64> = (0..cfg.repeats).map(|r| cells[g * cfg.repeats + r][s]).collect();
            let n = vars.len() as f64;
            let variance = vars.iter().sum::<f64>() / n;
            let stderr = if vars.len() > 1 {
                let ss: f64 = vars.iter().map(|v| (v - variance) * (v - variance)).sum();
                (ss / (n - 1.0)).sqrt() / n.sqrt()
            } else {
                0.0
            };
            points.push(SweepPoint {
                grid_value: value,
                strategy,
                repeat_variances: vars,
                variance,
                stderr,
            });
        }
    }
    Ok(SweepReport { mode: cfg.mode, points })
}
