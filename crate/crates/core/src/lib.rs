//! Minimum-variance augmentation logging for off-policy evaluation in
//! contextual bandits.
//!
//! Given an existing log collected by `π_old` and a budget of `n_aug` fresh
//! samples, pick the augmentation policy `π_aug` that minimizes the variance
//! of the balanced (multiple importance sampling) estimate of a target
//! policy's value, or of a whole class of targets.
//!
//! * [`policy`], [`env`], [`data`]: tables, ground truth and logged records.
//! * [`estimators`]: IPS and balanced estimators with closed-form variances.
//! * [`oracle`]: exact estimator moments by enumeration.
//! * [`solver`]: the per-context water-filling solver and a grid oracle.
//! * [`policyclass`]: `π_max` envelopes and class-level augmentation.
//! * [`learner`]: linear-softmax policies fitted to the variance objective
//!   or to the balanced value estimate.
//! * [`sim`], [`sweep`]: synthetic experiments.
//! * [`io`], [`cli`], [`checks`]: file formats and the command-line tool.

pub mod checks;
pub mod cli;
pub mod data;
pub mod env;
pub mod error;
pub mod estimators;
pub mod io;
pub mod learner;
pub mod oracle;
pub mod policy;
pub mod policyclass;
pub mod sim;
pub mod solver;
pub mod sweep;

pub use data::{LoggedDataset, LoggedSample, Source};
pub use env::{second_moment, true_utility, Environment, RewardKind, SecondMomentModel};
pub use error::{MvalError, Result};
pub use policy::{mix_policies, MixProfile, Policy};
pub use solver::{mval_policy, mval_solve_context, ContextWeights};
