//! Closed-form variances of the IPS and balanced estimators next to the
//! exact enumeration oracle and a Monte-Carlo estimate, on a tiny problem.
//!
//! cargo run --release --example closed_forms

use mval::estimators::{balanced_variance_closed_form, ips_variance_closed_form};
use mval::oracle::{exact_estimator_moments, EstimatorKind, SamplingDesign};
use mval::sim::{run_trials_with, TrialConfig};
use mval::{second_moment, true_utility, Environment, MixProfile, Policy};

fn main() -> mval::Result<()> {
    let env = Environment::new(
        vec![0.3, 0.7],
        &[vec![0.2, 0.6, 0.9], vec![0.5, 0.1, 0.4]],
        mval::RewardKind::Bernoulli,
    )?;
    let p_log = Policy::new(&[vec![0.7, 0.2, 0.1], vec![0.1, 0.1, 0.8]])?;
    let target = Policy::new(&[vec![0.1, 0.3, 0.6], vec![0.6, 0.3, 0.1]])?;
    let p_aug = Policy::uniform(2, 3);
    let mix = MixProfile::new(24, 8)?;
    let m = second_moment(&env);

    println!("true utility {:.6}", true_utility(&target, &env)?);
    let bal = balanced_variance_closed_form(&target, &p_log, &p_aug, mix, &m, &env)?;
    let ips = ips_variance_closed_form(&target, &p_log, &p_aug, mix, &m, &env)?;
    println!("closed form   balanced {:.6e}   ips {:.6e}", bal.value, ips.value);

    for design in [SamplingDesign::Mixture, SamplingDesign::Stratified] {
        let b = exact_estimator_moments(&env, &target, &p_log, &p_aug, mix, EstimatorKind::Balanced, design)?;
        let i = exact_estimator_moments(&env, &target, &p_log, &p_aug, mix, EstimatorKind::Ips, design)?;
        println!("exact {design:<10?} balanced {:.6e}   ips {:.6e}", b.variance, i.variance);
    }

    for design in [SamplingDesign::Mixture, SamplingDesign::Stratified] {
        let cfg = TrialConfig {
            design,
            ..TrialConfig::new(mix.n_log(), mix.n_aug(), 50_000, 11)
        };
        let r = run_trials_with(&env, &p_log, &target, &p_aug, "uniform", &cfg)?;
        println!(
            "monte-carlo {design:<10?} balanced {:.6e} ± {:.1e}   mean {:.6}",
            r.empirical_variance, r.stderr, r.mean
        );
    }
    Ok(())
}
