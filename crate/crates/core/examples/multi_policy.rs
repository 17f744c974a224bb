//! Augmenting for a whole class of targets: solve against the class
//! envelope and compare with round-robin over the members and uniform
//! augmentation, on shared logged records.
//!
//! cargo run --release --example multi_policy

use mval::policyclass::{mval_solve_multi, pi_max_finite, variance_bound};
use mval::sim::{
    derive_target, generate_scored_policy, run_trials_multi, synthetic_world, AugPlan, PolicyGenConfig,
    SyntheticConfig, TrialConfig,
};
use mval::{MixProfile, Policy, SecondMomentModel};

fn main() -> mval::Result<()> {
    let world = synthetic_world(&SyntheticConfig { seed: 5, ..Default::default() })?;
    let (k, d) = world.env.shape();
    let gen = PolicyGenConfig { eta: 4.0, seed: 5, ..Default::default() };
    let p_log = generate_scored_policy(&world.features, &gen)?.policy;
    let targets = [2, 3, 4]
        .iter()
        .map(|&rank| derive_target(&p_log, 0.4, rank))
        .collect::<mval::Result<Vec<_>>>()?;

    let mix = MixProfile::new(900, 100)?;
    // rewards are unknown at planning time
    let m = SecondMomentModel::uniform(k, d, 1.0)?;
    let envelope = pi_max_finite(&targets)?;
    let mval_aug = mval_solve_multi(&envelope, &p_log, mix.alpha(), &m)?;

    let plans = [
        ("mval", AugPlan::single(mval_aug, mix.n_aug())),
        ("round_robin", AugPlan::round_robin(&targets, mix.n_aug())?),
        ("uniform", AugPlan::single(Policy::uniform(k, d), mix.n_aug())),
    ];
    let cfg = TrialConfig::new(mix.n_log(), mix.n_aug(), 400, 17);
    let exact_m = mval::second_moment(&world.env);
    println!("{:<12} {:>12} {:>12} {:>12} {:>12}", "strategy", "rank 2", "rank 3", "rank 4", "bound");
    for (name, plan) in &plans {
        let reports = run_trials_multi(&world.env, &p_log, &targets, plan, name, &cfg)?;
        let bound = variance_bound(&envelope, &p_log, &plan.pooled()?, mix, &exact_m, &world.env)?;
        print!("{name:<12}");
        for r in &reports {
            print!(" {:>12.4e}", r.empirical_variance);
        }
        println!(" {bound:>12.4e}");
    }
    Ok(())
}
