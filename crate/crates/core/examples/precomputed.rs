//! Fitting a linear-softmax augmentation policy to the variance objective
//! from action features, compared with the exact per-context solution.
//!
//! cargo run --release --example precomputed

use mval::estimators::balanced_variance_closed_form;
use mval::learner::{policy_from_params, precomputed_mval_fit, FitConfig};
use mval::sim::{derive_target, generate_scored_policy, synthetic_world, PolicyGenConfig, SyntheticConfig};
use mval::{mval_policy, second_moment, MixProfile, Policy};

fn main() -> mval::Result<()> {
    let world = synthetic_world(&SyntheticConfig { contexts: 50, seed: 8, ..Default::default() })?;
    let (k, d) = world.env.shape();
    let p_log = generate_scored_policy(&world.features, &PolicyGenConfig { eta: 4.0, seed: 8, ..Default::default() })?.policy;
    let target = derive_target(&p_log, 0.4, 2)?;
    let mix = MixProfile::new(900, 100)?;
    let m = second_moment(&world.env);

    let variance = |aug: &Policy| {
        balanced_variance_closed_form(&target, &p_log, aug, mix, &m, &world.env).map(|v| v.value)
    };
    let (exact, _) = mval_policy(&target, &p_log, &m, mix.alpha())?;
    println!("exact solver   {:.5e}", variance(&exact)?);
    println!("target         {:.5e}", variance(&target)?);
    println!("uniform        {:.5e}", variance(&Policy::uniform(k, d))?);

    for steps in [0, 10, 50, 200, 1000] {
        let params = precomputed_mval_fit(&world.features, &p_log, &target, &m, mix.alpha(), FitConfig { steps, ..Default::default() })?;
        let learned = policy_from_params(&params, &world.features)?;
        println!("fit {steps:>4} steps {:.5e}", variance(&learned)?);
    }
    Ok(())
}
