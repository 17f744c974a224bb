//! Learning a policy by maximizing the balanced value estimate on logged
//! plus augmented records.
//!
//! cargo run --release --example erm_learning

use mval::learner::{erm_balanced_fit, policy_from_params, FitConfig};
use mval::sim::{derive_target, generate_scored_policy, sample_logged_data, synthetic_world, PolicyGenConfig, SyntheticConfig};
use mval::{mval_policy, true_utility, MixProfile, Policy, SecondMomentModel, Source};

fn main() -> mval::Result<()> {
    let world = synthetic_world(&SyntheticConfig { contexts: 40, max_mean: 0.5, seed: 3, ..Default::default() })?;
    let (k, d) = world.env.shape();
    let p_log = generate_scored_policy(&world.features, &PolicyGenConfig { eta: 2.0, seed: 3, ..Default::default() })?.policy;
    let target = derive_target(&p_log, 0.4, 2)?;
    let mix = MixProfile::new(4000, 1000)?;

    let m = SecondMomentModel::uniform(k, d, 1.0)?;
    let augmenters = [
        ("mval", mval_policy(&target, &p_log, &m, mix.alpha())?.0),
        ("uniform", Policy::uniform(k, d)),
        ("target", target.clone()),
    ];
    println!("logging policy utility {:.4}", true_utility(&p_log, &world.env)?);
    for (name, p_aug) in &augmenters {
        let mut data = sample_logged_data(&world.env, &p_log, mix.n_log(), 10, Source::Log)?;
        data.extend(sample_logged_data(&world.env, p_aug, mix.n_aug(), 11, Source::Aug)?)?;
        let params = erm_balanced_fit(&data, &p_log, p_aug, mix, &world.features, FitConfig { steps: 200, ..Default::default() })?;
        let learned = policy_from_params(&params, &world.features)?;
        println!(
            "augment with {name:<8} estimate {:.4}  true utility {:.4}",
            params.training_log.last().copied().unwrap_or(f64::NAN),
            true_utility(&learned, &world.env)?
        );
    }
    Ok(())
}
