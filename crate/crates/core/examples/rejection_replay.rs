//! Turning a uniformly logged dataset into a log of another policy by
//! rejection sampling, then evaluating a target on it.
//!
//! cargo run --release --example rejection_replay

use mval::estimators::balanced_estimate;
use mval::sim::{derive_target, rejection_sample, sample_logged_data};
use mval::{true_utility, Environment, MixProfile, Policy, Source};

fn main() -> mval::Result<()> {
    let env = Environment::bernoulli_uniform(&[
        vec![0.1, 0.5, 0.3, 0.8],
        vec![0.6, 0.2, 0.4, 0.1],
        vec![0.3, 0.3, 0.9, 0.2],
    ])?;
    let uniform = Policy::uniform(3, 4);
    let p_log = Policy::new(&[
        vec![0.1, 0.2, 0.2, 0.5],
        vec![0.4, 0.3, 0.2, 0.1],
        vec![0.25, 0.25, 0.25, 0.25],
    ])?;
    let target = derive_target(&p_log, 0.5, 2)?;

    let raw = sample_logged_data(&env, &uniform, 200_000, 1, Source::Log)?;
    let replayed = rejection_sample(&raw, &p_log, 2)?;
    println!("kept {} of {} uniform records", replayed.len(), raw.len());

    let mix = MixProfile::new(replayed.len(), 0)?;
    let est = balanced_estimate(&replayed, &target, &p_log, &p_log, mix)?;
    println!("estimate {:.5}  truth {:.5}", est.point_estimate, true_utility(&target, &env)?);
    Ok(())
}
