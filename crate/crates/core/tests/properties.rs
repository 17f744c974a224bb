use mval::estimators::{balanced_variance_closed_form, ips_variance_closed_form};
use mval::oracle::{exact_estimator_moments, EstimatorKind, SamplingDesign};
use mval::policyclass::{pi_max_finite, pi_max_trust_region, variance_bound};
use mval::solver::mval_objective;
use mval::{
    mix_policies, mval_policy, mval_solve_context, second_moment, true_utility, ContextWeights, Environment,
    MixProfile, Policy,
};
use proptest::prelude::*;

fn normalize(raw: Vec<f64>) -> Vec<f64> {
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / s).collect()
}

fn row(actions: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.01f64..1.0, actions).prop_map(normalize)
}

/// Rows that may put zero mass on some actions, but never on all of them.
fn sparse_row(actions: usize) -> impl Strategy<Value = Vec<f64>> {
    (prop::collection::vec(0.0f64..1.0, actions), 0..actions).prop_map(|(mut v, keep)| {
        for x in v.iter_mut() {
            if *x < 0.3 {
                *x = 0.0;
            }
        }
        v[keep] += 0.5;
        normalize(v)
    })
}

fn policy(contexts: usize, actions: usize) -> impl Strategy<Value = Policy> {
    prop::collection::vec(row(actions), contexts).prop_map(|rows| Policy::new(&rows).unwrap())
}

fn sparse_policy(contexts: usize, actions: usize) -> impl Strategy<Value = Policy> {
    prop::collection::vec(sparse_row(actions), contexts).prop_map(|rows| Policy::new(&rows).unwrap())
}

#[derive(Debug, Clone)]
struct Instance {
    env: Environment,
    target: Policy,
    old: Policy,
    aug: Policy,
    mix: MixProfile,
}

fn instance() -> impl Strategy<Value = Instance> {
    (1usize..=3, 2usize..=4).prop_flat_map(|(k, d)| {
        (
            row(k),
            prop::collection::vec(prop::collection::vec(0.05f64..0.95, d), k),
            policy(k, d),
            policy(k, d),
            policy(k, d),
            1usize..20,
            1usize..20,
        )
            .prop_map(|(probs, means, target, old, aug, nl, na)| Instance {
                env: Environment::new(probs, &means, mval::RewardKind::Bernoulli).unwrap(),
                target,
                old,
                aug,
                mix: MixProfile::new(nl, na).unwrap(),
            })
    })
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn mixed_rows_stay_on_simplex_between_inputs(p in policy(3, 4), q in policy(3, 4), nl in 0usize..30, na in 1usize..30) {
        let mix = MixProfile::new(nl, na).unwrap();
        let b = mix_policies(&p, &q, mix).unwrap();
        for x in 0..3 {
            let s: f64 = b.row(x).iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
            for a in 0..4 {
                let (lo, hi) = (p.prob(x, a).min(q.prob(x, a)), p.prob(x, a).max(q.prob(x, a)));
                prop_assert!(b.prob(x, a) >= lo - 1e-15 && b.prob(x, a) <= hi + 1e-15);
            }
        }
    }

    #[test]
    fn utility_is_linear_in_the_policy(inst in instance()) {
        let b = mix_policies(&inst.old, &inst.aug, inst.mix).unwrap();
        let a = inst.mix.alpha();
        let lhs = true_utility(&b, &inst.env).unwrap();
        let rhs = (1.0 - a) * true_utility(&inst.old, &inst.env).unwrap() + a * true_utility(&inst.aug, &inst.env).unwrap();
        prop_assert!(close(lhs, rhs, 1e-12));
    }

    #[test]
    fn closed_forms_match_exact_moments(inst in instance()) {
        let m = second_moment(&inst.env);
        let Instance { env, target, old, aug, mix } = &inst;
        let bal = balanced_variance_closed_form(target, old, aug, *mix, &m, env).unwrap().value;
        let exact = exact_estimator_moments(env, target, old, aug, *mix, EstimatorKind::Balanced, SamplingDesign::Mixture).unwrap();
        prop_assert!(close(bal, exact.variance, 1e-10));
        prop_assert!(close(exact.mean, exact.true_utility, 1e-12));

        let ips = ips_variance_closed_form(target, old, aug, *mix, &m, env).unwrap().value;
        let exact = exact_estimator_moments(env, target, old, aug, *mix, EstimatorKind::Ips, SamplingDesign::Stratified).unwrap();
        prop_assert!(close(ips, exact.variance, 1e-10));

        // fixed counts never add variance to the balanced estimator
        let strat = exact_estimator_moments(env, target, old, aug, *mix, EstimatorKind::Balanced, SamplingDesign::Stratified).unwrap();
        prop_assert!(strat.variance <= bal + 1e-12 * (1.0 + bal));
    }

    #[test]
    fn balanced_never_worse_than_ips(inst in instance()) {
        let m = second_moment(&inst.env);
        let Instance { env, target, old, aug, mix } = &inst;
        let bal = balanced_variance_closed_form(target, old, aug, *mix, &m, env).unwrap().value;
        let ips = ips_variance_closed_form(target, old, aug, *mix, &m, env).unwrap().value;
        prop_assert!(bal <= ips + 1e-12 * (1.0 + ips));
    }

    #[test]
    fn solver_beats_random_feasible_points(
        c in prop::collection::vec(0.0f64..1.0, 2..6),
        seed_rows in prop::collection::vec(prop::collection::vec(0.0f64..1.0, 6), 8),
        old_raw in prop::collection::vec(0.0f64..1.0, 6),
        alpha in 0.01f64..=1.0,
    ) {
        let d = c.len();
        let mut old = old_raw[..d].to_vec();
        old[0] += 0.1;
        let old = normalize(old);
        let w = ContextWeights::new(0, c.clone()).unwrap();
        let (pi, diag) = mval_solve_context(&w, &old, alpha).unwrap();
        prop_assert!(pi.iter().all(|&p| p >= 0.0));
        prop_assert!(diag.simplex_residual <= 1e-12);
        let best = mval_objective(&c, &old, alpha, &pi);
        for raw in &seed_rows {
            let mut r = raw[..d].to_vec();
            r[0] += 1e-3;
            let other = normalize(r);
            let v = mval_objective(&c, &old, alpha, &other);
            prop_assert!(best <= v * (1.0 + 1e-9) + 1e-12, "{best} > {v}");
        }
    }

    #[test]
    fn objective_is_convex_along_segments(
        c in prop::collection::vec(0.0f64..1.0, 4),
        old in row(4),
        p in row(4),
        q in row(4),
        alpha in 0.05f64..=1.0,
        t in 0.0f64..=1.0,
    ) {
        let mid: Vec<f64> = p.iter().zip(&q).map(|(a, b)| (1.0 - t) * a + t * b).collect();
        let f = |x: &[f64]| mval_objective(&c, &old, alpha, x);
        let chord = (1.0 - t) * f(&p) + t * f(&q);
        prop_assert!(f(&mid) <= chord + 1e-10 * (1.0 + chord));
    }

    #[test]
    fn solved_policy_lowers_variance_vs_target_and_log(inst in instance()) {
        let m = second_moment(&inst.env);
        let Instance { env, target, old, mix, .. } = &inst;
        let (pi, _) = mval_policy(target, old, &m, mix.alpha()).unwrap();
        let v = |aug: &Policy| balanced_variance_closed_form(target, old, aug, *mix, &m, env).unwrap().value;
        let best = v(&pi);
        for other in [target, old, &inst.aug] {
            prop_assert!(best <= v(other) + 1e-10 * (1.0 + v(other)));
        }
    }

    #[test]
    fn envelope_dominates_members_and_bounds_variance(
        inst in instance(),
        extra in (1usize..4).prop_flat_map(|n| prop::collection::vec(sparse_policy(3, 4), n)),
    ) {
        let (k, d) = inst.env.shape();
        let m = second_moment(&inst.env);
        let mut members: Vec<Policy> = extra
            .into_iter()
            .map(|p| {
                let rows: Vec<Vec<f64>> = (0..k).map(|x| normalize(p.row(x)[..d].iter().map(|v| v + 1e-3).collect())).collect();
                Policy::new(&rows).unwrap()
            })
            .collect();
        members.push(inst.target.clone());
        let env_max = pi_max_finite(&members).unwrap();
        let bound = variance_bound(&env_max, &inst.old, &inst.aug, inst.mix, &m, &inst.env).unwrap();
        for p in &members {
            prop_assert!(env_max.dominates(p));
            let v = balanced_variance_closed_form(p, &inst.old, &inst.aug, inst.mix, &m, &inst.env).unwrap().value;
            prop_assert!(v <= bound + 1e-12);
        }
    }

    #[test]
    fn trust_region_envelope_grows_with_tau(p in policy(2, 4), t1 in 1.0f64..3.0, dt in 0.0f64..3.0) {
        let a = pi_max_trust_region(&p, t1).unwrap();
        let b = pi_max_trust_region(&p, t1 + dt).unwrap();
        prop_assert!(a.dominates(&p));
        for x in 0..2 {
            for i in 0..4 {
                prop_assert!(a.get(x, i) <= b.get(x, i) + 1e-15);
                prop_assert!(a.get(x, i) <= 1.0);
            }
        }
    }
}
