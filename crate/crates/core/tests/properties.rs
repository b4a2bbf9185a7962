use proptest::prelude::*;
use shift_core::factor::{canonicalize, FactorModel, Link, LinkSpec, TaskLoadings};
use shift_core::markov::{brute_force_posterior, forward_backward, HmmParams, TransitionCoef};
use shift_core::metrics::relative_bias;
use shift_core::quadrature::gauss_hermite;
use shift_core::tasks::{ft_drift, q_update, FtParams, QTable};
use shift_core::wiener::{choice_probability, log_density, DdmParams};

fn hmm_strategy(p: usize) -> impl Strategy<Value = HmmParams> {
    let coef = (-3.0..3.0f64, prop::collection::vec(-2.0..2.0f64, p))
        .prop_map(|(intercept, slopes)| TransitionCoef { intercept, slopes });
    (0.02..0.98f64, coef.clone(), coef).prop_map(|(pi, a, b)| HmmParams::new(pi, a, b))
}

fn chain_case(max_len: usize) -> impl Strategy<Value = (HmmParams, Vec<f64>, Vec<[f64; 2]>)> {
    (0usize..=2).prop_flat_map(move |p| {
        (
            hmm_strategy(p),
            prop::collection::vec(-1.5..1.5f64, p),
            prop::collection::vec([-9.0..3.0f64, -9.0..3.0f64], 1..=max_len),
        )
    })
}

fn ddm_strategy() -> impl Strategy<Value = DdmParams> {
    (0.3..3.0f64, 0.1..0.9f64, -4.0..4.0f64, 0.05..0.5f64).prop_map(|(a, b, v, t)| DdmParams::new(a, b, v, t).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn recursions_match_path_enumeration((h, x, le) in chain_case(12)) {
        let fb = forward_backward(&le, &h, &x).unwrap();
        let bf = brute_force_posterior(&le, &h, &x).unwrap();
        prop_assert!((fb.log_marginal - bf.log_marginal).abs() <= 1e-10 * bf.log_marginal.abs().max(1.0));
        for (a, b) in fb.zeta.iter().zip(&bf.zeta) {
            for l in 0..2 {
                prop_assert!((a[l] - b[l]).abs() <= 1e-10);
            }
        }
        for (a, b) in fb.xi.iter().zip(&bf.xi) {
            for l in 0..2 {
                for m in 0..2 {
                    prop_assert!((a[l][m] - b[l][m]).abs() <= 1e-10);
                }
            }
        }
    }

    #[test]
    fn pair_marginals_sum_to_single_marginals((h, x, le) in chain_case(40)) {
        let post = forward_backward(&le, &h, &x).unwrap();
        for (j, z) in post.zeta.iter().enumerate() {
            prop_assert!((z[0] + z[1] - 1.0).abs() <= 1e-12);
            prop_assert!(z.iter().all(|v| (0.0..=1.0).contains(v)));
            if let Some(xi) = post.xi.get(j) {
                for l in 0..2 {
                    prop_assert!((xi[l][0] + xi[l][1] - z[l]).abs() <= 1e-12);
                    prop_assert!((xi[0][l] + xi[1][l] - post.zeta[j + 1][l]).abs() <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn per_trial_offsets_shift_only_the_marginal((h, x, le) in chain_case(30), seed in any::<u64>()) {
        let offsets: Vec<f64> = (0..le.len()).map(|j| ((seed >> (j % 60)) & 0xff) as f64 - 128.0).collect();
        let shifted: Vec<[f64; 2]> = le.iter().zip(&offsets).map(|(e, c)| [e[0] + c, e[1] + c]).collect();
        let a = forward_backward(&le, &h, &x).unwrap();
        let b = forward_backward(&shifted, &h, &x).unwrap();
        let total: f64 = offsets.iter().sum();
        prop_assert!((b.log_marginal - a.log_marginal - total).abs() <= 1e-9 * (1.0 + total.abs() + a.log_marginal.abs()));
        for (za, zb) in a.zeta.iter().zip(&b.zeta) {
            prop_assert!((za[1] - zb[1]).abs() <= 1e-10);
        }
    }

    #[test]
    fn reflection_is_exact(p in ddm_strategy(), dt in 0.001..5.0f64) {
        let t = p.nondecision + dt;
        prop_assert_eq!(log_density(t, true, &p), log_density(t, false, &p.reflected()));
        prop_assert!((choice_probability(&p).unwrap() + choice_probability(&p.reflected()).unwrap() - 1.0).abs() <= 1e-14);
    }

    #[test]
    fn links_invert_each_other(v in 1e-3..0.999f64, eta in -20.0..20.0f64) {
        for link in [Link::Log, Link::Logit, Link::Identity] {
            let back = link.inverse(link.forward(v, 0).unwrap());
            prop_assert!((back - v).abs() <= 1e-12 * v.max(1.0), "{link:?}");
        }
        prop_assert!((Link::Identity.forward(Link::Identity.inverse(eta), 0).unwrap() - eta).abs() == 0.0);
        let l = Link::Log.forward(Link::Log.inverse(eta), 0).unwrap();
        prop_assert!((l - eta).abs() <= 1e-12 * eta.abs().max(1.0));
        if eta.abs() < 15.0 {
            let l = Link::Logit.forward(Link::Logit.inverse(eta), 2).unwrap();
            prop_assert!((l - eta).abs() <= 1e-9);
        }
    }

    #[test]
    fn canonical_form_preserves_every_predictor(
        psi in prop::collection::vec(-1.0..1.0f64, 12),
        mu in prop::collection::vec(-1.0..1.0f64, 6),
        f in prop::collection::vec(-2.0..2.0f64, 16),
    ) {
        let links = LinkSpec(vec![Link::Log, Link::Log, Link::Logit]);
        let task = |k: usize| {
            let mut t = TaskLoadings::new(mu[3 * k..3 * k + 3].to_vec(), 1, 2, vec![true; 3], links.clone());
            t.factor_load = vec![psi[6 * k..6 * k + 3].to_vec(), psi[6 * k + 3..6 * k + 6].to_vec()];
            t
        };
        let fm = FactorModel { n_factors: 2, tasks: vec![task(0), task(1)] };
        let factors: Vec<Vec<f64>> = f.chunks(2).map(<[f64]>::to_vec).collect();
        if let Ok((canon, scores)) = canonicalize(&fm, &factors) {
            let x = [0.5];
            for (i, fi) in factors.iter().enumerate() {
                for k in 0..2 {
                    let before = fm.tasks[k].linear_predictor(&x, fi);
                    let after = canon.tasks[k].linear_predictor(&x, &scores[i]);
                    for (a, b) in before.iter().zip(&after) {
                        prop_assert!((a - b).abs() <= 1e-10 * (1.0 + a.abs()));
                    }
                }
            }
            let (again, scores2) = canonicalize(&canon, &scores).unwrap();
            for (t1, t2) in canon.tasks.iter().zip(&again.tasks) {
                for (r1, r2) in t1.factor_load.iter().zip(&t2.factor_load) {
                    for (a, b) in r1.iter().zip(r2) {
                        prop_assert!((a - b).abs() <= 1e-10);
                    }
                }
            }
            for (a, b) in scores.iter().flatten().zip(scores2.iter().flatten()) {
                prop_assert!((a - b).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn quadratic_expectations_are_exact(n in 2usize..=10, m in -2.0..2.0f64, s in 0.05..3.0f64) {
        let rule = gauss_hermite(n, 1).unwrap();
        let got = rule.expectation(&[m], &[s], |f| f[0] * f[0]);
        prop_assert!((got - (m * m + s * s)).abs() <= 1e-12 * (1.0 + m * m + s * s));
        prop_assert!((rule.weights.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn relative_bias_is_scale_equivariant(
        est in prop::collection::vec(0.1..5.0f64, 2..20),
        truth in 0.1..5.0f64,
        c in prop_oneof![-10.0..-0.1f64, 0.1..10.0f64],
    ) {
        let scaled: Vec<f64> = est.iter().map(|v| c * v).collect();
        let a = relative_bias(&est, truth).unwrap();
        let b = relative_bias(&scaled, c * truth).unwrap();
        prop_assert!((a.value - b.value).abs() <= 1e-12 * (1.0 + a.value.abs()));
    }

    #[test]
    fn q_update_touches_one_cell(action in 0u8..2, stimulus in 0u8..2, reward in 0u8..2, b in 0.001..0.999f64,
                                 vals in [[0.0..1.0f64, 0.0..1.0f64], [0.0..1.0f64, 0.0..1.0f64]]) {
        let q = QTable { values: vals };
        let next = q_update(&q, action, stimulus, reward, b);
        let mut changed = 0;
        for a in 0..2u8 {
            for s in 0..2u8 {
                let d = (next.get(a, s) - q.get(a, s)).abs();
                if (a, s) != (action, stimulus) {
                    prop_assert_eq!(d, 0.0);
                } else if d > 0.0 {
                    changed += 1;
                    prop_assert!(d <= b + 1e-15);
                }
            }
        }
        prop_assert!(changed <= 1);
    }

    #[test]
    fn congruent_trials_are_easier(vc in 0.1..5.0f64, va in 0.1..3.0f64, rho in 0.01..0.99f64, a in 0.5..3.0f64, beta in 0.2..0.8f64) {
        let p = FtParams { drift_controlled: vc, drift_automatic: va, attenuation: rho, nondecision: 0.2 };
        for state in 0..2u8 {
            let prob = |s: u8| choice_probability(&DdmParams::new(a, beta, ft_drift(s, state, &p), 0.2).unwrap()).unwrap();
            prop_assert!(prob(1) > prob(0));
        }
    }
}
