//! Step-level guarantees of the variational EM estimator on simulated data.

use shift_core::data::Dataset;
use shift_core::estimator::{
    e_step, elbo, fit_split, m_step_ddm, m_step_hmm, m_step_initial, update_variational, FitConfig, ModelParams, ModelSpec,
    NoObserver, Problem, VariationalState, PI_CLIP,
};
use shift_core::exec::Sequential;
use shift_core::simulator::{setting_preset, simulate_dataset, Preset};

fn small_study(preset: Preset, n: usize, seed: u64) -> (Dataset, ModelSpec, ModelParams) {
    let cfg = setting_preset(preset, n, seed);
    let (data, _) = simulate_dataset(&cfg).unwrap();
    (data, cfg.spec, cfg.true_params)
}

fn quick_config() -> FitConfig {
    FitConfig {
        quadrature_nodes: 3,
        restarts: 1,
        max_iterations: 30,
        ddm_max_iter: 60,
        ..FitConfig::default()
    }
}

#[test]
fn e_step_is_deterministic_and_normalized() {
    let (data, spec, params) = small_study(Preset::Setting1, 8, 3);
    let config = quick_config();
    let problem = Problem::new(&data, &spec, &config).unwrap();
    let var = VariationalState::prior(data.n_subjects(), 2);
    let a = e_step(&problem, &params, &var, &Sequential).unwrap();
    let b = e_step(&problem, &params, &var, &Sequential).unwrap();
    assert_eq!(a, b);
    for row in &a {
        for post in row {
            assert!(post.log_marginal.is_finite());
            for z in &post.zeta {
                assert!((z[0] + z[1] - 1.0).abs() < 1e-12);
            }
        }
    }
    let pi = m_step_initial(&a, 2);
    assert!(pi.iter().all(|p| (PI_CLIP..=1.0 - PI_CLIP).contains(p)));
    let hmm = m_step_hmm(&a, &data, &params.hmm).unwrap();
    assert_eq!(hmm.len(), 2);
    assert!(elbo(&problem, &params, &var, &a, &Sequential).is_finite());
}

#[test]
fn without_loadings_the_variational_posterior_is_the_prior() {
    let (data, spec, mut params) = small_study(Preset::Setting2, 4, 8);
    for t in &mut params.factor.tasks {
        for row in &mut t.factor_load {
            row.iter_mut().for_each(|v| *v = 0.0);
        }
    }
    let config = quick_config();
    let problem = Problem::new(&data, &spec, &config).unwrap();
    let mut var = VariationalState::prior(data.n_subjects(), 2);
    var.mean[0] = vec![0.8, -0.4];
    var.sd[0] = vec![0.5, 1.7];
    let post = e_step(&problem, &params, &var, &Sequential).unwrap();
    let up = update_variational(&problem, 0, &params, &var, &post[0]);
    for c in 0..2 {
        assert!(up.mean[c].abs() < 1e-5, "{:?}", up.mean);
        assert!((up.sd[c] - 1.0).abs() < 1e-5, "{:?}", up.sd);
    }
}

#[test]
fn emission_step_does_not_worsen_its_objective_and_keeps_structural_zeros() {
    let (data, mut spec, mut params) = small_study(Preset::Setting1, 10, 12);
    spec.shared_mask[1][2] = false;
    let fl = &mut params.factor.tasks[1];
    fl.shared_mask[2] = false;
    for row in &mut fl.factor_load {
        row[2] = 0.0;
    }
    let config = quick_config();
    let problem = Problem::new(&data, &spec, &config).unwrap();
    let var = VariationalState::prior(data.n_subjects(), 2);
    let post = e_step(&problem, &params, &var, &Sequential).unwrap();
    for k in 0..2 {
        let out = m_step_ddm(&problem, k, &params, &var, &post, 1.0, &Sequential);
        assert!(!out.failed);
        assert!(out.objective <= out.objective_before + 1e-9 * out.objective_before.abs());
        if k == 1 {
            assert!(out.loadings.factor_load.iter().all(|row| row[2] == 0.0));
        }
    }
}

#[test]
fn per_task_fit_has_a_monotone_trace() {
    let (data, spec, truth) = small_study(Preset::Setting2, 30, 40);
    let fits = fit_split(&data, &spec, &quick_config(), &Sequential, &mut NoObserver).unwrap();
    assert_eq!(fits.len(), 2);
    for fit in &fits {
        for w in fit.elbo_trace.windows(2).skip(3) {
            assert!(w[1] >= w[0] - 1e-3 * w[0].abs(), "{:?}", fit.elbo_trace);
        }
    }
    // flanker drifts are well identified even at this size
    let est = &fits[1].params.scalars[0];
    let tru = &truth.scalars[1];
    assert!((est[0] - tru[0]).abs() / tru[0] < 0.3, "{est:?}");
    assert!((est[3] - tru[3]).abs() < 0.05, "{est:?}");
}
