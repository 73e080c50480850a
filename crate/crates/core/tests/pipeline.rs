use sfrd::bounds::{bernoulli_lower_profile, growth_envelope, j0, tau_lower_bound, tau_upper_bound};
use sfrd::config::Profile;
use sfrd::model::GridSpec;
use sfrd::montecarlo::{parameter_sweep, run_ensemble, run_ensemble_on, with_workers, Setup, SweepAxis};
use sfrd::operator::semigroup_sup_norm_profile;
use sfrd::presets;
use sfrd::seeding::derive_seed;
use sfrd::simulator::{simulate_realization, simulate_transformed, TransformVariant};

#[test]
fn noiseless_ensemble_has_no_spread() {
    let cfg = presets::deterministic_blowup(Profile::Desk);
    let ens = run_ensemble(&cfg.model, &cfg.grid, &cfg.ic, 8, 3).unwrap();
    assert_eq!(ens.stats.p_hat, 1.0);
    assert_eq!(ens.stats.var_tau, Some(0.0));
    assert_eq!(ens.stats.se_phat, 0.0);
}

#[test]
fn single_quiet_realization() {
    let mut cfg = presets::decay();
    cfg.grid = GridSpec::new(101, 500, 1.0);
    let ens = run_ensemble(&cfg.model, &cfg.grid, &cfg.ic, 1, 3).unwrap();
    assert_eq!(ens.stats.p_hat, 0.0);
    assert_eq!(ens.stats.mean_tau, None);
    assert_eq!(ens.stats.var_tau, None);
}

#[test]
fn ensemble_stats_ignore_worker_count() {
    let mut cfg = presets::baseline(Profile::Desk);
    cfg.model.delta = 5.0;
    cfg.grid.n = 400;
    let setup = Setup::new(&cfg.model, &cfg.grid, &cfg.ic).unwrap();
    let runs: Vec<_> = [1, 4, 8]
        .iter()
        .map(|w| with_workers(*w, || run_ensemble_on(&setup, 60, 11).unwrap()).unwrap())
        .collect();
    assert!(runs.windows(2).all(|w| w[0] == w[1]));
}

#[test]
fn blowup_probability_grows_with_bump() {
    let mut cfg = presets::baseline(Profile::Desk);
    cfg.grid.n = 500;
    let rows = parameter_sweep(&cfg.model, &cfg.grid, &cfg.ic, SweepAxis::C, &presets::C_VALUES, 100, 4).unwrap();
    let p: Vec<f64> = rows.iter().map(|r| r.result.as_ref().unwrap().p_hat).collect();
    assert!(p.windows(2).all(|w| w[1] >= w[0]), "{p:?}");
}

#[test]
fn decay_history_ends_below_start() {
    let cfg = presets::decay();
    let setup = Setup::new(&cfg.model, &cfg.grid, &cfg.ic).unwrap();
    let path = setup.sampler().unwrap().sample(1);
    let r = simulate_realization(&cfg.model, &cfg.grid, &setup.solver, &path, &setup.f, None).unwrap();
    assert!(!r.record.blew_up);
    assert!(r.record.sup_final() < r.record.sup_history[0]);
}

#[test]
fn transformed_solution_sits_between_the_envelopes() {
    let cfg = presets::bracketing();
    let setup = Setup::new(&cfg.model, &cfg.grid, &cfg.ic).unwrap();
    let times = cfg.grid.times();
    let profile = semigroup_sup_norm_profile(&setup.op, cfg.model.gamma, &times).unwrap();
    let sampler = setup.sampler().unwrap();
    let f_sup = setup.f.iter().cloned().fold(0.0, f64::max);
    let jz = j0(&setup.f, &setup.eig);
    let dt = cfg.grid.dt();
    for i in 0..10 {
        let path = sampler.sample(derive_seed(21, i));
        let r = simulate_transformed(&cfg.model, &cfg.grid, &setup.solver, &path, &setup.f, TransformVariant::FbmS1, Some(1))
            .unwrap();
        let traj = r.trajectory.unwrap();
        let lo_hit = tau_lower_bound(&path, &profile, &cfg.model, f_sup, 1.0).unwrap().time.unwrap();
        let up_hit = tau_upper_bound(&path, &setup.eig, &cfg.model, &setup.f, cfg.bounds.b, 1.0).unwrap().hitting.time.unwrap();
        let end = lo_hit.min(up_hit) - 2.0 * dt;
        let upper = growth_envelope(&path, &profile, &cfg.model, f_sup, end).unwrap();
        let lower = bernoulli_lower_profile(&path, &setup.eig, &cfg.model, jz, end).unwrap();
        for (n, u) in traj.fields.iter().enumerate().take(upper.upper.len()) {
            let scale = (-cfg.model.sigma * path.values[n]).exp();
            let v_sup = u.iter().fold(0.0f64, |m, x| m.max(x.abs())) * scale;
            let tol = 1e-6 * v_sup.max(1.0);
            assert!(lower[n] - tol <= v_sup, "path {i} step {n}: {} > {v_sup}", lower[n]);
            assert!(v_sup <= upper.upper[n] + tol, "path {i} step {n}: {v_sup} > {}", upper.upper[n]);
        }
    }
}
