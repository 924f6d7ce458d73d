mod common;

use common::{max_rel_diff, random_classical_model, two_filter};
use qsmooth_core::estimation::{run_filter, run_retrofilter, smooth, solve_riccati, Channels};
use qsmooth_core::trajectory::{default_dt, simulate_true, SimSettings};

#[test]
fn reference_riccati_agrees_with_integrator() {
    for seed in 0..20 {
        let model = random_classical_model(seed);
        let sol = solve_riccati(&model, Channels::AliceAndBob).unwrap();
        let v = common::kleinman(&model.a_mat, &model.q_mat, &[model.alice(), model.bob()]);
        let diff = (v - sol.v_true).abs().max() / v.abs().max();
        assert!(diff < 1e-10, "seed {seed}: {diff:e}");
    }
}

#[test]
fn smoother_matches_two_filter_reference() {
    for seed in 0..10 {
        let model = random_classical_model(100 + seed);
        let sol = solve_riccati(&model, Channels::AliceAndBob).unwrap();
        let dt = default_dt(&model);
        let (_, record) =
            simulate_true(&model, &sol.v_true, &SimSettings::new(40.0, dt, seed)).unwrap();
        let reference = two_filter(&model, &record);

        let filtered = run_filter(&model, &record, &sol).unwrap();
        let retro = run_retrofilter(&model, &record, &sol).unwrap();
        let smoothed = smooth(&filtered, &retro, &sol).unwrap();

        let df = max_rel_diff(&filtered.means, &reference.x_f);
        let ds = max_rel_diff(&smoothed.means, &reference.x_s);
        assert!(
            df < 1e-8 && ds < 1e-8,
            "seed {seed}: filter {df:e}, smoother {ds:e}"
        );
    }
}
