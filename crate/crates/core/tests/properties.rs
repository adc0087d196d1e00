mod common;

use common::*;
use spncs::bounds::{interconnection_constants, slow_jump_lambdas, InterconnectionInputs};
use spncs::exec::Exec;
use spncs::hybridsim::{hybrid_sup_norm, simulate, ScheduleMode, SignalSpec, Signals, SimOptions};
use spncs::presets;
use spncs::protocols::Channels;

fn assert_check(name: &str, c: Check) {
    assert!(c.ok(), "{name}: {}", c.summary());
}

#[test]
fn protocol_contraction_on_random_errors() {
    assert_check("contraction", protocol_contraction(10_000, 1));
}

#[test]
fn protocol_sandwich_on_random_errors() {
    assert_check("sandwich", protocol_sandwich(10_000, 2));
}

#[test]
fn protocol_gradient_bound_and_finite_differences() {
    assert_check("gradient", protocol_gradient(10_000, 3));
}

#[test]
fn mati_formula_matches_transit_time() {
    assert_check("duality", t_duality(100, 4));
}

#[test]
fn schur_gamma_matches_eigenvalue_bisection() {
    assert_check("schur", schur_vs_eigen(500, 5));
}

#[test]
fn quasi_steady_maps_have_tiny_residuals() {
    assert_check("residuals", quasi_steady_residuals(200, 6));
}

#[test]
fn halving_the_step_barely_moves_the_trajectory() {
    assert_check("rk4", rk4_refinement(10.0));
}

#[test]
fn random_schedules_respect_interval_bounds() {
    assert_check("schedule", schedule_gaps(10_000, 7));
}

#[test]
fn sampled_constants_are_stable_across_seeds() {
    let m = example_model();
    let ch = Channels::zeroing(&m.plant);
    let pf = presets::published_pf();
    let ps = presets::published_ps();
    let mut lambdas = Vec::new();
    let mut bs = Vec::new();
    for seed in [11, 22, 33] {
        lambdas.push(slow_jump_lambdas(&m, &pf, &ch.slow, 50_000, 0, seed, Exec::Sequential).unwrap().lambda);
        let inter = interconnection_constants(
            &InterconnectionInputs {
                model: &m,
                ps: &ps,
                pf: &pf,
                gamma_s: presets::PUBLISHED_GAMMA_S,
                gamma_f: presets::PUBLISHED_GAMMA_F,
                lambda_s_star: presets::LAMBDA_S_STAR,
                lambda_f_star: presets::LAMBDA_F_STAR,
                slow: &ch.slow,
                fast: &ch.fast,
            },
            50_000,
            0,
            seed,
            Exec::Sequential,
        )
        .unwrap();
        bs.push([inter.b1, inter.b2, inter.b3]);
    }
    let spread = |vals: &[f64]| {
        let hi = vals.iter().copied().fold(f64::MIN, f64::max);
        let lo = vals.iter().copied().fold(f64::MAX, f64::min);
        if hi == 0.0 { 0.0 } else { (hi - lo) / hi }
    };
    for k in 0..5 {
        let v: Vec<f64> = lambdas.iter().map(|l| l[k]).collect();
        assert!(spread(&v) < 0.02, "lambda{} {:?}", k + 1, v);
    }
    for k in 0..3 {
        let v: Vec<f64> = bs.iter().map(|b| b[k]).collect();
        assert!(spread(&v) < 0.02, "b{} {:?}", k + 1, v);
    }
}

#[test]
fn sup_norm_of_sinusoid_on_recorded_grid() {
    let m = example_model();
    let ch = Channels::zeroing(&m.plant);
    let sig = Signals { v1: vec![SignalSpec::Sinusoid { amplitude: 0.04, omega: 25.0, phase: 0.0 }], ..Default::default() };
    let tr = simulate(&m, &ch, &example_policy(ScheduleMode::Periodic, 0), &sig, &example_initial(), 0.5, &SimOptions::default()).unwrap();
    let vals: Vec<(f64, u64, f64)> = tr.samples.iter().map(|s| (s.t, s.j, sig.v1(&m, s.t)[0])).collect();
    let last = tr.last();
    let sup = hybrid_sup_norm(&vals, (last.t, last.j));
    assert!((sup - 0.04).abs() < 0.04 * 25.0 * 25.0 * 1e-6 + 1e-6, "{sup}");
    let early = hybrid_sup_norm(&vals, (0.0, 0));
    assert_eq!(early, 0.0);
}

#[test]
fn uniform_random_simulation_is_deterministic_per_seed() {
    let m = example_model();
    let ch = Channels::zeroing(&m.plant);
    let sig = ramp_with_noise();
    let run = |seed| simulate(&m, &ch, &example_policy(ScheduleMode::UniformRandom, seed), &sig, &example_initial(), 1.0, &SimOptions::default()).unwrap();
    let (a, b, c) = (run(5), run(5), run(6));
    assert_eq!(a, b);
    assert_ne!(a.events, c.events);
}

#[test]
fn distance_ignores_free_coordinates() {
    let m = example_model();
    let l = &m.layout;
    let mut x = vec![0.0; l.len];
    x[l.dx.start] = 0.3;
    x[l.ef.start] = -0.4;
    let base = spncs::hybridsim::distance_to_attractor(l, &x);
    for i in [l.tau_s, l.kappa_s, l.tau_f, l.kappa_f, l.v1h.start, l.v2h.start, l.xp.start, l.zp.start, l.eps.start, l.epf.start] {
        let mut y = x.clone();
        y[i] = 17.0;
        assert_eq!(spncs::hybridsim::distance_to_attractor(l, &y), base);
    }
    assert!((base - 0.5).abs() < 1e-15);
}

