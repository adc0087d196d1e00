//! Oracles shared by the property tests and the acceptance suite. Each
//! check returns the number of failures together with a short description
//! of the worst case.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use spncs::bounds::{phi_transit_time, t_bound};
use spncs::design::LmiBlocks;
use spncs::hybridsim::{generate_schedule, Channel, InitialCondition, ScheduleMode, SchedulePolicy, SignalSpec, Signals, SimOptions};
use spncs::model::{g_delta_z, quasi_steady_plant, SystemModel};
use spncs::numerics::{lambda_max, norm, Matrix, SymMatrix};
use spncs::presets;
use spncs::protocols::{Channels, NodePartition, Protocol, ProtocolKind};

#[derive(Debug, Default)]
pub struct Check {
    pub cases: usize,
    pub failures: usize,
    pub worst: f64,
    pub note: String,
}

impl Check {
    pub fn ok(&self) -> bool {
        self.failures == 0 && self.cases > 0
    }

    fn record(&mut self, value: f64, pass: bool, note: impl FnOnce() -> String) {
        self.cases += 1;
        if value > self.worst || (!pass && self.failures == 0) {
            self.worst = self.worst.max(value);
            self.note = note();
        }
        if !pass {
            self.failures += 1;
        }
    }

    pub fn summary(&self) -> String {
        format!("{} cases, {} failures, worst {:.3e} ({})", self.cases, self.failures, self.worst, self.note)
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    // Box-Muller keeps this independent of the sampling code under test
    (0..n)
        .map(|_| {
            let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
            let u2: f64 = rng.gen();
            (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
        })
        .collect()
}

pub fn protocols_under_test() -> Vec<(String, Protocol)> {
    let mk = |k, dims: Vec<usize>| Protocol::new(k, NodePartition { dims }).unwrap();
    vec![
        ("zeroing[3]".into(), Protocol::zeroing(3)),
        ("rr[1,1]".into(), mk(ProtocolKind::RoundRobin, vec![1, 1])),
        ("rr[2,1,1]".into(), mk(ProtocolKind::RoundRobin, vec![2, 1, 1])),
        ("tod[1,1,1]".into(), mk(ProtocolKind::TryOnceDiscard, vec![1, 1, 1])),
        ("tod[2,2]".into(), mk(ProtocolKind::TryOnceDiscard, vec![2, 2])),
    ]
}

fn random_error(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let scale = 10f64.powf(rng.gen_range(-3.0..3.0));
    gaussian(rng, n).into_iter().map(|v| v * scale).collect()
}

/// `W(κ+1, h(κ,e)) ≤ λ W(κ,e)` on `samples` draws per protocol.
pub fn protocol_contraction(samples: usize, seed: u64) -> Check {
    let mut c = Check::default();
    let mut r = rng(seed);
    for (name, p) in protocols_under_test() {
        let cert = p.certificate();
        for _ in 0..samples {
            let kappa = r.gen_range(0..10_000u64);
            let e = random_error(&mut r, p.dim());
            let w = p.w_value(kappa, &e).unwrap();
            let (ep, _) = p.jump(kappa, &e).unwrap();
            let wp = p.w_value(kappa + 1, &ep).unwrap();
            let excess = (wp - cert.lambda * w) / w.max(1e-300);
            c.record(excess, excess <= 1e-12, || format!("{name} kappa={kappa}"));
        }
    }
    c
}

/// `a_W |e| ≤ W(κ,e) ≤ ā_W |e|`.
pub fn protocol_sandwich(samples: usize, seed: u64) -> Check {
    let mut c = Check::default();
    let mut r = rng(seed);
    for (name, p) in protocols_under_test() {
        let cert = p.certificate();
        for _ in 0..samples {
            let kappa = r.gen_range(0..10_000u64);
            let e = random_error(&mut r, p.dim());
            let w = p.w_value(kappa, &e).unwrap();
            let n = norm(&e);
            let excess = ((cert.aw_lower * n - w).max(w - cert.aw_upper * n)) / n;
            c.record(excess, excess <= 1e-12, || name.to_string());
        }
    }
    c
}

/// `|∂W/∂e| ≤ M` and agreement of the gradient with central differences.
pub fn protocol_gradient(samples: usize, seed: u64) -> Check {
    let mut c = Check::default();
    let mut r = rng(seed);
    for (name, p) in protocols_under_test() {
        let cert = p.certificate();
        for _ in 0..samples {
            let kappa = r.gen_range(0..10_000u64);
            let e: Vec<f64> = gaussian(&mut r, p.dim());
            let g = p.w_gradient(kappa, &e).unwrap();
            let bound_excess = norm(&g) - cert.m;
            let h = 1e-6;
            let mut fd_err: f64 = 0.0;
            for i in 0..e.len() {
                let (mut a, mut b) = (e.clone(), e.clone());
                a[i] += h;
                b[i] -= h;
                let fd = (p.w_value(kappa, &a).unwrap() - p.w_value(kappa, &b).unwrap()) / (2.0 * h);
                fd_err = fd_err.max((fd - g[i]).abs());
            }
            let worst = bound_excess.max(fd_err - 1e-6);
            c.record(worst, bound_excess <= 1e-12 && fd_err <= 1e-6, || format!("{name} |grad|-M={bound_excess:.2e} fd={fd_err:.2e}"));
        }
    }
    c
}

/// `∫_λ^{1/λ} dφ / (2Lφ + γ(φ² + 1))` by composite Simpson in `ln φ`.
pub fn transit_by_quadrature(l: f64, gamma: f64, lambda: f64) -> f64 {
    let n = 20_000;
    let (a, b) = (lambda.ln(), (1.0 / lambda).ln());
    let h = (b - a) / n as f64;
    let f = |s: f64| {
        let phi = s.exp();
        phi / (2.0 * l * phi + gamma * (phi * phi + 1.0))
    };
    let mut sum = f(a) + f(b);
    for k in 1..n {
        sum += f(a + k as f64 * h) * if k % 2 == 1 { 4.0 } else { 2.0 };
    }
    sum * h / 3.0
}

/// `T(L, γ, λ)` against the quadrature and the `φ` transit time.
pub fn t_duality(triples: usize, seed: u64) -> Check {
    let mut c = Check::default();
    let mut r = rng(seed);
    for i in 0..triples {
        let gamma = 10f64.powf(r.gen_range(-1.0..1.0));
        let l = match i % 5 {
            0 => 0.0,
            1 => gamma,
            _ => 10f64.powf(r.gen_range(-2.0..1.0)),
        };
        let lambda = r.gen_range(0.02..0.98);
        let t = t_bound(l, gamma, lambda).unwrap();
        let q = transit_by_quadrature(l, gamma, lambda);
        let ode = phi_transit_time(l, gamma, 0.0, lambda).unwrap();
        let rel = ((t - q).abs().max((t - ode).abs())) / q;
        c.record(rel, rel <= 1e-4, || format!("L={l:.3} gamma={gamma:.3} lambda={lambda:.3}"));
    }
    c
}

fn random_matrix(r: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| r.gen_range(-scale..scale))
}

fn random_blocks(r: &mut ChaCha8Rng) -> (LmiBlocks, SymMatrix, f64, f64) {
    let n = r.gen_range(1..=3);
    let m = r.gen_range(1..=3);
    let shift = r.gen_range(0.5..3.0);
    let a = &random_matrix(r, n, n, 1.0) - &Matrix::identity(n).scale(shift);
    let aw_lower = r.gen_range(0.5..1.0);
    let b = random_matrix(r, n, m, 1.0);
    let ah_rows = r.gen_range(1..=2);
    let blocks = LmiBlocks {
        a,
        b,
        ah: random_matrix(r, ah_rows, n, 0.5),
        aw_lower,
        aw_upper: aw_lower * r.gen_range(1.0..2.0),
    };
    let l = random_matrix(r, n, n, 1.0);
    let p = &(&l * &l.transpose()) + &Matrix::identity(n).scale(r.gen_range(0.05..1.0));
    let eta = if r.gen_bool(0.5) { 0.0 } else { r.gen_range(1e-4..0.3) };
    (blocks, SymMatrix::from_dense_symmetrized(&p), r.gen_range(1e-3..0.5), eta)
}

/// Upper end of the bisection bracket. Far beyond it the `γ²` entry swamps
/// the eigenvalue accuracy of the other blocks.
pub const GAMMA_CAP: f64 = 1e3;

/// Smallest `γ ≤ GAMMA_CAP` with `λ_max < 0`, by bisection on the eigenvalue
/// test.
pub fn gamma_by_bisection(b: &LmiBlocks, p: &SymMatrix, a_rho: f64, eta: f64) -> Option<f64> {
    let feasible = |g: f64| lambda_max(&b.assemble(p, a_rho, g, eta)).unwrap() < 0.0;
    let mut hi = 1.0;
    while !feasible(hi) {
        hi *= 2.0;
        if hi > GAMMA_CAP {
            return None;
        }
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if feasible(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo <= 1e-12 * hi {
            break;
        }
    }
    Some(hi)
}

/// Closed-form Schur `γ` against eigenvalue bisection on random blocks.
pub fn schur_vs_eigen(instances: usize, seed: u64) -> Check {
    let mut c = Check::default();
    let mut r = rng(seed);
    let mut feasible = 0;
    while c.cases < instances {
        let (b, p, a_rho, eta) = random_blocks(&mut r);
        let schur = b.schur_gamma(&p, a_rho, eta).filter(|g| *g <= 0.5 * GAMMA_CAP);
        let bis = gamma_by_bisection(&b, &p, a_rho, eta);
        match (schur, bis) {
            (Some(g), Some(h)) => {
                feasible += 1;
                let rel = (g - h).abs() / g.max(1e-3);
                c.record(rel, rel <= 1e-5, || format!("schur {g:.6e} bisection {h:.6e}"));
            }
            (None, None) => c.record(0.0, true, String::new),
            (g, h) => c.record(f64::INFINITY, false, || format!("schur {g:?} vs bisection {h:?}")),
        }
    }
    if feasible < instances / 4 {
        c.failures += 1;
        c.note = format!("only {feasible} feasible instances");
    }
    c
}

/// `ε δ̇z` vanishes at `δz = H̄` with `e_f = 0`, and `z̄` solves
/// `A21 x + A22 z̄ + B2 u = 0`.
pub fn quasi_steady_residuals(cases: usize, seed: u64) -> Check {
    let p = presets::example_plant();
    let mut c = Check::default();
    let mut r = rng(seed);
    for _ in 0..cases {
        let g = presets::example_gains(r.gen_range(-0.5..0.5), r.gen_range(-0.5..0.5), r.gen_range(-0.5..0.5));
        let Ok(m) = SystemModel::new(p.clone(), g.clone()) else { continue };
        let v = |r: &mut ChaCha8Rng, n| (0..n).map(|_| r.gen_range(-1.0..1.0)).collect::<Vec<f64>>();
        let (dx, eys, eus, v1, v2) = (v(&mut r, 2), v(&mut r, 1), v(&mut r, 1), v(&mut r, 1), v(&mut r, 1));
        let h = m.hbar.eval(&dx, &eys, &eus, &v1, &v2);
        let res = norm(&g_delta_z(&p, &g, &dx, &eys, &eus, &h, &[0.0], &v1, &v2));
        c.record(res, res <= 1e-9, || "H-bar".into());

        let (xp, us) = (v(&mut r, 2), v(&mut r, 1));
        let zbar = quasi_steady_plant(&p, &xp, &us).unwrap();
        let mut lhs = p.a21.mul_vec(&xp);
        p.a22.mul_vec_acc(&zbar, &mut lhs);
        p.b2.mul_vec_acc(&us, &mut lhs);
        let res = norm(&lhs);
        c.record(res, res <= 1e-9, || "quasi-steady plant".into());
    }
    c
}

pub fn example_policy(mode: ScheduleMode, seed: u64) -> SchedulePolicy {
    SchedulePolicy { mode, tau_mati_s: 0.13, tau_miati_s: presets::TAU_MIATI_S, tau_mati_f: 7e-3, tau_miati_f: None, seed }
}

pub fn example_initial() -> InitialCondition {
    InitialCondition { xp: presets::XP0.to_vec(), zp: presets::ZP0.to_vec(), xo: None, zo: None }
}

pub fn example_model() -> SystemModel {
    SystemModel::new(presets::example_plant(), presets::reference_gains()).unwrap()
}

pub fn ramp_with_noise() -> Signals {
    Signals {
        us: vec![SignalSpec::Ramp { slope: 1.0, offset: 0.0 }],
        v1: vec![SignalSpec::Sinusoid { amplitude: 0.04, omega: 25.0, phase: 0.0 }],
        v2: vec![SignalSpec::Sinusoid { amplitude: 0.01, omega: 40.0, phase: 0.3 }],
    }
}

/// Halve the RK4 step on the example run and compare every sample taken at
/// an event instant, excluding counters and timers.
pub fn rk4_refinement(horizon: f64) -> Check {
    let m = example_model();
    let ch = Channels::zeroing(&m.plant);
    let pol = example_policy(ScheduleMode::Periodic, 0);
    let sig = ramp_with_noise();
    let run = |scale: f64| {
        spncs::hybridsim::simulate(&m, &ch, &pol, &sig, &example_initial(), horizon, &SimOptions { record_dt: 1e9, step_scale: scale })
            .unwrap()
    };
    let (coarse, fine) = (run(1.0), run(0.5));
    let l = &m.layout;
    let skip = [l.tau_s, l.kappa_s, l.tau_f, l.kappa_f];
    let mut c = Check::default();
    assert_eq!(coarse.samples.len(), fine.samples.len());
    for (a, b) in coarse.samples.iter().zip(&fine.samples) {
        assert!(a.t == b.t && a.j == b.j);
        let dyn_idx = (0..l.len).filter(|i| !skip.contains(i));
        let (mut diff, mut size): (f64, f64) = (0.0, 0.0);
        for i in dyn_idx {
            diff = diff.max((a.state[i] - b.state[i]).abs());
            size = size.max(b.state[i].abs());
        }
        let rel = diff / size.max(1e-12);
        c.record(rel, rel <= 1e-7, || format!("t={} j={}", a.t, a.j));
    }
    c
}

/// Gap bounds on random schedules, checked independently of the library.
pub fn schedule_gaps(schedules: usize, seed: u64) -> Check {
    let mut c = Check::default();
    let mut r = rng(seed);
    for _ in 0..schedules {
        let tau_mati_f = r.gen_range(1e-3..2e-2);
        let miati_f = tau_mati_f * r.gen_range(0.05..0.25);
        let tau_mati_s = tau_mati_f * r.gen_range(20.0..60.0);
        let tau_miati_s = r.gen_range(1e-5..0.5 * tau_mati_s);
        let mode = if r.gen_bool(0.8) { ScheduleMode::UniformRandom } else { ScheduleMode::Periodic };
        let pol = SchedulePolicy { mode, tau_mati_s, tau_miati_s, tau_mati_f, tau_miati_f: Some(miati_f), seed: r.gen() };
        let horizon = 20.0 * tau_mati_s;
        let events = match generate_schedule(&pol, horizon) {
            Ok(ev) => ev,
            Err(e) => {
                c.record(f64::INFINITY, false, || format!("{e}"));
                continue;
            }
        };
        let mut worst: f64 = 0.0;
        let mut last = [0.0f64; 2];
        let mut prev: Option<f64> = None;
        for e in &events {
            let (k, lo, hi) = match e.channel {
                Channel::Slow => (0, tau_miati_s, tau_mati_s),
                Channel::Fast => (1, miati_f, tau_mati_f),
            };
            let g = e.t - last[k];
            worst = worst.max(lo - g).max(g - hi);
            if let Some(p) = prev {
                worst = worst.max(miati_f - (e.t - p));
            }
            last[k] = e.t;
            prev = Some(e.t);
        }
        // both channels must keep transmitting until the horizon
        worst = worst.max(horizon - last[0] - tau_mati_s).max(horizon - last[1] - tau_mati_f);
        c.record(worst, worst <= 1e-12, || format!("{pol:?}"));
    }
    c
}
