//! Plant and observer simulated in their own coordinates, with explicitly
//! held network values, against the error-coordinate simulator.

mod common;

use common::*;
use spncs::hybridsim::{generate_schedule, simulate, Channel, ScheduleMode, SimOptions, Signals};
use spncs::model::{PlantParams, SystemModel};
use spncs::numerics::{rk4_step, Matrix};
use spncs::protocols::Channels;

/// Raw state: `x_p, z_p, x_o, z_o` followed by the held values
/// `ŷ_ps, v̂1, ŷ_os, ŷ_pf, v̂2, ŷ_of, û`.
struct Raw<'a> {
    p: &'a PlantParams,
    m: &'a SystemModel,
    sig: &'a Signals,
}

const XP: usize = 0;
const ZP: usize = 2;
const XO: usize = 4;
const ZO: usize = 6;
const YPS: usize = 8;
const V1: usize = 9;
const YOS: usize = 10;
const YPF: usize = 11;
const V2: usize = 12;
const YOF: usize = 13;
const U: usize = 14;
const LEN: usize = 15;

fn mv(a: &Matrix, x: &[f64]) -> Vec<f64> {
    a.mul_vec(x)
}

impl Raw<'_> {
    fn y_s(&self, x: &[f64]) -> f64 {
        mv(&self.p.c1s, x)[0]
    }

    fn y_f(&self, x: &[f64], z: &[f64]) -> f64 {
        mv(&self.p.c2s, x)[0] + mv(&self.p.c2f, z)[0]
    }

    fn field(&self, t: f64, s: &[f64]) -> Vec<f64> {
        let (p, g) = (self.p, &self.m_gains());
        let u = self.sig.us(self.m, t);
        let (xp, zp, xo, zo) = (&s[XP..XP + 2], &s[ZP..ZP + 2], &s[XO..XO + 2], &s[ZO..ZO + 2]);
        let innov_s = [s[YPS] + s[V1] - s[YOS]];
        let innov_f = [s[YPF] + s[V2] - s[YOF]];
        let uh = [s[U]];
        let mut out = vec![0.0; LEN];
        let add = |dst: &mut [f64], v: Vec<f64>, k: f64| dst.iter_mut().zip(v).for_each(|(d, x)| *d += k * x);
        let eps = p.epsilon;
        add(&mut out[XP..XP + 2], mv(&p.a11, xp), 1.0);
        add(&mut out[XP..XP + 2], mv(&p.a12, zp), 1.0);
        add(&mut out[XP..XP + 2], mv(&p.b1, &u), 1.0);
        add(&mut out[ZP..ZP + 2], mv(&p.a21, xp), 1.0 / eps);
        add(&mut out[ZP..ZP + 2], mv(&p.a22, zp), 1.0 / eps);
        add(&mut out[ZP..ZP + 2], mv(&p.b2, &u), 1.0 / eps);
        add(&mut out[XO..XO + 2], mv(&p.a11, xo), 1.0);
        add(&mut out[XO..XO + 2], mv(&p.a12, zo), 1.0);
        add(&mut out[XO..XO + 2], mv(&p.b1, &uh), 1.0);
        add(&mut out[XO..XO + 2], mv(&g.l1s, &innov_s), 1.0);
        add(&mut out[XO..XO + 2], mv(&g.l1f, &innov_f), 1.0);
        add(&mut out[ZO..ZO + 2], mv(&p.a21, xo), 1.0 / eps);
        add(&mut out[ZO..ZO + 2], mv(&p.a22, zo), 1.0 / eps);
        add(&mut out[ZO..ZO + 2], mv(&p.b2, &uh), 1.0 / eps);
        add(&mut out[ZO..ZO + 2], mv(&g.l2s, &innov_s), 1.0 / eps);
        add(&mut out[ZO..ZO + 2], mv(&g.l2f, &innov_f), 1.0 / eps);
        out
    }

    fn m_gains(&self) -> spncs::model::ObserverGains {
        self.m.gains.clone()
    }

    fn slow_transmit(&self, t: f64, s: &mut [f64]) {
        s[YPS] = self.y_s(&s[XP..XP + 2]);
        s[V1] = self.sig.v1(self.m, t)[0];
        s[YOS] = self.y_s(&s[XO..XO + 2]);
        s[U] = self.sig.us(self.m, t)[0];
    }

    fn fast_transmit(&self, t: f64, s: &mut [f64]) {
        s[YPF] = self.y_f(&s[XP..XP + 2], &s[ZP..ZP + 2]);
        s[V2] = self.sig.v2(self.m, t)[0];
        s[YOF] = self.y_f(&s[XO..XO + 2], &s[ZO..ZO + 2]);
    }

    /// Error coordinates of the raw state at time `t`.
    fn to_error_coordinates(&self, t: f64, s: &[f64]) -> Vec<(std::ops::Range<usize>, Vec<f64>)> {
        let l = &self.m.layout;
        let (xp, zp, xo, zo) = (&s[XP..XP + 2], &s[ZP..ZP + 2], &s[XO..XO + 2], &s[ZO..ZO + 2]);
        let (yps, yos) = (self.y_s(xp), self.y_s(xo));
        let (ypf, yof) = (self.y_f(xp, zp), self.y_f(xo, zo));
        let (v1, v2, u) = (self.sig.v1(self.m, t)[0], self.sig.v2(self.m, t)[0], self.sig.us(self.m, t)[0]);
        let dx: Vec<f64> = (0..2).map(|i| xo[i] - xp[i]).collect();
        let eps = s[YPS] - yps;
        let eos = s[YOS] - yos;
        let eys = vec![eps - eos];
        let eus = vec![s[U] - u];
        let ef = vec![(s[YPF] - ypf) - (s[YOF] - yof)];
        let dz: Vec<f64> = (0..2).map(|i| zo[i] - zp[i]).collect();
        let h = self.m.hbar.eval(&dx, &eys, &eus, &[s[V1]], &[s[V2]]);
        let dy: Vec<f64> = (0..2).map(|i| dz[i] - h[i]).collect();
        vec![
            (l.dx.clone(), dx),
            (l.eys.clone(), eys),
            (l.eus.clone(), eus),
            (l.v1h.clone(), vec![s[V1]]),
            (l.xp.clone(), xp.to_vec()),
            (l.eps.clone(), vec![eps + s[V1] - v1]),
            (l.dy.clone(), dy),
            (l.ef.clone(), ef),
            (l.v2h.clone(), vec![s[V2]]),
            (l.zp.clone(), zp.to_vec()),
            (l.epf.clone(), vec![(s[YPF] - ypf) + s[V2] - v2]),
        ]
    }
}

fn run_cosim(m: SystemModel, sig: Signals, horizon: f64) -> f64 {
    let p = m.plant.clone();
    let ch = Channels::zeroing(&p);
    let pol = example_policy(ScheduleMode::UniformRandom, 9);
    let ic = example_initial();
    let traj = simulate(&m, &ch, &pol, &sig, &ic, horizon, &SimOptions { record_dt: 1e9, step_scale: 1.0 }).unwrap();
    let raw = Raw { p: &p, m: &m, sig: &sig };

    let mut s = vec![0.0; LEN];
    s[XP..XP + 2].copy_from_slice(&ic.xp);
    s[ZP..ZP + 2].copy_from_slice(&ic.zp);
    // every error coordinate and both held noise samples start at zero,
    // so the held outputs carry the current noise sample instead
    raw.slow_transmit(0.0, &mut s);
    raw.fast_transmit(0.0, &mut s);
    let (v1, v2) = (s[V1], s[V2]);
    s[YPS] += v1;
    s[YOS] += v1;
    s[YPF] += v2;
    s[YOF] += v2;
    s[V1] = 0.0;
    s[V2] = 0.0;

    let events = generate_schedule(&pol, horizon).unwrap();
    let h_nom = (p.epsilon / 50.0).min(pol.miati_f() / 20.0);
    let mut t = 0.0;
    let mut worst: f64 = 0.0;
    let mut k = 0;
    let mut compare = |t: f64, s: &[f64], k: &mut usize| {
        let sample = &traj.samples[*k];
        assert_eq!(sample.t, t);
        for (range, want) in raw.to_error_coordinates(t, s) {
            for (i, w) in range.zip(want) {
                let err = (sample.state[i] - w).abs() / (1.0 + w.abs());
                worst = worst.max(err);
            }
        }
        *k += 1;
    };
    compare(0.0, &s, &mut k);
    for stop in events.iter().map(|e| (e.t, Some(e.channel))).chain(std::iter::once((horizon, None))) {
        let gap = stop.0 - t;
        if gap > 0.0 {
            let n = (gap / h_nom.min(gap / 4.0)).ceil() as usize;
            let h = gap / n as f64;
            for i in 0..n {
                s = rk4_step(|tt, y: &[f64]| Ok(raw.field(tt, y)), &s, t + i as f64 * h, h).unwrap();
            }
            t = stop.0;
        }
        compare(t, &s, &mut k);
        match stop.1 {
            Some(Channel::Slow) => raw.slow_transmit(t, &mut s),
            Some(Channel::Fast) => raw.fast_transmit(t, &mut s),
            None => break,
        }
        compare(t, &s, &mut k);
    }
    assert_eq!(k, traj.samples.len());
    worst
}

#[test]
fn error_coordinates_match_raw_cosimulation_without_noise() {
    let sig = Signals { us: vec![spncs::hybridsim::SignalSpec::Ramp { slope: 0.5, offset: 100.0 }], ..Default::default() };
    let worst = run_cosim(example_model(), sig, 2.0);
    assert!(worst < 1e-8, "{worst:e}");
}

#[test]
fn error_coordinates_match_raw_cosimulation_with_noise() {
    let worst = run_cosim(example_model(), ramp_with_noise(), 2.0);
    assert!(worst < 1e-8, "{worst:e}");
}

#[test]
fn fast_gain_and_fast_noise_shift_the_quasi_steady_error_consistently() {
    let mut g = spncs::presets::reference_gains();
    g.l2f = Matrix::from_rows(&[&[0.2], &[-0.5]]).unwrap();
    let m = SystemModel::new(spncs::presets::example_plant(), g).unwrap();
    assert!(m.hbar.gv2.max_abs() > 1e-3);
    let worst = run_cosim(m, ramp_with_noise(), 2.0);
    assert!(worst < 1e-8, "{worst:e}");
}
