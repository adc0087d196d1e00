//! Event-exact simulation of the networked closed loop.
//!
//! Transmission instants are drawn up front, so the integrator steps land on
//! them exactly and no event detection is needed. Between events the full
//! state is integrated with RK4 at `h = min(ε/50, τ_miati_f/20, gap/4)`;
//! at events the slow or fast jump map is applied.
//!
//! Slow and fast instants are kept at least `τ_miati_f` apart, so the two
//! jump maps are never due at the same time.

use std::io::Write;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bounds::ConstantsLedger;
use crate::error::{Error, Result};
use crate::exec::stream_rng;
use crate::model::{FlowInputs, StateLayout, SystemModel};
use crate::numerics::{norm, rk4_step};
use crate::protocols::{companion_jumps, Channels};

/// Scalar exogenous signal with an exact derivative.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SignalSpec {
    Zero,
    Constant { value: f64 },
    /// `slope · t + offset`
    Ramp { slope: f64, offset: f64 },
    /// `amplitude · sin(omega · t + phase)`
    Sinusoid {
        amplitude: f64,
        omega: f64,
        #[serde(default)]
        phase: f64,
    },
}

impl SignalSpec {
    pub fn value(&self, t: f64) -> f64 {
        match *self {
            Self::Zero => 0.0,
            Self::Constant { value } => value,
            Self::Ramp { slope, offset } => slope * t + offset,
            Self::Sinusoid { amplitude, omega, phase } => amplitude * (omega * t + phase).sin(),
        }
    }

    pub fn derivative(&self, t: f64) -> f64 {
        match *self {
            Self::Zero | Self::Constant { .. } => 0.0,
            Self::Ramp { slope, .. } => slope,
            Self::Sinusoid { amplitude, omega, phase } => amplitude * omega * (omega * t + phase).cos(),
        }
    }

    fn is_finite(&self) -> bool {
        match *self {
            Self::Zero => true,
            Self::Constant { value } => value.is_finite(),
            Self::Ramp { slope, offset } => slope.is_finite() && offset.is_finite(),
            Self::Sinusoid { amplitude, omega, phase } => amplitude.is_finite() && omega.is_finite() && phase.is_finite(),
        }
    }
}

/// Input and noise signals, one entry per component; an empty list means
/// identically zero.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Signals {
    pub us: Vec<SignalSpec>,
    pub v1: Vec<SignalSpec>,
    pub v2: Vec<SignalSpec>,
}

fn eval_vec(specs: &[SignalSpec], n: usize, t: f64, deriv: bool) -> Vec<f64> {
    if specs.is_empty() {
        return vec![0.0; n];
    }
    specs.iter().map(|s| if deriv { s.derivative(t) } else { s.value(t) }).collect()
}

impl Signals {
    pub fn validate(&self, m: &SystemModel) -> Result<()> {
        let p = &m.plant;
        for (name, v, n) in [("us", &self.us, p.nu()), ("v1", &self.v1, p.nys()), ("v2", &self.v2, p.nyf())] {
            if !v.is_empty() && v.len() != n {
                return Err(Error::InvalidConfig(format!("signal {name} has {} components, expected {n}", v.len())));
            }
            if v.iter().any(|s| !s.is_finite()) {
                return Err(Error::InvalidConfig(format!("signal {name} has non-finite parameters")));
            }
        }
        Ok(())
    }

    pub fn us(&self, m: &SystemModel, t: f64) -> Vec<f64> {
        eval_vec(&self.us, m.plant.nu(), t, false)
    }

    pub fn dus(&self, m: &SystemModel, t: f64) -> Vec<f64> {
        eval_vec(&self.us, m.plant.nu(), t, true)
    }

    pub fn v1(&self, m: &SystemModel, t: f64) -> Vec<f64> {
        eval_vec(&self.v1, m.plant.nys(), t, false)
    }

    pub fn v2(&self, m: &SystemModel, t: f64) -> Vec<f64> {
        eval_vec(&self.v2, m.plant.nyf(), t, false)
    }

    pub fn flow_inputs(&self, m: &SystemModel, t: f64) -> FlowInputs {
        FlowInputs {
            us: self.us(m, t),
            dus: self.dus(m, t),
            dv1: eval_vec(&self.v1, m.plant.nys(), t, true),
            dv2: eval_vec(&self.v2, m.plant.nyf(), t, true),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScheduleMode {
    /// Every channel transmits at its MATI.
    Periodic,
    /// Gaps drawn uniformly from `[MIATI, MATI]`.
    UniformRandom,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchedulePolicy {
    pub mode: ScheduleMode,
    pub tau_mati_s: f64,
    pub tau_miati_s: f64,
    pub tau_mati_f: f64,
    /// Defaults to `τ_mati_f / 4`.
    #[serde(default)]
    pub tau_miati_f: Option<f64>,
    #[serde(default)]
    pub seed: u64,
}

impl SchedulePolicy {
    pub fn miati_f(&self) -> f64 {
        self.tau_miati_f.unwrap_or(self.tau_mati_f / 4.0)
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.miati_f();
        if !(self.tau_miati_s > 0.0 && self.tau_miati_s <= self.tau_mati_s) {
            return Err(Error::InvalidConfig("need 0 < tau_miati_s <= tau_mati_s".into()));
        }
        if !(m > 0.0 && m <= 0.5 * self.tau_mati_f) {
            return Err(Error::InvalidConfig("need 0 < tau_miati_f <= tau_mati_f / 2".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Channel {
    Slow,
    Fast,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub t: f64,
    pub channel: Channel,
}

/// Absolute slack for comparing instants against interval bounds.
const TIME_TOL: f64 = 1e-12;

fn conflict(fast: &[f64], t: f64, gap: f64) -> Option<f64> {
    let i = fast.partition_point(|&f| f < t - gap + TIME_TOL);
    fast.get(i).copied().filter(|&f| f < t + gap - TIME_TOL)
}

/// Transmission instants on `(0, horizon]` satisfying the MIATI/MATI bounds
/// on each channel and the cross-channel separation `τ_miati_f`. A slow
/// instant that lands too close to a fast one is moved to the earliest legal
/// time before its deadline, or else to the latest legal time after its
/// earliest admissible instant.
pub fn generate_schedule(policy: &SchedulePolicy, horizon: f64) -> Result<Vec<Event>> {
    policy.validate()?;
    let m = policy.miati_f();
    let mut fast_rng = stream_rng(policy.seed, 0);
    let mut slow_rng = stream_rng(policy.seed, 1);
    let gap = |rng: &mut rand_chacha::ChaCha8Rng, lo: f64, hi: f64| match policy.mode {
        ScheduleMode::Periodic => hi,
        ScheduleMode::UniformRandom => {
            if hi > lo {
                rng.gen_range(lo..=hi)
            } else {
                hi
            }
        }
    };

    let mut fast = Vec::new();
    let mut t = 0.0;
    loop {
        t += gap(&mut fast_rng, m, policy.tau_mati_f);
        if t > horizon + TIME_TOL {
            break;
        }
        fast.push(t);
    }

    // Every pair of instants is kept τ_miati_f apart, which also bounds the
    // slow gaps from below.
    let slow_lo = policy.tau_miati_s.max(m);
    let mut slow = Vec::new();
    let mut prev = 0.0;
    loop {
        let target = prev + gap(&mut slow_rng, slow_lo, policy.tau_mati_s);
        if target > horizon + TIME_TOL {
            break;
        }
        let earliest = prev + slow_lo;
        let deadline = prev + policy.tau_mati_s;
        let mut at = target;
        while let Some(f) = conflict(&fast, at, m) {
            at = f + m;
        }
        if at > deadline + TIME_TOL {
            at = target;
            while let Some(f) = conflict(&fast, at, m) {
                at = f - m;
            }
            if at < earliest - TIME_TOL {
                return Err(Error::InfeasibleSchedule(format!(
                    "no legal slow instant in [{earliest}, {deadline}] around the fast grid"
                )));
            }
        }
        if at > horizon + TIME_TOL {
            break;
        }
        slow.push(at);
        prev = at;
    }

    let mut events: Vec<Event> = fast
        .into_iter()
        .map(|t| Event { t, channel: Channel::Fast })
        .chain(slow.into_iter().map(|t| Event { t, channel: Channel::Slow }))
        .collect();
    events.sort_by(|a, b| a.t.total_cmp(&b.t));
    check_schedule(policy, &events)?;
    Ok(events)
}

/// Assert the per-channel and cross-channel interval bounds, counting from
/// `t = 0`.
pub fn check_schedule(policy: &SchedulePolicy, events: &[Event]) -> Result<()> {
    let m = policy.miati_f();
    let mut last = [0.0f64; 2];
    let mut prev_any: Option<f64> = None;
    for e in events {
        let (k, lo, hi) = match e.channel {
            Channel::Slow => (0, policy.tau_miati_s, policy.tau_mati_s),
            Channel::Fast => (1, m, policy.tau_mati_f),
        };
        let g = e.t - last[k];
        if g < lo - TIME_TOL || g > hi + TIME_TOL {
            return Err(Error::InfeasibleSchedule(format!("{:?} gap {g} at t = {} outside [{lo}, {hi}]", e.channel, e.t)));
        }
        if let Some(p) = prev_any {
            if e.t - p < m - TIME_TOL {
                return Err(Error::InfeasibleSchedule(format!("instants {p} and {} closer than {m}", e.t)));
            }
        }
        last[k] = e.t;
        prev_any = Some(e.t);
    }
    Ok(())
}

/// Plant and observer start values. Every network-induced error and both
/// held noise samples start at zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialCondition {
    pub xp: Vec<f64>,
    pub zp: Vec<f64>,
    #[serde(default)]
    pub xo: Option<Vec<f64>>,
    #[serde(default)]
    pub zo: Option<Vec<f64>>,
}

pub fn initial_state(m: &SystemModel, ic: &InitialCondition) -> Result<Vec<f64>> {
    let p = &m.plant;
    let l = &m.layout;
    let xo = ic.xo.clone().unwrap_or_else(|| vec![0.0; p.nx()]);
    let zo = ic.zo.clone().unwrap_or_else(|| vec![0.0; p.nz()]);
    if ic.xp.len() != p.nx() || xo.len() != p.nx() || ic.zp.len() != p.nz() || zo.len() != p.nz() {
        return Err(Error::DimensionMismatch("initial condition does not match the plant".into()));
    }
    let mut x = vec![0.0; l.len];
    for (k, i) in l.dx.clone().enumerate() {
        x[i] = xo[k] - ic.xp[k];
    }
    for (k, i) in l.xp.clone().enumerate() {
        x[i] = ic.xp[k];
    }
    for (k, i) in l.zp.clone().enumerate() {
        x[i] = ic.zp[k];
    }
    let hb = m.hbar_at(&x);
    for (k, i) in l.dy.clone().enumerate() {
        x[i] = zo[k] - ic.zp[k] - hb[k];
    }
    Ok(x)
}

/// `|(δx, e_s, δy, e_f)|`
pub fn distance_to_attractor(layout: &StateLayout, x: &[f64]) -> f64 {
    [&layout.dx, &layout.eys, &layout.eus, &layout.dy, &layout.ef]
        .iter()
        .flat_map(|r| x[(*r).clone()].iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimOptions {
    /// Spacing of recorded flow samples; event instants are always recorded
    /// before and after the jump.
    pub record_dt: f64,
    /// Multiplies the integration step, for refinement checks.
    pub step_scale: f64,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self { record_dt: 1e-3, step_scale: 1.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub t: f64,
    pub j: u64,
    pub state: Vec<f64>,
    pub dist: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub t: f64,
    pub channel: Channel,
    pub node: usize,
    pub kappa: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HybridTrajectory {
    pub names: Vec<String>,
    pub samples: Vec<Sample>,
    pub events: Vec<EventRecord>,
}

impl HybridTrajectory {
    pub fn last(&self) -> &Sample {
        self.samples.last().expect("trajectory has an initial sample")
    }

    /// Mean of `|ξ|_E` over the final 20% of the horizon.
    pub fn empirical_ultimate_bound(&self) -> f64 {
        let t_end = self.last().t;
        let tail: Vec<f64> = self.samples.iter().filter(|s| s.t >= 0.8 * t_end).map(|s| s.dist).collect();
        tail.iter().sum::<f64>() / tail.len().max(1) as f64
    }

    /// Write `t, j, <state names>, dist_to_E`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let io = |e: csv::Error| Error::InvalidConfig(format!("writing {}: {e}", path.display()));
        let mut w = csv::Writer::from_path(path).map_err(io)?;
        let mut header = vec!["t".to_string(), "j".to_string()];
        header.extend(self.names.iter().cloned());
        header.push("dist_to_E".into());
        w.write_record(&header).map_err(io)?;
        for s in &self.samples {
            let mut row = vec![format!("{:e}", s.t), s.j.to_string()];
            row.extend(s.state.iter().map(|v| format!("{v:e}")));
            row.push(format!("{:e}", s.dist));
            w.write_record(&row).map_err(io)?;
        }
        w.flush().map_err(|e| Error::InvalidConfig(format!("writing {}: {e}", path.display())))
    }

    /// Write `t, channel, node, kappa`.
    pub fn write_events_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?;
        let mut out = String::from("t,channel,node,kappa\n");
        for e in &self.events {
            let ch = match e.channel {
                Channel::Slow => "slow",
                Channel::Fast => "fast",
            };
            out.push_str(&format!("{:e},{ch},{},{}\n", e.t, e.node, e.kappa));
        }
        f.write_all(out.as_bytes()).map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))
    }
}

fn set_block(x: &mut [f64], r: &std::ops::Range<usize>, v: &[f64]) {
    x[r.clone()].copy_from_slice(v);
}

/// Slow jump: protocol step on `ẽ_ps` and `e_us`, companion updates of
/// `e_ys` and `v̂1`, and the `δy` shift keeping `δz` continuous.
fn slow_jump(m: &SystemModel, ch: &Channels, sig: &Signals, t: f64, x: &mut [f64]) -> Result<(usize, u64)> {
    let l = &m.layout;
    let kappa = x[l.kappa_s] as u64;
    let h_before = m.hbar_at(x);
    let (eps, node) = ch.slow.output.jump(kappa, &x[l.eps.clone()])?;
    let (eus, _) = ch.slow.input.jump(kappa, &x[l.eus.clone()])?;
    let (eys, v1h) = companion_jumps(&ch.slow.output.partition, &x[l.eys.clone()], &x[l.v1h.clone()], &sig.v1(m, t), node);
    set_block(x, &l.eps, &eps);
    set_block(x, &l.eus, &eus);
    set_block(x, &l.eys, &eys);
    set_block(x, &l.v1h, &v1h);
    shift_dy(m, x, &h_before);
    x[l.tau_s] = 0.0;
    x[l.kappa_s] += 1.0;
    Ok((node, kappa))
}

fn fast_jump(m: &SystemModel, ch: &Channels, sig: &Signals, t: f64, x: &mut [f64]) -> Result<(usize, u64)> {
    let l = &m.layout;
    let kappa = x[l.kappa_f] as u64;
    let h_before = m.hbar_at(x);
    let (epf, node) = ch.fast.jump(kappa, &x[l.epf.clone()])?;
    let (ef, v2h) = companion_jumps(&ch.fast.partition, &x[l.ef.clone()], &x[l.v2h.clone()], &sig.v2(m, t), node);
    set_block(x, &l.epf, &epf);
    set_block(x, &l.ef, &ef);
    set_block(x, &l.v2h, &v2h);
    shift_dy(m, x, &h_before);
    x[l.tau_f] = 0.0;
    x[l.kappa_f] += 1.0;
    Ok((node, kappa))
}

fn shift_dy(m: &SystemModel, x: &mut [f64], h_before: &[f64]) {
    let h_after = m.hbar_at(x);
    for (k, i) in m.layout.dy.clone().enumerate() {
        x[i] += h_before[k] - h_after[k];
    }
}

/// Relative slack on timer checks.
const TIMER_TOL: f64 = 1e-9;

pub fn simulate(
    m: &SystemModel,
    channels: &Channels,
    policy: &SchedulePolicy,
    signals: &Signals,
    ic: &InitialCondition,
    horizon: f64,
    opts: &SimOptions,
) -> Result<HybridTrajectory> {
    channels.validate(&m.plant)?;
    signals.validate(m)?;
    if !(horizon > 0.0 && opts.record_dt > 0.0 && opts.step_scale > 0.0) {
        return Err(Error::InvalidConfig("horizon, record_dt and step_scale must be positive".into()));
    }
    let events = generate_schedule(policy, horizon)?;
    let l = &m.layout;
    let eps = m.epsilon();
    let h_nom = (eps / 50.0).min(policy.miati_f() / 20.0) * opts.step_scale;
    let mut x = initial_state(m, ic)?;
    let mut j: u64 = 0;
    let mut t = 0.0;
    let mut samples = vec![Sample { t, j, dist: distance_to_attractor(l, &x), state: x.clone() }];
    let mut records = Vec::with_capacity(events.len());
    let mut next_record = opts.record_dt;
    let field = |s: f64, y: &[f64]| m.flow_field(y, &signals.flow_inputs(m, s));
    let fast_cap = policy.tau_mati_f / eps;

    let stops = events.iter().map(|e| (e.t, Some(e.channel))).chain(std::iter::once((horizon, None)));
    for (t_stop, channel) in stops {
        let gap = t_stop - t;
        if gap > 0.0 {
            let h_max = h_nom.min(gap / 4.0);
            let n = (gap / h_max).ceil() as usize;
            let h = gap / n as f64;
            for k in 0..n {
                x = rk4_step(field, &x, t + k as f64 * h, h)?;
                let tk = if k + 1 == n { t_stop } else { t + (k + 1) as f64 * h };
                if tk >= next_record - TIME_TOL && k + 1 < n {
                    samples.push(Sample { t: tk, j, dist: distance_to_attractor(l, &x), state: x.clone() });
                    while next_record <= tk + TIME_TOL {
                        next_record += opts.record_dt;
                    }
                }
            }
            t = t_stop;
            if x[l.tau_s] > policy.tau_mati_s * (1.0 + TIMER_TOL) || x[l.tau_f] > fast_cap * (1.0 + TIMER_TOL) {
                return Err(Error::InfeasibleSchedule(format!("timer left the flow set at t = {t}")));
            }
        }
        samples.push(Sample { t, j, dist: distance_to_attractor(l, &x), state: x.clone() });
        while next_record <= t + TIME_TOL {
            next_record += opts.record_dt;
        }
        let Some(channel) = channel else { break };
        let (node, kappa) = match channel {
            Channel::Slow => {
                if x[l.tau_s] < policy.tau_miati_s * (1.0 - TIMER_TOL) {
                    return Err(Error::InfeasibleSchedule(format!("slow jump outside the jump set at t = {t}")));
                }
                slow_jump(m, channels, signals, t, &mut x)?
            }
            Channel::Fast => {
                if x[l.tau_f] < policy.miati_f() / eps * (1.0 - TIMER_TOL) {
                    return Err(Error::InfeasibleSchedule(format!("fast jump outside the jump set at t = {t}")));
                }
                fast_jump(m, channels, signals, t, &mut x)?
            }
        };
        j += 1;
        records.push(EventRecord { t, channel, node, kappa });
        samples.push(Sample { t, j, dist: distance_to_attractor(l, &x), state: x.clone() });
    }
    Ok(HybridTrajectory { names: l.names(), samples, events: records })
}

/// `max` of `values` over samples with `(t, j) ⪯ upto`.
pub fn hybrid_sup_norm(values: &[(f64, u64, f64)], upto: (f64, u64)) -> f64 {
    values
        .iter()
        .filter(|(t, j, _)| *t < upto.0 || (*t == upto.0 && *j <= upto.1))
        .map(|(_, _, v)| v.abs())
        .fold(0.0, f64::max)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DissReport {
    pub preconditions_hold: bool,
    pub violated_preconditions: Vec<String>,
    pub k: f64,
    pub rate: f64,
    pub gamma_v1: f64,
    pub gamma_v2: f64,
    pub gamma_dus: f64,
    /// Smallest `bound − |ξ|_E` over all samples.
    pub min_margin: f64,
    pub worst_t: f64,
    pub worst_j: u64,
    pub holds: bool,
    pub samples_checked: usize,
}

/// Check `|ξ(t,j)|_E ≤ k |ξ(0,0)|_E e^{−a(t+j)} + γ_v1‖v1‖ + γ_v2‖v2‖ +
/// γ_u̇‖u̇_s‖` on every recorded sample. Violated hypotheses are listed in
/// the report instead of failing the check.
pub fn check_diss(
    traj: &HybridTrajectory,
    m: &SystemModel,
    ledger: &ConstantsLedger,
    signals: &Signals,
    policy: &SchedulePolicy,
) -> DissReport {
    let mut violated = Vec::new();
    let pre = &ledger.preconditions;
    let eps = m.epsilon();
    if eps > ledger.epsilon_star {
        violated.push(format!("epsilon {eps} > epsilon* {:e}", ledger.epsilon_star));
    }
    if policy.tau_mati_s >= ledger.t_slow {
        violated.push(format!("tau_mati_s {} >= T(L_s, gamma_s, lambda_s) {}", policy.tau_mati_s, ledger.t_slow));
    }
    if policy.tau_mati_f > eps * ledger.t_star {
        violated.push(format!("tau_mati_f {} > epsilon T* {}", policy.tau_mati_f, eps * ledger.t_star));
    }
    if !pre.slow_timing.phi_ok {
        violated.push("phi_s leaves [lambda_s*, 1/lambda_s*] before tau_mati_s".into());
    }
    if !pre.fast_lambda_ok {
        violated.push("fast protocol lambda is not below lambda_f*".into());
    }

    let x0 = traj.samples.first().map_or(0.0, |s| s.dist);
    let mut sup = [0.0f64; 3];
    let mut min_margin = f64::INFINITY;
    let (mut worst_t, mut worst_j) = (0.0, 0);
    for s in &traj.samples {
        sup[0] = sup[0].max(norm(&signals.v1(m, s.t)));
        sup[1] = sup[1].max(norm(&signals.v2(m, s.t)));
        sup[2] = sup[2].max(norm(&signals.dus(m, s.t)));
        let bound = ledger.k * x0 * (-ledger.rate * (s.t + s.j as f64)).exp()
            + ledger.gamma_v1 * sup[0]
            + ledger.gamma_v2 * sup[1]
            + ledger.gamma_dus * sup[2];
        let margin = bound - s.dist;
        if margin < min_margin {
            min_margin = margin;
            worst_t = s.t;
            worst_j = s.j;
        }
    }
    DissReport {
        preconditions_hold: violated.is_empty(),
        violated_preconditions: violated,
        k: ledger.k,
        rate: ledger.rate,
        gamma_v1: ledger.gamma_v1,
        gamma_v2: ledger.gamma_v2,
        gamma_dus: ledger.gamma_dus,
        min_margin,
        worst_t,
        worst_j,
        holds: min_margin >= 0.0,
        samples_checked: traj.samples.len(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;

    fn policy(mode: ScheduleMode, seed: u64) -> SchedulePolicy {
        SchedulePolicy { mode, tau_mati_s: 0.13, tau_miati_s: 0.149e-3, tau_mati_f: 7e-3, tau_miati_f: None, seed }
    }

    #[test]
    fn periodic_schedule_example() {
        let ev = generate_schedule(&policy(ScheduleMode::Periodic, 0), 1.0).unwrap();
        let fast: Vec<f64> = ev.iter().filter(|e| e.channel == Channel::Fast).map(|e| e.t).collect();
        assert!((fast[0] - 0.007).abs() < 1e-15 && (fast[1] - 0.014).abs() < 1e-15);
        let slow: Vec<f64> = ev.iter().filter(|e| e.channel == Channel::Slow).map(|e| e.t).collect();
        assert!((slow[0] - 0.13).abs() < 2e-3);
    }

    #[test]
    fn short_horizon_has_no_events() {
        assert!(generate_schedule(&policy(ScheduleMode::UniformRandom, 3), 1e-3).unwrap().is_empty());
        assert!(generate_schedule(&policy(ScheduleMode::Periodic, 3), 1e-3).unwrap().is_empty());
    }

    #[test]
    fn signals_have_exact_derivatives() {
        let s = SignalSpec::Sinusoid { amplitude: 0.04, omega: 25.0, phase: 0.0 };
        let h = 1e-6;
        let fd = (s.value(0.3 + h) - s.value(0.3 - h)) / (2.0 * h);
        assert!((fd - s.derivative(0.3)).abs() < 1e-7);
        assert_eq!(SignalSpec::Ramp { slope: 0.5, offset: 100.0 }.derivative(7.0), 0.5);
    }

    #[test]
    fn attractor_distance() {
        let p = presets::example_plant();
        let l = StateLayout::new(&p);
        let mut x = vec![0.0; l.len];
        x[l.tau_s] = 3.0;
        x[l.xp.start] = 9.0;
        assert_eq!(distance_to_attractor(&l, &x), 0.0);
        x[l.dx.start] = 3.0;
        x[l.dx.start + 1] = 4.0;
        assert_eq!(distance_to_attractor(&l, &x), 5.0);
    }

    #[test]
    fn sup_norm_examples() {
        let c: Vec<(f64, u64, f64)> = (0..10).map(|i| (i as f64, 0, -2.5)).collect();
        assert_eq!(hybrid_sup_norm(&c, (9.0, 0)), 2.5);
        assert_eq!(hybrid_sup_norm(&[(0.0, 0, 0.0)], (1.0, 0)), 0.0);
    }

    #[test]
    fn equilibrium_stays_put() {
        let m = SystemModel::new(presets::example_plant(), presets::reference_gains()).unwrap();
        let ic = InitialCondition { xp: vec![0.0; 2], zp: vec![0.0; 2], xo: None, zo: None };
        let tr = simulate(
            &m,
            &Channels::zeroing(&m.plant),
            &policy(ScheduleMode::Periodic, 0),
            &Signals::default(),
            &ic,
            0.3,
            &SimOptions::default(),
        )
        .unwrap();
        assert!(tr.samples.iter().all(|s| s.dist == 0.0));
    }
}
