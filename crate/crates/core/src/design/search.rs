//! Derivative-free synthesis.
//!
//! Positive definite matrices are parametrized by a Cholesky factor with a
//! log-diagonal, and positive scalars as `floor + exp(t)`, so every point of
//! the search space is admissible. The inner search is a compass/pattern
//! search with expanding and shrinking per-coordinate steps plus one random
//! direction per sweep. Restarts run in fixed-size batches and the lowest
//! index wins ties, so results do not depend on the execution mode.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{DesignResult, GainTemplate, LmiBlocks, TemplateParam, Which};
use crate::bounds::{slow_timing_cert, ConstantsLedger, PipelineKnobs, TimingSpec};
use crate::error::{Error, Result};
use crate::exec::{map_indexed, stream_rng, Exec};
use crate::model::{build_fast_blocks, build_reduced_blocks, ObserverGains, PlantParams, SystemModel};
use crate::numerics::{cholesky, lambda_max, lyapunov, Matrix, SymMatrix, LMI_TOL};
use crate::protocols::Channels;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchConfig {
    pub restarts: usize,
    pub sweeps: usize,
    pub bisection_tol: f64,
    pub gamma_max: f64,
    pub seed: u64,
    pub a_rho_f_floor: f64,
    pub a_rho_s_floor: f64,
    pub eta1_floor: f64,
    /// Move the gain template parameters, not only `P`, `a_ρ` and `η1`.
    pub search_gains: bool,
    /// Restarts evaluated together; fixed so batching never changes results.
    pub batch: usize,
    pub min_step: f64,
    /// Budget of the MATI-objective search.
    pub objective_restarts: usize,
    pub objective_sweeps: usize,
    pub objective_samples: usize,
    pub exec: Exec,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            restarts: 32,
            sweeps: 200,
            bisection_tol: 1e-3,
            gamma_max: 100.0,
            seed: 1,
            a_rho_f_floor: 1e-3,
            a_rho_s_floor: 1e-3,
            eta1_floor: 1e-3,
            search_gains: true,
            batch: 8,
            min_step: 1e-7,
            objective_restarts: 4,
            objective_sweeps: 40,
            objective_samples: 2048,
            exec: Exec::default(),
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if self.restarts == 0 || self.sweeps == 0 || self.batch == 0 {
            return bad("restarts, sweeps and batch must be positive");
        }
        if !(self.bisection_tol > 0.0 && self.gamma_max > 0.0 && self.min_step > 0.0) {
            return bad("bisection_tol, gamma_max and min_step must be positive");
        }
        if !(self.a_rho_f_floor > 0.0 && self.a_rho_s_floor > 0.0 && self.eta1_floor > 0.0) {
            return bad("floors must be positive");
        }
        if self.objective_restarts == 0 || self.objective_sweeps == 0 || self.objective_samples == 0 {
            return bad("objective budget must be positive");
        }
        Ok(())
    }
}

/// The three-parameter template of the bundled example:
/// `L1s = (n1, 0)`, `L2s = (−n2, −n2)`, `L1f = (0, n3)`, `L2f = 0`.
pub fn example_template() -> GainTemplate {
    let col = |a: f64, b: f64| Matrix::from_rows(&[&[a], &[b]]).expect("2x1");
    let (n1, n2, n3) = crate::presets::REFERENCE_GAINS;
    let param = |name: &str, initial: f64| TemplateParam {
        name: name.into(),
        initial,
        l1s: None,
        l1f: None,
        l2s: None,
        l2f: None,
    };
    GainTemplate {
        base: ObserverGains { l1s: col(0.0, 0.0), l1f: col(0.0, 0.0), l2s: col(0.0, 0.0), l2f: col(0.0, 0.0) },
        params: vec![
            TemplateParam { l1s: Some(col(1.0, 0.0)), ..param("n1", n1) },
            TemplateParam { l2s: Some(col(-1.0, -1.0)), ..param("n2", n2) },
            TemplateParam { l1f: Some(col(0.0, 1.0)), ..param("n3", n3) },
        ],
    }
}

// ---------------------------------------------------------------------------
// parametrization

fn chol_len(n: usize) -> usize {
    n * (n + 1) / 2
}

fn decode_pd(x: &[f64], n: usize) -> SymMatrix {
    let mut l = Matrix::zeros(n, n);
    let mut k = 0;
    for i in 0..n {
        for j in 0..=i {
            l[(i, j)] = if i == j { x[k].clamp(-30.0, 30.0).exp() } else { x[k] };
            k += 1;
        }
    }
    SymMatrix::from_dense_symmetrized(&(&l * &l.transpose()))
}

fn encode_pd(p: &SymMatrix) -> Option<Vec<f64>> {
    let l = cholesky(p).ok()?;
    let n = p.dim();
    let mut out = Vec::with_capacity(chol_len(n));
    for i in 0..n {
        for j in 0..=i {
            out.push(if i == j { l[(i, j)].ln() } else { l[(i, j)] });
        }
    }
    Some(out)
}

fn pos(floor: f64, t: f64) -> f64 {
    floor + t.clamp(-50.0, 50.0).exp()
}

fn inv_pos(floor: f64, v: f64) -> f64 {
    (v - floor).max(floor * 1e-3).ln()
}

/// A starting `P` from a Lyapunov equation, falling back to the identity.
fn lyapunov_start(blocks: &LmiBlocks, a_rho: f64) -> SymMatrix {
    let n = blocks.n();
    let q = &Matrix::identity(n).scale(2.0 * a_rho.max(1e-3)) + &(&blocks.ah.transpose() * &blocks.ah).scale(2.0);
    lyapunov(&blocks.a, &SymMatrix::from_dense_symmetrized(&q))
        .ok()
        .filter(|p| crate::numerics::lambda_min(p).is_ok_and(|v| v > 0.0))
        .unwrap_or_else(|| SymMatrix::identity(n))
}

// ---------------------------------------------------------------------------
// pattern search

#[derive(Clone, Debug)]
pub(crate) struct Outcome {
    pub x: Vec<f64>,
    pub f: f64,
    pub evals: usize,
}

fn sanitize(v: f64) -> f64 {
    if v.is_nan() {
        f64::INFINITY
    } else {
        v
    }
}

pub(crate) fn pattern_search(
    f: &(dyn Fn(&[f64]) -> f64 + Sync),
    x0: Vec<f64>,
    steps0: &[f64],
    sweeps: usize,
    min_step: f64,
    stop_below: f64,
    rng: &mut ChaCha8Rng,
) -> Outcome {
    let n = x0.len();
    let mut x = x0;
    let mut fx = sanitize(f(&x));
    let mut evals = 1;
    let mut step = steps0.to_vec();
    for _ in 0..sweeps {
        if fx <= stop_below {
            break;
        }
        for i in 0..n {
            let mut moved = false;
            for sign in [1.0, -1.0] {
                let mut t = x.clone();
                t[i] += sign * step[i];
                let ft = sanitize(f(&t));
                evals += 1;
                if ft < fx {
                    x = t;
                    fx = ft;
                    step[i] *= 2.0;
                    moved = true;
                    break;
                }
            }
            if !moved {
                step[i] *= 0.5;
            }
        }
        if n > 0 {
            let len = step.iter().sum::<f64>() / n as f64;
            let d: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let dn = d.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-300);
            let t: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + len * b / dn).collect();
            let ft = sanitize(f(&t));
            evals += 1;
            if ft < fx {
                x = t;
                fx = ft;
            }
        }
        if step.iter().all(|&s| s < min_step) {
            break;
        }
    }
    Outcome { x, f: fx, evals }
}

/// Restart 0 starts at `x0`, the others at `x0` perturbed by `spread`.
/// Returns the best outcome and stops after the first batch that reaches
/// `stop_below`.
pub(crate) fn multistart(
    f: &(dyn Fn(&[f64]) -> f64 + Sync),
    x0: &[f64],
    spread: &[f64],
    restarts: usize,
    sweeps: usize,
    cfg: &SearchConfig,
    seed: u64,
    stop_below: f64,
) -> Outcome {
    let mut best: Option<Outcome> = None;
    let mut evals = 0;
    let mut start = 0;
    while start < restarts {
        let count = cfg.batch.min(restarts - start);
        let batch = map_indexed(cfg.exec, count, |k| {
            let r = start + k;
            let mut rng = stream_rng(seed, r as u64);
            let x: Vec<f64> = if r == 0 {
                x0.to_vec()
            } else {
                x0.iter().zip(spread).map(|(v, s)| v + s * rng.sample::<f64, _>(StandardNormal)).collect()
            };
            let steps: Vec<f64> = spread.iter().map(|s| 0.5 * s).collect();
            pattern_search(f, x, &steps, sweeps, cfg.min_step, stop_below, &mut rng)
        });
        for o in batch {
            evals += o.evals;
            if best.as_ref().is_none_or(|b| o.f < b.f) {
                best = Some(o);
            }
        }
        if best.as_ref().is_some_and(|b| b.f <= stop_below) {
            break;
        }
        start += count;
    }
    let mut b = best.expect("at least one restart");
    b.evals = evals;
    b
}

// ---------------------------------------------------------------------------
// minimum gamma

/// Smallest `γ ≤ gamma_max` making the LMI hold at fixed `(P, a_ρ, η1)`,
/// by bisection on the eigenvalue test.
pub fn min_gamma_fixed(blocks: &LmiBlocks, p: &SymMatrix, a_rho: f64, eta1: f64, gamma_max: f64, tol: f64) -> Result<f64> {
    if blocks.margin(p, a_rho, gamma_max, eta1) > LMI_TOL {
        return Err(Error::InfeasibleAtUpperBound { gamma_max });
    }
    let (mut lo, mut hi) = (0.0, gamma_max);
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if blocks.margin(p, a_rho, mid, eta1) <= LMI_TOL {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// Outcome of a single-LMI synthesis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LmiSolution {
    pub which: Which,
    pub gains: ObserverGains,
    pub template_values: Vec<f64>,
    pub p: SymMatrix,
    pub a_rho: f64,
    pub eta1: f64,
    pub gamma: f64,
    pub margin: f64,
    pub evals: usize,
}

struct Layout {
    n: usize,
    with_eta: bool,
    free: Vec<usize>,
}

impl Layout {
    fn len(&self) -> usize {
        chol_len(self.n) + 1 + usize::from(self.with_eta) + self.free.len()
    }
}

struct Problem<'a> {
    which: Which,
    plant: &'a PlantParams,
    template: &'a GainTemplate,
    channels: &'a Channels,
    base_theta: Vec<f64>,
    layout: Layout,
    floor_rho: f64,
    floor_eta: f64,
}

struct Decoded {
    theta: Vec<f64>,
    p: SymMatrix,
    a_rho: f64,
    eta1: f64,
}

impl Problem<'_> {
    fn decode(&self, x: &[f64]) -> Decoded {
        let c = chol_len(self.layout.n);
        let p = decode_pd(&x[..c], self.layout.n);
        let a_rho = pos(self.floor_rho, x[c]);
        let eta1 = if self.layout.with_eta { pos(self.floor_eta, x[c + 1]) } else { 0.0 };
        let off = c + 1 + usize::from(self.layout.with_eta);
        let mut theta = self.base_theta.clone();
        for (k, &i) in self.layout.free.iter().enumerate() {
            theta[i] = x[off + k];
        }
        Decoded { theta, p, a_rho, eta1 }
    }

    fn blocks(&self, theta: &[f64]) -> Option<LmiBlocks> {
        let g = self.template.gains(theta);
        let f = build_fast_blocks(self.plant, &g).ok()?;
        Some(match self.which {
            Which::BoundaryLayer => LmiBlocks::boundary_layer(&f, &self.channels.fast.certificate()),
            Which::Reduced => {
                let r = build_reduced_blocks(self.plant, &g, &f).ok()?;
                LmiBlocks::reduced(&r, &self.channels.slow.certificate())
            }
        })
    }

    fn margin(&self, x: &[f64], gamma: f64) -> f64 {
        let d = self.decode(x);
        match self.blocks(&d.theta) {
            Some(b) => b.margin(&d.p, d.a_rho, gamma, d.eta1),
            None => f64::INFINITY,
        }
    }

    fn start(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        let blocks = self.blocks(&self.base_theta).ok_or_else(|| {
            Error::DesignInfeasible("template start point has a non-Hurwitz fast block".into())
        })?;
        let a_rho0 = 2.0 * self.floor_rho;
        let p0 = lyapunov_start(&blocks, a_rho0);
        let mut x = encode_pd(&p0).expect("Lyapunov start is positive definite");
        let mut spread = vec![0.5; x.len()];
        x.push(inv_pos(self.floor_rho, a_rho0));
        spread.push(1.0);
        if self.layout.with_eta {
            x.push(inv_pos(self.floor_eta, 2.0 * self.floor_eta));
            spread.push(1.0);
        }
        for &i in &self.layout.free {
            x.push(self.base_theta[i]);
            spread.push((0.5 * self.base_theta[i].abs()).max(0.05));
        }
        Ok((x, spread))
    }
}

/// Bisection on `γ` around the inner search. `theta` fixes the template
/// parameters that are not searched; it defaults to the template start.
pub fn min_gamma(
    which: Which,
    plant: &PlantParams,
    template: &GainTemplate,
    channels: &Channels,
    cfg: &SearchConfig,
    theta: Option<&[f64]>,
) -> Result<LmiSolution> {
    cfg.validate()?;
    plant.validate()?;
    template.validate(plant)?;
    channels.validate(plant)?;
    let base_theta = theta.map(<[f64]>::to_vec).unwrap_or_else(|| template.initial());
    if base_theta.len() != template.params.len() {
        return Err(Error::DimensionMismatch("theta length differs from template".into()));
    }
    let n = match which {
        Which::BoundaryLayer => plant.nz(),
        Which::Reduced => plant.nx(),
    };
    let free = if cfg.search_gains { template.free_indices(which) } else { Vec::new() };
    let (floor_rho, with_eta) = match which {
        Which::BoundaryLayer => (cfg.a_rho_f_floor, false),
        Which::Reduced => (cfg.a_rho_s_floor, true),
    };
    let prob = Problem {
        which,
        plant,
        template,
        channels,
        base_theta,
        layout: Layout { n, with_eta, free },
        floor_rho,
        floor_eta: cfg.eta1_floor,
    };
    let (x0, spread) = prob.start()?;
    debug_assert_eq!(x0.len(), prob.layout.len());
    let seed_for = |k: u64| cfg.seed.wrapping_mul(0x9e37_79b9).wrapping_add(k);

    let run = |gamma: f64, x: &[f64], k: u64| {
        let f = |y: &[f64]| prob.margin(y, gamma);
        multistart(&f, x, &spread, cfg.restarts, cfg.sweeps, cfg, seed_for(k), 0.0)
    };
    let mut evals = 0;
    let top = run(cfg.gamma_max, &x0, 0);
    evals += top.evals;
    if top.f > LMI_TOL {
        return Err(Error::InfeasibleAtUpperBound { gamma_max: cfg.gamma_max });
    }
    let probe_blocks = prob.blocks(&prob.base_theta).expect("start point checked");
    let mut lo = probe_blocks.gamma_floor(floor_rho);
    let mut hi = cfg.gamma_max;
    let mut warm = top.x;
    let mut k = 1;
    while hi - lo > cfg.bisection_tol {
        let mid = 0.5 * (lo + hi);
        let o = run(mid, &warm, k);
        evals += o.evals;
        k += 1;
        if o.f <= LMI_TOL {
            hi = mid;
            warm = o.x;
        } else {
            lo = mid;
        }
    }
    let d = prob.decode(&warm);
    let margin = prob.margin(&warm, hi);
    Ok(LmiSolution {
        which,
        gains: template.gains(&d.theta),
        template_values: d.theta,
        p: d.p,
        a_rho: d.a_rho,
        eta1: d.eta1,
        gamma: hi,
        margin,
        evals,
    })
}

/// Minimum-`γ` design: the boundary layer first (it fixes `L2f`), then the
/// reduced system with the fast parameters frozen.
pub fn synthesize(plant: &PlantParams, template: &GainTemplate, channels: &Channels, cfg: &SearchConfig) -> Result<DesignResult> {
    let fast = min_gamma(Which::BoundaryLayer, plant, template, channels, cfg, None)?;
    let slow = min_gamma(Which::Reduced, plant, template, channels, cfg, Some(&fast.template_values))?;
    Ok(DesignResult {
        gains: slow.gains,
        pf: fast.p,
        ps: slow.p,
        gamma_f: fast.gamma,
        gamma_s: slow.gamma,
        a_rho_f: fast.a_rho,
        a_rho_s: slow.a_rho,
        eta1: slow.eta1,
        objective: None,
        template_values: slow.template_values,
        search: Some(cfg.clone()),
    })
}

// ---------------------------------------------------------------------------
// MATI objective

const PENALTY_LMI: f64 = 1e6;
const PENALTY_SLOW_MATI: f64 = 1e5;
const PENALTY_LEMMA: f64 = 1e4;
const PENALTY_PIPELINE: f64 = 1e3;
/// Relative slack added to the closed-form `γ` so the eigenvalue test passes.
const GAMMA_SLACK: f64 = 1e-9;

struct ObjectiveProblem<'a> {
    plant: &'a PlantParams,
    template: &'a GainTemplate,
    channels: &'a Channels,
    timing: &'a TimingSpec,
    knobs: PipelineKnobs,
    base_theta: Vec<f64>,
    free: Vec<usize>,
    cfg: &'a SearchConfig,
}

impl ObjectiveProblem<'_> {
    fn decode(&self, x: &[f64]) -> (Vec<f64>, SymMatrix, f64, SymMatrix, f64, f64) {
        let (nz, nx) = (self.plant.nz(), self.plant.nx());
        let mut theta = self.base_theta.clone();
        for (k, &i) in self.free.iter().enumerate() {
            theta[i] = x[k];
        }
        let mut o = self.free.len();
        let pf = decode_pd(&x[o..o + chol_len(nz)], nz);
        o += chol_len(nz);
        let a_rho_f = pos(self.cfg.a_rho_f_floor, x[o]);
        o += 1;
        let ps = decode_pd(&x[o..o + chol_len(nx)], nx);
        o += chol_len(nx);
        let a_rho_s = pos(self.cfg.a_rho_s_floor, x[o]);
        let eta1 = pos(self.cfg.eta1_floor, x[o + 1]);
        (theta, pf, a_rho_f, ps, a_rho_s, eta1)
    }

    fn encode(&self, d: &DesignResult) -> Option<Vec<f64>> {
        let mut x: Vec<f64> = self.free.iter().map(|&i| d.template_values[i]).collect();
        x.extend(encode_pd(&d.pf)?);
        x.push(inv_pos(self.cfg.a_rho_f_floor, d.a_rho_f));
        x.extend(encode_pd(&d.ps)?);
        x.push(inv_pos(self.cfg.a_rho_s_floor, d.a_rho_s));
        x.push(inv_pos(self.cfg.eta1_floor, d.eta1));
        Some(x)
    }

    fn spread(&self) -> Vec<f64> {
        let mut s: Vec<f64> = self.free.iter().map(|&i| (0.5 * self.base_theta[i].abs()).max(0.05)).collect();
        s.extend(std::iter::repeat_n(0.5, chol_len(self.plant.nz())));
        s.push(1.0);
        s.extend(std::iter::repeat_n(0.5, chol_len(self.plant.nx())));
        s.extend([1.0, 1.0]);
        s
    }

    /// Design at `x` with both `γ` from the Schur closed form, or the
    /// penalty to return when the LMIs cannot hold.
    fn design(&self, x: &[f64]) -> std::result::Result<(DesignResult, SystemModel), f64> {
        let (theta, pf, a_rho_f, ps, a_rho_s, eta1) = self.decode(x);
        let gains = self.template.gains(&theta);
        let Ok(m) = SystemModel::new(self.plant.clone(), gains.clone()) else {
            return Err(PENALTY_LMI * 10.0);
        };
        let bl = LmiBlocks::boundary_layer(&m.fast, &self.channels.fast.certificate());
        let red = LmiBlocks::reduced(&m.reduced, &self.channels.slow.certificate());
        let excess = |b: &LmiBlocks, p: &SymMatrix, r: f64, e: f64| {
            let x = SymMatrix::from_dense_symmetrized(&b.top_left(&p.to_dense(), r, e));
            lambda_max(&x).unwrap_or(f64::INFINITY).max(0.0)
        };
        let (Some(gf), Some(gs)) = (bl.schur_gamma(&pf, a_rho_f, 0.0), red.schur_gamma(&ps, a_rho_s, eta1)) else {
            let e = excess(&bl, &pf, a_rho_f, 0.0) + excess(&red, &ps, a_rho_s, eta1);
            return Err(PENALTY_LMI * (1.0 + e.min(1e6)));
        };
        Ok((
            DesignResult {
                gains,
                pf,
                ps,
                gamma_f: gf * (1.0 + GAMMA_SLACK),
                gamma_s: gs * (1.0 + GAMMA_SLACK),
                a_rho_f,
                a_rho_s,
                eta1,
                objective: None,
                template_values: theta,
                search: Some(self.cfg.clone()),
            },
            m,
        ))
    }

    fn value(&self, x: &[f64]) -> f64 {
        let (d, m) = match self.design(x) {
            Ok(v) => v,
            Err(pen) => return pen,
        };
        let cert_s = self.channels.slow.certificate();
        let l_s = super::growth_constants(&m.fast, &m.reduced, &cert_s, &self.channels.fast.certificate()).l_s;
        let Ok(cert) = slow_timing_cert(l_s, d.gamma_s, cert_s.lambda, self.timing) else {
            return PENALTY_PIPELINE * 10.0;
        };
        if !cert.tau_ok {
            return PENALTY_SLOW_MATI * (1.0 + (self.timing.tau_mati_s - cert.t_slow).max(0.0));
        }
        if !cert.phi_ok {
            return PENALTY_LEMMA * (1.0 + (self.timing.lambda_s_star - cert.phi_min).max(0.0));
        }
        match ConstantsLedger::compute_with_model(&m, &d, self.channels, self.timing, &self.knobs) {
            Ok(l) if l.objective > 0.0 => -l.objective.ln(),
            _ => PENALTY_PIPELINE,
        }
    }
}

/// Search gains, Lyapunov matrices, `a_ρ` and `η1` for the largest
/// `ε* T*` subject to both LMIs and the slow timing certificate. Restart 0
/// starts from the minimum-`γ` design at the template start point.
pub fn maximize_mati_objective(
    plant: &PlantParams,
    template: &GainTemplate,
    channels: &Channels,
    timing: &TimingSpec,
    knobs: &PipelineKnobs,
    cfg: &SearchConfig,
) -> Result<(DesignResult, ConstantsLedger)> {
    cfg.validate()?;
    timing.validate()?;
    knobs.validate()?;
    let start = synthesize(plant, template, channels, &SearchConfig { search_gains: false, ..cfg.clone() })?;
    let free: Vec<usize> = if cfg.search_gains { (0..template.params.len()).collect() } else { Vec::new() };
    let prob = ObjectiveProblem {
        plant,
        template,
        channels,
        timing,
        knobs: PipelineKnobs {
            samples: cfg.objective_samples,
            validation_samples: 0,
            exec: Exec::Sequential,
            ..knobs.clone()
        },
        base_theta: start.template_values.clone(),
        free,
        cfg,
    };
    let x0 = prob.encode(&start).ok_or_else(|| Error::DesignInfeasible("start design is not positive definite".into()))?;
    let f = |x: &[f64]| prob.value(x);
    let best = multistart(
        &f,
        &x0,
        &prob.spread(),
        cfg.objective_restarts,
        cfg.objective_sweeps,
        cfg,
        cfg.seed.wrapping_add(0x0b7e),
        f64::NEG_INFINITY,
    );
    if best.f >= PENALTY_PIPELINE {
        return Err(Error::DesignInfeasible(format!("no admissible design found (penalty {:e})", best.f)));
    }
    let (mut design, m) = prob.design(&best.x).map_err(|_| Error::DesignInfeasible("best point lost feasibility".into()))?;
    let ledger = ConstantsLedger::compute_with_model(&m, &design, channels, timing, knobs)?;
    design.objective = Some(ledger.objective);
    Ok((design, ledger))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;

    #[test]
    fn cholesky_round_trip() {
        let p = presets::published_pf();
        let q = decode_pd(&encode_pd(&p).unwrap(), 2);
        assert!((&q.to_dense() - &p.to_dense()).max_abs() < 1e-12);
    }

    #[test]
    fn pattern_search_finds_quadratic_minimum() {
        let f = |x: &[f64]| (x[0] - 1.0).powi(2) + 3.0 * (x[1] + 2.0).powi(2);
        let mut rng = stream_rng(1, 0);
        let o = pattern_search(&f, vec![0.0, 0.0], &[0.5, 0.5], 500, 1e-10, f64::NEG_INFINITY, &mut rng);
        assert!(o.f < 1e-12, "{}", o.f);
    }

    #[test]
    fn multistart_is_mode_independent() {
        let f = |x: &[f64]| (x[0].sin() + 0.1 * x[0] * x[0]) + (x[1] - 0.5).abs();
        let mk = |exec| SearchConfig { exec, ..SearchConfig::default() };
        let a = multistart(&f, &[3.0, 0.0], &[2.0, 2.0], 16, 50, &mk(Exec::Sequential), 9, f64::NEG_INFINITY);
        let b = multistart(&f, &[3.0, 0.0], &[2.0, 2.0], 16, 50, &mk(Exec::Parallel), 9, f64::NEG_INFINITY);
        assert_eq!((a.x, a.f), (b.x, b.f));
    }

    #[test]
    fn min_gamma_fixed_matches_schur() {
        let m = SystemModel::new(presets::example_plant(), presets::reference_gains()).unwrap();
        let b = LmiBlocks::boundary_layer(&m.fast, &Channels::zeroing(&m.plant).fast.certificate());
        let p = lyapunov_start(&b, 0.5);
        let g = min_gamma_fixed(&b, &p, 0.5, 0.0, 100.0, 1e-9).unwrap();
        let s = b.schur_gamma(&p, 0.5, 0.0).unwrap();
        assert!((g - s).abs() < 1e-6, "{g} vs {s}");
    }

    #[test]
    fn infeasible_below_gamma_max() {
        let plant = presets::example_plant();
        let cfg = SearchConfig { gamma_max: 0.5, restarts: 2, sweeps: 20, a_rho_f_floor: 1.0, ..SearchConfig::default() };
        let r = min_gamma(Which::BoundaryLayer, &plant, &example_template(), &Channels::zeroing(&plant), &cfg, None);
        assert!(matches!(r, Err(Error::InfeasibleAtUpperBound { .. })));
    }
}
