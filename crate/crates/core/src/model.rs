//! Plant, observer and the error coordinates of the networked closed loop.
//!
//! The observer runs on network-held copies of the plant outputs and input.
//! Writing `δx = x_o − x_p`, `δz = z_o − z_p` and shifting the fast error by
//! its quasi-steady value, `δy = δz − H̄(δx, e_ys, e_us, v̂)`, splits the error
//! dynamics into a boundary layer (`δy`, `e_f`) and a reduced slow part
//! (`δx`, `e_s`). This module builds every matrix block of that split and
//! evaluates the full hybrid flow.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{self, is_hurwitz, is_observable, solve_linear, Matrix};

/// Linear singularly perturbed plant
/// `ẋ = A11 x + A12 z + B1 u`, `ε ż = A21 x + A22 z + B2 u`,
/// `y_s = C1s x`, `y_f = C2s x + C2f z`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantParams {
    #[serde(rename = "A11")]
    pub a11: Matrix,
    #[serde(rename = "A12")]
    pub a12: Matrix,
    #[serde(rename = "A21")]
    pub a21: Matrix,
    #[serde(rename = "A22")]
    pub a22: Matrix,
    #[serde(rename = "B1")]
    pub b1: Matrix,
    #[serde(rename = "B2")]
    pub b2: Matrix,
    #[serde(rename = "C1s")]
    pub c1s: Matrix,
    #[serde(rename = "C2s")]
    pub c2s: Matrix,
    #[serde(rename = "C2f")]
    pub c2f: Matrix,
    pub epsilon: f64,
}

fn expect_shape(name: &str, m: &Matrix, rows: usize, cols: usize) -> Result<()> {
    if m.shape() != (rows, cols) {
        return Err(Error::DimensionMismatch(format!(
            "{name} is {}x{}, expected {rows}x{cols}",
            m.rows(),
            m.cols()
        )));
    }
    Ok(())
}

impl PlantParams {
    pub fn nx(&self) -> usize {
        self.a11.rows()
    }
    pub fn nz(&self) -> usize {
        self.a22.rows()
    }
    pub fn nu(&self) -> usize {
        self.b1.cols()
    }
    pub fn nys(&self) -> usize {
        self.c1s.rows()
    }
    pub fn nyf(&self) -> usize {
        self.c2f.rows()
    }

    /// Check shapes, `0 < ε < 1`, invertibility of `A22` and observability
    /// of `(A11, C1s)` and `(A22, C2f)`.
    pub fn validate(&self) -> Result<()> {
        let (nx, nz, nu, nys, nyf) = (self.nx(), self.nz(), self.nu(), self.nys(), self.nyf());
        if nx == 0 || nz == 0 || nys == 0 || nyf == 0 {
            return Err(Error::InvalidInput("plant dimensions must be positive".into()));
        }
        expect_shape("A11", &self.a11, nx, nx)?;
        expect_shape("A12", &self.a12, nx, nz)?;
        expect_shape("A21", &self.a21, nz, nx)?;
        expect_shape("A22", &self.a22, nz, nz)?;
        expect_shape("B1", &self.b1, nx, nu)?;
        expect_shape("B2", &self.b2, nz, nu)?;
        expect_shape("C1s", &self.c1s, nys, nx)?;
        expect_shape("C2s", &self.c2s, nyf, nx)?;
        expect_shape("C2f", &self.c2f, nyf, nz)?;
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::InvalidInput(format!("epsilon = {} must lie in (0, 1)", self.epsilon)));
        }
        numerics::inverse(&self.a22)?;
        if !is_observable(&self.a11, &self.c1s)? {
            return Err(Error::InvalidInput("(A11, C1s) is not observable".into()));
        }
        if !is_observable(&self.a22, &self.c2f)? {
            return Err(Error::InvalidInput("(A22, C2f) is not observable".into()));
        }
        Ok(())
    }

    pub fn with_epsilon(&self, epsilon: f64) -> Self {
        Self { epsilon, ..self.clone() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObserverGains {
    #[serde(rename = "L1s")]
    pub l1s: Matrix,
    #[serde(rename = "L1f")]
    pub l1f: Matrix,
    #[serde(rename = "L2s")]
    pub l2s: Matrix,
    #[serde(rename = "L2f")]
    pub l2f: Matrix,
}

impl ObserverGains {
    pub fn zeros(p: &PlantParams) -> Self {
        Self {
            l1s: Matrix::zeros(p.nx(), p.nys()),
            l1f: Matrix::zeros(p.nx(), p.nyf()),
            l2s: Matrix::zeros(p.nz(), p.nys()),
            l2f: Matrix::zeros(p.nz(), p.nyf()),
        }
    }

    pub fn validate(&self, p: &PlantParams) -> Result<()> {
        expect_shape("L1s", &self.l1s, p.nx(), p.nys())?;
        expect_shape("L1f", &self.l1f, p.nx(), p.nyf())?;
        expect_shape("L2s", &self.l2s, p.nz(), p.nys())?;
        expect_shape("L2f", &self.l2f, p.nz(), p.nyf())
    }
}

/// Boundary-layer blocks: `∂(δy, e_f)/∂σ = [[Af11, Af12], [Af21, Af22]] (δy, e_f)`.
#[derive(Clone, Debug, PartialEq)]
pub struct FastBlocks {
    pub af11: Matrix,
    pub af12: Matrix,
    pub af21: Matrix,
    pub af22: Matrix,
    pub af11_inv: Matrix,
}

pub fn build_fast_blocks(p: &PlantParams, g: &ObserverGains) -> Result<FastBlocks> {
    g.validate(p)?;
    let af11 = &p.a22 - &(&g.l2f * &p.c2f);
    if !is_hurwitz(&af11) {
        return Err(Error::DesignInfeasible("A22 - L2f C2f is not Hurwitz".into()));
    }
    let af11_inv = numerics::inverse(&af11)?;
    Ok(FastBlocks {
        af12: g.l2f.clone(),
        af21: &p.c2f * &af11,
        af22: &p.c2f * &g.l2f,
        af11,
        af11_inv,
    })
}

/// Coefficients of the quasi-steady fast error
/// `H̄ = Gx δx + Ge (e_ys + v̂1) + Gu e_us + Gv2 v̂2`.
#[derive(Clone, Debug, PartialEq)]
pub struct HbarCoeffs {
    pub gx: Matrix,
    pub ge: Matrix,
    pub gu: Matrix,
    pub gv2: Matrix,
    /// `Gx + Ge C1s`, the sensitivity of `H̄` along `(δ̇x, ė_ys) = (f, C1s f)`.
    pub k: Matrix,
}

impl HbarCoeffs {
    pub fn eval(&self, dx: &[f64], eys: &[f64], eus: &[f64], v1h: &[f64], v2h: &[f64]) -> Vec<f64> {
        let ey: Vec<f64> = eys.iter().zip(v1h).map(|(a, b)| a + b).collect();
        let mut out = self.gx.mul_vec(dx);
        self.ge.mul_vec_acc(&ey, &mut out);
        self.gu.mul_vec_acc(eus, &mut out);
        self.gv2.mul_vec_acc(v2h, &mut out);
        out
    }
}

/// Coupling from the slow error into `ε δ̇z` with gains applied:
/// `A21 − L2s C1s − L2f C2s`.
fn a21_closed(p: &PlantParams, g: &ObserverGains) -> Matrix {
    &(&p.a21 - &(&g.l2s * &p.c1s)) - &(&g.l2f * &p.c2s)
}

pub fn build_hbar(p: &PlantParams, g: &ObserverGains, f: &FastBlocks) -> Result<HbarCoeffs> {
    let rhs = Matrix::hstack(&[&a21_closed(p, g), &g.l2s, &p.b2, &g.l2f])?;
    let sol = solve_linear(&f.af11, &rhs)?.scale(-1.0);
    let (nx, nys, nu, nyf) = (p.nx(), p.nys(), p.nu(), p.nyf());
    let nz = p.nz();
    let gx = sol.block(0, 0, nz, nx);
    let ge = sol.block(0, nx, nz, nys);
    let gu = sol.block(0, nx + nys, nz, nu);
    let gv2 = sol.block(0, nx + nys + nu, nz, nyf);
    let k = &gx + &(&ge * &p.c1s);
    Ok(HbarCoeffs { gx, ge, gu, gv2, k })
}

/// `ε δ̇z` as a function of the untransformed error coordinates.
#[allow(clippy::too_many_arguments)]
pub fn g_delta_z(
    p: &PlantParams,
    g: &ObserverGains,
    dx: &[f64],
    eys: &[f64],
    eus: &[f64],
    dz: &[f64],
    ef: &[f64],
    v1h: &[f64],
    v2h: &[f64],
) -> Vec<f64> {
    let af11 = &p.a22 - &(&g.l2f * &p.c2f);
    let mut out = a21_closed(p, g).mul_vec(dx);
    af11.mul_vec_acc(dz, &mut out);
    p.b2.mul_vec_acc(eus, &mut out);
    let ey: Vec<f64> = eys.iter().zip(v1h).map(|(a, b)| a + b).collect();
    g.l2s.mul_vec_acc(&ey, &mut out);
    let e2: Vec<f64> = ef.iter().zip(v2h).map(|(a, b)| a + b).collect();
    g.l2f.mul_vec_acc(&e2, &mut out);
    out
}

/// Reduced-system blocks. `ar1[k]` is `A^r_{1,k+1}` and `ar2[k] = C1s ar1[k]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ReducedBlocks {
    pub d: Matrix,
    /// `A12 − L1f C2f`, the coefficient of the fast error in `δ̇x`.
    pub a12p: Matrix,
    pub ar1: [Matrix; 5],
    pub ar2: [Matrix; 5],
    pub as11: Matrix,
    pub as12: Matrix,
    pub as13: Matrix,
    pub as21: Matrix,
    pub as22: Matrix,
    pub as23: Matrix,
}

pub fn build_reduced_blocks(p: &PlantParams, g: &ObserverGains, f: &FastBlocks) -> Result<ReducedBlocks> {
    let a12p = &p.a12 - &(&g.l1f * &p.c2f);
    // D = A12' Af11⁻¹, computed as (Af11ᵀ \ A12'ᵀ)ᵀ
    let d = solve_linear(&f.af11.transpose(), &a12p.transpose())?.transpose();
    let a11c = &(&p.a11 - &(&g.l1s * &p.c1s)) - &(&g.l1f * &p.c2s);
    let ar11 = &a11c - &(&d * &a21_closed(p, g));
    let ar12 = &g.l1s - &(&d * &g.l2s);
    let ar13 = &p.b1 - &(&d * &p.b2);
    let ar14 = ar12.clone();
    let ar15 = &g.l1f - &(&d * &g.l2f);
    let ar1 = [ar11, ar12, ar13, ar14, ar15];
    let ar2 = ar1.clone().map(|m| &p.c1s * &m);

    let (nys, nu, nyf, nx) = (p.nys(), p.nu(), p.nyf(), p.nx());
    let as11 = ar1[0].clone();
    let as12 = Matrix::hstack(&[&ar1[1], &ar1[2]])?;
    let as13 = Matrix::hstack(&[&ar1[3], &ar1[4]])?;
    let as21 = Matrix::vstack(&[&ar2[0], &Matrix::zeros(nu, nx)])?;
    let as22 = Matrix::vstack(&[
        &Matrix::hstack(&[&ar2[1], &ar2[2]])?,
        &Matrix::zeros(nu, nys + nu),
    ])?;
    let as23 = Matrix::vstack(&[
        &Matrix::hstack(&[&ar2[3], &ar2[4]])?,
        &Matrix::zeros(nu, nys + nyf),
    ])?;
    Ok(ReducedBlocks { d, a12p, ar1, ar2, as11, as12, as13, as21, as22, as23 })
}

/// `δy = δz − H̄`
pub fn delta_y_shift(dz: &[f64], hbar_value: &[f64]) -> Vec<f64> {
    dz.iter().zip(hbar_value).map(|(a, b)| a - b).collect()
}

/// Quasi-steady fast plant state `z̄ = −A22⁻¹ (A21 x + B2 u)`.
pub fn quasi_steady_plant(p: &PlantParams, xp: &[f64], us: &[f64]) -> Result<Vec<f64>> {
    let mut rhs = p.a21.mul_vec(xp);
    p.b2.mul_vec_acc(us, &mut rhs);
    let sol = solve_linear(&p.a22, &Matrix::column(&rhs))?;
    Ok(sol.as_slice().iter().map(|v| -v).collect())
}

/// Offsets of the named blocks inside the flat hybrid state
/// `(δx, e_ys, e_us, τs, κs, v̂1, x_p, ẽ_ps, δy, e_f, τf, κf, v̂2, z_p, ẽ_pf)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StateLayout {
    pub dx: Range<usize>,
    pub eys: Range<usize>,
    pub eus: Range<usize>,
    pub tau_s: usize,
    pub kappa_s: usize,
    pub v1h: Range<usize>,
    pub xp: Range<usize>,
    pub eps: Range<usize>,
    pub dy: Range<usize>,
    pub ef: Range<usize>,
    pub tau_f: usize,
    pub kappa_f: usize,
    pub v2h: Range<usize>,
    pub zp: Range<usize>,
    pub epf: Range<usize>,
    pub len: usize,
}

impl StateLayout {
    pub fn new(p: &PlantParams) -> Self {
        let mut at = 0;
        let mut take = |n: usize| {
            let r = at..at + n;
            at += n;
            r
        };
        let dx = take(p.nx());
        let eys = take(p.nys());
        let eus = take(p.nu());
        let tau_s = take(1).start;
        let kappa_s = take(1).start;
        let v1h = take(p.nys());
        let xp = take(p.nx());
        let eps = take(p.nys());
        let dy = take(p.nz());
        let ef = take(p.nyf());
        let tau_f = take(1).start;
        let kappa_f = take(1).start;
        let v2h = take(p.nyf());
        let zp = take(p.nz());
        let epf = take(p.nyf());
        let len = epf.end;
        Self { dx, eys, eus, tau_s, kappa_s, v1h, xp, eps, dy, ef, tau_f, kappa_f, v2h, zp, epf, len }
    }

    /// Column names in storage order, used as the CSV header.
    pub fn names(&self) -> Vec<String> {
        fn block(out: &mut Vec<String>, prefix: &str, r: &Range<usize>) {
            out.extend((1..=r.len()).map(|i| format!("{prefix}{i}")));
        }
        let mut out = Vec::with_capacity(self.len);
        block(&mut out, "dx", &self.dx);
        block(&mut out, "eys", &self.eys);
        block(&mut out, "eus", &self.eus);
        out.push("tau_s".into());
        out.push("kappa_s".into());
        block(&mut out, "v1hat", &self.v1h);
        block(&mut out, "xp", &self.xp);
        block(&mut out, "eps_tilde", &self.eps);
        block(&mut out, "dy", &self.dy);
        block(&mut out, "ef", &self.ef);
        out.push("tau_f".into());
        out.push("kappa_f".into());
        block(&mut out, "v2hat", &self.v2h);
        block(&mut out, "zp", &self.zp);
        block(&mut out, "epf_tilde", &self.epf);
        out
    }
}

/// Exogenous quantities needed during flow.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FlowInputs {
    pub us: Vec<f64>,
    pub dus: Vec<f64>,
    pub dv1: Vec<f64>,
    pub dv2: Vec<f64>,
}

/// Plant, gains and every derived block, validated once.
#[derive(Clone, Debug)]
pub struct SystemModel {
    pub plant: PlantParams,
    pub gains: ObserverGains,
    pub fast: FastBlocks,
    pub hbar: HbarCoeffs,
    pub reduced: ReducedBlocks,
    pub layout: StateLayout,
    a11c: Matrix,
}

impl SystemModel {
    pub fn new(plant: PlantParams, gains: ObserverGains) -> Result<Self> {
        plant.validate()?;
        gains.validate(&plant)?;
        let fast = build_fast_blocks(&plant, &gains)?;
        let hbar = build_hbar(&plant, &gains, &fast)?;
        let reduced = build_reduced_blocks(&plant, &gains, &fast)?;
        let layout = StateLayout::new(&plant);
        let a11c = &(&plant.a11 - &(&gains.l1s * &plant.c1s)) - &(&gains.l1f * &plant.c2s);
        Ok(Self { plant, gains, fast, hbar, reduced, layout, a11c })
    }

    pub fn epsilon(&self) -> f64 {
        self.plant.epsilon
    }

    /// `H̄` evaluated on a full hybrid state.
    pub fn hbar_at(&self, x: &[f64]) -> Vec<f64> {
        let l = &self.layout;
        self.hbar.eval(&x[l.dx.clone()], &x[l.eys.clone()], &x[l.eus.clone()], &x[l.v1h.clone()], &x[l.v2h.clone()])
    }

    /// `δ̇x` in the displayed form, with the fast error entering as `δy + H̄`.
    pub fn f_delta_x(&self, x: &[f64]) -> Vec<f64> {
        let l = &self.layout;
        let hb = self.hbar_at(x);
        let dz: Vec<f64> = x[l.dy.clone()].iter().zip(&hb).map(|(a, b)| a + b).collect();
        let mut out = self.a11c.mul_vec(&x[l.dx.clone()]);
        self.reduced.a12p.mul_vec_acc(&dz, &mut out);
        self.plant.b1.mul_vec_acc(&x[l.eus.clone()], &mut out);
        let ey: Vec<f64> = x[l.eys.clone()].iter().zip(&x[l.v1h.clone()]).map(|(a, b)| a + b).collect();
        self.gains.l1s.mul_vec_acc(&ey, &mut out);
        let e2: Vec<f64> = x[l.ef.clone()].iter().zip(&x[l.v2h.clone()]).map(|(a, b)| a + b).collect();
        self.gains.l1f.mul_vec_acc(&e2, &mut out);
        out
    }

    /// Full hybrid flow map.
    pub fn flow_field(&self, x: &[f64], inp: &FlowInputs) -> Result<Vec<f64>> {
        let l = &self.layout;
        let p = &self.plant;
        if x.len() != l.len {
            return Err(Error::DimensionMismatch(format!("state has {} entries, layout {}", x.len(), l.len)));
        }
        let eps = p.epsilon;
        let mut dxdt = vec![0.0; l.len];

        let fdx = self.f_delta_x(x);
        let fys = p.c1s.mul_vec(&fdx);

        // boundary-layer part, Af11 δy + Af12 e_f
        let mut bl = self.fast.af11.mul_vec(&x[l.dy.clone()]);
        self.fast.af12.mul_vec_acc(&x[l.ef.clone()], &mut bl);

        // dH̄/dt along the slow flow: K f − Gu u̇
        let mut dh = self.hbar.k.mul_vec(&fdx);
        let gu_du = self.hbar.gu.mul_vec(&inp.dus);

        for (k, i) in l.dx.clone().enumerate() {
            dxdt[i] = fdx[k];
        }
        for (k, i) in l.eys.clone().enumerate() {
            dxdt[i] = fys[k];
        }
        for (k, i) in l.eus.clone().enumerate() {
            dxdt[i] = -inp.dus[k];
        }
        dxdt[l.tau_s] = 1.0;

        let mut xdot = p.a11.mul_vec(&x[l.xp.clone()]);
        p.a12.mul_vec_acc(&x[l.zp.clone()], &mut xdot);
        p.b1.mul_vec_acc(&inp.us, &mut xdot);
        let mut zdot = p.a21.mul_vec(&x[l.xp.clone()]);
        p.a22.mul_vec_acc(&x[l.zp.clone()], &mut zdot);
        p.b2.mul_vec_acc(&inp.us, &mut zdot);
        zdot.iter_mut().for_each(|v| *v /= eps);

        for (k, i) in l.xp.clone().enumerate() {
            dxdt[i] = xdot[k];
        }
        let c1x = p.c1s.mul_vec(&xdot);
        for (k, i) in l.eps.clone().enumerate() {
            dxdt[i] = -c1x[k] - inp.dv1[k];
        }

        for (k, v) in dh.iter_mut().enumerate() {
            *v -= gu_du[k];
        }
        for (k, i) in l.dy.clone().enumerate() {
            dxdt[i] = bl[k] / eps - dh[k];
        }
        let c2s_f = p.c2s.mul_vec(&fdx);
        let c2f_bl = p.c2f.mul_vec(&bl);
        for (k, i) in l.ef.clone().enumerate() {
            dxdt[i] = c2s_f[k] + c2f_bl[k] / eps;
        }
        dxdt[l.tau_f] = 1.0 / eps;
        for (k, i) in l.zp.clone().enumerate() {
            dxdt[i] = zdot[k];
        }
        let mut yf = p.c2s.mul_vec(&xdot);
        p.c2f.mul_vec_acc(&zdot, &mut yf);
        for (k, i) in l.epf.clone().enumerate() {
            dxdt[i] = -yf[k] - inp.dv2[k];
        }

        if dxdt.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericalBlowup("non-finite flow derivative".into()));
        }
        Ok(dxdt)
    }
}
