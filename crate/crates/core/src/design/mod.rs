//! LMI design conditions for the boundary-layer and reduced systems, the
//! growth constants that feed them, and gain synthesis.
//!
//! Both conditions share one shape:
//!
//! ```text
//! [ P A + Aᵀ P + η PᵀP + a_ρ I + A_Hᵀ A_H    P B                  ]
//! [ Bᵀ P                                    (a_ρ ā_W² − γ² a_W²) I ] ≤ 0
//! ```
//!
//! with `(A, B, A_H) = (Af11, Af12, A_Hf)` and `η = 0` for the boundary
//! layer, and `(A, B, A_H) = (As11, As12, A_Hs)` for the reduced system.
//! Feasibility is an eigenvalue sign test; synthesis is bisection on `γ`
//! around a derivative-free search, see [`search`].

pub mod search;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{FastBlocks, ObserverGains, PlantParams, ReducedBlocks, SystemModel};
use crate::numerics::{self, is_hurwitz, lambda_max, lambda_min, Matrix, SymMatrix, LMI_TOL};
use crate::protocols::{Channels, ProtocolCertificate};

pub use search::{maximize_mati_objective, min_gamma, min_gamma_fixed, synthesize, SearchConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Which {
    BoundaryLayer,
    Reduced,
}

/// Growth bounds of the network-induced errors along the boundary-layer and
/// reduced flows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrowthConstants {
    pub l_s: f64,
    pub a_hs: Matrix,
    pub aws_v1: f64,
    pub aws_v2: f64,
    pub l_f: f64,
    pub a_hf: Matrix,
}

pub fn growth_constants(
    f: &FastBlocks,
    r: &ReducedBlocks,
    cert_s: &ProtocolCertificate,
    cert_f: &ProtocolCertificate,
) -> GrowthConstants {
    GrowthConstants {
        l_s: cert_s.m * r.as22.norm2() / cert_s.aw_lower,
        a_hs: r.as21.scale(cert_s.m),
        aws_v1: cert_s.m * r.ar2[3].norm2(),
        aws_v2: cert_s.m * r.ar2[4].norm2(),
        l_f: cert_f.m * f.af22.norm2() / cert_f.aw_lower,
        a_hf: f.af21.scale(cert_f.m),
    }
}

/// The matrices entering one LMI.
#[derive(Clone, Debug, PartialEq)]
pub struct LmiBlocks {
    pub a: Matrix,
    pub b: Matrix,
    pub ah: Matrix,
    pub aw_lower: f64,
    pub aw_upper: f64,
}

impl LmiBlocks {
    pub fn boundary_layer(f: &FastBlocks, cert_f: &ProtocolCertificate) -> Self {
        Self {
            a: f.af11.clone(),
            b: f.af12.clone(),
            ah: f.af21.scale(cert_f.m),
            aw_lower: cert_f.aw_lower,
            aw_upper: cert_f.aw_upper,
        }
    }

    pub fn reduced(r: &ReducedBlocks, cert_s: &ProtocolCertificate) -> Self {
        Self {
            a: r.as11.clone(),
            b: r.as12.clone(),
            ah: r.as21.scale(cert_s.m),
            aw_lower: cert_s.aw_lower,
            aw_upper: cert_s.aw_upper,
        }
    }

    pub fn for_model(which: Which, m: &SystemModel, channels: &Channels) -> Self {
        match which {
            Which::BoundaryLayer => Self::boundary_layer(&m.fast, &channels.fast.certificate()),
            Which::Reduced => Self::reduced(&m.reduced, &channels.slow.certificate()),
        }
    }

    pub fn n(&self) -> usize {
        self.a.rows()
    }

    /// Lower bound on any feasible `γ` given a floor on `a_ρ`.
    pub fn gamma_floor(&self, a_rho_floor: f64) -> f64 {
        a_rho_floor.max(0.0).sqrt() * self.aw_upper / self.aw_lower
    }

    /// Top-left block `P A + Aᵀ P + η PᵀP + a_ρ I + A_Hᵀ A_H`.
    pub fn top_left(&self, p: &Matrix, a_rho: f64, eta1: f64) -> Matrix {
        let pa = p * &self.a;
        let mut x = &pa + &pa.transpose();
        if eta1 != 0.0 {
            x = &x + &(&p.transpose() * p).scale(eta1);
        }
        x = &x + &Matrix::identity(self.n()).scale(a_rho);
        &x + &(&self.ah.transpose() * &self.ah)
    }

    pub fn assemble(&self, p: &SymMatrix, a_rho: f64, gamma: f64, eta1: f64) -> SymMatrix {
        let n = self.n();
        let m = self.b.cols();
        let pd = p.to_dense();
        let x = self.top_left(&pd, a_rho, eta1);
        let y = &pd * &self.b;
        let z = a_rho * self.aw_upper.powi(2) - gamma * gamma * self.aw_lower.powi(2);
        let mut full = Matrix::zeros(n + m, n + m);
        full.set_block(0, 0, &x);
        full.set_block(0, n, &y);
        full.set_block(n, 0, &y.transpose());
        full.set_block(n, n, &Matrix::identity(m).scale(z));
        SymMatrix::from_dense_symmetrized(&full)
    }

    /// Largest eigenvalue of the assembled LMI; feasible iff `≤ LMI_TOL`.
    pub fn margin(&self, p: &SymMatrix, a_rho: f64, gamma: f64, eta1: f64) -> f64 {
        lambda_max(&self.assemble(p, a_rho, gamma, eta1)).unwrap_or(f64::INFINITY)
    }

    /// Smallest `γ` making the LMI hold at fixed `(P, a_ρ, η)`, from the
    /// Schur complement. `None` when the top-left block is not negative
    /// definite.
    pub fn schur_gamma(&self, p: &SymMatrix, a_rho: f64, eta1: f64) -> Option<f64> {
        let pd = p.to_dense();
        let x = self.top_left(&pd, a_rho, eta1);
        let xs = SymMatrix::from_dense_symmetrized(&x);
        if lambda_max(&xs).ok()? >= 0.0 {
            return None;
        }
        let y = &pd * &self.b;
        let sol = numerics::solve_linear(&x.scale(-1.0), &y).ok()?;
        let s = SymMatrix::from_dense_symmetrized(&(&y.transpose() * &sol));
        let worst = if s.dim() == 0 { 0.0 } else { lambda_max(&s).ok()?.max(0.0) };
        Some(((a_rho * self.aw_upper.powi(2) + worst) / self.aw_lower.powi(2)).sqrt())
    }
}

pub fn assemble_lmi_bl(f: &FastBlocks, cert_f: &ProtocolCertificate, inst: &LmiInstance) -> Result<SymMatrix> {
    inst.check(Which::BoundaryLayer, f.af11.rows())?;
    Ok(LmiBlocks::boundary_layer(f, cert_f).assemble(&inst.p, inst.a_rho, inst.gamma, 0.0))
}

pub fn assemble_lmi_reduced(r: &ReducedBlocks, cert_s: &ProtocolCertificate, inst: &LmiInstance) -> Result<SymMatrix> {
    inst.check(Which::Reduced, r.as11.rows())?;
    Ok(LmiBlocks::reduced(r, cert_s).assemble(&inst.p, inst.a_rho, inst.gamma, inst.eta1))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LmiInstance {
    pub which: Which,
    pub p: SymMatrix,
    pub a_rho: f64,
    pub gamma: f64,
    #[serde(default)]
    pub eta1: f64,
}

impl LmiInstance {
    fn check(&self, which: Which, n: usize) -> Result<()> {
        if self.which != which {
            return Err(Error::InvalidInput(format!("instance is for {:?}, not {which:?}", self.which)));
        }
        if self.p.dim() != n {
            return Err(Error::DimensionMismatch(format!("P is {0}x{0}, expected {n}x{n}", self.p.dim())));
        }
        if !(self.a_rho > 0.0 && self.gamma >= 0.0) {
            return Err(Error::InvalidInput("need a_rho > 0 and gamma >= 0".into()));
        }
        if which == Which::Reduced && !(self.eta1 > 0.0) {
            return Err(Error::InvalidInput("reduced LMI needs eta1 > 0".into()));
        }
        Ok(())
    }
}

/// Affine gain parametrization `gains(θ) = base + Σ θ_i G_i`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GainTemplate {
    pub base: ObserverGains,
    pub params: Vec<TemplateParam>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TemplateParam {
    pub name: String,
    pub initial: f64,
    #[serde(rename = "L1s", default, skip_serializing_if = "Option::is_none")]
    pub l1s: Option<Matrix>,
    #[serde(rename = "L1f", default, skip_serializing_if = "Option::is_none")]
    pub l1f: Option<Matrix>,
    #[serde(rename = "L2s", default, skip_serializing_if = "Option::is_none")]
    pub l2s: Option<Matrix>,
    #[serde(rename = "L2f", default, skip_serializing_if = "Option::is_none")]
    pub l2f: Option<Matrix>,
}

impl TemplateParam {
    /// Whether this parameter moves the fast gain `L2f`.
    pub fn touches_fast(&self) -> bool {
        self.l2f.as_ref().is_some_and(|m| m.max_abs() > 0.0)
    }
}

impl GainTemplate {
    pub fn validate(&self, p: &PlantParams) -> Result<()> {
        self.base.validate(p)?;
        for t in &self.params {
            let mut g = ObserverGains::zeros(p);
            if let Some(m) = &t.l1s {
                g.l1s = m.clone();
            }
            if let Some(m) = &t.l1f {
                g.l1f = m.clone();
            }
            if let Some(m) = &t.l2s {
                g.l2s = m.clone();
            }
            if let Some(m) = &t.l2f {
                g.l2f = m.clone();
            }
            g.validate(p).map_err(|e| Error::InvalidConfig(format!("template parameter {}: {e}", t.name)))?;
            if !t.initial.is_finite() {
                return Err(Error::InvalidConfig(format!("template parameter {} has no finite start", t.name)));
            }
        }
        Ok(())
    }

    pub fn initial(&self) -> Vec<f64> {
        self.params.iter().map(|t| t.initial).collect()
    }

    pub fn gains(&self, theta: &[f64]) -> ObserverGains {
        let mut g = self.base.clone();
        for (t, &v) in self.params.iter().zip(theta) {
            if let Some(m) = &t.l1s {
                g.l1s = &g.l1s + &m.scale(v);
            }
            if let Some(m) = &t.l1f {
                g.l1f = &g.l1f + &m.scale(v);
            }
            if let Some(m) = &t.l2s {
                g.l2s = &g.l2s + &m.scale(v);
            }
            if let Some(m) = &t.l2f {
                g.l2f = &g.l2f + &m.scale(v);
            }
        }
        g
    }

    /// Indices of parameters a search for `which` may move.
    pub fn free_indices(&self, which: Which) -> Vec<usize> {
        (0..self.params.len())
            .filter(|&i| match which {
                Which::BoundaryLayer => self.params[i].touches_fast(),
                Which::Reduced => !self.params[i].touches_fast(),
            })
            .collect()
    }
}

/// A synthesized or supplied observer design.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignResult {
    pub gains: ObserverGains,
    pub pf: SymMatrix,
    pub ps: SymMatrix,
    pub gamma_f: f64,
    pub gamma_s: f64,
    pub a_rho_f: f64,
    pub a_rho_s: f64,
    pub eta1: f64,
    /// `ε* T*` when the design came from the MATI objective.
    pub objective: Option<f64>,
    #[serde(default)]
    pub template_values: Vec<f64>,
    pub search: Option<SearchConfig>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub bl_lambda_max: f64,
    pub reduced_lambda_max: f64,
    pub pf_lambda_min: f64,
    pub ps_lambda_min: f64,
    pub af11_hurwitz: bool,
    pub bl_ok: bool,
    pub reduced_ok: bool,
    pub pass: bool,
}

/// Positive-definiteness threshold for Lyapunov matrices.
pub const PD_TOL: f64 = 1e-9;

impl DesignResult {
    pub fn bl_instance(&self) -> LmiInstance {
        LmiInstance { which: Which::BoundaryLayer, p: self.pf.clone(), a_rho: self.a_rho_f, gamma: self.gamma_f, eta1: 0.0 }
    }

    pub fn reduced_instance(&self) -> LmiInstance {
        LmiInstance { which: Which::Reduced, p: self.ps.clone(), a_rho: self.a_rho_s, gamma: self.gamma_s, eta1: self.eta1 }
    }

    /// Re-check both LMIs at `LMI_TOL`, positive definiteness of the
    /// Lyapunov matrices and the Hurwitz property of `Af11`.
    pub fn verify(&self, plant: &PlantParams, channels: &Channels) -> Result<VerifyReport> {
        self.gains.validate(plant)?;
        let af11 = &plant.a22 - &(&self.gains.l2f * &plant.c2f);
        let hurwitz = is_hurwitz(&af11);
        let pf_min = lambda_min(&self.pf)?;
        let ps_min = lambda_min(&self.ps)?;
        let (bl, red) = if hurwitz {
            let m = SystemModel::new(plant.clone(), self.gains.clone())?;
            let bl = lambda_max(&assemble_lmi_bl(&m.fast, &channels.fast.certificate(), &self.bl_instance())?)?;
            let red = lambda_max(&assemble_lmi_reduced(&m.reduced, &channels.slow.certificate(), &self.reduced_instance())?)?;
            (bl, red)
        } else {
            (f64::INFINITY, f64::INFINITY)
        };
        let bl_ok = bl <= LMI_TOL && pf_min > PD_TOL;
        let reduced_ok = red <= LMI_TOL && ps_min > PD_TOL;
        Ok(VerifyReport {
            bl_lambda_max: bl,
            reduced_lambda_max: red,
            pf_lambda_min: pf_min,
            ps_lambda_min: ps_min,
            af11_hurwitz: hurwitz,
            bl_ok,
            reduced_ok,
            pass: hurwitz && bl_ok && reduced_ok,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;
    use crate::protocols::Channels;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn model() -> SystemModel {
        SystemModel::new(presets::example_plant(), presets::reference_gains()).unwrap()
    }

    #[test]
    fn growth_constants_of_example() {
        let m = model();
        let ch = Channels::zeroing(&m.plant);
        let g = growth_constants(&m.fast, &m.reduced, &ch.slow.certificate(), &ch.fast.certificate());
        assert!((g.l_s - 1.85).abs() < 0.01, "L_s = {}", g.l_s);
        assert_eq!(g.l_f, 0.0);
        assert_eq!(g.a_hf, m.fast.af21);
    }

    #[test]
    fn huge_gamma_is_feasible_zero_gamma_is_not() {
        let m = model();
        let blocks = LmiBlocks::boundary_layer(&m.fast, &Channels::zeroing(&m.plant).fast.certificate());
        let p = numerics::lyapunov(&blocks.a, &SymMatrix::from_dense_symmetrized(
            &(&Matrix::identity(2).scale(2.0) + &(&blocks.ah.transpose() * &blocks.ah).scale(2.0)),
        ))
        .unwrap();
        assert!(blocks.margin(&p, 0.5, 1e3, 0.0) <= LMI_TOL);
        assert!(blocks.margin(&p, 0.5, 0.0, 0.0) > 0.0);
    }

    #[test]
    fn enormous_eta_breaks_reduced_lmi() {
        let m = model();
        let blocks = LmiBlocks::reduced(&m.reduced, &Channels::zeroing(&m.plant).slow.certificate());
        let p = SymMatrix::identity(2);
        assert!(blocks.margin(&p, 0.1, 1e3, 1e6) > 0.0);
    }

    #[test]
    fn schur_gamma_matches_eigen_test() {
        let m = model();
        let ch = Channels::zeroing(&m.plant);
        let bl = LmiBlocks::boundary_layer(&m.fast, &ch.fast.certificate());
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut hits = 0;
        for _ in 0..300 {
            let q = Matrix::from_rows(&[&[rng.gen_range(0.1..3.0), 0.0], &[rng.gen_range(-1.0..1.0), rng.gen_range(0.1..3.0)]]).unwrap();
            let a_rho = rng.gen_range(1e-3..0.5);
            let eta = if rng.gen_bool(0.5) { 0.0 } else { rng.gen_range(1e-4..1e-2) };
            // P A + Aᵀ P = −(R + A_HᵀA_H + a_ρ I) leaves −R + η PᵀP as the top-left block.
            let rhs = &(&(&q * &q.transpose()) + &(&bl.ah.transpose() * &bl.ah)) + &Matrix::identity(2).scale(a_rho);
            let p = crate::numerics::lyapunov(&bl.a, &SymMatrix::from_dense_symmetrized(&rhs)).unwrap();
            if let Some(g) = bl.schur_gamma(&p, a_rho, eta) {
                hits += 1;
                assert!(bl.margin(&p, a_rho, g * (1.0 + 1e-7), eta) <= LMI_TOL);
                assert!(bl.margin(&p, a_rho, g * (1.0 - 1e-4), eta) > 0.0);
            }
        }
        assert!(hits > 100, "{hits}");
    }

    #[test]
    fn template_reproduces_reference_gains() {
        let t = search::example_template();
        t.validate(&presets::example_plant()).unwrap();
        assert_eq!(t.gains(&[0.02, 0.01, 0.18]), presets::reference_gains());
        assert!(t.free_indices(Which::BoundaryLayer).is_empty());
        assert_eq!(t.free_indices(Which::Reduced), vec![0, 1, 2]);
    }
}
