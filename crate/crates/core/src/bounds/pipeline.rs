//! From certified designs to `ε*`, the fast MATI and the DISS gains.

use serde::{Deserialize, Serialize};

use super::sampled::{interconnection_constants, slow_jump_lambdas, InterconnectionInputs, SampledMeta};
use super::{lyapunov_envelopes, slow_timing_cert, t_bound, SlowTimingCert, TimingSpec};
use crate::design::{growth_constants, DesignResult};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::model::{PlantParams, SystemModel};
use crate::protocols::{Channels, ProtocolKind};

/// Free parameters of the pipeline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineKnobs {
    /// `μ = mu_frac · a_s · a_Us`
    pub mu_frac: f64,
    /// `μ1 = mu1_frac · a_s · a_Us`
    pub mu1_frac: f64,
    /// Defaults to the geometric midpoint of `(e^{−μ1 τ_miati_s}, 1)`.
    pub lambda_tilde: Option<f64>,
    /// Defaults to the midpoint of `(λ̃, 1)`.
    pub lambda_final: Option<f64>,
    /// Split of `η1` into `(η11, η12)`; defaults to halves.
    pub eta1_split: Option<[f64; 2]>,
    pub samples: usize,
    pub validation_samples: usize,
    pub seed: u64,
    pub exec: Exec,
}

impl Default for PipelineKnobs {
    fn default() -> Self {
        Self {
            mu_frac: 0.6,
            mu1_frac: 0.4,
            lambda_tilde: None,
            lambda_final: None,
            eta1_split: None,
            samples: 100_000,
            validation_samples: 1_000_000,
            seed: 1,
            exec: Exec::default(),
        }
    }
}

impl PipelineKnobs {
    pub fn validate(&self) -> Result<()> {
        if !(self.mu_frac > 0.0 && self.mu_frac < 1.0) {
            return Err(Error::InvalidConfig("mu_frac must lie in (0, 1)".into()));
        }
        if !(self.mu1_frac > 0.0 && self.mu1_frac < self.mu_frac) {
            return Err(Error::InvalidConfig("mu1_frac must lie in (0, mu_frac)".into()));
        }
        if self.samples == 0 {
            return Err(Error::InvalidConfig("samples must be positive".into()));
        }
        Ok(())
    }
}

/// Hypotheses of the DISS theorem that the pipeline can check on its own.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Preconditions {
    pub slow_timing: SlowTimingCert,
    /// `λ_f < λ_f*`
    pub fast_lambda_ok: bool,
    pub epsilon: f64,
    /// `ε ≤ ε*`
    pub epsilon_ok: bool,
    /// The noise gains equal the transmitted-noise gains only for
    /// single-node (sampled-data) channels.
    pub noise_gains_exact: bool,
}

impl Preconditions {
    pub fn hold(&self) -> bool {
        self.slow_timing.holds() && self.fast_lambda_ok && self.epsilon_ok
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstantsLedger {
    pub gamma_f: f64,
    pub gamma_s: f64,
    pub a_rho_f: f64,
    pub a_rho_s: f64,
    pub eta1: f64,
    pub l_s: f64,
    pub l_f: f64,
    pub m_s: f64,
    pub aws_v1: f64,
    pub aws_v2: f64,
    pub t_slow: f64,
    pub t_star: f64,
    pub a_s: f64,
    pub a_f: f64,
    pub au_lower_s: f64,
    pub au_upper_s: f64,
    pub au_lower_f: f64,
    pub au_upper_f: f64,
    pub au_lower: f64,
    pub au_upper: f64,
    pub lambda: [f64; 5],
    pub b1: f64,
    pub b2: f64,
    pub b3_own: f64,
    pub b3: f64,
    pub a_delta: [f64; 3],
    pub mu: f64,
    pub mu1: f64,
    pub lambda_tilde: f64,
    pub lambda_final: f64,
    pub quad_a: f64,
    pub quad_b: f64,
    pub quad_c: f64,
    pub d: f64,
    pub a_d: f64,
    pub a_v: f64,
    pub epsilon_star: f64,
    pub tau_mati_f: f64,
    /// `ε* T*`
    pub objective: f64,
    pub eta11: f64,
    pub eta12: f64,
    pub avs_v1: f64,
    pub avs_v2: f64,
    pub gamma_v1: f64,
    pub gamma_v2: f64,
    pub gamma_dus: f64,
    /// Overshoot `sqrt(a_d āU / (λ a_U))`.
    pub k: f64,
    /// Decay rate `ln(1/λ) / (2 τ_mati_s)`.
    pub rate: f64,
    pub preconditions: Preconditions,
    pub lambdas_meta: SampledMeta,
    pub interconnection_meta: SampledMeta,
}

/// One ledger scalar with the formula that produced it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub name: String,
    pub value: f64,
    pub formula: String,
    pub sampled: bool,
}

fn interval_err(what: &str, v: f64, lo: f64, hi: f64) -> Error {
    Error::InvalidConfig(format!("{what} = {v} outside ({lo}, {hi})"))
}

impl ConstantsLedger {
    pub fn compute(
        plant: &PlantParams,
        design: &DesignResult,
        channels: &Channels,
        timing: &TimingSpec,
        knobs: &PipelineKnobs,
    ) -> Result<Self> {
        let m = SystemModel::new(plant.clone(), design.gains.clone())?;
        Self::compute_with_model(&m, design, channels, timing, knobs)
    }

    pub fn compute_with_model(
        m: &SystemModel,
        design: &DesignResult,
        channels: &Channels,
        timing: &TimingSpec,
        knobs: &PipelineKnobs,
    ) -> Result<Self> {
        timing.validate()?;
        knobs.validate()?;
        if !(design.eta1 > 0.0) {
            return Err(Error::InvalidConfig("eta1 must be positive".into()));
        }
        let cert_s = channels.slow.certificate();
        let cert_f = channels.fast.certificate();
        let growth = growth_constants(&m.fast, &m.reduced, &cert_s, &cert_f);
        let env = lyapunov_envelopes(design, &cert_s, &cert_f, timing)?;
        let slow_timing = slow_timing_cert(growth.l_s, design.gamma_s, cert_s.lambda, timing)?;
        let t_star = t_bound(growth.l_f, design.gamma_f, timing.lambda_f_star)?;

        let lam = slow_jump_lambdas(
            m,
            &design.pf,
            &channels.slow,
            knobs.samples,
            knobs.validation_samples,
            knobs.seed,
            knobs.exec,
        )?;
        let inter = interconnection_constants(
            &InterconnectionInputs {
                model: m,
                ps: &design.ps,
                pf: &design.pf,
                gamma_s: design.gamma_s,
                gamma_f: design.gamma_f,
                lambda_s_star: timing.lambda_s_star,
                lambda_f_star: timing.lambda_f_star,
                slow: &channels.slow,
                fast: &channels.fast,
            },
            knobs.samples,
            knobs.validation_samples,
            knobs.seed.wrapping_add(1),
            knobs.exec,
        )?;
        let l = lam.lambda;

        let mu_cap = env.a_s * env.aus_lower;
        let mu = knobs.mu_frac * mu_cap;
        let mu1 = knobs.mu1_frac * mu_cap;
        if !(mu > 0.0 && mu < mu_cap && mu1 > 0.0 && mu1 < mu) {
            return Err(Error::InvalidConfig(format!("mu = {mu}, mu1 = {mu1} violate 0 < mu1 < mu < {mu_cap}")));
        }
        let tm = timing.tau_miati_s;
        let lt_lo = (-mu1 * tm).exp();
        let lambda_tilde = knobs.lambda_tilde.unwrap_or_else(|| lt_lo.sqrt());
        if !(lambda_tilde > lt_lo && lambda_tilde < 1.0) {
            return Err(interval_err("lambda_tilde", lambda_tilde, lt_lo, 1.0));
        }
        let lambda_final = knobs.lambda_final.unwrap_or(0.5 * (lambda_tilde + 1.0));
        if !(lambda_final > lambda_tilde && lambda_final < 1.0) {
            return Err(interval_err("lambda_final", lambda_final, lambda_tilde, 1.0));
        }

        let gl = design.gamma_s * timing.lambda_s_star;
        let qa = ((l[0] + l[4] / 2.0) / gl).max(l[3] / 2.0);
        let qb = l[1] / 2.0 * (l[0] / gl).max(1.0);
        let qc = 1.0 - lambda_tilde * (mu1 * tm).exp();
        if !(qc < 0.0) {
            return Err(Error::InvalidConfig(format!("quadratic coefficient c = {qc} must be negative")));
        }
        let sqrt_d = if qa > 0.0 {
            (-qb + (qb * qb - 4.0 * qa * qc).sqrt()) / (2.0 * qa)
        } else if qb > 0.0 {
            -qc / qb
        } else {
            return Err(Error::InvalidConfig("slow jumps do not move the fast state; d is unbounded".into()));
        };
        let d = sqrt_d * sqrt_d;
        if !(d >= 0.0 && d.is_finite()) {
            return Err(Error::InvalidConfig(format!("d = {d} must be finite and non-negative")));
        }
        let a_d = 1.0 + qa * d + qb * sqrt_d;
        let a_v = d * l[2] + (l[3] + d * l[4]) / 2.0;

        let au_lower = env.aus_lower.min(d * env.auf_lower);
        let au_upper = env.aus_upper.max(d * env.auf_upper);

        let cross = (inter.b1 + d * inter.b2).powi(2) * env.aus_lower * env.auf_lower / (4.0 * (mu_cap - mu));
        let inv = (cross + mu * d) / (d * env.a_f * env.auf_lower) + inter.b3 / env.a_f;
        let epsilon_star = 1.0 / inv;
        let tau_mati_f = epsilon_star * t_star;

        let [eta11, eta12] = knobs.eta1_split.unwrap_or([design.eta1 / 2.0, design.eta1 / 2.0]);
        if !(eta11 > 0.0 && eta12 > 0.0) || (eta11 + eta12 - design.eta1).abs() > 1e-9 * design.eta1 {
            return Err(Error::InvalidConfig("eta1_split must be positive and sum to eta1".into()));
        }
        let avs_v1 = m.reduced.ar1[3].norm2().powi(2) / eta11;
        let avs_v2 = m.reduced.ar1[4].norm2().powi(2) / eta12;
        let [es1, es2, es3] = timing.eta_s;
        let ad = inter.a_delta;
        let gamma_v1 = (a_d / au_lower
            * (a_v / (lambda_final - lambda_tilde))
                .max((growth.aws_v1.powi(2) / es1 + avs_v1 + d * ad[0]) / (mu - mu1)))
        .sqrt();
        let gamma_v2 = (a_d / (au_lower * (mu - mu1)) * (growth.aws_v2.powi(2) / es2 + avs_v2 + d * ad[1])).sqrt();
        let gamma_dus = (a_d / au_lower * (cert_s.m.powi(2) / es3 + d * ad[2])).sqrt();
        let k = (a_d * au_upper / (lambda_final * au_lower)).sqrt();
        let rate = (1.0 / lambda_final).ln() / (2.0 * timing.tau_mati_s);

        let all_zeroing = [&channels.slow.output, &channels.slow.input, &channels.fast]
            .iter()
            .all(|p| p.partition.nodes() == 1 || p.kind == ProtocolKind::Zeroing);
        let preconditions = Preconditions {
            slow_timing,
            fast_lambda_ok: cert_f.lambda < timing.lambda_f_star,
            epsilon: m.epsilon(),
            epsilon_ok: m.epsilon() <= epsilon_star,
            noise_gains_exact: all_zeroing,
        };

        let ledger = Self {
            gamma_f: design.gamma_f,
            gamma_s: design.gamma_s,
            a_rho_f: design.a_rho_f,
            a_rho_s: design.a_rho_s,
            eta1: design.eta1,
            l_s: growth.l_s,
            l_f: growth.l_f,
            m_s: cert_s.m,
            aws_v1: growth.aws_v1,
            aws_v2: growth.aws_v2,
            t_slow: preconditions.slow_timing.t_slow,
            t_star,
            a_s: env.a_s,
            a_f: env.a_f,
            au_lower_s: env.aus_lower,
            au_upper_s: env.aus_upper,
            au_lower_f: env.auf_lower,
            au_upper_f: env.auf_upper,
            au_lower,
            au_upper,
            lambda: l,
            b1: inter.b1,
            b2: inter.b2,
            b3_own: inter.b3_own,
            b3: inter.b3,
            a_delta: ad,
            mu,
            mu1,
            lambda_tilde,
            lambda_final,
            quad_a: qa,
            quad_b: qb,
            quad_c: qc,
            d,
            a_d,
            a_v,
            epsilon_star,
            tau_mati_f,
            objective: epsilon_star * t_star,
            eta11,
            eta12,
            avs_v1,
            avs_v2,
            gamma_v1,
            gamma_v2,
            gamma_dus,
            k,
            rate,
            preconditions,
            lambdas_meta: lam.meta,
            interconnection_meta: inter.meta,
        };
        ledger.check_invariants(timing)?;
        Ok(ledger)
    }

    fn check_invariants(&self, timing: &TimingSpec) -> Result<()> {
        let cap = self.a_s * self.au_lower_s;
        let lo = (-self.mu1 * timing.tau_miati_s).exp();
        let ok = self.mu > 0.0
            && self.mu < cap
            && self.mu1 > 0.0
            && self.mu1 < self.mu
            && self.lambda_tilde > lo
            && self.lambda_tilde < 1.0
            && self.lambda_final > self.lambda_tilde
            && self.lambda_final < 1.0
            && self.d >= 0.0
            && self.quad_c < 0.0;
        let finite = [self.epsilon_star, self.gamma_v1, self.gamma_v2, self.gamma_dus, self.k, self.rate]
            .iter()
            .all(|v| v.is_finite());
        if !ok || !finite {
            return Err(Error::InvalidConfig("constants ledger invariants violated".into()));
        }
        Ok(())
    }

    /// Every scalar with its formula, in a fixed order.
    pub fn entries(&self) -> Vec<LedgerEntry> {
        let e = |name: &str, value: f64, formula: &str, sampled: bool| LedgerEntry {
            name: name.into(),
            value,
            formula: formula.into(),
            sampled,
        };
        let mut v = vec![
            e("gamma_f", self.gamma_f, "boundary-layer LMI", false),
            e("gamma_s", self.gamma_s, "reduced LMI", false),
            e("a_rho_f", self.a_rho_f, "boundary-layer LMI", false),
            e("a_rho_s", self.a_rho_s, "reduced LMI", false),
            e("eta1", self.eta1, "reduced LMI", false),
            e("L_s", self.l_s, "M_s |As22| / a_Ws", false),
            e("L_f", self.l_f, "M_f |Af22| / a_Wf", false),
            e("M_s", self.m_s, "protocol certificate", false),
            e("aws_v1", self.aws_v1, "M_s |Ar24|", false),
            e("aws_v2", self.aws_v2, "M_s |Ar25|", false),
            e("T_slow", self.t_slow, "T(L_s, gamma_s, lambda_s)", false),
            e("T_star", self.t_star, "T(L_f, gamma_f, lambda_f*)", false),
            e("a_s", self.a_s, "a_rho_s min(1, a_Ws^2)", false),
            e("a_f", self.a_f, "a_rho_f min(1, a_Wf^2)", false),
            e("aU_lower_s", self.au_lower_s, "min(lambda_min Ps, gamma_s lambda_s* a_Ws^2)", false),
            e("aU_upper_s", self.au_upper_s, "max(lambda_max Ps, gamma_s / lambda_s* abar_Ws^2)", false),
            e("aU_lower_f", self.au_lower_f, "min(lambda_min Pf, gamma_f lambda_f* a_Wf^2)", false),
            e("aU_upper_f", self.au_upper_f, "max(lambda_max Pf, gamma_f / lambda_f* abar_Wf^2)", false),
            e("aU_lower", self.au_lower, "min(aU_lower_s, d aU_lower_f)", false),
            e("aU_upper", self.au_upper, "max(aU_upper_s, d aU_upper_f)", false),
        ];
        for (i, l) in self.lambda.iter().enumerate() {
            v.push(e(&format!("lambda{}", i + 1), *l, "sampled sup of slow-jump ratio x 1.05", true));
        }
        v.extend([
            e("b1", self.b1, "sampled sup of slow cross term x 1.05", true),
            e("b2", self.b2, "sampled sup of fast w-z remainder x 1.05", true),
            e("b3", self.b3, "b3_own + sum(a_Delta)", true),
            e("aDelta1", self.a_delta[0], "c1 / 2", true),
            e("aDelta2", self.a_delta[1], "c2 / 2", true),
            e("aDelta3", self.a_delta[2], "c3 / 2", true),
            e("mu", self.mu, "mu_frac a_s aU_lower_s", false),
            e("mu1", self.mu1, "mu1_frac a_s aU_lower_s", false),
            e("lambda_tilde", self.lambda_tilde, "in (exp(-mu1 tau_miati_s), 1)", false),
            e("lambda_final", self.lambda_final, "in (lambda_tilde, 1)", false),
            e("quad_a", self.quad_a, "max((l1 + l5/2)/(gamma_s lambda_s*), l4/2)", false),
            e("quad_b", self.quad_b, "l2/2 max(l1/(gamma_s lambda_s*), 1)", false),
            e("quad_c", self.quad_c, "1 - lambda_tilde exp(mu1 tau_miati_s)", false),
            e("d", self.d, "((-b + sqrt(b^2 - 4ac)) / 2a)^2", false),
            e("a_d", self.a_d, "1 + a d + b sqrt(d)", false),
            e("a_v", self.a_v, "d l3 + (l4 + d l5)/2", false),
            e("epsilon_star", self.epsilon_star, "time-scale bound", false),
            e("tau_mati_f", self.tau_mati_f, "epsilon_star T_star", false),
            e("objective", self.objective, "epsilon_star T_star", false),
            e("eta11", self.eta11, "eta1 split", false),
            e("eta12", self.eta12, "eta1 split", false),
            e("aVs_v1", self.avs_v1, "|Ar14|^2 / eta11", false),
            e("aVs_v2", self.avs_v2, "|Ar15|^2 / eta12", false),
            e("gamma_v1", self.gamma_v1, "DISS gain of v1", false),
            e("gamma_v2", self.gamma_v2, "DISS gain of v2", false),
            e("gamma_dus", self.gamma_dus, "DISS gain of du_s", false),
            e("k", self.k, "sqrt(a_d aU_upper / (lambda_final aU_lower))", false),
            e("rate", self.rate, "ln(1/lambda_final) / (2 tau_mati_s)", false),
        ]);
        v
    }
}
