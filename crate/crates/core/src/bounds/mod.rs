//! MATI bounds and the constants that turn two LMI certificates into an
//! admissible time-scale ratio `ε*`, a fast MATI and DISS gains.
//!
//! `T(L, γ, λ)` is the time the Riccati-type solution
//! `φ̇ = −2Lφ − γ(φ² + 1)` needs to travel from `1/λ` down to `λ`.
//! Transmission intervals below it keep the hybrid Lyapunov function
//! `V + γ φ(τ) W²` non-increasing.

mod pipeline;
mod sampled;

pub use pipeline::{ConstantsLedger, LedgerEntry, PipelineKnobs, Preconditions};
pub use sampled::{
    interconnection_constants, slow_jump_lambdas, Interconnection, InterconnectionInputs, SampledMeta, SlowJumpLambdas,
    SAFETY_MARGIN, VALIDATION_PASS_FRACTION,
};

use serde::{Deserialize, Serialize};

use crate::design::DesignResult;
use crate::error::{Error, Result};
use crate::numerics::{lambda_max, lambda_min, rk4_step};
use crate::protocols::ProtocolCertificate;

/// Relative gap under which `γ` and `L` are treated as equal.
const BRANCH_EPS: f64 = 1e-12;

fn check_t_args(l: f64, gamma: f64, lambda: f64) -> Result<()> {
    if !(l >= 0.0 && l.is_finite()) {
        return Err(Error::InvalidInput(format!("L = {l} must be finite and non-negative")));
    }
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::InvalidInput(format!("gamma = {gamma} must be positive")));
    }
    if !(0.0..1.0).contains(&lambda) {
        return Err(Error::InvalidInput(format!("lambda = {lambda} not in [0, 1)")));
    }
    Ok(())
}

/// `T(L, γ, λ)`.
pub fn t_bound(l: f64, gamma: f64, lambda: f64) -> Result<f64> {
    check_t_args(l, gamma, lambda)?;
    if l == 0.0 {
        let upper = if lambda == 0.0 { std::f64::consts::FRAC_PI_2 } else { (1.0 / lambda).atan() };
        return Ok((upper - lambda.atan()) / gamma);
    }
    let q = gamma / l;
    if (q - 1.0).abs() <= BRANCH_EPS {
        return Ok((1.0 - lambda) / (l * (1.0 + lambda)));
    }
    let r1 = (q * q - 1.0).abs().sqrt();
    let r2 = r1 * (1.0 - lambda) / (2.0 * lambda / (1.0 + lambda) * (q - 1.0) + 1.0 + lambda);
    if q > 1.0 {
        Ok(r2.atan() / (l * r1))
    } else {
        Ok(r2.atanh() / (l * r1))
    }
}

fn phi_rate(l: f64, gamma: f64, eta: f64, phi: f64) -> f64 {
    -2.0 * l * phi - gamma * ((1.0 + eta) * phi * phi + 1.0)
}

/// Samples of `φ` on a uniform grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhiCurve {
    pub t: Vec<f64>,
    pub phi: Vec<f64>,
}

impl PhiCurve {
    pub fn last(&self) -> f64 {
        *self.phi.last().expect("curve has at least one point")
    }

    pub fn min(&self) -> f64 {
        self.phi.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.phi.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Minimum number of grid intervals used by [`solve_phi`].
pub const PHI_MIN_STEPS: usize = 10_000;

/// Integrate `φ̇ = −2Lφ − γ((1+η)φ² + 1)` from `φ(0) = 1/λ*` over
/// `[0, horizon]`.
pub fn solve_phi(l: f64, gamma: f64, eta: f64, lambda_star: f64, horizon: f64) -> Result<PhiCurve> {
    check_t_args(l, gamma, lambda_star)?;
    if lambda_star == 0.0 || !(horizon > 0.0) || !(eta >= 0.0) {
        return Err(Error::InvalidInput("need lambda* > 0, horizon > 0 and eta >= 0".into()));
    }
    let steps = PHI_MIN_STEPS;
    let h = horizon / steps as f64;
    let mut t = Vec::with_capacity(steps + 1);
    let mut phi = Vec::with_capacity(steps + 1);
    let mut x = vec![1.0 / lambda_star];
    t.push(0.0);
    phi.push(x[0]);
    for k in 0..steps {
        x = rk4_step(|_, s: &[f64]| Ok(vec![phi_rate(l, gamma, eta, s[0])]), &x, k as f64 * h, h)?;
        if !x[0].is_finite() || x[0].abs() > 1e12 {
            return Err(Error::NumericalBlowup(format!("phi escaped at t = {}", (k + 1) as f64 * h)));
        }
        t.push((k + 1) as f64 * h);
        phi.push(x[0]);
    }
    Ok(PhiCurve { t, phi })
}

/// Time for `φ` to fall from `1/λ` to `λ`, located by RK4 with a bisected
/// final sub-step. With `η = 0` this equals `T(L, γ, λ)`.
pub fn phi_transit_time(l: f64, gamma: f64, eta: f64, lambda: f64) -> Result<f64> {
    check_t_args(l, gamma, lambda)?;
    if lambda == 0.0 {
        return Err(Error::InvalidInput("transit time needs lambda > 0".into()));
    }
    let f = |_: f64, s: &[f64]| Ok(vec![phi_rate(l, gamma, eta, s[0])]);
    let start = 1.0 / lambda;
    // the speed is largest at the start, so this resolves the whole descent
    let h = (start - lambda) / phi_rate(l, gamma, eta, start).abs() / 4000.0;
    let mut x = vec![start];
    let mut t = 0.0;
    loop {
        let next = rk4_step(f, &x, t, h)?;
        if next[0] <= lambda {
            let (mut lo, mut hi) = (0.0, h);
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                if rk4_step(f, &x, t, mid)?[0] <= lambda {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            return Ok(t + 0.5 * (lo + hi));
        }
        x = next;
        t += h;
    }
}

/// Timing parameters of the slow channel plus the fast-channel `λ_f*`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimingSpec {
    pub tau_mati_s: f64,
    pub tau_miati_s: f64,
    pub lambda_s_star: f64,
    pub lambda_f_star: f64,
    /// `(η_s1, η_s2, η_s3)`
    pub eta_s: [f64; 3],
}

impl TimingSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if !(self.tau_miati_s > 0.0 && self.tau_miati_s <= self.tau_mati_s) {
            return bad("need 0 < tau_miati_s <= tau_mati_s");
        }
        if !(self.lambda_s_star > 0.0 && self.lambda_s_star < 1.0) {
            return bad("lambda_s_star must lie in (0, 1)");
        }
        if !(self.lambda_f_star > 0.0 && self.lambda_f_star < 1.0) {
            return bad("lambda_f_star must lie in (0, 1)");
        }
        if self.eta_s.iter().any(|&e| !(e > 0.0)) {
            return bad("every eta_s entry must be positive");
        }
        Ok(())
    }

    pub fn eta_s_total(&self) -> f64 {
        self.eta_s.iter().sum()
    }
}

/// Slow-channel timing certificate: `τ_mati_s < T(L_s, γ_s, λ_s)` and the
/// solution `φ_s` (with `η_s = Σ η_si`) stays in `[λ_s*, 1/λ_s*]` up to
/// `τ_mati_s`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlowTimingCert {
    pub t_slow: f64,
    pub phi_at_mati: f64,
    pub phi_min: f64,
    pub phi_max: f64,
    pub tau_ok: bool,
    pub lambda_star_ok: bool,
    pub phi_ok: bool,
}

impl SlowTimingCert {
    pub fn holds(&self) -> bool {
        self.tau_ok && self.lambda_star_ok && self.phi_ok
    }
}

pub fn slow_timing_cert(l_s: f64, gamma_s: f64, lambda_s: f64, timing: &TimingSpec) -> Result<SlowTimingCert> {
    timing.validate()?;
    let t_slow = t_bound(l_s, gamma_s, lambda_s)?;
    let curve = solve_phi(l_s, gamma_s, timing.eta_s_total(), timing.lambda_s_star, timing.tau_mati_s)?;
    let ls = timing.lambda_s_star;
    Ok(SlowTimingCert {
        t_slow,
        phi_at_mati: curve.last(),
        phi_min: curve.min(),
        phi_max: curve.max(),
        tau_ok: timing.tau_miati_s <= timing.tau_mati_s && timing.tau_mati_s < t_slow,
        lambda_star_ok: lambda_s < ls,
        phi_ok: curve.min() >= ls && curve.max() <= 1.0 / ls * (1.0 + 1e-12),
    })
}

/// Quadratic sandwich constants of `U_s`, `U_f` and the decay rates along
/// the reduced and boundary-layer flows.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Envelopes {
    pub aus_lower: f64,
    pub aus_upper: f64,
    pub auf_lower: f64,
    pub auf_upper: f64,
    pub a_s: f64,
    pub a_f: f64,
}

pub fn lyapunov_envelopes(
    design: &DesignResult,
    cert_s: &ProtocolCertificate,
    cert_f: &ProtocolCertificate,
    timing: &TimingSpec,
) -> Result<Envelopes> {
    let (ls, lf) = (timing.lambda_s_star, timing.lambda_f_star);
    Ok(Envelopes {
        aus_lower: lambda_min(&design.ps)?.min(design.gamma_s * ls * cert_s.aw_lower.powi(2)),
        aus_upper: lambda_max(&design.ps)?.max(design.gamma_s / ls * cert_s.aw_upper.powi(2)),
        auf_lower: lambda_min(&design.pf)?.min(design.gamma_f * lf * cert_f.aw_lower.powi(2)),
        auf_upper: lambda_max(&design.pf)?.max(design.gamma_f / lf * cert_f.aw_upper.powi(2)),
        a_s: design.a_rho_s * cert_s.aw_lower.powi(2).min(1.0),
        a_f: design.a_rho_f * cert_f.aw_lower.powi(2).min(1.0),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn t_examples() {
        assert!((t_bound(0.0, 1.6, 0.456).unwrap() - 0.44696).abs() < 1e-4);
        assert!((t_bound(1.0, 1.0, 0.0).unwrap() - 1.0).abs() < 1e-15);
        let ts = t_bound(1.85, 3.4, 0.0).unwrap();
        assert!((ts - 0.349).abs() < 1e-3 && ts > 0.15, "{ts}");
    }

    #[test]
    fn t_rejects_bad_arguments() {
        assert!(t_bound(1.0, 1.0, 1.0).is_err());
        assert!(t_bound(1.0, 0.0, 0.5).is_err());
        assert!(t_bound(-1.0, 1.0, 0.5).is_err());
    }

    #[test]
    fn t_continuous_at_gamma_equal_l() {
        for &lam in &[0.0, 0.3, 0.8] {
            let at = t_bound(2.0, 2.0, lam).unwrap();
            for d in [1e-7, -1e-7] {
                assert!((t_bound(2.0, 2.0 + d, lam).unwrap() - at).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn transit_time_matches_t() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let l = rng.gen_range(0.0..3.0);
            let g = rng.gen_range(0.2..4.0);
            let lam = rng.gen_range(0.05..0.95);
            let t = t_bound(l, g, lam).unwrap();
            let o = phi_transit_time(l, g, 0.0, lam).unwrap();
            assert!((t - o).abs() <= 1e-4 * t, "L={l} g={g} lam={lam}: {t} vs {o}");
        }
    }

    #[test]
    fn phi_decreasing_and_lemma_example() {
        let c = solve_phi(1.85, 3.4, 0.7, 0.33, 0.15).unwrap();
        assert!(c.phi.windows(2).all(|w| w[1] < w[0]));
        assert!(c.last() >= 0.33 && c.max() <= 1.0 / 0.33 + 1e-12);
        assert!((c.last() - 0.344).abs() < 2e-3, "{}", c.last());
    }
}
