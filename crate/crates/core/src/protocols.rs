//! Scheduling protocols that decide which node transmits at each
//! transmission instant, together with the Lyapunov functions `W(κ, e)`
//! certifying them as uniformly globally exponentially stable.
//!
//! A certificate is the tuple `(a_W, ā_W, λ, M)`:
//! `a_W |e| ≤ W ≤ ā_W |e|`, `W(κ+1, h(κ, e)) ≤ λ W(κ, e)` and
//! `|∂W/∂e| ≤ M` almost everywhere.
//!
//! | protocol | `W` | `(a_W, ā_W, λ, M)` |
//! |---|---|---|
//! | zeroing (one node) | `|e|` | `(1, 1, 0, 1)` |
//! | round-robin, `ℓ` nodes | `sqrt(Σ_b m_b(κ) |e_b|²)` | `(1, √ℓ, √((ℓ−1)/ℓ), √ℓ)` |
//! | try-once-discard, `ℓ` nodes | `|e|` | `(1, 1, √((ℓ−1)/ℓ), 1)` |
//!
//! The round-robin weight `m_b(κ) = ((b − κ) mod ℓ) + 1` is smallest for
//! the node about to transmit. Multi-node certificates are checked on random
//! samples when a protocol is constructed.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::stream_rng;
use crate::model::PlantParams;
use crate::numerics::norm;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProtocolKind {
    Zeroing,
    RoundRobin,
    TryOnceDiscard,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodePartition {
    pub dims: Vec<usize>,
}

impl NodePartition {
    pub fn single(dim: usize) -> Self {
        Self { dims: vec![dim] }
    }

    pub fn uniform(nodes: usize) -> Self {
        Self { dims: vec![1; nodes] }
    }

    pub fn nodes(&self) -> usize {
        self.dims.len()
    }

    pub fn total(&self) -> usize {
        self.dims.iter().sum()
    }

    pub fn validate(&self, total: usize) -> Result<()> {
        if self.dims.is_empty() || self.dims.contains(&0) {
            return Err(Error::InvalidInput("every node needs a positive dimension".into()));
        }
        if self.total() != total {
            return Err(Error::DimensionMismatch(format!(
                "node dimensions sum to {}, channel has {total}",
                self.total()
            )));
        }
        Ok(())
    }

    pub fn range(&self, node: usize) -> std::ops::Range<usize> {
        let start: usize = self.dims[..node].iter().sum();
        start..start + self.dims[node]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProtocolCertificate {
    pub aw_lower: f64,
    pub aw_upper: f64,
    pub lambda: f64,
    pub m: f64,
    /// True when the constants rest on the sampled check rather than the
    /// single-node closed form.
    pub empirical: bool,
}

impl ProtocolCertificate {
    pub fn validate(&self) -> Result<()> {
        if !(self.aw_lower > 0.0 && self.aw_upper >= self.aw_lower) {
            return Err(Error::CertificateRejected("need 0 < a_W <= ā_W".into()));
        }
        if !(0.0..1.0).contains(&self.lambda) {
            return Err(Error::CertificateRejected(format!("lambda = {} not in [0, 1)", self.lambda)));
        }
        if !(self.m >= 0.0) {
            return Err(Error::CertificateRejected("M must be non-negative".into()));
        }
        Ok(())
    }
}

/// Samples used when a multi-node certificate is checked at construction.
pub const CERT_CHECK_SAMPLES: usize = 4096;
const CERT_CHECK_SEED: u64 = 0x5eed_0001;
const CERT_SLACK: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Protocol {
    pub kind: ProtocolKind,
    pub partition: NodePartition,
}

impl Protocol {
    /// Build and, for more than one node, validate the certificate on random
    /// samples.
    pub fn new(kind: ProtocolKind, partition: NodePartition) -> Result<Self> {
        if kind == ProtocolKind::Zeroing && partition.nodes() != 1 {
            return Err(Error::InvalidInput("the zeroing protocol serves exactly one node".into()));
        }
        partition.validate(partition.total())?;
        let p = Self { kind, partition };
        if p.partition.nodes() > 1 {
            let worst = p.contraction_ratio(CERT_CHECK_SAMPLES, CERT_CHECK_SEED)?;
            if worst > p.certificate().lambda + CERT_SLACK {
                return Err(Error::CertificateRejected(format!(
                    "{:?}: sampled contraction {worst} exceeds lambda {}",
                    p.kind,
                    p.certificate().lambda
                )));
            }
        }
        Ok(p)
    }

    pub fn zeroing(dim: usize) -> Self {
        Self { kind: ProtocolKind::Zeroing, partition: NodePartition::single(dim) }
    }

    pub fn dim(&self) -> usize {
        self.partition.total()
    }

    fn nodes(&self) -> usize {
        self.partition.nodes()
    }

    fn check_dim(&self, e: &[f64]) -> Result<()> {
        if e.len() != self.dim() {
            return Err(Error::DimensionMismatch(format!(
                "error has {} entries, protocol expects {}",
                e.len(),
                self.dim()
            )));
        }
        Ok(())
    }

    fn rr_weight(&self, kappa: u64, node: usize) -> f64 {
        let l = self.nodes() as u64;
        (((node as u64 + l - kappa % l) % l) + 1) as f64
    }

    pub fn w_value(&self, kappa: u64, e: &[f64]) -> Result<f64> {
        self.check_dim(e)?;
        Ok(match self.kind {
            ProtocolKind::Zeroing | ProtocolKind::TryOnceDiscard => norm(e),
            ProtocolKind::RoundRobin => (0..self.nodes())
                .map(|b| self.rr_weight(kappa, b) * e[self.partition.range(b)].iter().map(|v| v * v).sum::<f64>())
                .sum::<f64>()
                .sqrt(),
        })
    }

    /// `∂W/∂e`, zero at `e = 0`.
    pub fn w_gradient(&self, kappa: u64, e: &[f64]) -> Result<Vec<f64>> {
        let w = self.w_value(kappa, e)?;
        if w == 0.0 {
            return Ok(vec![0.0; e.len()]);
        }
        Ok(match self.kind {
            ProtocolKind::Zeroing | ProtocolKind::TryOnceDiscard => e.iter().map(|v| v / w).collect(),
            ProtocolKind::RoundRobin => {
                let mut g = vec![0.0; e.len()];
                for b in 0..self.nodes() {
                    let m = self.rr_weight(kappa, b);
                    for i in self.partition.range(b) {
                        g[i] = m * e[i] / w;
                    }
                }
                g
            }
        })
    }

    /// Node granted access at counter `kappa`.
    pub fn select(&self, kappa: u64, e: &[f64]) -> Result<usize> {
        self.check_dim(e)?;
        Ok(match self.kind {
            ProtocolKind::Zeroing => 0,
            ProtocolKind::RoundRobin => (kappa % self.nodes() as u64) as usize,
            ProtocolKind::TryOnceDiscard => {
                let mut best = (0, -1.0);
                for b in 0..self.nodes() {
                    let n = norm(&e[self.partition.range(b)]);
                    // strict comparison keeps the lowest index on ties
                    if n > best.1 {
                        best = (b, n);
                    }
                }
                best.0
            }
        })
    }

    /// Zero the block of `node`, leaving every other entry untouched.
    pub fn reset_node(&self, e: &[f64], node: usize) -> Vec<f64> {
        let mut out = e.to_vec();
        for i in self.partition.range(node) {
            out[i] = 0.0;
        }
        out
    }

    pub fn jump(&self, kappa: u64, e: &[f64]) -> Result<(Vec<f64>, usize)> {
        let node = self.select(kappa, e)?;
        Ok((self.reset_node(e, node), node))
    }

    pub fn certificate(&self) -> ProtocolCertificate {
        let l = self.nodes() as f64;
        let contraction = ((l - 1.0) / l).sqrt();
        match self.kind {
            _ if self.nodes() == 1 => {
                ProtocolCertificate { aw_lower: 1.0, aw_upper: 1.0, lambda: 0.0, m: 1.0, empirical: false }
            }
            ProtocolKind::Zeroing => unreachable!("zeroing is single-node"),
            ProtocolKind::RoundRobin => ProtocolCertificate {
                aw_lower: 1.0,
                aw_upper: l.sqrt(),
                lambda: contraction,
                m: l.sqrt(),
                empirical: true,
            },
            ProtocolKind::TryOnceDiscard => {
                ProtocolCertificate { aw_lower: 1.0, aw_upper: 1.0, lambda: contraction, m: 1.0, empirical: true }
            }
        }
    }

    /// Largest sampled `W(κ+1, h(κ,e)) / W(κ,e)` over random `(κ, e)`.
    pub fn contraction_ratio(&self, samples: usize, seed: u64) -> Result<f64> {
        let mut rng = stream_rng(seed, 0);
        let mut worst: f64 = 0.0;
        let n = self.dim();
        for _ in 0..samples {
            let kappa: u64 = rng.gen_range(0..1000);
            let mut e: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            // concentrate mass on a single block half of the time to probe
            // the extreme directions
            if rng.gen_bool(0.5) {
                let keep = rng.gen_range(0..self.nodes());
                let scale: f64 = rng.gen_range(1e-3..1.0);
                for b in 0..self.nodes() {
                    if b != keep {
                        for i in self.partition.range(b) {
                            e[i] *= scale;
                        }
                    }
                }
            }
            let w = self.w_value(kappa, &e)?;
            if w == 0.0 {
                continue;
            }
            let (ep, _) = self.jump(kappa, &e)?;
            worst = worst.max(self.w_value(kappa + 1, &ep)? / w);
        }
        Ok(worst)
    }
}

/// Slow channel: the plant output `e_ys` and the input `e_us` are scheduled
/// by their own protocols but share the counter `κ_s`. The combined function
/// is `W_s = sqrt(W_y² + W_u²)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SlowChannel {
    pub output: Protocol,
    pub input: Protocol,
}

impl SlowChannel {
    pub fn zeroing(nys: usize, nu: usize) -> Self {
        Self { output: Protocol::zeroing(nys), input: Protocol::zeroing(nu) }
    }

    pub fn w_value(&self, kappa: u64, eys: &[f64], eus: &[f64]) -> Result<f64> {
        Ok(self.output.w_value(kappa, eys)?.hypot(self.input.w_value(kappa, eus)?))
    }

    /// `∂W_s/∂(e_ys, e_us)`
    pub fn w_gradient(&self, kappa: u64, eys: &[f64], eus: &[f64]) -> Result<Vec<f64>> {
        let wy = self.output.w_value(kappa, eys)?;
        let wu = self.input.w_value(kappa, eus)?;
        let w = wy.hypot(wu);
        if w == 0.0 {
            return Ok(vec![0.0; eys.len() + eus.len()]);
        }
        let gy = self.output.w_gradient(kappa, eys)?;
        let gu = self.input.w_gradient(kappa, eus)?;
        Ok(gy.iter().map(|g| g * wy / w).chain(gu.iter().map(|g| g * wu / w)).collect())
    }

    pub fn certificate(&self) -> ProtocolCertificate {
        let a = self.output.certificate();
        let b = self.input.certificate();
        ProtocolCertificate {
            aw_lower: a.aw_lower.min(b.aw_lower),
            aw_upper: a.aw_upper.max(b.aw_upper),
            lambda: a.lambda.max(b.lambda),
            m: a.m.max(b.m),
            empirical: a.empirical || b.empirical,
        }
    }
}

/// Scheduling of both channels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Channels {
    pub slow: SlowChannel,
    pub fast: Protocol,
}

impl Channels {
    pub fn zeroing(p: &PlantParams) -> Self {
        Self { slow: SlowChannel::zeroing(p.nys(), p.nu()), fast: Protocol::zeroing(p.nyf()) }
    }

    /// Dimension checks against the plant plus the construction-time
    /// certificate check, for channels that were deserialized.
    pub fn validate(&self, p: &PlantParams) -> Result<()> {
        for (name, proto, dim) in [
            ("slow output", &self.slow.output, p.nys()),
            ("slow input", &self.slow.input, p.nu()),
            ("fast output", &self.fast, p.nyf()),
        ] {
            proto
                .partition
                .validate(dim)
                .map_err(|e| Error::InvalidConfig(format!("{name} channel: {e}")))?;
            Protocol::new(proto.kind, proto.partition.clone())?;
        }
        Ok(())
    }
}

/// Node bookkeeping that accompanies a transmission of node `node` on the
/// slow output channel: its block of `e_ys` is cleared (both the plant-side
/// and observer-side errors reset) and its block of `v̂1` latches the current
/// noise sample. The same rule serves the fast channel with `(e_f, v̂2, v2)`.
pub fn companion_jumps(
    partition: &NodePartition,
    e_y: &[f64],
    v_hat: &[f64],
    v: &[f64],
    node: usize,
) -> (Vec<f64>, Vec<f64>) {
    let mut ey = e_y.to_vec();
    let mut vh = v_hat.to_vec();
    for i in partition.range(node) {
        ey[i] = 0.0;
        vh[i] = v[i];
    }
    (ey, vh)
}
