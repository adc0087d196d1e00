//! The two-state/two-state example plant used throughout the tests, the
//! bundled configs and the benchmarks.
//!
//! The input matrices are not part of the published example data. They are
//! chosen so that the reduced-system growth constant evaluates to 1.85 and
//! the input-derivative coefficients match the reported interconnection
//! constants (see the README).

use crate::numerics::{Matrix, SymMatrix};
use crate::model::{ObserverGains, PlantParams};

pub const A1: f64 = 1e-3;
pub const A2: f64 = 0.37;
pub const A3: f64 = 1.1;
pub const A4: f64 = 4.9;
pub const A5: f64 = 1.2;
pub const C1: f64 = -0.03;
pub const C2: f64 = 1.9;
pub const B1_SECOND: f64 = 0.97;
pub const B2_SECOND: f64 = 0.1;
pub const EPSILON: f64 = 0.016;

/// Gain template parameters of the reference design.
pub const REFERENCE_GAINS: (f64, f64, f64) = (0.02, 0.01, 0.18);

fn m(rows: &[&[f64]]) -> Matrix {
    Matrix::from_rows(rows).expect("static preset matrix")
}

pub fn example_plant() -> PlantParams {
    PlantParams {
        a11: m(&[&[A1, 0.0], &[0.0, -A5]]),
        a12: m(&[&[A2, 0.0], &[0.0, 0.0]]),
        a21: m(&[&[0.0, 0.0], &[A3, 0.0]]),
        a22: m(&[&[-A2, 0.0], &[-A2, -A4]]),
        b1: m(&[&[0.0], &[B1_SECOND]]),
        b2: m(&[&[0.0], &[B2_SECOND]]),
        c1s: m(&[&[C1, C2]]),
        c2s: m(&[&[-1.0, 0.0]]),
        c2f: m(&[&[0.0, -1.0]]),
        epsilon: EPSILON,
    }
}

/// `L1s = (n1, 0)`, `L2s = (−n2, −n2)`, `L1f = (0, n3)`, `L2f = 0`.
pub fn example_gains(n1: f64, n2: f64, n3: f64) -> ObserverGains {
    ObserverGains {
        l1s: m(&[&[n1], &[0.0]]),
        l1f: m(&[&[0.0], &[n3]]),
        l2s: m(&[&[-n2], &[-n2]]),
        l2f: m(&[&[0.0], &[0.0]]),
    }
}

pub fn reference_gains() -> ObserverGains {
    let (n1, n2, n3) = REFERENCE_GAINS;
    example_gains(n1, n2, n3)
}

/// Published fast Lyapunov matrix of the reference design.
pub fn published_pf() -> SymMatrix {
    SymMatrix::from_dense(&m(&[&[3.5, 0.15], &[0.15, 2.7]])).expect("symmetric")
}

/// Published slow Lyapunov matrix of the reference design.
pub fn published_ps() -> SymMatrix {
    SymMatrix::from_dense(&m(&[&[0.14, -0.55], &[-0.55, 2.8]])).expect("symmetric")
}

pub const PUBLISHED_GAMMA_F: f64 = 1.6;
pub const PUBLISHED_A_RHO_F: f64 = 2.5;
pub const PUBLISHED_GAMMA_S: f64 = 3.4;
pub const PUBLISHED_A_RHO_S: f64 = 0.14;

pub const LAMBDA_S_STAR: f64 = 0.33;
pub const LAMBDA_F_STAR: f64 = 0.456;
pub const ETA_S: [f64; 3] = [0.1, 0.1, 0.5];
pub const TAU_MATI_S: f64 = 0.15;
pub const TAU_MIATI_S: f64 = 0.149e-3;

/// Initial plant state of the simulation scenarios; observer starts at zero.
pub const XP0: [f64; 2] = [0.1, 0.1];
pub const ZP0: [f64; 2] = [-0.2, -0.2];
