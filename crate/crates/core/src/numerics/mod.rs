//! Small dense linear algebra and fixed-step ODE stepping.
//!
//! Everything here operates on matrices of dimension at most ~10, so the
//! algorithms favour exactness and simplicity: cyclic Jacobi for symmetric
//! spectra, LU with partial pivoting for linear solves, classical RK4.

mod matrix;

pub use matrix::{dot, norm, Matrix};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Jacobi sweeps stop once the off-diagonal Frobenius norm falls below
/// `JACOBI_OFFDIAG_REL * ‖m‖_F`.
pub const JACOBI_OFFDIAG_REL: f64 = 1e-14;
pub const JACOBI_MAX_SWEEPS: usize = 100;
/// Linear solves refuse matrices whose 1-norm condition estimate exceeds this.
pub const MAX_CONDITION: f64 = 1e12;
/// Relative singular-value threshold used for rank decisions.
pub const RANK_REL_TOL: f64 = 1e-9;
/// Strict margin on real parts in the Hurwitz test.
pub const HURWITZ_MARGIN: f64 = 1e-9;
/// Tolerance used when certifying LMIs negative semidefinite.
pub const LMI_TOL: f64 = 1e-8;

/// Real symmetric matrix, upper triangle stored once.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Matrix", into = "Matrix")]
pub struct SymMatrix {
    dim: usize,
    packed: Vec<f64>,
}

impl SymMatrix {
    fn idx(&self, i: usize, j: usize) -> usize {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        // row-major upper triangle
        i * self.dim - i * (i + 1) / 2 + j
    }

    pub fn zeros(dim: usize) -> Self {
        Self { dim, packed: vec![0.0; dim * (dim + 1) / 2] }
    }

    pub fn identity(dim: usize) -> Self {
        let mut s = Self::zeros(dim);
        for i in 0..dim {
            s.set(i, i, 1.0);
        }
        s
    }

    pub fn diag(values: &[f64]) -> Self {
        let mut s = Self::zeros(values.len());
        for (i, v) in values.iter().enumerate() {
            s.set(i, i, *v);
        }
        s
    }

    /// Build from a dense matrix that must be exactly symmetric.
    pub fn from_dense(m: &Matrix) -> Result<Self> {
        if !m.is_square() || m.rows() == 0 {
            return Err(Error::InvalidInput("symmetric matrix must be square and non-empty".into()));
        }
        for i in 0..m.rows() {
            for j in (i + 1)..m.cols() {
                if m[(i, j)] != m[(j, i)] {
                    return Err(Error::InvalidInput(format!(
                        "matrix not symmetric at ({i},{j}): {} vs {}",
                        m[(i, j)],
                        m[(j, i)]
                    )));
                }
            }
        }
        Ok(Self::from_dense_symmetrized(m))
    }

    /// Build from `(m + mᵀ)/2`.
    pub fn from_dense_symmetrized(m: &Matrix) -> Self {
        let n = m.rows();
        let mut s = Self::zeros(n);
        for i in 0..n {
            for j in i..n {
                s.set(i, j, 0.5 * (m[(i, j)] + m[(j, i)]));
            }
        }
        s
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.packed[self.idx(i, j)]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let k = self.idx(i, j);
        self.packed[k] = v;
    }

    pub fn to_dense(&self) -> Matrix {
        Matrix::from_fn(self.dim, self.dim, |i, j| self.get(i, j))
    }

    pub fn is_finite(&self) -> bool {
        self.packed.iter().all(|v| v.is_finite())
    }

    pub fn frobenius(&self) -> f64 {
        let mut s = 0.0;
        for i in 0..self.dim {
            for j in 0..self.dim {
                s += self.get(i, j).powi(2);
            }
        }
        s.sqrt()
    }

    /// `xᵀ S x`
    pub fn quad_form(&self, x: &[f64]) -> f64 {
        let mut s = 0.0;
        for i in 0..self.dim {
            s += self.get(i, i) * x[i] * x[i];
            for j in (i + 1)..self.dim {
                s += 2.0 * self.get(i, j) * x[i] * x[j];
            }
        }
        s
    }
}

impl TryFrom<Matrix> for SymMatrix {
    type Error = Error;
    fn try_from(m: Matrix) -> Result<Self> {
        SymMatrix::from_dense(&m)
    }
}

impl From<SymMatrix> for Matrix {
    fn from(s: SymMatrix) -> Self {
        s.to_dense()
    }
}

/// Ascending eigenvalues of a symmetric matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct EigSpectrum {
    pub eigenvalues: Vec<f64>,
}

impl EigSpectrum {
    pub fn min(&self) -> f64 {
        self.eigenvalues[0]
    }

    pub fn max(&self) -> f64 {
        *self.eigenvalues.last().expect("non-empty spectrum")
    }
}

/// Eigenvalues by cyclic Jacobi rotations.
pub fn sym_eigvals(m: &SymMatrix) -> Result<EigSpectrum> {
    if !m.is_finite() {
        return Err(Error::InvalidInput("non-finite entries in symmetric matrix".into()));
    }
    let n = m.dim();
    let mut a = m.to_dense();
    let scale = m.frobenius();
    let target = JACOBI_OFFDIAG_REL * scale;
    for _ in 0..JACOBI_MAX_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
            .map(|(i, j)| 2.0 * a[(i, j)] * a[(i, j)])
            .sum::<f64>()
            .sqrt();
        if off <= target || off == 0.0 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
                a[(p, q)] = 0.0;
                a[(q, p)] = 0.0;
            }
        }
    }
    let mut eigenvalues: Vec<f64> = (0..n).map(|i| a[(i, i)]).collect();
    eigenvalues.sort_by(f64::total_cmp);
    Ok(EigSpectrum { eigenvalues })
}

pub fn is_negative_semidefinite(m: &SymMatrix, tol: f64) -> Result<bool> {
    if !(tol >= 0.0) {
        return Err(Error::InvalidInput("tolerance must be non-negative".into()));
    }
    Ok(sym_eigvals(m)?.max() <= tol)
}

pub fn lambda_min(m: &SymMatrix) -> Result<f64> {
    Ok(sym_eigvals(m)?.min())
}

pub fn lambda_max(m: &SymMatrix) -> Result<f64> {
    Ok(sym_eigvals(m)?.max())
}

/// LU factorisation with partial pivoting, kept for repeated solves.
struct Lu {
    n: usize,
    lu: Matrix,
    perm: Vec<usize>,
}

impl Lu {
    fn factor(a: &Matrix) -> Result<Self> {
        let n = a.rows();
        let mut lu = a.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        for k in 0..n {
            let (piv, pmax) = (k..n)
                .map(|i| (i, lu[(i, k)].abs()))
                .fold((k, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
            if pmax == 0.0 {
                return Err(Error::SingularMatrix { cond: f64::INFINITY });
            }
            if piv != k {
                for j in 0..n {
                    let tmp = lu[(k, j)];
                    lu[(k, j)] = lu[(piv, j)];
                    lu[(piv, j)] = tmp;
                }
                perm.swap(k, piv);
            }
            let d = lu[(k, k)];
            for i in (k + 1)..n {
                let f = lu[(i, k)] / d;
                lu[(i, k)] = f;
                for j in (k + 1)..n {
                    let v = lu[(k, j)];
                    lu[(i, j)] -= f * v;
                }
            }
        }
        Ok(Self { n, lu, perm })
    }

    fn solve_vec(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut y: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            for k in 0..i {
                y[i] -= self.lu[(i, k)] * y[k];
            }
        }
        for i in (0..n).rev() {
            for k in (i + 1)..n {
                y[i] -= self.lu[(i, k)] * y[k];
            }
            y[i] /= self.lu[(i, i)];
        }
        y
    }

    fn solve(&self, b: &Matrix) -> Matrix {
        let mut x = Matrix::zeros(self.n, b.cols());
        for j in 0..b.cols() {
            let col: Vec<f64> = (0..self.n).map(|i| b[(i, j)]).collect();
            for (i, v) in self.solve_vec(&col).into_iter().enumerate() {
                x[(i, j)] = v;
            }
        }
        x
    }
}

/// Solve `a·x = b` by LU with partial pivoting.
///
/// The 1-norm condition number is estimated from the explicit inverse,
/// which is cheap at these sizes.
pub fn solve_linear(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if !a.is_square() {
        return Err(Error::DimensionMismatch("solve_linear needs a square matrix".into()));
    }
    if b.rows() != a.rows() {
        return Err(Error::DimensionMismatch(format!(
            "right-hand side has {} rows, expected {}",
            b.rows(),
            a.rows()
        )));
    }
    if !a.is_finite() || !b.is_finite() {
        return Err(Error::InvalidInput("non-finite entries in linear system".into()));
    }
    let lu = Lu::factor(a)?;
    let inv = lu.solve(&Matrix::identity(a.rows()));
    let cond = a.norm1() * inv.norm1();
    if !cond.is_finite() || cond > MAX_CONDITION {
        return Err(Error::SingularMatrix { cond });
    }
    Ok(lu.solve(b))
}

pub fn inverse(a: &Matrix) -> Result<Matrix> {
    solve_linear(a, &Matrix::identity(a.rows()))
}

/// Solve the continuous Lyapunov equation `AᵀP + PA = -Q` via its
/// Kronecker form.
pub fn lyapunov(a: &Matrix, q: &SymMatrix) -> Result<SymMatrix> {
    let n = a.rows();
    if !a.is_square() || q.dim() != n {
        return Err(Error::DimensionMismatch("lyapunov operands".into()));
    }
    // vec(P) row-major: (AᵀP)_{ij} = Σ_k A_{ki} P_{kj}, (PA)_{ij} = Σ_k P_{ik} A_{kj}
    let mut kron = Matrix::zeros(n * n, n * n);
    for i in 0..n {
        for j in 0..n {
            let row = i * n + j;
            for k in 0..n {
                kron[(row, k * n + j)] += a[(k, i)];
                kron[(row, i * n + k)] += a[(k, j)];
            }
        }
    }
    let rhs = Matrix::from_fn(n * n, 1, |r, _| -q.get(r / n, r % n));
    let p = solve_linear(&kron, &rhs)?;
    let dense = Matrix::from_fn(n, n, |i, j| p[(i * n + j, 0)]);
    Ok(SymMatrix::from_dense_symmetrized(&dense))
}

/// True when every eigenvalue of `a` has real part below `-HURWITZ_MARGIN`.
///
/// Uses the Lyapunov characterisation: `A + m·I` is Hurwitz iff the solution
/// of `(A+mI)ᵀP + P(A+mI) = -I` exists and is positive definite.
pub fn is_hurwitz(a: &Matrix) -> bool {
    if !a.is_square() || !a.is_finite() {
        return false;
    }
    let shifted = a + &Matrix::identity(a.rows()).scale(HURWITZ_MARGIN);
    match lyapunov(&shifted, &SymMatrix::identity(a.rows())) {
        Ok(p) => sym_eigvals(&p).map(|s| s.min() > 0.0).unwrap_or(false),
        Err(_) => false,
    }
}

/// Lower-triangular `L` with `L Lᵀ = m`; errors unless `m` is positive definite.
pub fn cholesky(m: &SymMatrix) -> Result<Matrix> {
    let n = m.dim();
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut d = m.get(j, j);
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > 0.0) {
            return Err(Error::InvalidInput("matrix is not positive definite".into()));
        }
        let d = d.sqrt();
        l[(j, j)] = d;
        for i in (j + 1)..n {
            let mut s = m.get(i, j);
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / d;
        }
    }
    Ok(l)
}

/// Numerical rank from the spectrum of `mᵀm`.
pub fn rank(m: &Matrix) -> usize {
    let gram = m.transpose().matmul(m).expect("gram shape");
    let spec = match sym_eigvals(&SymMatrix::from_dense_symmetrized(&gram)) {
        Ok(s) => s,
        Err(_) => return 0,
    };
    let sv: Vec<f64> = spec.eigenvalues.iter().map(|v| v.max(0.0).sqrt()).collect();
    let smax = sv.iter().cloned().fold(0.0, f64::max);
    if smax == 0.0 {
        return 0;
    }
    sv.iter().filter(|s| **s > RANK_REL_TOL * smax).count()
}

/// Stack `C, CA, …, CAⁿ⁻¹`.
pub fn observability_matrix(a: &Matrix, c: &Matrix) -> Result<Matrix> {
    let n = a.rows();
    let mut blocks = Vec::with_capacity(n);
    let mut cur = c.clone();
    for _ in 0..n {
        let next = cur.matmul(a)?;
        blocks.push(cur);
        cur = next;
    }
    let refs: Vec<&Matrix> = blocks.iter().collect();
    Matrix::vstack(&refs)
}

pub fn is_observable(a: &Matrix, c: &Matrix) -> Result<bool> {
    Ok(rank(&observability_matrix(a, c)?) == a.rows())
}

/// One classical fourth-order Runge–Kutta step.
pub fn rk4_step<F>(f: F, state: &[f64], t: f64, h: f64) -> Result<Vec<f64>>
where
    F: Fn(f64, &[f64]) -> Result<Vec<f64>>,
{
    if !(h > 0.0) {
        return Err(Error::InvalidInput("step size must be positive".into()));
    }
    let check = |k: Vec<f64>| -> Result<Vec<f64>> {
        if k.iter().all(|v| v.is_finite()) {
            Ok(k)
        } else {
            Err(Error::NumericalBlowup(format!("non-finite derivative near t = {t}")))
        }
    };
    let n = state.len();
    let axpy = |k: &[f64], s: f64| -> Vec<f64> { (0..n).map(|i| state[i] + s * k[i]).collect() };
    let k1 = check(f(t, state)?)?;
    let k2 = check(f(t + 0.5 * h, &axpy(&k1, 0.5 * h))?)?;
    let k3 = check(f(t + 0.5 * h, &axpy(&k2, 0.5 * h))?)?;
    let k4 = check(f(t + h, &axpy(&k3, h))?)?;
    let out: Vec<f64> = (0..n)
        .map(|i| state[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect();
    check(out)
}
