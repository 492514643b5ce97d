//! Dense symmetric-matrix algebra used by both estimators.
//!
//! Upper-triangular vectorization (`sym_vec`) stores a symmetric `N×N`
//! matrix as the concatenation of its column segments
//! `[X(1,n), ..., X(n,n)]` for `n = 1..N`. The matching product
//! `tri_kron(a, b)` satisfies `aᵀ X b == tri_kron(b, a) · sym_vec(X)`,
//! which is what turns quadratic forms into linear regressions.

mod gauss;
pub mod io;

pub use gauss::{gauss_mul_count, gauss_solve, gauss_solve_columns, GaussSolution};

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::opcount::tally;

/// Relative asymmetry accepted before a matrix is rejected as non-symmetric.
pub const SYMMETRY_TOL: f64 = 1e-12;

/// Eigenvalues at or below this (relative to the largest one) are treated
/// as zero when taking square roots and logarithms.
pub const EIGEN_FLOOR: f64 = 1e-14;

/// Number of entries in the upper triangle of an `n×n` matrix.
pub fn tri_len(n: usize) -> usize {
    n * (n + 1) / 2
}

/// Inverse of [`tri_len`], or `None` if `len` is not a triangular number.
pub fn tri_dim(len: usize) -> Option<usize> {
    let n = (((8 * len + 1) as f64).sqrt() as usize).saturating_sub(1) / 2;
    (n..=n + 1).find(|&k| tri_len(k) == len)
}

/// Upper-triangular vectorization of a symmetric matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SymVec {
    data: DVector<f64>,
    dim: usize,
}

impl SymVec {
    /// Wraps raw data; the length must be a triangular number.
    pub fn from_vec(data: Vec<f64>) -> Result<Self> {
        let dim = tri_dim(data.len()).ok_or_else(|| {
            Error::Dimension(format!("length {} is not a triangular number", data.len()))
        })?;
        Ok(Self {
            data: DVector::from_vec(data),
            dim,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        self.data.as_slice()
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.data
    }

    pub fn into_vector(self) -> DVector<f64> {
        self.data
    }
}

/// Largest absolute entry.
pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

/// Relative asymmetry `max|X - Xᵀ| / max|X|` (0 for the zero matrix).
pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    let scale = max_abs(m);
    if scale == 0.0 {
        return 0.0;
    }
    let mut worst = 0.0_f64;
    for j in 0..m.ncols() {
        for i in 0..j {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst / scale
}

pub fn check_square(m: &DMatrix<f64>, what: &str) -> Result<usize> {
    if m.nrows() != m.ncols() {
        return Err(Error::Dimension(format!(
            "{what} must be square, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(m.nrows())
}

/// Fails unless `m` is square and symmetric within [`SYMMETRY_TOL`].
pub fn check_symmetric(m: &DMatrix<f64>) -> Result<()> {
    check_square(m, "symmetric matrix")?;
    let asymmetry = asymmetry(m);
    if asymmetry > SYMMETRY_TOL {
        return Err(Error::Symmetry { asymmetry });
    }
    Ok(())
}

/// `(X + Xᵀ) / 2`.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Symmetrizes in place by mirroring the average of each off-diagonal pair.
pub fn symmetrize_mut(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for j in 0..n {
        for i in 0..j {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Upper-triangular vectorization. Inputs within tolerance of symmetric are
/// symmetrized first.
pub fn sym_vec(x: &DMatrix<f64>) -> Result<SymVec> {
    check_symmetric(x)?;
    let n = x.nrows();
    if n == 0 {
        return Err(Error::Dimension("empty matrix".into()));
    }
    let mut data = Vec::with_capacity(tri_len(n));
    for col in 0..n {
        for row in 0..=col {
            data.push(0.5 * (x[(row, col)] + x[(col, row)]));
        }
    }
    Ok(SymVec {
        data: DVector::from_vec(data),
        dim: n,
    })
}

/// Unchecked vectorization for hot loops; reads the upper triangle only.
pub(crate) fn sym_vec_upper(x: &DMatrix<f64>) -> DVector<f64> {
    let n = x.nrows();
    let mut out = DVector::zeros(tri_len(n));
    let mut k = 0;
    for col in 0..n {
        for row in 0..=col {
            out[k] = x[(row, col)];
            k += 1;
        }
    }
    out
}

/// Inverse of [`sym_vec`].
pub fn sym_unvec(v: &SymVec) -> DMatrix<f64> {
    unvec_slice(v.as_slice(), v.dim)
}

pub(crate) fn unvec_slice(v: &[f64], n: usize) -> DMatrix<f64> {
    let mut x = DMatrix::zeros(n, n);
    let mut k = 0;
    for col in 0..n {
        for row in 0..=col {
            x[(row, col)] = v[k];
            x[(col, row)] = v[k];
            k += 1;
        }
    }
    x
}

/// Upper-triangular Kronecker product.
pub fn tri_kron(a: &DVector<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    if a.len() != b.len() {
        return Err(Error::Dimension(format!(
            "tri_kron operands have lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    let mut out = DVector::zeros(tri_len(a.len()));
    tri_kron_into(a.as_slice(), b.as_slice(), out.as_mut_slice());
    Ok(out)
}

/// Writes `a ⊗̃ b` into `out`. Lengths are the caller's responsibility.
pub(crate) fn tri_kron_into(a: &[f64], b: &[f64], out: &mut [f64]) {
    let mut k = 0;
    for n in 0..a.len() {
        for i in 0..n {
            out[k] = a[i] * b[n] + a[n] * b[i];
            k += 1;
        }
        out[k] = a[n] * b[n];
        k += 1;
    }
}

/// Spectral norm (largest singular value).
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .fold(0.0_f64, |acc, v| acc.max(*v))
}

/// Smallest and largest eigenvalue of a symmetric matrix.
pub fn eigen_range(m: &DMatrix<f64>) -> (f64, f64) {
    let eig = SymmetricEigen::new(symmetrize(m));
    let lo = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = eig
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    (lo, hi)
}

/// Relative nonsingularity test for a PSD Gram matrix:
/// `λ_min > threshold · λ_max`.
pub fn is_well_posed_gram(u: &DMatrix<f64>, threshold: f64) -> bool {
    let (lo, hi) = eigen_range(u);
    hi > 0.0 && lo > threshold * hi
}

/// Applies `f` to the eigenvalues of a symmetric matrix.
fn spectral_map(m: &DMatrix<f64>, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(symmetrize(m));
    let mapped = eig.eigenvalues.map(f);
    &eig.eigenvectors * DMatrix::from_diagonal(&mapped) * eig.eigenvectors.transpose()
}

/// Symmetric PSD square root. Tiny negative eigenvalues from rounding are
/// clipped to zero.
pub fn psd_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_symmetric(m)?;
    let (lo, hi) = eigen_range(m);
    if lo < -EIGEN_FLOOR.max(1e-12) * hi.abs().max(1.0) {
        return Err(Error::NotPositiveDefinite { min_eigenvalue: lo });
    }
    Ok(spectral_map(m, |v| v.max(0.0).sqrt()))
}

/// Moore-Penrose pseudoinverse of a symmetric PSD matrix; eigenvalues below
/// `rel_cutoff · λ_max` are treated as zero.
pub fn pinv_symmetric(m: &DMatrix<f64>, rel_cutoff: f64) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(symmetrize(m));
    let hi = eig.eigenvalues.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    let cut = rel_cutoff * hi;
    let inv = eig
        .eigenvalues
        .map(|v| if v.abs() > cut && v != 0.0 { 1.0 / v } else { 0.0 });
    &eig.eigenvectors * DMatrix::from_diagonal(&inv) * eig.eigenvectors.transpose()
}

/// Product that records its multiplication count with the op counter.
pub(crate) fn mul(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    tally((a.nrows() * a.ncols() * b.ncols()) as u64);
    a * b
}

/// `aᵀ b` with counting.
pub(crate) fn tr_mul(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    tally((a.ncols() * a.nrows() * b.ncols()) as u64);
    a.tr_mul(b)
}

/// Scalar multiple with counting.
pub(crate) fn scale(a: &DMatrix<f64>, s: f64) -> DMatrix<f64> {
    tally(a.len() as u64);
    a * s
}

/// Symmetric positive-definite matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct PdMatrix(DMatrix<f64>);

impl PdMatrix {
    /// Validates symmetry and strict positivity (λ_min > floor · λ_max).
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        check_symmetric(&m)?;
        if m.nrows() == 0 {
            return Err(Error::Dimension("empty matrix".into()));
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("positive-definite matrix"));
        }
        let m = symmetrize(&m);
        let (lo, hi) = eigen_range(&m);
        if !(lo > EIGEN_FLOOR * hi.max(0.0)) || lo <= 0.0 {
            return Err(Error::NotPositiveDefinite { min_eigenvalue: lo });
        }
        Ok(Self(m))
    }

    pub fn identity(n: usize) -> Self {
        Self(DMatrix::identity(n, n))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    pub fn min_eigenvalue(&self) -> f64 {
        eigen_range(&self.0).0
    }

    pub fn sqrt(&self) -> DMatrix<f64> {
        spectral_map(&self.0, f64::sqrt)
    }

    pub fn inv_sqrt(&self) -> DMatrix<f64> {
        spectral_map(&self.0, |v| 1.0 / v.sqrt())
    }

    pub fn log(&self) -> DMatrix<f64> {
        spectral_map(&self.0, f64::ln)
    }

    pub fn inverse(&self) -> PdMatrix {
        PdMatrix(symmetrize(&spectral_map(&self.0, |v| 1.0 / v)))
    }

    pub fn spectral_norm(&self) -> f64 {
        eigen_range(&self.0).1
    }
}

impl AsRef<DMatrix<f64>> for PdMatrix {
    fn as_ref(&self) -> &DMatrix<f64> {
        &self.0
    }
}

/// Riemannian ("Thompson") distance `‖log(Q^{-1/2} P Q^{-1/2})‖_F`.
pub fn thompson_distance(p: &PdMatrix, q: &PdMatrix) -> Result<f64> {
    if p.dim() != q.dim() {
        return Err(Error::Dimension(format!(
            "thompson_distance between {}x{} and {}x{}",
            p.dim(),
            p.dim(),
            q.dim(),
            q.dim()
        )));
    }
    let q_is = q.inv_sqrt();
    let inner = symmetrize(&(&q_is * p.as_matrix() * &q_is));
    let eig = SymmetricEigen::new(inner);
    let mut acc = 0.0;
    for &v in eig.eigenvalues.iter() {
        if v <= 0.0 {
            return Err(Error::NotPositiveDefinite { min_eigenvalue: v });
        }
        acc += v.ln().powi(2);
    }
    Ok(acc.sqrt())
}

/// Default iteration cap of [`discrete_lyapunov`].
pub const LYAPUNOV_MAX_ITER: usize = 1_000_000;

/// Solves `C = F C Fᵀ + S` by fixed-point iteration from `C₀ = S`.
///
/// Divergence (spectral radius of `F` at least one) shows up as a
/// non-finite iterate or as the iteration cap being hit, and is reported as
/// [`Error::Unstable`].
pub fn discrete_lyapunov(f: &DMatrix<f64>, s: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = check_square(f, "Lyapunov transition")?;
    if s.shape() != (n, n) {
        return Err(Error::Dimension(format!(
            "Lyapunov source is {}x{}, expected {n}x{n}",
            s.nrows(),
            s.ncols()
        )));
    }
    check_symmetric(s)?;
    let s = symmetrize(s);
    let ft = f.transpose();
    let mut c = s.clone();
    for _ in 0..LYAPUNOV_MAX_ITER {
        let mut next = f * &c * &ft + &s;
        symmetrize_mut(&mut next);
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::Unstable("Lyapunov iteration diverged".into()));
        }
        // max-abs norms: squaring would overflow long before the iterate does
        let step = max_abs(&(&next - &c));
        let scale = max_abs(&next);
        c = next;
        if step <= 1e-15 * scale || scale == 0.0 {
            return Ok(c);
        }
    }
    Err(Error::Unstable(format!(
        "Lyapunov iteration did not converge in {LYAPUNOV_MAX_ITER} steps"
    )))
}
