//! Discounted discrete algebraic Riccati equation.
//!
//! The optimal cost-to-go matrix `P` solves
//!
//! ```text
//! P = γAᵀPA − γ²AᵀPB(γBᵀPB + R)⁻¹BᵀPA + Q
//! ```
//!
//! which is the standard DARE for `(√γA, √γB)`. It is solved by plain
//! fixed-point iteration; the iteration is a contraction in the Thompson
//! distance, which gives a computable rate `ρ` and an a-priori error bound
//! `‖P − P_k‖ ≤ (exp(ρᵏ δ(P, P₀)) − 1)‖P‖` (spectral norms).

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::matops::{
    gauss_solve_columns, mul, scale, spectral_norm, symmetrize_mut, thompson_distance,
    tr_mul, PdMatrix,
};

/// Weights and discount of the quadratic objective.
#[derive(Debug, Clone, PartialEq)]
pub struct CostSpec {
    q: PdMatrix,
    r: PdMatrix,
    gamma: f64,
}

impl CostSpec {
    pub fn new(q: PdMatrix, r: PdMatrix, gamma: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "discount must lie in (0, 1], got {gamma}"
            )));
        }
        Ok(Self { q, r, gamma })
    }

    /// `Q = I_n`, `R = I_m`.
    pub fn identity(n: usize, m: usize, gamma: f64) -> Result<Self> {
        Self::new(PdMatrix::identity(n), PdMatrix::identity(m), gamma)
    }

    pub fn q(&self) -> &PdMatrix {
        &self.q
    }

    pub fn r(&self) -> &PdMatrix {
        &self.r
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn n_states(&self) -> usize {
        self.q.dim()
    }

    pub fn n_inputs(&self) -> usize {
        self.r.dim()
    }

    /// `Δ = blockdiag(Q, R)`.
    pub fn stage_weight(&self) -> DMatrix<f64> {
        let (n, m) = (self.n_states(), self.n_inputs());
        let mut d = DMatrix::zeros(n + m, n + m);
        d.view_mut((0, 0), (n, n)).copy_from(self.q.as_matrix());
        d.view_mut((n, n), (m, m)).copy_from(self.r.as_matrix());
        d
    }

    pub(crate) fn check_plant(&self, a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<()> {
        let (n, m) = (self.n_states(), self.n_inputs());
        if a.shape() != (n, n) || b.shape() != (n, m) {
            return Err(Error::Dimension(format!(
                "plant is A {}x{}, B {}x{} but cost expects {n} states and {m} inputs",
                a.nrows(),
                a.ncols(),
                b.nrows(),
                b.ncols()
            )));
        }
        Ok(())
    }
}

/// Converged Riccati solution with its contraction certificate.
#[derive(Debug, Clone)]
pub struct DareSolution {
    pub p: PdMatrix,
    /// Feedback gain; the control law is `u = −L x`.
    pub gain: DMatrix<f64>,
    pub iterations: usize,
    /// Contraction rate `ρ` of the certificate.
    pub rho: f64,
    /// `δ(P, P₀)`.
    pub delta0: f64,
    /// Spectral-norm fixed-point residual relative to `max(1, ‖P‖)`.
    pub residual: f64,
}

impl DareSolution {
    /// Certified bound on `‖P − P_k‖` after `k` iterations from `P₀`.
    pub fn error_bound(&self, k: usize) -> f64 {
        ((self.rho.powi(k as i32) * self.delta0).exp() - 1.0) * self.p.spectral_norm()
    }
}

/// Solver tolerances.
#[derive(Debug, Clone, Copy)]
pub struct DareOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for DareOptions {
    fn default() -> Self {
        Self {
            tol: 1e-12,
            max_iter: 100_000,
        }
    }
}

/// One Riccati step without input validation; the hot path of the online
/// identifier.
pub(crate) fn riccati_step(
    p: &DMatrix<f64>,
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    spec: &CostSpec,
) -> Result<DMatrix<f64>> {
    let g = spec.gamma;
    let pa = mul(p, a);
    let pb = mul(p, b);
    let atpa = tr_mul(a, &pa);
    let btpb = tr_mul(b, &pb);
    // AᵀPB, folded with γ
    let cross = scale(&tr_mul(a, &pb), g);
    let inner = scale(&btpb, g) + spec.r.as_matrix();
    let solved = gauss_solve_columns(&inner, &cross.transpose())?;
    let mut next = scale(&atpa, g) + spec.q.as_matrix() - mul(&cross, &solved);
    symmetrize_mut(&mut next);
    if next.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("Riccati iteration"));
    }
    Ok(next)
}

/// One step of the discounted Riccati recursion.
pub fn dare_iterate(
    p: &PdMatrix,
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    spec: &CostSpec,
) -> Result<PdMatrix> {
    spec.check_plant(a, b)?;
    PdMatrix::new(riccati_step(p.as_matrix(), a, b, spec)?)
}

fn relative_step(next: &DMatrix<f64>, prev: &DMatrix<f64>) -> f64 {
    spectral_norm(&(next - prev)) / spectral_norm(next).max(1.0)
}

/// Iterates the recursion from `p0` until the relative fixed-point
/// residual drops below `opts.tol`.
pub fn solve_dare(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    spec: &CostSpec,
    p0: &PdMatrix,
    opts: DareOptions,
) -> Result<DareSolution> {
    spec.check_plant(a, b)?;
    if p0.dim() != spec.n_states() {
        return Err(Error::Dimension("initial P has wrong size".into()));
    }
    let mut p = p0.as_matrix().clone();
    let mut residual = f64::INFINITY;
    for k in 1..=opts.max_iter {
        let next = riccati_step(&p, a, b, spec)?;
        // Frobenius bounds the spectral norm, so this screen is conservative.
        let cheap = (&next - &p).norm() / next.norm().max(1.0);
        p = next;
        if cheap <= opts.tol {
            residual = relative_step(&riccati_step(&p, a, b, spec)?, &p);
            if residual <= opts.tol {
                return finish(a, b, spec, p0, p, k, residual);
            }
        } else {
            residual = cheap;
        }
    }
    Err(Error::NonConvergence {
        iterations: opts.max_iter,
        residual,
    })
}

fn finish(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    spec: &CostSpec,
    p0: &PdMatrix,
    p: DMatrix<f64>,
    iterations: usize,
    residual: f64,
) -> Result<DareSolution> {
    let p = PdMatrix::new(p)?;
    let delta0 = thompson_distance(&p, p0)?;
    let rho = contraction_rate(a, spec, &p, delta0);
    let gain = gain(&p, a, b, spec)?;
    Ok(DareSolution {
        p,
        gain,
        iterations,
        rho,
        delta0,
        residual,
    })
}

/// `ρ = 1 / (1 + (‖Q⁻¹‖ γ‖A‖² ‖P‖)⁻¹ e^{−δ₀})`.
pub fn contraction_rate(a: &DMatrix<f64>, spec: &CostSpec, p: &PdMatrix, delta0: f64) -> f64 {
    let q_inv = 1.0 / spec.q.min_eigenvalue();
    let a_norm = spectral_norm(a);
    let growth = q_inv * spec.gamma * a_norm * a_norm * p.spectral_norm();
    if growth == 0.0 {
        return 0.0;
    }
    1.0 / (1.0 + (-delta0).exp() / growth)
}

/// `P₀, P₁, …, P_k` of the recursion started at `p0`.
pub fn dare_trace(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    spec: &CostSpec,
    p0: &PdMatrix,
    steps: usize,
) -> Result<Vec<DMatrix<f64>>> {
    spec.check_plant(a, b)?;
    let mut out = Vec::with_capacity(steps + 1);
    out.push(p0.as_matrix().clone());
    for _ in 0..steps {
        let next = riccati_step(out.last().expect("non-empty"), a, b, spec)?;
        out.push(next);
    }
    Ok(out)
}

/// `L = γ(γBᵀPB + R)⁻¹BᵀPA`.
pub fn gain(
    p: &PdMatrix,
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    spec: &CostSpec,
) -> Result<DMatrix<f64>> {
    spec.check_plant(a, b)?;
    gain_unchecked(p.as_matrix(), a, b, spec)
}

pub(crate) fn gain_unchecked(
    p: &DMatrix<f64>,
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    spec: &CostSpec,
) -> Result<DMatrix<f64>> {
    let pb = mul(p, b);
    let inner = scale(&tr_mul(b, &pb), spec.gamma) + spec.r.as_matrix();
    let rhs = scale(&tr_mul(&pb, a), spec.gamma);
    gauss_solve_columns(&inner, &rhs)
}

/// Optimal expected discounted cost `xᵀPx + γ/(1−γ)·Tr{ΣP}`.
pub fn optimal_cost(
    p: &PdMatrix,
    sigma: &DMatrix<f64>,
    x: &DVector<f64>,
    gamma: f64,
) -> Result<f64> {
    if gamma >= 1.0 {
        return Err(Error::InvalidParameter(
            "optimal cost is infinite without discounting".into(),
        ));
    }
    if sigma.shape() != (p.dim(), p.dim()) || x.len() != p.dim() {
        return Err(Error::Dimension("optimal_cost operand sizes differ".into()));
    }
    let quad = (x.transpose() * p.as_matrix() * x)[(0, 0)];
    let trace = (sigma * p.as_matrix()).trace();
    Ok(quad + gamma / (1.0 - gamma) * trace)
}

/// Convenience: solve from `P₀ = Q` with default options.
pub fn solve_dare_default(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    spec: &CostSpec,
) -> Result<DareSolution> {
    solve_dare(a, b, spec, &spec.q.clone(), DareOptions::default())
}

/// `true` if all eigenvalues of `a − b·l` lie strictly inside the unit disc.
pub fn is_closed_loop_stable(a: &DMatrix<f64>, b: &DMatrix<f64>, l: &DMatrix<f64>) -> bool {
    let f = a - b * l;
    f.complex_eigenvalues().iter().all(|z| z.norm() < 1.0)
}

pub(crate) fn check_finite(m: &DMatrix<f64>, what: &'static str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}
