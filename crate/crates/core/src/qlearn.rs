//! Q-learning for the discounted LQ problem with the exact quadratic
//! parameterization `Q(x, u; θ) = ξᵀΛξ + η`, `θ = [sym_vec(Λ); η]`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::matops::{self, gauss_solve_columns, tri_kron_into, tri_len, unvec_slice, SymVec};
use crate::opcount::tally;
use crate::riccati::CostSpec;
use crate::sim::Trajectory;
use crate::sysid::GRAM_THRESHOLD;

/// Relative floor on `λ_min(Λ₂₂)` below which `Λ` is not used for
/// extraction.
pub const LAMBDA22_FLOOR: f64 = 1e-10;

/// `D = (N+M)(N+M+1)/2 + 1`.
pub fn param_dim(n: usize, m: usize) -> usize {
    tri_len(n + m) + 1
}

/// Q-function parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct Theta {
    pub lambda_vec: SymVec,
    pub eta: f64,
}

impl Theta {
    pub fn new(lambda: &DMatrix<f64>, eta: f64) -> Result<Self> {
        Ok(Self {
            lambda_vec: matops::sym_vec(lambda)?,
            eta,
        })
    }

    /// Splits a `D`-vector into `(Λ⃗, η)`.
    pub fn from_vector(v: &DVector<f64>) -> Result<Self> {
        if v.is_empty() {
            return Err(Error::Dimension("empty parameter vector".into()));
        }
        let k = v.len() - 1;
        Ok(Self {
            lambda_vec: SymVec::from_vec(v.as_slice()[..k].to_vec())?,
            eta: v[k],
        })
    }

    /// `Λ₀ = blockdiag(Q, R)`, `η₀ = 0`.
    pub fn initial(spec: &CostSpec) -> Self {
        Self::new(&spec.stage_weight(), 0.0).expect("stage weight is symmetric")
    }

    pub fn to_vector(&self) -> DVector<f64> {
        let mut v = self.lambda_vec.as_slice().to_vec();
        v.push(self.eta);
        DVector::from_vec(v)
    }

    pub fn lambda(&self) -> DMatrix<f64> {
        matops::sym_unvec(&self.lambda_vec)
    }

    pub fn len(&self) -> usize {
        self.lambda_vec.len() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// `Λ = [γAᵀPA+Q, γAᵀPB; γBᵀPA, γBᵀPB+R]`.
pub fn lambda_from_model(
    p: &DMatrix<f64>,
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    spec: &CostSpec,
) -> Result<DMatrix<f64>> {
    spec.check_plant(a, b)?;
    let (n, m) = (spec.n_states(), spec.n_inputs());
    if p.shape() != (n, n) {
        return Err(Error::Dimension("P has wrong size".into()));
    }
    let mut ab = DMatrix::zeros(n, n + m);
    ab.view_mut((0, 0), (n, n)).copy_from(a);
    ab.view_mut((0, n), (n, m)).copy_from(b);
    let lambda = ab.transpose() * p * &ab * spec.gamma() + spec.stage_weight();
    Ok(matops::symmetrize(&lambda))
}

fn blocks(lambda: &DMatrix<f64>, n: usize) -> Result<(usize, DMatrix<f64>)> {
    let k = matops::check_square(lambda, "Λ")?;
    if n >= k {
        return Err(Error::Dimension(format!("Λ is {k}x{k}, state dimension {n}")));
    }
    let m = k - n;
    let l22 = lambda.view((n, n), (m, m)).into_owned();
    Ok((m, l22))
}

fn check_l22(l22: &DMatrix<f64>) -> Result<()> {
    let (lo, hi) = matops::eigen_range(l22);
    if !(lo > LAMBDA22_FLOOR * hi.abs()) || !(lo > 0.0) {
        return Err(Error::NotPositiveDefinite { min_eigenvalue: lo });
    }
    Ok(())
}

/// `L(Λ) = Λ₂₂⁻¹Λ₂₁`.
pub fn gain_from_lambda(lambda: &DMatrix<f64>, n: usize) -> Result<DMatrix<f64>> {
    let (m, l22) = blocks(lambda, n)?;
    check_l22(&l22)?;
    gauss_solve_columns(&l22, &lambda.view((n, 0), (m, n)).into_owned())
}

/// `P(Λ) = Λ₁₁ − Λ₁₂Λ₂₂⁻¹Λ₂₁`.
pub fn p_from_lambda(lambda: &DMatrix<f64>, n: usize) -> Result<DMatrix<f64>> {
    let (m, l22) = blocks(lambda, n)?;
    check_l22(&l22)?;
    Ok(schur(lambda, n, m, &l22)?.0)
}

/// Schur complement and gain without the PD check. Counts `NM²` for the
/// product plus the Gaussian solves.
fn schur(
    lambda: &DMatrix<f64>,
    n: usize,
    m: usize,
    l22: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let l21 = lambda.view((n, 0), (m, n)).into_owned();
    let gain = gauss_solve_columns(l22, &l21)?;
    let mut p = lambda.view((0, 0), (n, n)) - l21.transpose() * &gain;
    tally((n * n * m) as u64);
    matops::symmetrize_mut(&mut p);
    Ok((p, gain))
}

/// `φ = [ξ ⊗̃ ξ; 1]`.
pub fn feature(xi: &DVector<f64>) -> DVector<f64> {
    let d = tri_len(xi.len()) + 1;
    let mut out = DVector::zeros(d);
    tri_kron_into(xi.as_slice(), xi.as_slice(), &mut out.as_mut_slice()[..d - 1]);
    out[d - 1] = 1.0;
    out
}

/// `ξᵀΔξ`, `Δ = blockdiag(Q, R)`.
pub fn stage_cost(xi: &DVector<f64>, spec: &CostSpec) -> f64 {
    let n = spec.n_states();
    let x = xi.rows(0, n);
    let u = xi.rows(n, xi.len() - n);
    (x.transpose() * spec.q().as_matrix() * x)[(0, 0)]
        + (u.transpose() * spec.r().as_matrix() * u)[(0, 0)]
}

/// `υ = ξᵀΔξ + γ x'ᵀ P x'`.
pub fn regression_target(
    xi: &DVector<f64>,
    x_next: &DVector<f64>,
    p: &DMatrix<f64>,
    spec: &CostSpec,
) -> Result<f64> {
    let (n, m) = (spec.n_states(), spec.n_inputs());
    if xi.len() != n + m || x_next.len() != n || p.shape() != (n, n) {
        return Err(Error::Dimension("regression target operand sizes".into()));
    }
    Ok(stage_cost(xi, spec) + spec.gamma() * (x_next.transpose() * p * x_next)[(0, 0)])
}

fn check_traj(traj: &Trajectory, spec: &CostSpec) -> Result<()> {
    if traj.n_states() != spec.n_states() || traj.n_inputs() != spec.n_inputs() {
        return Err(Error::Dimension(
            "trajectory and cost dimensions differ".into(),
        ));
    }
    Ok(())
}

fn invert_gram(u: &DMatrix<f64>, samples: usize) -> Result<DMatrix<f64>> {
    if !matops::is_well_posed_gram(u, GRAM_THRESHOLD) {
        return Err(Error::InsufficientExcitation { samples });
    }
    Ok(u
        .clone()
        .cholesky()
        .ok_or(Error::InsufficientExcitation { samples })?
        .inverse())
}

/// One least-squares iteration at fixed horizon:
/// `θ_{k+1} = U_T⁻¹ Σ φ_t υ_t(θ_k)`.
pub fn ql_offline_iterate(traj: &Trajectory, theta: &Theta, spec: &CostSpec) -> Result<Theta> {
    check_traj(traj, spec)?;
    let n = spec.n_states();
    let p = p_from_lambda(&theta.lambda(), n)?;
    let d = param_dim(n, spec.n_inputs());
    if theta.len() != d {
        return Err(Error::Dimension("θ has wrong length".into()));
    }
    let mut u = DMatrix::zeros(d, d);
    let mut rhs = DVector::zeros(d);
    for (xi, next) in traj.transitions() {
        let phi = feature(&xi);
        u.ger(1.0, &phi, &phi, 1.0);
        rhs.axpy(regression_target(&xi, next, &p, spec)?, &phi, 1.0);
    }
    let m_inv = invert_gram(&u, traj.len())?;
    Theta::from_vector(&(m_inv * rhs))
}

/// Running sums before the Gram matrix becomes invertible.
#[derive(Debug, Clone)]
pub struct QlAccumulator {
    n: usize,
    u: DMatrix<f64>,
    a: DVector<f64>,
    b: DMatrix<f64>,
    count: usize,
}

impl QlAccumulator {
    pub fn new(n: usize, m: usize) -> Self {
        let d = param_dim(n, m);
        Self {
            n,
            u: DMatrix::zeros(d, d),
            a: DVector::zeros(d),
            b: DMatrix::zeros(d, tri_len(n)),
            count: 0,
        }
    }

    pub fn push(&mut self, xi: &DVector<f64>, x_next: &DVector<f64>, spec: &CostSpec) {
        let phi = feature(xi);
        let z = feature(x_next);
        let h = tri_len(self.n);
        self.u.ger(1.0, &phi, &phi, 1.0);
        self.a.axpy(stage_cost(xi, spec), &phi, 1.0);
        self.b.ger(spec.gamma(), &phi, &z.rows(0, h), 1.0);
        self.count += 1;
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn is_well_posed(&self) -> bool {
        matops::is_well_posed_gram(&self.u, GRAM_THRESHOLD)
    }

    /// `(U_T, a_T, B_T)` with `V_T(θ) = a_T + B_T·sym_vec(P(Λ))`.
    pub fn parts(&self) -> (&DMatrix<f64>, &DVector<f64>, &DMatrix<f64>) {
        (&self.u, &self.a, &self.b)
    }
}

/// Online Q-learning state.
#[derive(Debug, Clone)]
pub struct QlState {
    n: usize,
    m: usize,
    theta: DVector<f64>,
    inv_gram: DMatrix<f64>,
    vartheta: DVector<f64>,
    big_theta: DMatrix<f64>,
    /// Last `P(Λ)` extracted from a `Λ` with PD `Λ₂₂`.
    p_hold: DMatrix<f64>,
    gain_hold: Option<DMatrix<f64>>,
    tau: usize,
    t: usize,
    phi: DVector<f64>,
    mphi: DVector<f64>,
    z: Vec<f64>,
    row: DVector<f64>,
}

impl QlState {
    /// Builds `M_τ`, `ϑ_τ`, `Θ_τ` and `θ_τ` from accumulated sums.
    pub fn from_accumulator(acc: &QlAccumulator, theta0: &Theta, spec: &CostSpec) -> Result<Self> {
        let (n, m) = (spec.n_states(), spec.n_inputs());
        let d = param_dim(n, m);
        if theta0.len() != d {
            return Err(Error::Dimension("θ₀ has wrong length".into()));
        }
        let inv_gram = invert_gram(&acc.u, acc.count)?;
        let vartheta = &inv_gram * &acc.a;
        let big_theta = &inv_gram * &acc.b;
        let p0 = p_from_lambda(&theta0.lambda(), n)?;
        let mut state = Self {
            n,
            m,
            theta: DVector::zeros(d),
            inv_gram,
            vartheta,
            big_theta,
            p_hold: p0,
            gain_hold: None,
            tau: acc.count,
            t: acc.count,
            phi: DVector::zeros(d),
            mphi: DVector::zeros(d),
            z: vec![0.0; tri_len(n)],
            row: DVector::zeros(tri_len(n)),
        };
        state.refresh_theta();
        Ok(state)
    }

    /// `θ = ϑ + Θ·sym_vec(P_hold)`, then re-extract `P` and `L` if `Λ₂₂`
    /// allows it.
    fn refresh_theta(&mut self) {
        let pv = matops::sym_vec_upper(&self.p_hold);
        self.theta.copy_from(&self.vartheta);
        self.theta.gemv(1.0, &self.big_theta, &pv, 1.0);
        tally((self.theta.len() * pv.len()) as u64);

        let lambda = unvec_slice(&self.theta.as_slice()[..self.theta.len() - 1], self.n + self.m);
        let l22 = lambda.view((self.n, self.n), (self.m, self.m)).into_owned();
        if check_l22(&l22).is_ok() {
            if let Ok((p, l)) = schur(&lambda, self.n, self.m, &l22) {
                if p.iter().chain(l.iter()).all(|v| v.is_finite()) && p.clone().cholesky().is_some() {
                    self.p_hold = p;
                    self.gain_hold = Some(l);
                }
            }
        }
    }

    /// One step of the recursion with `(ξ_T, x_{T+1})`.
    pub fn update(&mut self, xi: &DVector<f64>, x_next: &DVector<f64>, spec: &CostSpec) -> Result<()> {
        let (n, m) = (self.n, self.m);
        if xi.len() != n + m || x_next.len() != n {
            return Err(Error::Dimension("Q-learning sample has wrong size".into()));
        }
        if xi.iter().chain(x_next.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("Q-learning sample"));
        }
        let d = self.theta.len();
        let h = self.z.len();

        tri_kron_into(xi.as_slice(), xi.as_slice(), &mut self.phi.as_mut_slice()[..d - 1]);
        self.phi[d - 1] = 1.0;
        let stage = stage_cost(xi, spec);
        tri_kron_into(x_next.as_slice(), x_next.as_slice(), &mut self.z);
        let gamma = spec.gamma();
        tally((d - 1 + n * n + n + m * m + m + h) as u64);

        // Sherman–Morrison with denominator 1 + φᵀMφ
        self.mphi.gemv(1.0, &self.inv_gram, &self.phi, 0.0);
        let denom = 1.0 + self.phi.dot(&self.mphi);
        let k = &self.mphi / denom;
        for j in 0..d {
            for i in 0..=j {
                let v = self.inv_gram[(i, j)] - k[i] * self.mphi[j];
                self.inv_gram[(i, j)] = v;
                self.inv_gram[(j, i)] = v;
            }
        }
        tally((d * d + d + d + d * (d + 1) / 2) as u64);

        // ϑ ← ϑ + k(stage − φᵀϑ)
        let innov = stage - self.phi.dot(&self.vartheta);
        self.vartheta.axpy(innov, &k, 1.0);
        // Θ ← Θ + k(γzᵀ − φᵀΘ)
        self.row.gemv_tr(1.0, &self.big_theta, &self.phi, 0.0);
        for (j, r) in self.row.iter_mut().enumerate() {
            *r = gamma * self.z[j] - *r;
        }
        self.big_theta.ger(1.0, &k, &self.row, 1.0);
        tally((2 * d + 2 * d * h + h) as u64);

        self.refresh_theta();
        if self.theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("Q-learning parameter"));
        }
        self.t += 1;
        Ok(())
    }

    pub fn theta(&self) -> Theta {
        Theta::from_vector(&self.theta).expect("θ has triangular length")
    }

    pub fn theta_vector(&self) -> &DVector<f64> {
        &self.theta
    }

    pub fn inv_gram(&self) -> &DMatrix<f64> {
        &self.inv_gram
    }

    pub fn vartheta(&self) -> &DVector<f64> {
        &self.vartheta
    }

    pub fn big_theta(&self) -> &DMatrix<f64> {
        &self.big_theta
    }

    /// Current `P̂ = P(Λ_T)`, or the last one with PD `Λ₂₂`.
    pub fn p_hat(&self) -> &DMatrix<f64> {
        &self.p_hold
    }

    /// Current `L̂ = L(Λ_T)`, or the last one with PD `Λ₂₂`.
    pub fn gain_hat(&self) -> Option<&DMatrix<f64>> {
        self.gain_hold.as_ref()
    }

    pub fn tau(&self) -> usize {
        self.tau
    }

    pub fn time(&self) -> usize {
        self.t
    }
}

/// Accumulates the first transitions until `U_τ` is invertible, then
/// forms `θ_τ` from `θ₀`.
pub fn ql_init(traj: &Trajectory, theta0: &Theta, spec: &CostSpec) -> Result<QlState> {
    check_traj(traj, spec)?;
    let mut acc = QlAccumulator::new(spec.n_states(), spec.n_inputs());
    for (xi, next) in traj.transitions() {
        acc.push(&xi, next, spec);
        if acc.is_well_posed() {
            return QlState::from_accumulator(&acc, theta0, spec);
        }
    }
    Err(Error::InsufficientExcitation {
        samples: traj.len(),
    })
}

/// [`ql_init`] from `Λ₀ = blockdiag(Q, R)` followed by the recursion over
/// the rest of `traj`.
pub fn ql_run(traj: &Trajectory, spec: &CostSpec) -> Result<QlState> {
    let mut state = ql_init(traj, &Theta::initial(spec), spec)?;
    for t in state.tau..traj.len() {
        state.update(&traj.xi(t), &traj.states()[t + 1], spec)?;
    }
    Ok(state)
}
