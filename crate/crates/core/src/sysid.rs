//! Maximum-likelihood identification of `(A, B, Σ)` from one trajectory,
//! in batch form and as a recursive least-squares filter.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::matops::{self, is_well_posed_gram, pinv_symmetric, PdMatrix};
use crate::opcount::tally;
use crate::sim::Trajectory;

/// Relative eigenvalue threshold for calling a Gram matrix nonsingular.
pub const GRAM_THRESHOLD: f64 = 1e-8;

/// Relative cutoff of the pseudoinverse in [`ml_batch`].
pub const PINV_CUTOFF: f64 = 1e-12;

/// ML estimates of the plant.
#[derive(Debug, Clone, PartialEq)]
pub struct MlEstimate {
    pub a_hat: DMatrix<f64>,
    pub b_hat: DMatrix<f64>,
    pub sigma_hat: DMatrix<f64>,
}

/// Running sums `U = Σ ξξᵀ` and `V = Σ ξ x_{t+1}ᵀ`.
#[derive(Debug, Clone)]
pub struct GramAccumulator {
    n: usize,
    u: DMatrix<f64>,
    v: DMatrix<f64>,
    count: usize,
}

impl GramAccumulator {
    pub fn new(n: usize, m: usize) -> Self {
        Self {
            n,
            u: DMatrix::zeros(n + m, n + m),
            v: DMatrix::zeros(n + m, n),
            count: 0,
        }
    }

    pub fn push(&mut self, xi: &DVector<f64>, x_next: &DVector<f64>) {
        self.u.ger(1.0, xi, xi, 1.0);
        self.v.ger(1.0, xi, x_next, 1.0);
        self.count += 1;
    }

    pub fn u(&self) -> &DMatrix<f64> {
        &self.u
    }

    pub fn v(&self) -> &DMatrix<f64> {
        &self.v
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn n_states(&self) -> usize {
        self.n
    }

    pub fn is_well_posed(&self) -> bool {
        is_well_posed_gram(&self.u, GRAM_THRESHOLD)
    }
}

/// `(U_T, V_T)` of a whole trajectory.
pub fn gram(traj: &Trajectory) -> (DMatrix<f64>, DMatrix<f64>) {
    let mut acc = GramAccumulator::new(traj.n_states(), traj.n_inputs());
    for (xi, next) in traj.transitions() {
        acc.push(&xi, next);
    }
    (acc.u, acc.v)
}

/// Joint Gram `S = Σ z zᵀ` of `z_t = [ξ_t; x_{t+1}]`. Every quantity in the
/// Gaussian log-likelihood is a quadratic form in `S`.
#[derive(Debug, Clone, PartialEq)]
pub struct SufficientStats {
    n: usize,
    m: usize,
    s: DMatrix<f64>,
    count: usize,
}

impl SufficientStats {
    pub fn new(n: usize, m: usize) -> Self {
        let k = 2 * n + m;
        Self {
            n,
            m,
            s: DMatrix::zeros(k, k),
            count: 0,
        }
    }

    pub fn from_trajectory(traj: &Trajectory) -> Self {
        let mut out = Self::new(traj.n_states(), traj.n_inputs());
        for t in 0..traj.len() {
            out.push_transition(&traj.states()[t], &traj.inputs()[t], &traj.states()[t + 1]);
        }
        out
    }

    pub fn push_transition(&mut self, x: &DVector<f64>, u: &DVector<f64>, x_next: &DVector<f64>) {
        let z: Vec<f64> = x.iter().chain(u.iter()).chain(x_next.iter()).copied().collect();
        let k = z.len();
        for j in 0..k {
            for i in 0..=j {
                self.s[(i, j)] += z[i] * z[j];
            }
        }
        self.count += 1;
    }

    pub fn count(&self) -> usize {
        self.count
    }

    fn full(&self) -> DMatrix<f64> {
        let mut s = self.s.clone();
        s.fill_lower_triangle_with_upper_triangle();
        s
    }

    /// `U_T` block.
    pub fn u(&self) -> DMatrix<f64> {
        let k = self.n + self.m;
        self.full().view((0, 0), (k, k)).into_owned()
    }

    /// `V_T` block.
    pub fn v(&self) -> DMatrix<f64> {
        let k = self.n + self.m;
        self.full().view((0, k), (k, self.n)).into_owned()
    }

    /// `W_T(A, B) = (1/T) Σ ζζᵀ` with `ζ = x_{t+1} − Aξ_x − Bξ_u`.
    pub fn residual_cov(&self, a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
        let (n, k) = (self.n, self.n + self.m);
        let mut c = DMatrix::zeros(n, k + n);
        c.view_mut((0, 0), (n, n)).copy_from(&(-a));
        c.view_mut((0, n), (n, self.m)).copy_from(&(-b));
        c.view_mut((0, k), (n, n)).fill_with_identity();
        let w = &c * self.full() * c.transpose() / self.count.max(1) as f64;
        matops::symmetrize(&w)
    }
}

/// Batch ML estimate: `[Â, B̂]ᵀ = U†V`, `Σ̂ = W_T(Â, B̂)`.
pub fn ml_batch(traj: &Trajectory) -> Result<MlEstimate> {
    if traj.is_empty() {
        return Err(Error::InvalidParameter("trajectory has no transitions".into()));
    }
    let stats = SufficientStats::from_trajectory(traj);
    Ok(ml_from_stats(&stats))
}

/// Same as [`ml_batch`] from precomputed statistics.
pub fn ml_from_stats(stats: &SufficientStats) -> MlEstimate {
    let est = pinv_symmetric(&stats.u(), PINV_CUTOFF) * stats.v();
    let (a_hat, b_hat) = split_estimate(&est, stats.n);
    let sigma_hat = stats.residual_cov(&a_hat, &b_hat);
    MlEstimate {
        a_hat,
        b_hat,
        sigma_hat,
    }
}

/// Splits `[Â, B̂]ᵀ` into `Â` and `B̂`.
pub fn split_estimate(est: &DMatrix<f64>, n: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    let m = est.nrows() - n;
    (
        est.rows(0, n).transpose(),
        est.rows(n, m).transpose(),
    )
}

/// `W_T(Â, B̂)`.
pub fn sigma_hat(a_hat: &DMatrix<f64>, b_hat: &DMatrix<f64>, traj: &Trajectory) -> Result<DMatrix<f64>> {
    check_model_shape(a_hat, b_hat, traj)?;
    if traj.is_empty() {
        return Err(Error::InvalidParameter("trajectory has no transitions".into()));
    }
    Ok(SufficientStats::from_trajectory(traj).residual_cov(a_hat, b_hat))
}

/// `log det Σ + Tr{Σ⁻¹ W_T(A, B)}`; additive constants and the `T/2`
/// factor of the exact log-likelihood are dropped.
pub fn neg_loglik(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    sigma: &DMatrix<f64>,
    traj: &Trajectory,
) -> Result<f64> {
    check_model_shape(a, b, traj)?;
    let stats = SufficientStats::from_trajectory(traj);
    neg_loglik_stats(a, b, sigma, &stats)
}

pub fn neg_loglik_stats(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    sigma: &DMatrix<f64>,
    stats: &SufficientStats,
) -> Result<f64> {
    let sigma = PdMatrix::new(sigma.clone())?;
    let chol = sigma
        .as_matrix()
        .clone()
        .cholesky()
        .ok_or(Error::NotPositiveDefinite {
            min_eigenvalue: sigma.min_eigenvalue(),
        })?;
    let log_det = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let w = stats.residual_cov(a, b);
    Ok(log_det + chol.solve(&w).trace())
}

/// Exact Gaussian log-likelihood of the transitions,
/// `−(T/2)(N log 2π + neg_loglik)`.
pub fn log_likelihood(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    sigma: &DMatrix<f64>,
    stats: &SufficientStats,
) -> Result<f64> {
    let t = stats.count as f64;
    let n = stats.n as f64;
    Ok(-0.5 * t * (n * (2.0 * std::f64::consts::PI).ln() + neg_loglik_stats(a, b, sigma, stats)?))
}

fn check_model_shape(a: &DMatrix<f64>, b: &DMatrix<f64>, traj: &Trajectory) -> Result<()> {
    let (n, m) = (traj.n_states(), traj.n_inputs());
    if a.shape() != (n, n) || b.shape() != (n, m) {
        return Err(Error::Dimension(format!(
            "model is {}x{} / {}x{} but trajectory has N={n}, M={m}",
            a.nrows(),
            a.ncols(),
            b.nrows(),
            b.ncols()
        )));
    }
    Ok(())
}

/// Recursive least-squares state.
#[derive(Debug, Clone)]
pub struct RlsState {
    n: usize,
    estimate: DMatrix<f64>,
    inv_gram: DMatrix<f64>,
    tau: usize,
    t: usize,
    mxi: DVector<f64>,
}

impl RlsState {
    /// Starts from `M_τ = U_τ⁻¹` and `U_τ⁻¹V_τ`.
    pub fn from_gram(acc: &GramAccumulator) -> Result<Self> {
        if !acc.is_well_posed() {
            return Err(Error::InsufficientExcitation {
                samples: acc.count(),
            });
        }
        let inv_gram = acc
            .u()
            .clone()
            .cholesky()
            .ok_or(Error::InsufficientExcitation {
                samples: acc.count(),
            })?
            .inverse();
        let estimate = &inv_gram * acc.v();
        let k = inv_gram.nrows();
        Ok(Self {
            n: acc.n_states(),
            estimate,
            inv_gram,
            tau: acc.count(),
            t: acc.count(),
            mxi: DVector::zeros(k),
        })
    }

    /// Rank-one update with `(ξ_T, x_{T+1})`.
    pub fn update(&mut self, xi: &DVector<f64>, x_next: &DVector<f64>) -> Result<()> {
        let k = self.inv_gram.nrows();
        let n = self.n;
        if xi.len() != k || x_next.len() != n {
            return Err(Error::Dimension("RLS sample has wrong size".into()));
        }
        if xi.iter().chain(x_next.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("RLS sample"));
        }
        self.mxi.gemv(1.0, &self.inv_gram, xi, 0.0);
        let denom = 1.0 + xi.dot(&self.mxi);
        let gain = &self.mxi / denom;
        // M ← M − η (Mξ)ᵀ, using the symmetry of M
        self.inv_gram.ger(-1.0, &gain, &self.mxi, 1.0);
        // estimate ← estimate + η (x_nextᵀ − ξᵀ estimate)
        let mut resid = x_next.clone();
        resid.gemv_tr(-1.0, &self.estimate, xi, 1.0);
        self.estimate.ger(1.0, &gain, &resid, 1.0);
        tally((2 * k * k + 2 * k + 2 * k * n) as u64);
        self.t += 1;
        Ok(())
    }

    /// `[Â, B̂]ᵀ`.
    pub fn estimate(&self) -> &DMatrix<f64> {
        &self.estimate
    }

    pub fn inv_gram(&self) -> &DMatrix<f64> {
        &self.inv_gram
    }

    pub fn a_hat(&self) -> DMatrix<f64> {
        self.estimate.rows(0, self.n).transpose()
    }

    pub fn b_hat(&self) -> DMatrix<f64> {
        let m = self.estimate.nrows() - self.n;
        self.estimate.rows(self.n, m).transpose()
    }

    pub fn tau(&self) -> usize {
        self.tau
    }

    /// Number of samples absorbed so far.
    pub fn time(&self) -> usize {
        self.t
    }
}

/// Accumulates the first transitions of `traj` until `U_τ` is nonsingular.
pub fn rls_init(traj: &Trajectory) -> Result<RlsState> {
    let mut acc = GramAccumulator::new(traj.n_states(), traj.n_inputs());
    for (xi, next) in traj.transitions() {
        acc.push(&xi, next);
        if acc.is_well_posed() {
            return RlsState::from_gram(&acc);
        }
    }
    Err(Error::InsufficientExcitation {
        samples: traj.len(),
    })
}

/// [`rls_init`] followed by updates over the rest of `traj`.
pub fn rls_run(traj: &Trajectory) -> Result<RlsState> {
    let mut state = rls_init(traj)?;
    for t in state.tau..traj.len() {
        state.update(&traj.xi(t), &traj.states()[t + 1])?;
    }
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{simulate_seeded, Policy, SystemModel};
    use nalgebra::dmatrix;

    fn test_model() -> SystemModel {
        SystemModel::new(
            dmatrix![-0.6, -0.4; 1.0, 0.0],
            dmatrix![0.0; 1.0],
            DMatrix::identity(2, 2) * 0.01,
        )
        .unwrap()
    }

    #[test]
    fn noise_free_data_is_interpolated() {
        let model =
            SystemModel::noise_free(dmatrix![-0.6, -0.4; 1.0, 0.0], dmatrix![0.0; 1.0]).unwrap();
        let policy = Policy::RandomGaussian { cov: dmatrix![1.0] };
        let traj = simulate_seeded(&model, &policy, 10, 4).unwrap();
        let est = ml_batch(&traj).unwrap();
        assert!((&est.a_hat - model.a()).norm() < 1e-10);
        assert!((&est.b_hat - model.b()).norm() < 1e-10);
        assert!(est.sigma_hat.norm() < 1e-10);
    }

    #[test]
    fn rank_deficient_single_sample() {
        let traj = Trajectory::from_parts(
            vec![dmatrix![1.0].column(0).into_owned(), dmatrix![0.5].column(0).into_owned()],
            vec![DVector::zeros(1)],
        )
        .unwrap();
        let est = ml_batch(&traj).unwrap();
        // minimum-norm solution puts nothing on the unexcited input
        assert!((est.a_hat[(0, 0)] - 0.5).abs() < 1e-12);
        assert_eq!(est.b_hat[(0, 0)], 0.0);
        assert!(rls_init(&traj).is_err());
    }

    #[test]
    fn scalar_generic_data_initializes_at_two() {
        let model = SystemModel::new(dmatrix![0.7], dmatrix![1.0], dmatrix![0.1]).unwrap();
        let policy = Policy::RandomGaussian { cov: dmatrix![1.0] };
        let traj = simulate_seeded(&model, &policy, 50, 8).unwrap();
        assert_eq!(rls_init(&traj).unwrap().tau(), 2);
    }

    #[test]
    fn test_system_initializes_at_three() {
        let policy = Policy::RandomGaussian { cov: dmatrix![1.0] };
        let traj = simulate_seeded(&test_model(), &policy, 50, 8).unwrap();
        let state = rls_init(&traj).unwrap();
        assert_eq!(state.tau(), 3);
        let batch = ml_batch(&traj.prefix(3)).unwrap();
        assert!((state.a_hat() - &batch.a_hat).norm() < 1e-8 * batch.a_hat.norm());
    }

    #[test]
    fn zero_regressor_leaves_state_alone() {
        let policy = Policy::RandomGaussian { cov: dmatrix![1.0] };
        let traj = simulate_seeded(&test_model(), &policy, 30, 2).unwrap();
        let mut state = rls_run(&traj).unwrap();
        let before = (state.estimate().clone(), state.inv_gram().clone());
        state
            .update(&DVector::zeros(3), &DVector::from_vec(vec![1.0, 2.0]))
            .unwrap();
        assert_eq!(state.estimate(), &before.0);
        assert_eq!(state.inv_gram(), &before.1);
    }

    #[test]
    fn neg_loglik_identity_sigma_is_trace() {
        let policy = Policy::RandomGaussian { cov: dmatrix![1.0] };
        let model = test_model();
        let traj = simulate_seeded(&model, &policy, 40, 5).unwrap();
        let w = sigma_hat(model.a(), model.b(), &traj).unwrap();
        let v = neg_loglik(model.a(), model.b(), &DMatrix::identity(2, 2), &traj).unwrap();
        assert!((v - w.trace()).abs() < 1e-12);
        assert!(neg_loglik(model.a(), model.b(), &dmatrix![1.0, 2.0; 2.0, 1.0], &traj).is_err());
    }

    #[test]
    fn zero_residuals_give_zero_sigma() {
        let model =
            SystemModel::noise_free(dmatrix![0.5, 0.0; 0.1, 0.2], dmatrix![1.0; 0.0]).unwrap();
        let policy = Policy::RandomGaussian { cov: dmatrix![1.0] };
        let traj = simulate_seeded(&model, &policy, 20, 1).unwrap();
        let s = sigma_hat(model.a(), model.b(), &traj).unwrap();
        assert!(s.norm() < 1e-15);
    }

    #[test]
    fn sufficient_stats_reproduce_gram() {
        let policy = Policy::RandomGaussian { cov: dmatrix![1.0] };
        let traj = simulate_seeded(&test_model(), &policy, 60, 3).unwrap();
        let stats = SufficientStats::from_trajectory(&traj);
        let (u, v) = gram(&traj);
        assert!((stats.u() - u).norm() < 1e-12);
        assert!((stats.v() - v).norm() < 1e-12);
    }
}
