//! Monte Carlo estimate of the Cramér–Rao bound on `sym_vec(P̂)`:
//! `Tr{J I_T⁻¹ Jᵀ}` with `I_T` the Fisher information of `T` transitions
//! and `J` the Jacobian of `(A, B, Σ) ↦ sym_vec(P)`.
//!
//! Parameters are ordered `vec(A)` (column-major), `vec(B)`, `sym_vec(Σ)`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::matops::{self, tri_len, PdMatrix};
use crate::riccati::{solve_dare, CostSpec, DareOptions};
use crate::sim::{self, Policy, SystemModel};
use crate::sysid::{log_likelihood, SufficientStats};

/// Relative finite-difference step.
pub const FD_STEP: f64 = 1e-5;

/// Smallest acceptable `λ_min/λ_max` of the estimated Fisher matrix.
pub const FISHER_RATIO_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy)]
struct Layout {
    n: usize,
    m: usize,
}

impl Layout {
    fn a_len(self) -> usize {
        self.n * self.n
    }

    fn b_len(self) -> usize {
        self.n * self.m
    }

    fn len(self) -> usize {
        self.a_len() + self.b_len() + tri_len(self.n)
    }

    fn pack(self, a: &DMatrix<f64>, b: &DMatrix<f64>, sigma: &DMatrix<f64>) -> DVector<f64> {
        let mut v: Vec<f64> = a.iter().chain(b.iter()).copied().collect();
        v.extend_from_slice(matops::sym_vec_upper(sigma).as_slice());
        DVector::from_vec(v)
    }

    fn unpack(self, v: &DVector<f64>) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
        let (n, m) = (self.n, self.m);
        let s = v.as_slice();
        let a = DMatrix::from_column_slice(n, n, &s[..self.a_len()]);
        let b = DMatrix::from_column_slice(n, m, &s[self.a_len()..self.a_len() + self.b_len()]);
        let sigma = matops::unvec_slice(&s[self.a_len() + self.b_len()..], n);
        (a, b, sigma)
    }

    /// Step per parameter: `FD_STEP` times the largest magnitude in its
    /// block.
    fn steps(self, theta: &DVector<f64>) -> Vec<f64> {
        let bounds = [
            (0, self.a_len()),
            (self.a_len(), self.a_len() + self.b_len()),
            (self.a_len() + self.b_len(), self.len()),
        ];
        let mut out = vec![0.0; self.len()];
        for (lo, hi) in bounds {
            let scale = theta.as_slice()[lo..hi]
                .iter()
                .fold(0.0_f64, |acc, v| acc.max(v.abs()));
            let h = FD_STEP * if scale > 0.0 { scale } else { 1.0 };
            out[lo..hi].iter_mut().for_each(|s| *s = h);
        }
        out
    }
}

/// Score of one trajectory's transitions at `theta`, by central
/// differences of the exact log-likelihood.
fn score(layout: Layout, theta: &DVector<f64>, steps: &[f64], stats: &SufficientStats) -> Result<DVector<f64>> {
    let mut out = DVector::zeros(layout.len());
    for i in 0..layout.len() {
        let mut plus = theta.clone();
        let mut minus = theta.clone();
        plus[i] += steps[i];
        minus[i] -= steps[i];
        let (ap, bp, sp) = layout.unpack(&plus);
        let (am, bm, sm) = layout.unpack(&minus);
        let lp = log_likelihood(&ap, &bp, &sp, stats)?;
        let lm = log_likelihood(&am, &bm, &sm, stats)?;
        out[i] = (lp - lm) / (2.0 * steps[i]);
    }
    Ok(out)
}

/// Fisher information of `horizon` transitions under `policy`, averaged
/// over `runs` simulated trajectories seeded from `(seed, run)`.
pub fn fisher_information(
    model: &SystemModel,
    policy: &Policy,
    horizon: usize,
    runs: usize,
    seed: u64,
) -> Result<DMatrix<f64>> {
    if runs == 0 {
        return Err(Error::InvalidParameter("CRLB needs at least one run".into()));
    }
    let layout = Layout {
        n: model.n_states(),
        m: model.n_inputs(),
    };
    let theta = layout.pack(model.a(), model.b(), model.sigma());
    let steps = layout.steps(&theta);
    let scores: Vec<DVector<f64>> = (0..runs)
        .into_par_iter()
        .map(|r| {
            let mut rng = sim::run_rng(seed, r as u64);
            let traj = sim::simulate(model, policy, horizon, &mut rng, &mut sim::NoFeedback)?;
            score(layout, &theta, &steps, &SufficientStats::from_trajectory(&traj))
        })
        .collect::<Result<_>>()?;
    let k = layout.len();
    let mut fisher = DMatrix::zeros(k, k);
    for s in &scores {
        fisher.ger(1.0, s, s, 1.0);
    }
    Ok(matops::symmetrize(&(fisher / runs as f64)))
}

/// Jacobian of `(A, B, Σ) ↦ sym_vec(P)` at the true model by central
/// differences of warm-started Riccati solves. The `Σ` columns are zero.
pub fn riccati_jacobian(model: &SystemModel, cost: &CostSpec, p_star: &PdMatrix) -> Result<DMatrix<f64>> {
    let layout = Layout {
        n: model.n_states(),
        m: model.n_inputs(),
    };
    let theta = layout.pack(model.a(), model.b(), model.sigma());
    let steps = layout.steps(&theta);
    let opts = DareOptions {
        tol: 1e-14,
        max_iter: 1_000_000,
    };
    let rows = tri_len(layout.n);
    let mut jac = DMatrix::zeros(rows, layout.len());
    for i in 0..layout.a_len() + layout.b_len() {
        let mut plus = theta.clone();
        let mut minus = theta.clone();
        plus[i] += steps[i];
        minus[i] -= steps[i];
        let (ap, bp, _) = layout.unpack(&plus);
        let (am, bm, _) = layout.unpack(&minus);
        let pp = solve_dare(&ap, &bp, cost, p_star, opts)?.p;
        let pm = solve_dare(&am, &bm, cost, p_star, opts)?.p;
        let col = (matops::sym_vec_upper(pp.as_matrix()) - matops::sym_vec_upper(pm.as_matrix()))
            / (2.0 * steps[i]);
        jac.set_column(i, &col);
    }
    Ok(jac)
}

/// `Tr{J I⁻¹ Jᵀ}`.
pub fn crlb_trace_from_parts(jac: &DMatrix<f64>, fisher: &DMatrix<f64>) -> Result<f64> {
    let (lo, hi) = matops::eigen_range(fisher);
    if !(hi > 0.0) || !(lo > FISHER_RATIO_FLOOR * hi) {
        return Err(Error::SingularFisher {
            ratio: if hi > 0.0 { lo / hi } else { 0.0 },
        });
    }
    let chol = fisher
        .clone()
        .cholesky()
        .ok_or(Error::SingularFisher { ratio: lo / hi })?;
    let x = chol.solve(&jac.transpose());
    Ok((jac * x).trace())
}

/// Monte Carlo CRLB trace at each horizon in `horizons`, sharing the
/// Jacobian.
pub fn crlb_traces(
    model: &SystemModel,
    cost: &CostSpec,
    policy: &Policy,
    horizons: &[usize],
    runs: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let p_star = solve_dare(
        model.a(),
        model.b(),
        cost,
        cost.q(),
        DareOptions {
            tol: 1e-14,
            max_iter: 1_000_000,
        },
    )?
    .p;
    let jac = riccati_jacobian(model, cost, &p_star)?;
    horizons
        .iter()
        .map(|&t| crlb_trace_from_parts(&jac, &fisher_information(model, policy, t, runs, seed)?))
        .collect()
}

/// Monte Carlo CRLB trace for `horizon` transitions.
pub fn estimate_crlb_trace(
    model: &SystemModel,
    cost: &CostSpec,
    policy: &Policy,
    horizon: usize,
    runs: usize,
    seed: u64,
) -> Result<f64> {
    Ok(crlb_traces(model, cost, policy, &[horizon], runs, seed)?[0])
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    #[test]
    fn sigma_columns_of_jacobian_vanish() {
        let (model, cost) = crate::bench::config::preset("hagen1998").unwrap();
        let p = solve_dare(model.a(), model.b(), &cost, cost.q(), DareOptions::default())
            .unwrap()
            .p;
        let jac = riccati_jacobian(&model, &cost, &p).unwrap();
        assert_eq!(jac.shape(), (3, 9));
        for j in 6..9 {
            assert!(jac.column(j).iter().all(|v| *v == 0.0));
        }
        assert!(jac.column(0).norm() > 0.0);
    }

    #[test]
    fn pack_round_trip() {
        let layout = Layout { n: 2, m: 1 };
        let a = dmatrix![1.0, 2.0; 3.0, 4.0];
        let b = dmatrix![5.0; 6.0];
        let s = dmatrix![7.0, 8.0; 8.0, 9.0];
        let v = layout.pack(&a, &b, &s);
        assert_eq!(v.as_slice(), &[1.0, 3.0, 2.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0]);
        assert_eq!(layout.unpack(&v), (a, b, s));
    }

    #[test]
    fn scalar_fisher_matches_closed_form() {
        // For x' = a x + b u + w with u ~ N(0, 1), x₀ = 0, the Fisher entry of
        // b is E[Σ u²]/σ² = T/σ².
        let model = SystemModel::new(dmatrix![0.5], dmatrix![1.0], dmatrix![0.1]).unwrap();
        let policy = Policy::RandomGaussian { cov: dmatrix![1.0] };
        let f = fisher_information(&model, &policy, 200, 400, 3).unwrap();
        let expect = 200.0 / 0.1;
        assert!((f[(1, 1)] - expect).abs() < 0.25 * expect, "{}", f[(1, 1)]);
    }
}
