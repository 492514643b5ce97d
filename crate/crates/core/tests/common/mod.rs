#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use sflqg::matops::{sym_vec, PdMatrix};
use sflqg::qlearn::{QlAccumulator, QlState, Theta};
use sflqg::riccati::CostSpec;
use sflqg::sim::{SystemModel, Trajectory};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_matrix(r: usize, c: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.sample::<f64, _>(StandardNormal))
}

pub fn gaussian_vector(n: usize, rng: &mut impl Rng) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal))
}

pub fn random_symmetric(n: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    let g = gaussian_matrix(n, n, rng);
    (&g + g.transpose()) * 0.5
}

/// `GGᵀ/n + floor·I`, conditioned well enough for 1e−9 checks.
pub fn random_pd(n: usize, rng: &mut impl Rng) -> PdMatrix {
    let g = gaussian_matrix(n, n, rng);
    let floor = rng.random_range(0.05..1.0);
    PdMatrix::new(&g * g.transpose() / n as f64 + DMatrix::identity(n, n) * floor).unwrap()
}

/// Plant with spectral radius in `[0.3, 1.4]`, Gaussian `B` and PD noise.
/// Generic `B` makes the pair controllable.
pub fn random_plant(n: usize, m: usize, rng: &mut impl Rng) -> SystemModel {
    loop {
        let a = gaussian_matrix(n, n, rng);
        let radius = a
            .complex_eigenvalues()
            .iter()
            .fold(0.0_f64, |acc, z| acc.max(z.norm()));
        if radius < 1e-3 {
            continue;
        }
        let a = a * (rng.random_range(0.3..1.4) / radius);
        let b = gaussian_matrix(n, m, rng);
        let sigma = random_pd(n, rng).into_inner() * 0.01;
        if let Ok(model) = SystemModel::new(a, b, sigma) {
            return model;
        }
    }
}

pub fn random_cost(n: usize, m: usize, rng: &mut impl Rng) -> CostSpec {
    let gamma = if rng.random_bool(0.5) {
        1.0
    } else {
        rng.random_range(0.8..1.0)
    };
    CostSpec::new(random_pd(n, rng), random_pd(m, rng), gamma).unwrap()
}

pub fn hagen() -> (SystemModel, CostSpec) {
    sflqg::bench::config::preset("hagen1998").unwrap()
}

pub fn rel_err(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
}

pub fn rel_err_vec(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
}

/// `[A B]ᵀ` stacked as in the RLS estimate.
pub fn stacked_truth(model: &SystemModel) -> DMatrix<f64> {
    let (n, m) = (model.n_states(), model.n_inputs());
    let mut t = DMatrix::zeros(n + m, n);
    t.view_mut((0, 0), (n, n)).copy_from(&model.a().transpose());
    t.view_mut((n, 0), (m, n)).copy_from(&model.b().transpose());
    t
}

/// Largest dimensionless central-difference derivative of the negative
/// log-likelihood at `(a, b, sigma)`: `max_i |∂ℓ/∂θ_i|·s_i / (1 + |ℓ|)`
/// where `s_i` is the largest magnitude in `θ_i`'s block. `Σ` is perturbed
/// symmetrically.
pub fn nll_gradient_scale(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    sigma: &DMatrix<f64>,
    stats: &sflqg::sysid::SufficientStats,
) -> f64 {
    use sflqg::sysid::neg_loglik_stats;
    let f = |a: &DMatrix<f64>, b: &DMatrix<f64>, s: &DMatrix<f64>| {
        neg_loglik_stats(a, b, s, stats).unwrap()
    };
    let base = f(a, b, sigma);
    let block_scale = |m: &DMatrix<f64>| m.amax().max(1e-300);
    let (sa, sb, ss) = (block_scale(a), block_scale(b), block_scale(sigma));
    let mut worst = 0.0_f64;
    let mut probe = |d: &dyn Fn(f64) -> f64, s: f64| {
        let h = 1e-6 * s;
        let g = (d(h) - d(-h)) / (2.0 * h);
        worst = worst.max(g.abs() * s / (1.0 + base.abs()));
    };
    for i in 0..a.len() {
        probe(
            &|h| {
                let mut x = a.clone();
                x[i] += h;
                f(&x, b, sigma)
            },
            sa,
        );
    }
    for i in 0..b.len() {
        probe(
            &|h| {
                let mut x = b.clone();
                x[i] += h;
                f(a, &x, sigma)
            },
            sb,
        );
    }
    let n = sigma.nrows();
    for j in 0..n {
        for i in 0..=j {
            probe(
                &|h| {
                    let mut x = sigma.clone();
                    x[(i, j)] += h;
                    if i != j {
                        x[(j, i)] += h;
                    }
                    f(a, b, &x)
                },
                ss,
            );
        }
    }
    worst
}

/// Positive root of the scalar Riccati equation after clearing the
/// denominator: `γb²p² + (r(1 − γa²) − γqb²)p − qr = 0`.
pub fn scalar_root(a: f64, b: f64, q: f64, r: f64, g: f64) -> f64 {
    let qa = g * b * b;
    let qb = r * (1.0 - g * a * a) - g * q * b * b;
    let qc = q * r;
    let disc = (qb * qb + 4.0 * qa * qc).sqrt();
    if qb > 0.0 {
        2.0 * qc / (qb + disc)
    } else {
        (-qb + disc) / (2.0 * qa)
    }
}

/// Largest relative deviations `(M vs U⁻¹, θ vs affine form)` over every
/// step after initialization.
pub fn recursion_audit(traj: &Trajectory, spec: &CostSpec) -> (f64, f64) {
    let (n, m) = (spec.n_states(), spec.n_inputs());
    let mut acc = QlAccumulator::new(n, m);
    let mut state: Option<QlState> = None;
    let (mut worst_m, mut worst_theta) = (0.0_f64, 0.0_f64);
    for (xi, next) in traj.transitions() {
        let p_prev = match state.as_mut() {
            None => {
                acc.push(&xi, next, spec);
                if acc.is_well_posed() {
                    state = Some(QlState::from_accumulator(&acc, &Theta::initial(spec), spec).unwrap());
                }
                continue;
            }
            Some(s) => {
                let p = s.p_hat().clone();
                s.update(&xi, next, spec).unwrap();
                p
            }
        };
        acc.push(&xi, next, spec);
        let s = state.as_ref().unwrap();
        let (u, a, b) = acc.parts();
        let u_inv = u.clone().cholesky().unwrap().inverse();
        worst_m = worst_m.max(rel_err(s.inv_gram(), &u_inv));
        let direct = &u_inv * (a + b * sym_vec(&p_prev).unwrap().as_vector());
        worst_theta = worst_theta.max(rel_err_vec(s.theta_vector(), &direct));
    }
    assert!(state.is_some(), "never initialized");
    (worst_m, worst_theta)
}
