//! Generalized chi-squared variables `y = xᵀAx + bᵀx + c`, `x ~ N(0, I)`,
//! and the law of the Q-learning regression noise.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::matops::{self, psd_sqrt};
use crate::sim::SystemModel;

/// Parameters `(A, b, c)`. `A` must be symmetric PSD; the zero matrix is
/// allowed so degenerate cases can be represented.
#[derive(Debug, Clone, PartialEq)]
pub struct GChi2Params {
    a: DMatrix<f64>,
    b: DVector<f64>,
    c: f64,
}

impl GChi2Params {
    pub fn new(a: DMatrix<f64>, b: DVector<f64>, c: f64) -> Result<Self> {
        let n = matops::check_square(&a, "A")?;
        if b.len() != n {
            return Err(Error::Dimension(format!("A is {n}x{n} but b has {}", b.len())));
        }
        matops::check_symmetric(&a)?;
        psd_sqrt(&a)?;
        Ok(Self {
            a: matops::symmetrize(&a),
            b,
            c,
        })
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DVector<f64> {
        &self.b
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn dim(&self) -> usize {
        self.b.len()
    }

    /// `(Tr A + c, 2 Tr A² + bᵀb)`.
    pub fn moments(&self) -> (f64, f64) {
        let mean = self.a.trace() + self.c;
        let var = 2.0 * self.a.component_mul(&self.a).sum() + self.b.dot(&self.b);
        (mean, var)
    }

    pub fn sample(&self, rng: &mut impl Rng) -> f64 {
        let x = DVector::from_fn(self.dim(), |_, _| rng.sample::<f64, _>(StandardNormal));
        let ax = &self.a * &x;
        x.dot(&ax) + self.b.dot(&x) + self.c
    }
}

/// Law of `ε = wᵀPw + 2(Ax+Bu)ᵀPw − Tr{PΣ}` for `w ~ N(0, Σ)`:
/// `(Σ^{1/2}PΣ^{1/2}, 2Σ^{1/2}P(Ax+Bu), −Tr{ΣP})`.
pub fn epsilon_params(
    model: &SystemModel,
    p: &DMatrix<f64>,
    xi: &DVector<f64>,
) -> Result<GChi2Params> {
    let (n, m) = (model.n_states(), model.n_inputs());
    if p.shape() != (n, n) || xi.len() != n + m {
        return Err(Error::Dimension("epsilon_params operand sizes".into()));
    }
    let s = psd_sqrt(model.sigma())?;
    let mean_next = model.mean_next(&xi.rows(0, n).into_owned(), &xi.rows(n, m).into_owned());
    let a = matops::symmetrize(&(&s * p * &s));
    let b = (&s * p * mean_next) * 2.0;
    let c = -(model.sigma() * p).trace();
    GChi2Params::new(a, b, c)
}

/// `2 Tr{PΣPΣ} + 4 mᵀPΣPm` with `m = Ax + Bu`; matches the variance of
/// [`epsilon_params`].
pub fn epsilon_variance(model: &SystemModel, p: &DMatrix<f64>, xi: &DVector<f64>) -> f64 {
    let n = model.n_states();
    let ps = p * model.sigma();
    let mean_next = model.mean_next(&xi.rows(0, n).into_owned(), &xi.rows(n, xi.len() - n).into_owned());
    let quad = mean_next.dot(&(&ps * p * &mean_next));
    2.0 * (&ps * &ps).trace() + 4.0 * quad
}

/// One realization of `ε` from a fresh plant noise draw.
pub fn simulate_epsilon(
    model: &SystemModel,
    p: &DMatrix<f64>,
    xi: &DVector<f64>,
    rng: &mut impl Rng,
) -> f64 {
    let n = model.n_states();
    let w = model.draw_noise(rng);
    let mean_next = model.mean_next(&xi.rows(0, n).into_owned(), &xi.rows(n, xi.len() - n).into_owned());
    let pw = p * &w;
    w.dot(&pw) + 2.0 * mean_next.dot(&pw) - (model.sigma() * p).trace()
}

/// Two-sample Kolmogorov–Smirnov statistic and its asymptotic p-value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
}

/// Sorts both samples in place.
pub fn ks_two_sample(x: &mut [f64], y: &mut [f64]) -> Result<KsResult> {
    if x.is_empty() || y.is_empty() {
        return Err(Error::InvalidParameter("KS test needs two non-empty samples".into()));
    }
    if x.iter().chain(y.iter()).any(|v| v.is_nan()) {
        return Err(Error::NonFinite("KS sample"));
    }
    x.sort_by(f64::total_cmp);
    y.sort_by(f64::total_cmp);
    let (nx, ny) = (x.len() as f64, y.len() as f64);
    let (mut i, mut j, mut d) = (0, 0, 0.0_f64);
    while i < x.len() && j < y.len() {
        let v = x[i].min(y[j]);
        while i < x.len() && x[i] <= v {
            i += 1;
        }
        while j < y.len() && y[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / nx - j as f64 / ny).abs());
    }
    let ne = nx * ny / (nx + ny);
    let lambda = (ne.sqrt() + 0.12 + 0.11 / ne.sqrt()) * d;
    Ok(KsResult {
        statistic: d,
        p_value: kolmogorov_q(lambda),
    })
}

/// `Q_KS(λ) = 2 Σ_{k≥1} (−1)^{k−1} e^{−2k²λ²}`.
fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for k in 1..=100 {
        let term = (-2.0 * (k * k) as f64 * lambda * lambda).exp();
        sum += sign * term;
        if term < 1e-16 {
            break;
        }
        sign = -sign;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}
