//! Linear Gaussian plant `x_{t+1} = A x_t + B u_t + w_t`, `w_t ~ N(0, Σ)`,
//! with the two input policies used in the experiments.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::matops::{self, discrete_lyapunov, gauss_solve, psd_sqrt, PdMatrix};

/// Plant matrices and process-noise covariance.
#[derive(Debug, Clone)]
pub struct SystemModel {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    sigma: DMatrix<f64>,
    noise_factor: DMatrix<f64>,
}

impl SystemModel {
    /// Validates shapes, nonsingularity of `A` and positive definiteness of `Σ`.
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, sigma: DMatrix<f64>) -> Result<Self> {
        let sigma = PdMatrix::new(sigma)?.into_inner();
        let model = Self::with_psd_noise(a, b, sigma)?;
        let n = model.n_states();
        gauss_solve(&model.a, &DVector::zeros(n)).map_err(|_| {
            Error::InvalidParameter("state matrix A must be nonsingular".into())
        })?;
        Ok(model)
    }

    /// Accepts a positive semidefinite (possibly zero) `Σ` and a singular `A`.
    /// Used for noise-free and degenerate experiments.
    pub fn with_psd_noise(a: DMatrix<f64>, b: DMatrix<f64>, sigma: DMatrix<f64>) -> Result<Self> {
        let n = matops::check_square(&a, "A")?;
        if b.nrows() != n || sigma.shape() != (n, n) {
            return Err(Error::Dimension(format!(
                "A is {n}x{n} but B is {}x{} and Σ is {}x{}",
                b.nrows(),
                b.ncols(),
                sigma.nrows(),
                sigma.ncols()
            )));
        }
        let noise_factor = match sigma.clone().cholesky() {
            Some(ch) => ch.l(),
            None => psd_sqrt(&sigma)?,
        };
        Ok(Self {
            a,
            b,
            sigma,
            noise_factor,
        })
    }

    /// Plant without process noise.
    pub fn noise_free(a: DMatrix<f64>, b: DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        Self::with_psd_noise(a, b, DMatrix::zeros(n, n))
    }

    /// Random plant with spectral radius in `[0.3, 0.9]`, generic `B`, and
    /// `Σ = 0.01·I`.
    pub fn random_stable(n: usize, m: usize, rng: &mut impl Rng) -> Result<Self> {
        loop {
            let a = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
            let radius = a
                .complex_eigenvalues()
                .iter()
                .fold(0.0_f64, |acc, z| acc.max(z.norm()));
            if radius < 1e-3 {
                continue;
            }
            let target = rng.random_range(0.3..0.9);
            let a = a * (target / radius);
            let b = DMatrix::from_fn(n, m, |_, _| rng.sample::<f64, _>(StandardNormal));
            if let Ok(model) = Self::new(a, b, DMatrix::identity(n, n) * 0.01) {
                return Ok(model);
            }
        }
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    pub fn n_states(&self) -> usize {
        self.a.nrows()
    }

    pub fn n_inputs(&self) -> usize {
        self.b.ncols()
    }

    /// `A x + B u`.
    pub fn mean_next(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        &self.a * x + &self.b * u
    }

    /// Draws `w ~ N(0, Σ)`.
    pub fn draw_noise(&self, rng: &mut impl Rng) -> DVector<f64> {
        let z = DVector::from_fn(self.n_states(), |_, _| rng.sample::<f64, _>(StandardNormal));
        &self.noise_factor * z
    }
}

/// States `x₀ … x_T` and inputs `u₀ … u_{T−1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    states: Vec<DVector<f64>>,
    inputs: Vec<DVector<f64>>,
}

impl Trajectory {
    pub fn new(x0: DVector<f64>) -> Self {
        Self {
            states: vec![x0],
            inputs: Vec::new(),
        }
    }

    pub fn from_parts(states: Vec<DVector<f64>>, inputs: Vec<DVector<f64>>) -> Result<Self> {
        if states.len() != inputs.len() + 1 {
            return Err(Error::Dimension(format!(
                "{} states for {} inputs",
                states.len(),
                inputs.len()
            )));
        }
        let n = states[0].len();
        let m = inputs.first().map_or(0, |u| u.len());
        if states.iter().any(|x| x.len() != n) || inputs.iter().any(|u| u.len() != m) {
            return Err(Error::Dimension("ragged trajectory".into()));
        }
        Ok(Self { states, inputs })
    }

    pub fn push(&mut self, u: DVector<f64>, x_next: DVector<f64>) {
        self.inputs.push(u);
        self.states.push(x_next);
    }

    /// Number of transitions.
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn states(&self) -> &[DVector<f64>] {
        &self.states
    }

    pub fn inputs(&self) -> &[DVector<f64>] {
        &self.inputs
    }

    pub fn n_states(&self) -> usize {
        self.states[0].len()
    }

    pub fn n_inputs(&self) -> usize {
        self.inputs.first().map_or(0, |u| u.len())
    }

    /// `ξ_t = [x_t; u_t]`.
    pub fn xi(&self, t: usize) -> DVector<f64> {
        let (x, u) = (&self.states[t], &self.inputs[t]);
        let mut out = DVector::zeros(x.len() + u.len());
        out.rows_mut(0, x.len()).copy_from(x);
        out.rows_mut(x.len(), u.len()).copy_from(u);
        out
    }

    /// `(ξ_t, x_{t+1})` pairs.
    pub fn transitions(&self) -> impl Iterator<Item = (DVector<f64>, &DVector<f64>)> + '_ {
        (0..self.len()).map(move |t| (self.xi(t), &self.states[t + 1]))
    }

    /// First `t` transitions.
    pub fn prefix(&self, t: usize) -> Trajectory {
        Trajectory {
            states: self.states[..=t].to_vec(),
            inputs: self.inputs[..t].to_vec(),
        }
    }

    /// CSV with header `t,x_1..x_N,u_1..u_M`; the final row has empty input
    /// fields.
    pub fn to_csv(&self) -> String {
        let (n, m) = (self.n_states(), self.n_inputs());
        let mut s = String::from("t");
        for i in 1..=n {
            let _ = write!(s, ",x_{i}");
        }
        for j in 1..=m {
            let _ = write!(s, ",u_{j}");
        }
        s.push('\n');
        for (t, x) in self.states.iter().enumerate() {
            let _ = write!(s, "{t}");
            for v in x.iter() {
                let _ = write!(s, ",{v:e}");
            }
            for j in 0..m {
                match self.inputs.get(t) {
                    Some(u) => {
                        let _ = write!(s, ",{:e}", u[j]);
                    }
                    None => s.push(','),
                }
            }
            s.push('\n');
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or(Error::Parse {
            line: 1,
            message: "empty trajectory file".into(),
        })?;
        let cols: Vec<&str> = header.split(',').map(str::trim).collect();
        let n = cols.iter().filter(|c| c.starts_with("x_")).count();
        let m = cols.iter().filter(|c| c.starts_with("u_")).count();
        if cols.first() != Some(&"t") || cols.len() != 1 + n + m || n == 0 {
            return Err(Error::Parse {
                line: 1,
                message: format!("unexpected header `{header}`"),
            });
        }
        let mut states = Vec::new();
        let mut inputs = Vec::new();
        let mut ended = false;
        for (i, line) in lines {
            let line_no = i + 1;
            if ended {
                return Err(Error::Parse {
                    line: line_no,
                    message: "row after the final (input-free) row".into(),
                });
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != 1 + n + m {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("expected {} fields, found {}", 1 + n + m, fields.len()),
                });
            }
            let num = |s: &str| {
                s.parse::<f64>().map_err(|e| Error::Parse {
                    line: line_no,
                    message: format!("`{s}`: {e}"),
                })
            };
            let x = fields[1..=n].iter().map(|s| num(s)).collect::<Result<Vec<_>>>()?;
            states.push(DVector::from_vec(x));
            if fields[n + 1..].iter().all(|s| s.is_empty()) {
                ended = true;
            } else {
                let u = fields[n + 1..]
                    .iter()
                    .map(|s| num(s))
                    .collect::<Result<Vec<_>>>()?;
                inputs.push(DVector::from_vec(u));
            }
        }
        if !ended {
            return Err(Error::Parse {
                line: text.lines().count(),
                message: "missing final state row".into(),
            });
        }
        Self::from_parts(states, inputs)
    }
}

/// Input policy.
#[derive(Debug, Clone)]
pub enum Policy {
    /// `u_t ~ N(0, cov)`.
    RandomGaussian { cov: DMatrix<f64> },
    /// `u_t = −L x_t`.
    LinearFeedback { gain: DMatrix<f64> },
    /// Random inputs for `t < switch_at`, then `u_t = −L̂_t x_t` with the
    /// gain supplied live by a [`GainProvider`].
    Switched { cov: DMatrix<f64>, switch_at: usize },
}

/// Supplies the live feedback gain of a switched policy and sees every
/// transition as it happens.
pub trait GainProvider {
    fn observe(&mut self, xi: &DVector<f64>, x_next: &DVector<f64>) -> Result<()>;

    /// Current gain estimate, if one exists yet.
    fn current_gain(&self) -> Option<&DMatrix<f64>>;
}

/// Provider that never has a gain; a switched policy then stays random.
#[derive(Debug, Default, Clone, Copy)]
pub struct NoFeedback;

impl GainProvider for NoFeedback {
    fn observe(&mut self, _: &DVector<f64>, _: &DVector<f64>) -> Result<()> {
        Ok(())
    }

    fn current_gain(&self) -> Option<&DMatrix<f64>> {
        None
    }
}

/// Generator for run `run_index` of an experiment seeded with `base_seed`.
/// Each run gets its own ChaCha stream, so results do not depend on the
/// order runs are executed in.
pub fn run_rng(base_seed: u64, run_index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(base_seed);
    rng.set_stream(run_index);
    rng
}

/// One transition `A x + B u + w`.
pub fn step(
    x: &DVector<f64>,
    u: &DVector<f64>,
    model: &SystemModel,
    rng: &mut impl Rng,
) -> DVector<f64> {
    model.mean_next(x, u) + model.draw_noise(rng)
}

/// `L C Lᵀ` where `C` is the stationary state covariance under `u = −Lx`.
pub fn exploration_covariance(l: &DMatrix<f64>, model: &SystemModel) -> Result<DMatrix<f64>> {
    if l.shape() != (model.n_inputs(), model.n_states()) {
        return Err(Error::Dimension("gain shape does not match the plant".into()));
    }
    let closed = model.a() - model.b() * l;
    let c = discrete_lyapunov(&closed, model.sigma())?;
    Ok(matops::symmetrize(&(l * c * l.transpose())))
}

/// Draws Gaussian inputs with a fixed covariance.
#[derive(Debug, Clone)]
struct InputSampler {
    factor: DMatrix<f64>,
}

impl InputSampler {
    fn new(cov: &DMatrix<f64>) -> Result<Self> {
        Ok(Self {
            factor: psd_sqrt(cov)?,
        })
    }

    fn draw(&self, rng: &mut impl Rng) -> DVector<f64> {
        let z = DVector::from_fn(self.factor.nrows(), |_, _| rng.sample::<f64, _>(StandardNormal));
        &self.factor * z
    }
}

/// Simulates `horizon` transitions from `x₀ = 0`.
///
/// The provider observes every transition. Under [`Policy::Switched`] it is
/// asked for its gain at each `t ≥ switch_at`; while it has none the input
/// stays random.
pub fn simulate(
    model: &SystemModel,
    policy: &Policy,
    horizon: usize,
    rng: &mut impl Rng,
    provider: &mut dyn GainProvider,
) -> Result<Trajectory> {
    if horizon == 0 {
        return Err(Error::InvalidParameter("horizon must be at least 1".into()));
    }
    let (n, m) = (model.n_states(), model.n_inputs());
    let sampler = match policy {
        Policy::RandomGaussian { cov } | Policy::Switched { cov, .. } => {
            if cov.shape() != (m, m) {
                return Err(Error::Dimension("input covariance has wrong size".into()));
            }
            Some(InputSampler::new(cov)?)
        }
        Policy::LinearFeedback { gain } => {
            if gain.shape() != (m, n) {
                return Err(Error::Dimension("feedback gain has wrong size".into()));
            }
            None
        }
    };

    let mut traj = Trajectory::new(DVector::zeros(n));
    traj.states.reserve(horizon);
    traj.inputs.reserve(horizon);
    let mut x = DVector::zeros(n);
    for t in 0..horizon {
        let feedback = match policy {
            Policy::RandomGaussian { .. } => None,
            Policy::LinearFeedback { gain } => Some(gain),
            Policy::Switched { switch_at, .. } if t >= *switch_at => provider.current_gain(),
            Policy::Switched { .. } => None,
        };
        let u = match (feedback, &sampler) {
            (Some(l), _) => {
                if l.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite("feedback gain"));
                }
                -(l * &x)
            }
            (None, Some(s)) => s.draw(rng),
            (None, None) => unreachable!("linear feedback always has a gain"),
        };
        let x_next = step(&x, &u, model, rng);
        if x_next.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("state trajectory"));
        }
        let mut xi = DVector::zeros(n + m);
        xi.rows_mut(0, n).copy_from(&x);
        xi.rows_mut(n, m).copy_from(&u);
        provider.observe(&xi, &x_next)?;
        traj.push(u, x_next.clone());
        x = x_next;
    }
    Ok(traj)
}

/// [`simulate`] with a fresh generator and no feedback provider.
pub fn simulate_seeded(
    model: &SystemModel,
    policy: &Policy,
    horizon: usize,
    seed: u64,
) -> Result<Trajectory> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    simulate(model, policy, horizon, &mut rng, &mut NoFeedback)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    fn scalar_model(a: f64, b: f64, s: f64) -> SystemModel {
        SystemModel::new(dmatrix![a], dmatrix![b], dmatrix![s]).unwrap()
    }

    #[test]
    fn noise_free_step_is_deterministic() {
        let model = SystemModel::noise_free(dmatrix![0.5, 0.1; 0.0, 0.2], dmatrix![1.0; 2.0])
            .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = DVector::from_vec(vec![1.0, -1.0]);
        let u = DVector::from_vec(vec![0.5]);
        let next = step(&x, &u, &model, &mut rng);
        assert_eq!(next, model.a() * &x + model.b() * &u);
    }

    #[test]
    fn rejects_singular_a_and_indefinite_sigma() {
        assert!(SystemModel::new(dmatrix![0.0], dmatrix![1.0], dmatrix![1.0]).is_err());
        assert!(SystemModel::new(dmatrix![1.0], dmatrix![1.0], dmatrix![-1.0]).is_err());
        assert!(SystemModel::new(dmatrix![1.0], dmatrix![1.0; 1.0], dmatrix![1.0]).is_err());
    }

    #[test]
    fn exploration_covariance_by_hand() {
        let model = scalar_model(0.5, 1.0, 1.0);
        let cov = exploration_covariance(&dmatrix![0.25], &model).unwrap();
        let expect = 0.25 * 0.25 * 16.0 / 15.0;
        assert!((cov[(0, 0)] - expect).abs() < 1e-14);
        let zero = exploration_covariance(&dmatrix![0.0], &model).unwrap();
        assert_eq!(zero[(0, 0)], 0.0);
    }

    #[test]
    fn unstable_closed_loop_is_reported() {
        let model = scalar_model(2.0, 1.0, 1.0);
        assert!(matches!(
            exploration_covariance(&dmatrix![0.0], &model),
            Err(Error::Unstable(_))
        ));
    }

    #[test]
    fn single_transition_and_replay() {
        let model = scalar_model(0.9, 1.0, 0.1);
        let policy = Policy::RandomGaussian { cov: dmatrix![1.0] };
        let t1 = simulate_seeded(&model, &policy, 1, 3).unwrap();
        assert_eq!(t1.len(), 1);
        assert_eq!(t1.states().len(), 2);
        let a = simulate_seeded(&model, &policy, 200, 42).unwrap();
        let b = simulate_seeded(&model, &policy, 200, 42).unwrap();
        assert_eq!(a, b);
        let c = simulate_seeded(&model, &policy, 200, 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn run_streams_are_distinct_and_reproducible() {
        let x: f64 = run_rng(5, 0).random();
        let y: f64 = run_rng(5, 1).random();
        let z: f64 = run_rng(5, 0).random();
        assert_ne!(x, y);
        assert_eq!(x, z);
    }

    struct FixedGain(DMatrix<f64>, usize);

    impl GainProvider for FixedGain {
        fn observe(&mut self, _: &DVector<f64>, _: &DVector<f64>) -> Result<()> {
            self.1 += 1;
            Ok(())
        }
        fn current_gain(&self) -> Option<&DMatrix<f64>> {
            Some(&self.0)
        }
    }

    #[test]
    fn switched_policy_uses_provider_after_switch() {
        let model = scalar_model(0.9, 1.0, 0.1);
        let policy = Policy::Switched {
            cov: dmatrix![1.0],
            switch_at: 5,
        };
        let mut provider = FixedGain(dmatrix![0.4], 0);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let traj = simulate(&model, &policy, 20, &mut rng, &mut provider).unwrap();
        assert_eq!(provider.1, 20);
        for t in 5..20 {
            assert!((traj.inputs()[t][0] + 0.4 * traj.states()[t][0]).abs() < 1e-15);
        }
        let mut bad = FixedGain(dmatrix![f64::NAN], 0);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        assert!(matches!(
            simulate(&model, &policy, 20, &mut rng, &mut bad),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn csv_round_trip() {
        let model = SystemModel::new(
            dmatrix![-0.6, -0.4; 1.0, 0.0],
            dmatrix![0.0; 1.0],
            DMatrix::identity(2, 2) * 0.01,
        )
        .unwrap();
        let policy = Policy::RandomGaussian { cov: dmatrix![0.3] };
        let traj = simulate_seeded(&model, &policy, 25, 1).unwrap();
        let csv = traj.to_csv();
        assert!(csv.starts_with("t,x_1,x_2,u_1\n"));
        assert_eq!(Trajectory::from_csv(&csv).unwrap(), traj);
        assert!(Trajectory::from_csv("t,x_1\n0,1\n1,2\n").is_err());
    }
}
