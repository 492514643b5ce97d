//! The two competing online controller estimators behind a common
//! interface: identification + Riccati design, and recursive Q-learning.

use nalgebra::{DMatrix, DVector};

use crate::error::Result;
use crate::qlearn::{QlAccumulator, QlState, Theta};
use crate::riccati::{self, CostSpec};
use crate::sim::GainProvider;
use crate::sysid::{GramAccumulator, RlsState};

/// Sample-by-sample estimator of the optimal `P` and `L`.
pub trait OnlineEstimator {
    /// Absorbs the transition `(ξ_t, x_{t+1})`.
    fn observe(&mut self, xi: &DVector<f64>, x_next: &DVector<f64>) -> Result<()>;

    /// Current `P̂`; `None` until enough data has been seen.
    fn p_hat(&self) -> Option<&DMatrix<f64>>;

    /// Current `L̂`; `None` until enough data has been seen.
    fn gain_hat(&self) -> Option<&DMatrix<f64>>;

    /// Number of transitions observed.
    fn samples(&self) -> usize;
}

impl<E: OnlineEstimator> GainProvider for E {
    fn observe(&mut self, xi: &DVector<f64>, x_next: &DVector<f64>) -> Result<()> {
        OnlineEstimator::observe(self, xi, x_next)
    }

    fn current_gain(&self) -> Option<&DMatrix<f64>> {
        self.gain_hat()
    }
}

#[derive(Debug, Clone)]
enum SysIdPhase {
    Warmup(GramAccumulator),
    Running(RlsState),
}

/// RLS estimate of `[A, B]` followed, each sample, by one Riccati iteration
/// on the current estimate and the resulting gain.
#[derive(Debug, Clone)]
pub struct SysIdLqg {
    spec: CostSpec,
    phase: SysIdPhase,
    p_hat: DMatrix<f64>,
    gain: Option<DMatrix<f64>>,
    samples: usize,
}

impl SysIdLqg {
    pub fn new(n: usize, m: usize, spec: CostSpec) -> Self {
        let p_hat = spec.q().as_matrix().clone();
        Self {
            spec,
            phase: SysIdPhase::Warmup(GramAccumulator::new(n, m)),
            p_hat,
            gain: None,
            samples: 0,
        }
    }

    pub fn rls(&self) -> Option<&RlsState> {
        match &self.phase {
            SysIdPhase::Running(s) => Some(s),
            SysIdPhase::Warmup(_) => None,
        }
    }

    fn design(&mut self) -> Result<()> {
        let SysIdPhase::Running(rls) = &self.phase else {
            return Ok(());
        };
        let (a, b) = (rls.a_hat(), rls.b_hat());
        self.p_hat = riccati::riccati_step(&self.p_hat, &a, &b, &self.spec)?;
        let l = riccati::gain_unchecked(&self.p_hat, &a, &b, &self.spec)?;
        riccati::check_finite(&l, "estimated gain")?;
        self.gain = Some(l);
        Ok(())
    }
}

impl OnlineEstimator for SysIdLqg {
    fn observe(&mut self, xi: &DVector<f64>, x_next: &DVector<f64>) -> Result<()> {
        match &mut self.phase {
            SysIdPhase::Warmup(acc) => {
                acc.push(xi, x_next);
                if acc.is_well_posed() {
                    self.phase = SysIdPhase::Running(RlsState::from_gram(acc)?);
                }
            }
            SysIdPhase::Running(rls) => rls.update(xi, x_next)?,
        }
        self.samples += 1;
        self.design()
    }

    fn p_hat(&self) -> Option<&DMatrix<f64>> {
        self.gain.as_ref().map(|_| &self.p_hat)
    }

    fn gain_hat(&self) -> Option<&DMatrix<f64>> {
        self.gain.as_ref()
    }

    fn samples(&self) -> usize {
        self.samples
    }
}

#[derive(Debug, Clone)]
enum QlPhase {
    Warmup(QlAccumulator),
    Running(QlState),
}

/// Recursive Q-learning started from `Λ₀ = blockdiag(Q, R)`, `η₀ = 0`.
#[derive(Debug, Clone)]
pub struct QLearning {
    spec: CostSpec,
    theta0: Theta,
    phase: QlPhase,
    samples: usize,
}

impl QLearning {
    pub fn new(n: usize, m: usize, spec: CostSpec) -> Self {
        let theta0 = Theta::initial(&spec);
        Self {
            spec,
            theta0,
            phase: QlPhase::Warmup(QlAccumulator::new(n, m)),
            samples: 0,
        }
    }

    pub fn state(&self) -> Option<&QlState> {
        match &self.phase {
            QlPhase::Running(s) => Some(s),
            QlPhase::Warmup(_) => None,
        }
    }
}

impl OnlineEstimator for QLearning {
    fn observe(&mut self, xi: &DVector<f64>, x_next: &DVector<f64>) -> Result<()> {
        match &mut self.phase {
            QlPhase::Warmup(acc) => {
                acc.push(xi, x_next, &self.spec);
                if acc.is_well_posed() {
                    self.phase =
                        QlPhase::Running(QlState::from_accumulator(acc, &self.theta0, &self.spec)?);
                }
            }
            QlPhase::Running(state) => state.update(xi, x_next, &self.spec)?,
        }
        self.samples += 1;
        Ok(())
    }

    fn p_hat(&self) -> Option<&DMatrix<f64>> {
        self.state().map(QlState::p_hat)
    }

    fn gain_hat(&self) -> Option<&DMatrix<f64>> {
        self.state().and_then(QlState::gain_hat)
    }

    fn samples(&self) -> usize {
        self.samples
    }
}
