//! Per-sample-time multiplication counts for both estimators.
//!
//! Two views are provided. The closed forms reproduce the itemized cost
//! models in exact rational arithmetic (Gaussian elimination contributes
//! thirds). The runtime counter tallies the multiplications and divisions
//! the kernels in this crate actually perform, so the closed forms can be
//! audited against real code.

use std::cell::Cell;
use std::fmt;

use nalgebra::DVector;
use num_rational::Ratio;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;

pub type Rational = Ratio<i64>;

thread_local! {
    static COUNTER: Cell<u64> = const { Cell::new(0) };
}

/// Adds `n` multiplications to the current thread's counter.
#[inline]
pub(crate) fn tally(n: u64) {
    COUNTER.with(|c| c.set(c.get().wrapping_add(n)));
}

/// Current value of this thread's counter.
pub fn counter_value() -> u64 {
    COUNTER.with(|c| c.get())
}

/// Runs `f` and returns its result together with the number of
/// multiplications it performed on this thread.
pub fn count_multiplies<R>(f: impl FnOnce() -> R) -> (R, u64) {
    let before = counter_value();
    let out = f();
    (out, counter_value().wrapping_sub(before))
}

fn r(n: i64) -> Rational {
    Ratio::from_integer(n)
}

/// `GAUSS(n) = (4n³ + 9n² − 5n)/6`.
pub fn gauss_cost(n: i64) -> Rational {
    Ratio::new(4 * n * n * n + 9 * n * n - 5 * n, 6)
}

/// `RLLS(a, b) = a·b·(3a + 4)` for an `a×b` unknown with `a` regressors.
pub fn rlls_cost(a: i64, b: i64) -> Rational {
    r(a * b * (3 * a + 4))
}

/// One Riccati iteration with `n` states and `m` inputs.
pub fn dare_cost(n: i64, m: i64) -> Rational {
    r(2 * n * n * n + n * n + 3 * n * n * m + n * m * m + m * m) + r(n) * gauss_cost(m)
}

/// Number of Q-learning parameters, `(n+m)(n+m+1)/2 + 1`.
pub fn qlearn_dim(n: i64, m: i64) -> i64 {
    (n + m) * (n + m + 1) / 2 + 1
}

/// Itemized multiplication count.
#[derive(Debug, Clone, PartialEq)]
pub struct CostBreakdown {
    pub items: Vec<(&'static str, Rational)>,
    pub total: Rational,
}

impl CostBreakdown {
    fn from_items(items: Vec<(&'static str, Rational)>) -> Self {
        let total = items.iter().fold(r(0), |acc, (_, v)| acc + v);
        Self { items, total }
    }

    pub fn total_f64(&self) -> f64 {
        ratio_to_f64(self.total)
    }
}

impl fmt::Display for CostBreakdown {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (label, v) in &self.items {
            writeln!(f, "{label:<40} {:>14}", render_2dp(*v))?;
        }
        write!(f, "{:<40} {:>14}", "total", render_2dp(self.total))
    }
}

/// Identification + Riccati design, per sample time.
pub fn classic_cost(n: i64, m: i64) -> CostBreakdown {
    CostBreakdown::from_items(vec![
        ("RLS update RLLS(N+M,N)", rlls_cost(n + m, n)),
        ("Riccati iteration DARE(N,M)", dare_cost(n, m)),
        (
            "gain 2N²M+NM(1+M)+N·GAUSS(M)",
            r(2 * n * n * m + n * m * (1 + m)) + r(n) * gauss_cost(m),
        ),
    ])
}

/// Recursive Q-learning, per sample time.
pub fn qlearn_cost(n: i64, m: i64) -> CostBreakdown {
    let d = qlearn_dim(n, m);
    let half = n * (n + 1) / 2;
    CostBreakdown::from_items(vec![
        ("feature phi", r(d - 1)),
        ("stage cost xi'Δxi", r(n * n + n + m * m + m)),
        ("x⊗̃x of next state", r(half)),
        ("M_{T-1}·phi", r(d)),
        ("inverse Gram M_T", r(d)),
        ("gain vector", r(2 * d)),
        ("I − k·phiᵀ", r(d * d)),
        ("affine offset", r(d * (d + 1))),
        ("affine slope", r(d * (d + 1) * half)),
        ("P(Λ) extraction", r(n * m * m) + r(n) * gauss_cost(m)),
        ("theta", r(d * half)),
    ])
}

/// One row of the complexity table.
#[derive(Debug, Clone, PartialEq)]
pub struct CostCell {
    pub n: i64,
    pub m: i64,
    pub classic: Rational,
    pub qlearn: Rational,
}

/// Totals of both models on `1..=n_max × 1..=m_max`, row-major in `n`.
pub fn cost_grid(n_max: i64, m_max: i64) -> Vec<CostCell> {
    let mut out = Vec::new();
    for n in 1..=n_max {
        for m in 1..=m_max {
            out.push(CostCell {
                n,
                m,
                classic: classic_cost(n, m).total,
                qlearn: qlearn_cost(n, m).total,
            });
        }
    }
    out
}

/// CSV rendering of [`cost_grid`].
pub fn grid_csv(cells: &[CostCell]) -> String {
    let mut s = String::from("N,M,classic,qlearn\n");
    for c in cells {
        s.push_str(&format!(
            "{},{},{},{}\n",
            c.n,
            c.m,
            render_2dp(c.classic),
            render_2dp(c.qlearn)
        ));
    }
    s
}

pub fn ratio_to_f64(v: Rational) -> f64 {
    *v.numer() as f64 / *v.denom() as f64
}

/// Decimal rendering with two places, rounding halves away from zero.
pub fn render_2dp(v: Rational) -> String {
    let scaled = v * r(100);
    let neg = scaled < r(0);
    let abs = if neg { -scaled } else { scaled };
    let rounded = (abs + Ratio::new(1, 2)).floor().to_integer();
    format!(
        "{}{}.{:02}",
        if neg && rounded != 0 { "-" } else { "" },
        rounded / 100,
        rounded % 100
    )
}

/// Measured multiplications for one update of each online estimator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MeasuredCounts {
    pub classic: u64,
    pub qlearn: u64,
}

/// Runs both estimators on a random `n`-state, `m`-input plant for
/// `traj_len` steps, then counts the multiplications of one more update of
/// each.
pub fn instrumented_count_audit(n: usize, m: usize, traj_len: usize) -> Result<MeasuredCounts> {
    use crate::online::{OnlineEstimator, QLearning, SysIdLqg};
    use crate::riccati::CostSpec;
    use crate::sim::{self, Policy, SystemModel};
    use nalgebra::DMatrix;

    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0000 + (n * 100 + m) as u64);
    let model = SystemModel::random_stable(n, m, &mut rng)?;
    let cost = CostSpec::identity(n, m, 0.99)?;
    let policy = Policy::RandomGaussian {
        cov: DMatrix::identity(m, m),
    };
    let traj = sim::simulate_seeded(&model, &policy, traj_len + 1, 7)?;

    let mut classic = SysIdLqg::new(n, m, cost.clone());
    let mut ql = QLearning::new(n, m, cost);
    for t in 0..traj_len {
        let (xi, next) = (traj.xi(t), traj.states()[t + 1].clone());
        classic.observe(&xi, &next)?;
        ql.observe(&xi, &next)?;
    }
    let xi: DVector<f64> = traj.xi(traj_len);
    let next = traj.states()[traj_len + 1].clone();
    let (res_c, classic_count) = count_multiplies(|| classic.observe(&xi, &next));
    res_c?;
    let (res_q, qlearn_count) = count_multiplies(|| ql.observe(&xi, &next));
    res_q?;
    Ok(MeasuredCounts {
        classic: classic_count,
        qlearn: qlearn_count,
    })
}
