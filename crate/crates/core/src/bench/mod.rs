//! Monte Carlo accuracy comparison of the two estimators.

pub mod config;
pub mod crlb;
pub mod results;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

pub use config::{ExperimentConfig, InputCov, Method, Schedule, DEFAULT_CHECKPOINTS};
pub use crlb::{crlb_traces, estimate_crlb_trace, fisher_information, riccati_jacobian};
pub use results::{emit_results, format_results, parse_results, AccuracyRecord};

use crate::error::{Error, Result};
use crate::matops::{self, PdMatrix};
use crate::online::{OnlineEstimator, QLearning, SysIdLqg};
use crate::riccati::{gain, solve_dare, DareOptions};
use crate::sim::{self, exploration_covariance, GainProvider, Policy};

/// Largest tolerated share of failed runs per method.
pub const MAX_EXCLUDED_FRACTION: f64 = 0.05;

/// Per-method outcome of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunErrors {
    /// `‖sym_vec(P*) − sym_vec(P̂_T)‖²` at each checkpoint.
    pub sq_err: Vec<f64>,
    /// `‖P̂_T − P*‖_F` at each checkpoint.
    pub frob_err: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub records: Vec<AccuracyRecord>,
    pub p_star: PdMatrix,
    pub runs: usize,
    /// `(method, excluded runs)` for every selected method.
    pub excluded: Vec<(Method, usize)>,
}

/// Wraps an estimator and records its error at each checkpoint.
struct Recorder<'a, E> {
    est: E,
    checkpoints: &'a [usize],
    p_star: &'a DVector<f64>,
    p_star_m: &'a DMatrix<f64>,
    out: RunErrors,
    missing: bool,
}

impl<E: OnlineEstimator> GainProvider for Recorder<'_, E> {
    fn observe(&mut self, xi: &DVector<f64>, x_next: &DVector<f64>) -> Result<()> {
        self.est.observe(xi, x_next)?;
        let t = self.est.samples();
        if self.checkpoints.get(self.out.sq_err.len()) == Some(&t) {
            match self.est.p_hat() {
                Some(p) => {
                    let d = matops::sym_vec_upper(p) - self.p_star;
                    self.out.sq_err.push(d.norm_squared());
                    self.out.frob_err.push((p - self.p_star_m).norm());
                }
                None => {
                    self.missing = true;
                    self.out.sq_err.push(f64::NAN);
                    self.out.frob_err.push(f64::NAN);
                }
            }
        }
        Ok(())
    }

    fn current_gain(&self) -> Option<&DMatrix<f64>> {
        self.est.gain_hat()
    }
}

/// Runs one Monte Carlo replication of `method`. `None` marks a failed run.
fn run_one(
    cfg: &ExperimentConfig,
    method: Method,
    policy: &Policy,
    run: usize,
    p_star: &DVector<f64>,
    p_star_m: &DMatrix<f64>,
) -> Option<RunErrors> {
    let (n, m) = (cfg.system.n_states(), cfg.system.n_inputs());
    let horizon = *cfg.checkpoints.last().expect("validated");
    let mut rng = sim::run_rng(cfg.base_seed, run as u64);
    let out = RunErrors {
        sq_err: Vec::with_capacity(cfg.checkpoints.len()),
        frob_err: Vec::with_capacity(cfg.checkpoints.len()),
    };
    let ok = match method {
        Method::SysIdLqg => {
            let mut rec = Recorder {
                est: SysIdLqg::new(n, m, cfg.cost.clone()),
                checkpoints: &cfg.checkpoints,
                p_star,
                p_star_m,
                out,
                missing: false,
            };
            let r = sim::simulate(&cfg.system, policy, horizon, &mut rng, &mut rec);
            (r.is_ok() && !rec.missing).then_some(rec.out)
        }
        Method::QLearning => {
            let mut rec = Recorder {
                est: QLearning::new(n, m, cfg.cost.clone()),
                checkpoints: &cfg.checkpoints,
                p_star,
                p_star_m,
                out,
                missing: false,
            };
            let r = sim::simulate(&cfg.system, policy, horizon, &mut rng, &mut rec);
            (r.is_ok() && !rec.missing).then_some(rec.out)
        }
    };
    ok.filter(|e| e.sq_err.iter().all(|v| v.is_finite()))
}

/// Compensated (Neumaier) sum in slice order.
pub fn neumaier_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let (mut sum, mut comp) = (0.0_f64, 0.0_f64);
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let k = values.len();
    if k == 0 {
        f64::NAN
    } else if k % 2 == 1 {
        values[k / 2]
    } else {
        0.5 * (values[k / 2 - 1] + values[k / 2])
    }
}

/// Input covariance resolved against the true model.
pub fn resolve_input_cov(cfg: &ExperimentConfig, l_star: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let m = cfg.system.n_inputs();
    match &cfg.input_cov {
        InputCov::Lqg => exploration_covariance(l_star, &cfg.system),
        InputCov::Scaled(s) => Ok(DMatrix::identity(m, m) * *s),
        InputCov::Matrix(c) => Ok(c.clone()),
    }
}

/// Per-run error trajectories of one method, in run order.
pub fn run_method(cfg: &ExperimentConfig, method: Method) -> Result<Vec<Option<RunErrors>>> {
    cfg.validate()?;
    let (p_star, l_star) = reference_solution(cfg)?;
    let policy = policy_for(cfg, &l_star)?;
    let p_vec = matops::sym_vec_upper(p_star.as_matrix());
    in_pool(cfg.threads, || {
        (0..cfg.runs)
            .into_par_iter()
            .map(|r| run_one(cfg, method, &policy, r, &p_vec, p_star.as_matrix()))
            .collect()
    })
}

fn reference_solution(cfg: &ExperimentConfig) -> Result<(PdMatrix, DMatrix<f64>)> {
    let sol = solve_dare(
        cfg.system.a(),
        cfg.system.b(),
        &cfg.cost,
        cfg.cost.q(),
        DareOptions {
            tol: 1e-14,
            max_iter: 1_000_000,
        },
    )?;
    let l = gain(&sol.p, cfg.system.a(), cfg.system.b(), &cfg.cost)?;
    Ok((sol.p, l))
}

fn policy_for(cfg: &ExperimentConfig, l_star: &DMatrix<f64>) -> Result<Policy> {
    let cov = resolve_input_cov(cfg, l_star)?;
    Ok(match cfg.schedule {
        Schedule::Random => Policy::RandomGaussian { cov },
        Schedule::Switched { switch_at } => Policy::Switched { cov, switch_at },
    })
}

fn in_pool<R: Send>(threads: usize, f: impl FnOnce() -> R + Send) -> Result<R> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Experiment(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

/// Runs every selected method for `cfg.runs` replications and aggregates
/// `e_T = (1/R) Σ ‖sym_vec(P*) − sym_vec(P̂_T)‖²` at each checkpoint.
///
/// Results depend only on the configuration, not on the thread count.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let (p_star, l_star) = reference_solution(cfg)?;
    let k = cfg.checkpoints.len();
    let mut e: Vec<(Method, Vec<f64>, Vec<f64>)> = Vec::new();
    let mut excluded = Vec::new();
    for &method in &cfg.methods {
        let runs = run_method(cfg, method)?;
        let kept: Vec<&RunErrors> = runs.iter().flatten().collect();
        let dropped = cfg.runs - kept.len();
        if dropped as f64 > MAX_EXCLUDED_FRACTION * cfg.runs as f64 {
            return Err(Error::Experiment(format!(
                "{}: {dropped} of {} runs failed (limit {:.0}%)",
                method.name(),
                cfg.runs,
                100.0 * MAX_EXCLUDED_FRACTION
            )));
        }
        if kept.is_empty() {
            return Err(Error::Experiment(format!("{}: every run failed", method.name())));
        }
        excluded.push((method, dropped));
        let mut means = Vec::with_capacity(k);
        let mut medians = Vec::with_capacity(k);
        for i in 0..k {
            means.push(neumaier_sum(kept.iter().map(|r| r.sq_err[i])) / kept.len() as f64);
            let mut f: Vec<f64> = kept.iter().map(|r| r.frob_err[i]).collect();
            medians.push(median(&mut f));
        }
        e.push((method, means, medians));
    }

    let crlb = match cfg.crlb_runs {
        None => None,
        Some(runs) => {
            let policy = Policy::RandomGaussian {
                cov: resolve_input_cov(cfg, &l_star)?,
            };
            let seed = cfg.base_seed ^ 0x6372_6c62;
            Some(in_pool(cfg.threads, || {
                crlb_traces(&cfg.system, &cfg.cost, &policy, &cfg.checkpoints, runs, seed)
            })??)
        }
    };

    let pick = |method: Method, i: usize, median: bool| {
        e.iter()
            .find(|(m, _, _)| *m == method)
            .map(|(_, a, b)| if median { b[i] } else { a[i] })
    };
    let records = cfg
        .checkpoints
        .iter()
        .enumerate()
        .map(|(i, &t)| AccuracyRecord {
            t,
            e_sysid: pick(Method::SysIdLqg, i, false),
            e_qlearn: pick(Method::QLearning, i, false),
            median_err_sysid: pick(Method::SysIdLqg, i, true),
            median_err_qlearn: pick(Method::QLearning, i, true),
            crlb: crlb.as_ref().map(|c| c[i]),
        })
        .collect();
    Ok(ExperimentReport {
        records,
        p_star,
        runs: cfg.runs,
        excluded,
    })
}
