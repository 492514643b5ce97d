use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use nalgebra::{DMatrix, DVector};

use sflqg::bench::{self, config, ExperimentConfig, Schedule};
use sflqg::gchi2::{self, GChi2Params};
use sflqg::matops::{io::format_matrix, sym_vec};
use sflqg::opcount;
use sflqg::qlearn::{QlAccumulator, QlState, Theta};
use sflqg::riccati::{self, CostSpec, DareOptions};
use sflqg::sim::{self, Policy, SystemModel, Trajectory};
use sflqg::sysid::{self, GramAccumulator, RlsState};

#[derive(Parser)]
#[command(name = "sflqg", version, about = "State-feedback LQG with unknown models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the discounted Riccati equation and print the certified error
    /// bound along the iteration.
    DareSolve {
        /// System file (blocks A, B, Σ) or preset name.
        #[arg(long)]
        system: String,
        /// Cost file (blocks Q, R, γ) or preset name.
        #[arg(long)]
        cost: String,
        #[arg(long, default_value_t = 1e-12)]
        tol: f64,
        #[arg(long, default_value_t = 100_000)]
        max_iter: usize,
    },
    /// Simulate the plant and write a trajectory CSV.
    Simulate {
        #[arg(long)]
        system: String,
        #[arg(long, default_value_t = 1000)]
        horizon: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Input variance scale `s` for `u ~ N(0, s·I)`; omit to use the
        /// optimal closed-loop input covariance (needs --cost).
        #[arg(long)]
        input_scale: Option<f64>,
        #[arg(long)]
        cost: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Maximum-likelihood identification from a trajectory CSV.
    Identify {
        #[arg(long)]
        traj: PathBuf,
        /// True system, to report the estimation error over time.
        #[arg(long)]
        system: Option<String>,
    },
    /// Run the recursive Q-learning estimator over a trajectory CSV.
    Qlearn {
        #[arg(long)]
        traj: PathBuf,
        #[arg(long)]
        cost: String,
        /// Emit every `stride`-th step.
        #[arg(long, default_value_t = 1)]
        stride: usize,
    },
    /// Compare analytic and empirical moments of the Q-learning noise.
    Gchi2Check {
        #[arg(long, default_value_t = 100_000)]
        draws: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Per-sample-time multiplication counts over the (N, M) grid.
    Complexity {
        #[arg(long, default_value_t = 6)]
        nmax: i64,
        #[arg(long, default_value_t = 6)]
        mmax: i64,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Monte Carlo accuracy comparison of both estimators.
    Bench {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        runs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Add the Monte Carlo CRLB column.
        #[arg(long)]
        crlb: bool,
        #[arg(long)]
        threads: Option<usize>,
    },
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::DareSolve {
            system,
            cost,
            tol,
            max_iter,
        } => dare_solve(&load_system(&system)?, &load_cost(&cost)?, tol, max_iter),
        Command::Simulate {
            system,
            horizon,
            seed,
            input_scale,
            cost,
            out,
        } => simulate(&system, horizon, seed, input_scale, cost.as_deref(), out.as_deref()),
        Command::Identify { traj, system } => identify(&traj, system.as_deref()),
        Command::Qlearn { traj, cost, stride } => qlearn(&traj, &load_cost(&cost)?, stride),
        Command::Gchi2Check { draws, seed } => gchi2_check(draws, seed),
        Command::Complexity { nmax, mmax, csv } => complexity(nmax, mmax, csv.as_deref()),
        Command::Bench {
            config,
            out,
            runs,
            seed,
            crlb,
            threads,
        } => run_bench(&config, out.as_deref(), runs, seed, crlb, threads),
    }
}

fn load_system(arg: &str) -> Result<SystemModel> {
    if let Ok((s, _)) = config::preset(arg) {
        return Ok(s);
    }
    config::load_system(Path::new(arg)).with_context(|| format!("reading system `{arg}`"))
}

fn load_cost(arg: &str) -> Result<CostSpec> {
    if let Ok((_, c)) = config::preset(arg) {
        return Ok(c);
    }
    config::load_cost(Path::new(arg)).with_context(|| format!("reading cost `{arg}`"))
}

fn load_traj(path: &Path) -> Result<Trajectory> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(Trajectory::from_csv(&text)?)
}

fn write_or_print(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn dare_solve(model: &SystemModel, cost: &CostSpec, tol: f64, max_iter: usize) -> Result<()> {
    let p0 = cost.q().clone();
    let sol = riccati::solve_dare(model.a(), model.b(), cost, &p0, DareOptions { tol, max_iter })?;
    println!("# P");
    print!("{}", format_matrix(sol.p.as_matrix()));
    println!("# L");
    print!("{}", format_matrix(&sol.gain));
    println!("# iterations {}", sol.iterations);
    println!("# rho {}", sol.rho);
    println!("# delta0 {}", sol.delta0);
    println!("# residual {:e}", sol.residual);
    println!("k,error,bound");
    let trace = riccati::dare_trace(model.a(), model.b(), cost, &p0, sol.iterations)?;
    for (k, pk) in trace.iter().enumerate() {
        let err = sflqg::matops::spectral_norm(&(sol.p.as_matrix() - pk));
        println!("{k},{err:e},{:e}", sol.error_bound(k));
    }
    Ok(())
}

fn simulate(
    system: &str,
    horizon: usize,
    seed: u64,
    input_scale: Option<f64>,
    cost: Option<&str>,
    out: Option<&Path>,
) -> Result<()> {
    let model = load_system(system)?;
    let cov = match (input_scale, cost) {
        (Some(s), _) => DMatrix::identity(model.n_inputs(), model.n_inputs()) * s,
        (None, Some(c)) => {
            let cost = load_cost(c)?;
            let sol = riccati::solve_dare_default(model.a(), model.b(), &cost)?;
            sim::exploration_covariance(&sol.gain, &model)?
        }
        (None, None) => match config::preset(system) {
            Ok((_, cost)) => {
                let sol = riccati::solve_dare_default(model.a(), model.b(), &cost)?;
                sim::exploration_covariance(&sol.gain, &model)?
            }
            Err(_) => bail!("give --input-scale or --cost"),
        },
    };
    let traj = sim::simulate_seeded(&model, &Policy::RandomGaussian { cov }, horizon, seed)?;
    write_or_print(out, &traj.to_csv())
}

fn identify(traj_path: &Path, system: Option<&str>) -> Result<()> {
    let traj = load_traj(traj_path)?;
    let est = sysid::ml_batch(&traj)?;
    println!("# A_hat");
    print!("{}", format_matrix(&est.a_hat));
    println!("# B_hat");
    print!("{}", format_matrix(&est.b_hat));
    println!("# Sigma_hat");
    print!("{}", format_matrix(&est.sigma_hat));
    let Some(system) = system else {
        return Ok(());
    };
    let model = load_system(system)?;
    let (n, m) = (model.n_states(), model.n_inputs());
    if traj.n_states() != n || traj.n_inputs() != m {
        bail!("trajectory and system dimensions differ");
    }
    let mut truth = DMatrix::zeros(n, n + m);
    truth.view_mut((0, 0), (n, n)).copy_from(model.a());
    truth.view_mut((0, n), (n, m)).copy_from(model.b());
    println!("T,err_AB");
    let mut acc = GramAccumulator::new(n, m);
    let mut rls: Option<RlsState> = None;
    for (t, (xi, next)) in traj.transitions().enumerate() {
        match rls.as_mut() {
            Some(s) => s.update(&xi, next)?,
            None => {
                acc.push(&xi, next);
                if acc.is_well_posed() {
                    rls = Some(RlsState::from_gram(&acc)?);
                }
            }
        }
        if let Some(s) = &rls {
            if is_checkpoint(t + 1) || t + 1 == traj.len() {
                let err = (s.estimate().transpose() - &truth).norm();
                println!("{},{err:e}", t + 1);
            }
        }
    }
    Ok(())
}

/// `1, 2, 5 × 10^k`.
fn is_checkpoint(t: usize) -> bool {
    let mut v = t;
    while v >= 10 && v % 10 == 0 {
        v /= 10;
    }
    matches!(v, 1 | 2 | 5)
}

fn qlearn(traj_path: &Path, cost: &CostSpec, stride: usize) -> Result<()> {
    let traj = load_traj(traj_path)?;
    let (n, m) = (cost.n_states(), cost.n_inputs());
    if traj.n_states() != n || traj.n_inputs() != m {
        bail!("trajectory and cost dimensions differ");
    }
    let stride = stride.max(1);
    let d = sflqg::qlearn::param_dim(n, m);
    let mut header = String::from("T");
    for i in 0..d {
        let _ = write!(header, ",theta_{}", i + 1);
    }
    for i in 0..n * (n + 1) / 2 {
        let _ = write!(header, ",p_{}", i + 1);
    }
    for i in 0..m * n {
        let _ = write!(header, ",l_{}", i + 1);
    }
    println!("{header}");
    let mut acc = QlAccumulator::new(n, m);
    let mut state: Option<QlState> = None;
    for (t, (xi, next)) in traj.transitions().enumerate() {
        match state.as_mut() {
            Some(s) => s.update(&xi, next, cost)?,
            None => {
                acc.push(&xi, next, cost);
                if acc.is_well_posed() {
                    state = Some(QlState::from_accumulator(&acc, &Theta::initial(cost), cost)?);
                }
            }
        }
        let Some(s) = &state else { continue };
        if (t + 1) % stride != 0 && t + 1 != traj.len() {
            continue;
        }
        let mut row = format!("{}", t + 1);
        for v in s.theta_vector().iter() {
            let _ = write!(row, ",{v:e}");
        }
        for v in sym_vec(s.p_hat())?.as_slice() {
            let _ = write!(row, ",{v:e}");
        }
        match s.gain_hat() {
            Some(l) => {
                // row-major
                for i in 0..m {
                    for j in 0..n {
                        let _ = write!(row, ",{:e}", l[(i, j)]);
                    }
                }
            }
            None => row.push_str(&",".repeat(m * n)),
        }
        println!("{row}");
    }
    if state.is_none() {
        bail!("trajectory never excites the Q-function regression");
    }
    Ok(())
}

fn gchi2_check(draws: usize, seed: u64) -> Result<()> {
    if draws < 2 {
        bail!("need at least two draws");
    }
    let (model, cost) = config::preset("hagen1998")?;
    let p = riccati::solve_dare_default(model.a(), model.b(), &cost)?.p.into_inner();
    let xi = DVector::from_vec(vec![0.1, -0.05, 0.03]);
    let params = gchi2::epsilon_params(&model, &p, &xi)?;
    let mut rng = sim::run_rng(seed, 0);
    let realized: Vec<f64> = (0..draws)
        .map(|_| gchi2::simulate_epsilon(&model, &p, &xi, &mut rng))
        .collect();
    let sampled: Vec<f64> = (0..draws).map(|_| params.sample(&mut rng)).collect();
    let (mean, var) = params.moments();
    println!("source,mean,variance");
    println!("analytic,{mean:e},{var:e}");
    for (name, v) in [("plant_noise", &realized), ("gchi2_sampler", &sampled)] {
        let (m, s) = sample_moments(v);
        println!("{name},{m:e},{s:e}");
    }
    let ks = gchi2::ks_two_sample(&mut realized.clone(), &mut sampled.clone())?;
    println!("# KS statistic {:e}, p-value {:.4}", ks.statistic, ks.p_value);
    let unit = GChi2Params::new(DMatrix::identity(1, 1), DVector::zeros(1), 0.0)?;
    let chi: Vec<f64> = (0..draws).map(|_| unit.sample(&mut rng)).collect();
    let (m, s) = sample_moments(&chi);
    println!("# chi-squared(1) sample mean {m:.4}, variance {s:.4}");
    Ok(())
}

fn sample_moments(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = bench::neumaier_sum(v.iter().copied()) / n;
    let var = bench::neumaier_sum(v.iter().map(|x| (x - mean).powi(2))) / (n - 1.0);
    (mean, var)
}

fn complexity(nmax: i64, mmax: i64, csv: Option<&Path>) -> Result<()> {
    if nmax < 1 || mmax < 1 {
        bail!("--nmax and --mmax must be at least 1");
    }
    let grid = opcount::cost_grid(nmax, mmax);
    if let Some(path) = csv {
        std::fs::write(path, opcount::grid_csv(&grid))
            .with_context(|| format!("writing {}", path.display()))?;
    }
    println!("{:>3} {:>3} {:>14} {:>14}", "N", "M", "classic", "qlearn");
    for c in &grid {
        println!(
            "{:>3} {:>3} {:>14} {:>14}",
            c.n,
            c.m,
            opcount::render_2dp(c.classic),
            opcount::render_2dp(c.qlearn)
        );
    }
    Ok(())
}

fn run_bench(
    path: &Path,
    out: Option<&Path>,
    runs: Option<usize>,
    seed: Option<u64>,
    crlb: bool,
    threads: Option<usize>,
) -> Result<()> {
    let mut cfg = ExperimentConfig::from_file(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    if let Some(r) = runs {
        cfg.runs = r;
    }
    if let Some(s) = seed {
        cfg.base_seed = s;
    }
    if crlb && cfg.crlb_runs.is_none() {
        cfg.crlb_runs = Some(cfg.runs);
    }
    if let Some(t) = threads {
        cfg.threads = t;
    }
    let schedule = match cfg.schedule {
        Schedule::Random => "random".to_string(),
        Schedule::Switched { switch_at } => format!("switched at {switch_at}"),
    };
    eprintln!(
        "running {} runs, horizon {}, {schedule} inputs",
        cfg.runs, cfg.horizon
    );
    let report = bench::run_experiment(&cfg)?;
    for (method, n) in &report.excluded {
        eprintln!("{}: {n} runs excluded", method.name());
    }
    write_or_print(out, &bench::format_results(&report.records)?)
}
