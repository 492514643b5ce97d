//! Experiment configuration: a flat TOML file plus the compiled-in presets
//! and the plain-text system/cost file formats.
//!
//! ```toml
//! system = "hagen1998"      # preset name or path to a system file
//! cost = "hagen1998"        # preset name or path to a cost file
//! horizon = 20000
//! runs = 100
//! seed = 1
//! policy = "random"         # or "switched"
//! switch_at = 200
//! input_cov = "lqg"         # or a number s for s·I
//! methods = ["sysid_lqg", "qlearn"]
//! checkpoints = [50, 100, 200, 500, 1000, 2000, 5000, 10000, 20000]
//! threads = 0               # 0 = all cores
//! crlb = false
//! crlb_runs = 1000
//! ```

use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::matops::{io, PdMatrix};
use crate::riccati::CostSpec;
use crate::sim::SystemModel;

pub const DEFAULT_CHECKPOINTS: [usize; 9] = [50, 100, 200, 500, 1000, 2000, 5000, 10000, 20000];

/// Estimator under test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Method {
    SysIdLqg,
    QLearning,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::SysIdLqg => "sysid_lqg",
            Method::QLearning => "qlearn",
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sysid_lqg" | "sysid" => Ok(Method::SysIdLqg),
            "qlearn" | "qlearning" => Ok(Method::QLearning),
            other => Err(Error::InvalidParameter(format!("unknown method `{other}`"))),
        }
    }
}

/// Input schedule.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Schedule {
    Random,
    /// Random inputs before `switch_at`, then the method's own estimated
    /// controller.
    Switched { switch_at: usize },
}

/// Covariance of the random inputs.
#[derive(Debug, Clone, PartialEq)]
pub enum InputCov {
    /// `L C Lᵀ` of the true optimal closed loop.
    Lqg,
    Scaled(f64),
    Matrix(DMatrix<f64>),
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub system: SystemModel,
    pub cost: CostSpec,
    pub horizon: usize,
    pub runs: usize,
    pub base_seed: u64,
    pub schedule: Schedule,
    pub input_cov: InputCov,
    pub methods: Vec<Method>,
    pub checkpoints: Vec<usize>,
    /// Worker threads; 0 lets the pool decide.
    pub threads: usize,
    /// Monte Carlo runs for the CRLB column, if requested.
    pub crlb_runs: Option<usize>,
}

impl ExperimentConfig {
    /// Preset plant and cost with the default schedule and checkpoints.
    pub fn preset(name: &str) -> Result<Self> {
        let (system, cost) = preset(name)?;
        let horizon = *DEFAULT_CHECKPOINTS.last().expect("non-empty");
        Ok(Self {
            system,
            cost,
            horizon,
            runs: 1000,
            base_seed: 1,
            schedule: Schedule::Random,
            input_cov: InputCov::Lqg,
            methods: vec![Method::SysIdLqg, Method::QLearning],
            checkpoints: DEFAULT_CHECKPOINTS.to_vec(),
            threads: 0,
            crlb_runs: None,
        })
    }

    pub fn from_toml_str(text: &str, base_dir: &Path) -> Result<Self> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| Error::Parse {
            line: e
                .span()
                .map(|s| text[..s.start].lines().count().max(1))
                .unwrap_or(0),
            message: e.message().to_string(),
        })?;
        raw.resolve(base_dir)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn validate(&self) -> Result<()> {
        if self.runs == 0 || self.horizon == 0 {
            return Err(Error::InvalidParameter("runs and horizon must be at least 1".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::InvalidParameter("no method selected".into()));
        }
        if self.checkpoints.is_empty() {
            return Err(Error::InvalidParameter("no checkpoint within the horizon".into()));
        }
        if self.checkpoints.windows(2).any(|w| w[0] >= w[1]) || self.checkpoints[0] == 0 {
            return Err(Error::InvalidParameter(
                "checkpoints must be positive and strictly increasing".into(),
            ));
        }
        if *self.checkpoints.last().expect("non-empty") > self.horizon {
            return Err(Error::InvalidParameter("checkpoint beyond the horizon".into()));
        }
        if self.system.n_states() != self.cost.n_states()
            || self.system.n_inputs() != self.cost.n_inputs()
        {
            return Err(Error::Dimension("system and cost dimensions differ".into()));
        }
        if let InputCov::Scaled(s) = self.input_cov {
            if !(s >= 0.0 && s.is_finite()) {
                return Err(Error::InvalidParameter("input covariance scale must be ≥ 0".into()));
            }
        }
        Ok(())
    }

    pub fn has(&self, method: Method) -> bool {
        self.methods.contains(&method)
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    system: String,
    cost: Option<String>,
    horizon: Option<usize>,
    runs: Option<usize>,
    seed: Option<u64>,
    policy: Option<String>,
    switch_at: Option<usize>,
    input_cov: Option<toml::Value>,
    methods: Option<Vec<String>>,
    checkpoints: Option<Vec<usize>>,
    threads: Option<usize>,
    crlb: Option<bool>,
    crlb_runs: Option<usize>,
}

impl RawConfig {
    fn resolve(self, base_dir: &Path) -> Result<ExperimentConfig> {
        let system = match preset(&self.system) {
            Ok((s, _)) => s,
            Err(_) => load_system(&resolve_path(base_dir, &self.system))?,
        };
        let cost = match self.cost.as_deref() {
            None => preset(&self.system)
                .map(|(_, c)| c)
                .map_err(|_| Error::InvalidParameter("`cost` is required for a system file".into()))?,
            Some(name) => match preset(name) {
                Ok((_, c)) => c,
                Err(_) => load_cost(&resolve_path(base_dir, name))?,
            },
        };
        let horizon = self.horizon.unwrap_or(*DEFAULT_CHECKPOINTS.last().expect("non-empty"));
        let schedule = match self.policy.as_deref().unwrap_or("random") {
            "random" => Schedule::Random,
            "switched" => Schedule::Switched {
                switch_at: self.switch_at.unwrap_or(200),
            },
            other => return Err(Error::InvalidParameter(format!("unknown policy `{other}`"))),
        };
        let input_cov = match self.input_cov {
            None => InputCov::Lqg,
            Some(toml::Value::String(s)) if s == "lqg" => InputCov::Lqg,
            Some(toml::Value::Float(s)) => InputCov::Scaled(s),
            Some(toml::Value::Integer(s)) => InputCov::Scaled(s as f64),
            Some(other) => {
                return Err(Error::InvalidParameter(format!(
                    "input_cov must be \"lqg\" or a number, got {other}"
                )))
            }
        };
        let methods = match self.methods {
            None => vec![Method::SysIdLqg, Method::QLearning],
            Some(list) => {
                let mut out = list.iter().map(|s| s.parse()).collect::<Result<Vec<Method>>>()?;
                out.sort();
                out.dedup();
                out
            }
        };
        let checkpoints = self.checkpoints.unwrap_or_else(|| {
            DEFAULT_CHECKPOINTS
                .iter()
                .copied()
                .filter(|&t| t <= horizon)
                .collect()
        });
        let crlb_runs = match self.crlb.unwrap_or(false) {
            true => Some(self.crlb_runs.unwrap_or(1000)),
            false => None,
        };
        let cfg = ExperimentConfig {
            system,
            cost,
            horizon,
            runs: self.runs.unwrap_or(1000),
            base_seed: self.seed.unwrap_or(1),
            schedule,
            input_cov,
            methods,
            checkpoints,
            threads: self.threads.unwrap_or(0),
            crlb_runs,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

fn resolve_path(base: &Path, p: &str) -> PathBuf {
    let path = Path::new(p);
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        base.join(path)
    }
}

/// Compiled-in plant and cost.
pub fn preset(name: &str) -> Result<(SystemModel, CostSpec)> {
    match name {
        "hagen1998" => {
            let system = SystemModel::new(
                DMatrix::from_row_slice(2, 2, &[-0.6, -0.4, 1.0, 0.0]),
                DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
                DMatrix::identity(2, 2) * 0.01,
            )?;
            let cost = CostSpec::identity(2, 1, 0.99)?;
            Ok((system, cost))
        }
        other => Err(Error::InvalidParameter(format!("unknown preset `{other}`"))),
    }
}

/// System file: blocks `A`, `B`, `Σ`.
pub fn parse_system(text: &str) -> Result<SystemModel> {
    let mut blocks = io::parse_matrices(text)?;
    if blocks.len() != 3 {
        return Err(Error::Parse {
            line: 0,
            message: format!("system file needs 3 blocks (A, B, Σ), found {}", blocks.len()),
        });
    }
    let sigma = blocks.pop().expect("three blocks");
    let b = blocks.pop().expect("three blocks");
    let a = blocks.pop().expect("three blocks");
    SystemModel::new(a, b, sigma)
}

/// Cost file: blocks `Q`, `R` and a 1×1 block holding `γ`.
pub fn parse_cost(text: &str) -> Result<CostSpec> {
    let blocks = io::parse_matrices(text)?;
    match blocks.as_slice() {
        [q, r, g] if g.shape() == (1, 1) => CostSpec::new(
            PdMatrix::new(q.clone())?,
            PdMatrix::new(r.clone())?,
            g[(0, 0)],
        ),
        _ => Err(Error::Parse {
            line: 0,
            message: "cost file needs blocks Q, R and a 1x1 discount".into(),
        }),
    }
}

pub fn load_system(path: &Path) -> Result<SystemModel> {
    parse_system(&std::fs::read_to_string(path)?)
}

pub fn load_cost(path: &Path) -> Result<CostSpec> {
    parse_cost(&std::fs::read_to_string(path)?)
}
