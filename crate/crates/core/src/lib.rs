//! State-feedback LQG control of a linear Gaussian plant with unknown
//! `(A, B, Σ)`: maximum-likelihood identification followed by Riccati
//! design, against online Q-learning, plus the tooling to compare them.

pub mod bench;
pub mod error;
pub mod gchi2;
pub mod matops;
pub mod online;
pub mod opcount;
pub mod qlearn;
pub mod riccati;
pub mod sim;
pub mod sysid;

pub use error::{Error, Result};
