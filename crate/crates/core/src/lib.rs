//! Multifractal analysis of multiple ergodic averages on linear
//! cookie-cutter sets.
//!
//! The dynamical system is a piecewise linear expanding map of [0,1]
//! with m branches on disjoint intervals I_i, slope e^{lambda_i} on
//! branch i. For a locally constant potential phi and an integer q >= 2
//! the quantity of interest is the level set of the multiple average
//!
//! ```text
//!   A_n(x) = (1/n) sum_{k=1..n} phi(T^k x, T^{qk} x)
//! ```
//!
//! and the Hausdorff dimension of { x : A_n(x) -> alpha } as a function
//! of alpha. The crate computes that spectrum through the nonlinear
//! transfer system and its pressure function ([`transfer`], [`pressure`],
//! [`spectrum`]), and validates it against two independent constructions:
//! a telescopic product measure sampled by Monte Carlo ([`measure`]) and
//! exhaustive / dynamic-programming covering counts ([`oracle`]).
//!
//! All solvers are deterministic; sampling uses counter-based seeding so
//! batch output is reproducible across thread counts.

pub mod cli;
pub mod config;
mod linalg;
pub mod measure;
pub mod oracle;
pub mod pressure;
pub mod report;
pub mod spectrum;
pub mod system;
#[cfg(test)]
pub(crate) mod testutil;
pub mod transfer;

pub use config::RunConfig;
pub use measure::{ChainLayout, SampledWord};
pub use pressure::PressurePoint;
pub use spectrum::{SpectrumPoint, SupportEstimate};
pub use system::SystemSpec;
pub use transfer::{MarkovKernel, TransferSolution};

/// Crate-wide error type. Validation failures carry every violated
/// constraint so a bad config is reported in one pass.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid system: {}", issues.join("; "))]
    InvalidSystem { issues: Vec<String> },
    #[error("transfer solver did not converge at (s,r)=({s},{r}): {detail}")]
    SolverDiverged { s: f64, r: f64, detail: String },
    #[error("singular linear system in {0}")]
    SingularSystem(&'static str),
    #[error("root bracketing failed in {0}")]
    BracketFailed(&'static str),
    #[error("symbol {symbol} out of range for m={m}")]
    SymbolOutOfRange { symbol: usize, m: usize },
    #[error("word of length {n} has no complete (k,qk) pair for q={q}")]
    WordTooShort { n: usize, q: usize },
    #[error("count table would need {cells} bins (~{mib} MiB), above the {limit}-bin guard")]
    TableTooLarge { cells: u128, limit: u128, mib: u128 },
    #[error("exhaustive enumeration of m^n = {words:e} words exceeds the guard of {guard:e}")]
    EnumerationTooLarge { words: f64, guard: f64 },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("i/o failure: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
