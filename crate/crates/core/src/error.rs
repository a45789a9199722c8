//! Error type shared by every module of the crate.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// The requested particle-number sector contains no states.
    #[error("sector is empty: {particles} particles do not fit into {modes} modes with capacity {capacity}")]
    SectorEmpty {
        particles: usize,
        modes: usize,
        capacity: usize,
    },

    #[error("occupation vector {0:?} is not part of this basis")]
    NotFound(Vec<u32>),

    #[error("invalid mode specification: {0}")]
    InvalidModes(String),

    #[error("mode index {index} out of range for a basis with {modes} modes")]
    InvalidModeIndex { index: usize, modes: usize },

    #[error("invalid operator term: {0}")]
    InvalidTerm(String),

    #[error("operator or state belongs to basis #{found}, expected basis #{expected}")]
    BasisMismatch { expected: u64, found: u64 },

    #[error("operator is not hermitian (max deviation {0:.3e})")]
    NotHermitian(f64),

    #[error("{method} did not converge after {iterations} iterations (best residual {best_residual:.3e})")]
    NonConvergence {
        method: &'static str,
        iterations: usize,
        best_residual: f64,
    },

    #[error("sites {0} and {1} are not connected by a hopping link")]
    NotALink(usize, usize),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("fit window is empty: {0}")]
    WindowEmpty(String),

    #[error("least-squares fit is ill-conditioned (condition number {0:.3e})")]
    IllConditioned(f64),

    #[error("conditioning outcome has zero probability")]
    ZeroProbability,

    #[error("unsupported configuration: {0}")]
    Unsupported(String),

    #[error("plaquette flux {flux:.6} is incompatible with the requested scheme: the loop angles must satisfy alpha + beta + gamma (mod 2 pi) = flux ({detail})")]
    IncompatibleFlux { flux: f64, detail: String },

    #[error("composite dimension {dim} exceeds the budget of {budget} states; use a smaller lattice or ancilla truncation 1")]
    DimensionBudget { dim: usize, budget: usize },

    #[error("channel n = {n} has |alpha_n| = {alpha:.3e} below the resolvable threshold; choose a different phonon number")]
    UnresolvableChannel { n: usize, alpha: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;
