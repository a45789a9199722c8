//! Simulation of ancilla-based current measurements on lattice models:
//! Fock bases, sparse operators and Krylov solvers, lattice Hamiltonians,
//! the probe protocol with its estimators, perturbative predictions and the
//! trapped-ion variant with a thermal phonon mode.

pub mod basis;
pub mod error;
pub mod linalg;
pub mod models;
pub mod perturbation;
pub mod probe;
pub mod trapped_ion;

pub use error::{Error, Result};
