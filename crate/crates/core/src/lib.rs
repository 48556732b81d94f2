//! Rational normal forms for nonlinear Schrodinger equations on the circle.
//!
//! The crate covers resonant index combinatorics, small denominators, non-resonance
//! membership tests, random initial data, exact Birkhoff steps, a rational Hamiltonian
//! term algebra and a split-step spectral integrator.

pub mod coeff;
pub mod dynamics;
pub mod error;
pub mod experiment;
pub mod index;
pub mod integrable;
pub mod phase_space;
pub mod poly;
pub mod rational;
pub mod resonance;
pub mod stochastic;

pub use error::{Result, RnfError};
pub use index::{ClassTag, ModeIndex, MultiIndex};
pub use integrable::{Model, ModelParams};
pub use phase_space::{ActionField, FourierState};
