//! Thermodynamic convergence laboratory for singularly perturbed diffusions.
//!
//! The crate evaluates free energy, Fisher-type dissipation and housekeeping
//! entropy production for slow–fast Ornstein–Uhlenbeck families in closed
//! form, simulates nonlinear and stiff models by Monte Carlo, and reports
//! which level of thermodynamic convergence an ε-family reaches.

pub mod criteria;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod models;
pub mod ou;
pub mod quadrature;
pub mod rng;
pub mod sde;
pub mod stats;

pub use error::{Error, Result};
pub use linalg::{GaussianState, RealMatrix, RealVector};
