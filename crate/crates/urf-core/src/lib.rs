//! Set-valued dynamics learning with randomized features.
//!
//! The library learns one-step dynamics models of the form
//! `x_{n+1} = h(x_n) + phi(x_n)' w` where `h` is a known nominal map, `phi`
//! is a frozen randomized feature basis, and the weights `w` range over
//! per-output-dimension credible ellipsoids fitted by Bayesian linear
//! regression. On top of the learned set-valued model it computes worst- and
//! best-case trajectory costs with an adjoint shooting solver whose
//! Hamiltonian minimization has a closed form over each ellipsoid, plus a
//! Frank-Wolfe variant with configurable step schedules.

pub mod cli;
pub mod dynamics;
pub mod error;
pub mod features;
pub mod regression;
pub mod systems;
pub mod worstcase;

pub use error::{Result, UrfError};
