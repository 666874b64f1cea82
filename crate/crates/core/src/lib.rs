//! Integration-sense experiments for stochastic differential equations.
//!
//! An SDE `dX = a dt + B dW` is read in the α-sense (α = 0 Itô, ½
//! Stratonovich, 1 Hänggi-Klimontovich). The crate simulates such models,
//! computes the noise-induced drift, builds charts that make the diffusion
//! constant, solves the 1D Fokker-Planck equation and runs scripted checks
//! of the resulting sense-selection claims.

pub mod chart;
pub mod claims;
pub mod cli;
pub mod config;
pub mod diffusion;
pub mod error;
pub mod expr;
pub mod fpe;
pub mod field;
pub mod integrator;
pub mod io;
pub mod model;
pub mod numeric;
pub mod sense;
pub mod stats;
pub mod stream;
pub mod wiener;

pub use error::{Error, Result};
pub use sense::SenseParameter;
