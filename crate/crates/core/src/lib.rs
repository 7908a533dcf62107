//! Data-driven synthesis of stabilizing, block-sparse state-feedback gains
//! from noisy input/state trajectories.
//!
//! The pipeline: trajectory data and a quadratic noise bound define a
//! consistency set of system matrices ([`datamodel`]); a semidefinite
//! feasibility problem yields a gain that stabilizes every member
//! ([`synth`]); reweighted block-norm minimization sparsifies that gain
//! ([`sparsify`]); every certificate is re-checked without the solver
//! ([`verify`]).

extern crate openblas_src;

pub mod blockmat;
pub mod coneprog;
pub mod datamodel;
pub mod error;
pub mod linalg;
pub mod reproduce;
pub mod simulate;
pub mod sparsify;
pub mod synth;
pub mod verify;

pub use error::{Error, Result};
