//! Decentralized demand response through randomized load control.
//!
//! Each load runs a finite-state Markov chain whose transition law is an
//! exponentially tilted version of its nominal behaviour. The tilt `zeta`
//! is a single scalar broadcast by the balancing authority. This crate
//! builds those policies from a Perron-Frobenius eigenproblem, computes the
//! Poisson-equation statistics behind their Taylor approximations, derives
//! the linear time-invariant model of the aggregate population, and runs the
//! closed loop against a mean-field or a Monte-Carlo population.
//!
//! The crate is `no_std` (it needs `alloc`). The `parallel` feature pulls in
//! `std` and `rayon` to spread agent updates over threads; results are
//! identical with or without it.

#![cfg_attr(not(feature = "parallel"), no_std)]

extern crate alloc;

pub mod agent_sim;
pub mod control;
mod error;
pub mod linalg;
pub mod load_model;
pub mod lti;
pub mod mean_field;
pub mod oracle;
pub mod signal;
pub mod spectral;
pub mod stats;

pub use error::{Error, Result};
pub use load_model::{LoadModel, Mode, StateLabel, SwitchingCurve};
pub use spectral::{Policy, PolicyCache, SpectralDesign};
pub use stats::NominalStats;
