//! Simulation and optimal control of stage-switched controlled Markov jump
//! processes.
//!
//! The crate is organised bottom-up:
//!
//! * [`model`] holds reaction networks, propensities and the text format.
//! * [`simulate`] generates exact (SSA) and tau-leaping sample paths.
//! * [`odelimit`] integrates the large-`N` limit ODE.
//! * [`cost`] defines staged cost functionals and their estimators.
//! * [`openloop`], [`feedback`] and [`hybrid`] compute control policies.
//! * [`bounds`] evaluates the convergence constants and checks them against
//!   simulation.
//!
//! All Monte-Carlo work draws from per-task random streams so that results
//! are reproducible and independent of the number of worker threads.

pub mod bounds;
pub mod builtin;
pub mod cost;
pub mod error;
pub mod feedback;
pub mod hybrid;
pub mod model;
pub mod odelimit;
pub mod openloop;
pub mod policy;
pub mod rng;
pub mod simulate;
pub mod stats;

pub use error::{Error, Result};
