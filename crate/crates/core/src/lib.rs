//! Continuous-time deep learning with neural ODEs.
//!
//! Three problems share one augmented-state integrator with exact
//! discretize-then-optimize gradients:
//!
//! * [`classify`]: binary classification with an affine readout of the terminal state;
//! * [`cnf`]: continuous normalizing flows trained by maximum likelihood, with an
//!   optional transport-cost penalty;
//! * [`mfg`]: potential mean field games solved along agent trajectories with a
//!   value network, feedback controls and an HJB penalty.

pub mod classify;
pub mod cli;
pub mod cnf;
pub mod distributions;
pub mod dynamics;
pub mod error;
pub mod mfg;
pub mod odeint;
pub mod paramcore;
pub mod train;

pub use error::{Error, Result};
