//! Continuous-state branching processes in varying environments.
//!
//! The crate solves the backward cumulant equation of a process driven by a
//! time scale with atoms, builds the Galton–Watson approximations that
//! converge to it, and checks the approximations by simulation.

pub mod cumulant;
pub mod discrete;
pub mod environment;
pub mod expcli;
pub mod mechanism;
pub mod quadrature;
pub mod simulate;
pub mod special;
