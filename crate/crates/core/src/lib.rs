//! Generalized periodic orbits of the periodically forced Kepler problem via
//! Kustaanheimo–Stiefel regularization.
//!
//! Modules, bottom up: [`quat`] (quaternions and the KS/Hopf map), [`flow`]
//! (adaptive Runge–Kutta propagation), [`kepler`] (the physical model),
//! [`pathlift`] (horizontal lifts through the Hopf map), [`ksreg`] (the
//! regularized phase space), [`rtbp`] (the elliptic restricted three-body
//! perturbation), [`porbit`] (the periodic-orbit solver).

pub mod flow;
pub mod io;
pub mod kepler;
pub mod ksreg;
pub mod pathlift;
pub mod porbit;
pub mod quat;
pub mod rtbp;

pub use kepler::{PerturbationModel, PhysState};
pub use ksreg::{KSState, SeedOrbit};
pub use quat::{ImQuaternion, Quaternion};
