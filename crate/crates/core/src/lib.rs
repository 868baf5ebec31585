//! Classical and semiclassical scattering by short-range potentials.
//!
//! The crate integrates the Hamiltonian flow of `|xi|^2/2 + V(x)`, extracts
//! asymptotic data, samples the scattering relation, solves the two-point
//! problem between incoming and outgoing directions, and assembles the
//! leading semiclassical scattering amplitude. A partial-wave solver gives
//! exact amplitudes for radial potentials, and a torus order test measures
//! the h-decay of the amplitude under microlocal cutoffs.

pub mod acceptance;
pub mod action;
pub mod amplitude;
pub mod asymptotics;
pub mod bvsolve;
pub mod config;
pub mod error;
pub mod export;
pub mod fio;
pub mod flow;
pub mod frame;
pub mod ode;
pub mod oracle;
pub mod par;
pub mod potential;
pub mod quad;
pub mod relation;
pub mod special;

pub use error::{Error, Result};
