//! Simulation and pathwise diagnostics for the degenerate chain SDE
//!
//! ```text
//! dX = Y dt,   dY = Z dt,   dZ = |X|^alpha dB
//! ```
//!
//! and its two-dimensional predecessor `dX = Y dt, dY = |X|^alpha dB`.
//!
//! The crate is organised bottom-up: [`model`] holds the system and its
//! coefficients, [`noise`] the seeded dyadic Brownian paths, [`integrator`]
//! the time stepping with band stopping, [`stopping`] the level-`n` band
//! machinery and initial-state cases, [`coupling`] same-noise solution pairs
//! and their divergence, and [`analysis`] the pathwise bound checks,
//! zero-hit scans and convergence-order fits. [`ensemble`] provides the
//! order-preserving parallel map used by all Monte Carlo drivers.

pub mod analysis;
pub mod coupling;
pub mod ensemble;
pub mod error;
mod gauss;
pub mod integrator;
pub mod model;
pub mod noise;
pub mod stopping;

pub use error::{Error, Result};
pub use gauss::normal_quantile;
pub use integrator::{linf_norm, solve, step, Scheme, SolveConfig, StopReason, Trajectory};
pub use model::{diffusion_coeff, drift_flow, mvt_bound, ChainOrder, ChainState, SystemParams};
pub use noise::BrownianPath;
