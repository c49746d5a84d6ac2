//! Stationary viscous shocks of scalar conservation laws with
//! space-periodic flux, on truncated cylinders `(-R, R) x T^{N-1}`.
//!
//! The pipeline runs bottom up: periodic cell states and the homogenized
//! flux ([`cell`]), truncated boundary value problems and the shock
//! profile ([`shock`]), the Robin principal eigenfunction ([`eigen`]), the
//! mass-prescribed shock ([`massshock`]) and time evolution experiments
//! ([`evolve`]).

pub mod cell;
pub mod eigen;
pub mod elliptic;
pub mod error;
pub mod evolve;
pub mod flux;
pub mod grid;
pub mod linalg;
pub mod massshock;
pub mod quad;
pub mod shock;

pub use error::{Error, Result};

/// Version of this library, recorded in run summaries.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
