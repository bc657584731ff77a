//! Two-particle double-slit simulator: Bohmian trajectories and Born-rule
//! detection statistics computed from the same wavefunctions.

pub mod cli;
pub mod detection;
pub mod ensemble;
pub mod error;
pub mod guidance;
pub mod packets;
pub mod quadrature;
pub mod scenarios;

pub use error::{Error, Result};
