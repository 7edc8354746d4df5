//! Boundary output-feedback stabilization of reaction-diffusion equations
//! with a delayed reaction term.
//!
//! The pipeline runs bottom-up:
//! [`spectral`] computes the Sturm-Liouville eigenbasis,
//! [`model`] projects the plant and assembles the truncated closed loop,
//! [`certify`] searches for a Lyapunov certificate of the stability
//! constraints, and [`sim`] integrates the delayed closed loop.

pub mod certify;
pub mod error;
pub mod linalg;
pub mod model;
pub mod sim;
pub mod spectral;

pub use error::{Error, Result};
