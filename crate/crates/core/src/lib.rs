//! Spectral convex-integration engine for the stochastic 3D Euler equations
//! on the torus: parameter ledger, Fourier fields, trace-class noise,
//! Beltrami building blocks, flow maps, the iteration step itself, and the
//! verification harness around it.

pub mod beltrami;
pub mod error;
pub mod exact;
pub mod harness;
pub mod iterate;
pub mod noise;
pub mod params;
pub mod rng;
pub mod spectral;
pub mod transport;
pub mod verify;

pub use error::{Error, Result};
