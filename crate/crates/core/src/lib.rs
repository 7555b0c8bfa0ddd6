//! Ginzburg–Landau vortex dynamics for tangent vector fields on the round sphere and
//! the flat torus: GL heat flow, vortex tracking, the renormalized energy and its
//! gradient flow, and the checks tying them together.

pub mod canonical;
pub mod error;
pub mod field;
pub mod flow;
pub mod geometry;
pub mod green;
pub mod harness;
pub mod io;
pub mod ode;
pub mod renorm;
mod spectral;
pub mod tracker;

pub use error::{Admissibility, Error, Result};
pub use geometry::{ChartPoint, Surface, TangentVec};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
