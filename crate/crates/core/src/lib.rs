//! Spectral Faedo-Galerkin solver for a linearized fictitious-domain model of
//! a viscous solid immersed in a viscous fluid.

pub mod coupling;
pub mod diagnostics;
pub mod error;
pub mod evolution;
pub mod fem;
pub mod geometry;
pub mod io;
pub mod linalg;
pub mod pipeline;
pub mod recovery;
pub mod scenario;
pub mod spectral;

pub use error::{Error, Result};
