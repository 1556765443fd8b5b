//! Monte Carlo probes of Bakry–Émery curvature and boundary second
//! fundamental form for reflecting diffusions on a catalog of test manifolds,
//! together with numerical checks of path-space gradient, Poincaré and
//! log-Sobolev inequalities.

pub mod conformal;
pub mod diffusion;
pub mod estimators;
pub mod error;
pub mod geometry;
pub mod inequalities;
pub mod pathspace;
pub mod rng;
pub mod stats;
pub mod transport;

pub use error::{Error, Result};
