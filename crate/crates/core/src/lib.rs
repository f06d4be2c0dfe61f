//! Closed geodesics on Riemannian manifolds with isometric group actions and
//! on developable orbifolds, by discrete Birkhoff curve shortening, min-max
//! over sweepouts, and reduction to singular strata.

pub mod cli;
pub mod error;
pub mod exec;
pub mod geodesic;
pub mod loops;
pub mod manifold;
pub mod orbifold;
pub mod shortening;
pub mod symmetry;

pub use error::{Error, Result};
