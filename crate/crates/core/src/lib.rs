//! Spectral gaps and Poincaré constants of log-concave measures.

pub mod acceptance;
pub mod bounds;
pub mod error;
pub mod linalg;
pub mod measure;
pub mod mixtures;
pub mod par;
pub mod quadrature;
pub mod sampling;
pub mod spectral1d;
pub mod spectral_nd;

pub use error::{Error, Result};
