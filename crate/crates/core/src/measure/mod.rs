//! Measure specifications, density evaluators and grid quadrature.

mod body;
mod build;
mod density;
pub mod expectation;
mod spec;

pub use body::Body;
pub use build::{alpha_p, build_measure, check_psd, exact_poincare, SMOOTHING_WIDTH, TRUNCATION_LEVEL};
pub(crate) use build::level_interval;
pub use density::{Density, GradientFn, HessianFn, LogDensityFn, MembershipFn};
pub use expectation::{expectation, integrate_many, moments, total_mass};
pub use spec::{
    ConvexFn, ConvexPotential, Family, MeasureSpec, PerturbationFlags, PerturbationKind, PerturbationSpec,
    SymmetryFlags,
};
