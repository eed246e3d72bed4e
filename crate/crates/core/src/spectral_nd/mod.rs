//! Tensor-grid spectral analysis in dimensions 2 and 3.

mod analysis;
mod grid;
mod spectrum;

pub use analysis::{
    brascamp_lieb_check, commutant_dimension, eigenspace_structure, hminus_norm, partial_derivative, transform,
    verify_variance_inequality, variance_inequality_extrapolated, write_heatmap_csv, BrascampLieb, EigenspaceStructure, SignedPermutation,
    VarianceCheck,
};
pub use grid::{assemble_generator, assemble_on, centered_box, GridOperator, DEFAULT_MEMORY_BUDGET};
pub use spectrum::{
    cluster, lowest_spectrum, parity_scores, reflection, verify_interlacing, InterlaceReport, Parity, ParityLabel,
    SpectrumOptions, SpectrumReport, BAND_ENTRY_BUDGET,
};

use crate::error::Result;
use crate::measure::Density;
use crate::quadrature::Estimate;

/// `λ₁` at `resolution` and `resolution/2`, extrapolated with exponent 2.
pub fn refine_lambda1(d: &Density, resolution: usize, opts: &SpectrumOptions) -> Result<Estimate> {
    let opts = SpectrumOptions { count: 1, ..opts.clone() };
    let fine = lowest_spectrum(&assemble_generator(d, resolution)?, &opts)?.lambda1();
    let coarse = lowest_spectrum(&assemble_generator(d, resolution / 2)?, &opts)?.lambda1();
    let delta = (fine - coarse) / 3.0;
    Ok(Estimate { value: fine + delta, error: delta.abs() })
}
