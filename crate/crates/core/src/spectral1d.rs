//! Weighted Neumann eigenproblems on an interval.
//!
//! Cells of width `h` carry masses `ρ(center)·h`; interior faces carry
//! weights `ρ(face)/h`. With `D` the face-difference matrix the generator is
//! `A = DᵀWD` against the mass `M`. Its nonzero spectrum equals that of the
//! symmetric tridiagonal flux matrix `W^{1/2} D M^{-1} Dᵀ W^{1/2}`, so the
//! constant mode is removed exactly and all entries are density ratios,
//! evaluated in log space.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::tridiag::SymTridiagonal;
use crate::measure::{level_interval, Density};
use crate::par;
use crate::quadrature::{self, Estimate};

/// Smallest accepted node count.
pub const MIN_NODES: usize = 64;

/// Eigenpairs of the discretized problem on a window.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Spectrum1D {
    pub window: (f64, f64),
    pub node_count: usize,
    /// Ascending; the first entry is the (exact) zero of the constants.
    pub eigenvalues: Vec<f64>,
    /// Cell-center values, orthonormal in the discrete `μ`-inner product.
    pub eigenvectors: Vec<Vec<f64>>,
    pub centers: Vec<f64>,
    /// Cell masses, normalized to sum 1.
    pub masses: Vec<f64>,
    /// `λ₁` extrapolated from this grid and its half-resolution grid.
    pub extrapolated_lambda1: Option<Estimate>,
}

impl Spectrum1D {
    pub fn lambda1(&self) -> f64 {
        self.eigenvalues[1]
    }

    /// Discrete `μ`-inner product of two eigenvectors.
    pub fn inner(&self, i: usize, j: usize) -> f64 {
        self.masses
            .iter()
            .zip(&self.eigenvectors[i])
            .zip(&self.eigenvectors[j])
            .map(|((m, a), b)| m * a * b)
            .sum()
    }
}

struct Grid {
    centers: Vec<f64>,
    log_centers: Vec<f64>,
    log_faces: Vec<f64>,
    h: f64,
}

fn grid(d: &Density, window: (f64, f64), nodes: usize) -> Result<Grid> {
    let (a, b) = window;
    let h = (b - a) / nodes as f64;
    let centers: Vec<f64> = (0..nodes).map(|i| a + (i as f64 + 0.5) * h).collect();
    let log_centers: Vec<f64> = centers.iter().map(|&c| d.log_density(&[c])).collect();
    let log_faces: Vec<f64> = (1..nodes).map(|j| d.log_density(&[a + j as f64 * h])).collect();
    let bad: Vec<f64> = centers
        .iter()
        .zip(&log_centers)
        .filter(|(_, l)| !l.is_finite())
        .map(|(c, _)| *c)
        .chain(
            log_faces
                .iter()
                .enumerate()
                .filter(|(_, l)| !l.is_finite())
                .map(|(j, _)| a + (j + 1) as f64 * h),
        )
        .take(8)
        .collect();
    if !bad.is_empty() {
        return Err(Error::SingularWeight(bad));
    }
    Ok(Grid { centers, log_centers, log_faces, h })
}

fn flux_matrix(g: &Grid) -> SymTridiagonal {
    let nf = g.log_faces.len();
    let h2 = g.h * g.h;
    let lc = &g.log_centers;
    let lf = &g.log_faces;
    let diag = (0..nf).map(|j| ((lf[j] - lc[j]).exp() + (lf[j] - lc[j + 1]).exp()) / h2).collect();
    let off = (0..nf.saturating_sub(1))
        .map(|j| -(0.5 * (lf[j] + lf[j + 1]) - lc[j + 1]).exp() / h2)
        .collect();
    SymTridiagonal::new(diag, off)
}

/// Smallest eigenvalues only (including the zero), without eigenvectors.
fn eigenvalues(d: &Density, window: (f64, f64), nodes: usize, k: usize) -> Result<Vec<f64>> {
    let g = grid(d, window, nodes)?;
    let mut vals = vec![0.0];
    vals.extend(flux_matrix(&g).smallest_eigenvalues(k.saturating_sub(1)));
    Ok(vals)
}

/// The `k` smallest eigenpairs (the zero mode included) on `window`.
pub fn solve_sturm_liouville(d: &Density, window: (f64, f64), nodes: usize, k: usize) -> Result<Spectrum1D> {
    if d.dim() != 1 {
        return Err(Error::DimensionMismatch(d.dim(), 1));
    }
    if nodes < MIN_NODES {
        return Err(Error::InvalidSpec(format!("need at least {MIN_NODES} nodes, got {nodes}")));
    }
    if !(window.1 > window.0) {
        return Err(Error::InvalidSpec(format!("empty window {window:?}")));
    }
    let k = k.clamp(2, nodes);
    let g = grid(d, window, nodes)?;
    let c = flux_matrix(&g);
    let vals = c.smallest_eigenvalues(k - 1);

    let top = g.log_centers.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let log_m: Vec<f64> = g.log_centers.iter().map(|l| l - top).collect();
    let total: f64 = log_m.iter().map(|l| l.exp()).sum();
    let masses: Vec<f64> = log_m.iter().map(|l| l.exp() / total).collect();
    let sqrt_m: Vec<f64> = masses.iter().map(|m| m.sqrt()).collect();

    let mut eigenvalues = vec![0.0];
    let mut eigenvectors = vec![vec![1.0; nodes]];
    let mut previous: Vec<Vec<f64>> = Vec::new();
    let half = |i: usize, j: usize| (0.5 * (g.log_faces[j] - g.log_centers[i])).exp();
    for (idx, &lam) in vals.iter().enumerate() {
        let gv = c.eigenvector(lam, &previous, 0x5eed + idx as u64);
        // y = M^{-1/2} Dᵀ W^{1/2} g, up to a constant factor
        let mut y: Vec<f64> = (0..nodes)
            .map(|i| {
                let left = if i > 0 { half(i, i - 1) * gv[i - 1] } else { 0.0 };
                let right = if i + 1 < nodes { half(i, i) * gv[i] } else { 0.0 };
                left - right
            })
            .collect();
        let norm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        let pivot = y.iter().cloned().fold(0.0f64, |m, v| if v.abs() > m.abs() { v } else { m });
        let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
        for v in y.iter_mut() {
            *v *= sign / norm;
        }
        let u: Vec<f64> = y.iter().zip(&sqrt_m).map(|(v, s)| if *s > 0.0 { v / s } else { 0.0 }).collect();
        previous.push(gv);
        eigenvalues.push(lam);
        eigenvectors.push(u);
    }
    Ok(Spectrum1D {
        window,
        node_count: nodes,
        eigenvalues,
        eigenvectors,
        centers: g.centers,
        masses,
        extrapolated_lambda1: None,
    })
}

/// `λ₁` from grids of `nodes` and `2·nodes` cells, with the second-order
/// extrapolation `λ_{2N} + (λ_{2N} - λ_N)/3`.
pub fn richardson_lambda1(d: &Density, window: (f64, f64), nodes: usize) -> Result<Estimate> {
    let pair = par::map(0..2, |i| eigenvalues(d, window, nodes << i, 2));
    let mut it = pair.into_iter();
    let coarse = it.next().expect("two grids")?[1];
    let fine = it.next().expect("two grids")?[1];
    let delta = (fine - coarse) / 3.0;
    Ok(Estimate { value: fine + delta, error: delta.abs() })
}

/// Options for [`poincare_1d`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Poincare1DOptions {
    /// Base window; defaults to mean ± `std_multiple`·std, clipped to the support.
    pub window: Option<(f64, f64)>,
    pub std_multiple: f64,
    pub nodes: usize,
    /// Allowed relative change of `λ₁` when the window doubles.
    pub tolerance: f64,
    pub max_doublings: usize,
}

impl Default for Poincare1DOptions {
    fn default() -> Self {
        Self { window: None, std_multiple: 40.0, nodes: 4096, tolerance: 5e-3, max_doublings: 5 }
    }
}

/// Poincaré constant estimate with its provenance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PoincareEstimate {
    #[serde(rename = "lambda")]
    pub lambdas: Vec<f64>,
    pub cp: f64,
    pub error: f64,
    pub window: (f64, f64),
    pub nodes: usize,
}

/// Mass, mean and variance of a 1-D density by adaptive quadrature.
pub fn moments_1d(d: &Density) -> Result<(f64, f64, f64)> {
    let (lo, hi, mode) = numerical_support(d)?;
    let top = d.log_density(&[mode]);
    let w = |t: f64| (d.log_density(&[t]) - top).exp();
    let q = |f: &dyn Fn(f64) -> f64| {
        quadrature::adaptive(f, lo, mode, 1e-300, 1e-12).value + quadrature::adaptive(f, mode, hi, 1e-300, 1e-12).value
    };
    let m0 = q(&|t| w(t));
    let m1 = q(&|t| t * w(t)) / m0;
    let m2 = q(&|t| (t - m1) * (t - m1) * w(t)) / m0;
    Ok((m0 * top.exp(), m1, m2))
}

fn mode_1d(d: &Density) -> f64 {
    let (a, b) = d.support_box()[0];
    let n = 2048;
    let mut best = (f64::NEG_INFINITY, 0.5 * (a + b));
    for i in 0..=n {
        let t = a + (b - a) * i as f64 / n as f64;
        let l = d.log_density(&[t]);
        if l > best.0 {
            best = (l, t);
        }
    }
    best.1
}

/// Interval where `log ρ` is within 745 of its maximum, and the mode.
fn numerical_support(d: &Density) -> Result<(f64, f64, f64)> {
    let mode = mode_1d(d);
    let (lo, hi) = level_interval(|t| d.log_density(&[t]), mode, 745.0)?;
    Ok((lo, hi, mode))
}

/// Level drop beyond which density values cannot affect `λ₁` in double precision.
const IRRELEVANT_DROP: f64 = 200.0;

fn default_window(d: &Density, opts: &Poincare1DOptions) -> Result<(f64, f64)> {
    let (_, mean, var) = moments_1d(d)?;
    let half = opts.std_multiple * var.sqrt();
    let mode = mode_1d(d);
    let (lo, hi) = level_interval(|t| d.log_density(&[t]), mode, IRRELEVANT_DROP)?;
    Ok(((mean - half).max(lo), (mean + half).min(hi)))
}

fn grow(d: &Density, w: (f64, f64)) -> Result<(f64, f64)> {
    let c = 0.5 * (w.0 + w.1);
    let r = w.1 - w.0;
    let (lo, hi) = level_interval(|t| d.log_density(&[t]), mode_1d(d), IRRELEVANT_DROP)?;
    Ok(((c - r).max(lo), (c + r).min(hi)))
}

/// `C_P = 1/λ₁` with grid extrapolation and a window-growth convergence check.
pub fn poincare_1d(d: &Density, opts: &Poincare1DOptions) -> Result<PoincareEstimate> {
    if d.dim() != 1 {
        return Err(Error::DimensionMismatch(d.dim(), 1));
    }
    let mut window = match opts.window {
        Some(w) => w,
        None => default_window(d, opts)?,
    };
    let mut nodes = opts.nodes.max(MIN_NODES);
    let mut last_change = f64::INFINITY;
    for _ in 0..=opts.max_doublings {
        let wider = grow(d, window)?;
        let wider_nodes = ((nodes as f64) * (wider.1 - wider.0) / (window.1 - window.0)).ceil() as usize;
        let base = richardson_lambda1(d, window, nodes)?;
        let big = richardson_lambda1(d, wider, wider_nodes)?;
        let change = (big.value - base.value).abs();
        last_change = change / big.value;
        if change <= opts.tolerance * big.value {
            let spec = solve_sturm_liouville(d, wider, wider_nodes, 4)?;
            let error = big.error + change;
            return Ok(PoincareEstimate {
                lambdas: spec.eigenvalues,
                cp: 1.0 / big.value,
                error: error / (big.value * big.value),
                window: wider,
                nodes: wider_nodes,
            });
        }
        if wider == window {
            break;
        }
        window = wider;
        nodes = wider_nodes;
    }
    Err(Error::NotConverged { change: last_change, tolerance: opts.tolerance })
}

/// `(φ(0)^{-2}/12, φ(0)^{-2})` for an even log-concave normalized density.
pub fn bobkov_bracket(d: &Density) -> Result<(f64, f64)> {
    if d.dim() != 1 || !d.is_normalized() {
        return Err(Error::NotNormalized);
    }
    let phi0 = d.density_at_origin().ok_or(Error::NotNormalized)?;
    let top = 1.0 / (phi0 * phi0);
    Ok((top / 12.0, top))
}

/// `λ₁` of the restriction of `d` to the line `anchor + ℝ e_axis`.
pub fn conditional_gap(d: &Density, axis: usize, anchor: &[f64]) -> Result<f64> {
    let line = d.restrict_to_line(axis, anchor);
    let mode = mode_1d(&line);
    let (lo, hi) = level_interval(|t| line.log_density(&[t]), mode, 40.0)?;
    Ok(richardson_lambda1(&line, (lo, hi), 2048)?.value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::{build_measure, MeasureSpec};

    #[test]
    fn interval_eigenvalues_and_orthonormality() {
        let d = build_measure(&MeasureSpec::uniform_interval(-0.5, 0.5)).unwrap();
        let s = solve_sturm_liouville(&d, (-0.5, 0.5), 1024, 4).unwrap();
        let pi2 = std::f64::consts::PI.powi(2);
        for k in 1..4 {
            let want = (k * k) as f64 * pi2;
            assert!((s.eigenvalues[k] - want).abs() < 1e-4 * want, "{k}: {}", s.eigenvalues[k]);
        }
        for i in 0..4 {
            for j in 0..4 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((s.inner(i, j) - want).abs() < 1e-8, "{i},{j}: {}", s.inner(i, j));
            }
        }
        // the first eigenfunction is cos(π(t+1/2)) up to sign and scale
        let f = &s.eigenvectors[1];
        let r = f[0] / (std::f64::consts::PI * (s.centers[0] + 0.5)).cos();
        for (c, v) in s.centers.iter().zip(f).step_by(97) {
            assert!((v - r * (std::f64::consts::PI * (c + 0.5)).cos()).abs() < 1e-4);
        }
    }

    #[test]
    fn richardson_beats_the_fine_grid() {
        let d = build_measure(&MeasureSpec::uniform_interval(-0.5, 0.5)).unwrap();
        let e = richardson_lambda1(&d, (-0.5, 0.5), 128).unwrap();
        let pi2 = std::f64::consts::PI.powi(2);
        let fine = eigenvalues(&d, (-0.5, 0.5), 256, 2).unwrap()[1];
        assert!((e.value - pi2).abs() < (fine - pi2).abs() / 10.0);
    }
}
