//! Finite-volume assembly of the weighted Neumann Laplacian on a tensor grid.

use crate::error::{Error, Result};
use crate::linalg::sparse::CsrMatrix;
use crate::measure::Density;
use crate::par;

/// Default memory budget for assembly and factorization.
pub const DEFAULT_MEMORY_BUDGET: usize = 4 << 30;

/// Discretized `-L` on the kept cells of a centered box.
///
/// `symmetric` is `M^{-1/2} A M^{-1/2}`, assembled from density ratios in log
/// space; its kernel is spanned by `kernel = √m`.
#[derive(Debug, Clone)]
pub struct GridOperator {
    pub dim: usize,
    pub lower: Vec<f64>,
    pub spacing: Vec<f64>,
    pub shape: Vec<usize>,
    /// Flat box index of each kept cell.
    pub cells: Vec<usize>,
    /// Kept-cell index of each flat box index, `usize::MAX` if dropped.
    pub lookup: Vec<usize>,
    /// Stiffness `A` in units of the reference density.
    pub stiffness: CsrMatrix,
    pub symmetric: CsrMatrix,
    /// Cell masses, normalized to sum 1.
    pub mass: Vec<f64>,
    pub kernel: Vec<f64>,
    /// `Σ ρ(center)·volume` relative to the largest center value.
    pub total_mass: f64,
    pub log_center: Vec<f64>,
}

impl GridOperator {
    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    /// Multi-index of a flat box index (last axis fastest).
    pub fn multi_index(&self, flat: usize) -> Vec<usize> {
        let mut idx = vec![0; self.dim];
        let mut rest = flat;
        for k in (0..self.dim).rev() {
            idx[k] = rest % self.shape[k];
            rest /= self.shape[k];
        }
        idx
    }

    pub fn flat_index(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.shape).fold(0, |acc, (i, n)| acc * n + i)
    }

    pub fn stride(&self, axis: usize) -> usize {
        self.shape[axis + 1..].iter().product()
    }

    /// Cell center of kept cell `c`.
    pub fn center(&self, c: usize) -> Vec<f64> {
        self.multi_index(self.cells[c])
            .iter()
            .enumerate()
            .map(|(k, &i)| self.lower[k] + (i as f64 + 0.5) * self.spacing[k])
            .collect()
    }

    /// Kept-cell neighbour of `c` one step along `axis` (`dir = ±1`).
    pub fn neighbour(&self, c: usize, axis: usize, dir: i64) -> Option<usize> {
        let flat = self.cells[c];
        let i = (flat / self.stride(axis)) % self.shape[axis];
        let j = i as i64 + dir;
        if j < 0 || j >= self.shape[axis] as i64 {
            return None;
        }
        let other = (flat as i64 + dir * self.stride(axis) as i64) as usize;
        let k = self.lookup[other];
        (k != usize::MAX).then_some(k)
    }

    /// Samples `f` at kept cell centers.
    pub fn sample<F: Fn(&[f64]) -> f64 + Sync>(&self, f: F) -> Vec<f64> {
        par::map(0..self.len(), |c| f(&self.center(c)))
    }

    /// Discrete `μ`-mean.
    pub fn mean(&self, f: &[f64]) -> f64 {
        par::sum(0..self.len(), |c| self.mass[c] * f[c])
    }

    /// Discrete `μ`-inner product.
    pub fn inner(&self, f: &[f64], g: &[f64]) -> f64 {
        par::sum(0..self.len(), |c| self.mass[c] * f[c] * g[c])
    }

    pub fn variance(&self, f: &[f64]) -> f64 {
        let m = self.mean(f);
        par::sum(0..self.len(), |c| self.mass[c] * (f[c] - m).powi(2))
    }

    /// Dirichlet energy `Σ_faces w_f (Δu)²` normalized by the total mass.
    pub fn energy(&self, f: &[f64]) -> f64 {
        let mut af = vec![0.0; self.len()];
        self.stiffness.matvec(f, &mut af);
        crate::linalg::dot(f, &af) / self.total_mass
    }

    /// `(Σ w_f (Δu)²) / (Σ m_c u_c²)` after centering.
    pub fn rayleigh_quotient(&self, f: &[f64]) -> f64 {
        let m = self.mean(f);
        let g: Vec<f64> = f.iter().map(|v| v - m).collect();
        let den = self.inner(&g, &g);
        if den == 0.0 {
            return 0.0;
        }
        self.energy(&g) / den
    }

    /// `M^{1/2} f`.
    pub fn to_symmetric(&self, f: &[f64]) -> Vec<f64> {
        f.iter().zip(&self.kernel).map(|(v, s)| v * s).collect()
    }

    /// `M^{-1/2} y`.
    pub fn from_symmetric(&self, y: &[f64]) -> Vec<f64> {
        y.iter().zip(&self.kernel).map(|(v, s)| v / s).collect()
    }

    /// Half-widths of the variance of each coordinate under the grid measure.
    pub fn coordinate_variances(&self) -> Vec<f64> {
        (0..self.dim)
            .map(|k| {
                let x = self.sample(|p| p[k]);
                self.variance(&x)
            })
            .collect()
    }
}

/// Symmetric box `[-r_k, r_k]` covering the density's support box.
pub fn centered_box(d: &Density) -> Vec<(f64, f64)> {
    let radii: Vec<f64> = d.support_box().iter().map(|&(a, b)| a.abs().max(b.abs())).collect();
    let tight = level_set_radii(d, &radii);
    radii
        .iter()
        .zip(tight)
        .map(|(&r, t)| {
            // only shrink boxes that are clearly too generous
            let r = if t < 0.8 * r { t } else { r };
            (-r, r)
        })
        .collect()
}

/// Cells whose log-density falls this far below the top are dropped.
const LOG_UNDERFLOW: f64 = 600.0;

/// Per-axis extent of `{log ρ ≥ max log ρ - drop}` found by a coarse scan, padded
/// by two scan cells. Falls back to `radii` in dimension above 3.
fn level_set_radii(d: &Density, radii: &[f64]) -> Vec<f64> {
    let n = d.dim();
    if !(2..=3).contains(&n) {
        return radii.to_vec();
    }
    let m: usize = if n == 2 { 257 } else { 65 };
    let total = m.pow(n as u32);
    let point = |flat: usize| -> Vec<f64> {
        (0..n)
            .map(|k| {
                let i = (flat / m.pow((n - 1 - k) as u32)) % m;
                radii[k] * (2.0 * i as f64 / (m - 1) as f64 - 1.0)
            })
            .collect()
    };
    let logs: Vec<f64> = par::map(0..total, |f| {
        let x = point(f);
        if d.contains(&x) {
            d.log_density(&x)
        } else {
            f64::NEG_INFINITY
        }
    });
    let top = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !top.is_finite() {
        return radii.to_vec();
    }
    let drop = -crate::measure::TRUNCATION_LEVEL.ln();
    let mut out = vec![0.0f64; n];
    for (f, &l) in logs.iter().enumerate() {
        if l >= top - drop {
            for (o, x) in out.iter_mut().zip(point(f)) {
                *o = o.max(x.abs());
            }
        }
    }
    out.iter().zip(radii).map(|(&o, &r)| (o + 4.0 * r / (m - 1) as f64).min(r)).collect()
}

/// Assembles on the centered box with `resolution` cells per axis (rounded up to even).
pub fn assemble_generator(d: &Density, resolution: usize) -> Result<GridOperator> {
    let shape = vec![resolution + (resolution & 1); d.dim()];
    assemble_on(d, &centered_box(d), &shape, DEFAULT_MEMORY_BUDGET)
}

/// Assembles on an explicit box.
pub fn assemble_on(d: &Density, bx: &[(f64, f64)], shape: &[usize], budget: usize) -> Result<GridOperator> {
    let n = d.dim();
    if !(2..=3).contains(&n) {
        return Err(Error::InvalidSpec(format!("grid operators need dimension 2 or 3, got {n}")));
    }
    if bx.len() != n || shape.len() != n {
        return Err(Error::DimensionMismatch(bx.len().min(shape.len()), n));
    }
    if shape.iter().any(|&s| s < 32) {
        return Err(Error::InvalidSpec(format!("resolution must be at least 32 per axis, got {shape:?}")));
    }
    let rows: usize = shape.iter().product();
    let bytes = rows * (2 * n + 1) * 2 * (8 + 8) + rows * 64;
    if bytes > budget {
        return Err(Error::OutOfMemory { rows, bytes });
    }
    let lower: Vec<f64> = bx.iter().map(|b| b.0).collect();
    let spacing: Vec<f64> = bx.iter().zip(shape).map(|(b, &s)| (b.1 - b.0) / s as f64).collect();
    let strides: Vec<usize> = (0..n).map(|k| shape[k + 1..].iter().product()).collect();
    let point = |flat: usize, offset: Option<usize>| -> Vec<f64> {
        (0..n)
            .map(|k| {
                let i = (flat / strides[k]) % shape[k];
                let half = if offset == Some(k) { 1.0 } else { 0.5 };
                lower[k] + (i as f64 + half) * spacing[k]
            })
            .collect()
    };

    let log_all: Vec<f64> = par::map(0..rows, |flat| {
        let x = point(flat, None);
        if d.contains(&x) {
            d.log_density(&x)
        } else {
            f64::NEG_INFINITY
        }
    });
    let has_membership = d.membership().is_some();
    if !has_membership {
        let bad: Vec<f64> = log_all
            .iter()
            .enumerate()
            .filter(|(_, l)| !l.is_finite())
            .take(1)
            .flat_map(|(flat, _)| point(flat, None))
            .collect();
        if !bad.is_empty() {
            return Err(Error::SingularWeight(bad));
        }
    }
    let peak = log_all.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let cells: Vec<usize> = (0..rows).filter(|&f| log_all[f].is_finite() && log_all[f] >= peak - LOG_UNDERFLOW).collect();
    if cells.is_empty() {
        return Err(Error::SingularWeight(vec![]));
    }
    let mut lookup = vec![usize::MAX; rows];
    for (c, &f) in cells.iter().enumerate() {
        lookup[f] = c;
    }
    let log_center: Vec<f64> = cells.iter().map(|&f| log_all[f]).collect();
    let top = log_center.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let vol: f64 = spacing.iter().product();

    // (column, A value relative to exp(top), B value) per row; upper faces computed
    // once per cell and mirrored below.
    let faces: Vec<Vec<(usize, usize, f64)>> = par::map(0..cells.len(), |c| {
        let flat = cells[c];
        let mut out = Vec::with_capacity(n);
        for k in 0..n {
            let i = (flat / strides[k]) % shape[k];
            if i + 1 == shape[k] {
                continue;
            }
            let other = lookup[flat + strides[k]];
            if other == usize::MAX {
                continue;
            }
            let lf = d.log_density(&point(flat, Some(k)));
            if lf.is_finite() {
                out.push((k, other, lf));
            }
        }
        out
    });
    let mut a_rows: Vec<Vec<(usize, f64)>> = vec![Vec::with_capacity(2 * n + 1); cells.len()];
    let mut b_rows: Vec<Vec<(usize, f64)>> = vec![Vec::with_capacity(2 * n + 1); cells.len()];
    let mut a_diag = vec![0.0; cells.len()];
    let mut b_diag = vec![0.0; cells.len()];
    for (c, fs) in faces.iter().enumerate() {
        for &(k, o, lf) in fs {
            let h2 = spacing[k] * spacing[k];
            let wa = (lf - top).exp() * vol / h2;
            let wb = (lf - 0.5 * (log_center[c] + log_center[o])).exp() / h2;
            a_rows[c].push((o, -wa));
            a_rows[o].push((c, -wa));
            a_diag[c] += wa;
            a_diag[o] += wa;
            b_rows[c].push((o, -wb));
            b_rows[o].push((c, -wb));
            b_diag[c] += (lf - log_center[c]).exp() / h2;
            b_diag[o] += (lf - log_center[o]).exp() / h2;
        }
    }
    for c in 0..cells.len() {
        a_rows[c].push((c, a_diag[c]));
        b_rows[c].push((c, b_diag[c]));
    }
    let rel: Vec<f64> = log_center.iter().map(|l| (l - top).exp()).collect();
    let total: f64 = rel.iter().sum();
    let mass: Vec<f64> = rel.iter().map(|r| r / total).collect();
    let kernel: Vec<f64> = mass.iter().map(|m| m.sqrt()).collect();
    Ok(GridOperator {
        dim: n,
        lower,
        spacing,
        shape: shape.to_vec(),
        cells,
        lookup,
        stiffness: CsrMatrix::from_rows(a_rows),
        symmetric: CsrMatrix::from_rows(b_rows),
        mass,
        kernel,
        total_mass: total * vol,
        log_center,
    })
}
