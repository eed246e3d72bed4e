//! Dual norms, variance inequalities and eigenspace structure on grids.

use std::io::Write;
use std::sync::Mutex;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::grid::GridOperator;
use super::spectrum::{Preconditioner, SpectrumReport};
use crate::error::{Error, Result};
use crate::linalg::cg;
use crate::measure::{integrate_many, Density};

/// `√(fᵀ M A⁺ M f)` for a `μ`-centered grid function `f`.
pub fn hminus_norm(op: &GridOperator, f: &[f64]) -> Result<f64> {
    hminus_norm_with(op, f, &Preconditioner::build(op))
}

pub(crate) fn hminus_norm_with(op: &GridOperator, f: &[f64], pc: &Preconditioner) -> Result<f64> {
    let scale = op.inner(f, f).sqrt();
    if scale == 0.0 {
        return Ok(0.0);
    }
    let mean = op.mean(f);
    if mean.abs() > 1e-8 * scale {
        return Err(Error::NotCentered(mean));
    }
    let g = op.to_symmetric(f);
    let mut kernel = op.kernel.clone();
    let kn = crate::linalg::norm(&kernel);
    crate::linalg::scale(1.0 / kn, &mut kernel);
    let b = &op.symmetric;
    let out = cg::solve(
        |x: &[f64], y: &mut [f64]| b.matvec(x, y),
        Some(|v: &mut [f64]| pc.apply(v)),
        std::slice::from_ref(&kernel),
        &g,
        1e-11,
        20 * op.len().max(100),
    )?;
    Ok(crate::linalg::dot(&g, &out.solution).max(0.0).sqrt())
}

/// Centered difference along `axis`, one-sided where a neighbour is missing.
pub fn partial_derivative(op: &GridOperator, f: &[f64], axis: usize) -> Vec<f64> {
    let h = op.spacing[axis];
    (0..op.len())
        .map(|c| match (op.neighbour(c, axis, -1), op.neighbour(c, axis, 1)) {
            (Some(l), Some(r)) => (f[r] - f[l]) / (2.0 * h),
            (None, Some(r)) => (f[r] - f[c]) / h,
            (Some(l), None) => (f[c] - f[l]) / h,
            (None, None) => 0.0,
        })
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VarianceCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
    /// Linear correction `θ` subtracted from `f` so each `∂_i f` is centered.
    pub correction: Vec<f64>,
    pub terms: Vec<f64>,
}

/// `Var_μ(f) ≤ Σ_i ‖∂_i f‖²_{H⁻¹(μ)}` on the grid.
pub fn verify_variance_inequality(op: &GridOperator, f: &[f64], rel_tol: f64) -> Result<VarianceCheck> {
    let pc = Preconditioner::build(op);
    let parts: Vec<Vec<f64>> = (0..op.dim).map(|k| partial_derivative(op, f, k)).collect();
    let correction: Vec<f64> = parts.iter().map(|p| op.mean(p)).collect();
    let coords: Vec<Vec<f64>> = (0..op.dim).map(|k| op.sample(|x| x[k])).collect();
    let mut g = f.to_vec();
    for (theta, x) in correction.iter().zip(&coords) {
        crate::linalg::axpy(-theta, x, &mut g);
    }
    let lhs = op.variance(&g);
    let mut terms = Vec::with_capacity(op.dim);
    for (p, theta) in parts.iter().zip(&correction) {
        let centered: Vec<f64> = p.iter().map(|v| v - theta).collect();
        let r = hminus_norm_with(op, &centered, &pc)?;
        terms.push(r * r);
    }
    let rhs: f64 = terms.iter().sum();
    Ok(VarianceCheck { lhs, rhs, holds: lhs <= rhs * (1.0 + rel_tol) + 1e-14, correction, terms })
}

/// Variance inequality for a function, checked on grids of `resolution` and
/// `resolution/2` cells per axis with both sides extrapolated to `h → 0`.
pub fn variance_inequality_extrapolated<F>(
    d: &Density,
    f: F,
    bx: &[(f64, f64)],
    resolution: usize,
    rel_tol: f64,
) -> Result<VarianceCheck>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let run = |res: usize| -> Result<VarianceCheck> {
        let op = super::grid::assemble_on(d, bx, &vec![res; d.dim()], super::grid::DEFAULT_MEMORY_BUDGET)?;
        verify_variance_inequality(&op, &op.sample(&f), rel_tol)
    };
    let fine = run(resolution)?;
    let coarse = run(resolution / 2)?;
    let ext = |a: f64, b: f64| (4.0 * a - b) / 3.0;
    let lhs = ext(fine.lhs, coarse.lhs);
    let terms: Vec<f64> = fine.terms.iter().zip(&coarse.terms).map(|(a, b)| ext(*a, *b).max(0.0)).collect();
    let rhs: f64 = terms.iter().sum();
    Ok(VarianceCheck { lhs, rhs, holds: lhs <= rhs * (1.0 + rel_tol) + 1e-14, correction: fine.correction, terms })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BrascampLieb {
    pub variance: f64,
    pub weighted_energy: f64,
    pub holds: bool,
    pub error: f64,
}

/// `Var_μ(f) ≤ ∫ ⟨(D²V)^{-1} ∇f, ∇f⟩ dμ` by grid quadrature (dimension ≤ 3).
pub fn brascamp_lieb_check<F>(d: &Density, f: F, resolution: usize) -> Result<BrascampLieb>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let n = d.dim();
    let failed: Mutex<Option<Vec<f64>>> = Mutex::new(None);
    let (est, _) = integrate_many(
        d,
        3,
        |x, out| {
            let fx = f(x);
            let mut grad = vec![0.0; n];
            let mut y = x.to_vec();
            for k in 0..n {
                let h = 1e-5 * (1.0 + x[k].abs());
                y[k] = x[k] + h;
                let fp = f(&y);
                y[k] = x[k] - h;
                let fm = f(&y);
                y[k] = x[k];
                grad[k] = (fp - fm) / (2.0 * h);
            }
            let hess = d.potential_hessian(x);
            let weighted = match hess.clone().cholesky() {
                Some(ch) => {
                    let g = nalgebra::DVector::from_vec(grad);
                    g.dot(&ch.solve(&g))
                }
                None => {
                    let mut slot = failed.lock().expect("poisoned");
                    if slot.is_none() {
                        *slot = Some(x.to_vec());
                    }
                    0.0
                }
            };
            out[0] = fx;
            out[1] = fx * fx;
            out[2] = weighted;
        },
        resolution,
    )?;
    if let Some(p) = failed.into_inner().expect("poisoned") {
        return Err(Error::HessianNotPd(p));
    }
    let variance = est[1].value - est[0].value * est[0].value;
    let error = est.iter().map(|e| e.error).sum::<f64>() + 1e-9 * est[1].value.abs();
    let weighted_energy = est[2].value;
    Ok(BrascampLieb { variance, weighted_energy, holds: variance <= weighted_energy + error, error })
}

/// `x ↦ (signs[i] · x[perm[i]])_i`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SignedPermutation {
    pub perm: Vec<usize>,
    pub signs: Vec<i8>,
}

impl SignedPermutation {
    pub fn identity(n: usize) -> Self {
        Self { perm: (0..n).collect(), signs: vec![1; n] }
    }

    pub fn flip(n: usize, axis: usize) -> Self {
        let mut s = Self::identity(n);
        s.signs[axis] = -1;
        s
    }

    pub fn swap(n: usize, i: usize, j: usize) -> Self {
        let mut s = Self::identity(n);
        s.perm.swap(i, j);
        s
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        let n = self.perm.len();
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            m[(i, self.perm[i])] = self.signs[i] as f64;
        }
        m
    }

    /// `(self ∘ other)(x) = self(other(x))`.
    pub fn compose(&self, other: &Self) -> Self {
        let n = self.perm.len();
        let mut perm = vec![0; n];
        let mut signs = vec![1; n];
        for i in 0..n {
            perm[i] = other.perm[self.perm[i]];
            signs[i] = self.signs[i] * other.signs[self.perm[i]];
        }
        Self { perm, signs }
    }

    /// Generated group, elements in discovery order.
    pub fn closure(generators: &[Self]) -> Vec<Self> {
        let Some(first) = generators.first() else { return vec![] };
        let mut group = vec![Self::identity(first.perm.len())];
        let mut i = 0;
        while i < group.len() {
            for g in generators {
                let h = group[i].compose(g);
                if !group.contains(&h) {
                    group.push(h);
                }
            }
            i += 1;
        }
        group
    }

    /// All sign flips and coordinate permutations.
    pub fn cube_group(n: usize) -> Vec<Self> {
        let mut gens: Vec<Self> = (0..n).map(|k| Self::flip(n, k)).collect();
        gens.extend((1..n).map(|k| Self::swap(n, 0, k)));
        Self::closure(&gens)
    }

    /// All sign flips.
    pub fn flip_group(n: usize) -> Vec<Self> {
        Self::closure(&(0..n).map(|k| Self::flip(n, k)).collect::<Vec<_>>())
    }
}

/// Dimension of the commutant of a matrix group; 1 means absolutely irreducible.
pub fn commutant_dimension(group: &[SignedPermutation]) -> usize {
    let Some(first) = group.first() else { return 0 };
    let n = first.perm.len();
    let nn = n * n;
    let mut rows: Vec<f64> = Vec::new();
    let mut count = 0;
    for g in group {
        let r = g.matrix();
        // R X - X R = 0, X vectorized column-major
        for i in 0..n {
            for j in 0..n {
                let mut row = vec![0.0; nn];
                for k in 0..n {
                    row[k + j * n] += r[(i, k)];
                    row[i + k * n] -= r[(k, j)];
                }
                rows.extend(row);
                count += 1;
            }
        }
    }
    let m = DMatrix::from_row_slice(count, nn, &rows);
    let sv = m.svd(false, false).singular_values;
    nn - sv.iter().filter(|&&s| s > 1e-9).count()
}

fn action_map(op: &GridOperator, r: &SignedPermutation) -> Result<Vec<usize>> {
    let n = op.dim;
    let symmetric = (0..n).all(|i| {
        let j = r.perm[i];
        op.shape[i] == op.shape[j]
            && (op.spacing[i] - op.spacing[j]).abs() <= 1e-12 * op.spacing[i]
            && (op.lower[i] + op.spacing[i] * op.shape[i] as f64 * 0.5).abs() <= 1e-12 * op.spacing[i] * op.shape[i] as f64
    });
    if !symmetric || r.perm.len() != n {
        return Err(Error::GroupDoesNotPreserveGrid(format!("{r:?} does not map the grid to itself")));
    }
    let mut out = Vec::with_capacity(op.len());
    for &flat in &op.cells {
        let idx = op.multi_index(flat);
        // (f∘R)(x) = f(Rx); (Rx)_i = s_i x_{perm[i]}
        let img: Vec<usize> = (0..n)
            .map(|i| {
                let v = idx[r.perm[i]];
                if r.signs[i] < 0 {
                    op.shape[i] - 1 - v
                } else {
                    v
                }
            })
            .collect();
        let j = op.lookup[op.flat_index(&img)];
        if j == usize::MAX {
            return Err(Error::GroupDoesNotPreserveGrid(format!("{r:?} maps a kept cell outside the support")));
        }
        out.push(j);
    }
    Ok(out)
}

/// `f ∘ R` on the grid.
pub fn transform(op: &GridOperator, f: &[f64], r: &SignedPermutation) -> Result<Vec<f64>> {
    Ok(action_map(op, r)?.into_iter().map(|j| f[j]).collect())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EigenspaceStructure {
    pub multiplicity: usize,
    /// Dimension of `span{f₁∘R}` over the group.
    pub orbit_span_dimension: usize,
    /// Largest relative distance of an orbit element from the `λ₁` eigenspace.
    pub orbit_leakage: f64,
    pub group_order: usize,
    pub commutant_dimension: usize,
    /// The group has no invariant proper subspace of `ℝⁿ`.
    pub hypothesis_met: bool,
    pub dimension_equals_n: bool,
    /// `min_± ‖f₂ ∓ f₁∘T₁₂‖ / ‖f₁‖` when the swap of the first two axes is in the group.
    pub swap_relation: Option<f64>,
    /// `|⟨f₁, f₂⟩_μ| / (‖f₁‖‖f₂‖)`.
    pub pair_inner: Option<f64>,
}

/// Relates the `λ₁` eigenspace to the orbit of its first vector under `group`.
pub fn eigenspace_structure(
    op: &GridOperator,
    report: &SpectrumReport,
    group: &[SignedPermutation],
) -> Result<EigenspaceStructure> {
    let group = SignedPermutation::closure(group);
    let cluster = report.first_cluster().to_vec();
    let basis: Vec<&Vec<f64>> = cluster.iter().map(|&i| &report.eigenvectors[i]).collect();
    let f1 = basis[0];
    let orbit: Vec<Vec<f64>> = group.iter().map(|r| transform(op, f1, r)).collect::<Result<_>>()?;
    let norm1 = op.inner(f1, f1).sqrt();
    let mut leakage = 0.0f64;
    for g in &orbit {
        let mut resid = g.clone();
        for b in &basis {
            let c = op.inner(b, g);
            crate::linalg::axpy(-c, b, &mut resid);
        }
        leakage = leakage.max(op.inner(&resid, &resid).sqrt() / norm1);
    }
    let k = orbit.len();
    let gram = DMatrix::from_fn(k, k, |i, j| op.inner(&orbit[i], &orbit[j]));
    let (vals, _) = crate::linalg::sym_eig(&gram);
    let top = vals.last().copied().unwrap_or(0.0);
    let span = vals.iter().filter(|&&v| v > 1e-8 * top).count();
    let comm = commutant_dimension(&group);
    let n = op.dim;
    let swap = SignedPermutation::swap(n, 0, 1);
    let (swap_relation, pair_inner) = if cluster.len() >= 2 && group.contains(&swap) {
        let f2 = basis[1];
        let t = transform(op, f1, &swap)?;
        let dist = |s: f64| {
            let d: Vec<f64> = f2.iter().zip(&t).map(|(a, b)| a - s * b).collect();
            op.inner(&d, &d).sqrt() / norm1
        };
        let ip = op.inner(f1, f2).abs() / (norm1 * op.inner(f2, f2).sqrt());
        (Some(dist(1.0).min(dist(-1.0))), Some(ip))
    } else {
        (None, None)
    };
    Ok(EigenspaceStructure {
        multiplicity: cluster.len(),
        orbit_span_dimension: span,
        orbit_leakage: leakage,
        group_order: group.len(),
        commutant_dimension: comm,
        hypothesis_met: comm == 1,
        dimension_equals_n: cluster.len() == n && span == n,
        swap_relation,
        pair_inner,
    })
}

/// Writes `(x, y[, z], value)` rows for the kept cells.
pub fn write_heatmap_csv<W: Write>(op: &GridOperator, values: &[f64], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let axes = ["x", "y", "z"];
    let mut header: Vec<&str> = axes[..op.dim].to_vec();
    header.push("value");
    w.write_record(&header)?;
    for c in 0..op.len() {
        let mut rec: Vec<String> = op.center(c).iter().map(|v| format!("{v:.10e}")).collect();
        rec.push(format!("{:.10e}", values[c]));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
