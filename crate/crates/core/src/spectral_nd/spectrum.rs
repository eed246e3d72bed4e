//! Lowest eigenpairs of a [`GridOperator`] with parity labels.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::grid::GridOperator;
use crate::error::{Error, Result};
use crate::linalg::band::BandCholesky;
use crate::linalg::lobpcg::{jacobi, lobpcg, LobpcgOptions};
use crate::linalg::sym_eig;

/// Entries of the banded preconditioner factor allowed before falling back to Jacobi.
pub const BAND_ENTRY_BUDGET: usize = 20_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Parity {
    Even,
    Odd,
    None,
}

/// Symmetry labels of one eigenvector.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParityLabel {
    pub global: Parity,
    /// `(‖f∘S - f‖, ‖f∘S + f‖) / ‖f‖` for the global flip `S x = -x`.
    pub global_scores: (f64, f64),
    pub coordinates: Vec<Parity>,
    pub coordinate_scores: Vec<(f64, f64)>,
    /// Coordinates in which the function is even, when every coordinate is labeled.
    pub type_i: Option<Vec<usize>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpectrumOptions {
    /// Nontrivial eigenpairs requested.
    pub count: usize,
    /// Residual tolerance relative to the operator norm bound.
    pub tolerance: f64,
    /// Relative gap below which eigenvalues form one cluster.
    pub cluster_gap: f64,
    /// Score below which a parity label is assigned.
    pub parity_threshold: f64,
    pub max_iter: usize,
    pub seed: u64,
}

impl Default for SpectrumOptions {
    fn default() -> Self {
        Self { count: 6, tolerance: 1e-10, cluster_gap: 1e-3, parity_threshold: 1e-6, max_iter: 5000, seed: 0x1a4b }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpectrumReport {
    /// Ascending, starting with the zero of the constants.
    pub eigenvalues: Vec<f64>,
    /// Kept-cell values, orthonormal in the discrete `μ`-inner product.
    #[serde(skip)]
    pub eigenvectors: Vec<Vec<f64>>,
    pub parity: Vec<ParityLabel>,
    /// Index groups of eigenvalues closer than the cluster gap.
    pub multiplicity_groups: Vec<Vec<usize>>,
    /// `‖B y - λ y‖` for the symmetrized operator `B`.
    pub residuals: Vec<f64>,
    pub norm_bound: f64,
    pub iterations: usize,
    pub preconditioner: String,
}

impl SpectrumReport {
    pub fn lambda1(&self) -> f64 {
        self.eigenvalues[1]
    }

    /// Indices of the cluster containing `λ₁`.
    pub fn first_cluster(&self) -> &[usize] {
        &self.multiplicity_groups[1]
    }

    pub fn poincare_constant(&self) -> f64 {
        1.0 / self.lambda1()
    }
}

/// Coordinate flip (`axis = Some(k)`) or global flip (`None`) as a map on kept cells.
pub fn reflection(op: &GridOperator, axis: Option<usize>) -> Option<Vec<usize>> {
    let mut out = Vec::with_capacity(op.len());
    for &flat in &op.cells {
        let mut idx = op.multi_index(flat);
        for (k, i) in idx.iter_mut().enumerate() {
            if axis.is_none_or(|a| a == k) {
                *i = op.shape[k] - 1 - *i;
            }
        }
        let j = op.lookup[op.flat_index(&idx)];
        if j == usize::MAX {
            return None;
        }
        out.push(j);
    }
    let centered = op.lower.iter().zip(&op.spacing).zip(&op.shape).all(|((l, h), &s)| {
        let upper = l + h * s as f64;
        (l + upper).abs() <= 1e-12 * (upper - l)
    });
    centered.then_some(out)
}

fn compose(f: &[f64], map: &[usize]) -> Vec<f64> {
    map.iter().map(|&j| f[j]).collect()
}

/// `(‖f∘S - f‖_μ, ‖f∘S + f‖_μ) / ‖f‖_μ`.
pub fn parity_scores(op: &GridOperator, f: &[f64], map: &[usize]) -> (f64, f64) {
    let g = compose(f, map);
    let nf = op.inner(f, f).sqrt();
    if nf == 0.0 {
        return (0.0, 0.0);
    }
    let d: Vec<f64> = g.iter().zip(f).map(|(a, b)| a - b).collect();
    let s: Vec<f64> = g.iter().zip(f).map(|(a, b)| a + b).collect();
    (op.inner(&d, &d).sqrt() / nf, op.inner(&s, &s).sqrt() / nf)
}

fn classify(scores: (f64, f64), thr: f64) -> Parity {
    if scores.0 < thr {
        Parity::Even
    } else if scores.1 < thr {
        Parity::Odd
    } else {
        Parity::None
    }
}

/// Whether the weights are invariant under `map` (so the reflection commutes with the operator).
fn preserves_weights(op: &GridOperator, map: &[usize]) -> bool {
    op.log_center
        .iter()
        .enumerate()
        .all(|(c, l)| (l - op.log_center[map[c]]).abs() <= 1e-9 * (1.0 + l.abs()))
}

/// Groups consecutive eigenvalues whose relative gap is below `gap`.
pub fn cluster(values: &[f64], gap: f64) -> Vec<Vec<usize>> {
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for (i, &v) in values.iter().enumerate() {
        match groups.last_mut() {
            Some(g) if i > 1 && (v - values[i - 1]).abs() <= gap * v.abs().max(values[i - 1].abs()) => g.push(i),
            _ => groups.push(vec![i]),
        }
    }
    groups
}

/// Preconditioner for `B`: banded Cholesky of `B + σI` when the band fits, else Jacobi.
pub(crate) enum Preconditioner {
    Band(BandCholesky),
    Jacobi(Vec<f64>),
}

impl Preconditioner {
    pub(crate) fn build(op: &GridOperator) -> Self {
        let b = &op.symmetric;
        let bw = b.bandwidth();
        if b.n.saturating_mul(bw + 1) <= BAND_ENTRY_BUDGET {
            let var = op.coordinate_variances().into_iter().fold(0.0f64, f64::max);
            let sigma = if var > 0.0 { 0.1 / var } else { 1e-3 * b.norm_bound() };
            if let Ok(chol) = BandCholesky::factor(b, sigma) {
                return Preconditioner::Band(chol);
            }
        }
        Preconditioner::Jacobi(b.diagonal())
    }

    pub(crate) fn name(&self) -> &'static str {
        match self {
            Preconditioner::Band(_) => "band_cholesky",
            Preconditioner::Jacobi(_) => "jacobi",
        }
    }

    pub(crate) fn apply(&self, v: &mut [f64]) {
        match self {
            Preconditioner::Band(c) => c.solve(v),
            Preconditioner::Jacobi(d) => jacobi(d)(v),
        }
    }
}

/// The constants plus the `count` smallest nontrivial eigenpairs, extended so
/// that the last reported cluster is complete.
pub fn lowest_spectrum(op: &GridOperator, opts: &SpectrumOptions) -> Result<SpectrumReport> {
    if opts.count == 0 || opts.count > 20 {
        return Err(Error::InvalidSpec(format!("count must be in 1..=20, got {}", opts.count)));
    }
    let b = &op.symmetric;
    let norm_bound = b.norm_bound();
    let pc = Preconditioner::build(op);
    let mut kernel = op.kernel.clone();
    let kn = crate::linalg::norm(&kernel);
    crate::linalg::scale(1.0 / kn, &mut kernel);
    let want = opts.count + 3;
    let pairs = lobpcg(
        op.len(),
        |x: &[f64], y: &mut [f64]| b.matvec(x, y),
        Some(|v: &mut [f64]| pc.apply(v)),
        std::slice::from_ref(&kernel),
        want,
        norm_bound,
        LobpcgOptions { tol: opts.tolerance, max_iter: opts.max_iter, guard: 4, seed: opts.seed },
    )?;

    let mut values = vec![0.0];
    values.extend(&pairs.values);
    let mut groups = cluster(&values, opts.cluster_gap);
    // drop a trailing cluster that may continue past the computed range
    if groups.len() > 2 {
        let last = groups.last().expect("nonempty");
        if last.contains(&(values.len() - 1)) && values.len() - 1 > opts.count {
            groups.pop();
        }
    }
    let keep = groups.last().map(|g| g[g.len() - 1] + 1).unwrap_or(1);
    values.truncate(keep);
    let mut ys: Vec<Vec<f64>> = vec![kernel.clone()];
    ys.extend(pairs.vectors.into_iter().take(keep - 1));
    let mut residuals = vec![crate::linalg::norm(&{
        let mut r = vec![0.0; op.len()];
        b.matvec(&kernel, &mut r);
        r
    })];
    residuals.extend(pairs.residuals.into_iter().take(keep - 1));

    let mut vectors: Vec<Vec<f64>> = ys.iter().map(|y| op.from_symmetric(y)).collect();
    let global = reflection(op, None);
    let coord: Vec<Option<Vec<usize>>> = (0..op.dim).map(|k| reflection(op, Some(k))).collect();
    align_clusters(op, &mut vectors, &groups, global.as_deref(), &coord, opts.seed);
    let parity = vectors
        .iter()
        .map(|f| label(op, f, global.as_deref(), &coord, opts.parity_threshold))
        .collect();

    Ok(SpectrumReport {
        eigenvalues: values,
        eigenvectors: vectors,
        parity,
        multiplicity_groups: groups,
        residuals,
        norm_bound,
        iterations: pairs.iterations,
        preconditioner: pc.name().to_string(),
    })
}

fn label(op: &GridOperator, f: &[f64], global: Option<&[usize]>, coord: &[Option<Vec<usize>>], thr: f64) -> ParityLabel {
    let nan = (f64::INFINITY, f64::INFINITY);
    let global_scores = global.map(|m| parity_scores(op, f, m)).unwrap_or(nan);
    let coordinate_scores: Vec<(f64, f64)> =
        coord.iter().map(|m| m.as_ref().map(|m| parity_scores(op, f, m)).unwrap_or(nan)).collect();
    let coordinates: Vec<Parity> = coordinate_scores.iter().map(|s| classify(*s, thr)).collect();
    let type_i = coordinates
        .iter()
        .all(|p| *p != Parity::None)
        .then(|| coordinates.iter().enumerate().filter(|(_, p)| **p == Parity::Even).map(|(k, _)| k).collect());
    ParityLabel { global: classify(global_scores, thr), global_scores, coordinates, coordinate_scores, type_i }
}

/// Within each degenerate cluster, rotates the basis onto joint eigenvectors of
/// the reflections that commute with the operator.
fn align_clusters(
    op: &GridOperator,
    vectors: &mut [Vec<f64>],
    groups: &[Vec<usize>],
    global: Option<&[usize]>,
    coord: &[Option<Vec<usize>>],
    seed: u64,
) {
    let mut maps: Vec<&[usize]> = coord
        .iter()
        .flatten()
        .filter(|m| preserves_weights(op, m))
        .map(|m| m.as_slice())
        .collect();
    if maps.is_empty() {
        if let Some(g) = global.filter(|g| preserves_weights(op, g)) {
            maps.push(g);
        }
    }
    if maps.is_empty() {
        return;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xa11e);
    let weights: Vec<f64> = maps.iter().map(|_| 0.5 + rng.random::<f64>()).collect();
    for g in groups.iter().filter(|g| g.len() > 1) {
        let k = g.len();
        let flipped: Vec<Vec<Vec<f64>>> =
            maps.iter().map(|m| g.iter().map(|&i| compose(&vectors[i], m)).collect()).collect();
        let mut r = DMatrix::zeros(k, k);
        for (w, fl) in weights.iter().zip(&flipped) {
            for a in 0..k {
                for b in 0..k {
                    r[(a, b)] += w * op.inner(&vectors[g[a]], &fl[b]);
                }
            }
        }
        let r = (&r + r.transpose()) * 0.5;
        let (_, rot) = sym_eig(&r);
        let old: Vec<Vec<f64>> = g.iter().map(|&i| vectors[i].clone()).collect();
        for (col, &i) in g.iter().enumerate() {
            let mut v = vec![0.0; op.len()];
            for (row, o) in old.iter().enumerate() {
                crate::linalg::axpy(rot[(row, col)], o, &mut v);
            }
            vectors[i] = v;
        }
    }
}

/// Odd/even interlacing check.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InterlaceReport {
    pub lambda_odd_sorted: Vec<f64>,
    pub lambda_even_first: f64,
    pub holds: bool,
    pub margin: f64,
    pub tolerance: f64,
}

/// Checks that the first nontrivial even eigenvalue does not exceed the
/// `(n+1)`-th odd one, up to `rel_tol`.
pub fn verify_interlacing(report: &SpectrumReport, n: usize, rel_tol: f64) -> Result<InterlaceReport> {
    let odd: Vec<f64> = (1..report.eigenvalues.len())
        .filter(|&i| report.parity[i].global == Parity::Odd)
        .map(|i| report.eigenvalues[i])
        .collect();
    let even = (1..report.eigenvalues.len())
        .find(|&i| report.parity[i].global == Parity::Even)
        .map(|i| report.eigenvalues[i]);
    let Some(even) = even else {
        return Err(Error::InsufficientSpectrum("no nontrivial even eigenfunction computed".into()));
    };
    if odd.len() < n + 1 {
        return Err(Error::InsufficientSpectrum(format!("{} odd eigenvalues computed, need {}", odd.len(), n + 1)));
    }
    let bar = odd[n];
    let odd: Vec<f64> = odd.into_iter().take(n + 1).collect();
    Ok(InterlaceReport {
        lambda_odd_sorted: odd,
        lambda_even_first: even,
        holds: even <= bar * (1.0 + rel_tol),
        margin: bar - even,
        tolerance: rel_tol,
    })
}
