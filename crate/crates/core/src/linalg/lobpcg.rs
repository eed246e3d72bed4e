//! Block locally optimal preconditioned conjugate gradient (LOBPCG) for the
//! smallest eigenpairs of a symmetric operator, with explicit deflation of a
//! known invariant subspace and soft locking of converged columns.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{combine, gram, norm, sym_eig};
use crate::error::{Error, Result};
use crate::par;

#[derive(Debug, Clone, Copy)]
pub struct LobpcgOptions {
    /// Convergence when `‖B x - θ x‖ ≤ tol · norm_estimate`.
    pub tol: f64,
    pub max_iter: usize,
    /// Extra block columns beyond the requested count.
    pub guard: usize,
    pub seed: u64,
}

impl Default for LobpcgOptions {
    fn default() -> Self {
        Self { tol: 1e-11, max_iter: 5000, guard: 4, seed: 0x5eed_1ab5 }
    }
}

#[derive(Debug, Clone)]
pub struct EigenPairs {
    pub values: Vec<f64>,
    pub vectors: Vec<Vec<f64>>,
    pub residuals: Vec<f64>,
    pub iterations: usize,
}

fn project_out(v: &mut [f64], basis: &[Vec<f64>]) {
    for q in basis {
        let c = super::dot(q, v);
        super::axpy(-c, q, v);
    }
}

/// Modified Gram–Schmidt (two passes) against `against` and within `block`;
/// columns that lose more than `drop` of their norm are discarded.
fn orthonormalize(block: Vec<Vec<f64>>, against: &[&[Vec<f64>]], drop: f64) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(block.len());
    for mut v in block {
        let n0 = norm(&v);
        if n0 == 0.0 || !n0.is_finite() {
            continue;
        }
        for _ in 0..2 {
            for basis in against {
                project_out(&mut v, basis);
            }
            project_out(&mut v, &out);
        }
        let n1 = norm(&v);
        if n1 > drop * n0 {
            super::scale(1.0 / n1, &mut v);
            out.push(v);
        }
    }
    out
}

fn apply_all<A>(apply: &A, vs: &[Vec<f64>]) -> Vec<Vec<f64>>
where
    A: Fn(&[f64], &mut [f64]) + Sync,
{
    vs.iter()
        .map(|v| {
            let mut out = vec![0.0; v.len()];
            apply(v, &mut out);
            out
        })
        .collect()
}

/// Computes the `want` smallest eigenpairs of the symmetric operator `apply`
/// on the orthogonal complement of `deflate` (orthonormal columns).
pub fn lobpcg<A, P>(
    n: usize,
    apply: A,
    precond: Option<P>,
    deflate: &[Vec<f64>],
    want: usize,
    norm_estimate: f64,
    opts: LobpcgOptions,
) -> Result<EigenPairs>
where
    A: Fn(&[f64], &mut [f64]) + Sync,
    P: Fn(&mut [f64]) + Sync,
{
    let avail = n.saturating_sub(deflate.len());
    let want = want.min(avail);
    let m = (want + opts.guard).min(avail);
    if want == 0 {
        return Ok(EigenPairs { values: vec![], vectors: vec![], residuals: vec![], iterations: 0 });
    }
    let threshold = opts.tol * norm_estimate.max(f64::MIN_POSITIVE);

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let init: Vec<Vec<f64>> = (0..m)
        .map(|_| (0..n).map(|_| rng.random::<f64>() - 0.5).collect())
        .collect();
    let mut x = orthonormalize(init, &[deflate], 1e-8);
    if x.len() < want {
        return Err(Error::SolverBreakdown("initial block is rank deficient".into()));
    }
    let mut bx = apply_all(&apply, &x);
    let (theta0, y0) = sym_eig(&gram(&x, &bx));
    x = combine(&x, &y0);
    bx = combine(&bx, &y0);
    let mut theta = theta0;
    let mut p: Vec<Vec<f64>> = Vec::new();
    let mut best = f64::INFINITY;

    for iter in 0..opts.max_iter {
        let residuals: Vec<Vec<f64>> = (0..x.len())
            .map(|j| {
                let mut r = bx[j].clone();
                super::axpy(-theta[j], &x[j], &mut r);
                r
            })
            .collect();
        let res_norms: Vec<f64> = residuals.iter().map(|r| norm(r)).collect();
        let worst = res_norms[..want].iter().cloned().fold(0.0, f64::max);
        best = best.min(worst);
        if worst <= threshold {
            return Ok(EigenPairs {
                values: theta[..want].to_vec(),
                vectors: x[..want].to_vec(),
                residuals: res_norms[..want].to_vec(),
                iterations: iter,
            });
        }
        let active: Vec<usize> = (0..x.len()).filter(|&j| res_norms[j] > threshold).collect();

        let mut w: Vec<Vec<f64>> = active.iter().map(|&j| residuals[j].clone()).collect();
        if let Some(pc) = &precond {
            for v in w.iter_mut() {
                pc(v);
            }
        }
        let w = orthonormalize(w, &[deflate, &x], 1e-10);
        let p_act: Vec<Vec<f64>> =
            active.iter().filter(|&&j| j < p.len()).map(|&j| p[j].clone()).collect();
        let pp = orthonormalize(p_act, &[deflate, &x, &w], 1e-10);
        if w.is_empty() && pp.is_empty() {
            break;
        }

        let bw = apply_all(&apply, &w);
        let bp = apply_all(&apply, &pp);
        let nx = x.len();
        let nw = w.len();
        let mut s: Vec<Vec<f64>> = Vec::with_capacity(nx + nw + pp.len());
        s.extend(x.iter().cloned());
        s.extend(w);
        s.extend(pp);
        let mut bs: Vec<Vec<f64>> = Vec::with_capacity(s.len());
        bs.extend(bx.iter().cloned());
        bs.extend(bw);
        bs.extend(bp);

        let g = gram(&s, &bs);
        let (_, vecs) = sym_eig(&g);
        let keep = m.min(s.len());
        let y = vecs.columns(0, keep).into_owned();
        x = combine(&s, &y);
        // Orthonormality drifts slowly; re-orthonormalize to keep the Gram exact.
        x = orthonormalize(x, &[deflate], 1e-12);
        bx = apply_all(&apply, &x);
        let (t, yy) = sym_eig(&gram(&x, &bx));
        x = combine(&x, &yy);
        bx = combine(&bx, &yy);
        theta = t;

        // Search directions: the W and P components of the new Ritz vectors.
        let mut y_dir = y.clone();
        for i in 0..nx {
            for j in 0..keep {
                y_dir[(i, j)] = 0.0;
            }
        }
        p = combine(&s, &y_dir);
        if x.len() < want {
            break;
        }
    }
    Err(Error::NoConvergence { iterations: opts.max_iter, residual: best })
}

/// Jacobi preconditioner from a diagonal.
pub fn jacobi(diag: &[f64]) -> impl Fn(&mut [f64]) + Sync + '_ {
    move |v: &mut [f64]| {
        par::for_each_mut(v, |i, x| {
            if diag[i] > 0.0 {
                *x /= diag[i];
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::sparse::CsrMatrix;

    fn path_laplacian(n: usize) -> CsrMatrix {
        let rows = (0..n)
            .map(|i| {
                let mut r = Vec::new();
                let mut d = 0.0;
                if i > 0 {
                    r.push((i - 1, -1.0));
                    d += 1.0;
                }
                if i + 1 < n {
                    r.push((i + 1, -1.0));
                    d += 1.0;
                }
                r.push((i, d));
                r
            })
            .collect();
        CsrMatrix::from_rows(rows)
    }

    #[test]
    fn neumann_path_spectrum_with_constant_deflated() {
        let n = 120;
        let a = path_laplacian(n);
        let c = vec![1.0 / (n as f64).sqrt(); n];
        let res = lobpcg(
            n,
            |x: &[f64], y: &mut [f64]| a.matvec(x, y),
            None::<fn(&mut [f64])>,
            &[c],
            4,
            a.norm_bound(),
            LobpcgOptions { tol: 1e-10, ..Default::default() },
        )
        .unwrap();
        for (k, v) in res.values.iter().enumerate() {
            let exact = 2.0 - 2.0 * (std::f64::consts::PI * (k + 1) as f64 / n as f64).cos();
            assert!((v - exact).abs() < 1e-9, "{k}: {v} vs {exact}");
        }
    }
}
