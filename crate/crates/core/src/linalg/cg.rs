//! Preconditioned conjugate gradients on the orthogonal complement of a
//! known null space.

use super::{axpy, dot, norm};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct CgOutcome {
    pub solution: Vec<f64>,
    pub iterations: usize,
    pub relative_residual: f64,
}

fn project(v: &mut [f64], null: &[Vec<f64>]) {
    for q in null {
        let c = dot(q, v);
        axpy(-c, q, v);
    }
}

/// Solves `B x = b` for symmetric positive semidefinite `B` whose kernel is
/// spanned by the orthonormal `null` vectors; `b` must be orthogonal to them.
pub fn solve<A, P>(
    apply: A,
    precond: Option<P>,
    null: &[Vec<f64>],
    b: &[f64],
    rel_tol: f64,
    max_iter: usize,
) -> Result<CgOutcome>
where
    A: Fn(&[f64], &mut [f64]),
    P: Fn(&mut [f64]),
{
    let n = b.len();
    let bnorm = norm(b);
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        return Ok(CgOutcome { solution: x, iterations: 0, relative_residual: 0.0 });
    }
    let mut r = b.to_vec();
    project(&mut r, null);
    let precondition = |r: &[f64]| {
        let mut z = r.to_vec();
        if let Some(pc) = &precond {
            pc(&mut z);
        }
        project(&mut z, null);
        z
    };
    let mut z = precondition(&r);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    for it in 0..max_iter {
        let rel = norm(&r) / bnorm;
        if rel <= rel_tol {
            return Ok(CgOutcome { solution: x, iterations: it, relative_residual: rel });
        }
        apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 || !pap.is_finite() {
            return Err(Error::SolverBreakdown(format!("pᵀBp = {pap:.3e} at iteration {it}")));
        }
        let alpha = rz / pap;
        axpy(alpha, &p, &mut x);
        axpy(-alpha, &ap, &mut r);
        if it % 50 == 49 {
            project(&mut r, null);
        }
        z = precondition(&r);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for (pi, zi) in p.iter_mut().zip(&z) {
            *pi = zi + beta * *pi;
        }
    }
    let rel = norm(&r) / bnorm;
    Err(Error::SolverBreakdown(format!(
        "CG stalled after {max_iter} iterations (relative residual {rel:.3e})"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn singular_path_laplacian() {
        let n = 50;
        let apply = |x: &[f64], y: &mut [f64]| {
            for i in 0..n {
                let mut s = 0.0;
                if i > 0 {
                    s += x[i] - x[i - 1];
                }
                if i + 1 < n {
                    s += x[i] - x[i + 1];
                }
                y[i] = s;
            }
        };
        let null = vec![vec![1.0 / (n as f64).sqrt(); n]];
        let mut b: Vec<f64> = (0..n).map(|i| (i as f64 * 0.3).sin()).collect();
        project(&mut b, &null);
        let out = solve(apply, None::<fn(&mut [f64])>, &null, &b, 1e-12, 1000).unwrap();
        let mut ax = vec![0.0; n];
        apply(&out.solution, &mut ax);
        for (u, v) in ax.iter().zip(&b) {
            assert!((u - v).abs() < 1e-9);
        }
    }
}
