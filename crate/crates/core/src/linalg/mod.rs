//! Linear algebra kernels: dense symmetric helpers, symmetric tridiagonal
//! eigensolver, CSR matrices, banded Cholesky, LOBPCG and preconditioned CG.

pub mod band;
pub mod cg;
pub mod lobpcg;
pub mod sparse;
pub mod tridiag;

use nalgebra::DMatrix;

use crate::par;

/// Symmetric eigendecomposition with eigenvalues sorted ascending; column `j`
/// of the returned matrix belongs to eigenvalue `j`.
pub fn sym_eig(mat: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = mat.nrows();
    let sym = (mat + mat.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    (values, vectors)
}

pub fn min_eigenvalue(mat: &DMatrix<f64>) -> f64 {
    if mat.nrows() == 0 {
        return 0.0;
    }
    sym_eig(mat).0[0]
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    par::dot(a, b)
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `y += alpha * x`
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    par::for_each_mut(y, |i, v| *v += alpha * x[i]);
}

pub fn scale(alpha: f64, x: &mut [f64]) {
    par::for_each_mut(x, |_, v| *v *= alpha);
}

/// Gram matrix `aᵀ b` for column blocks stored as separate vectors.
pub fn gram(a: &[Vec<f64>], b: &[Vec<f64>]) -> DMatrix<f64> {
    let (ma, mb) = (a.len(), b.len());
    if ma == 0 || mb == 0 {
        return DMatrix::zeros(ma, mb);
    }
    let flat = par::map(0..ma * mb, |ij| dot(&a[ij / mb], &b[ij % mb]));
    DMatrix::from_row_slice(ma, mb, &flat)
}

/// Columns of `basis · coeffs`.
pub fn combine(basis: &[Vec<f64>], coeffs: &DMatrix<f64>) -> Vec<Vec<f64>> {
    let k = basis.len();
    assert_eq!(k, coeffs.nrows());
    let cols = coeffs.ncols();
    let n = basis.first().map_or(0, |v| v.len());
    par::map(0..cols, |j| {
        let mut v = vec![0.0; n];
        for i in 0..k {
            let c = coeffs[(i, j)];
            if c != 0.0 {
                for (o, x) in v.iter_mut().zip(&basis[i]) {
                    *o += c * x;
                }
            }
        }
        v
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sym_eig_sorts_ascending() {
        let m = DMatrix::from_row_slice(3, 3, &[2.0, 1.0, 0.0, 1.0, 2.0, 0.0, 0.0, 0.0, -1.0]);
        let (vals, vecs) = sym_eig(&m);
        assert!((vals[0] + 1.0).abs() < 1e-12);
        assert!((vals[1] - 1.0).abs() < 1e-12);
        assert!((vals[2] - 3.0).abs() < 1e-12);
        let v = vecs.column(2);
        assert!((v[0].abs() - v[1].abs()).abs() < 1e-12);
    }

    #[test]
    fn gram_and_combine_agree_with_dense() {
        let a = vec![vec![1.0, 2.0, 3.0], vec![0.0, 1.0, -1.0]];
        let g = gram(&a, &a);
        assert_eq!(g[(0, 0)], 14.0);
        assert_eq!(g[(0, 1)], -1.0);
        let c = DMatrix::from_row_slice(2, 1, &[2.0, 1.0]);
        let out = combine(&a, &c);
        assert_eq!(out[0], vec![2.0, 5.0, 5.0]);
    }
}
