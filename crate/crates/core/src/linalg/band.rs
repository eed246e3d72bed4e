//! Banded Cholesky factorization for sparse SPD matrices of modest bandwidth.

use super::sparse::CsrMatrix;
use crate::error::{Error, Result};

/// Lower factor `L` with `A = L Lᵀ`, stored row-wise over the band.
#[derive(Debug, Clone)]
pub struct BandCholesky {
    n: usize,
    bw: usize,
    // row i holds columns i-bw ..= i at offsets 0 ..= bw
    data: Vec<f64>,
}

impl BandCholesky {
    pub fn memory_estimate(n: usize, bw: usize) -> usize {
        n * (bw + 1) * std::mem::size_of::<f64>()
    }

    /// Factors `a + shift·I`.
    pub fn factor(a: &CsrMatrix, shift: f64) -> Result<Self> {
        let n = a.n;
        let bw = a.bandwidth();
        let w = bw + 1;
        let mut data = vec![0.0; n * w];
        for i in 0..n {
            for (j, v) in a.row(i) {
                if j <= i {
                    data[i * w + (j + bw - i)] += v;
                }
            }
            data[i * w + bw] += shift;
        }
        for i in 0..n {
            let i0 = i.saturating_sub(bw);
            for j in i0..=i {
                let k0 = i0.max(j.saturating_sub(bw));
                let mut s = data[i * w + (j + bw - i)];
                let ri = i * w + bw - i;
                let rj = j * w + bw - j;
                for k in k0..j {
                    s -= data[ri + k] * data[rj + k];
                }
                if j == i {
                    if s <= 0.0 || !s.is_finite() {
                        return Err(Error::SolverBreakdown(format!(
                            "banded Cholesky pivot {s:.3e} at row {i}"
                        )));
                    }
                    data[i * w + bw] = s.sqrt();
                } else {
                    data[i * w + (j + bw - i)] = s / data[j * w + bw];
                }
            }
        }
        Ok(Self { n, bw, data })
    }

    /// Solves `(A + shift I) x = b` in place.
    pub fn solve(&self, b: &mut [f64]) {
        let (n, bw, w) = (self.n, self.bw, self.bw + 1);
        for i in 0..n {
            let i0 = i.saturating_sub(bw);
            let mut s = b[i];
            let ri = i * w + bw - i;
            for k in i0..i {
                s -= self.data[ri + k] * b[k];
            }
            b[i] = s / self.data[i * w + bw];
        }
        // Lᵀ x = y, sweeping rows of L so memory access stays contiguous
        for i in (0..n).rev() {
            let xi = b[i] / self.data[i * w + bw];
            b[i] = xi;
            let i0 = i.saturating_sub(bw);
            let ri = i * w + bw - i;
            for k in i0..i {
                b[k] -= self.data[ri + k] * xi;
            }
        }
    }
}
