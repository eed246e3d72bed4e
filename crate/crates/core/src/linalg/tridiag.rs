//! Symmetric tridiagonal eigenproblems: Sturm-sequence bisection for the
//! smallest eigenvalues and inverse iteration (pivoted LU) for eigenvectors.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
pub struct SymTridiagonal {
    pub diag: Vec<f64>,
    pub off: Vec<f64>,
}

impl SymTridiagonal {
    pub fn new(diag: Vec<f64>, off: Vec<f64>) -> Self {
        assert_eq!(off.len() + 1, diag.len().max(1));
        Self { diag, off }
    }

    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    fn gershgorin(&self) -> (f64, f64) {
        let n = self.len();
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in 0..n {
            let r = if i > 0 { self.off[i - 1].abs() } else { 0.0 }
                + if i + 1 < n { self.off[i].abs() } else { 0.0 };
            lo = lo.min(self.diag[i] - r);
            hi = hi.max(self.diag[i] + r);
        }
        (lo, hi)
    }

    /// Number of eigenvalues strictly below `x`.
    pub fn count_below(&self, x: f64) -> usize {
        let tiny = f64::MIN_POSITIVE.sqrt();
        let mut count = 0;
        let mut q = 1.0;
        for i in 0..self.len() {
            let e2 = if i > 0 { self.off[i - 1] * self.off[i - 1] } else { 0.0 };
            q = self.diag[i] - x - if i > 0 { e2 / q } else { 0.0 };
            if q == 0.0 {
                q = -tiny;
            }
            if q < 0.0 {
                count += 1;
            }
        }
        count
    }

    /// The `k` smallest eigenvalues, ascending.
    pub fn smallest_eigenvalues(&self, k: usize) -> Vec<f64> {
        let k = k.min(self.len());
        let (glo, ghi) = self.gershgorin();
        let scale = glo.abs().max(ghi.abs()).max(f64::MIN_POSITIVE);
        let mut out = Vec::with_capacity(k);
        for j in 0..k {
            let mut lo = out.last().copied().unwrap_or(glo).max(glo);
            let mut hi = ghi;
            // count_below(lo) <= j < count_below(hi) is the bracket invariant.
            if self.count_below(lo) > j {
                lo = glo;
            }
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if mid <= lo || mid >= hi {
                    break;
                }
                if self.count_below(mid) > j {
                    hi = mid;
                } else {
                    lo = mid;
                }
                if hi - lo <= 4.0 * f64::EPSILON * (lo.abs().max(hi.abs())) + 1e-300 * scale {
                    break;
                }
            }
            out.push(0.5 * (lo + hi));
        }
        out
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        let n = self.len();
        for i in 0..n {
            let mut s = self.diag[i] * x[i];
            if i > 0 {
                s += self.off[i - 1] * x[i - 1];
            }
            if i + 1 < n {
                s += self.off[i] * x[i + 1];
            }
            y[i] = s;
        }
    }

    /// Unit eigenvector for an (accurate) eigenvalue, orthogonalized against
    /// `previous`.
    pub fn eigenvector(&self, lambda: f64, previous: &[Vec<f64>], seed: u64) -> Vec<f64> {
        let n = self.len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x: Vec<f64> = (0..n).map(|_| rng.random::<f64>() - 0.5).collect();
        let (glo, ghi) = self.gershgorin();
        let shift = lambda - 1e-14 * glo.abs().max(ghi.abs()).max(lambda.abs());
        let lu = TridiagLu::factor(self, shift);
        for _ in 0..4 {
            orthogonalize(&mut x, previous);
            normalize(&mut x);
            lu.solve(&mut x);
        }
        orthogonalize(&mut x, previous);
        normalize(&mut x);
        x
    }
}

fn orthogonalize(x: &mut [f64], basis: &[Vec<f64>]) {
    for _ in 0..2 {
        for q in basis {
            let c: f64 = q.iter().zip(x.iter()).map(|(a, b)| a * b).sum();
            for (xi, qi) in x.iter_mut().zip(q) {
                *xi -= c * qi;
            }
        }
    }
}

fn normalize(x: &mut [f64]) {
    let n = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if n > 0.0 {
        x.iter_mut().for_each(|v| *v /= n);
    }
}

/// LU factorization of `T - shift I` with partial pivoting.
struct TridiagLu {
    dl: Vec<f64>,
    d: Vec<f64>,
    du: Vec<f64>,
    du2: Vec<f64>,
    swapped: Vec<bool>,
}

impl TridiagLu {
    fn factor(t: &SymTridiagonal, shift: f64) -> Self {
        let n = t.len();
        let mut d: Vec<f64> = t.diag.iter().map(|v| v - shift).collect();
        let mut dl = t.off.clone();
        let mut du = t.off.clone();
        let mut du2 = vec![0.0; n.saturating_sub(2)];
        let mut swapped = vec![false; n.saturating_sub(1)];
        for i in 0..n.saturating_sub(1) {
            if d[i].abs() >= dl[i].abs() {
                if d[i] != 0.0 {
                    let fact = dl[i] / d[i];
                    dl[i] = fact;
                    d[i + 1] -= fact * du[i];
                }
            } else {
                let fact = d[i] / dl[i];
                d[i] = dl[i];
                dl[i] = fact;
                let temp = du[i];
                du[i] = d[i + 1];
                d[i + 1] = temp - fact * d[i + 1];
                if i + 2 < n {
                    du2[i] = du[i + 1];
                    du[i + 1] = -fact * du[i + 1];
                }
                swapped[i] = true;
            }
        }
        let floor = f64::EPSILON * t.diag.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
        for v in d.iter_mut() {
            if v.abs() < floor {
                *v = if *v < 0.0 { -floor } else { floor };
            }
        }
        Self { dl, d, du, du2, swapped }
    }

    fn solve(&self, b: &mut [f64]) {
        let n = b.len();
        for i in 0..n.saturating_sub(1) {
            if self.swapped[i] {
                let temp = b[i] - self.dl[i] * b[i + 1];
                b[i] = b[i + 1];
                b[i + 1] = temp;
            } else {
                b[i + 1] -= self.dl[i] * b[i];
            }
        }
        b[n - 1] /= self.d[n - 1];
        if n > 1 {
            b[n - 2] = (b[n - 2] - self.du[n - 2] * b[n - 1]) / self.d[n - 2];
        }
        for i in (0..n.saturating_sub(2)).rev() {
            b[i] = (b[i] - self.du[i] * b[i + 1] - self.du2[i] * b[i + 2]) / self.d[i];
        }
        // Rescale to avoid overflow across iterations.
        let m = b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if m > 0.0 && m.is_finite() {
            b.iter_mut().for_each(|v| *v /= m);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn laplacian(n: usize) -> SymTridiagonal {
        SymTridiagonal::new(vec![2.0; n], vec![-1.0; n - 1])
    }

    #[test]
    fn dirichlet_laplacian_eigenvalues() {
        let n = 200;
        let t = laplacian(n);
        let vals = t.smallest_eigenvalues(5);
        for (k, v) in vals.iter().enumerate() {
            let theta = std::f64::consts::PI * (k + 1) as f64 / (n + 1) as f64;
            let exact = 2.0 - 2.0 * theta.cos();
            assert!((v - exact).abs() < 1e-13, "{k}: {v} vs {exact}");
        }
    }

    #[test]
    fn eigenvectors_have_small_residual_and_are_orthonormal() {
        let n = 300;
        let t = SymTridiagonal::new(
            (0..n).map(|i| 2.0 + (i as f64 * 0.1).sin()).collect(),
            vec![-1.0; n - 1],
        );
        let vals = t.smallest_eigenvalues(4);
        let mut vecs: Vec<Vec<f64>> = Vec::new();
        for (j, &l) in vals.iter().enumerate() {
            let v = t.eigenvector(l, &vecs, j as u64);
            let mut tv = vec![0.0; n];
            t.matvec(&v, &mut tv);
            let r: f64 = tv.iter().zip(&v).map(|(a, b)| (a - l * b).powi(2)).sum::<f64>().sqrt();
            assert!(r < 1e-10, "residual {r}");
            for w in &vecs {
                let d: f64 = w.iter().zip(&v).map(|(a, b)| a * b).sum();
                assert!(d.abs() < 1e-10);
            }
            vecs.push(v);
        }
    }
}
