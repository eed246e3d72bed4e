//! Deterministic expectations under a [`Density`] in dimensions ≤ 3.
//!
//! Tensor midpoint grid on the support box. With a membership predicate the
//! innermost axis is integrated chord by chord: chord endpoints are located by
//! bisection and the clipped cells use three-point Gauss–Legendre.

use super::density::Density;
use crate::error::{Error, Result};
use crate::par;
use crate::quadrature::Estimate;

/// Largest dimension handled by grid quadrature.
pub const MAX_QUADRATURE_DIM: usize = 3;

fn chord(d: &Density, prefix: &[f64], lo: f64, hi: f64, cells: usize) -> Option<(f64, f64)> {
    let h = (hi - lo) / cells as f64;
    let mut x = prefix.to_vec();
    x.push(0.0);
    let last = x.len() - 1;
    let mut inside = |t: f64| {
        x[last] = t;
        d.contains(&x)
    };
    let first = (0..cells).find(|&k| inside(lo + (k as f64 + 0.5) * h))?;
    let end = (first..cells).rev().find(|&k| inside(lo + (k as f64 + 0.5) * h))?;
    let mut refine = |a_in: f64, b_out: f64| -> f64 {
        if inside(b_out) {
            return b_out;
        }
        let (mut a, mut b) = (a_in, b_out);
        for _ in 0..50 {
            let m = 0.5 * (a + b);
            if inside(m) {
                a = m;
            } else {
                b = m;
            }
        }
        a
    };
    let c0 = lo + (first as f64 + 0.5) * h;
    let c1 = lo + (end as f64 + 0.5) * h;
    let left = refine(c0, if first == 0 { lo } else { c0 - h });
    let right = refine(c1, if end + 1 == cells { hi } else { c1 + h });
    Some((left, right))
}

/// `∫ ρ_rel · [1, f_1, …, f_w]` over the support at `res` cells per axis,
/// where `ρ_rel = exp(log ρ - log_reference)`.
fn integrate_raw<F>(d: &Density, res: usize, width: usize, f: &F) -> Result<Vec<f64>>
where
    F: Fn(&[f64], &mut [f64]) + Sync,
{
    let n = d.dim();
    if n > MAX_QUADRATURE_DIM {
        return Err(Error::DimensionTooLarge(n));
    }
    let bx = d.support_box().to_vec();
    let h: Vec<f64> = bx.iter().map(|(a, b)| (b - a) / res as f64).collect();
    let outer = res.pow((n - 1) as u32);
    let log_ref = d.log_reference();
    let has_membership = d.membership().is_some();
    let total = par::sum_vec(0..outer, width + 1, |idx, acc| {
        let mut prefix = Vec::with_capacity(n);
        let mut rest = idx;
        for k in 0..n - 1 {
            let i = rest % res;
            rest /= res;
            prefix.push(bx[k].0 + (i as f64 + 0.5) * h[k]);
        }
        let cell_vol: f64 = h[..n - 1].iter().product();
        let (lo, hi) = bx[n - 1];
        let hl = h[n - 1];
        let mut x = prefix.clone();
        x.push(0.0);
        let mut fv = vec![0.0; width];
        let mut add = |t: f64, w: f64, acc: &mut [f64]| {
            x[n - 1] = t;
            let r = (d.log_density(&x) - log_ref).exp();
            if r == 0.0 || !r.is_finite() {
                if r.is_nan() || r.is_infinite() {
                    acc[0] = f64::NAN;
                }
                return;
            }
            f(&x, &mut fv);
            acc[0] += w * r;
            for (a, v) in acc[1..].iter_mut().zip(&fv) {
                *a += w * r * v;
            }
        };
        if !has_membership {
            for k in 0..res {
                add(lo + (k as f64 + 0.5) * hl, cell_vol * hl, acc);
            }
            return;
        }
        let Some((c0, c1)) = chord(d, &prefix, lo, hi, res) else { return };
        for k in 0..res {
            let (a, b) = (lo + k as f64 * hl, lo + (k + 1) as f64 * hl);
            let (a2, b2) = (a.max(c0), b.min(c1));
            if b2 <= a2 {
                continue;
            }
            if a2 == a && b2 == b {
                add(0.5 * (a + b), cell_vol * hl, acc);
            } else {
                let c = 0.5 * (a2 + b2);
                let hw = 0.5 * (b2 - a2);
                for &(node, w) in &crate::quadrature::GL3 {
                    add(c + hw * node, cell_vol * hw * w, acc);
                }
            }
        }
    });
    Ok(total)
}

/// Total mass `∫ ρ` over the support box.
pub fn total_mass(d: &Density, res: usize) -> Result<f64> {
    let raw = integrate_raw(d, res, 0, &|_: &[f64], _: &mut [f64]| {})?;
    Ok(raw[0] * d.log_reference().exp())
}

/// `E_ρ[f_k]` for a vector-valued `f` with Richardson-style error
/// `|I_res - I_{res/2}| / 3`. Returns the estimates and the mass `∫ρ`.
pub fn integrate_many<F>(d: &Density, width: usize, f: F, res: usize) -> Result<(Vec<Estimate>, f64)>
where
    F: Fn(&[f64], &mut [f64]) + Sync,
{
    let res = res.max(4) & !1;
    let fine = integrate_raw(d, res, width, &f)?;
    let coarse = integrate_raw(d, res / 2, width, &f)?;
    if !(fine[0] > 0.0) || !fine[0].is_finite() {
        return Err(Error::DensityUnderflow(fine[0]));
    }
    let est = (0..width)
        .map(|k| {
            let v = fine[k + 1] / fine[0];
            let vc = coarse[k + 1] / coarse[0];
            Estimate { value: v, error: (v - vc).abs() / 3.0 }
        })
        .collect();
    Ok((est, fine[0] * d.log_reference().exp()))
}

/// `E_ρ[f]` with error estimate.
pub fn expectation<F>(d: &Density, f: F, res: usize) -> Result<Estimate>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let (est, _) = integrate_many(d, 1, |x, out| out[0] = f(x), res)?;
    Ok(est[0])
}

/// Mean and covariance of `ρ` by quadrature.
pub fn moments(d: &Density, res: usize) -> Result<(Vec<f64>, nalgebra::DMatrix<f64>, f64)> {
    let n = d.dim();
    let width = n + n * n;
    let (est, _) = integrate_many(
        d,
        width,
        |x, out| {
            out[..n].copy_from_slice(x);
            for i in 0..n {
                for j in 0..n {
                    out[n + i * n + j] = x[i] * x[j];
                }
            }
        },
        res,
    )?;
    let mean: Vec<f64> = est[..n].iter().map(|e| e.value).collect();
    let cov = nalgebra::DMatrix::from_fn(n, n, |i, j| est[n + i * n + j].value - mean[i] * mean[j]);
    let err = est.iter().map(|e| e.error).fold(0.0, f64::max);
    Ok((mean, cov, err))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::{build_measure, Body, MeasureSpec};

    #[test]
    fn gaussian_second_moment() {
        let d = build_measure(&MeasureSpec::standard_gaussian(2)).unwrap();
        let e = expectation(&d, |x| x[0] * x[0] + x[1] * x[1], 200).unwrap();
        assert!((e.value - 2.0).abs() < 1e-6, "{e:?}");
    }

    #[test]
    fn cross_polytope_moment() {
        let d = build_measure(&MeasureSpec::uniform_body(2, Body::LpBall { p: 1.0, radius: 1.0 })).unwrap();
        let e = expectation(&d, |x| x[0] * x[0], 1024).unwrap();
        assert!((e.value - 1.0 / 6.0).abs() < 1e-6, "{e:?}");
        assert!((total_mass(&d, 256).unwrap() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn disc_moment_within_reported_error() {
        let d = build_measure(&MeasureSpec::uniform_body(2, Body::LpBall { p: 2.0, radius: 1.0 })).unwrap();
        let e = expectation(&d, |x| x[0] * x[0], 256).unwrap();
        assert!((e.value - 0.25).abs() < 1e-4, "{e:?}");
    }
}
