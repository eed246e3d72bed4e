//! Construction of [`Density`] evaluators from [`MeasureSpec`]s and the
//! closed-form Poincaré constants of the reference families.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::function::gamma::{gamma, ln_gamma};

use super::body::Body;
use super::density::{Density, GradientFn, HessianFn, LogDensityFn, MembershipFn};
use super::spec::{ConvexPotential, Family, MeasureSpec, PerturbationKind, PerturbationSpec};
use crate::error::{Error, Result};
use crate::linalg::min_eigenvalue;
use crate::quadrature;

/// Relative density level defining the canonical truncation box.
pub const TRUNCATION_LEVEL: f64 = 1e-14;
/// Smoothing width for `|·|` in gradients (MALA proposals only).
pub const SMOOTHING_WIDTH: f64 = 1e-3;

fn log_drop() -> f64 {
    -TRUNCATION_LEVEL.ln()
}

/// `α_p = 2Γ(1 + 1/p)`, the dilation making `exp(-|α_p t|^p)` a probability density.
pub fn alpha_p(p: f64) -> f64 {
    2.0 * gamma(1.0 + 1.0 / p)
}

fn smooth_sign(t: f64, eta: f64) -> f64 {
    t / (t * t + eta * eta).sqrt()
}

fn to_matrix(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    let n = rows.len();
    if rows.iter().any(|r| r.len() != n) {
        return Err(Error::InvalidSpec(format!("{what} must be square")));
    }
    let m = DMatrix::from_fn(n, n, |i, j| rows[i][j]);
    let asym = (&m - m.transpose()).abs().max();
    if asym > 1e-12 * (1.0 + m.abs().max()) {
        return Err(Error::InvalidSpec(format!("{what} must be symmetric")));
    }
    Ok(m)
}

/// Checks the PSD floor `λ_min ≥ -1e-10 ‖Q‖`.
pub fn check_psd(q: &DMatrix<f64>) -> Result<()> {
    let scale = crate::linalg::sym_eig(q).0.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let min_eig = min_eigenvalue(q);
    if min_eig < -1e-10 * scale.max(f64::MIN_POSITIVE) {
        return Err(Error::NonPsdQuadratic { min_eig });
    }
    Ok(())
}

/// Everything a density needs, accumulated while walking the spec.
struct Parts {
    dim: usize,
    log: LogDensityFn,
    grad: Option<GradientFn>,
    hess: Option<HessianFn>,
    membership: Option<MembershipFn>,
    bbox: Vec<(f64, f64)>,
    /// `log ρ(0)` when the density is normalized.
    log_phi0: Option<f64>,
    smoothing: Option<f64>,
}

fn and_membership(a: Option<MembershipFn>, b: MembershipFn) -> MembershipFn {
    match a {
        None => b,
        Some(a) => Arc::new(move |x: &[f64]| a(x) && b(x)),
    }
}

/// Interval around `mode` on which `f` stays within `drop` of `f(mode)`.
pub(crate) fn level_interval<F: Fn(f64) -> f64>(f: F, mode: f64, drop: f64) -> Result<(f64, f64)> {
    let top = f(mode);
    if !top.is_finite() {
        return Err(Error::UnboundedDensity(format!("log-density not finite at the mode {mode}")));
    }
    let side = |dir: f64| -> Result<f64> {
        let mut step = 1.0;
        while f(mode + dir * step) > top - drop {
            step *= 2.0;
            if step > 1e9 {
                return Err(Error::UnboundedDensity("density does not decay along an axis".into()));
            }
        }
        let (mut lo, mut hi) = (0.0, step);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f(mode + dir * mid) > top - drop {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo < 1e-12 * hi {
                break;
            }
        }
        Ok(mode + dir * lo)
    };
    Ok((side(-1.0)?, side(1.0)?))
}

fn one_dim_parts(family: &Family) -> Result<Parts> {
    let eta = SMOOTHING_WIDTH;
    let parts = match family {
        Family::Laplace => Parts {
            dim: 1,
            log: Arc::new(|x: &[f64]| -x[0].abs() - 2f64.ln()),
            grad: Some(Arc::new(move |x: &[f64], g: &mut [f64]| g[0] = -smooth_sign(x[0], eta))),
            hess: None,
            membership: None,
            bbox: vec![(-log_drop(), log_drop())],
            log_phi0: Some(-(2f64.ln())),
            smoothing: Some(eta),
        },
        Family::NuP { p, calibrated } => {
            let p = *p;
            if !(p > 0.0) {
                return Err(Error::InvalidSpec(format!("nu_p needs p > 0, got {p}")));
            }
            let a = if *calibrated { alpha_p(p) } else { 1.0 };
            let log_z = 2f64.ln() + ln_gamma(1.0 + 1.0 / p) - a.ln();
            let ap = a.powf(p);
            let half = log_drop().powf(1.0 / p) / a;
            Parts {
                dim: 1,
                log: Arc::new(move |x: &[f64]| -ap * x[0].abs().powf(p) - log_z),
                grad: Some(Arc::new(move |x: &[f64], g: &mut [f64]| {
                    let t = x[0];
                    g[0] = if p >= 2.0 {
                        -p * ap * t.abs().powf(p - 1.0) * t.signum()
                    } else {
                        -p * ap * t * (t * t + eta * eta).powf(0.5 * (p - 2.0))
                    };
                })),
                hess: if p >= 2.0 {
                    Some(Arc::new(move |x: &[f64]| {
                        DMatrix::from_element(1, 1, p * (p - 1.0) * ap * x[0].abs().powf(p - 2.0))
                    }))
                } else {
                    None
                },
                membership: None,
                bbox: vec![(-half, half)],
                log_phi0: Some(-log_z),
                smoothing: if p < 2.0 { Some(eta) } else { None },
            }
        }
        Family::TiltedNuP { p, a } => {
            let (p, a) = (*p, *a);
            if !(p > 0.0) {
                return Err(Error::InvalidSpec(format!("tilted nu_p needs p > 0, got {p}")));
            }
            if (p < 1.0 && a != 0.0) || (p == 1.0 && a.abs() >= 1.0) {
                return Err(Error::UnboundedDensity(format!("exp(-|t|^{p} + {a} t) is not integrable")));
            }
            let raw = move |t: f64| -t.abs().powf(p) + a * t;
            let mode = if p > 1.0 && a != 0.0 { a.signum() * (a.abs() / p).powf(1.0 / (p - 1.0)) } else { 0.0 };
            let (lo, hi) = level_interval(raw, mode, log_drop())?;
            let (lo2, hi2) = level_interval(raw, mode, 745.0)?;
            let top = raw(mode);
            let z = quadrature::adaptive(|t| (raw(t) - top).exp(), lo2, mode, 1e-300, 1e-13).value
                + quadrature::adaptive(|t| (raw(t) - top).exp(), mode, hi2, 1e-300, 1e-13).value;
            let log_z = z.ln() + top;
            Parts {
                dim: 1,
                log: Arc::new(move |x: &[f64]| raw(x[0]) - log_z),
                grad: Some(Arc::new(move |x: &[f64], g: &mut [f64]| {
                    let t = x[0];
                    g[0] = -p * t * (t * t + eta * eta).powf(0.5 * (p - 2.0)) + a;
                })),
                hess: None,
                membership: None,
                bbox: vec![(lo, hi)],
                log_phi0: Some(-log_z),
                smoothing: Some(eta),
            }
        }
        Family::UniformInterval { a, b } => {
            let (a, b) = (*a, *b);
            if !(b > a) {
                return Err(Error::InvalidSpec(format!("uniform interval needs a < b, got [{a}, {b}]")));
            }
            let lw = (b - a).ln();
            Parts {
                dim: 1,
                log: Arc::new(move |x: &[f64]| if x[0] >= a && x[0] <= b { -lw } else { f64::NEG_INFINITY }),
                grad: Some(Arc::new(|_: &[f64], g: &mut [f64]| g[0] = 0.0)),
                hess: Some(Arc::new(|_: &[f64]| DMatrix::zeros(1, 1))),
                membership: Some(Arc::new(move |x: &[f64]| x[0] >= a && x[0] <= b)),
                bbox: vec![(a, b)],
                log_phi0: if a <= 0.0 && b >= 0.0 { Some(-lw) } else { None },
                smoothing: None,
            }
        }
        _ => return Err(Error::InvalidSpec("product components must be one-dimensional families".into())),
    };
    Ok(parts)
}

fn family_parts(spec: &MeasureSpec) -> Result<Parts> {
    let n = spec.dim;
    if n == 0 {
        return Err(Error::InvalidSpec("dimension must be positive".into()));
    }
    let eta = SMOOTHING_WIDTH;
    match &spec.family {
        Family::Laplace | Family::NuP { .. } => {
            if let Family::NuP { p, .. } = spec.family {
                if n > 1 && p < 1.0 {
                    return Err(Error::InvalidSpec(format!(
                        "nu_p with p = {p} < 1 is not log-concave; only allowed in dimension 1"
                    )));
                }
            }
            let one = one_dim_parts(&spec.family)?;
            Ok(tensor_power(one, n))
        }
        Family::TiltedNuP { .. } | Family::UniformInterval { .. } => {
            if n != 1 {
                return Err(Error::InvalidSpec("this family is one-dimensional".into()));
            }
            one_dim_parts(&spec.family)
        }
        Family::Gaussian { covariance } => {
            let cov = to_matrix(covariance, "covariance")?;
            if cov.nrows() != n {
                return Err(Error::InvalidSpec("covariance size differs from dim".into()));
            }
            let chol = cov.clone().cholesky().ok_or_else(|| {
                Error::UnboundedDensity("covariance is not positive definite".into())
            })?;
            let prec = chol.inverse();
            let log_det: f64 = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
            let log_z = 0.5 * (n as f64 * (2.0 * PI).ln() + log_det);
            let p1 = prec.clone();
            let p2 = prec.clone();
            let p3 = prec.clone();
            let bbox = (0..n)
                .map(|i| {
                    let h = (2.0 * log_drop() * cov[(i, i)]).sqrt();
                    (-h, h)
                })
                .collect();
            Ok(Parts {
                dim: n,
                log: Arc::new(move |x: &[f64]| {
                    let v = nalgebra::DVector::from_column_slice(x);
                    -0.5 * v.dot(&(&p1 * &v)) - log_z
                }),
                grad: Some(Arc::new(move |x: &[f64], g: &mut [f64]| {
                    let v = nalgebra::DVector::from_column_slice(x);
                    let pv = &p2 * v;
                    for (gi, pi) in g.iter_mut().zip(pv.iter()) {
                        *gi = -pi;
                    }
                })),
                hess: Some(Arc::new(move |_: &[f64]| p3.clone())),
                membership: None,
                bbox,
                log_phi0: Some(-log_z),
                smoothing: None,
            })
        }
        Family::UniformBody { body } => {
            body.validate(n)?;
            let lv = body.volume(n).ln();
            let b = body.clone();
            let hw = body.bounding_half_widths(n);
            Ok(Parts {
                dim: n,
                log: Arc::new(move |_: &[f64]| -lv),
                grad: Some(Arc::new(|_: &[f64], g: &mut [f64]| g.fill(0.0))),
                hess: Some(Arc::new(move |_: &[f64]| DMatrix::zeros(hw.len(), hw.len()))),
                membership: Some(Arc::new(move |x: &[f64]| b.contains(x))),
                bbox: body.bounding_half_widths(n).into_iter().map(|h| (-h, h)).collect(),
                log_phi0: Some(-lv),
                smoothing: None,
            })
        }
        Family::NuNQ { q } => {
            let qm = to_matrix(q, "Q")?;
            if qm.nrows() != n {
                return Err(Error::InvalidSpec("Q size differs from dim".into()));
            }
            check_psd(&qm)?;
            let lmin = min_eigenvalue(&qm).max(0.0);
            let d = log_drop();
            // |x_i| = L forces ‖x‖₁ + Q(x) ≥ L + λ_min L².
            let half = if lmin > 0.0 { (-1.0 + (1.0 + 4.0 * lmin * d).sqrt()) / (2.0 * lmin) } else { d };
            let (q1, q2, q3) = (qm.clone(), qm.clone(), qm.clone());
            let is_zero = qm.abs().max() == 0.0;
            Ok(Parts {
                dim: n,
                log: Arc::new(move |x: &[f64]| {
                    let v = nalgebra::DVector::from_column_slice(x);
                    -x.iter().map(|t| t.abs()).sum::<f64>() - v.dot(&(&q1 * &v))
                }),
                grad: Some(Arc::new(move |x: &[f64], g: &mut [f64]| {
                    let v = nalgebra::DVector::from_column_slice(x);
                    let qv = &q2 * v;
                    for i in 0..x.len() {
                        g[i] = -smooth_sign(x[i], eta) - 2.0 * qv[i];
                    }
                })),
                hess: Some(Arc::new(move |_: &[f64]| &q3 * 2.0)),
                membership: None,
                bbox: vec![(-half, half); n],
                log_phi0: if is_zero { Some(-(n as f64) * 2f64.ln()) } else { None },
                smoothing: Some(eta),
            })
            .map(|mut p| {
                if is_zero {
                    // normalized product of Laplace densities
                    let inner = p.log.clone();
                    let shift = n as f64 * 2f64.ln();
                    p.log = Arc::new(move |x: &[f64]| inner(x) - shift);
                }
                p
            })
        }
        Family::Product { components } => {
            if components.len() != n {
                return Err(Error::InvalidSpec(format!(
                    "product has {} components but dim = {n}",
                    components.len()
                )));
            }
            let mut comps = Vec::with_capacity(n);
            for c in components {
                if c.dim != 1 {
                    return Err(Error::InvalidSpec("product components must have dim 1".into()));
                }
                comps.push(apply_scale(family_parts(c)?, c.scale.as_deref())?);
            }
            Ok(tensor(comps))
        }
    }
}

fn tensor_power(one: Parts, n: usize) -> Parts {
    let log = one.log.clone();
    let grad = one.grad.clone();
    let hess = one.hess.clone();
    let bbox = vec![one.bbox[0]; n];
    let log_phi0 = one.log_phi0.map(|v| v * n as f64);
    Parts {
        dim: n,
        log: Arc::new(move |x: &[f64]| x.iter().map(|&t| log(&[t])).sum()),
        grad: grad.map(|g| {
            Arc::new(move |x: &[f64], out: &mut [f64]| {
                let mut tmp = [0.0];
                for i in 0..x.len() {
                    g(&[x[i]], &mut tmp);
                    out[i] = tmp[0];
                }
            }) as GradientFn
        }),
        hess: hess.map(|h| {
            Arc::new(move |x: &[f64]| {
                let mut m = DMatrix::zeros(x.len(), x.len());
                for i in 0..x.len() {
                    m[(i, i)] = h(&[x[i]])[(0, 0)];
                }
                m
            }) as HessianFn
        }),
        membership: one.membership.map(|m| Arc::new(move |x: &[f64]| x.iter().all(|&t| m(&[t]))) as MembershipFn),
        bbox,
        log_phi0,
        smoothing: one.smoothing,
    }
}

fn tensor(comps: Vec<Parts>) -> Parts {
    let n = comps.len();
    let logs: Vec<LogDensityFn> = comps.iter().map(|c| c.log.clone()).collect();
    let grads: Option<Vec<GradientFn>> = comps.iter().map(|c| c.grad.clone()).collect();
    let hess: Option<Vec<HessianFn>> = comps.iter().map(|c| c.hess.clone()).collect();
    let mems: Vec<Option<MembershipFn>> = comps.iter().map(|c| c.membership.clone()).collect();
    let any_mem = mems.iter().any(|m| m.is_some());
    let log_phi0 = comps.iter().map(|c| c.log_phi0).sum::<Option<f64>>();
    let smoothing = comps.iter().filter_map(|c| c.smoothing).reduce(f64::max);
    Parts {
        dim: n,
        log: Arc::new(move |x: &[f64]| logs.iter().zip(x).map(|(l, &t)| l(&[t])).sum()),
        grad: grads.map(|gs| {
            Arc::new(move |x: &[f64], out: &mut [f64]| {
                let mut tmp = [0.0];
                for (i, g) in gs.iter().enumerate() {
                    g(&[x[i]], &mut tmp);
                    out[i] = tmp[0];
                }
            }) as GradientFn
        }),
        hess: hess.map(|hs| {
            Arc::new(move |x: &[f64]| {
                let mut m = DMatrix::zeros(x.len(), x.len());
                for (i, h) in hs.iter().enumerate() {
                    m[(i, i)] = h(&[x[i]])[(0, 0)];
                }
                m
            }) as HessianFn
        }),
        membership: if any_mem {
            Some(Arc::new(move |x: &[f64]| {
                mems.iter().zip(x).all(|(m, &t)| m.as_ref().is_none_or(|m| m(&[t])))
            }))
        } else {
            None
        },
        bbox: comps.iter().map(|c| c.bbox[0]).collect(),
        log_phi0,
        smoothing,
    }
}

fn apply_scale(parts: Parts, scale: Option<&[f64]>) -> Result<Parts> {
    let Some(s) = scale else { return Ok(parts) };
    if s.len() != parts.dim || s.iter().any(|v| !(*v > 0.0)) {
        return Err(Error::InvalidSpec("scale must be positive, one entry per coordinate".into()));
    }
    let s: Arc<Vec<f64>> = Arc::new(s.to_vec());
    let log_jac: f64 = s.iter().map(|v| v.ln()).sum();
    let unscale = {
        let s = s.clone();
        move |x: &[f64]| -> Vec<f64> { x.iter().zip(s.iter()).map(|(a, b)| a / b).collect() }
    };
    let log = parts.log.clone();
    let u1 = unscale.clone();
    let grad = parts.grad.clone().map(|g| {
        let u = unscale.clone();
        let s = s.clone();
        Arc::new(move |x: &[f64], out: &mut [f64]| {
            g(&u(x), out);
            for (o, si) in out.iter_mut().zip(s.iter()) {
                *o /= si;
            }
        }) as GradientFn
    });
    let hess = parts.hess.clone().map(|h| {
        let u = unscale.clone();
        let s = s.clone();
        Arc::new(move |x: &[f64]| {
            let mut m = h(&u(x));
            for i in 0..m.nrows() {
                for j in 0..m.ncols() {
                    m[(i, j)] /= s[i] * s[j];
                }
            }
            m
        }) as HessianFn
    });
    let membership = parts.membership.clone().map(|m| {
        let u = unscale.clone();
        Arc::new(move |x: &[f64]| m(&u(x))) as MembershipFn
    });
    Ok(Parts {
        dim: parts.dim,
        log: Arc::new(move |x: &[f64]| log(&u1(x)) - log_jac),
        grad,
        hess,
        membership,
        bbox: parts.bbox.iter().zip(s.iter()).map(|(&(a, b), si)| (a * si, b * si)).collect(),
        log_phi0: parts.log_phi0.map(|v| v - log_jac),
        smoothing: parts.smoothing,
    })
}

fn apply_perturbation(mut parts: Parts, pert: &PerturbationSpec) -> Result<Parts> {
    let n = parts.dim;
    let eta = SMOOTHING_WIDTH;
    match &pert.kind {
        PerturbationKind::IndicatorOfSymmetricConvexBody { body } => {
            body.validate(n)?;
            let b = body.clone();
            parts.membership = Some(and_membership(parts.membership.take(), Arc::new(move |x: &[f64]| b.contains(x))));
            let hw = body.bounding_half_widths(n);
            parts.bbox = parts.bbox.iter().zip(&hw).map(|(&(a, c), &h)| (a.max(-h), c.min(h))).collect();
        }
        PerturbationKind::TruncationBox { half_widths } => {
            if half_widths.len() != n || half_widths.iter().any(|h| !(*h > 0.0)) {
                return Err(Error::InvalidSpec("truncation half-widths must be positive, one per coordinate".into()));
            }
            let hw = half_widths.clone();
            let hw2 = hw.clone();
            parts.membership = Some(and_membership(
                parts.membership.take(),
                Arc::new(move |x: &[f64]| x.iter().zip(&hw2).all(|(v, h)| v.abs() <= *h)),
            ));
            parts.bbox = parts.bbox.iter().zip(&hw).map(|(&(a, c), &h)| (a.max(-h), c.min(h))).collect();
        }
        PerturbationKind::ExpNegQuadratic { matrix } => {
            let m = to_matrix(matrix, "perturbation matrix")?;
            if m.nrows() != n {
                return Err(Error::InvalidSpec("perturbation matrix size differs from dim".into()));
            }
            check_psd(&m)?;
            let (m1, m2, m3) = (m.clone(), m.clone(), m.clone());
            let log = parts.log.clone();
            parts.log = Arc::new(move |x: &[f64]| {
                let v = nalgebra::DVector::from_column_slice(x);
                log(x) - v.dot(&(&m1 * &v))
            });
            parts.grad = parts.grad.take().map(|g| {
                Arc::new(move |x: &[f64], out: &mut [f64]| {
                    g(x, out);
                    let v = nalgebra::DVector::from_column_slice(x);
                    let mv = &m2 * v;
                    for i in 0..out.len() {
                        out[i] -= 2.0 * mv[i];
                    }
                }) as GradientFn
            });
            parts.hess = parts.hess.take().map(|h| Arc::new(move |x: &[f64]| h(x) + &m3 * 2.0) as HessianFn);
            parts.log_phi0 = None;
        }
        PerturbationKind::ExpNegConvex { potential } => {
            let pot = potential.clone();
            let log = parts.log.clone();
            let p1 = pot.clone();
            parts.log = Arc::new(move |x: &[f64]| log(x) - p1.eval(x));
            parts.grad = match (&pot, parts.grad.take()) {
                (ConvexPotential::LpPower { p, weight }, Some(g)) => {
                    let (p, w) = (*p, *weight);
                    Some(Arc::new(move |x: &[f64], out: &mut [f64]| {
                        g(x, out);
                        for i in 0..x.len() {
                            let t = x[i];
                            out[i] -= w * p * t * (t * t + eta * eta).powf(0.5 * (p - 2.0));
                        }
                    }) as GradientFn)
                }
                _ => None,
            };
            parts.hess = None;
            parts.log_phi0 = None;
        }
    }
    if matches!(pert.kind, PerturbationKind::IndicatorOfSymmetricConvexBody { .. } | PerturbationKind::TruncationBox { .. }) {
        parts.log_phi0 = None;
    }
    Ok(parts)
}

/// Log of the perturbation factor alone, for flag certification.
fn perturbation_log(pert: &PerturbationSpec) -> Box<dyn Fn(&[f64]) -> f64 + '_> {
    match &pert.kind {
        PerturbationKind::IndicatorOfSymmetricConvexBody { body } => {
            Box::new(move |x| if body.contains(x) { 0.0 } else { f64::NEG_INFINITY })
        }
        PerturbationKind::TruncationBox { half_widths } => Box::new(move |x| {
            if x.iter().zip(half_widths).all(|(v, h)| v.abs() <= *h) {
                0.0
            } else {
                f64::NEG_INFINITY
            }
        }),
        PerturbationKind::ExpNegQuadratic { matrix } => Box::new(move |x| {
            let mut s = 0.0;
            for i in 0..x.len() {
                for j in 0..x.len() {
                    s += x[i] * matrix[i][j] * x[j];
                }
            }
            -s
        }),
        PerturbationKind::ExpNegConvex { potential } => Box::new(move |x| -potential.eval(x)),
    }
}

fn same(a: f64, b: f64) -> bool {
    (a == b) || (a.is_finite() && b.is_finite() && (a - b).abs() <= 1e-9 * (1.0 + a.abs()))
}

fn certify_perturbation(pert: &PerturbationSpec, bbox: &[(f64, f64)], seed: u64) -> Result<()> {
    let f = perturbation_log(pert);
    let n = bbox.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let point = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        bbox.iter().map(|&(a, b)| a + (b - a) * rng.random::<f64>()).collect()
    };
    for _ in 0..500 {
        let x = point(&mut rng);
        let fx = f(&x);
        if pert.flags.even {
            let y: Vec<f64> = x.iter().map(|v| -v).collect();
            if !same(fx, f(&y)) {
                return Err(Error::FlagNotCertified { flag: "even", detail: format!("rho(x) != rho(-x) at {x:?}") });
            }
        }
        if pert.flags.unconditional {
            let i = rng.random_range(0..n);
            let mut y = x.clone();
            y[i] = -y[i];
            if !same(fx, f(&y)) {
                return Err(Error::FlagNotCertified {
                    flag: "unconditional",
                    detail: format!("rho changes under flipping coordinate {i} at {x:?}"),
                });
            }
        }
        if pert.flags.log_concave {
            let y = point(&mut rng);
            let fy = f(&y);
            let mid: Vec<f64> = x.iter().zip(&y).map(|(a, b)| 0.5 * (a + b)).collect();
            let fm = f(&mid);
            let chord = 0.5 * (fx + fy);
            if chord.is_finite() && !(fm >= chord - 1e-9 * (1.0 + chord.abs())) {
                return Err(Error::FlagNotCertified {
                    flag: "log_concave",
                    detail: format!("midpoint inequality fails between {x:?} and {y:?}"),
                });
            }
        }
    }
    Ok(())
}

/// Builds the evaluator bundle for `spec`.
///
/// Families are normalized where the normalizing constant is known in closed
/// form; perturbed measures are left unnormalized.
pub fn build_measure(spec: &MeasureSpec) -> Result<Density> {
    let mut parts = family_parts(spec)?;
    if !matches!(spec.family, Family::Product { .. }) {
        parts = apply_scale(parts, spec.scale.as_deref())?;
    } else if spec.scale.is_some() {
        parts = apply_scale(parts, spec.scale.as_deref())?;
    }
    if let Some(pert) = &spec.perturbation {
        certify_perturbation(pert, &parts.bbox, 0xce57)?;
        parts = apply_perturbation(parts, pert)?;
    }
    if parts.bbox.iter().any(|(a, b)| !(b > a)) {
        return Err(Error::InvalidSpec("empty support box".into()));
    }
    let origin = vec![0.0; parts.dim];
    let ref_point: Vec<f64> = if (parts.log)(&origin).is_finite() && parts.membership.as_ref().is_none_or(|m| m(&origin)) {
        origin
    } else {
        parts.bbox.iter().map(|(a, b)| 0.5 * (a + b)).collect()
    };
    let log_ref = (parts.log)(&ref_point);
    let mut density = Density::from_log_fn(parts.dim, parts.bbox.clone(), {
        let l = parts.log.clone();
        move |x: &[f64]| l(x)
    })
    .with_gradient_arc(parts.grad.clone())
    .with_hessian_arc(parts.hess.clone())
    .with_membership_arc(parts.membership.clone())
    .with_symmetry(spec.flags.even, spec.flags.unconditional)
    .with_smoothing(parts.smoothing);
    if log_ref.is_finite() {
        density = density.with_log_reference(log_ref);
    }
    if let Some(l0) = parts.log_phi0 {
        density = density.with_normalization(l0.exp());
    }

    if spec.flags.even {
        let defect = density.even_defect(1000, 0xe7e7);
        if defect > 1e-10 {
            return Err(Error::FlagNotCertified { flag: "even", detail: format!("log-density asymmetry {defect:.3e}") });
        }
    }
    if spec.flags.unconditional {
        let defect = unconditional_defect(&density, 300, 0xf11b);
        if defect > 1e-10 {
            return Err(Error::FlagNotCertified {
                flag: "unconditional",
                detail: format!("coordinate-flip asymmetry {defect:.3e}"),
            });
        }
    }
    if parts.dim <= 3 {
        let mass = super::expectation::total_mass(&density, 24)?;
        if !(mass.is_finite() && mass > 0.0) {
            return Err(Error::UnboundedDensity(format!("mass on the truncation box is {mass}")));
        }
    }
    Ok(density)
}

fn unconditional_defect(d: &Density, samples: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..samples {
        let x: Vec<f64> = d.support_box().iter().map(|&(a, b)| a + (b - a) * rng.random::<f64>()).collect();
        let i = rng.random_range(0..d.dim());
        let mut y = x.clone();
        y[i] = -y[i];
        let (lx, ly) = (d.log_density(&x), d.log_density(&y));
        if lx.is_finite() != ly.is_finite() {
            return f64::INFINITY;
        }
        if lx.is_finite() {
            worst = worst.max((lx - ly).abs() / (1.0 + lx.abs()));
        }
    }
    worst
}

/// Closed-form Poincaré constant, when the family has one.
pub fn exact_poincare(spec: &MeasureSpec) -> Option<f64> {
    if spec.perturbation.is_some() {
        return None;
    }
    let scale_max2 = |i: Option<usize>| -> f64 {
        match (&spec.scale, i) {
            (Some(s), Some(i)) => s[i] * s[i],
            (Some(s), None) => s.iter().fold(0.0f64, |m, v| m.max(v * v)),
            (None, _) => 1.0,
        }
    };
    match &spec.family {
        Family::UniformInterval { a, b } => Some((b - a).powi(2) / (PI * PI) * scale_max2(None)),
        Family::Laplace => Some(4.0 * scale_max2(None)),
        Family::NuP { p, calibrated } => {
            let a = if *calibrated { alpha_p(*p) } else { 1.0 };
            if *p == 1.0 {
                Some(4.0 / (a * a) * scale_max2(None))
            } else if *p == 2.0 {
                Some(0.5 / (a * a) * scale_max2(None))
            } else {
                None
            }
        }
        Family::Gaussian { covariance } => {
            let n = spec.dim;
            let s: Vec<f64> = spec.scale.clone().unwrap_or_else(|| vec![1.0; n]);
            let m = DMatrix::from_fn(n, n, |i, j| covariance[i][j] * s[i] * s[j]);
            Some(*crate::linalg::sym_eig(&m).0.last()?)
        }
        Family::UniformBody { body } => {
            let n = spec.dim;
            match body {
                Body::Box { half_widths } => half_widths
                    .iter()
                    .enumerate()
                    .map(|(i, h)| (2.0 * h).powi(2) / (PI * PI) * scale_max2(Some(i)))
                    .reduce(f64::max),
                Body::Parallelotope { half_lengths, .. } if spec.scale.is_none() => {
                    half_lengths.iter().map(|h| (2.0 * h).powi(2) / (PI * PI)).reduce(f64::max)
                }
                Body::LpBall { .. } if n == 1 => {
                    let r = body.bounding_half_widths(1)[0];
                    Some((2.0 * r).powi(2) / (PI * PI) * scale_max2(None))
                }
                _ => None,
            }
        }
        Family::NuNQ { q } => {
            if q.iter().flatten().all(|v| *v == 0.0) {
                Some(4.0 * scale_max2(None))
            } else {
                None
            }
        }
        Family::Product { components } => {
            let mut best = 0.0f64;
            for (i, c) in components.iter().enumerate() {
                best = best.max(exact_poincare(c)? * scale_max2(Some(i)));
            }
            Some(best)
        }
        Family::TiltedNuP { .. } => None,
    }
}
