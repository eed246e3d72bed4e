use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type LogDensityFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
pub type GradientFn = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;
pub type HessianFn = Arc<dyn Fn(&[f64]) -> DMatrix<f64> + Send + Sync>;
pub type MembershipFn = Arc<dyn Fn(&[f64]) -> bool + Send + Sync>;

/// Evaluator bundle for a (possibly unnormalized) density `e^{-V}` on a box.
///
/// The log-density may be `-∞` outside the support. When `membership` is set
/// the support inside the box is a convex set given by that predicate, which
/// quadrature and grids use to resolve boundaries.
#[derive(Clone)]
pub struct Density {
    dim: usize,
    log_density: LogDensityFn,
    gradient: Option<GradientFn>,
    potential_hessian: Option<HessianFn>,
    membership: Option<MembershipFn>,
    support_box: Vec<(f64, f64)>,
    normalized: bool,
    density_at_origin: Option<f64>,
    log_reference: f64,
    even: bool,
    unconditional: bool,
    smoothing: Option<f64>,
}

impl fmt::Debug for Density {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Density")
            .field("dim", &self.dim)
            .field("support_box", &self.support_box)
            .field("normalized", &self.normalized)
            .field("density_at_origin", &self.density_at_origin)
            .field("even", &self.even)
            .field("unconditional", &self.unconditional)
            .finish_non_exhaustive()
    }
}

impl Density {
    pub fn from_log_fn<F>(dim: usize, support_box: Vec<(f64, f64)>, log_density: F) -> Self
    where
        F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        assert_eq!(support_box.len(), dim);
        let log_density: LogDensityFn = Arc::new(log_density);
        let center: Vec<f64> = support_box.iter().map(|(a, b)| 0.5 * (a + b)).collect();
        let r = log_density(&center);
        Self {
            dim,
            log_density,
            gradient: None,
            potential_hessian: None,
            membership: None,
            support_box,
            normalized: false,
            density_at_origin: None,
            log_reference: if r.is_finite() { r } else { 0.0 },
            even: false,
            unconditional: false,
            smoothing: None,
        }
    }

    pub fn with_gradient<G>(mut self, g: G) -> Self
    where
        G: Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    {
        self.gradient = Some(Arc::new(g));
        self
    }

    pub(crate) fn with_gradient_arc(mut self, g: Option<GradientFn>) -> Self {
        self.gradient = g;
        self
    }

    /// Hessian of the potential `V = -log ρ`.
    pub fn with_potential_hessian<H>(mut self, h: H) -> Self
    where
        H: Fn(&[f64]) -> DMatrix<f64> + Send + Sync + 'static,
    {
        self.potential_hessian = Some(Arc::new(h));
        self
    }

    pub(crate) fn with_hessian_arc(mut self, h: Option<HessianFn>) -> Self {
        self.potential_hessian = h;
        self
    }

    pub fn with_membership<M>(mut self, m: M) -> Self
    where
        M: Fn(&[f64]) -> bool + Send + Sync + 'static,
    {
        self.membership = Some(Arc::new(m));
        self
    }

    pub(crate) fn with_membership_arc(mut self, m: Option<MembershipFn>) -> Self {
        self.membership = m;
        self
    }

    pub fn with_symmetry(mut self, even: bool, unconditional: bool) -> Self {
        self.even = even;
        self.unconditional = unconditional;
        self
    }

    /// Marks the density as a probability density with known value at 0.
    pub fn with_normalization(mut self, density_at_origin: f64) -> Self {
        self.normalized = true;
        self.density_at_origin = Some(density_at_origin);
        self
    }

    pub fn with_log_reference(mut self, r: f64) -> Self {
        self.log_reference = r;
        self
    }

    pub(crate) fn with_smoothing(mut self, eta: Option<f64>) -> Self {
        self.smoothing = eta;
        self
    }

    pub fn with_support_box(mut self, support_box: Vec<(f64, f64)>) -> Self {
        assert_eq!(support_box.len(), self.dim);
        self.support_box = support_box;
        self
    }

    /// Same density shifted by a constant in log space.
    pub fn shifted(&self, c: f64) -> Self {
        let inner = self.log_density.clone();
        let mut out = self.clone();
        out.log_density = Arc::new(move |x| inner(x) + c);
        out.log_reference += c;
        out.normalized = false;
        out.density_at_origin = None;
        out
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn log_density(&self, x: &[f64]) -> f64 {
        if let Some(m) = &self.membership {
            if !m(x) {
                return f64::NEG_INFINITY;
            }
        }
        (self.log_density)(x)
    }

    pub fn log_density_fn(&self) -> LogDensityFn {
        self.log_density.clone()
    }

    /// Density value relative to the reference level, `exp(log ρ - ref)`.
    pub fn relative_density(&self, x: &[f64]) -> f64 {
        (self.log_density(x) - self.log_reference).exp()
    }

    pub fn log_reference(&self) -> f64 {
        self.log_reference
    }

    pub fn membership(&self) -> Option<&MembershipFn> {
        self.membership.as_ref()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        self.membership.as_ref().is_none_or(|m| m(x))
    }

    pub fn support_box(&self) -> &[(f64, f64)] {
        &self.support_box
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn density_at_origin(&self) -> Option<f64> {
        self.density_at_origin
    }

    pub fn is_even(&self) -> bool {
        self.even
    }

    pub fn is_unconditional(&self) -> bool {
        self.unconditional
    }

    /// Smoothing width used by the gradient for `|·|` terms, if any.
    pub fn smoothing(&self) -> Option<f64> {
        self.smoothing
    }

    pub fn has_analytic_gradient(&self) -> bool {
        self.gradient.is_some()
    }

    pub fn has_analytic_hessian(&self) -> bool {
        self.potential_hessian.is_some()
    }

    /// Gradient of the log-density; central differences when no analytic
    /// gradient was supplied.
    pub fn grad_log_density(&self, x: &[f64], out: &mut [f64]) {
        if let Some(g) = &self.gradient {
            g(x, out);
            return;
        }
        let mut y = x.to_vec();
        for i in 0..self.dim {
            let h = 1e-5 * (1.0 + x[i].abs());
            y[i] = x[i] + h;
            let fp = (self.log_density)(&y);
            y[i] = x[i] - h;
            let fm = (self.log_density)(&y);
            y[i] = x[i];
            out[i] = (fp - fm) / (2.0 * h);
        }
    }

    /// Hessian of the potential `V = -log ρ`; central differences when no
    /// analytic Hessian was supplied.
    pub fn potential_hessian(&self, x: &[f64]) -> DMatrix<f64> {
        if let Some(h) = &self.potential_hessian {
            return h(x);
        }
        let n = self.dim;
        let v = |y: &[f64]| -(self.log_density)(y);
        let mut hess = DMatrix::zeros(n, n);
        let mut y = x.to_vec();
        for i in 0..n {
            let hi = 1e-4 * (1.0 + x[i].abs());
            for j in i..n {
                let hj = 1e-4 * (1.0 + x[j].abs());
                let mut acc = 0.0;
                for (si, sj, w) in [(1.0, 1.0, 1.0), (1.0, -1.0, -1.0), (-1.0, 1.0, -1.0), (-1.0, -1.0, 1.0)] {
                    y.copy_from_slice(x);
                    y[i] += si * hi;
                    y[j] += sj * hj;
                    acc += w * v(&y);
                }
                let val = acc / (4.0 * hi * hj);
                hess[(i, j)] = val;
                hess[(j, i)] = val;
            }
        }
        hess
    }

    /// One-dimensional restriction `t ↦ ρ(anchor + (t - anchor_i) e_i)`.
    pub fn restrict_to_line(&self, axis: usize, anchor: &[f64]) -> Density {
        assert!(axis < self.dim);
        let base = self.clone();
        let anchor = anchor.to_vec();
        let a2 = anchor.clone();
        let b2 = self.clone();
        let restricted = Density::from_log_fn(1, vec![self.support_box[axis]], move |t: &[f64]| {
            let mut x = anchor.clone();
            x[axis] = t[0];
            base.log_density(&x)
        });
        let membership = self.membership.as_ref().map(|_| {
            let anchor = a2.clone();
            let b = b2.clone();
            Arc::new(move |t: &[f64]| {
                let mut x = anchor.clone();
                x[axis] = t[0];
                b.contains(&x)
            }) as MembershipFn
        });
        let mut out = restricted.with_membership_arc(membership);
        let mut probe = a2.clone();
        probe[axis] = 0.0;
        let r = self.log_density(&probe);
        if r.is_finite() {
            out.log_reference = r;
        }
        out
    }

    /// Largest `|log ρ(x) - log ρ(-x)|` over random points of the box where
    /// both values are finite.
    pub fn even_defect(&self, samples: usize, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst = 0.0f64;
        for _ in 0..samples {
            let x: Vec<f64> = self.support_box.iter().map(|&(a, b)| a + (b - a) * rng.random::<f64>()).collect();
            let y: Vec<f64> = x.iter().map(|v| -v).collect();
            let (lx, ly) = (self.log_density(&x), self.log_density(&y));
            match (lx.is_finite(), ly.is_finite()) {
                (true, true) => worst = worst.max((lx - ly).abs() / (1.0 + lx.abs())),
                (false, false) => {}
                _ => worst = f64::INFINITY,
            }
        }
        worst
    }
}
