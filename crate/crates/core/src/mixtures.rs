//! Even one-dimensional Gaussian mixtures, the weights
//! `α(t) = φ(t)⁻¹ ∫_{|t|}^∞ u φ(u) du` and their upper bounds.

use std::f64::consts::PI;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::measure::{alpha_p, integrate_many, Density, Family, MeasureSpec};
use crate::quadrature::{adaptive, Estimate};

/// Below this value of `φ(t)` the weight is not evaluated.
pub const UNDERFLOW_FLOOR: f64 = 1e-300;
const TAIL_ABS_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum MixtureKind {
    /// `e^{-|t|}/2`
    Laplace,
    /// `N(0, σ²)`
    Gaussian { sigma: f64 },
    /// `e^{-|t|^p} / (2Γ(1+1/p))`, a Gaussian mixture for `0 < p ≤ 2`.
    NuP { p: f64 },
    /// Finite mixing measure: atoms `(σ_k, w_k)`.
    Atomic { atoms: Vec<(f64, f64)> },
}

/// An even density `φ(t/s)/s` with `φ` one of the kinds above.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureDensity {
    pub kind: MixtureKind,
    #[serde(default = "one")]
    pub scale: f64,
}

fn one() -> f64 {
    1.0
}

fn normal_pdf(t: f64, sigma: f64) -> f64 {
    (-0.5 * (t / sigma).powi(2)).exp() / (sigma * (2.0 * PI).sqrt())
}

fn log_sum_exp(terms: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = terms.collect();
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

impl MixtureDensity {
    pub fn new(kind: MixtureKind) -> Result<Self> {
        let d = Self { kind, scale: 1.0 };
        d.validate()?;
        Ok(d)
    }

    pub fn laplace() -> Self {
        Self { kind: MixtureKind::Laplace, scale: 1.0 }
    }

    pub fn gaussian(sigma: f64) -> Self {
        Self { kind: MixtureKind::Gaussian { sigma }, scale: 1.0 }
    }

    pub fn nu_p(p: f64) -> Self {
        Self { kind: MixtureKind::NuP { p }, scale: 1.0 }
    }

    /// ν_p rescaled so that `φ(0) = 1`.
    pub fn calibrated_nu_p(p: f64) -> Self {
        Self::nu_p(p).scaled(1.0 / alpha_p(p))
    }

    pub fn atomic(atoms: Vec<(f64, f64)>) -> Result<Self> {
        Self::new(MixtureKind::Atomic { atoms })
    }

    pub fn scaled(mut self, s: f64) -> Self {
        self.scale *= s;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.scale > 0.0) {
            return Err(Error::InvalidSpec(format!("mixture scale {} must be positive", self.scale)));
        }
        match &self.kind {
            MixtureKind::Laplace => {}
            MixtureKind::Gaussian { sigma } => {
                if !(*sigma > 0.0) {
                    return Err(Error::InvalidSpec(format!("sigma = {sigma}")));
                }
            }
            MixtureKind::NuP { p } => {
                if !(*p > 0.0 && *p <= 2.0) {
                    return Err(Error::InvalidSpec(format!("nu_p is a Gaussian mixture only for 0 < p <= 2, got {p}")));
                }
            }
            MixtureKind::Atomic { atoms } => {
                if atoms.is_empty() || atoms.iter().any(|(s, w)| !(*s > 0.0) || !(*w > 0.0)) {
                    return Err(Error::InvalidSpec("atoms need sigma > 0 and weight > 0".into()));
                }
                let total: f64 = atoms.iter().map(|a| a.1).sum();
                if (total - 1.0).abs() > 1e-12 {
                    return Err(Error::InvalidSpec(format!("atom weights sum to {total}")));
                }
            }
        }
        Ok(())
    }

    /// Atoms `(σ_k, w_k)` of the mixing measure when it is known explicitly.
    pub fn mixing(&self) -> Option<Vec<(f64, f64)>> {
        let s = self.scale;
        match &self.kind {
            MixtureKind::Gaussian { sigma } => Some(vec![(sigma * s, 1.0)]),
            MixtureKind::Atomic { atoms } => Some(atoms.iter().map(|(a, w)| (a * s, *w)).collect()),
            MixtureKind::NuP { p } if *p == 2.0 => Some(vec![(s / 2f64.sqrt(), 1.0)]),
            _ => None,
        }
    }

    fn log_phi_unit(&self, t: f64) -> f64 {
        let t = t.abs();
        match &self.kind {
            MixtureKind::Laplace => -t - 2f64.ln(),
            MixtureKind::Gaussian { sigma } => -0.5 * (t / sigma).powi(2) - (sigma * (2.0 * PI).sqrt()).ln(),
            MixtureKind::NuP { p } => -t.powf(*p) - (2f64.ln() + ln_gamma(1.0 + 1.0 / p)),
            MixtureKind::Atomic { atoms } => log_sum_exp(
                atoms
                    .iter()
                    .map(|(s, w)| w.ln() - 0.5 * (t / s).powi(2) - (s * (2.0 * PI).sqrt()).ln()),
            ),
        }
    }

    pub fn log_phi(&self, t: f64) -> f64 {
        self.log_phi_unit(t / self.scale) - self.scale.ln()
    }

    pub fn phi(&self, t: f64) -> f64 {
        self.log_phi(t).exp()
    }

    pub fn phi0(&self) -> f64 {
        self.phi(0.0)
    }

    /// `-d/dt log φ(t)` for `t > 0`.
    pub fn potential_derivative(&self, t: f64) -> f64 {
        let s = self.scale;
        let u = t.abs() / s;
        let v = match &self.kind {
            MixtureKind::Laplace => 1.0,
            MixtureKind::Gaussian { sigma } => u / (sigma * sigma),
            MixtureKind::NuP { p } => p * u.powf(p - 1.0),
            MixtureKind::Atomic { atoms } => {
                let num: f64 = atoms.iter().map(|(sg, w)| w * normal_pdf(u, *sg) * u / (sg * sg)).sum();
                let den: f64 = atoms.iter().map(|(sg, w)| w * normal_pdf(u, *sg)).sum();
                num / den
            }
        };
        v / s
    }

    /// `α` of the unit-scale density, closed form where one exists.
    fn alpha_unit(&self, t: f64) -> Estimate {
        let t = t.abs();
        match &self.kind {
            MixtureKind::Laplace => Estimate { value: t + 1.0, error: 0.0 },
            MixtureKind::Gaussian { sigma } => Estimate { value: sigma * sigma, error: 0.0 },
            MixtureKind::NuP { p } if *p == 1.0 => Estimate { value: t + 1.0, error: 0.0 },
            MixtureKind::NuP { p } if *p == 2.0 => Estimate { value: 0.5, error: 0.0 },
            MixtureKind::NuP { p } => {
                // ∫_t^∞ u exp(-(u^p - t^p)) du, cut where the integrand ratio drops below e^{-745}
                let p = *p;
                let tp = t.powf(p);
                let upper = (tp + 745.0).powf(1.0 / p);
                let f = |u: f64| u * (-(u.powf(p) - tp)).exp();
                // split at the peak of u e^{-u^p} to keep panels balanced
                let peak = (1.0 / p).powf(1.0 / p).max(t);
                let mut e = adaptive(f, t, peak, TAIL_ABS_TOL, 1e-14);
                let e2 = adaptive(f, peak, upper, TAIL_ABS_TOL, 1e-14);
                e.value += e2.value;
                e.error += e2.error;
                e
            }
            MixtureKind::Atomic { atoms } => {
                let num: f64 = atoms.iter().map(|(s, w)| w * s * s * normal_pdf(t, *s)).sum();
                let den: f64 = atoms.iter().map(|(s, w)| w * normal_pdf(t, *s)).sum();
                Estimate { value: num / den, error: 0.0 }
            }
        }
    }

    fn check_floor(&self, t: f64) -> Result<()> {
        if self.phi(t) > UNDERFLOW_FLOOR {
            Ok(())
        } else {
            Err(Error::DensityUnderflow(t))
        }
    }

    /// `∫_{|t|}^∞ u φ(u) du` with an error bound.
    pub fn tail_first_moment(&self, t: f64) -> Result<Estimate> {
        self.check_floor(t)?;
        let a = self.alpha_weight_estimate(t)?;
        let phi = self.phi(t);
        Ok(Estimate { value: a.value * phi, error: a.error * phi })
    }

    pub fn alpha_weight_estimate(&self, t: f64) -> Result<Estimate> {
        self.check_floor(t)?;
        let s2 = self.scale * self.scale;
        let a = self.alpha_unit(t / self.scale);
        Ok(Estimate { value: s2 * a.value, error: s2 * a.error })
    }

    /// Largest `|t|` with `φ(t)` above the underflow floor.
    pub fn window(&self) -> f64 {
        let (mut lo, mut hi) = (0.0, self.scale);
        while self.phi(hi) > UNDERFLOW_FLOOR {
            lo = hi;
            hi *= 2.0;
        }
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if self.phi(mid) > UNDERFLOW_FLOOR {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo * (1.0 - 1e-12)
    }

    /// Second differences of `log φ` on a grid over the underflow window.
    pub fn is_log_concave(&self) -> bool {
        let w = self.window();
        let h = w / 400.0;
        (1..400).all(|k| {
            let t = k as f64 * h;
            let dd = self.log_phi(t + h) - 2.0 * self.log_phi(t) + self.log_phi(t - h);
            dd <= 1e-10 * self.log_phi(t).abs().max(1.0)
        })
    }

    /// Spot checks of evenness, monotonicity on `[0, ∞)` and, for explicit
    /// mixings, agreement with `Σ w_k N(t; σ_k)`.
    pub fn spot_check(&self) -> Result<()> {
        self.validate()?;
        let w = self.window().min(50.0 * self.scale);
        let mut prev = f64::INFINITY;
        for k in 0..=200 {
            let t = w * k as f64 / 200.0;
            let (a, b) = (self.log_phi(t), self.log_phi(-t));
            if (a - b).abs() > 1e-12 * a.abs().max(1.0) {
                return Err(Error::InvalidSpec(format!("phi is not even at t = {t}")));
            }
            if a > prev + 1e-12 * a.abs().max(1.0) {
                return Err(Error::InvalidSpec(format!("phi increases at t = {t}")));
            }
            prev = a;
            if let Some(atoms) = self.mixing() {
                let direct: f64 = atoms.iter().map(|(s, wk)| wk * normal_pdf(t, *s)).sum();
                if (direct - self.phi(t)).abs() > 1e-10 {
                    return Err(Error::InvalidSpec(format!("mixing representation off at t = {t}")));
                }
            }
        }
        Ok(())
    }
}

/// `α(t) = φ(t)⁻¹ ∫_{|t|}^∞ u φ(u) du`.
pub fn alpha_weight(d: &MixtureDensity, t: f64) -> Result<f64> {
    Ok(d.alpha_weight_estimate(t)?.value)
}

/// Same weight from the mixing measure, `φ(t)⁻¹ ∫ σ e^{-t²/(2σ²)}/√(2π) dm(σ)`.
pub fn alpha_from_mixing(d: &MixtureDensity, t: f64) -> Option<f64> {
    let atoms = d.mixing()?;
    let num: f64 = atoms
        .iter()
        .map(|(s, w)| w * s * (-0.5 * (t / s).powi(2)).exp() / (2.0 * PI).sqrt())
        .sum();
    let den: f64 = atoms.iter().map(|(s, w)| w * normal_pdf(t, *s)).sum();
    Some(num / den)
}

/// `α(t)` from `log φ` alone by adaptive quadrature of `u·exp(log φ(u) - log φ(t))`;
/// an independent path used to cross-check closed forms.
pub fn alpha_by_quadrature(d: &MixtureDensity, t: f64) -> Result<Estimate> {
    d.check_floor(t)?;
    let t = t.abs();
    let lt = d.log_phi(t);
    let mut upper = t + d.scale;
    while d.log_phi(upper) - lt > -745.0 {
        upper = t + 2.0 * (upper - t);
    }
    let f = |u: f64| u * (d.log_phi(u) - lt).exp();
    let mut e = Estimate { value: 0.0, error: 0.0 };
    // geometric panels resolve both the bulk and the tail
    let mut a = t;
    let mut width = d.scale / 8.0;
    while a < upper {
        let b = (a + width).min(upper);
        let p = adaptive(f, a, b, TAIL_ABS_TOL * 1e-2, 1e-14);
        e.value += p.value;
        e.error += p.error;
        a = b;
        width *= 2.0;
    }
    Ok(e)
}

/// `|t|/(2φ(0)) + 1/(4φ(0)²)`.
pub fn alpha_bound(d: &MixtureDensity, t: f64) -> f64 {
    let p0 = d.phi0();
    t.abs() / (2.0 * p0) + 1.0 / (4.0 * p0 * p0)
}

/// `c (1 + |t|^{2-p})`.
pub fn alpha_bound_nu_p(p: f64, t: f64, c: f64) -> f64 {
    c * (1.0 + t.abs().powf(2.0 - p))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmpiricalConstant {
    pub p: f64,
    pub c: f64,
    pub argmax: f64,
    pub grid_points: usize,
    pub t_max: f64,
}

/// Empirical `c = max_t α(t)/(1+|t|^{2-p})` for `ν_p` on `points` equally
/// spaced `t ∈ [0, t_max]`, with `t_max` the underflow window by default.
pub fn empirical_nu_p_constant(p: f64, points: usize, t_max: Option<f64>) -> Result<EmpiricalConstant> {
    if !(p > 1.0 && p < 2.0) {
        return Err(Error::InvalidSpec(format!("refinement needs 1 < p < 2, got {p}")));
    }
    let d = MixtureDensity::nu_p(p);
    let t_max = t_max.unwrap_or_else(|| d.window());
    let (mut c, mut argmax) = (0.0, 0.0);
    for k in 0..points {
        let t = t_max * k as f64 / (points - 1).max(1) as f64;
        let r = alpha_weight(&d, t)? / (1.0 + t.powf(2.0 - p));
        if r > c {
            c = r;
            argmax = t;
        }
    }
    Ok(EmpiricalConstant { p, c, argmax, grid_points: points, t_max })
}

/// Both sides of `∫_t^∞ u φ(u) du ≤ 2 (t/V'(t)) φ(t)`, meaningful when `t V'(t) ≥ 2`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TailRefinement {
    pub t: f64,
    pub t_v_prime: f64,
    pub tail: f64,
    pub bound: f64,
    pub applies: bool,
    pub holds: bool,
}

pub fn tail_refinement(d: &MixtureDensity, t: f64) -> Result<TailRefinement> {
    let t = t.abs();
    let vp = d.potential_derivative(t);
    let tail = d.tail_first_moment(t)?;
    let bound = 2.0 * t / vp * d.phi(t);
    Ok(TailRefinement {
        t,
        t_v_prime: t * vp,
        tail: tail.value,
        bound,
        applies: t * vp >= 2.0,
        holds: tail.value <= bound * (1.0 + 1e-12) + tail.error,
    })
}

/// One-dimensional mixture components of a product measure built from `spec`
/// (perturbations ignored).
pub fn components_of(spec: &MeasureSpec) -> Result<Vec<MixtureDensity>> {
    let scale = |i: usize| spec.scale.as_ref().map_or(1.0, |s| s[i]);
    let out: Vec<MixtureDensity> = match &spec.family {
        Family::Laplace => (0..spec.dim).map(|i| MixtureDensity::laplace().scaled(scale(i))).collect(),
        Family::NuP { p, calibrated } => {
            let base = if *calibrated { MixtureDensity::calibrated_nu_p(*p) } else { MixtureDensity::nu_p(*p) };
            (0..spec.dim).map(|i| base.clone().scaled(scale(i))).collect()
        }
        Family::Gaussian { covariance } => {
            for (i, row) in covariance.iter().enumerate() {
                for (j, v) in row.iter().enumerate() {
                    if i != j && *v != 0.0 {
                        return Err(Error::InvalidSpec("only diagonal Gaussians are products".into()));
                    }
                }
            }
            (0..spec.dim).map(|i| MixtureDensity::gaussian(covariance[i][i].sqrt()).scaled(scale(i))).collect()
        }
        Family::NuNQ { q } if q.iter().flatten().all(|v| *v == 0.0) => {
            (0..spec.dim).map(|i| MixtureDensity::laplace().scaled(scale(i))).collect()
        }
        Family::Product { components } => {
            let mut v = Vec::new();
            for (i, c) in components.iter().enumerate() {
                let mut inner = components_of(c)?;
                if inner.len() != 1 {
                    return Err(Error::InvalidSpec("product components must be one-dimensional".into()));
                }
                v.push(inner.remove(0).scaled(scale(i)));
            }
            v
        }
        other => return Err(Error::InvalidSpec(format!("{other:?} is not a product of Gaussian mixtures"))),
    };
    for d in &out {
        d.validate()?;
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WeightedVarianceBound {
    pub variance: f64,
    pub weighted_energy: f64,
    pub holds: bool,
    pub error: f64,
}

fn oddness_defect<F: Fn(&[f64]) -> f64>(f: &F, d: &Density, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = d.dim();
    let mut worst = 0.0f64;
    let mut x = vec![0.0; n];
    let mut y = vec![0.0; n];
    for _ in 0..200 {
        for (k, (a, b)) in d.support_box().iter().enumerate() {
            x[k] = rng.random_range(*a..*b);
            y[k] = -x[k];
        }
        let (fx, fy) = (f(&x), f(&y));
        worst = worst.max((fx + fy).abs() / fx.abs().max(fy.abs()).max(1.0));
    }
    worst
}

fn fd_partial<F: Fn(&[f64]) -> f64>(f: &F, x: &[f64], i: usize, h: f64, buf: &mut [f64]) -> f64 {
    buf.copy_from_slice(x);
    buf[i] = x[i] + h;
    let fp = f(buf);
    buf[i] = x[i] - h;
    let fm = f(buf);
    (fp - fm) / (2.0 * h)
}

/// `Var_μ(f)` against `∫ Σ α_i(x_i) (∂_i f)² dμ` for `μ` the (perturbed)
/// product whose unperturbed components are `components`.
pub fn weighted_variance_bound<F>(
    mu: &Density,
    components: &[MixtureDensity],
    f: F,
    res: usize,
    tolerance: f64,
) -> Result<WeightedVarianceBound>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let n = mu.dim();
    if components.len() != n {
        return Err(Error::DimensionMismatch(components.len(), n));
    }
    if n > 3 {
        return Err(Error::DimensionTooLarge(n));
    }
    let defect = oddness_defect(&f, mu, 17);
    if defect > 1e-10 {
        return Err(Error::FNotOdd(defect));
    }
    let windows: Vec<f64> = components.iter().map(|c| c.window()).collect();
    let weight = |i: usize, t: f64| {
        if t.abs() < windows[i] {
            alpha_weight(&components[i], t).unwrap_or_else(|_| alpha_bound(&components[i], t))
        } else {
            alpha_bound(&components[i], t)
        }
    };
    let (est, _) = integrate_many(
        mu,
        3,
        |x, out| {
            let v = f(x);
            let mut buf = vec![0.0; n];
            let mut e = 0.0;
            for i in 0..n {
                let h = 1e-5 * (1.0 + x[i].abs());
                let g = fd_partial(&f, x, i, h, &mut buf);
                e += weight(i, x[i]) * g * g;
            }
            out[0] = v;
            out[1] = v * v;
            out[2] = e;
        },
        res,
    )?;
    let variance = est[1].value - est[0].value * est[0].value;
    let error = est[1].error + 2.0 * est[0].value.abs() * est[0].error + est[2].error;
    Ok(WeightedVarianceBound {
        variance,
        weighted_energy: est[2].value,
        holds: variance <= est[2].value + tolerance + error,
        error,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorrelationCheck {
    /// `∫ f g dμ`
    pub joint: f64,
    /// `∫ f dμ · ∫ g dμ`
    pub product: f64,
    pub holds: bool,
    pub error: f64,
}

fn correlation<F, G>(mu: &Density, f: F, g: G, res: usize) -> Result<(f64, f64, f64)>
where
    F: Fn(&[f64]) -> f64 + Sync,
    G: Fn(&[f64]) -> f64 + Sync,
{
    let (est, _) = integrate_many(
        mu,
        3,
        |x, out| {
            let (a, b) = (f(x), g(x));
            out[0] = a * b;
            out[1] = a;
            out[2] = b;
        },
        res,
    )?;
    let err = est[0].error + est[1].error * est[2].value.abs() + est[2].error * est[1].value.abs();
    Ok((est[0].value, est[1].value * est[2].value, err))
}

/// Positive correlation `∫ fg ≥ ∫f ∫g` for even quasi-concave `f, g`.
pub fn correlation_check<F, G>(mu: &Density, f: F, g: G, res: usize, tolerance: f64) -> Result<CorrelationCheck>
where
    F: Fn(&[f64]) -> f64 + Sync,
    G: Fn(&[f64]) -> f64 + Sync,
{
    let (joint, product, error) = correlation(mu, f, g, res)?;
    Ok(CorrelationCheck { joint, product, holds: joint >= product - tolerance - error, error })
}

/// Negative correlation `∫ cg ≤ ∫c ∫g` for even convex `c` and even log-concave `g`.
pub fn convex_correlation_check<F, G>(mu: &Density, c: F, g: G, res: usize, tolerance: f64) -> Result<CorrelationCheck>
where
    F: Fn(&[f64]) -> f64 + Sync,
    G: Fn(&[f64]) -> f64 + Sync,
{
    let (joint, product, error) = correlation(mu, c, g, res)?;
    Ok(CorrelationCheck { joint, product, holds: joint <= product + tolerance + error, error })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AlphaRow {
    pub t: f64,
    pub alpha: f64,
    pub bound: f64,
}

/// `(t, α(t), bound(t))` on `points` equally spaced `t ∈ [0, t_max]`; past the
/// underflow window the bound is reported in place of `α`.
pub fn alpha_profile(d: &MixtureDensity, t_max: f64, points: usize) -> Vec<AlphaRow> {
    (0..points)
        .map(|k| {
            let t = t_max * k as f64 / (points - 1).max(1) as f64;
            let bound = alpha_bound(d, t);
            let alpha = alpha_weight(d, t).unwrap_or(bound);
            AlphaRow { t, alpha, bound }
        })
        .collect()
}

pub fn write_alpha_profile<W: Write>(rows: &[AlphaRow], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    for r in rows {
        wr.serialize(r)?;
    }
    wr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scaling_law() {
        let d = MixtureDensity::laplace().scaled(2.0);
        // φ(t) = e^{-|t|/2}/4, α(t) = 4(|t|/2 + 1)
        assert!((d.phi(1.0) - (-0.5f64).exp() / 4.0).abs() < 1e-15);
        assert!((alpha_weight(&d, 3.0).unwrap() - 10.0).abs() < 1e-12);
    }

    #[test]
    fn calibrated_density_is_one_at_origin() {
        for p in [1.0, 1.5, 2.0] {
            assert!((MixtureDensity::calibrated_nu_p(p).phi0() - 1.0).abs() < 1e-14);
        }
    }
}
