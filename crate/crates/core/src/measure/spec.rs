use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::body::Body;

/// Declarative description of a (possibly perturbed) measure on `ℝ^dim`.
///
/// JSON layout: `{"dim", "family", "perturbation", "flags", "scale"}` where
/// `family` and `perturbation.kind` are internally tagged by `"type"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasureSpec {
    pub dim: usize,
    pub family: Family,
    #[serde(default)]
    pub perturbation: Option<PerturbationSpec>,
    #[serde(default)]
    pub flags: SymmetryFlags,
    /// Per-coordinate dilation: the density becomes `x ↦ ρ(x / scale)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SymmetryFlags {
    #[serde(default)]
    pub even: bool,
    #[serde(default)]
    pub unconditional: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Family {
    /// Centered Gaussian with the given covariance.
    Gaussian { covariance: Vec<Vec<f64>> },
    /// Product of two-sided exponentials `e^{-|t|}/2`.
    Laplace,
    /// Product of `exp(-|t|^p)/Z_p`; with `calibrated` the argument is scaled
    /// by `α_p = 2Γ(1+1/p)` so that the density at the origin is 1.
    NuP {
        p: f64,
        #[serde(default)]
        calibrated: bool,
    },
    /// One-dimensional exponential tilt `exp(-|t|^p + a t)`.
    TiltedNuP { p: f64, a: f64 },
    UniformInterval { a: f64, b: f64 },
    UniformBody { body: Body },
    /// `exp(-‖x‖₁ - xᵀQx)`.
    NuNQ { q: Vec<Vec<f64>> },
    /// Product of one-dimensional components.
    Product { components: Vec<MeasureSpec> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationSpec {
    pub kind: PerturbationKind,
    #[serde(default)]
    pub flags: PerturbationFlags,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PerturbationFlags {
    #[serde(default)]
    pub even: bool,
    #[serde(default)]
    pub unconditional: bool,
    #[serde(default)]
    pub log_concave: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum PerturbationKind {
    IndicatorOfSymmetricConvexBody { body: Body },
    /// `exp(-xᵀMx)`
    ExpNegQuadratic { matrix: Vec<Vec<f64>> },
    ExpNegConvex { potential: ConvexPotential },
    TruncationBox { half_widths: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ConvexPotential {
    /// `weight · Σ|x_i|^p`
    LpPower { p: f64, weight: f64 },
    /// `weight · ‖x‖_p^p` evaluated on the projection onto the complement of
    /// the main diagonal, i.e. `weight · Σ|x_i - mean(x)|^p`.
    CenteredLpPower { p: f64, weight: f64 },
    /// Arbitrary convex potential; not serializable.
    #[serde(skip)]
    Custom(ConvexFn),
}

/// Shared convex potential evaluator.
#[derive(Clone)]
pub struct ConvexFn(pub Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>);

impl fmt::Debug for ConvexFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("ConvexFn(..)")
    }
}

impl PartialEq for ConvexFn {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.0, &other.0)
    }
}

impl ConvexPotential {
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            ConvexPotential::LpPower { p, weight } => weight * x.iter().map(|v| v.abs().powf(*p)).sum::<f64>(),
            ConvexPotential::CenteredLpPower { p, weight } => {
                let mean = x.iter().sum::<f64>() / x.len() as f64;
                weight * x.iter().map(|v| (v - mean).abs().powf(*p)).sum::<f64>()
            }
            ConvexPotential::Custom(f) => (f.0)(x),
        }
    }
}

impl MeasureSpec {
    pub fn new(dim: usize, family: Family) -> Self {
        Self { dim, family, perturbation: None, flags: SymmetryFlags::default(), scale: None }
    }

    pub fn laplace(dim: usize) -> Self {
        Self::new(dim, Family::Laplace).with_flags(true, true)
    }

    pub fn standard_gaussian(dim: usize) -> Self {
        let cov = (0..dim)
            .map(|i| (0..dim).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
        Self::new(dim, Family::Gaussian { covariance: cov }).with_flags(true, true)
    }

    pub fn gaussian(covariance: Vec<Vec<f64>>) -> Self {
        let dim = covariance.len();
        Self::new(dim, Family::Gaussian { covariance }).with_flags(true, false)
    }

    pub fn nu_p(dim: usize, p: f64) -> Self {
        Self::new(dim, Family::NuP { p, calibrated: false }).with_flags(true, true)
    }

    pub fn nu_n_q(q: Vec<Vec<f64>>) -> Self {
        let dim = q.len();
        Self::new(dim, Family::NuNQ { q }).with_flags(true, false)
    }

    pub fn uniform_interval(a: f64, b: f64) -> Self {
        let even = (a + b).abs() < 1e-15;
        Self::new(1, Family::UniformInterval { a, b }).with_flags(even, even)
    }

    pub fn uniform_body(dim: usize, body: Body) -> Self {
        let unc = body.is_unconditional();
        Self::new(dim, Family::UniformBody { body }).with_flags(true, unc)
    }

    pub fn product(components: Vec<MeasureSpec>) -> Self {
        let dim = components.len();
        Self::new(dim, Family::Product { components })
    }

    pub fn with_flags(mut self, even: bool, unconditional: bool) -> Self {
        self.flags = SymmetryFlags { even, unconditional };
        self
    }

    pub fn with_perturbation(mut self, kind: PerturbationKind, flags: PerturbationFlags) -> Self {
        if !flags.even {
            self.flags.even = false;
        }
        if !flags.unconditional {
            self.flags.unconditional = false;
        }
        self.perturbation = Some(PerturbationSpec { kind, flags });
        self
    }

    pub fn with_scale(mut self, scale: Vec<f64>) -> Self {
        self.scale = Some(scale);
        self
    }

    pub fn to_json(&self) -> serde_json::Result<String> {
        serde_json::to_string_pretty(self)
    }

    pub fn from_json(s: &str) -> serde_json::Result<Self> {
        serde_json::from_str(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_layout() {
        let spec = MeasureSpec::nu_n_q(vec![vec![0.5, 0.0], vec![0.0, 0.5]]).with_perturbation(
            PerturbationKind::IndicatorOfSymmetricConvexBody { body: Body::LpBall { p: 2.0, radius: 2.0 } },
            PerturbationFlags { even: true, unconditional: true, log_concave: true },
        );
        let v: serde_json::Value = serde_json::to_value(&spec).unwrap();
        assert_eq!(v["dim"], 2);
        assert_eq!(v["family"]["type"], "nu_n_q");
        assert_eq!(v["perturbation"]["kind"]["type"], "indicator_of_symmetric_convex_body");
        assert_eq!(v["flags"]["even"], true);
        let back = MeasureSpec::from_json(&spec.to_json().unwrap()).unwrap();
        assert_eq!(back, spec);
    }

    #[test]
    fn minimal_json_parses() {
        let s = r#"{"dim": 1, "family": {"type": "laplace"}, "perturbation": null, "flags": {"even": true, "unconditional": true}}"#;
        let spec = MeasureSpec::from_json(s).unwrap();
        assert_eq!(spec.family, Family::Laplace);
        assert!(spec.perturbation.is_none());
    }
}
