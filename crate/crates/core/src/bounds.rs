//! Closed-form Poincaré bounds with explicit, configurable constants, and the
//! matrix criterion built from conditional one-dimensional gaps.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::measure::{alpha_p, Body, Density};
use crate::spectral1d::conditional_gap;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundValue {
    pub value: f64,
    pub formula_id: String,
    pub constants_used: BTreeMap<String, f64>,
    pub provenance: String,
    /// True when every constant was left at its nominal default of 1.
    pub nominal: bool,
}

/// Inputs for [`eval_bound`]; each formula reads only the fields it lists.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct BoundParams {
    pub n: Option<usize>,
    pub d: Option<usize>,
    pub p: Option<f64>,
    pub covariance: Option<Vec<Vec<f64>>>,
    pub oscillation: Option<f64>,
    /// Poincaré constants of the factors of a product.
    pub component_cp: Option<Vec<f64>>,
    /// Variances of the factors of a product.
    pub variances: Option<Vec<f64>>,
    /// Poincaré constant of the reference measure.
    pub cp: Option<f64>,
    /// Poincaré constant restricted to linear functions, `‖Cov‖_op`.
    pub cp_linear: Option<f64>,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct FormulaInfo {
    pub id: &'static str,
    pub citation: &'static str,
    pub params: &'static [&'static str],
    pub constants: &'static [&'static str],
}

pub const REGISTRY: &[FormulaInfo] = &[
    FormulaInfo { id: "trace", citation: "C_P(mu) <= c Tr(Cov(mu))", params: &["covariance"], constants: &["c"] },
    FormulaInfo {
        id: "hilbert_schmidt",
        citation: "C_P(mu) <= c ||Cov(mu)||_HS",
        params: &["covariance"],
        constants: &["c"],
    },
    FormulaInfo {
        id: "tensorization",
        citation: "C_P(mu_1 x ... x mu_n) = max_i C_P(mu_i)",
        params: &["component_cp"],
        constants: &[],
    },
    FormulaInfo {
        id: "bounded_perturbation",
        citation: "C_P(e^{-V} mu) <= C_P(mu) e^{Osc(V)}",
        params: &["cp", "oscillation"],
        constants: &[],
    },
    FormulaInfo {
        id: "even_general",
        citation: "C_P(mu^{n,rho}) <= c sum_i Var(mu_i) for even log-concave rho",
        params: &["variances"],
        constants: &["c"],
    },
    FormulaInfo {
        id: "mixture_sqrt",
        citation: "C_P(mu^{n,rho}) <= c n^{1/2} max_i Var(mu_i) for Gaussian-mixture factors",
        params: &["n", "variances"],
        constants: &["c"],
    },
    FormulaInfo {
        id: "mixture_log",
        citation: "C_P(mu^{n,rho}) <= (1 + C log n) C_P(mu^{n,1}) for Gaussian-mixture factors",
        params: &["n", "cp"],
        constants: &["C"],
    },
    FormulaInfo {
        id: "nu_p_log",
        citation: "C_P(nu_p^{n,rho}) <= (1 + C log n)^{(2-p)/p}, 1 <= p <= 2",
        params: &["n", "p"],
        constants: &["C"],
    },
    FormulaInfo {
        id: "z_e_lower",
        citation: "Z_E >= (sqrt(pi) / (n^{1/p-1/2} alpha_p))^d Gamma(1+d/p) / Gamma(1+d/2), alpha_p = 2 Gamma(1+1/p)",
        params: &["n", "d", "p"],
        constants: &[],
    },
    FormulaInfo {
        id: "section",
        citation: "C_P(B_p^n cap E) <= c(kappa) (n/d)^{2/p-1} log(n)^{2/p}, kappa = d/n",
        params: &["n", "d", "p"],
        constants: &["c_kappa"],
    },
    FormulaInfo {
        id: "level_set",
        citation: "C_P(level set) <= C C_P(mu) log(e + C_P(mu) sqrt(d))",
        params: &["cp", "d"],
        constants: &["C"],
    },
    FormulaInfo {
        id: "unconditional_log2",
        citation: "C_P(lambda_K) <= c log(1+n)^2 C_P(lambda_K, linear) for unconditional K",
        params: &["n", "cp_linear"],
        constants: &["c"],
    },
];

pub fn formula(id: &str) -> Result<&'static FormulaInfo> {
    REGISTRY.iter().find(|f| f.id == id).ok_or_else(|| Error::UnknownFormula(id.to_string()))
}

fn bad(id: &str, detail: impl Into<String>) -> Error {
    Error::BadParams { formula: id.to_string(), detail: detail.into() }
}

fn need<T: Clone>(id: &str, name: &str, v: &Option<T>) -> Result<T> {
    v.clone().ok_or_else(|| bad(id, format!("missing parameter `{name}`")))
}

fn positive(id: &str, name: &str, v: f64) -> Result<f64> {
    if v.is_finite() && v >= 0.0 {
        Ok(v)
    } else {
        Err(bad(id, format!("`{name}` = {v} must be finite and nonnegative")))
    }
}

fn cov_matrix(id: &str, c: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let n = c.len();
    if n == 0 || c.iter().any(|r| r.len() != n) {
        return Err(bad(id, "covariance must be a nonempty square matrix"));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| c[i][j]))
}

/// Evaluates a registry formula. Constants not present in `constants` take
/// their nominal value 1; every constant the formula uses is recorded.
pub fn eval_bound(id: &str, params: &BoundParams, constants: &BTreeMap<String, f64>) -> Result<BoundValue> {
    let info = formula(id)?;
    let mut used = BTreeMap::new();
    let mut nominal = true;
    for name in info.constants {
        let v = constants.get(*name).copied().unwrap_or(1.0);
        if !(v.is_finite() && v > 0.0) {
            return Err(bad(id, format!("constant {name} = {v} must be positive")));
        }
        nominal &= v == 1.0;
        used.insert(name.to_string(), v);
    }
    let k = |name: &str| used[name];
    let n_of = |p: &BoundParams| -> Result<f64> {
        let n = need(id, "n", &p.n)?;
        if n == 0 {
            return Err(bad(id, "n must be at least 1"));
        }
        Ok(n as f64)
    };
    let value = match id {
        "trace" => k("c") * cov_matrix(id, &need(id, "covariance", &params.covariance)?)?.trace(),
        "hilbert_schmidt" => k("c") * cov_matrix(id, &need(id, "covariance", &params.covariance)?)?.norm(),
        "tensorization" => {
            let c = need(id, "component_cp", &params.component_cp)?;
            if c.is_empty() {
                return Err(bad(id, "no components"));
            }
            let mut m = 0.0f64;
            for v in &c {
                m = m.max(positive(id, "component_cp", *v)?);
            }
            m
        }
        "bounded_perturbation" => {
            let cp = positive(id, "cp", need(id, "cp", &params.cp)?)?;
            cp * positive(id, "oscillation", need(id, "oscillation", &params.oscillation)?)?.exp()
        }
        "even_general" => {
            let v = need(id, "variances", &params.variances)?;
            k("c") * v.iter().map(|x| positive(id, "variances", *x)).sum::<Result<f64>>()?
        }
        "mixture_sqrt" => {
            let n = n_of(params)?;
            let v = need(id, "variances", &params.variances)?;
            let mut m = 0.0f64;
            for x in &v {
                m = m.max(positive(id, "variances", *x)?);
            }
            k("c") * n.sqrt() * m
        }
        "mixture_log" => {
            let n = n_of(params)?;
            (1.0 + k("C") * n.ln()) * positive(id, "cp", need(id, "cp", &params.cp)?)?
        }
        "nu_p_log" => {
            let n = n_of(params)?;
            let p = need(id, "p", &params.p)?;
            if !(1.0..=2.0).contains(&p) {
                return Err(bad(id, format!("p = {p} outside [1, 2]")));
            }
            (1.0 + k("C") * n.ln()).powf((2.0 - p) / p)
        }
        "z_e_lower" => {
            let n = n_of(params)?;
            let d = need(id, "d", &params.d)? as f64;
            let p = need(id, "p", &params.p)?;
            if !(p >= 1.0) || d < 1.0 || d > n {
                return Err(bad(id, format!("need p >= 1 and 1 <= d <= n (p={p}, d={d}, n={n})")));
            }
            let base = PI.sqrt().ln() - (1.0 / p - 0.5) * n.ln() - alpha_p(p).ln();
            (d * base + ln_gamma(1.0 + d / p) - ln_gamma(1.0 + d / 2.0)).exp()
        }
        "section" => {
            let n = n_of(params)?;
            let d = need(id, "d", &params.d)? as f64;
            let p = need(id, "p", &params.p)?;
            if !(1.0..=2.0).contains(&p) || d < 1.0 || d > n {
                return Err(bad(id, format!("need 1 <= p <= 2 and 1 <= d <= n (p={p}, d={d}, n={n})")));
            }
            k("c_kappa") * (n / d).powf(2.0 / p - 1.0) * n.ln().powf(2.0 / p)
        }
        "level_set" => {
            let cp = positive(id, "cp", need(id, "cp", &params.cp)?)?;
            let d = need(id, "d", &params.d)? as f64;
            k("C") * cp * (std::f64::consts::E + cp * d.sqrt()).ln()
        }
        "unconditional_log2" => {
            let n = n_of(params)?;
            let cl = positive(id, "cp_linear", need(id, "cp_linear", &params.cp_linear)?)?;
            k("c") * (1.0 + n).ln().powi(2) * cl
        }
        _ => unreachable!("registry entry without an evaluator"),
    };
    if !(value >= 0.0) {
        return Err(bad(id, format!("formula evaluated to {value}")));
    }
    Ok(BoundValue { value, formula_id: id.to_string(), constants_used: used, provenance: info.citation.to_string(), nominal })
}

/// `C_P` of the uniform measure on the diagonal parallelotope of the cube,
/// assembled as the maximum of interval constants `(side)²/π²`.
pub fn parallelotope_constant(n: usize, eps: f64) -> Result<f64> {
    if n == 0 || !(eps > 0.0 && eps < 1.0) {
        return Err(bad("parallelotope", format!("need n >= 1 and 0 < eps < 1 (n={n}, eps={eps})")));
    }
    let sides: Vec<f64> = if n == 1 {
        vec![1.0 - eps]
    } else {
        match Body::cube_parallelotope(n, eps)? {
            Body::Parallelotope { half_lengths, .. } => {
                // the short sides may always be shrunk below the long one
                let long = half_lengths[0];
                half_lengths.iter().map(|h| 2.0 * h.min(long)).collect()
            }
            _ => unreachable!(),
        }
    };
    let params = BoundParams { component_cp: Some(sides.iter().map(|l| l * l / (PI * PI)).collect()), ..Default::default() };
    Ok(eval_bound("tensorization", &params, &BTreeMap::new())?.value)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HelfferReport {
    pub bound: Option<BoundValue>,
    /// Smallest eigenvalue of `K(x)` over the probes.
    pub epsilon: f64,
    pub worst_probe: Vec<f64>,
    pub conditional_gaps: Vec<Vec<f64>>,
}

/// Matrix criterion: `K(x)` has diagonal `1/C_P` of the conditional laws along
/// each axis and off-diagonal `∂²_{ij}V(x)`; if `K(x) ⪰ ε Id` on all probes the
/// bound is `1/ε`.
pub fn helffer_bound(d: &Density, probes: &[Vec<f64>]) -> Result<HelfferReport> {
    let n = d.dim();
    if n > 3 {
        return Err(Error::DimensionTooLarge(n));
    }
    if probes.is_empty() {
        return Err(Error::InvalidSpec("no probe points".into()));
    }
    let mut eps = f64::INFINITY;
    let mut worst = probes[0].clone();
    let mut gaps = Vec::with_capacity(probes.len());
    for x in probes {
        if x.len() != n {
            return Err(Error::DimensionMismatch(x.len(), n));
        }
        let h = d.potential_hessian(x);
        let mut k = DMatrix::zeros(n, n);
        let mut g = Vec::with_capacity(n);
        for i in 0..n {
            let gi = conditional_gap(d, i, x)?;
            g.push(gi);
            k[(i, i)] = gi;
            for j in 0..n {
                if i != j {
                    k[(i, j)] = h[(i, j)];
                }
            }
        }
        let m = SymmetricEigen::new(k).eigenvalues.min();
        if m < eps {
            eps = m;
            worst = x.clone();
        }
        gaps.push(g);
    }
    let bound = (eps > 0.0).then(|| BoundValue {
        value: 1.0 / eps,
        formula_id: "helffer".into(),
        constants_used: BTreeMap::new(),
        provenance: "K(x) >= eps Id for all x implies C_P(mu) <= 1/eps".into(),
        nominal: true,
    });
    Ok(HelfferReport { bound, epsilon: eps, worst_probe: worst, conditional_gaps: gaps })
}

/// Tensor grid of probe points over `[-r, r]^dim`.
pub fn probe_grid(dim: usize, r: f64, per_axis: usize) -> Vec<Vec<f64>> {
    let per_axis = per_axis.max(1);
    let coord = |k: usize| if per_axis == 1 { 0.0 } else { -r + 2.0 * r * k as f64 / (per_axis - 1) as f64 };
    let total = per_axis.pow(dim as u32);
    (0..total)
        .map(|mut idx| {
            (0..dim)
                .map(|_| {
                    let c = coord(idx % per_axis);
                    idx /= per_axis;
                    c
                })
                .collect()
        })
        .collect()
}
