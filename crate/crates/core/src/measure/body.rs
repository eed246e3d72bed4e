use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Origin-symmetric convex body.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Body {
    /// `{x : Σ|x_i|^p ≤ radius^p}`
    LpBall { p: f64, radius: f64 },
    /// `{x : |x_i| ≤ half_widths[i]}`
    Box { half_widths: Vec<f64> },
    /// `{x : |⟨x, axes[k]⟩| ≤ half_lengths[k]}`; the axes must be orthonormal.
    Parallelotope { axes: Vec<Vec<f64>>, half_lengths: Vec<f64> },
}

impl Body {
    pub fn validate(&self, dim: usize) -> Result<()> {
        match self {
            Body::LpBall { p, radius } => {
                if !(*p >= 1.0) || !(*radius > 0.0) {
                    return Err(Error::InvalidSpec(format!(
                        "l_p ball needs p >= 1 and radius > 0 (p={p}, radius={radius})"
                    )));
                }
            }
            Body::Box { half_widths } => {
                if half_widths.len() != dim || half_widths.iter().any(|h| !(*h > 0.0)) {
                    return Err(Error::InvalidSpec("box half-widths must be positive, one per coordinate".into()));
                }
            }
            Body::Parallelotope { axes, half_lengths } => {
                if axes.len() != dim || half_lengths.len() != dim || axes.iter().any(|a| a.len() != dim) {
                    return Err(Error::InvalidSpec("parallelotope needs dim axes of length dim".into()));
                }
                for (i, a) in axes.iter().enumerate() {
                    for (j, b) in axes.iter().enumerate() {
                        let d: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                        let target = if i == j { 1.0 } else { 0.0 };
                        if (d - target).abs() > 1e-10 {
                            return Err(Error::InvalidSpec("parallelotope axes are not orthonormal".into()));
                        }
                    }
                }
                if half_lengths.iter().any(|h| !(*h > 0.0)) {
                    return Err(Error::InvalidSpec("parallelotope half-lengths must be positive".into()));
                }
            }
        }
        Ok(())
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        match self {
            Body::LpBall { p, radius } => {
                let s: f64 = x.iter().map(|v| (v / radius).abs().powf(*p)).sum();
                s <= 1.0
            }
            Body::Box { half_widths } => x.iter().zip(half_widths).all(|(v, h)| v.abs() <= *h),
            Body::Parallelotope { axes, half_lengths } => axes.iter().zip(half_lengths).all(|(a, h)| {
                let d: f64 = a.iter().zip(x).map(|(u, v)| u * v).sum();
                d.abs() <= *h
            }),
        }
    }

    /// Half-width of the axis-aligned bounding box along each coordinate.
    pub fn bounding_half_widths(&self, dim: usize) -> Vec<f64> {
        match self {
            Body::LpBall { radius, .. } => vec![*radius; dim],
            Body::Box { half_widths } => half_widths.clone(),
            Body::Parallelotope { axes, half_lengths } => (0..dim)
                .map(|i| axes.iter().zip(half_lengths).map(|(a, h)| h * a[i].abs()).sum())
                .collect(),
        }
    }

    /// Lebesgue volume in dimension `dim`.
    pub fn volume(&self, dim: usize) -> f64 {
        use statrs::function::gamma::ln_gamma;
        match self {
            Body::LpBall { p, radius } => {
                let n = dim as f64;
                (n * (2.0f64.ln() + ln_gamma(1.0 + 1.0 / p)) - ln_gamma(1.0 + n / p)).exp() * radius.powf(n)
            }
            Body::Box { half_widths } => half_widths.iter().map(|h| 2.0 * h).product(),
            Body::Parallelotope { half_lengths, .. } => half_lengths.iter().map(|h| 2.0 * h).product(),
        }
    }

    /// Orthogonal parallelotope inside the cube `[-1/2, 1/2]^n` whose long side,
    /// of length `(1-ε)√n`, lies along the main diagonal.
    pub fn cube_parallelotope(n: usize, eps: f64) -> Result<Body> {
        if n < 2 || !(eps > 0.0 && eps < 1.0) {
            return Err(Error::InvalidSpec(format!("need n >= 2 and 0 < eps < 1 (n={n}, eps={eps})")));
        }
        let nf = n as f64;
        let mut axes = vec![vec![1.0 / nf.sqrt(); n]];
        // Helmert complement of the diagonal
        for k in 1..n {
            let c = 1.0 / ((k * (k + 1)) as f64).sqrt();
            let mut v = vec![0.0; n];
            v[..k].iter_mut().for_each(|x| *x = c);
            v[k] = -(k as f64) * c;
            axes.push(v);
        }
        let spread = (0..n).map(|i| axes[1..].iter().map(|a| a[i].abs()).sum::<f64>()).fold(0.0, f64::max);
        let mut half_lengths = vec![0.5 * eps / spread; n];
        half_lengths[0] = 0.5 * (1.0 - eps) * nf.sqrt();
        Ok(Body::Parallelotope { axes, half_lengths })
    }

    /// Covariance of the uniform measure, for boxes and parallelotopes.
    pub fn uniform_covariance(&self, dim: usize) -> Option<Vec<Vec<f64>>> {
        match self {
            Body::LpBall { .. } => None,
            Body::Box { half_widths } => Some(
                (0..dim)
                    .map(|i| (0..dim).map(|j| if i == j { half_widths[i].powi(2) / 3.0 } else { 0.0 }).collect())
                    .collect(),
            ),
            Body::Parallelotope { axes, half_lengths } => Some(
                (0..dim)
                    .map(|i| {
                        (0..dim)
                            .map(|j| axes.iter().zip(half_lengths).map(|(a, h)| h * h / 3.0 * a[i] * a[j]).sum())
                            .collect()
                    })
                    .collect(),
            ),
        }
    }

    /// Invariant under every coordinate sign flip.
    pub fn is_unconditional(&self) -> bool {
        match self {
            Body::LpBall { .. } | Body::Box { .. } => true,
            Body::Parallelotope { axes, .. } => axes
                .iter()
                .all(|a| a.iter().filter(|v| v.abs() > 1e-14).count() == 1),
        }
    }
}
