//! MCMC samplers (MALA for densities, hit-and-run for sections of ℓ_p balls),
//! covariance estimation with batch-means errors and PSD dominance checks.

use std::io::Write;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measure::{moments, Density};
use crate::par;

const DIVERGENCE_RADIUS: f64 = 1e6;
const BISECTION_STEPS: usize = 50;
const CHORD_TOL: f64 = 1e-10;
/// Absolute tolerance for dominance checks between quadrature covariances.
pub const QUADRATURE_TOLERANCE: f64 = 1e-8;

/// Section `B_p^n ∩ E` in coordinates `y ∈ ℝ^d` of an orthonormal basis of `E`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SectionSpec {
    pub n: usize,
    pub p: f64,
    /// `d × n`, rows orthonormal.
    pub basis: Vec<Vec<f64>>,
}

impl SectionSpec {
    pub fn new(n: usize, p: f64, basis: Vec<Vec<f64>>) -> Result<Self> {
        if !(1.0..=2.0).contains(&p) {
            return Err(Error::InvalidSpec(format!("section exponent p = {p} outside [1, 2]")));
        }
        if basis.is_empty() || basis.len() > n || basis.iter().any(|r| r.len() != n) {
            return Err(Error::InvalidSpec(format!("basis must be d x {n} with 1 <= d <= {n}")));
        }
        for i in 0..basis.len() {
            for j in 0..basis.len() {
                let ip: f64 = basis[i].iter().zip(&basis[j]).map(|(a, b)| a * b).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                if (ip - want).abs() > 1e-12 {
                    return Err(Error::InvalidSpec(format!("basis rows {i}, {j} not orthonormal: {ip}")));
                }
            }
        }
        Ok(Self { n, p, basis })
    }

    /// `E = ℝ^n` with the standard basis.
    pub fn full(n: usize, p: f64) -> Result<Self> {
        let basis = (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
        Self::new(n, p, basis)
    }

    /// Uniformly random `d`-dimensional subspace.
    pub fn random(n: usize, d: usize, p: f64, seed: u64) -> Result<Self> {
        if d == 0 || d > n {
            return Err(Error::InvalidSpec(format!("need 1 <= d <= n, got d = {d}, n = {n}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = DMatrix::<f64>::from_fn(n, d, |_, _| rng.sample(StandardNormal));
        let q = g.qr().q();
        let mut basis: Vec<Vec<f64>> = (0..d).map(|k| q.column(k).iter().cloned().collect()).collect();
        // re-orthonormalize to push rounding below the validation threshold
        for k in 0..d {
            for j in 0..k {
                let ip: f64 = basis[k].iter().zip(&basis[j]).map(|(a, b)| a * b).sum();
                let bj = basis[j].clone();
                basis[k].iter_mut().zip(&bj).for_each(|(a, b)| *a -= ip * b);
            }
            let nrm = basis[k].iter().map(|a| a * a).sum::<f64>().sqrt();
            basis[k].iter_mut().for_each(|a| *a /= nrm);
        }
        Self::new(n, p, basis)
    }

    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    pub fn kappa(&self) -> f64 {
        self.dim() as f64 / self.n as f64
    }

    /// Ambient point `yᵀ·basis`.
    pub fn embed(&self, y: &[f64]) -> Vec<f64> {
        let mut x = vec![0.0; self.n];
        for (yk, row) in y.iter().zip(&self.basis) {
            x.iter_mut().zip(row).for_each(|(a, b)| *a += yk * b);
        }
        x
    }

    pub fn contains(&self, y: &[f64]) -> bool {
        self.embed(y).iter().map(|v| v.abs().powf(self.p)).sum::<f64>() <= 1.0
    }

    /// Box containing the section: `|y_k| ≤ ‖b_k‖_q` with `q` the dual exponent.
    pub fn bounding_box(&self) -> Vec<(f64, f64)> {
        self.basis
            .iter()
            .map(|row| {
                let h = if self.p == 1.0 {
                    row.iter().fold(0.0f64, |m, v| m.max(v.abs()))
                } else {
                    let q = self.p / (self.p - 1.0);
                    row.iter().map(|v| v.abs().powf(q)).sum::<f64>().powf(1.0 / q)
                };
                (-h, h)
            })
            .collect()
    }

    /// Uniform density on the section, usable by the grid solvers when `d ≤ 3`.
    pub fn uniform_density(&self) -> Density {
        let s = self.clone();
        let s2 = self.clone();
        Density::from_log_fn(self.dim(), self.bounding_box(), move |y: &[f64]| {
            if s.contains(y) {
                0.0
            } else {
                f64::NEG_INFINITY
            }
        })
        .with_membership(move |y: &[f64]| s2.contains(y))
        .with_log_reference(0.0)
        .with_symmetry(true, false)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampleBatch {
    #[serde(skip)]
    pub samples: Vec<Vec<f64>>,
    pub dim: usize,
    pub count: usize,
    pub seed: u64,
    pub chains: usize,
    pub burn_in: usize,
    pub acceptance_rate: Option<f64>,
    pub step_size: Option<f64>,
    /// Smoothing width of `|·|` terms in the gradient, when one was used.
    pub smoothing: Option<f64>,
    pub effective_sample_size: Vec<f64>,
    pub audited: usize,
    pub audit_failures: usize,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MalaOptions {
    /// Total steps per chain, burn-in included.
    pub steps: usize,
    pub seed: u64,
    pub chains: usize,
    pub initial_step: f64,
    pub target_acceptance: (f64, f64),
}

impl Default for MalaOptions {
    fn default() -> Self {
        Self { steps: 100_000, seed: 0, chains: 1, initial_step: 0.5, target_acceptance: (0.5, 0.6) }
    }
}

fn chain_rng(seed: u64, chain: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chain as u64);
    rng
}

struct ChainOut {
    samples: Vec<Vec<f64>>,
    accepted: usize,
    proposed: usize,
    step: f64,
}

fn mala_chain(d: &Density, opts: &MalaOptions, chain: usize) -> Result<ChainOut> {
    let n = d.dim();
    let mut rng = chain_rng(opts.seed, chain);
    let burn = opts.steps / 10;
    let mut x = vec![0.0; n];
    if !d.log_density(&x).is_finite() {
        x = d.support_box().iter().map(|(a, b)| 0.5 * (a + b)).collect();
    }
    let mut lx = d.log_density(&x);
    if !lx.is_finite() {
        return Err(Error::InvalidSpec("MALA start point has zero density".into()));
    }
    let mut gx = vec![0.0; n];
    d.grad_log_density(&x, &mut gx);
    let mut y = vec![0.0; n];
    let mut gy = vec![0.0; n];
    let mut log_step = opts.initial_step.ln();
    let target = 0.5 * (opts.target_acceptance.0 + opts.target_acceptance.1);
    let mut samples = Vec::with_capacity(opts.steps - burn);
    let (mut accepted, mut proposed) = (0, 0);
    for it in 0..opts.steps {
        let h = log_step.exp();
        for i in 0..n {
            let z: f64 = rng.sample(StandardNormal);
            y[i] = x[i] + 0.5 * h * h * gx[i] + h * z;
        }
        let ly = d.log_density(&y);
        let mut accept = false;
        if ly.is_finite() {
            d.grad_log_density(&y, &mut gy);
            // log q(x|y) - log q(y|x)
            let mut fwd = 0.0;
            let mut bwd = 0.0;
            for i in 0..n {
                let a = y[i] - x[i] - 0.5 * h * h * gx[i];
                let b = x[i] - y[i] - 0.5 * h * h * gy[i];
                fwd += a * a;
                bwd += b * b;
            }
            let log_ratio = ly - lx + (fwd - bwd) / (2.0 * h * h);
            let u: f64 = rng.random();
            accept = u.ln() < log_ratio;
        } else {
            let _: f64 = rng.random();
        }
        if accept {
            x.copy_from_slice(&y);
            gx.copy_from_slice(&gy);
            lx = ly;
        }
        if x.iter().map(|v| v * v).sum::<f64>().sqrt() > DIVERGENCE_RADIUS {
            return Err(Error::DivergentChain(it));
        }
        if it < burn {
            // Robbins–Monro on the log step size, frozen after burn-in
            let rate = if accept { 1.0 } else { 0.0 };
            log_step += (rate - target) / ((it + 1) as f64).powf(0.6).max(1.0) * 2.0;
            log_step = log_step.clamp(-20.0, 5.0);
        } else {
            proposed += 1;
            accepted += accept as usize;
            samples.push(x.clone());
        }
    }
    Ok(ChainOut { samples, accepted, proposed, step: log_step.exp() })
}

fn assemble(
    outs: Vec<Result<ChainOut>>,
    dim: usize,
    seed: u64,
    burn_in: usize,
    contains: &(dyn Fn(&[f64]) -> bool + Sync),
    mala: bool,
    smoothing: Option<f64>,
) -> Result<SampleBatch> {
    let mut samples = Vec::new();
    let (mut acc, mut prop) = (0usize, 0usize);
    let mut steps = Vec::new();
    let chains = outs.len();
    for o in outs {
        let o = o?;
        acc += o.accepted;
        prop += o.proposed;
        steps.push(o.step);
        samples.extend(o.samples);
    }
    if samples.is_empty() {
        return Err(Error::TooFewSamples(0));
    }
    let audited: Vec<usize> = (0..samples.len()).step_by(100).collect();
    let audit_failures = audited.iter().filter(|&&i| !contains(&samples[i])).count();
    let ess = effective_sample_size(&samples, dim);
    Ok(SampleBatch {
        count: samples.len(),
        samples,
        dim,
        seed,
        chains,
        burn_in,
        acceptance_rate: mala.then(|| acc as f64 / prop.max(1) as f64),
        step_size: mala.then(|| steps.iter().sum::<f64>() / steps.len() as f64),
        smoothing,
        effective_sample_size: ess,
        audited: audited.len(),
        audit_failures,
    })
}

/// Metropolis-adjusted Langevin sampling of `d`. The proposal uses the
/// (possibly smoothed) gradient; the accept step uses the exact density.
pub fn run_mala(d: &Density, opts: &MalaOptions) -> Result<SampleBatch> {
    if opts.steps < 10 || opts.chains == 0 {
        return Err(Error::InvalidSpec("MALA needs at least 10 steps and one chain".into()));
    }
    let outs = par::map(0..opts.chains, |c| mala_chain(d, opts, c));
    let contains = |x: &[f64]| d.log_density(x).is_finite();
    assemble(outs, d.dim(), opts.seed, opts.steps / 10, &contains, true, d.smoothing())
}

fn chord_end<F: Fn(&[f64]) -> bool>(inside: &F, x: &[f64], dir: &[f64], buf: &mut [f64]) -> Result<f64> {
    let at = |t: f64, buf: &mut [f64]| {
        buf.iter_mut().zip(x.iter().zip(dir)).for_each(|(b, (a, v))| *b = a + t * v);
        inside(buf)
    };
    let (mut lo, mut hi) = (0.0, 1.0);
    while at(hi, buf) {
        lo = hi;
        hi *= 2.0;
        if hi > DIVERGENCE_RADIUS {
            return Err(Error::ChordNotFound(x.to_vec()));
        }
    }
    for _ in 0..BISECTION_STEPS {
        if hi - lo <= CHORD_TOL {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if at(mid, buf) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

/// Hit-and-run on the convex set `{y : inside(y)}` of `ℝ^dim`, started at `start`.
pub fn run_hit_and_run_with<F>(dim: usize, inside: F, start: &[f64], steps: usize, seed: u64, chains: usize) -> Result<SampleBatch>
where
    F: Fn(&[f64]) -> bool + Sync,
{
    if !inside(start) {
        return Err(Error::ChordNotFound(start.to_vec()));
    }
    if steps < 10 || chains == 0 {
        return Err(Error::InvalidSpec("hit-and-run needs at least 10 steps and one chain".into()));
    }
    let burn = steps / 10;
    let outs = par::map(0..chains, |c| -> Result<ChainOut> {
        let mut rng = chain_rng(seed, c);
        let mut x = start.to_vec();
        let mut dir = vec![0.0; dim];
        let mut buf = vec![0.0; dim];
        let mut samples = Vec::with_capacity(steps - burn);
        for it in 0..steps {
            let mut nrm = 0.0f64;
            for v in dir.iter_mut() {
                *v = rng.sample(StandardNormal);
                nrm += *v * *v;
            }
            let nrm = nrm.sqrt();
            dir.iter_mut().for_each(|v| *v /= nrm);
            let up = chord_end(&inside, &x, &dir, &mut buf)?;
            dir.iter_mut().for_each(|v| *v = -*v);
            let down = chord_end(&inside, &x, &dir, &mut buf)?;
            let t: f64 = rng.random_range(-down..=up);
            // dir now points backwards
            x.iter_mut().zip(&dir).for_each(|(a, v)| *a -= t * v);
            if it >= burn {
                samples.push(x.clone());
            }
        }
        Ok(ChainOut { samples, accepted: 0, proposed: 0, step: 0.0 })
    });
    assemble(outs, dim, seed, burn, &inside, false, None)
}

/// Uniform samples from a section `B_p^n ∩ E`, in basis coordinates.
pub fn run_hit_and_run(body: &SectionSpec, steps: usize, seed: u64) -> Result<SampleBatch> {
    run_hit_and_run_with(body.dim(), |y| body.contains(y), &vec![0.0; body.dim()], steps, seed, 1)
}

fn batch_size(count: usize) -> usize {
    ((count as f64).sqrt() as usize).max(1)
}

/// Batch-means effective sample size per coordinate, capped at the count.
pub fn effective_sample_size(samples: &[Vec<f64>], dim: usize) -> Vec<f64> {
    let n = samples.len();
    let b = batch_size(n);
    let nb = n / b;
    (0..dim)
        .map(|k| {
            let mean = samples.iter().map(|s| s[k]).sum::<f64>() / n as f64;
            let var = samples.iter().map(|s| (s[k] - mean).powi(2)).sum::<f64>() / n as f64;
            if var == 0.0 || nb < 2 {
                return n as f64;
            }
            let bm: Vec<f64> = (0..nb).map(|j| samples[j * b..(j + 1) * b].iter().map(|s| s[k]).sum::<f64>() / b as f64).collect();
            let bmean = bm.iter().sum::<f64>() / nb as f64;
            let bvar = bm.iter().map(|v| (v - bmean).powi(2)).sum::<f64>() / (nb - 1) as f64;
            (n as f64 * var / (b as f64 * bvar)).min(n as f64)
        })
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CovEstimate {
    pub matrix: DMatrix<f64>,
    /// Per-entry standard error (batch means for samples, quadrature error otherwise).
    pub stderr: DMatrix<f64>,
    pub mean: Vec<f64>,
    pub count: usize,
    pub op_norm: f64,
    pub trace: f64,
    pub from_quadrature: bool,
}

impl CovEstimate {
    fn finish(matrix: DMatrix<f64>, stderr: DMatrix<f64>, mean: Vec<f64>, count: usize, from_quadrature: bool) -> Self {
        let matrix = (&matrix + matrix.transpose()) * 0.5;
        let eig = SymmetricEigen::new(matrix.clone()).eigenvalues;
        let op_norm = eig.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let trace = matrix.trace();
        Self { matrix, stderr, mean, count, op_norm, trace, from_quadrature }
    }

    pub fn from_matrix(matrix: DMatrix<f64>, error: f64) -> Self {
        let n = matrix.nrows();
        Self::finish(matrix, DMatrix::from_element(n, n, error), vec![0.0; n], 0, true)
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }
}

/// Empirical covariance with batch-means standard errors.
pub fn covariance(batch: &SampleBatch) -> Result<CovEstimate> {
    let s = &batch.samples;
    let n = s.len();
    if n < 1000 {
        return Err(Error::TooFewSamples(n));
    }
    let d = batch.dim;
    // shifting by the first sample keeps constant batches exactly zero
    let shift = s[0].clone();
    let centred: Vec<f64> = (0..d).map(|k| par::sum(0..n, |i| s[i][k] - shift[k]) / n as f64).collect();
    let mean: Vec<f64> = (0..d).map(|k| shift[k] + centred[k]).collect();
    let b = batch_size(n);
    let nb = n / b;
    let mut m = DMatrix::zeros(d, d);
    let mut se = DMatrix::zeros(d, d);
    for i in 0..d {
        for j in i..d {
            let prod = |t: usize| (s[t][i] - shift[i] - centred[i]) * (s[t][j] - shift[j] - centred[j]);
            let c = par::sum(0..n, prod) / n as f64;
            let bm: Vec<f64> = (0..nb).map(|k| (k * b..(k + 1) * b).map(prod).sum::<f64>() / b as f64).collect();
            let bmean = bm.iter().sum::<f64>() / nb as f64;
            let bvar = bm.iter().map(|v| (v - bmean).powi(2)).sum::<f64>() / (nb.max(2) - 1) as f64;
            let e = (bvar / nb as f64).sqrt();
            m[(i, j)] = c;
            m[(j, i)] = c;
            se[(i, j)] = e;
            se[(j, i)] = e;
        }
    }
    Ok(CovEstimate::finish(m, se, mean, n, false))
}

/// Covariance of `d` by tensor quadrature (`dim ≤ 3`).
pub fn quadrature_covariance(d: &Density, res: usize) -> Result<CovEstimate> {
    if d.dim() > 3 {
        return Err(Error::DimensionTooLarge(d.dim()));
    }
    let (mean, cov, err) = moments(d, res)?;
    let n = cov.nrows();
    Ok(CovEstimate::finish(cov, DMatrix::from_element(n, n, err), mean, 0, true))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Dominance {
    pub holds: bool,
    /// Smallest eigenvalue of `factor·B - A`.
    pub margin: f64,
    pub tolerance: f64,
    pub factor: f64,
}

/// Whether `A ⪯ factor·B`.
pub fn dominance_check(a: &CovEstimate, b: &CovEstimate, factor: f64) -> Result<Dominance> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch(a.dim(), b.dim()));
    }
    let diff = &b.matrix * factor - &a.matrix;
    let margin = SymmetricEigen::new(diff).eigenvalues.min();
    let tolerance = if a.from_quadrature && b.from_quadrature {
        QUADRATURE_TOLERANCE
    } else {
        // eigenvalue perturbation is bounded by the Frobenius norm of the error
        let frob: f64 = a
            .stderr
            .iter()
            .zip(b.stderr.iter())
            .map(|(ea, eb)| ea * ea + factor * factor * eb * eb)
            .sum::<f64>()
            .sqrt();
        3.0 * frob
    };
    Ok(Dominance { holds: margin >= -tolerance, margin, tolerance, factor })
}

/// Nearest PSD matrix in Frobenius norm (negative eigenvalues clipped).
pub fn psd_projection(m: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = m.len();
    let a = DMatrix::from_fn(n, n, |i, j| 0.5 * (m[i][j] + m[j][i]));
    let e = SymmetricEigen::new(a);
    let mut lam = e.eigenvalues.clone();
    lam.iter_mut().for_each(|v| *v = v.max(0.0));
    let p = &e.eigenvectors * DMatrix::from_diagonal(&lam) * e.eigenvectors.transpose();
    (0..n).map(|i| (0..n).map(|j| 0.5 * (p[(i, j)] + p[(j, i)])).collect()).collect()
}

pub fn write_samples_csv<W: Write>(batch: &SampleBatch, w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record((0..batch.dim).map(|k| format!("x{k}")))?;
    for s in &batch.samples {
        wr.write_record(s.iter().map(|v| format!("{v:e}")))?;
    }
    wr.flush()?;
    Ok(())
}

pub fn write_diagnostics_json<W: Write>(batch: &SampleBatch, w: W) -> Result<()> {
    serde_json::to_writer_pretty(w, batch)?;
    Ok(())
}

/// Covariance of a random section together with the `(n/d)^{2/p-1} log(n)^{2/p}`
/// envelope; for `d ≤ 3` the Poincaré constant is taken from the grid solver.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SectionReport {
    pub section: SectionSpec,
    pub seed: u64,
    pub steps: usize,
    pub covariance: CovEstimate,
    pub envelope: f64,
    pub grid_poincare: Option<f64>,
    /// `C_P / ‖Cov‖_op` when the grid constant is available.
    pub ratio: Option<f64>,
    pub effective_sample_size: Vec<f64>,
}

pub fn section_envelope(n: usize, d: usize, p: f64) -> f64 {
    (n as f64 / d as f64).powf(2.0 / p - 1.0) * (n as f64).ln().powf(2.0 / p)
}

pub fn section_experiment(section: &SectionSpec, steps: usize, seed: u64, grid_resolution: Option<usize>) -> Result<SectionReport> {
    let batch = run_hit_and_run(section, steps, seed)?;
    let cov = covariance(&batch)?;
    let d = section.dim();
    let grid_poincare = match grid_resolution {
        Some(res) if (2..=3).contains(&d) => {
            let dens = section.uniform_density();
            let op = crate::spectral_nd::assemble_generator(&dens, res)?;
            let rep = crate::spectral_nd::lowest_spectrum(&op, &crate::spectral_nd::SpectrumOptions { count: 2, seed, ..Default::default() })?;
            Some(1.0 / rep.lambda1())
        }
        _ => None,
    };
    Ok(SectionReport {
        section: section.clone(),
        seed,
        steps,
        envelope: section_envelope(section.n, d, section.p),
        ratio: grid_poincare.map(|c| c / cov.op_norm),
        grid_poincare,
        effective_sample_size: batch.effective_sample_size.clone(),
        covariance: cov,
    })
}
