//! The acceptance suite: twelve numbered criteria, each reported as a single
//! pass/fail line. Shared by the `acceptance` test target and `loggap selftest`.

use std::cell::OnceCell;
use std::f64::consts::PI;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::bounds::{helffer_bound, parallelotope_constant, probe_grid};
use crate::error::{Error, Result};
use crate::measure::{build_measure, Body, Density, MeasureSpec, PerturbationFlags, PerturbationKind};
use crate::mixtures::{
    alpha_bound, alpha_by_quadrature, alpha_weight, tail_refinement, MixtureDensity,
};
use crate::sampling::{
    covariance, dominance_check, quadrature_covariance, run_hit_and_run, run_mala, CovEstimate, MalaOptions,
    SectionSpec,
};
use crate::spectral1d::{poincare_1d, Poincare1DOptions};
use crate::spectral_nd::{
    assemble_generator, assemble_on, eigenspace_structure, lowest_spectrum, refine_lambda1, verify_interlacing,
    verify_variance_inequality, GridOperator, Parity, SignedPermutation, SpectrumOptions, SpectrumReport,
    DEFAULT_MEMORY_BUDGET,
};

pub const CRITERIA: [(u8, &str); 12] = [
    (1, "exact 1-D constants"),
    (2, "2-D Gaussian spectrum"),
    (3, "odd-first suite"),
    (4, "interlacing suite"),
    (5, "eigenspace structure"),
    (6, "H^-1 variance inequality"),
    (7, "alpha weights"),
    (8, "covariance domination"),
    (9, "counterexample formulas"),
    (10, "sampling oracles"),
    (11, "Helffer criterion"),
    (12, "nu^{2,Q} sweep"),
];

#[derive(Debug, Clone, Serialize)]
pub struct Outcome {
    pub id: u8,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

impl Outcome {
    pub fn line(&self) -> String {
        format!(
            "criterion {:>2} {} {}: {} ({:.1} s)",
            self.id,
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.detail,
            self.seconds
        )
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct AcceptanceOptions {
    pub seed: u64,
    /// Grid resolution for the randomized 2-D suites.
    pub suite_resolution: usize,
}

impl Default for AcceptanceOptions {
    fn default() -> Self {
        Self { seed: 20240611, suite_resolution: 96 }
    }
}

/// One randomized suite instance with its computed spectrum.
#[derive(Debug, Clone, Serialize)]
pub struct SuiteInstance {
    pub label: String,
    pub spec: MeasureSpec,
    #[serde(skip)]
    pub report: Option<SpectrumReport>,
    pub error: Option<String>,
}

/// Runs criteria, computing the randomized suites at most once.
pub struct Acceptance {
    pub opts: AcceptanceOptions,
    suite: OnceCell<Vec<SuiteInstance>>,
}

fn flags(unconditional: bool) -> PerturbationFlags {
    PerturbationFlags { even: true, unconditional, log_concave: true }
}

fn random_psd(rng: &mut ChaCha8Rng, scale: f64) -> Vec<Vec<f64>> {
    let a: [[f64; 2]; 2] = [[rng.sample(StandardNormal), rng.sample(StandardNormal)], [
        rng.sample(StandardNormal),
        rng.sample(StandardNormal),
    ]];
    (0..2)
        .map(|i| (0..2).map(|j| scale * (a[i][0] * a[j][0] + a[i][1] * a[j][1])).collect())
        .collect()
}

/// `ν^{2,Q}` for `count` random PSD matrices `Q`.
pub fn random_nu_q(count: usize, seed: u64) -> Vec<(String, MeasureSpec)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|k| {
            let s = rng.random_range(0.02..0.5);
            let q = random_psd(&mut rng, s);
            (format!("nu2Q#{k}"), MeasureSpec::nu_n_q(q))
        })
        .collect()
}

/// The thirty even log-concave 2-D measures shared by criteria 3 and 4.
pub fn odd_first_suite(seed: u64) -> Vec<(String, MeasureSpec)> {
    let mut out = random_nu_q(10, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
    for k in 0..10 {
        let p = rng.random_range(1.0..2.0);
        let body = Body::LpBall { p: rng.random_range(1.0..3.0), radius: rng.random_range(0.8..3.0) };
        let spec = MeasureSpec::nu_p(2, p)
            .with_perturbation(PerturbationKind::IndicatorOfSymmetricConvexBody { body }, flags(true));
        out.push((format!("nu_p ball#{k} p={p:.3}"), spec));
    }
    for k in 0..10 {
        let p = rng.random_range(1.0..2.0);
        let s = rng.random_range(0.05..1.0);
        let m = random_psd(&mut rng, s);
        let spec = MeasureSpec::nu_p(2, p)
            .with_perturbation(PerturbationKind::ExpNegQuadratic { matrix: m }, flags(false));
        out.push((format!("nu_p quad#{k} p={p:.3}"), spec));
    }
    out
}

/// Spectrum with enough eigenvalues for the interlacing check in 2-D.
pub fn suite_spectrum(spec: &MeasureSpec, res: usize, seed: u64) -> Result<(GridOperator, SpectrumReport)> {
    let d = build_measure(spec)?;
    let op = assemble_generator(&d, res)?;
    let mut count = 8;
    loop {
        let r = lowest_spectrum(&op, &SpectrumOptions { count, seed, ..Default::default() })?;
        match verify_interlacing(&r, 2, 0.01) {
            Err(Error::InsufficientSpectrum(_)) if count < 20 => count = (count + 4).min(20),
            _ => return Ok((op, r)),
        }
    }
}

/// Parity and residual of the `λ₁` cluster; `Ok(None)` when they are fine.
pub fn odd_first_defect(r: &SpectrumReport) -> Option<String> {
    for &i in r.first_cluster() {
        if r.parity[i].global != Parity::Odd {
            return Some(format!("eigenvector {i} (lambda {:.6}) has parity {:?}", r.eigenvalues[i], r.parity[i].global));
        }
        if !(r.residuals[i] < 1e-4) {
            return Some(format!("eigenvector {i} residual {:.2e}", r.residuals[i]));
        }
    }
    None
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

fn timed<F: FnOnce() -> Result<(bool, String)>>(id: u8, f: F) -> Outcome {
    let name = CRITERIA[(id - 1) as usize].1;
    let t = Instant::now();
    let (passed, detail) = match f() {
        Ok(v) => v,
        Err(e) => (false, format!("error: {e}")),
    };
    Outcome { id, name, passed, detail, seconds: t.elapsed().as_secs_f64() }
}

impl Acceptance {
    pub fn new(opts: AcceptanceOptions) -> Self {
        Self { opts, suite: OnceCell::new() }
    }

    pub fn suite(&self) -> &[SuiteInstance] {
        self.suite.get_or_init(|| {
            let res = self.opts.suite_resolution;
            let seed = self.opts.seed;
            let items = odd_first_suite(seed);
            crate::par::map(0..items.len(), |k| {
                let (label, spec) = &items[k];
                match suite_spectrum(spec, res, seed) {
                    Ok((_, r)) => SuiteInstance { label: label.clone(), spec: spec.clone(), report: Some(r), error: None },
                    Err(e) => SuiteInstance { label: label.clone(), spec: spec.clone(), report: None, error: Some(e.to_string()) },
                }
            })
        })
    }

    pub fn run(&self, id: u8) -> Outcome {
        match id {
            1 => timed(1, c1_exact_constants),
            2 => timed(2, c2_gaussian_spectrum),
            3 => timed(3, || self.c3_odd_first()),
            4 => timed(4, || self.c4_interlacing()),
            5 => timed(5, c5_eigenspace),
            6 => timed(6, || c6_variance_inequality(self.opts.seed)),
            7 => timed(7, c7_alpha),
            8 => timed(8, c8_domination),
            9 => timed(9, c9_counterexamples),
            10 => timed(10, || c10_sampling(self.opts.seed)),
            11 => timed(11, c11_helffer),
            12 => timed(12, || c12_sweep(self.opts)),
            _ => Outcome { id, name: "unknown", passed: false, detail: "no such criterion".into(), seconds: 0.0 },
        }
    }

    pub fn run_all(&self) -> Vec<Outcome> {
        CRITERIA.iter().map(|(id, _)| self.run(*id)).collect()
    }

    fn c3_odd_first(&self) -> Result<(bool, String)> {
        let mut bad = Vec::new();
        for s in self.suite() {
            match (&s.report, &s.error) {
                (Some(r), _) => {
                    if let Some(why) = odd_first_defect(r) {
                        bad.push(format!("{}: {why}", s.label));
                    }
                }
                (None, e) => bad.push(format!("{}: {}", s.label, e.clone().unwrap_or_default())),
            }
        }
        let n = self.suite().len();
        Ok((bad.is_empty(), if bad.is_empty() { format!("{n}/{n} instances odd with residual < 1e-4") } else { bad.join("; ") }))
    }

    fn c4_interlacing(&self) -> Result<(bool, String)> {
        let mut bad = Vec::new();
        let mut worst = f64::INFINITY;
        for s in self.suite() {
            let Some(r) = &s.report else {
                bad.push(format!("{}: no spectrum", s.label));
                continue;
            };
            match verify_interlacing(r, 2, 0.01) {
                Ok(il) => {
                    worst = worst.min(il.margin / il.lambda_odd_sorted[2]);
                    if !il.holds {
                        bad.push(format!("{}: even {:.6} > third odd {:.6}", s.label, il.lambda_even_first, il.lambda_odd_sorted[2]));
                    }
                }
                Err(e) => bad.push(format!("{}: {e}", s.label)),
            }
        }
        let n = self.suite().len();
        Ok((
            bad.is_empty(),
            if bad.is_empty() {
                format!("{n}/{n} instances, smallest relative margin {worst:.3e} (tolerance -1e-2)")
            } else {
                bad.join("; ")
            },
        ))
    }
}

fn c1_exact_constants() -> Result<(bool, String)> {
    let mut ok = true;
    let mut parts = Vec::new();
    let opts = Poincare1DOptions::default();

    let t = Instant::now();
    let u = poincare_1d(&build_measure(&MeasureSpec::uniform_interval(-0.5, 0.5))?, &opts)?;
    let dt = t.elapsed().as_secs_f64();
    let e = rel(u.cp, 1.0 / (PI * PI));
    ok &= e <= 5e-3 && dt <= 1.0;
    parts.push(format!("uniform {:.6} (rel {e:.1e}, {dt:.2} s)", u.cp));

    let t = Instant::now();
    let l = poincare_1d(&build_measure(&MeasureSpec::laplace(1))?, &opts)?;
    let dt = t.elapsed().as_secs_f64();
    let e = rel(l.cp, 4.0);
    ok &= e <= 5e-2 && dt <= 2.0;
    parts.push(format!("laplace {:.4} (rel {e:.1e}, {dt:.2} s)", l.cp));

    for s2 in [0.25, 1.0, 9.0] {
        let g = poincare_1d(&build_measure(&MeasureSpec::gaussian(vec![vec![s2]]))?, &opts)?;
        let e = rel(g.cp, s2);
        ok &= e <= 5e-3;
        parts.push(format!("gaussian s2={s2} rel {e:.1e}"));
    }
    Ok((ok, parts.join(", ")))
}

fn c2_gaussian_spectrum() -> Result<(bool, String)> {
    let t = Instant::now();
    let d = build_measure(&MeasureSpec::standard_gaussian(2))?;
    let op = assemble_generator(&d, 128)?;
    let r = lowest_spectrum(&op, &SpectrumOptions { count: 5, ..Default::default() })?;
    let dt = t.elapsed().as_secs_f64();
    let want = [1.0, 1.0, 2.0];
    let mut ok = dt <= 30.0;
    for (k, w) in want.iter().enumerate() {
        ok &= rel(r.eigenvalues[k + 1], *w) <= 0.01;
    }
    ok &= r.parity[1].global == Parity::Odd && r.parity[2].global == Parity::Odd;
    // the λ = 2 eigenspace is three-dimensional; its members are even
    let twos: Vec<usize> = (1..r.eigenvalues.len()).filter(|&i| rel(r.eigenvalues[i], 2.0) <= 0.01).collect();
    ok &= !twos.is_empty() && twos.iter().all(|&i| r.parity[i].global == Parity::Even);
    Ok((
        ok,
        format!(
            "eigenvalues {:.5} {:.5} {:.5}, parities {:?} {:?} {:?} ({dt:.1} s)",
            r.eigenvalues[1], r.eigenvalues[2], r.eigenvalues[3], r.parity[1].global, r.parity[2].global, r.parity[3].global
        ),
    ))
}

fn c5_eigenspace() -> Result<(bool, String)> {
    let mut ok = true;
    let mut parts = Vec::new();
    for p in [4.0, 1.5] {
        let d = build_measure(&MeasureSpec::nu_p(2, p))?;
        let op = assemble_generator(&d, 128)?;
        let r = lowest_spectrum(&op, &SpectrumOptions { count: 3, ..Default::default() })?;
        let s = eigenspace_structure(&op, &r, &SignedPermutation::cube_group(2))?;
        let swap = s.swap_relation.unwrap_or(f64::INFINITY);
        let ip = s.pair_inner.unwrap_or(f64::INFINITY);
        ok &= s.multiplicity == 2 && swap <= 1e-3 && ip <= 1e-6;
        parts.push(format!("p={p}: multiplicity {}, swap {swap:.1e}, inner {ip:.1e}", s.multiplicity));
    }
    Ok((ok, parts.join("; ")))
}

/// `P(x)·exp(-|x|²/(2s²))` with a random cubic `P`.
fn random_test_function(rng: &mut ChaCha8Rng) -> impl Fn(&[f64]) -> f64 + Sync + Send + Clone {
    let mut c = [0.0f64; 10];
    c.iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
    let s: f64 = rng.random_range(1.0..3.0);
    let shift: [f64; 2] = [rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5)];
    move |x: &[f64]| {
        let (a, b) = (x[0] - shift[0], x[1] - shift[1]);
        let p = c[0] + c[1] * a + c[2] * b + c[3] * a * a + c[4] * a * b + c[5] * b * b + c[6] * a * a * a
            + c[7] * a * a * b
            + c[8] * a * b * b
            + c[9] * b * b * b;
        p * (-(x[0] * x[0] + x[1] * x[1]) / (2.0 * s * s)).exp()
    }
}

fn c6_variance_inequality(seed: u64) -> Result<(bool, String)> {
    let mut ok = true;
    let mut parts = Vec::new();

    let g = build_measure(&MeasureSpec::standard_gaussian(2))?;
    let op = assemble_generator(&g, 128)?;
    let mut q = op.sample(|x| x[0] * x[0] - 1.0);
    let m = op.mean(&q);
    q.iter_mut().for_each(|v| *v -= m);
    let v = verify_variance_inequality(&op, &q, 1e-3)?;
    let exact = v.holds && rel(v.lhs, 2.0) <= 0.01 && rel(v.rhs, 4.0) <= 0.01;
    ok &= exact;
    parts.push(format!("x1^2-1 on the Gaussian: ({:.4}, {:.4})", v.lhs, v.rhs));

    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(6));
    let funcs: Vec<_> = (0..50).map(|_| random_test_function(&mut rng)).collect();
    let measures: Vec<(&str, Density, Option<f64>)> = vec![
        ("gaussian", build_measure(&MeasureSpec::standard_gaussian(2))?, None),
        ("laplace", build_measure(&MeasureSpec::laplace(2))?, Some(20.0)),
        ("nu2Q", build_measure(&MeasureSpec::nu_n_q(vec![vec![0.3, 0.1], vec![0.1, 0.2]]))?, Some(16.0)),
        ("nu1.5", build_measure(&MeasureSpec::nu_p(2, 1.5))?, None),
        ("disc", build_measure(&MeasureSpec::uniform_body(2, Body::LpBall { p: 2.0, radius: 2.0 }))?, None),
    ];
    let mut total = 0;
    let mut worst = f64::INFINITY;
    for (name, d, half) in &measures {
        let ops: Vec<GridOperator> = [128usize, 64]
            .iter()
            .map(|&r| match half {
                Some(h) => assemble_on(d, &[(-h, *h); 2], &[r, r], DEFAULT_MEMORY_BUDGET),
                None => assemble_generator(d, r),
            })
            .collect::<Result<_>>()?;
        for f in &funcs {
            let fine = verify_variance_inequality(&ops[0], &ops[0].sample(f), 1e-3)?;
            let coarse = verify_variance_inequality(&ops[1], &ops[1].sample(f), 1e-3)?;
            let lhs = (4.0 * fine.lhs - coarse.lhs) / 3.0;
            let rhs = (4.0 * fine.rhs - coarse.rhs) / 3.0;
            total += 1;
            let slack = (rhs - lhs) / rhs;
            worst = worst.min(slack);
            if !(lhs <= rhs * (1.0 + 1e-3)) {
                ok = false;
                parts.push(format!("{name}: lhs {lhs:.6} > rhs {rhs:.6}"));
            }
        }
    }
    parts.push(format!("{total} random cases, smallest relative slack {worst:.3e} (tolerance -1e-3)"));
    Ok((ok, parts.join("; ")))
}

fn c7_alpha() -> Result<(bool, String)> {
    let mut ok = true;
    let mut parts = Vec::new();
    let lap = MixtureDensity::laplace();
    let gau = MixtureDensity::gaussian(1.0);
    let (mut el, mut eg) = (0.0f64, 0.0f64);
    for k in 0..=400 {
        let t = 20.0 * k as f64 / 400.0;
        el = el.max(rel(alpha_weight(&lap, t)?, t + 1.0)).max(rel(alpha_by_quadrature(&lap, t)?.value, t + 1.0));
        if t <= 37.0 {
            eg = eg.max((alpha_weight(&gau, t)? - 1.0).abs()).max((alpha_by_quadrature(&gau, t)?.value - 1.0).abs());
        }
    }
    ok &= el <= 1e-9 && eg <= 1e-9;
    parts.push(format!("laplace rel err {el:.1e}, gaussian err {eg:.1e}"));
    let mut worst_gap = f64::INFINITY;
    let mut refinements = 0;
    for p in [1.0, 1.25, 1.5, 1.75, 2.0] {
        let d = MixtureDensity::nu_p(p);
        let w = d.window();
        for k in 0..200 {
            let t = w * k as f64 / 199.0;
            let a = alpha_weight(&d, t)?;
            let b = alpha_bound(&d, t);
            worst_gap = worst_gap.min(b - a);
            ok &= a <= b + 1e-9;
            let r = tail_refinement(&d, t)?;
            if r.applies {
                refinements += 1;
                ok &= r.holds;
            }
        }
    }
    parts.push(format!("alpha bound min margin {worst_gap:.3e}; refinement checked at {refinements} points"));
    Ok((ok, parts.join("; ")))
}

fn c8_domination() -> Result<(bool, String)> {
    let res = 512;
    let mut ok = true;
    let mut worst = f64::INFINITY;
    let mut count = 0;
    let rhos = |uniform: bool| -> Vec<(PerturbationKind, bool)> {
        let r = if uniform { 0.6 } else { 1.5 };
        vec![
            (PerturbationKind::IndicatorOfSymmetricConvexBody { body: Body::LpBall { p: 2.0, radius: r } }, true),
            (PerturbationKind::IndicatorOfSymmetricConvexBody { body: Body::LpBall { p: 1.0, radius: r } }, true),
            (PerturbationKind::ExpNegQuadratic { matrix: vec![vec![0.8, 0.5], vec![0.5, 0.8]] }, false),
            (PerturbationKind::ExpNegQuadratic { matrix: vec![vec![30.0, -29.0], vec![-29.0, 30.0]] }, false),
        ]
    };
    let mut check = |base: &MeasureSpec, factor: f64, uniform: bool| -> Result<()> {
        let b = quadrature_covariance(&build_measure(base)?, res)?;
        for (k, unc) in rhos(uniform) {
            let spec = base.clone().with_perturbation(k, flags(unc));
            let a = quadrature_covariance(&build_measure(&spec)?, res)?;
            let r = dominance_check(&a, &b, factor)?;
            count += 1;
            worst = worst.min(r.margin);
            ok &= r.margin >= -1e-8;
            for i in 0..2 {
                ok &= a.matrix[(i, i)] <= factor * b.matrix[(i, i)] + 1e-8;
            }
        }
        Ok(())
    };
    for base in [MeasureSpec::laplace(2), MeasureSpec::nu_p(2, 1.5), MeasureSpec::standard_gaussian(2)] {
        check(&base, 1.0, false)?;
    }
    let uni = MeasureSpec::product(vec![MeasureSpec::uniform_interval(-0.5, 0.5); 2]).with_flags(true, true);
    check(&uni, 2.0, true)?;
    let cube = CovEstimate::from_matrix(
        to_matrix(&Body::Box { half_widths: vec![0.5, 0.5] }.uniform_covariance(2).unwrap()),
        0.0,
    );
    let par = Body::cube_parallelotope(2, 0.1)?;
    let pq = quadrature_covariance(&build_measure(&MeasureSpec::uniform_body(2, par))?, 1024)?;
    let viol = dominance_check(&pq, &cube, 1.0)?;
    ok &= !viol.holds && viol.margin < 0.0;
    Ok((
        ok,
        format!(
            "{count} instances, smallest margin {worst:.3e} (tolerance -1e-8); parallelotope vs cube margin {:.4} (violation expected)",
            viol.margin
        ),
    ))
}

fn to_matrix(m: &[Vec<f64>]) -> DMatrix<f64> {
    DMatrix::from_fn(m.len(), m.len(), |i, j| m[i][j])
}

fn c9_counterexamples() -> Result<(bool, String)> {
    let mut ok = true;
    let mut worst = 0.0f64;
    for n in [1usize, 2, 3, 10, 100, 1000] {
        for eps in [0.01, 0.1, 0.5, 0.9] {
            let c = parallelotope_constant(n, eps)?;
            let want = ((1.0 - eps) * (n as f64).sqrt()).powi(2) / (PI * PI);
            worst = worst.max(rel(c, want));
        }
    }
    ok &= worst <= 1e-12;
    let cp = |n: f64| -> Result<f64> {
        let spec = MeasureSpec::nu_p(1, 4.0).with_scale(vec![n.powf(0.25)]);
        Ok(poincare_1d(&build_measure(&spec)?, &Poincare1DOptions::default())?.cp)
    };
    let base = cp(1.0)?;
    let mut parts = vec![format!("parallelotope rel err {worst:.1e}")];
    for n in [4.0, 16.0] {
        let r = cp(n)? / base;
        ok &= rel(r, n.sqrt()) <= 0.02;
        parts.push(format!("p=4 ratio n={n}: {r:.4} vs {:.4}", n.sqrt()));
    }
    Ok((ok, parts.join("; ")))
}

fn within(c: &CovEstimate, want: &DMatrix<f64>, k: f64) -> (bool, f64) {
    let mut worst = 0.0f64;
    for ((m, s), w) in c.matrix.iter().zip(c.stderr.iter()).zip(want.iter()) {
        worst = worst.max((m - w).abs() / s.max(1e-300));
    }
    (worst <= k, worst)
}

fn c10_sampling(seed: u64) -> Result<(bool, String)> {
    let t = Instant::now();
    let s = SectionSpec::full(2, 1.0)?;
    let b = run_hit_and_run(&s, 100_000, seed)?;
    let c = covariance(&b)?;
    let dt = t.elapsed().as_secs_f64();
    let (h_ok, h_worst) = within(&c, &(DMatrix::identity(2, 2) / 6.0), 3.0);
    let g = build_measure(&MeasureSpec::standard_gaussian(4))?;
    let m = run_mala(&g, &MalaOptions { steps: 100_000, seed, ..Default::default() })?;
    let cm = covariance(&m)?;
    let (m_ok, m_worst) = within(&cm, &DMatrix::identity(4, 4), 3.0);
    Ok((
        h_ok && m_ok && dt <= 30.0,
        format!(
            "hit-and-run worst {h_worst:.2} stderr ({dt:.1} s); MALA worst {m_worst:.2} stderr, acceptance {:.3}",
            m.acceptance_rate.unwrap_or(0.0)
        ),
    ))
}

fn c11_helffer() -> Result<(bool, String)> {
    let eps = 0.5;
    let d = Density::from_log_fn(2, vec![(-12.0, 12.0); 2], move |x: &[f64]| {
        -(x[0] * x[0] / 2.0 + x[1] * x[1] / 2.0 + eps * x[0] * x[1])
    });
    let r = helffer_bound(&d, &probe_grid(2, 2.0, 5))?;
    let Some(b) = r.bound else {
        return Ok((false, format!("criterion not met, epsilon {:.4}", r.epsilon)));
    };
    let det = 1.0 - eps * eps;
    let g = build_measure(&MeasureSpec::gaussian(vec![vec![1.0 / det, -eps / det], vec![-eps / det, 1.0 / det]]))?;
    let lam = refine_lambda1(&g, 128, &SpectrumOptions::default())?;
    let cp = 1.0 / lam.value;
    let tol = lam.error / lam.value * cp + 1e-3 * cp;
    let formula = rel(b.value, 1.0 / (1.0 - eps));
    Ok((
        formula <= 0.01 && cp <= b.value + tol,
        format!("bound {:.5} (rel to 1/(1-eps) {formula:.1e}), grid C_P {cp:.5} +- {tol:.1e}", b.value),
    ))
}

fn c12_sweep(opts: AcceptanceOptions) -> Result<(bool, String)> {
    let items = random_nu_q(20, opts.seed.wrapping_add(12));
    let results = crate::par::map(0..items.len(), |k| suite_spectrum(&items[k].1, opts.suite_resolution, opts.seed));
    let mut ok = true;
    let mut cps = Vec::new();
    let mut bad = Vec::new();
    for ((label, _), r) in items.iter().zip(results) {
        match r {
            Ok((_, r)) => {
                cps.push(r.poincare_constant());
                if let Some(why) = odd_first_defect(&r) {
                    ok = false;
                    bad.push(format!("{label}: {why}"));
                }
                match verify_interlacing(&r, 2, 0.01) {
                    Ok(il) if il.holds => {}
                    Ok(_) => {
                        ok = false;
                        bad.push(format!("{label}: interlacing fails"));
                    }
                    Err(e) => {
                        ok = false;
                        bad.push(format!("{label}: {e}"));
                    }
                }
            }
            Err(e) => {
                ok = false;
                bad.push(format!("{label}: {e}"));
            }
        }
    }
    let max = cps.iter().cloned().fold(0.0, f64::max);
    let below = cps.iter().filter(|c| **c <= 4.05).count();
    let mut detail = format!("{} instances, max C_P {max:.4}, {below} at or below 4.05 (reported only)", cps.len());
    if !bad.is_empty() {
        detail.push_str("; ");
        detail.push_str(&bad.join("; "));
    }
    Ok((ok, detail))
}
