use loggap::measure::{build_measure, Body, MeasureSpec, PerturbationFlags, PerturbationKind};
use loggap::sampling::*;
use loggap::Error;
use nalgebra::DMatrix;
use proptest::prelude::*;

fn within_stderr(c: &CovEstimate, want: &DMatrix<f64>, k: f64) -> bool {
    c.matrix.iter().zip(c.stderr.iter()).zip(want.iter()).all(|((m, s), w)| (m - w).abs() <= k * s)
}

#[test]
fn mala_on_a_four_dimensional_gaussian() {
    let d = build_measure(&MeasureSpec::standard_gaussian(4)).unwrap();
    let b = run_mala(&d, &MalaOptions { steps: 100_000, seed: 11, ..Default::default() }).unwrap();
    let acc = b.acceptance_rate.unwrap();
    assert!((0.45..0.65).contains(&acc), "{acc}");
    assert_eq!(b.audit_failures, 0);
    assert!(b.effective_sample_size.iter().all(|e| *e > 1000.0 && *e <= b.count as f64));
    let c = covariance(&b).unwrap();
    assert!(within_stderr(&c, &DMatrix::identity(4, 4), 3.0), "{}\n{}", c.matrix, c.stderr);
    assert!((c.op_norm - 1.0).abs() < 0.1);
}

#[test]
fn mala_on_a_laplace_product() {
    let d = build_measure(&MeasureSpec::laplace(2)).unwrap();
    let b = run_mala(&d, &MalaOptions { steps: 200_000, seed: 5, ..Default::default() }).unwrap();
    assert_eq!(b.smoothing, d.smoothing());
    assert!(b.smoothing.is_some());
    let c = covariance(&b).unwrap();
    for i in 0..2 {
        assert!((c.matrix[(i, i)] - 2.0).abs() <= 3.0 * c.stderr[(i, i)], "{}\n{}", c.matrix, c.stderr);
    }
}

#[test]
fn mala_on_a_coupled_four_dimensional_measure() {
    let q = psd_projection(&vec![vec![0.1; 4]; 4]);
    let d = build_measure(&MeasureSpec::nu_n_q(q.clone())).unwrap();
    let b = run_mala(&d, &MalaOptions { steps: 50_000, seed: 3, ..Default::default() }).unwrap();
    assert!(b.effective_sample_size.iter().all(|e| *e > 100.0));
    let c = covariance(&b).unwrap();
    // every coordinate variance is below that of the uncoupled Laplace law
    for i in 0..4 {
        assert!(c.matrix[(i, i)] < 2.0 + 3.0 * c.stderr[(i, i)]);
    }
    // two-dimensional restriction of the same family, checked against quadrature
    let q2 = psd_projection(&vec![vec![0.1; 2]; 2]);
    let d2 = build_measure(&MeasureSpec::nu_n_q(q2)).unwrap();
    let b2 = run_mala(&d2, &MalaOptions { steps: 200_000, seed: 4, ..Default::default() }).unwrap();
    let c2 = covariance(&b2).unwrap();
    let exact = quadrature_covariance(&d2, 512).unwrap();
    assert!(within_stderr(&c2, &exact.matrix, 3.5), "{}\n{}\n{}", c2.matrix, c2.stderr, exact.matrix);
}

#[test]
fn mala_is_seed_deterministic() {
    let d = build_measure(&MeasureSpec::nu_p(2, 1.5)).unwrap();
    let o = MalaOptions { steps: 5_000, seed: 99, chains: 3, ..Default::default() };
    let a = run_mala(&d, &o).unwrap();
    let b = run_mala(&d, &o).unwrap();
    let c = loggap::par::sequential(|| run_mala(&d, &o).unwrap());
    assert_eq!(a.samples, b.samples);
    assert_eq!(a.samples, c.samples);
    assert_eq!(a.chains, 3);
    let other = run_mala(&d, &MalaOptions { seed: 100, ..o }).unwrap();
    assert_ne!(a.samples, other.samples);
}

#[test]
fn hit_and_run_on_the_cross_polytope() {
    let s = SectionSpec::full(2, 1.0).unwrap();
    let b = run_hit_and_run(&s, 100_000, 1).unwrap();
    assert!(b.samples.iter().all(|y| s.contains(y)));
    let c = covariance(&b).unwrap();
    assert!(within_stderr(&c, &(DMatrix::identity(2, 2) / 6.0), 3.0), "{}\n{}", c.matrix, c.stderr);
    assert!((c.trace - 1.0 / 3.0).abs() < 0.01);
}

#[test]
fn hit_and_run_on_euclidean_balls() {
    for d in [2usize, 3, 5] {
        let s = SectionSpec::full(d, 2.0).unwrap();
        let b = run_hit_and_run(&s, 100_000, d as u64).unwrap();
        let c = covariance(&b).unwrap();
        let want = DMatrix::identity(d, d) / (d as f64 + 2.0);
        assert!(within_stderr(&c, &want, 3.0), "d = {d}\n{}\n{}", c.matrix, c.stderr);
    }
}

#[test]
fn random_section_matches_quadrature() {
    let s = SectionSpec::random(4, 2, 1.0, 8).unwrap();
    let b = run_hit_and_run(&s, 100_000, 2).unwrap();
    let c = covariance(&b).unwrap();
    let exact = quadrature_covariance(&s.uniform_density(), 512).unwrap();
    assert!(within_stderr(&c, &exact.matrix, 3.5), "{}\n{}\n{}", c.matrix, c.stderr, exact.matrix);
    assert!(c.op_norm > 0.0);
}

#[test]
fn section_experiment_reports_a_ratio() {
    let s = SectionSpec::random(6, 2, 1.0, 1).unwrap();
    let r = section_experiment(&s, 20_000, 4, Some(64)).unwrap();
    let ratio = r.ratio.unwrap();
    assert!(ratio.is_finite() && ratio > 0.0);
    assert!((r.envelope - 3.0 * 6f64.ln().powi(2)).abs() < 1e-12);
    let wide = SectionSpec::random(6, 4, 1.5, 1).unwrap();
    assert!(section_experiment(&wide, 20_000, 4, Some(64)).unwrap().grid_poincare.is_none());
}

#[test]
fn section_spec_validation() {
    assert!(SectionSpec::new(2, 1.0, vec![vec![1.0, 0.1]]).is_err());
    assert!(SectionSpec::new(2, 3.0, vec![vec![1.0, 0.0]]).is_err());
    let s = SectionSpec::random(10, 3, 1.5, 3).unwrap();
    assert_eq!(s.dim(), 3);
    assert!((s.kappa() - 0.3).abs() < 1e-15);
    let bad = |y: &[f64]| y[0] > 5.0;
    assert!(matches!(run_hit_and_run_with(1, bad, &[0.0], 100, 0, 1), Err(Error::ChordNotFound(_))));
}

#[test]
fn covariance_edge_cases() {
    let d = build_measure(&MeasureSpec::standard_gaussian(2)).unwrap();
    let b = run_mala(&d, &MalaOptions { steps: 500, ..Default::default() }).unwrap();
    assert!(matches!(covariance(&b), Err(Error::TooFewSamples(450))));
    let mut flat = run_mala(&d, &MalaOptions { steps: 2000, ..Default::default() }).unwrap();
    flat.samples.iter_mut().for_each(|s| s.copy_from_slice(&[0.3, -0.2]));
    let c = covariance(&flat).unwrap();
    assert!(c.matrix.iter().all(|v| *v == 0.0));
}

#[test]
fn divergent_chain_is_reported() {
    let d = loggap::measure::Density::from_log_fn(1, vec![(-1.0, 1.0)], |x: &[f64]| x[0]);
    assert!(matches!(
        run_mala(&d, &MalaOptions { steps: 100_000, ..Default::default() }),
        Err(Error::DivergentChain(_))
    ));
}

#[test]
fn csv_and_json_export() {
    let s = SectionSpec::full(2, 2.0).unwrap();
    let b = run_hit_and_run(&s, 100, 0).unwrap();
    let mut buf = Vec::new();
    write_samples_csv(&b, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert_eq!(text.lines().next().unwrap(), "x0,x1");
    assert_eq!(text.lines().count(), 91);
    let mut js = Vec::new();
    write_diagnostics_json(&b, &mut js).unwrap();
    let v: serde_json::Value = serde_json::from_slice(&js).unwrap();
    assert_eq!(v["count"], 90);
    assert_eq!(v["burn_in"], 10);
}

fn ball_rho() -> PerturbationKind {
    PerturbationKind::IndicatorOfSymmetricConvexBody { body: Body::LpBall { p: 2.0, radius: 1.0 } }
}

fn flags() -> PerturbationFlags {
    PerturbationFlags { even: true, unconditional: true, log_concave: true }
}

#[test]
fn dominance_examples() {
    let base = build_measure(&MeasureSpec::laplace(2)).unwrap();
    let b = quadrature_covariance(&base, 512).unwrap();
    let pert = build_measure(&MeasureSpec::laplace(2).with_perturbation(ball_rho(), flags())).unwrap();
    let a = quadrature_covariance(&pert, 512).unwrap();
    let r = dominance_check(&a, &b, 1.0).unwrap();
    assert!(r.holds && r.margin > 0.0, "{r:?}");

    let same = dominance_check(&b, &b, 1.0).unwrap();
    assert!(same.holds && same.margin.abs() < 1e-12);

    let cube = Body::Box { half_widths: vec![0.5, 0.5] };
    let cube_cov = CovEstimate::from_matrix(to_matrix(&cube.uniform_covariance(2).unwrap()), 0.0);
    let par = Body::cube_parallelotope(2, 0.1).unwrap();
    let par_cov = CovEstimate::from_matrix(to_matrix(&par.uniform_covariance(2).unwrap()), 0.0);
    let r = dominance_check(&par_cov, &cube_cov, 1.0).unwrap();
    assert!(!r.holds && r.margin < -0.01, "{r:?}");
    assert!(dominance_check(&par_cov, &cube_cov, 2.0).unwrap().holds);
    // the analytic covariance agrees with quadrature on the rotated body
    let q = quadrature_covariance(&build_measure(&MeasureSpec::uniform_body(2, par)).unwrap(), 1024).unwrap();
    assert!((&q.matrix - &par_cov.matrix).abs().max() < 1e-4, "{}\n{}", q.matrix, par_cov.matrix);

    let three = CovEstimate::from_matrix(DMatrix::identity(3, 3), 0.0);
    assert!(matches!(dominance_check(&three, &b, 1.0), Err(Error::DimensionMismatch(3, 2))));
}

fn to_matrix(m: &[Vec<f64>]) -> DMatrix<f64> {
    DMatrix::from_fn(m.len(), m.len(), |i, j| m[i][j])
}

#[test]
fn mixture_and_general_domination_suites() {
    let bases = [
        MeasureSpec::laplace(2),
        MeasureSpec::nu_p(2, 1.5),
        MeasureSpec::standard_gaussian(2),
    ];
    let perts = [
        ball_rho(),
        PerturbationKind::ExpNegQuadratic { matrix: vec![vec![1.0, 0.6], vec![0.6, 1.0]] },
    ];
    for base in &bases {
        let b = quadrature_covariance(&build_measure(base).unwrap(), 512).unwrap();
        for p in &perts {
            let unc = matches!(p, PerturbationKind::IndicatorOfSymmetricConvexBody { .. });
            let f = PerturbationFlags { unconditional: unc, ..flags() };
            let spec = base.clone().with_perturbation(p.clone(), f);
            let a = quadrature_covariance(&build_measure(&spec).unwrap(), 512).unwrap();
            let r = dominance_check(&a, &b, 1.0).unwrap();
            assert!(r.margin >= -1e-8, "{base:?} {p:?}: {r:?}");
            for i in 0..2 {
                assert!(a.matrix[(i, i)] <= b.matrix[(i, i)] + 1e-8);
            }
        }
    }
    let uni = MeasureSpec::product(vec![MeasureSpec::uniform_interval(-0.5, 0.5); 2]).with_flags(true, true);
    let b = quadrature_covariance(&build_measure(&uni).unwrap(), 512).unwrap();
    let spec = uni.with_perturbation(
        PerturbationKind::ExpNegQuadratic { matrix: vec![vec![20.0, -19.0], vec![-19.0, 20.0]] },
        PerturbationFlags { unconditional: false, ..flags() },
    );
    let a = quadrature_covariance(&build_measure(&spec).unwrap(), 512).unwrap();
    assert!(dominance_check(&a, &b, 2.0).unwrap().margin >= -1e-8);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn chords_stay_inside(n in 2usize..6, d in 1usize..3, p in 1.0f64..2.0, seed in 0u64..1000) {
        prop_assume!(d <= n);
        let s = SectionSpec::random(n, d, p, seed).unwrap();
        let b = run_hit_and_run(&s, 2000, seed).unwrap();
        prop_assert_eq!(b.audit_failures, 0);
        prop_assert!(b.samples.iter().all(|y| s.contains(y)));
    }

    #[test]
    fn dominance_is_scale_monotone(f in 1.0f64..5.0, a in 0.1f64..1.0) {
        let b = CovEstimate::from_matrix(DMatrix::identity(2, 2), 0.0);
        let m = CovEstimate::from_matrix(DMatrix::identity(2, 2) * a, 0.0);
        let r = dominance_check(&m, &b, f).unwrap();
        prop_assert!(r.holds);
        prop_assert!((r.margin - (f - a)).abs() < 1e-12);
    }
}
