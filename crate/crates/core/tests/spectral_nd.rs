use std::f64::consts::PI;

use loggap::linalg::band::BandCholesky;
use loggap::measure::{build_measure, Body, Density, MeasureSpec, PerturbationFlags, PerturbationKind};
use loggap::spectral1d::solve_sturm_liouville;
use loggap::spectral_nd::*;
use loggap::Error;
use proptest::prelude::*;

fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * b.abs()
}

fn spectrum(d: &Density, res: usize, count: usize) -> (GridOperator, SpectrumReport) {
    let op = assemble_generator(d, res).unwrap();
    let r = lowest_spectrum(&op, &SpectrumOptions { count, ..Default::default() }).unwrap();
    (op, r)
}

#[test]
fn gaussian_hermite_spectrum_and_interlacing() {
    let d = build_measure(&MeasureSpec::standard_gaussian(2)).unwrap();
    let (op, r) = spectrum(&d, 128, 9);
    assert_eq!(op.len(), 128 * 128);
    let want = [0.0, 1.0, 1.0, 2.0, 2.0, 2.0, 3.0, 3.0, 3.0, 3.0];
    for (i, w) in want.iter().enumerate().skip(1) {
        assert!(close(r.eigenvalues[i], *w, 0.01), "{i}: {:?}", r.eigenvalues);
    }
    let odd: Vec<usize> = vec![1, 2, 6, 7, 8, 9];
    for i in 1..r.eigenvalues.len() {
        let expect = if odd.contains(&i) { Parity::Odd } else { Parity::Even };
        assert_eq!(r.parity[i].global, expect, "{i}: {:?}", r.parity[i]);
    }
    assert_eq!(r.multiplicity_groups[1], vec![1, 2]);
    for res in &r.residuals {
        assert!(*res <= 1e-8 * r.norm_bound);
    }
    for i in 0..r.eigenvalues.len() {
        for j in 0..r.eigenvalues.len() {
            let ip = op.inner(&r.eigenvectors[i], &r.eigenvectors[j]);
            assert!((ip - if i == j { 1.0 } else { 0.0 }).abs() < 1e-8);
        }
    }
    let c = op.sample(|_| 1.0);
    assert!(op.rayleigh_quotient(&c) <= 1e-12);
    let il = verify_interlacing(&r, 2, 0.01).unwrap();
    assert!(il.holds);
    assert!(close(il.lambda_even_first, 2.0, 0.01));
    assert!(close(il.lambda_odd_sorted[2], 3.0, 0.01));
}

#[test]
fn stiffness_is_a_weighted_graph_laplacian() {
    let d = build_measure(&MeasureSpec::nu_n_q(vec![vec![0.5, 0.2], vec![0.2, 0.3]])).unwrap();
    let op = assemble_generator(&d, 48).unwrap();
    let a = &op.stiffness;
    assert!(a.max_asymmetry() == 0.0);
    for i in 0..a.n {
        let mut sum = 0.0;
        let mut scale = 0.0f64;
        for (j, v) in a.row(i) {
            if j != i {
                assert!(v <= 0.0);
            }
            sum += v;
            scale = scale.max(v.abs());
        }
        assert!(sum.abs() <= 1e-12 * scale);
    }
    assert!(op.mass.iter().all(|m| *m > 0.0));
}

#[test]
fn product_laplace_matches_one_dimensional_solver() {
    let d = build_measure(&MeasureSpec::nu_n_q(vec![vec![0.0; 2]; 2])).unwrap();
    let (op, r) = spectrum(&d, 256, 2);
    let line = build_measure(&MeasureSpec::laplace(1)).unwrap();
    let (a, b) = (op.lower[0], op.lower[0] + op.spacing[0] * 256.0);
    let s = solve_sturm_liouville(&line, (a, b), 256, 2).unwrap();
    assert!(close(r.lambda1(), s.lambda1(), 1e-6), "{} vs {}", r.lambda1(), s.lambda1());
    assert!(close(r.lambda1(), 0.25, 0.05));
}

#[test]
fn disc_drops_exterior_cells() {
    let d = build_measure(&MeasureSpec::uniform_body(2, Body::LpBall { p: 2.0, radius: 1.0 })).unwrap();
    let op = assemble_generator(&d, 64).unwrap();
    assert!(op.len() < 64 * 64 && op.len() > 3000);
    for c in 0..op.len() {
        let x = op.center(c);
        assert!(x[0] * x[0] + x[1] * x[1] <= 1.0);
    }
}

#[test]
fn square_neumann_modes() {
    let d = build_measure(&MeasureSpec::uniform_body(2, Body::Box { half_widths: vec![0.5, 0.5] })).unwrap();
    let (op, r) = spectrum(&d, 64, 7);
    let pi2 = PI * PI;
    assert!(close(r.eigenvalues[1], pi2, 1e-3) && close(r.eigenvalues[2], pi2, 1e-3));
    assert_eq!(r.multiplicity_groups[1].len(), 2);
    let mut types = Vec::new();
    for i in [1, 2] {
        let f = &r.eigenvectors[i];
        let t = r.parity[i].type_i.clone().unwrap();
        let odd_axis = 1 - t[0];
        assert_eq!(t.len(), 1);
        types.push(t[0]);
        let s = op.sample(|x| (PI * x[odd_axis]).sin());
        let c = op.inner(f, &s) / op.inner(&s, &s);
        let resid: Vec<f64> = f.iter().zip(&s).map(|(a, b)| a - c * b).collect();
        assert!(op.inner(&resid, &resid).sqrt() < 1e-3);
    }
    types.sort();
    assert_eq!(types, vec![0, 1]);
    let il = verify_interlacing(&r, 2, 0.01).unwrap();
    assert!(il.holds);
    assert!(close(il.lambda_even_first, 2.0 * pi2, 1e-3));
}

#[test]
fn quadratic_perturbation_keeps_odd_ground_states() {
    let d = build_measure(&MeasureSpec::nu_n_q(vec![vec![0.5, 0.0], vec![0.0, 0.5]]).with_flags(true, true)).unwrap();
    let (_, r) = spectrum(&d, 96, 3);
    for &i in r.first_cluster() {
        assert_eq!(r.parity[i].global, Parity::Odd);
        assert!(r.parity[i].type_i.as_ref().is_some_and(|t| t.len() < 2));
    }
}

#[test]
fn dual_norms_on_the_gaussian() {
    let d = build_measure(&MeasureSpec::standard_gaussian(2)).unwrap();
    let op = assemble_generator(&d, 128).unwrap();
    let x1 = op.sample(|x| x[0]);
    assert!(close(hminus_norm(&op, &x1).unwrap(), 1.0, 0.01));
    assert_eq!(hminus_norm(&op, &vec![0.0; op.len()]).unwrap(), 0.0);
    let mut q = op.sample(|x| x[0] * x[0] - 1.0);
    let m = op.mean(&q);
    q.iter_mut().for_each(|v| *v -= m);
    // -Lu = x² - 1 is solved by u = (x² - 1)/2, so the squared norm is Var(x²)/2 = 1
    assert!(close(hminus_norm(&op, &q).unwrap(), 1.0, 0.01));
    let shifted = op.sample(|x| x[0] + 1.0);
    assert!(matches!(hminus_norm(&op, &shifted), Err(Error::NotCentered(_))));

    let v = verify_variance_inequality(&op, &q, 1e-3).unwrap();
    assert!(v.holds && close(v.lhs, 2.0, 0.01) && close(v.rhs, 4.0, 0.01), "{v:?}");
    let c = verify_variance_inequality(&op, &vec![3.0; op.len()], 1e-3).unwrap();
    assert!(c.holds && c.lhs.abs() < 1e-20 && c.rhs.abs() < 1e-20);
}

#[test]
fn variance_inequality_on_smoothed_abs() {
    // On a Laplace product any f(x₁) is an equality case (d/dx intertwines with
    // the generator), so the grid check can only agree up to discretization.
    let d = build_measure(&MeasureSpec::nu_n_q(vec![vec![0.0; 2]; 2])).unwrap();
    let op = assemble_on(&d, &[(-20.0, 20.0); 2], &[256, 256], DEFAULT_MEMORY_BUDGET).unwrap();
    let f = op.sample(|x| (x[0] * x[0] + 1.0).sqrt());
    let v = verify_variance_inequality(&op, &f, 1e-3).unwrap();
    assert!(close(v.lhs, 0.6319, 0.01) && close(v.rhs, 0.6319, 0.01), "{v:?}");
    // a product of odd factors has plenty of slack
    let g = |x: &[f64]| x[0].tanh() * x[1].tanh();
    let v = variance_inequality_extrapolated(&d, g, &[(-20.0, 20.0); 2], 256, 1e-3).unwrap();
    assert!(v.holds && v.lhs < v.rhs * 0.99, "{v:?}");
}

#[test]
fn brascamp_lieb_cases() {
    let g = build_measure(&MeasureSpec::standard_gaussian(2)).unwrap();
    let bl = brascamp_lieb_check(&g, |x| x[0], 256).unwrap();
    assert!(bl.holds && close(bl.variance, 1.0, 1e-4) && close(bl.weighted_energy, 1.0, 1e-4), "{bl:?}");

    let quartic = Density::from_log_fn(1, vec![(-9.0, 9.0)], |x: &[f64]| -x[0] * x[0] / 2.0 - x[0].powi(4) / 12.0)
        .with_potential_hessian(|x: &[f64]| nalgebra::DMatrix::from_element(1, 1, 1.0 + x[0] * x[0]));
    let bl = brascamp_lieb_check(&quartic, |x| x[0], 4096).unwrap();
    assert!(bl.holds && bl.variance < bl.weighted_energy, "{bl:?}");

    let s = build_measure(&MeasureSpec::gaussian(vec![vec![4.0, 0.0], vec![0.0, 1.0]])).unwrap();
    let bl = brascamp_lieb_check(&s, |x| x[0] + x[1], 256).unwrap();
    assert!(bl.holds && close(bl.variance, 5.0, 1e-4) && close(bl.weighted_energy, 5.0, 1e-4), "{bl:?}");

    let saddle = Density::from_log_fn(2, vec![(-3.0, 3.0); 2], |x: &[f64]| -x[0] * x[0] - x[1] * x[1])
        .with_potential_hessian(|x: &[f64]| {
            nalgebra::DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, if x[0] > 1.0 { -1.0 } else { 2.0 }])
        });
    assert!(matches!(brascamp_lieb_check(&saddle, |x| x[0], 64), Err(Error::HessianNotPd(_))));
}

#[test]
fn cube_symmetric_eigenspace() {
    let d = build_measure(&MeasureSpec::nu_p(2, 4.0)).unwrap();
    let (op, r) = spectrum(&d, 96, 3);
    let s = eigenspace_structure(&op, &r, &SignedPermutation::cube_group(2)).unwrap();
    assert_eq!(s.multiplicity, 2);
    assert!(s.hypothesis_met && s.dimension_equals_n);
    assert!(s.swap_relation.unwrap() < 1e-4, "{s:?}");
    assert!(s.pair_inner.unwrap() < 1e-6, "{s:?}");
    assert!(s.orbit_leakage < 1e-6);
}

#[test]
fn gaussian_eigenspace_is_linear() {
    let d = build_measure(&MeasureSpec::standard_gaussian(2)).unwrap();
    let (op, r) = spectrum(&d, 96, 3);
    let s = eigenspace_structure(&op, &r, &SignedPermutation::cube_group(2)).unwrap();
    assert_eq!(s.multiplicity, 2);
    assert_eq!(s.orbit_span_dimension, 2);
    let f1 = &r.eigenvectors[r.first_cluster()[0]];
    let x = op.sample(|p| p[0]);
    let y = op.sample(|p| p[1]);
    let proj = (op.inner(f1, &x).powi(2) + op.inner(f1, &y).powi(2)) / op.inner(&x, &x);
    assert!(close(proj, 1.0, 1e-3));
}

#[test]
fn anisotropic_gaussian_fails_the_hypothesis() {
    let d = build_measure(&MeasureSpec::gaussian(vec![vec![4.0, 0.0], vec![0.0, 1.0]])).unwrap();
    let op = assemble_on(&d, &[(-8.0, 8.0), (-8.0, 8.0)], &[96, 96], DEFAULT_MEMORY_BUDGET).unwrap();
    let r = lowest_spectrum(&op, &SpectrumOptions { count: 2, ..Default::default() }).unwrap();
    let s = eigenspace_structure(&op, &r, &SignedPermutation::flip_group(2)).unwrap();
    assert_eq!(s.multiplicity, 1);
    assert!(!s.hypothesis_met && !s.dimension_equals_n);
    assert!(close(r.lambda1(), 0.25, 0.02));

    let skew = build_measure(&MeasureSpec::standard_gaussian(2)).unwrap();
    let op = assemble_on(&skew, &[(-8.0, 8.0), (-6.0, 6.0)], &[64, 48], DEFAULT_MEMORY_BUDGET).unwrap();
    let r = lowest_spectrum(&op, &SpectrumOptions { count: 2, ..Default::default() }).unwrap();
    assert!(matches!(
        eigenspace_structure(&op, &r, &SignedPermutation::cube_group(2)),
        Err(Error::GroupDoesNotPreserveGrid(_))
    ));
}

#[test]
fn heatmap_csv_has_one_row_per_cell() {
    let d = build_measure(&MeasureSpec::standard_gaussian(2)).unwrap();
    let op = assemble_generator(&d, 32).unwrap();
    let mut buf = Vec::new();
    write_heatmap_csv(&op, &op.sample(|x| x[0]), &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(text.starts_with("x,y,value"));
    assert_eq!(text.lines().count(), op.len() + 1);
}

#[test]
fn extrapolation_improves_the_gaussian_gap() {
    let d = build_measure(&MeasureSpec::uniform_body(2, Body::Box { half_widths: vec![0.5, 0.5] })).unwrap();
    let opts = SpectrumOptions::default();
    let e = refine_lambda1(&d, 64, &opts).unwrap();
    let raw = lowest_spectrum(&assemble_generator(&d, 64).unwrap(), &SpectrumOptions { count: 1, ..opts }).unwrap();
    assert!((e.value - PI * PI).abs() < (raw.lambda1() - PI * PI).abs());
    assert!((e.value - PI * PI).abs() <= 4.0 * e.error.max(1e-9));
}

#[test]
fn assembly_rejects_bad_inputs() {
    let d = build_measure(&MeasureSpec::standard_gaussian(2)).unwrap();
    assert!(assemble_generator(&d, 16).is_err());
    assert!(matches!(
        assemble_on(&d, &[(-8.0, 8.0); 2], &[4096, 4096], 1 << 20),
        Err(Error::OutOfMemory { .. })
    ));
    let one = build_measure(&MeasureSpec::standard_gaussian(1)).unwrap();
    assert!(assemble_generator(&one, 64).is_err());
}

/// sup ⟨g, y⟩ / √(yᵀBy) by preconditioned steepest ascent with exact line search.
fn ascent_dual_norm(op: &GridOperator, f: &[f64], steps: usize) -> f64 {
    let g = op.to_symmetric(f);
    let b = &op.symmetric;
    let chol = BandCholesky::factor(b, 1e-2).unwrap();
    let mut k = op.kernel.clone();
    let kn = k.iter().map(|v| v * v).sum::<f64>().sqrt();
    k.iter_mut().for_each(|v| *v /= kn);
    let project = |v: &mut Vec<f64>| {
        let c: f64 = v.iter().zip(&k).map(|(a, b)| a * b).sum();
        v.iter_mut().zip(&k).for_each(|(a, b)| *a -= c * b);
    };
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let apply = |v: &[f64]| {
        let mut out = vec![0.0; v.len()];
        b.matvec(v, &mut out);
        out
    };
    let mut y = g.clone();
    project(&mut y);
    let mut by = apply(&y);
    for _ in 0..steps {
        let (a, c) = (dot(&g, &y), dot(&y, &by));
        // gradient of ⟨g,y⟩²/(yᵀBy) is proportional to g - (a/c) B y
        let mut dir: Vec<f64> = g.iter().zip(&by).map(|(gi, bi)| gi - a / c * bi).collect();
        chol.solve(&mut dir);
        project(&mut dir);
        let bd = apply(&dir);
        let (p, q, r) = (dot(&g, &dir), dot(&y, &bd), dot(&dir, &bd));
        // maximize (a + t p)² / (c + 2 t q + t² r): stationary t = (p c - a q) / (a r - p q)
        let den = a * r - p * q;
        if den.abs() < 1e-300 {
            break;
        }
        let t = (p * c - a * q) / den;
        y.iter_mut().zip(&dir).for_each(|(yi, di)| *yi += t * di);
        by.iter_mut().zip(&bd).for_each(|(yi, di)| *yi += t * di);
    }
    dot(&g, &y) / dot(&y, &by).sqrt()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn dual_norm_matches_direct_maximization(c in proptest::collection::vec(-1.0f64..1.0, 6)) {
        let d = build_measure(&MeasureSpec::nu_n_q(vec![vec![0.3, 0.1], vec![0.1, 0.2]])).unwrap();
        let op = assemble_generator(&d, 48).unwrap();
        let mut f = op.sample(|x| {
            let bump = (-(x[0] * x[0] + x[1] * x[1]) / 20.0).exp();
            bump * (c[0] * x[0] + c[1] * x[1] + c[2] * x[0] * x[1] + c[3] * x[0] * x[0] + c[4] * x[1].powi(3) + c[5])
        });
        let m = op.mean(&f);
        f.iter_mut().for_each(|v| *v -= m);
        let direct = ascent_dual_norm(&op, &f, 200);
        let via_solve = hminus_norm(&op, &f).unwrap();
        prop_assert!(close(direct, via_solve, 5e-3), "{direct} vs {via_solve}");
    }

    #[test]
    fn unconditional_perturbation_does_not_lower_the_gap(r in 1.0f64..4.0, w in 0.0f64..0.5) {
        let base = MeasureSpec::nu_n_q(vec![vec![0.0; 2]; 2]);
        let flags = PerturbationFlags { even: true, unconditional: true, log_concave: true };
        let pert = if w > 0.25 {
            base.clone().with_perturbation(
                PerturbationKind::ExpNegQuadratic { matrix: vec![vec![w, 0.0], vec![0.0, 2.0 * w]] }, flags)
        } else {
            base.clone().with_perturbation(
                PerturbationKind::IndicatorOfSymmetricConvexBody { body: Body::LpBall { p: 2.0, radius: r } }, flags)
        };
        let opts = SpectrumOptions { count: 1, ..Default::default() };
        let l0 = lowest_spectrum(&assemble_generator(&build_measure(&base).unwrap(), 64).unwrap(), &opts).unwrap().lambda1();
        let l1 = lowest_spectrum(&assemble_generator(&build_measure(&pert).unwrap(), 64).unwrap(), &opts).unwrap().lambda1();
        prop_assert!(l1 >= l0 * (1.0 - 1e-3), "{l1} < {l0}");
    }
}
