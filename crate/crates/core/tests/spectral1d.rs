use std::f64::consts::PI;

use loggap::measure::{build_measure, Density, Family, MeasureSpec};
use loggap::spectral1d::{
    bobkov_bracket, conditional_gap, poincare_1d, solve_sturm_liouville, Poincare1DOptions,
};
use proptest::prelude::*;

fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * b.abs()
}

#[test]
fn interval_gap() {
    let d = build_measure(&MeasureSpec::uniform_interval(-0.5, 0.5)).unwrap();
    let s = solve_sturm_liouville(&d, (-0.5, 0.5), 4096, 3).unwrap();
    assert!(close(s.lambda1(), PI * PI, 5e-3), "{}", s.lambda1());
    assert!(s.eigenvalues[0] <= 1e-10 * s.eigenvalues[1]);
}

#[test]
fn gaussian_hermite_levels() {
    let d = build_measure(&MeasureSpec::standard_gaussian(1)).unwrap();
    let s = solve_sturm_liouville(&d, (-10.0, 10.0), 4096, 3).unwrap();
    assert!(close(s.eigenvalues[1], 1.0, 2e-3), "{:?}", s.eigenvalues);
    assert!(close(s.eigenvalues[2], 2.0, 5e-3), "{:?}", s.eigenvalues);
    for i in 0..3 {
        for j in 0..3 {
            let want = if i == j { 1.0 } else { 0.0 };
            assert!((s.inner(i, j) - want).abs() < 1e-8);
        }
    }
}

#[test]
fn laplace_truncated_gap() {
    let d = build_measure(&MeasureSpec::laplace(1)).unwrap();
    let s = solve_sturm_liouville(&d, (-40.0, 40.0), 8192, 2).unwrap();
    assert!(s.lambda1() >= 0.25 && s.lambda1() <= 0.2625, "{}", s.lambda1());
}

#[test]
fn laplace_constant() {
    let d = build_measure(&MeasureSpec::laplace(1)).unwrap();
    let e = poincare_1d(&d, &Poincare1DOptions::default()).unwrap();
    assert!(close(e.cp, 4.0, 0.05), "{e:?}");
}

#[test]
fn gaussian_variance_is_the_constant() {
    for s2 in [0.25, 1.0, 9.0] {
        let d = build_measure(&MeasureSpec::gaussian(vec![vec![s2]])).unwrap();
        let e = poincare_1d(&d, &Poincare1DOptions::default()).unwrap();
        assert!(close(e.cp, s2, 5e-3), "{s2}: {e:?}");
    }
}

#[test]
fn light_tail_rescaling_ratio() {
    let cp = |n: f64| {
        let m = n.powf(0.5 - 0.25);
        let spec = MeasureSpec::nu_p(1, 4.0).with_scale(vec![m]);
        poincare_1d(&build_measure(&spec).unwrap(), &Poincare1DOptions::default()).unwrap().cp
    };
    let base = cp(1.0);
    for n in [4.0, 16.0] {
        assert!(close(cp(n) / base, n.sqrt(), 0.02));
    }
}

#[test]
fn tilt_blows_up_the_constant() {
    let d = build_measure(&MeasureSpec::new(1, Family::TiltedNuP { p: 1.0, a: 0.9 })).unwrap();
    let e = poincare_1d(&d, &Poincare1DOptions::default()).unwrap();
    assert!(e.cp > 5.0 * 4.0, "{e:?}");
}

#[test]
fn bracket_contains_the_constant() {
    let lap = build_measure(&MeasureSpec::laplace(1)).unwrap();
    let (lo, hi) = bobkov_bracket(&lap).unwrap();
    assert!(close(lo, 1.0 / 3.0, 1e-12) && close(hi, 4.0, 1e-12));
    let g = build_measure(&MeasureSpec::standard_gaussian(1)).unwrap();
    let (lo, hi) = bobkov_bracket(&g).unwrap();
    assert!(close(lo, 2.0 * PI / 12.0, 1e-12) && close(hi, 2.0 * PI, 1e-12));
    assert!(lo < 1.0 && 1.0 < hi);
    let u = build_measure(&MeasureSpec::uniform_interval(-0.5, 0.5)).unwrap();
    let (lo, hi) = bobkov_bracket(&u).unwrap();
    assert!(lo < 1.0 / (PI * PI) && 1.0 / (PI * PI) < hi);
}

#[test]
fn unnormalized_density_has_no_bracket() {
    let d = Density::from_log_fn(1, vec![(-10.0, 10.0)], |x: &[f64]| -x[0] * x[0]);
    assert!(bobkov_bracket(&d).is_err());
}

#[test]
fn conditional_gaps() {
    let g = build_measure(&MeasureSpec::standard_gaussian(2)).unwrap();
    assert!(close(conditional_gap(&g, 0, &[0.3, -1.2]).unwrap(), 1.0, 5e-3));
    let l = build_measure(&MeasureSpec::nu_n_q(vec![vec![0.0; 2]; 2])).unwrap();
    assert!(close(conditional_gap(&l, 1, &[0.7, 0.0]).unwrap(), 0.25, 0.05));
    let eps = 0.5;
    let cross = Density::from_log_fn(2, vec![(-12.0, 12.0); 2], move |x: &[f64]| {
        -0.5 * x[0] * x[0] - 0.5 * x[1] * x[1] - eps * x[0] * x[1]
    });
    for x2 in [-2.0, 0.0, 1.5] {
        assert!(close(conditional_gap(&cross, 0, &[0.0, x2]).unwrap(), 1.0, 5e-3));
    }
}

fn window_cp(d: &Density, w: f64) -> f64 {
    1.0 / loggap::spectral1d::richardson_lambda1(d, (-w, w), 2048).unwrap().value
}

#[test]
fn truncation_is_monotone_in_the_window() {
    let d = build_measure(&MeasureSpec::laplace(1)).unwrap();
    let vals: Vec<f64> = [5.0, 10.0, 20.0, 30.0].iter().map(|&w| window_cp(&d, w)).collect();
    assert!(vals.windows(2).all(|p| p[0] <= p[1] * (1.0 + 1e-9)), "{vals:?}");
    assert!(vals[3] <= 4.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn bounded_perturbation(p in 1.0f64..2.5, amp in 0.05f64..1.0, freq in 0.5f64..3.0, phase in 0.0f64..6.0) {
        let base = build_measure(&MeasureSpec::nu_p(1, p)).unwrap();
        let b2 = base.clone();
        let pert = Density::from_log_fn(1, base.support_box().to_vec(), move |x: &[f64]| {
            b2.log_density(x) + amp * (freq * x[0] + phase).sin()
        });
        let w = 12.0;
        let c0 = window_cp(&base, w);
        let c1 = window_cp(&pert, w);
        prop_assert!(c1 <= c0 * (2.0 * amp).exp() * (1.0 + 1e-6), "{c1} > {c0} e^{}", 2.0 * amp);
    }

    #[test]
    fn even_unimodal_perturbation(p in 1.0f64..2.5, r in 0.3f64..3.0, depth in 0.0f64..4.0) {
        let base = build_measure(&MeasureSpec::nu_p(1, p)).unwrap();
        let b2 = base.clone();
        // even, nonincreasing in |t|
        let pert = Density::from_log_fn(1, base.support_box().to_vec(), move |x: &[f64]| {
            b2.log_density(x) - depth * ((x[0].abs() - r).max(0.0)).min(2.0)
        });
        let w = 12.0;
        prop_assert!(window_cp(&pert, w) <= window_cp(&base, w) * (1.0 + 1e-6));
    }

    #[test]
    fn dilation_scales_quadratically(p in 1.0f64..3.0, s in 0.3f64..3.0) {
        let a = build_measure(&MeasureSpec::nu_p(1, p)).unwrap();
        let b = build_measure(&MeasureSpec::nu_p(1, p).with_scale(vec![s])).unwrap();
        let (ca, cb) = (window_cp(&a, 10.0), window_cp(&b, 10.0 * s));
        prop_assert!(close(cb / ca, s * s, 1e-6), "{} vs {}", cb / ca, s * s);
    }
}
