use std::collections::BTreeMap;
use std::f64::consts::PI;

use loggap::bounds::*;
use loggap::measure::{build_measure, Density, MeasureSpec};
use loggap::spectral_nd::{assemble_generator, lowest_spectrum, SpectrumOptions};
use loggap::Error;
use proptest::prelude::*;

fn nominal() -> BTreeMap<String, f64> {
    BTreeMap::new()
}

fn eval(id: &str, p: BoundParams) -> BoundValue {
    eval_bound(id, &p, &nominal()).unwrap()
}

#[test]
fn registry_examples() {
    for n in [1, 7, 1000] {
        let v = eval("nu_p_log", BoundParams { n: Some(n), p: Some(2.0), ..Default::default() });
        assert_eq!(v.value, 1.0);
    }
    for n in [1usize, 2, 5, 40] {
        let v = eval("z_e_lower", BoundParams { n: Some(n), d: Some(n), p: Some(2.0), ..Default::default() });
        assert!((v.value - 1.0).abs() < 1e-12, "{n}: {}", v.value);
    }
    let t = eval("tensorization", BoundParams { component_cp: Some(vec![4.0, 1.0, 0.1013]), ..Default::default() });
    assert_eq!(t.value, 4.0);
    assert!(t.constants_used.is_empty());
}

#[test]
fn every_formula_records_its_constants() {
    let params = BoundParams {
        n: Some(10),
        d: Some(3),
        p: Some(1.5),
        covariance: Some(vec![vec![2.0, 0.5], vec![0.5, 1.0]]),
        oscillation: Some(0.3),
        component_cp: Some(vec![1.0, 2.0]),
        variances: Some(vec![1.0, 3.0]),
        cp: Some(2.0),
        cp_linear: Some(1.5),
    };
    for f in REGISTRY {
        let v = eval_bound(f.id, &params, &nominal()).unwrap();
        assert!(v.value >= 0.0 && v.value.is_finite());
        assert!(v.nominal);
        assert_eq!(v.provenance, f.citation);
        let keys: Vec<&str> = v.constants_used.keys().map(|s| s.as_str()).collect();
        let mut want: Vec<&str> = f.constants.to_vec();
        want.sort();
        assert_eq!(keys, want);
        for c in f.constants {
            let mut k = nominal();
            k.insert(c.to_string(), 3.0);
            let w = eval_bound(f.id, &params, &k).unwrap();
            assert!(!w.nominal && w.constants_used[*c] == 3.0);
            assert!(w.value >= v.value);
        }
    }
}

#[test]
fn formula_values() {
    let cov = Some(vec![vec![2.0, 0.5], vec![0.5, 1.0]]);
    assert_eq!(eval("trace", BoundParams { covariance: cov.clone(), ..Default::default() }).value, 3.0);
    let hs = eval("hilbert_schmidt", BoundParams { covariance: cov, ..Default::default() }).value;
    assert!((hs - (4.0f64 + 0.25 + 0.25 + 1.0).sqrt()).abs() < 1e-15);
    let lvl = eval("level_set", BoundParams { cp: Some(1.0), d: Some(4), ..Default::default() }).value;
    assert!((lvl - (std::f64::consts::E + 2.0).ln()).abs() < 1e-15);
    let s = eval("section", BoundParams { n: Some(16), d: Some(4), p: Some(1.0), ..Default::default() }).value;
    assert!((s - 4.0 * 16f64.ln().powi(2)).abs() < 1e-12);
    let u = eval("unconditional_log2", BoundParams { n: Some(3), cp_linear: Some(2.0), ..Default::default() }).value;
    assert!((u - 2.0 * 4f64.ln().powi(2)).abs() < 1e-12);
    let m = eval("mixture_sqrt", BoundParams { n: Some(9), variances: Some(vec![1.0, 2.0]), ..Default::default() });
    assert_eq!(m.value, 6.0);
    // z_e_lower at p = 1, d = 1: sqrt(pi)/(n^{1/2} * 2) * Gamma(2)/Gamma(3/2) = 1/sqrt(n)
    let z = eval("z_e_lower", BoundParams { n: Some(4), d: Some(1), p: Some(1.0), ..Default::default() }).value;
    assert!((z - 0.5).abs() < 1e-12);
}

#[test]
fn bounded_perturbation_without_oscillation_is_exact() {
    for cp in [0.1, 1.0, 4.0] {
        let v = eval("bounded_perturbation", BoundParams { cp: Some(cp), oscillation: Some(0.0), ..Default::default() });
        assert_eq!(v.value, cp);
    }
}

#[test]
fn errors() {
    assert!(matches!(eval_bound("nope", &BoundParams::default(), &nominal()), Err(Error::UnknownFormula(_))));
    assert!(matches!(eval_bound("trace", &BoundParams::default(), &nominal()), Err(Error::BadParams { .. })));
    let p = BoundParams { n: Some(3), p: Some(3.0), ..Default::default() };
    assert!(matches!(eval_bound("nu_p_log", &p, &nominal()), Err(Error::BadParams { .. })));
    let p = BoundParams { cp: Some(1.0), oscillation: Some(-1.0), ..Default::default() };
    assert!(matches!(eval_bound("bounded_perturbation", &p, &nominal()), Err(Error::BadParams { .. })));
    let mut k = nominal();
    k.insert("c".into(), -1.0);
    let p = BoundParams { covariance: Some(vec![vec![1.0]]), ..Default::default() };
    assert!(eval_bound("trace", &p, &k).is_err());
}

#[test]
fn parallelotope_via_tensorization() {
    let pi2 = PI * PI;
    assert!((parallelotope_constant(1, 1e-9).unwrap() - 1.0 / pi2).abs() < 1e-9);
    assert!((parallelotope_constant(4, 1e-9).unwrap() - 4.0 / pi2).abs() < 1e-8);
    assert!((parallelotope_constant(100, 0.5).unwrap() - 25.0 / pi2).abs() < 1e-12 * 25.0 / pi2);
    assert!(parallelotope_constant(3, 1.0).is_err());
}

fn cross_gaussian(eps: f64) -> Density {
    Density::from_log_fn(2, vec![(-12.0, 12.0); 2], move |x: &[f64]| {
        -(x[0] * x[0] / 2.0 + x[1] * x[1] / 2.0 + eps * x[0] * x[1])
    })
}

#[test]
fn helffer_examples() {
    let probes = probe_grid(2, 2.0, 3);
    assert_eq!(probes.len(), 9);
    let r = helffer_bound(&cross_gaussian(0.5), &probes).unwrap();
    let b = r.bound.clone().unwrap();
    assert!((b.value - 2.0).abs() < 0.02, "{r:?}");
    for g in r.conditional_gaps.iter().flatten() {
        assert!((g - 1.0).abs() < 1e-3);
    }
    // grid constant of the same Gaussian
    let cov = vec![vec![4.0 / 3.0, -2.0 / 3.0], vec![-2.0 / 3.0, 4.0 / 3.0]];
    let g = build_measure(&MeasureSpec::gaussian(cov)).unwrap();
    let op = assemble_generator(&g, 128).unwrap();
    let cp = lowest_spectrum(&op, &SpectrumOptions { count: 2, ..Default::default() }).unwrap().poincare_constant();
    assert!((cp - 2.0).abs() < 0.02);
    assert!(cp <= b.value * 1.01);

    let product = helffer_bound(&cross_gaussian(0.0), &probes).unwrap();
    assert!((product.bound.unwrap().value - 1.0).abs() < 1e-3);

    let bad = helffer_bound(&cross_gaussian(1.2), &probes).unwrap();
    assert!(bad.bound.is_none());
    assert!((bad.epsilon + 0.2).abs() < 1e-3);
}

#[test]
fn registry_bounds_dominate_grid_constants() {
    // trace bound with its nominal constant against grid constants
    for spec in [
        MeasureSpec::standard_gaussian(2),
        MeasureSpec::laplace(2),
        MeasureSpec::nu_n_q(vec![vec![0.3, 0.1], vec![0.1, 0.2]]),
    ] {
        let d = build_measure(&spec).unwrap();
        let (_, cov, _) = loggap::measure::moments(&d, 256).unwrap();
        let covariance = Some((0..2).map(|i| (0..2).map(|j| cov[(i, j)]).collect()).collect());
        let tr = eval("trace", BoundParams { covariance, ..Default::default() });
        let op = assemble_generator(&d, 128).unwrap();
        let cp = lowest_spectrum(&op, &SpectrumOptions { count: 2, ..Default::default() }).unwrap().poincare_constant();
        assert!(cp <= tr.value * 1.01, "{spec:?}: {cp} vs {}", tr.value);
    }
}

proptest! {
    #[test]
    fn tensorization_is_the_max(v in proptest::collection::vec(0.0f64..10.0, 1..8)) {
        let t = eval("tensorization", BoundParams { component_cp: Some(v.clone()), ..Default::default() });
        prop_assert_eq!(t.value, v.iter().cloned().fold(0.0, f64::max));
    }

    #[test]
    fn nu_p_log_grows_with_n(p in 1.0f64..2.0, n in 2usize..1000) {
        let a = eval("nu_p_log", BoundParams { n: Some(n), p: Some(p), ..Default::default() }).value;
        let b = eval("nu_p_log", BoundParams { n: Some(n + 1), p: Some(p), ..Default::default() }).value;
        prop_assert!(b >= a);
        prop_assert!(a >= 1.0);
    }

    #[test]
    fn parallelotope_matches_closed_form(n in 1usize..200, eps in 0.01f64..0.99) {
        let c = parallelotope_constant(n, eps).unwrap();
        let want = ((1.0 - eps) * (n as f64).sqrt()).powi(2) / (PI * PI);
        prop_assert!((c - want).abs() <= 1e-12 * want);
    }
}
