use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use loggap::measure::{build_measure, MeasureSpec};
use loggap::par;
use loggap::sampling::{quadrature_covariance, run_mala, MalaOptions};
use loggap::spectral_nd::{assemble_generator, lowest_spectrum, SpectrumOptions};

fn modes(c: &mut Criterion, group: &str, f: impl Fn() + Copy) {
    let mut g = c.benchmark_group(group);
    g.sample_size(10);
    g.bench_function("parallel", |b| b.iter(f));
    g.bench_function("sequential", |b| b.iter(|| par::sequential(f)));
    g.finish();
}

fn kernels(c: &mut Criterion) {
    let gauss = build_measure(&MeasureSpec::standard_gaussian(2)).unwrap();
    let nu = build_measure(&MeasureSpec::nu_p(2, 1.5)).unwrap();
    let op = assemble_generator(&gauss, 96).unwrap();
    let u = op.sample(|x| x[0] * x[1].tanh());

    modes(c, "assemble_128", || {
        black_box(assemble_generator(&nu, 128).unwrap());
    });
    modes(c, "energy_96", || {
        black_box(op.energy(&u));
    });
    modes(c, "spectrum_96", || {
        black_box(lowest_spectrum(&op, &SpectrumOptions { count: 4, ..Default::default() }).unwrap());
    });
    modes(c, "quadrature_cov_512", || {
        black_box(quadrature_covariance(&nu, 512).unwrap());
    });
    let g4 = build_measure(&MeasureSpec::standard_gaussian(4)).unwrap();
    modes(c, "mala_4chains", || {
        black_box(run_mala(&g4, &MalaOptions { steps: 20_000, chains: 4, seed: 1, ..Default::default() }).unwrap());
    });
}

criterion_group!(benches, kernels);
criterion_main!(benches);
