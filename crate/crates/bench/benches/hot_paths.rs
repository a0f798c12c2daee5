//! Microbenchmarks of the hot paths: trace-polynomial evaluation and
//! calculus, MALA steps, and the evolved-gradient inner estimator.

use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use gibbsflow_core::matrix::gue_tuple;
use gibbsflow_core::potential::PotentialSpec;
use gibbsflow_core::rng::stream;
use gibbsflow_core::sampler::{mala_chain, FullTarget, SamplerConfig};
use gibbsflow_core::semigroup::{evolved_grad, EvolvedSpec, InnerCfg, TimeMode};
use gibbsflow_core::tracepoly::{
    heat_scalar, laplacian_scalar, parse_self_adjoint, LaplaceMode,
};

fn quartic() -> PotentialSpec {
    PotentialSpec::from_trace_poly(
        parse_self_adjoint("0.5*tr(x1^2) + 0.1*tr(x1^4)").unwrap(),
        1,
        0,
        1.0,
        2.2,
    )
    .unwrap()
}

fn bench_tracepoly(c: &mut Criterion) {
    let v = parse_self_adjoint("0.5*tr(x1^2) + 0.1*tr(x1^4)").unwrap();
    let mut rng = stream(1, "bench", 0);
    let x = gue_tuple(1, 16, 1.0, &mut rng);
    c.bench_function("evaluate_scalar_quartic_n16", |b| {
        b.iter(|| black_box(v.evaluate(black_box(&x)).unwrap()))
    });
    let six = parse_self_adjoint("tr(x1^6)").unwrap();
    c.bench_function("laplacian_deg6", |b| {
        b.iter(|| black_box(laplacian_scalar(black_box(&six), &[0], LaplaceMode::FiniteN(8))))
    });
    c.bench_function("heat_deg6", |b| {
        b.iter(|| black_box(heat_scalar(black_box(&six), 1.0, &[0], LaplaceMode::FiniteN(8))))
    });
}

fn bench_sampler(c: &mut Criterion) {
    let v = quartic();
    c.bench_function("mala_chain_quartic_n16_200steps", |b| {
        b.iter(|| {
            let target = FullTarget { v: &v, n: 16 };
            let cfg = SamplerConfig::default().with_seed(7).sized(100, 100, 1);
            black_box(mala_chain(&target, &cfg, 0).unwrap())
        })
    });
}

fn bench_evolved_grad(c: &mut Criterion) {
    let v = quartic();
    let mut rng = stream(2, "bench", 0);
    let x = gue_tuple(1, 8, 1.0, &mut rng);
    c.bench_function("evolved_grad_quartic_n8", |b| {
        b.iter(|| {
            let spec = EvolvedSpec::xblock(&v, &[]);
            black_box(
                evolved_grad(
                    &spec,
                    TimeMode::Renormalized(1.0),
                    black_box(&x),
                    &InnerCfg::sized(48, 96),
                    3,
                )
                .unwrap(),
            )
        })
    });
}

criterion_group!(benches, bench_tracepoly, bench_sampler, bench_evolved_grad);
criterion_main!(benches);
