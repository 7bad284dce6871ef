use criterion::{black_box, criterion_group, criterion_main, Criterion};
use shrinkerlab::chart_geometry::all_residuals;
use shrinkerlab::gauge::{flow_time_one, pullback};
use shrinkerlab::spectral::{OpTag, SpectralSpace};
use shrinkerlab::{make_gaussian, JetMode, PolyVectorBasis, Rank};
use shrinkerlab_bench::{gauge_case, torus_case};

fn identities(c: &mut Criterion) {
    let (chart, x, fields) = torus_case(7);
    let fd = chart.clone().with_mode(JetMode::FiniteDifference { step: 0.04 });
    c.bench_function("identities/analytic", |b| b.iter(|| all_residuals(black_box(&chart), &x, 0.0, &fields).unwrap()));
    c.bench_function("identities/finite_difference", |b| b.iter(|| all_residuals(black_box(&fd), &x, 0.04, &fields).unwrap()));
}

fn galerkin(c: &mut Criterion) {
    let model = make_gaussian(2).unwrap();
    let mut g = c.benchmark_group("galerkin");
    g.sample_size(10);
    for degree in [3, 4] {
        let space = SpectralSpace::new(PolyVectorBasis::hermite(&model, Rank::Vector, degree).unwrap()).unwrap();
        g.bench_function(format!("assemble_p/degree_{degree}"), |b| b.iter(|| space.assemble(OpTag::P).unwrap()));
    }
    g.finish();
}

fn gauge_flow(c: &mut Criterion) {
    let (model, _solver, input) = gauge_case().unwrap();
    let map = flow_time_one(&input.generator).unwrap();
    let mut g = c.benchmark_group("gauge");
    g.sample_size(10);
    g.bench_function("flow_time_one", |b| b.iter(|| flow_time_one(black_box(&input.generator)).unwrap()));
    g.bench_function("pullback", |b| b.iter(|| pullback(&model, black_box(&map), &input.h, &input.k).unwrap()));
    g.finish();
}

criterion_group!(kernels, identities, galerkin, gauge_flow);
criterion_main!(kernels);
