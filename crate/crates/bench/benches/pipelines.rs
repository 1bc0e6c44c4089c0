use criterion::{criterion_group, criterion_main, Criterion};
use pdt_bench::{bump_bundle, layered_bundle};
use pdt_core::algebraic2d::{algebraic_invert, DEFAULT_DEGENERACY_FLOOR};
use pdt_core::elliptic::{solve_coupled, EllipticSettings};
use pdt_core::forward::solve_conductivity;
use pdt_core::frame::{derived_fields, TransitionMethod};
use pdt_core::ode::{reconstruct_sigma_ode, seed_from_truth, FrameConvention};
use pdt_core::phantom::{IlluminationSet, Phantom, PhantomKind};
use pdt_core::Grid;
use std::hint::black_box;

fn bench_forward(c: &mut Criterion) {
    let grid = Grid::square(64);
    let phantom = Phantom::new(PhantomKind::Bump, grid);
    let illums = IlluminationSet::axes(grid);
    c.bench_function("forward_solve_bump_64", |b| {
        b.iter(|| solve_conductivity(&phantom, &illums.fields[0], 1e-10).unwrap())
    });
}

fn bench_derived(c: &mut Criterion) {
    let (bundle, _, _) = bump_bundle(128, 0.5);
    c.bench_function("derived_fields_bump_128", |b| {
        b.iter(|| derived_fields(black_box(&bundle), TransitionMethod::InvSqrt).unwrap())
    });
}

fn bench_transport(c: &mut Criterion) {
    let (bundle, truth, _) = layered_bundle(64, 1.0);
    let derived = derived_fields(&bundle, TransitionMethod::GramSchmidt).unwrap();
    let seed = seed_from_truth(
        &derived,
        &truth,
        1.0,
        bundle.grid.center(),
        FrameConvention::S,
    );
    c.bench_function("transport_recon_layered_64", |b| {
        b.iter(|| reconstruct_sigma_ode(black_box(&derived), &seed).unwrap())
    });
}

fn bench_elliptic(c: &mut Criterion) {
    let (bundle, _, illums) = bump_bundle(64, 0.5);
    let derived = derived_fields(&bundle, TransitionMethod::GramSchmidt).unwrap();
    let settings = EllipticSettings {
        cross_check: false,
        ..EllipticSettings::default()
    };
    c.bench_function("coupled_solve_bump_64", |b| {
        b.iter(|| solve_coupled(black_box(&derived), &illums, &settings).unwrap())
    });
}

fn bench_invert(c: &mut Criterion) {
    let (bundle, _, _) = layered_bundle(128, 1.0);
    let derived = derived_fields(&bundle, TransitionMethod::GramSchmidt).unwrap();
    c.bench_function("algebraic_invert_layered_128", |b| {
        b.iter(|| algebraic_invert(black_box(&derived), DEFAULT_DEGENERACY_FLOOR).unwrap())
    });
}

criterion_group! {
    name = pipelines;
    config = Criterion::default().sample_size(20);
    targets = bench_forward, bench_derived, bench_transport, bench_elliptic, bench_invert
}
criterion_main!(pipelines);
