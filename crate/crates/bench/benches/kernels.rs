use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use paratrap::{collide, fit_gaussian, force, render, step, CollisionSpec, ImageSpec, IntegrationSpec, ModulationSpec};
use paratrap_bench::{cloud, gaussian_image, lattice, paper_trap};
use std::hint::black_box;

fn forces(c: &mut Criterion) {
    let trap = paper_trap();
    let m = ModulationSpec::new(0.15, 2500.0, 0.2).unwrap();
    let pts = lattice(&trap, 20);
    c.bench_function("force/8000 points", |b| {
        b.iter(|| pts.iter().map(|p| force(&trap, p, 1e-3, &m)).fold(0.0, |acc, f| acc + f.x))
    });
}

fn verlet(c: &mut Criterion) {
    let trap = paper_trap();
    let m = ModulationSpec::new(0.15, 2500.0, 0.2).unwrap();
    let dt = IntegrationSpec::default_dt(&trap, &m);
    let ens = cloud(&trap, 10_000, 0.13, 1);
    c.bench_function("step/10k atoms", |b| {
        b.iter_batched_ref(|| ens.clone(), |e| step(e, &trap, &m, dt).unwrap(), BatchSize::LargeInput)
    });
}

fn dsmc(c: &mut Criterion) {
    let trap = paper_trap();
    let ens = cloud(&trap, 10_000, 0.13, 2);
    let spec = CollisionSpec::for_trap(&trap, 100.0, 3);
    c.bench_function("collide/10k atoms", |b| {
        b.iter_batched_ref(|| ens.clone(), |e| collide(e, &spec, 6.25e-6, 0).unwrap(), BatchSize::LargeInput)
    });
}

fn imaging(c: &mut Criterion) {
    let trap = paper_trap();
    let ens = cloud(&trap, 10_000, 0.13, 4);
    let spec = ImageSpec::default();
    c.bench_function("render/10k atoms", |b| b.iter(|| render(black_box(&ens), &spec).unwrap()));
    let img = gaussian_image(256, 128);
    c.bench_function("fit_gaussian/256x128", |b| b.iter(|| fit_gaussian(black_box(&img)).unwrap()));
}

criterion_group!(benches, forces, verlet, dsmc, imaging);
criterion_main!(benches);
