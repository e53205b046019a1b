//! Hot-path benchmarks: grid semigroup application, the Crank–Nicolson
//! solver, the sphere Heun integrator, and the density pushforward.

use std::hint::black_box;
use std::sync::Arc;

use criterion::{criterion_group, criterion_main, Criterion};
use nalgebra::DVector;

use sdelab_core::chains::{pushforward_density_1d, CircleSemigroup, EuclideanSemigroup};
use sdelab_core::fields::bump;
use sdelab_core::grid::{DensityGrid, Grid1d, GridFunction};
use sdelab_core::kolmogorov::{solve_backward, ParabolicProblem};
use sdelab_core::problems::{planar_three_atom, LossProblem};
use sdelab_core::sde::{sphere_path, DriftDiffusionSpec};
use sdelab_core::sphere::SpherePoint;

fn two_atom_quadratic() -> LossProblem {
    LossProblem::quadratic_sum_1d(&[1.0, -1.0], &[1.0, 1.0], &[0.5, 0.5]).unwrap()
}

fn bench_euclidean_semigroup(c: &mut Criterion) {
    let grid = Grid1d::interval(-6.0, 6.0, 1024).unwrap();
    let u = GridFunction::sample(grid, |x| (-x * x / 0.5).exp()).unwrap();
    let s = EuclideanSemigroup::new(two_atom_quadratic(), 0.1).unwrap();
    c.bench_function("euclidean_semigroup_apply_1024", |b| {
        b.iter(|| s.apply(black_box(&u)).unwrap())
    });
}

fn bench_circle_semigroup(c: &mut Criterion) {
    let grid = Grid1d::circle(1024).unwrap();
    let u = GridFunction::sample(grid, |t| t.cos()).unwrap();
    let s = CircleSemigroup::new(planar_three_atom(), 0.1).unwrap();
    c.bench_function("circle_semigroup_apply_1024", |b| {
        b.iter(|| s.apply(black_box(&u)).unwrap())
    });
}

fn bench_crank_nicolson(c: &mut Criterion) {
    let p = ParabolicProblem::circle(
        Arc::new(|t: f64| 0.3 * t.sin()),
        Arc::new(|_| 0.2),
        Arc::new(|t: f64| t.cos()),
        1.0,
    )
    .unwrap();
    c.bench_function("crank_nicolson_circle_512x256", |b| {
        b.iter(|| solve_backward(black_box(&p), 512, 256).unwrap())
    });
}

fn bench_sphere_heun(c: &mut Criterion) {
    let spec = DriftDiffusionSpec::spherical_brownian(3, 0.5).unwrap();
    let w0 = SpherePoint::new(DVector::from_vec(vec![0.0, 0.0, 1.0])).unwrap();
    c.bench_function("sphere_heun_1000_steps_d3", |b| {
        b.iter(|| sphere_path(black_box(&spec), &w0, 1.0, 1e-3, 42, 0).unwrap())
    });
}

fn bench_pushforward(c: &mut Criterion) {
    let grid = Grid1d::interval(-6.0, 6.0, 2048).unwrap();
    let rho = DensityGrid::sample(grid, bump(0.0, 1.2)).unwrap();
    let problem = two_atom_quadratic();
    c.bench_function("density_pushforward_2048", |b| {
        b.iter(|| pushforward_density_1d(black_box(&rho), &problem, 0.1).unwrap())
    });
}

criterion_group!(
    kernels,
    bench_euclidean_semigroup,
    bench_circle_semigroup,
    bench_crank_nicolson,
    bench_sphere_heun,
    bench_pushforward
);
criterion_main!(kernels);
