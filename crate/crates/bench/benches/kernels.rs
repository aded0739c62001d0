use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use chemoctl_bench::scenario;
use chemoctl_core::adjoint::{solve_adjoint, AdjointSources};
use chemoctl_core::forward::solve_state;
use chemoctl_core::grid::DriftScheme;
use chemoctl_core::linearized::{linearize_at, solve_tangent};
use chemoctl_core::linsolve::{pcg, HelmholtzOp, CG_TOL};

fn bench_spatial_operators(c: &mut Criterion) {
    let mut group = c.benchmark_group("operators");
    for n in [32usize, 128] {
        let sc = scenario(2, n, 1);
        let w = sc.grid.field_from_fn(|x| (x[0] - 0.3) * (x[1] + 0.2));
        group.bench_with_input(BenchmarkId::new("laplacian_2d", n), &n, |b, _| {
            b.iter(|| black_box(sc.grid.laplacian(&w)))
        });
        group.bench_with_input(BenchmarkId::new("drift_upwind_2d", n), &n, |b, _| {
            b.iter(|| black_box(sc.grid.drift_divergence(&sc.u0, &w, DriftScheme::Upwind)))
        });
    }
    group.finish();
}

fn bench_cg(c: &mut Criterion) {
    let mut group = c.benchmark_group("cg");
    for n in [32usize, 64] {
        let sc = scenario(2, n, 1);
        let dt = 1e-3;
        let op = HelmholtzOp::uniform(&sc.grid, 1.0 / dt, 1.0);
        let b_vec = sc.grid.field_from_fn(|x| {
            (std::f64::consts::PI * x[0]).cos() * (std::f64::consts::PI * x[1]).cos() / dt
        });
        group.bench_with_input(BenchmarkId::new("helmholtz_2d", n), &n, |b, _| {
            b.iter(|| black_box(pcg(&op, &b_vec, CG_TOL).unwrap()))
        });
    }
    group.finish();
}

fn bench_forward(c: &mut Criterion) {
    let mut group = c.benchmark_group("forward");
    group.sample_size(20);
    for (dim, n, steps) in [(1usize, 64usize, 50usize), (2, 32, 20)] {
        let sc = scenario(dim, n, steps);
        group.bench_with_input(
            BenchmarkId::new(format!("solve_state_{dim}d"), n),
            &n,
            |b, _| {
                b.iter(|| {
                    black_box(
                        solve_state(&sc.grid, &sc.u0, &sc.v0, &sc.f, &sc.params, &sc.tg).unwrap(),
                    )
                })
            },
        );
    }
    group.finish();
}

fn bench_adjoint_pipeline(c: &mut Criterion) {
    let mut group = c.benchmark_group("adjoint");
    group.sample_size(20);
    let sc = scenario(1, 64, 50);
    let traj = solve_state(&sc.grid, &sc.u0, &sc.v0, &sc.f, &sc.params, &sc.tg).unwrap();
    let coeffs = linearize_at(&sc.grid, &traj, &sc.f, &sc.params).unwrap();
    let dir = chemoctl_core::forward::Control::constant(&sc.grid, sc.tg.steps, 0.1);
    let sources = AdjointSources {
        su: traj.u[..sc.tg.steps].to_vec(),
        sv: traj.v[..sc.tg.steps].to_vec(),
    };
    group.bench_function("solve_tangent_1d_64", |b| {
        b.iter(|| black_box(solve_tangent(&sc.grid, &coeffs, &dir, &sc.tg).unwrap()))
    });
    group.bench_function("solve_adjoint_1d_64", |b| {
        b.iter(|| black_box(solve_adjoint(&sc.grid, &coeffs, &sources, &sc.tg).unwrap()))
    });
    group.finish();
}

criterion_group!(
    benches,
    bench_spatial_operators,
    bench_cg,
    bench_forward,
    bench_adjoint_pipeline
);
criterion_main!(benches);
