use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use musurf_bench::{scherk_grid, scherk_reparam, scherk_sample};
use musurf_core::reparam::decay_fit;
use musurf_core::{
    assemble_forms, closedness_residuals, recover_xstar, solve_dirichlet, Anchor, Boundary,
    EnergyDensity, SignConvention, SolveConfig,
};

fn solve(c: &mut Criterion) {
    let mut group = c.benchmark_group("solve_scherk");
    group.sample_size(10);
    let d = EnergyDensity::minimal();
    for n in [33, 65] {
        let spec = scherk_grid(n);
        group.bench_with_input(BenchmarkId::from_parameter(n), &spec, |b, spec| {
            b.iter(|| {
                solve_dirichlet(
                    &d,
                    spec,
                    |x, y| Boundary::Scherk.value(x, y),
                    &SolveConfig::default(),
                )
                .unwrap()
            })
        });
    }
    group.finish();
}

fn forms_and_potentials(c: &mut Criterion) {
    let mut group = c.benchmark_group("forms");
    for n in [65, 129] {
        let sol = scherk_sample(n);
        group.bench_with_input(
            BenchmarkId::new("assemble_and_closedness", n),
            &sol,
            |b, sol| {
                b.iter(|| closedness_residuals(&assemble_forms(black_box(sol)).unwrap()).unwrap())
            },
        );
        let fa = assemble_forms(&sol).unwrap();
        group.bench_with_input(BenchmarkId::new("recover_xstar", n), &sol, |b, sol| {
            b.iter(|| {
                recover_xstar(
                    black_box(sol),
                    &fa,
                    Anchor::lower_left(),
                    SignConvention::Reparametrization,
                )
                .unwrap()
            })
        });
    }
    group.finish();
}

fn decay(c: &mut Criterion) {
    let d = EnergyDensity::mu_family(2.5).unwrap();
    c.bench_function("decay_fit_mu_2.5", |b| {
        b.iter(|| decay_fit(black_box(&d), (1e2, 1e4), 200).unwrap())
    });
}

fn inverse(c: &mut Criterion) {
    let rr = scherk_reparam(65);
    let spec = *rr.spec();
    let targets: Vec<[f64; 2]> = (2..spec.nx - 2)
        .step_by(4)
        .flat_map(|i| (2..spec.ny - 2).step_by(4).map(move |j| (i, j)))
        .map(|(i, j)| rr.lambda_node(i, j))
        .collect();
    c.bench_function("lambda_inverse_batch", |b| {
        b.iter(|| {
            for t in &targets {
                black_box(rr.inverse(*t).unwrap());
            }
        })
    });
}

criterion_group!(benches, solve, forms_and_potentials, decay, inverse);
criterion_main!(benches);
