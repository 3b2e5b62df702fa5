use criterion::{criterion_group, criterion_main, Criterion};
use nalgebra::Vector2;

use gpassm::{fic_variance, predict, update, Point2};
use gpassm_bench::{belief_on_approach, default_setup};

fn bench_filter_step(c: &mut Criterion) {
    let setup = default_setup();
    let base = belief_on_approach(&setup);
    let mut group = c.benchmark_group("filter");
    group.bench_function("predict", |b| {
        b.iter_batched(
            || base.clone(),
            |mut belief| {
                predict(&mut belief, &setup.model, &setup.grid, 0.0).unwrap();
                belief
            },
            criterion::BatchSize::LargeInput,
        )
    });
    group.bench_function("update", |b| {
        b.iter_batched(
            || base.clone(),
            |mut belief| {
                update(&mut belief, &setup.obs, &Vector2::new(0.1, -9.8)).unwrap();
                belief
            },
            criterion::BatchSize::LargeInput,
        )
    });
    group.finish();
}

fn bench_kernel_rows(c: &mut Criterion) {
    let setup = default_setup();
    let z = Point2::new(0.3, 2.7);
    c.bench_function("cross_row", |b| {
        b.iter(|| setup.grid.cross_row(std::hint::black_box(&z)))
    });
    c.bench_function("fic_variance", |b| {
        b.iter(|| fic_variance(&setup.grid, std::hint::black_box(&z)).unwrap())
    });
}

criterion_group!(benches, bench_filter_step, bench_kernel_rows);
criterion_main!(benches);
