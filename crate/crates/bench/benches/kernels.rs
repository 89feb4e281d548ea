use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use gagcn::numkernel::{kronecker, matmul, st_apply};
use gagcn_bench::st_operands;

/// Two-sided product against the materialized `(S ⊗ T)` operator.
fn st_apply_vs_kronecker(c: &mut Criterion) {
    let mut group = c.benchmark_group("st_apply");
    for (joints, frames) in [(12, 10), (22, 10), (32, 25)] {
        let width = 64;
        let (s, t, h) = st_operands(width, joints, frames, 7);
        let label = format!("{joints}x{frames}");
        group.bench_with_input(BenchmarkId::new("two_sided", &label), &(), |b, _| {
            b.iter(|| st_apply(black_box(&s), black_box(&t), black_box(&h)).unwrap())
        });
        let flat = h.reshape(&[width, joints * frames]).unwrap();
        group.bench_with_input(BenchmarkId::new("kronecker", &label), &(), |b, _| {
            b.iter(|| {
                let k = kronecker(black_box(&s), black_box(&t)).unwrap();
                matmul(black_box(&flat), &k.transpose().unwrap()).unwrap()
            })
        });
    }
    group.finish();
}

criterion_group!(benches, st_apply_vs_kronecker);
criterion_main!(benches);
