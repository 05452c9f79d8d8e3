use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use softprop::geometry::{chamfer_value_grad, hausdorff_points, Backend};

fn cloud(n: usize, seed: u64) -> Vec<[f32; 3]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect()
}

fn chamfer(c: &mut Criterion) {
    let mut group = c.benchmark_group("chamfer");
    group.sample_size(10);
    for n in [256, 1024, 4096] {
        let (a, b) = (cloud(n, 1), cloud(n, 2));
        for backend in [Backend::Brute, Backend::Indexed] {
            group.bench_with_input(BenchmarkId::new(format!("{backend:?}"), n), &n, |bch, _| {
                bch.iter(|| chamfer_value_grad(&a, &b, backend).unwrap().value)
            });
        }
    }
    group.finish();
}

fn hausdorff(c: &mut Criterion) {
    let mut group = c.benchmark_group("hausdorff");
    group.sample_size(10);
    let (a, b) = (cloud(10_000, 3), cloud(2048, 4));
    for backend in [Backend::Brute, Backend::Indexed] {
        group.bench_function(format!("{backend:?}"), |bch| bch.iter(|| hausdorff_points(&a, &b, backend)));
    }
    group.finish();
}

criterion_group!(benches, chamfer, hausdorff);
criterion_main!(benches);
